//! Versioned binary checkpoints.
//!
//! Layout: magic bytes, format version, then the full learner state —
//! resolved config text, progress counters, policy tensors (row-major f64,
//! little-endian), context registry with CRP counts, label map, optimizer
//! moments. `load(save(state))` reproduces the state bitwise, so a resumed
//! run equals an unbroken one.

use crate::context::{CentroidUpdate, ContextRegistry};
use crate::error::{Error, Result};
use crate::eval::RunRecord;
use crate::learner::{LearnerConfig, LearnerState, Optimizer, OptimizerKind};
use crate::numkit::{DenseNetParams, Layer, Mat};
use crate::policy::{HeadParams, MultiheadPolicy, PolicyGradient};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"DACORLCK";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    fn string(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Parse("bad utf-8".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_net(w: &mut Writer, net: &DenseNetParams) {
    w.u32(net.layers.len() as u32);
    for l in &net.layers {
        w.u32(l.weights.rows() as u32);
        w.u32(l.weights.cols() as u32);
        for v in l.weights.data() {
            w.f64(*v);
        }
        w.f64s(&l.bias);
    }
}

fn read_net(r: &mut Reader) -> Result<DenseNetParams> {
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let bias = r.f64s()?;
        layers.push(Layer { weights: Mat::from_vec(rows, cols, data)?, bias });
    }
    Ok(DenseNetParams { layers, activation: crate::numkit::Activation::Relu })
}

fn write_policy(w: &mut Writer, p: &MultiheadPolicy) {
    w.u32(p.obs_dim as u32);
    w.u32(p.action_dim as u32);
    w.u32(p.hidden as u32);
    write_net(w, &p.shared);
    w.u32(p.heads.len() as u32);
    for h in &p.heads {
        write_net(w, &h.net);
        w.f64s(&h.log_std);
    }
}

fn read_policy(r: &mut Reader) -> Result<MultiheadPolicy> {
    let obs_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let shared = read_net(r)?;
    let k = r.u32()? as usize;
    let mut heads = Vec::with_capacity(k);
    for _ in 0..k {
        let net = read_net(r)?;
        let log_std = r.f64s()?;
        heads.push(HeadParams { net, log_std });
    }
    Ok(MultiheadPolicy { shared, heads, obs_dim, action_dim, hidden })
}

/// Serialize the full learner state.
pub fn encode(state: &LearnerState) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.string(&state.cfg.to_resolved_text());
    w.u64(state.next_task as u64);
    w.u64(state.global_iter);
    w.u32(state.eval_count);

    write_policy(&mut w, &state.policy);

    match &state.registry {
        None => w.u8(0),
        Some(reg) => {
            w.u8(1);
            w.f64(reg.alpha());
            w.f64(reg.sigma2());
            w.u8(match reg.update_rule() {
                CentroidUpdate::Normalized => 0,
                CentroidUpdate::Literal => 1,
            });
            w.u32(reg.t());
            w.u32(reg.k() as u32);
            for c in reg.counts() {
                w.u32(*c);
            }
            for mu in reg.centroids() {
                w.f64s(mu);
            }
        }
    }

    w.u32(state.label_map.len() as u32);
    for (k, v) in &state.label_map {
        w.u64(*k as u64);
        w.u64(*v as u64);
    }

    match &state.optimizer {
        Optimizer::Sgd { .. } => w.u8(0),
        Optimizer::Adam { step, m, v, .. } => {
            w.u8(1);
            w.u64(*step);
            w.f64s(&m.flatten());
            w.f64s(&v.flatten());
        }
    }

    // Run record so far.
    w.u64(state.record.r_ave_series.len() as u64);
    for (it, r) in &state.record.r_ave_series {
        w.u64(*it);
        w.f64(*r);
    }
    w.f64s(&state.record.forward_transfer);
    w.u64(state.record.assignments.len() as u64);
    for a in &state.record.assignments {
        w.u64(*a as u64);
    }
    w.u32(state.record.expansions);
    w.f64(state.record.wall_time_secs);
    w.buf
}

/// Reconstruct a learner state from checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<LearnerState> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let cfg = LearnerConfig::from_text(&r.string()?)?;
    let next_task = r.u64()? as usize;
    let global_iter = r.u64()?;
    let eval_count = r.u32()?;

    let policy = read_policy(&mut r)?;

    let registry = match r.u8()? {
        0 => None,
        1 => {
            let alpha = r.f64()?;
            let sigma2 = r.f64()?;
            let rule = match r.u8()? {
                0 => CentroidUpdate::Normalized,
                1 => CentroidUpdate::Literal,
                other => return Err(Error::Parse(format!("bad centroid rule {other}"))),
            };
            let t = r.u32()?;
            let k = r.u32()? as usize;
            let mut counts = Vec::with_capacity(k);
            for _ in 0..k {
                counts.push(r.u32()?);
            }
            let mut mu = Vec::with_capacity(k);
            for _ in 0..k {
                mu.push(r.f64s()?);
            }
            Some(ContextRegistry::from_parts(mu, counts, alpha, sigma2, t, rule)?)
        }
        other => return Err(Error::Parse(format!("bad registry tag {other}"))),
    };

    let n_labels = r.u32()? as usize;
    let mut label_map = BTreeMap::new();
    for _ in 0..n_labels {
        let k = r.u64()? as usize;
        let v = r.u64()? as usize;
        label_map.insert(k, v);
    }

    let optimizer = match r.u8()? {
        0 => Optimizer::new(OptimizerKind::Sgd, cfg.beta, &policy),
        1 => {
            let step = r.u64()?;
            let mf = r.f64s()?;
            let vf = r.f64s()?;
            let mut m = PolicyGradient::zeros_like(&policy);
            let mut v = PolicyGradient::zeros_like(&policy);
            m.unflatten_from(&mf)?;
            v.unflatten_from(&vf)?;
            match Optimizer::new(OptimizerKind::Adam, cfg.beta, &policy) {
                Optimizer::Adam { lr, beta1, beta2, eps, .. } => {
                    Optimizer::Adam { lr, beta1, beta2, eps, step, m, v }
                }
                _ => unreachable!(),
            }
        }
        other => return Err(Error::Parse(format!("bad optimizer tag {other}"))),
    };

    let mut record = RunRecord::new(cfg.to_resolved_text());
    let n_series = r.u64()? as usize;
    for _ in 0..n_series {
        let it = r.u64()?;
        let val = r.f64()?;
        record.r_ave_series.push((it, val));
    }
    record.forward_transfer = r.f64s()?;
    let n_assign = r.u64()? as usize;
    for _ in 0..n_assign {
        record.assignments.push(r.u64()? as usize);
    }
    record.expansions = r.u32()?;
    record.wall_time_secs = r.f64()?;
    if !r.done() {
        return Err(Error::Parse("trailing bytes in checkpoint".into()));
    }

    Ok(LearnerState {
        cfg,
        policy,
        registry,
        optimizer,
        label_map,
        next_task,
        global_iter,
        eval_count,
        record,
    })
}

pub fn save(state: &LearnerState, path: &Path) -> Result<()> {
    let bytes = encode(state);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LearnerState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
