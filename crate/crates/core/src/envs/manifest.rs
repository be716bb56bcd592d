//! Task-stream manifest: a versioned, self-describing text record of a
//! generated stream. Floats are written in shortest round-trip form, so
//! save -> load -> save reproduces identical bytes.

use super::{Puddle, StreamType, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

const VERSION: u32 = 1;

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Serialize a stream to manifest text.
pub fn manifest_to_string(stream: &TaskStream) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "manifest-version = {VERSION}");
    let _ = writeln!(w, "stream-type = {}", stream.stream_type);
    let _ = writeln!(w, "seed = {}", stream.seed);
    let _ = writeln!(w, "cluster-spread = {}", fmt_f64(stream.cluster_spread));
    let _ = writeln!(w, "n-clusters = {}", stream.cluster_centers.len());
    let _ = writeln!(w, "n-tasks = {}", stream.tasks.len());
    for (i, c) in stream.cluster_centers.iter().enumerate() {
        let _ = writeln!(w, "center.{i} = {}", fmt_list(c));
    }
    for t in &stream.tasks {
        let id = t.task_id;
        let _ = writeln!(w, "task.{id}.goal = {}", fmt_list(&t.goal));
        let puddles = t
            .puddles
            .iter()
            .map(|p| format!("{},{},{}", fmt_f64(p.center[0]), fmt_f64(p.center[1]), fmt_f64(p.radius)))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(w, "task.{id}.puddles = {puddles}");
        let _ = writeln!(w, "task.{id}.params = {}", fmt_list(&t.variation_params));
        let _ = writeln!(w, "task.{id}.cluster = {}", t.true_cluster);
    }
    out
}

pub fn write_manifest(path: &Path, stream: &TaskStream) -> Result<()> {
    std::fs::write(path, manifest_to_string(stream))?;
    Ok(())
}

fn parse_f64(s: &str, key: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{key}: bad float {s:?}")))
}

fn parse_list(s: &str, key: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(|p| parse_f64(p, key)).collect()
}

/// Parse manifest text back into a stream.
pub fn manifest_from_string(text: &str) -> Result<TaskStream> {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut take = |key: &str| -> Result<String> {
        kv.remove(key).ok_or_else(|| Error::Parse(format!("missing key {key:?}")))
    };

    let version: u32 = take("manifest-version")?
        .parse()
        .map_err(|_| Error::Parse("bad manifest-version".into()))?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported manifest version {version}")));
    }
    let stream_type: StreamType = take("stream-type")?.parse()?;
    let seed: u64 = take("seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?;
    let cluster_spread = parse_f64(&take("cluster-spread")?, "cluster-spread")?;
    let n_clusters: usize =
        take("n-clusters")?.parse().map_err(|_| Error::Parse("bad n-clusters".into()))?;
    let n_tasks: usize =
        take("n-tasks")?.parse().map_err(|_| Error::Parse("bad n-tasks".into()))?;

    let mut centers = Vec::with_capacity(n_clusters);
    for i in 0..n_clusters {
        let key = format!("center.{i}");
        centers.push(parse_list(&take(&key)?, &key)?);
    }

    let mut tasks = Vec::with_capacity(n_tasks);
    for id in 0..n_tasks {
        let goal = parse_list(&take(&format!("task.{id}.goal"))?, "goal")?;
        if goal.len() != 2 {
            return Err(Error::Parse(format!("task.{id}.goal must have 2 entries")));
        }
        let puddle_str = take(&format!("task.{id}.puddles"))?;
        let mut puddles = Vec::new();
        if !puddle_str.trim().is_empty() {
            for part in puddle_str.split(';') {
                let vals = parse_list(part, "puddles")?;
                if vals.len() != 3 {
                    return Err(Error::Parse(format!("task.{id}.puddles entry needs cx,cy,r")));
                }
                puddles.push(Puddle { center: [vals[0], vals[1]], radius: vals[2] });
            }
        }
        let params = parse_list(&take(&format!("task.{id}.params"))?, "params")?;
        let cluster: usize = take(&format!("task.{id}.cluster"))?
            .parse()
            .map_err(|_| Error::Parse(format!("task.{id}.cluster must be an integer")))?;
        tasks.push(TaskSpec { task_id: id, goal: [goal[0], goal[1]], puddles, variation_params: params, true_cluster: cluster });
    }

    if let Some(extra) = kv.keys().next() {
        return Err(Error::Parse(format!("unknown manifest key {extra:?}")));
    }

    Ok(TaskStream { stream_type, tasks, cluster_centers: centers, seed, cluster_spread })
}

pub fn read_manifest(path: &Path) -> Result<TaskStream> {
    let text = std::fs::read_to_string(path)?;
    manifest_from_string(&text)
}

#[cfg(test)]
mod tests {
    use super::super::{generate_stream, StreamConfig};
    use super::*;

    #[test]
    fn manifest_round_trips_bitwise() {
        for (ty, seed) in [(StreamType::I, 7u64), (StreamType::II, 11), (StreamType::III, 13)] {
            let stream = generate_stream(ty, seed, &StreamConfig::default()).unwrap();
            let text = manifest_to_string(&stream);
            let parsed = manifest_from_string(&text).unwrap();
            assert_eq!(parsed, stream, "value round trip");
            assert_eq!(manifest_to_string(&parsed), text, "byte round trip");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let stream = generate_stream(StreamType::I, 1, &StreamConfig::default()).unwrap();
        let mut text = manifest_to_string(&stream);
        text.push_str("mystery-key = 1\n");
        assert!(matches!(manifest_from_string(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_keys_are_rejected() {
        assert!(manifest_from_string("manifest-version = 1\n").is_err());
    }
}
