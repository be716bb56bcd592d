//! Run-directory artifacts: config echo, context trace, training log,
//! evaluation series, checkpoints, and the SVG learning-curve report.
//!
//! All text files are UTF-8 with LF line endings. Every CSV starts with a
//! versioned schema line and a fixed header; rows have fixed arity (the
//! posterior vector is one `;`-joined field).

use crate::checkpoint;
use crate::envs::{manifest_to_string, TaskSpec, TaskStream};
use crate::error::{Error, Result};
use crate::learner::{LearnerState, RunObserver};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.resolved";
pub const TRACE_FILE: &str = "trace.context.csv";
pub const TRAIN_LOG_FILE: &str = "train.log.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const REPORT_FILE: &str = "report.svg";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const TRACE_SCHEMA: &str = "# schema=trace-context/v1";
const TRACE_HEADER: &str = "task_id,z_star,is_new,k_after,posterior";
const TRAIN_SCHEMA: &str = "# schema=train-log/v1";
const TRAIN_HEADER: &str = "task_id,iteration,mean_return,distill_loss";
const EVAL_SCHEMA: &str = "# schema=eval/v1";
const EVAL_HEADER: &str = "global_iteration,r_ave";

/// Observer that materializes a run directory while training proceeds.
pub struct RunDirObserver {
    root: PathBuf,
    trace: BufWriter<File>,
    train_log: BufWriter<File>,
    eval: BufWriter<File>,
}

impl RunDirObserver {
    /// Create the directory layout and write the static artifacts.
    pub fn create(root: &Path, stream: &TaskStream, config_echo: &str) -> Result<Self> {
        std::fs::create_dir_all(root.join(CHECKPOINT_DIR))?;
        std::fs::write(root.join(MANIFEST_FILE), manifest_to_string(stream))?;
        std::fs::write(root.join(CONFIG_FILE), config_echo)?;

        let mut trace = BufWriter::new(File::create(root.join(TRACE_FILE))?);
        writeln!(trace, "{TRACE_SCHEMA}")?;
        writeln!(trace, "{TRACE_HEADER}")?;
        let mut train_log = BufWriter::new(File::create(root.join(TRAIN_LOG_FILE))?);
        writeln!(train_log, "{TRAIN_SCHEMA}")?;
        writeln!(train_log, "{TRAIN_HEADER}")?;
        let mut eval = BufWriter::new(File::create(root.join(EVAL_FILE))?);
        writeln!(eval, "{EVAL_SCHEMA}")?;
        writeln!(eval, "{EVAL_HEADER}")?;

        Ok(RunDirObserver { root: root.to_path_buf(), trace, train_log, eval })
    }

    /// Pre-populate the evaluation series (checkpoint resume).
    pub fn seed_eval_rows(&mut self, rows: &[(u64, f64)]) -> Result<()> {
        for (it, r) in rows {
            writeln!(self.eval, "{it},{r:?}")?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Flush all writers.
    pub fn finish(&mut self) -> Result<()> {
        self.trace.flush()?;
        self.train_log.flush()?;
        self.eval.flush()?;
        Ok(())
    }
}

impl RunObserver for RunDirObserver {
    fn on_task_start(
        &mut self,
        task_idx: usize,
        _task: &TaskSpec,
        z_star: usize,
        is_new: bool,
        posterior: Option<&[f64]>,
        k_after: usize,
    ) -> Result<()> {
        let posterior = match posterior {
            Some(p) => p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(";"),
            None => String::new(),
        };
        writeln!(self.trace, "{task_idx},{z_star},{is_new},{k_after},{posterior}")?;
        Ok(())
    }

    fn on_iteration(
        &mut self,
        task_idx: usize,
        iteration: u32,
        mean_return: f64,
        distill_loss: f64,
    ) -> Result<()> {
        writeln!(self.train_log, "{task_idx},{iteration},{mean_return:?},{distill_loss:?}")?;
        Ok(())
    }

    fn on_eval(&mut self, global_iter: u64, r_ave: f64) -> Result<()> {
        writeln!(self.eval, "{global_iter},{r_ave:?}")?;
        Ok(())
    }

    fn on_task_complete(&mut self, state: &LearnerState) -> Result<()> {
        let path = self
            .root
            .join(CHECKPOINT_DIR)
            .join(format!("task_{}.ckpt", state.next_task));
        checkpoint::save(state, &path)?;
        self.finish()
    }
}

/// Parse an `eval.csv` back into the `(iteration, R_ave)` series.
pub fn read_eval_csv(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(s) if s == EVAL_SCHEMA => {}
        other => return Err(Error::Parse(format!("bad eval schema line: {other:?}"))),
    }
    match lines.next() {
        Some(h) if h == EVAL_HEADER => {}
        other => return Err(Error::Parse(format!("bad eval header: {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("eval row {}: missing comma", i + 3)))?;
        let it: u64 = a.parse().map_err(|_| Error::Parse(format!("eval row {}: bad iteration", i + 3)))?;
        let r: f64 = b.parse().map_err(|_| Error::Parse(format!("eval row {}: bad value", i + 3)))?;
        out.push((it, r));
    }
    Ok(out)
}

/// Render a learning-curve line chart; one polyline per named series.
pub fn write_learning_curve_svg(
    path: &Path,
    series: &[(&str, &[(u64, f64)])],
    title: &str,
) -> Result<()> {
    if series.iter().all(|(_, s)| s.is_empty()) {
        return Err(Error::Input("no data to plot".into()));
    }
    let (width, height) = (720.0, 440.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let pw = width - ml - mr;
    let ph = height - mt - mb;

    let mut x_max = 1u64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, s) in series {
        for (it, r) in *s {
            x_max = x_max.max(*it);
            y_min = y_min.min(*r);
            y_max = y_max.max(*r);
        }
    }
    if y_min == y_max {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let sx = |it: u64| ml + pw * it as f64 / x_max as f64;
    let sy = |r: f64| mt + ph * (1.0 - (r - y_min) / (y_max - y_min));

    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        width / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        mt + ph,
        mt + ph,
        ml + pw,
        mt + ph
    ));
    // Ticks.
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let yv = y_min + (y_max - y_min) * (1.0 - frac);
        let y = mt + ph * frac;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{ml}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{yv:.2}</text>\n",
            ml - 5.0,
            ml - 8.0,
            y + 4.0
        ));
        let xv = (x_max as f64 * frac).round() as u64;
        let x = ml + pw * frac;
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{xv}</text>\n",
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 20.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">policy iteration</text>\n\
         <text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">average test return</text>\n",
        ml + pw / 2.0,
        height - 12.0,
        mt + ph / 2.0,
        mt + ph / 2.0
    ));
    for (si, (name, s)) in series.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let color = colors[si % colors.len()];
        let points: Vec<String> =
            s.iter().map(|(it, r)| format!("{:.2},{:.2}", sx(*it), sy(*r))).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{name}</text>\n",
            ml + pw - 110.0,
            mt + 16.0 + 16.0 * si as f64
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
