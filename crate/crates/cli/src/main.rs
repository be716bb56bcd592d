//! Command-line surface: generate task streams, train, evaluate, report.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 parse/config, 1 other failures.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dacorl_core::checkpoint;
use dacorl_core::envs::{generate_stream, read_manifest, write_manifest, StreamConfig, StreamType};
use dacorl_core::eval::{generalization_eval, test_all, EvalSettings};
use dacorl_core::learner::{run_stream_from, LearnerConfig, LearnerState};
use dacorl_core::rng::{derive_seed, TAG_EVAL};
use dacorl_core::rundir::{self, RunDirObserver};
use dacorl_core::verify::verify_gradients;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dacorl", version, about = "Continual RL over task streams with online context detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered task stream and write its manifest.
    GenStream(GenStreamArgs),
    /// Train over a stream, writing a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint over all tasks of a stream.
    Eval(EvalArgs),
    /// Test a checkpoint on freshly sampled unseen tasks.
    Generalize(GeneralizeArgs),
    /// Render the learning-curve report for a run directory.
    Report(ReportArgs),
    /// Run the numeric gradient-verification suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenStreamArgs {
    /// Stream type: I (goals vary), II (puddles vary), III (both).
    #[arg(long = "type", value_name = "TYPE")]
    stream_type: String,
    #[arg(long)]
    seed: u64,
    /// Output manifest path.
    #[arg(long, default_value = "manifest.txt")]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    n_clusters: usize,
    /// Comma-separated cluster sizes; defaults to 12,12,12,14.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Task-stream manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Config file (flat key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys, e.g. --set mode=naive (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Resume from a task-boundary checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Episodes per task; defaults to the checkpointed config value.
    #[arg(long)]
    m_episodes: Option<u32>,
    /// Sample actions instead of acting on the distribution mean.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct GeneralizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Stream type of the fresh tasks.
    #[arg(long = "type", value_name = "TYPE")]
    stream_type: String,
    #[arg(long, default_value_t = 50)]
    n_tasks: usize,
    #[arg(long)]
    seed: u64,
    /// Test episodes per task.
    #[arg(long, default_value_t = 100)]
    m_episodes: u32,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding eval.csv.
    #[arg(long)]
    run: PathBuf,
    /// Output SVG path; defaults to report.svg inside the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also re-emit the series as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Curve label in the plot.
    #[arg(long, default_value = "run")]
    label: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    configs: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_sizes(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| anyhow!("bad size {p:?}")))
        .collect()
}

fn cmd_gen_stream(args: GenStreamArgs) -> anyhow::Result<()> {
    let stream_type: StreamType = args.stream_type.parse()?;
    let sizes = match &args.sizes {
        Some(s) => parse_sizes(s)?,
        None if args.n_clusters == 4 => vec![12, 12, 12, 14],
        None => return Err(anyhow!("--sizes required when --n-clusters is not 4")),
    };
    let cfg = StreamConfig { n_clusters: args.n_clusters, sizes, cluster_spread: args.spread };
    let stream = generate_stream(stream_type, args.seed, &cfg)?;
    write_manifest(&args.out, &stream)?;
    println!(
        "wrote {} ({} tasks, {} clusters, type {})",
        args.out.display(),
        stream.len(),
        stream.cluster_centers.len(),
        stream.stream_type
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let stream = read_manifest(&args.manifest)?;
    let mut state = match &args.resume {
        Some(ckpt) => {
            let state = checkpoint::load(ckpt)?;
            if !args.overrides.is_empty() || args.config.is_some() {
                return Err(anyhow!("--resume uses the checkpointed config; drop --config/--set"));
            }
            state
        }
        None => {
            let mut text = match &args.config {
                Some(path) => std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                None => String::new(),
            };
            for kv in &args.overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
                text.push_str(&format!("{k} = {v}\n"));
            }
            let cfg = LearnerConfig::from_text(&text)?;
            LearnerState::new(cfg, &stream)?
        }
    };

    if args.out.exists() && std::fs::read_dir(&args.out)?.next().is_some() {
        return Err(anyhow!("run directory {} already exists and is not empty", args.out.display()));
    }
    let mut observer = RunDirObserver::create(&args.out, &stream, &state.cfg.to_resolved_text())?;
    observer.seed_eval_rows(&state.record.r_ave_series)?;
    let record = run_stream_from(&mut state, &stream, &mut observer)?;
    observer.finish()?;
    println!(
        "trained {} tasks: K_T={} expansions={} r_bar_ave={:.4} final_r_ave={:.4} wall={:.1}s",
        stream.len(),
        record.k_t,
        record.expansions,
        record.r_bar_ave,
        record.r_ave_series.last().map(|(_, r)| *r).unwrap_or(f64::NAN),
        record.wall_time_secs,
    );
    println!("run directory: {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let stream = read_manifest(&args.manifest)?;
    let registry = state
        .registry
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint has no trained context registry"))?;
    let settings = EvalSettings {
        m_episodes: args.m_episodes.unwrap_or(state.cfg.m_episodes),
        m_explore: state.cfg.m_explore,
        deterministic: state.cfg.eval_deterministic && !args.stochastic,
    };
    // Reproduce the run's last evaluation point: same derived seed.
    let eval_index = state.eval_count.saturating_sub(1);
    let seed = derive_seed(state.cfg.seed, &[TAG_EVAL, eval_index as u64]);
    let outcome = test_all(&state.policy, registry, &stream, &state.cfg.env, &settings, seed)?;
    println!("r_ave = {:?}", outcome.r_ave);
    Ok(())
}

fn cmd_generalize(args: GeneralizeArgs) -> anyhow::Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let stream_type: StreamType = args.stream_type.parse()?;
    let registry = state
        .registry
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint has no trained context registry"))?;
    let settings = EvalSettings {
        m_episodes: args.m_episodes,
        m_explore: state.cfg.m_explore,
        deterministic: state.cfg.eval_deterministic,
    };
    let mean = generalization_eval(
        &state.policy,
        registry,
        stream_type,
        args.n_tasks,
        &state.cfg.env,
        &settings,
        args.seed,
    )?;
    println!("generalization mean return over {} unseen tasks = {:?}", args.n_tasks, mean);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let eval_path = args.run.join(rundir::EVAL_FILE);
    let series = rundir::read_eval_csv(&eval_path)?;
    let out = args.out.unwrap_or_else(|| args.run.join(rundir::REPORT_FILE));
    rundir::write_learning_curve_svg(&out, &[(args.label.as_str(), &series)], "average test return")?;
    println!("wrote {} ({} points)", out.display(), series.len());
    if let Some(csv) = args.csv {
        let mut text = String::from("# schema=eval/v1\nglobal_iteration,r_ave\n");
        for (it, r) in &series {
            text.push_str(&format!("{it},{r:?}\n"));
        }
        std::fs::write(&csv, text)?;
        println!("wrote {}", csv.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let summaries = verify_gradients(args.configs, args.tol, args.seed)?;
    let mut all_ok = true;
    for s in &summaries {
        println!(
            "{}: {} over {} configs, max relative error {:.3e} (tol {:.1e})",
            if s.passed() { "pass" } else { "FAIL" },
            s.name,
            s.n_configs,
            s.max_rel_error,
            s.tol
        );
        all_ok &= s.passed();
    }
    if !all_ok {
        return Err(anyhow!("gradient verification failed"));
    }
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<dacorl_core::Error>() {
        return match e {
            dacorl_core::Error::Io(_) => 3,
            dacorl_core::Error::Parse(_) | dacorl_core::Error::Input(_) => 4,
            _ => 1,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenStream(a) => cmd_gen_stream(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generalize(a) => cmd_generalize(a),
        Command::Report(a) => cmd_report(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
