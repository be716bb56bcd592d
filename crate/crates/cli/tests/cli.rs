//! End-to-end command-line checks: the generate/train/report pipeline,
//! distinct exit codes, and checkpoint-reproducible evaluation.

use std::path::Path;
use std::process::{Command, Output};

fn dacorl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dacorl"))
}

fn run(args: &[&str]) -> Output {
    dacorl().args(args).output().expect("spawn dacorl")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_tiny_config(path: &Path) {
    std::fs::write(
        path,
        "hidden = 6\niterations_per_task = 4\nbatch_size = 2\neval_every = 2\n\
         m_explore = 2\nm_episodes = 1\nseed = 5\n",
    )
    .unwrap();
}

#[test]
fn pipeline_gen_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    let out = run(&[
        "gen-stream",
        "--type",
        "I",
        "--seed",
        "7",
        "--n-clusters",
        "2",
        "--sizes",
        "1,1",
        "--out",
        manifest.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(manifest.exists());

    let cfg = dir.path().join("config.txt");
    write_tiny_config(&cfg);
    let rundir = dir.path().join("run");
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        rundir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for f in ["manifest.txt", "config.resolved", "trace.context.csv", "train.log.csv", "eval.csv"] {
        assert!(rundir.join(f).exists(), "{f} missing");
    }
    assert!(rundir.join("checkpoints/task_2.ckpt").exists());

    let out = run(&["report", "--run", rundir.to_str().unwrap()]);
    assert_ok(&out);
    assert!(rundir.join("report.svg").exists());
}

#[test]
fn naive_and_dacorl_runs_align() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    assert_ok(&run(&[
        "gen-stream",
        "--type",
        "I",
        "--seed",
        "9",
        "--n-clusters",
        "2",
        "--sizes",
        "1,1",
        "--out",
        manifest.to_str().unwrap(),
    ]));
    let cfg = dir.path().join("config.txt");
    write_tiny_config(&cfg);
    let mut axes = Vec::new();
    for mode in ["naive", "dacorl"] {
        let rd = dir.path().join(mode);
        assert_ok(&run(&[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            &format!("mode={mode}"),
            "--out",
            rd.to_str().unwrap(),
        ]));
        let text = std::fs::read_to_string(rd.join("eval.csv")).unwrap();
        let iters: Vec<String> = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect();
        axes.push(iters);
    }
    assert_eq!(axes[0], axes[1], "iteration axes must align across modes");
}

#[test]
fn eval_reproduces_final_logged_r_ave() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    assert_ok(&run(&[
        "gen-stream",
        "--type",
        "I",
        "--seed",
        "3",
        "--n-clusters",
        "2",
        "--sizes",
        "1,1",
        "--out",
        manifest.to_str().unwrap(),
    ]));
    let cfg = dir.path().join("config.txt");
    write_tiny_config(&cfg);
    let rd = dir.path().join("run");
    assert_ok(&run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        rd.to_str().unwrap(),
    ]));
    let eval_csv = std::fs::read_to_string(rd.join("eval.csv")).unwrap();
    let last = eval_csv.lines().last().unwrap();
    let logged = last.split(',').nth(1).unwrap();

    let out = run(&[
        "eval",
        "--checkpoint",
        rd.join("checkpoints/task_2.ckpt").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let reported = stdout.trim().strip_prefix("r_ave = ").unwrap();
    assert_eq!(reported, logged, "checkpoint eval must reproduce the final logged value");
}

#[test]
fn resumed_run_reproduces_unbroken_eval_csv() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.txt");
    assert_ok(&run(&[
        "gen-stream",
        "--type",
        "I",
        "--seed",
        "11",
        "--n-clusters",
        "2",
        "--sizes",
        "2,2",
        "--out",
        manifest.to_str().unwrap(),
    ]));
    let cfg = dir.path().join("config.txt");
    write_tiny_config(&cfg);
    let full = dir.path().join("full");
    assert_ok(&run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        full.to_str().unwrap(),
    ]));
    let resumed = dir.path().join("resumed");
    assert_ok(&run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--resume",
        full.join("checkpoints/task_2.ckpt").to_str().unwrap(),
        "--out",
        resumed.to_str().unwrap(),
    ]));
    let a = std::fs::read(full.join("eval.csv")).unwrap();
    let b = std::fs::read(resumed.join("eval.csv")).unwrap();
    assert_eq!(a, b, "resume from a task boundary must reproduce eval.csv bitwise");
    let ca = std::fs::read(full.join("checkpoints/task_4.ckpt")).unwrap();
    let cb = std::fs::read(resumed.join("checkpoints/task_4.ckpt")).unwrap();
    assert_eq!(ca, cb, "final checkpoints must match bitwise");
}

#[test]
fn exit_codes_are_distinct() {
    // Unknown flag: usage error from the argument parser.
    let out = run(&["train", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Missing file: I/O error.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--manifest",
        dir.path().join("nope.txt").to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Malformed config: parse error.
    let manifest = dir.path().join("manifest.txt");
    assert_ok(&run(&[
        "gen-stream",
        "--type",
        "I",
        "--seed",
        "1",
        "--n-clusters",
        "1",
        "--sizes",
        "1",
        "--out",
        manifest.to_str().unwrap(),
    ]));
    let bad_cfg = dir.path().join("bad.txt");
    std::fs::write(&bad_cfg, "unknown_key = 3\n").unwrap();
    let out = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--config",
        bad_cfg.to_str().unwrap(),
        "--out",
        dir.path().join("r2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_smoke() {
    let out = run(&["gradcheck", "--configs", "5"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("pass").count(), 3, "{stdout}");
}
