//! CLI behavior: exit codes, config validation, and rerun determinism.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssm-nav"))
}

const SMALL: &[&str] = &[
    "--set",
    "env.count=2",
    "--set",
    "env.n_nodes=16",
    "--set",
    "env.d_f=8",
    "--set",
    "env.tiling=1",
    "--set",
    "model.d_x=8",
    "--set",
    "model.d_h=8",
    "--set",
    "episodes.per_env=5",
];

fn run(args: &[&str]) -> std::process::Output {
    let mut cmd = bin();
    cmd.args(SMALL).args(args);
    cmd.output().expect("spawn ssm-nav")
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--set", "train.no_such_knob=1", "gen-env", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "unknown key must exit 1");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "stderr: {stderr}");
}

#[test]
fn invalid_env_params_fail_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--set", "env.radius=-1.0", "gen-env", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "invalid radius must exit 2");
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-episodes",
        "--envs",
        "/nonexistent/envs.jsonl",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_usage_is_exit_one_and_help_is_success() {
    let out = bin().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

fn assert_identical_trees(a: &Path, b: &Path) {
    let mut entries_a: Vec<_> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    entries_a.sort();
    let mut entries_b: Vec<_> = std::fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    entries_b.sort();
    assert_eq!(entries_a, entries_b);
    for name in entries_a {
        let pa = a.join(&name);
        let pb = b.join(&name);
        if pa.is_dir() {
            assert_identical_trees(&pa, &pb);
        } else {
            let ba = std::fs::read(&pa).unwrap();
            let bb = std::fs::read(&pb).unwrap();
            assert_eq!(ba, bb, "file {} differs between reruns", name.to_string_lossy());
        }
    }
}

#[test]
fn full_pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run_dir in ["r1", "r2"] {
        let root = dir.path().join(run_dir);
        let envs = root.join("envs");
        let eps = root.join("eps");
        let train = root.join("train");
        let eval = root.join("eval");
        let roll = root.join("roll");
        assert!(run(&["gen-env", "--out", envs.to_str().unwrap()])
            .status
            .success());
        assert!(run(&[
            "gen-episodes",
            "--envs",
            envs.join("envs.jsonl").to_str().unwrap(),
            "--out",
            eps.to_str().unwrap()
        ])
        .status
        .success());
        assert!(run(&[
            "train",
            "--set",
            "train.max_epochs=2",
            "--set",
            "train.batch_episodes=4",
            "--set",
            "train.eval_every=1",
            "--envs",
            envs.join("envs.jsonl").to_str().unwrap(),
            "--episodes",
            eps.join("episodes.jsonl").to_str().unwrap(),
            "--out",
            train.to_str().unwrap()
        ])
        .status
        .success());
        assert!(run(&[
            "eval",
            "--checkpoint",
            train.join("best.ckpt.json").to_str().unwrap(),
            "--envs",
            envs.join("envs.jsonl").to_str().unwrap(),
            "--episodes",
            eps.join("episodes.jsonl").to_str().unwrap(),
            "--out",
            eval.to_str().unwrap()
        ])
        .status
        .success());
        assert!(run(&[
            "rollout",
            "--checkpoint",
            train.join("best.ckpt.json").to_str().unwrap(),
            "--envs",
            envs.join("envs.jsonl").to_str().unwrap(),
            "--episodes",
            eps.join("episodes.jsonl").to_str().unwrap(),
            "--episode-id",
            "0",
            "--out",
            roll.to_str().unwrap()
        ])
        .status
        .success());
    }
    assert_identical_trees(&dir.path().join("r1"), &dir.path().join("r2"));
}

#[test]
fn eval_mode_flag_switches_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let envs = dir.path().join("envs");
    let eps = dir.path().join("eps");
    let train = dir.path().join("train");
    assert!(run(&["gen-env", "--out", envs.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "gen-episodes",
        "--envs",
        envs.join("envs.jsonl").to_str().unwrap(),
        "--out",
        eps.to_str().unwrap()
    ])
    .status
    .success());
    assert!(run(&[
        "train",
        "--set",
        "train.max_epochs=1",
        "--set",
        "train.eval_every=1",
        "--envs",
        envs.join("envs.jsonl").to_str().unwrap(),
        "--episodes",
        eps.join("episodes.jsonl").to_str().unwrap(),
        "--out",
        train.to_str().unwrap()
    ])
    .status
    .success());
    for mode in ["frontier", "global-onestep", "local"] {
        let out_dir = dir.path().join(format!("eval-{mode}"));
        let out = run(&[
            "eval",
            "--checkpoint",
            train.join("best.ckpt.json").to_str().unwrap(),
            "--envs",
            envs.join("envs.jsonl").to_str().unwrap(),
            "--episodes",
            eps.join("episodes.jsonl").to_str().unwrap(),
            "--mode",
            mode,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "mode {mode} failed");
        let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert!(parsed["means"]["sr"].is_number());
        assert_eq!(parsed["count"].as_u64().unwrap() as usize, 10);
    }
}

#[test]
fn resume_continues_epoch_numbering() {
    let dir = tempfile::tempdir().unwrap();
    let envs = dir.path().join("envs");
    let eps = dir.path().join("eps");
    let train = dir.path().join("train");
    assert!(run(&["gen-env", "--out", envs.to_str().unwrap()])
        .status
        .success());
    assert!(run(&[
        "gen-episodes",
        "--envs",
        envs.join("envs.jsonl").to_str().unwrap(),
        "--out",
        eps.to_str().unwrap()
    ])
    .status
    .success());
    let base_args = |out: &Path| {
        vec![
            "train".to_string(),
            "--set".into(),
            "train.max_epochs=2".into(),
            "--set".into(),
            "train.eval_every=1".into(),
            "--envs".into(),
            envs.join("envs.jsonl").to_str().unwrap().into(),
            "--episodes".into(),
            eps.join("episodes.jsonl").to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let args = base_args(&train);
    assert!(run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>())
        .status
        .success());
    let mut args = base_args(&train);
    args.push("--resume".into());
    args.push(train.join("final.ckpt.json").to_str().unwrap().into());
    assert!(run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>())
        .status
        .success());
    let curve = std::fs::read_to_string(train.join("curve.csv")).unwrap();
    let epochs: Vec<&str> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, vec!["0", "1", "2", "3"], "curve: {curve}");
}
