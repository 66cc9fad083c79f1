use std::path::Path;
use std::process::{Command, Output};

use pde_surrogate::dataset::read_dataset;

fn pdes(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdes"))
        .current_dir(dir)
        .env_remove("PDES_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY_DATA: &[&str] = &[
    "generate",
    "--system",
    "advection",
    "--params",
    "0.1,0.4,2.0",
    "--n-traj",
    "6",
    "--spatial",
    "16",
    "--timesteps",
    "12",
    "--out",
    "d.pdet",
];

const TINY_MODEL: &[&str] = &[
    "--layers",
    "1",
    "--hidden",
    "8",
    "--heads",
    "2",
    "--patch",
    "4,1",
    "--context",
    "4",
    "--max-epochs",
    "2",
    "--batch-size",
    "8",
];

#[test]
fn generate_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&pdes(dir.path(), TINY_DATA));
    let ds = read_dataset(dir.path().join("d.pdet")).unwrap();
    assert_eq!(ds.trajectories.len(), 18);
    let first = std::fs::read(dir.path().join("d.pdet")).unwrap();
    ok(&pdes(dir.path(), TINY_DATA));
    assert_eq!(first, std::fs::read(dir.path().join("d.pdet")).unwrap());

    let full = pdes(
        dir.path(),
        &[
            "generate",
            "--system",
            "advection",
            "--params",
            "0.1,0.4,2.0",
            "--n-traj",
            "10",
            "--spatial",
            "16",
            "--timesteps",
            "4",
            "--out",
            "e.pdet",
        ],
    );
    ok(&full);
    assert_eq!(read_dataset(dir.path().join("e.pdet")).unwrap().trajectories.len(), 30);
}

#[test]
fn invalid_parameters_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdes(dir.path(), &["generate", "--system", "burgers", "--params", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu"));
}

#[test]
fn missing_or_foreign_files_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdes(dir.path(), &["train", "--dataset", "absent.pdet", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(dir.path().join("junk.pdet"), b"not a dataset at all").unwrap();
    let out = pdes(
        dir.path(),
        &[
            "evaluate",
            "--dataset",
            "junk.pdet",
            "--checkpoint",
            "junk.pdet",
            "--run-dir",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = pdes(dir.path(), &["--config", "c.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_evaluate_and_reproduce_from_the_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pdes(d, TINY_DATA));
    ok(&pdes(
        d,
        &[
            "split",
            "--dataset",
            "d.pdet",
            "--ood-params",
            "2.0",
            "--test-per-param",
            "1",
            "--out",
            "s.json",
        ],
    ));

    let mut args = vec![
        "train",
        "--dataset",
        "d.pdet",
        "--splits",
        "s.json",
        "--seed",
        "3",
        "--threads",
        "1",
        "--run-dir",
        "run1",
    ];
    args.extend(TINY_MODEL);
    ok(&pdes(d, &args));
    let run = d.join("run1");
    for f in ["config.toml", "VERSION", "checkpoint.pdtc", "train_log.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let config = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(config.contains("seed = 3"));

    ok(&pdes(
        d,
        &["--config", "run1/config.toml", "train", "--run-dir", "run2"],
    ));
    assert_eq!(
        std::fs::read(run.join("checkpoint.pdtc")).unwrap(),
        std::fs::read(d.join("run2/checkpoint.pdtc")).unwrap()
    );
    assert_eq!(
        std::fs::read(run.join("train_log.csv")).unwrap(),
        std::fs::read(d.join("run2/train_log.csv")).unwrap()
    );

    let stdout = ok(&pdes(
        d,
        &[
            "evaluate",
            "--checkpoint",
            "run1/checkpoint.pdtc",
            "--dataset",
            "d.pdet",
            "--splits",
            "s.json",
            "--run-dir",
            "eval",
        ],
    ));
    assert!(stdout.contains("id-mean"));
    let csv = std::fs::read_to_string(d.join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("trajectory_id,param_vector,mse,diverged\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 6);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["ood_mean"].is_number());

    ok(&pdes(
        d,
        &[
            "finetune",
            "--checkpoint",
            "run1/checkpoint.pdtc",
            "--dataset",
            "d.pdet",
            "--epochs",
            "1",
            "--run-dir",
            "ft",
        ],
    ));
    assert!(d.join("ft/checkpoint.pdtc").exists());
}

#[test]
fn finetune_defaults_to_ten_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdes(dir.path(), &["finetune", "--run-dir", "ft"]);
    // no checkpoint given: a configuration error after the run directory is set up
    assert_eq!(out.status.code(), Some(2));
    let config = std::fs::read_to_string(dir.path().join("ft/config.toml")).unwrap();
    assert!(config.contains("[finetune]\nepochs = 10"), "{config}");
}

#[test]
fn environment_variables_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pdes"))
        .current_dir(dir.path())
        .env("PDES_SEED", "17")
        .args(["finetune", "--run-dir", "ft"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let config = std::fs::read_to_string(dir.path().join("ft/config.toml")).unwrap();
    assert!(config.starts_with("# resolved configuration"));
    assert!(config.contains("seed = 17"));
}

#[test]
fn study_runs_and_rejects_unknown_points() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&pdes(d, TINY_DATA));
    let mut args = vec![
        "study",
        "--dataset",
        "d.pdet",
        "--axis",
        "model-size",
        "--points",
        "L1H8,huge",
        "--run-dir",
        "s",
    ];
    args.extend(["--heads", "2", "--patch", "4,1", "--context", "4", "--max-epochs", "1"]);
    assert_eq!(pdes(d, &args).status.code(), Some(2));

    let mut args = vec!["study", "--dataset", "d.pdet", "--points", "1,2", "--run-dir", "s2"];
    args.extend(TINY_MODEL);
    ok(&pdes(d, &args));
    let csv = std::fs::read_to_string(d.join("s2/study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let plot: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("s2/plot.json")).unwrap()).unwrap();
    assert_eq!(plot["x_scale"], "log");
}

#[test]
fn every_subcommand_documents_its_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["generate", "split", "train", "finetune", "evaluate", "compare", "study"] {
        let help = ok(&pdes(dir.path(), &[cmd, "--help"]));
        assert!(help.contains("--seed"), "{cmd}");
        assert!(help.contains("[default:") || help.contains("default"), "{cmd}");
        if cmd == "finetune" {
            assert!(help.contains("Finetuning epochs [default: 10]"));
        }
    }
}
