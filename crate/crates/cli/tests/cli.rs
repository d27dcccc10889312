use std::path::Path;
use std::process::{Command, Output};

fn zsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zsel")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = zsel(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--plan-size", "48", "--train-plans", "2", "--eval-plans", "1", "--resolution", "16", "--train-episodes", "4", "--eval-episodes", "4",
    "--eval-seeds", "1", "--workers", "1", "--horizon", "16", "--train-steps", "32", "--chunk-len", "8", "--ppo-epochs", "1", "--minibatches", "1",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL).chain(tail).copied().collect()
}

fn echo(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("config.echo")).unwrap()
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 3\nplan_size = 64\neval_plans = 2\n").unwrap();
    let out = dir.path().join("worlds");
    let stdout = ok(&["worldgen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--plan-size", "48", "--train-plans", "1"]);
    assert!(stdout.contains("1 training and 2 evaluation plans"), "{stdout}");
    let e = echo(&out);
    assert!(e.contains("seed = 3\n") && e.contains("plan_size = 48\n") && e.contains("eval_plans = 2\n"), "{e}");
    assert_eq!(std::fs::read_dir(out.join("eval")).unwrap().count(), 2);
}

#[test]
fn every_config_key_has_a_flag() {
    let help = ok(&["worldgen", "--help"]);
    let long = ok(&["help", "worldgen"]);
    for flag in ["--seed", "--config", "--out", "--workers", "--resolution", "--noisy-actuation"] {
        assert!(help.contains(flag) || long.contains(flag), "{flag}");
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    ok(&["worldgen", "--out", out.to_str().unwrap(), "--plan-size", "48", "--train-plans", "1", "--eval-plans", "1", "--noisy-actuation", "--reference-succ", "0.5"]);
    let e = echo(&out);
    assert!(e.contains("noisy_actuation = true\n") && e.contains("reference_succ = 0.5\n"), "{e}");
}

#[test]
fn bad_values_fail_cleanly() {
    let out = zsel(&["worldgen", "--plan-size", "abc"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("plan-size"));
    let out = zsel(&["zsel-eval", "--task", "objectnav", "--modality", "label", "--out", "/tmp/zsel-cli-missing"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("source"));
}

#[test]
fn train_eval_plot_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let stdout = ok(&with(&["train-source", "--out", src.to_str().unwrap()], &[]));
    assert!(stdout.contains("succ"), "{stdout}");
    for f in ["final.bin", "metrics.jsonl", "timing.jsonl", "curve.csv", "results.json", "config.echo"] {
        assert!(src.join(f).exists(), "{f}");
    }
    let ev = dir.path().join("eval");
    ok(&with(&["eval", "--out", ev.to_str().unwrap(), "--checkpoint", src.join("final.bin").to_str().unwrap()], &[]));
    let plots = dir.path().join("plots");
    let stdout = ok(&["plot", "--from", ev.to_str().unwrap(), "--out", plots.to_str().unwrap(), "--limit", "2"]);
    assert!(stdout.contains("wrote 2 plots"), "{stdout}");
    assert_eq!(std::fs::read_dir(plots.join("plots")).unwrap().count(), 2);
}

#[test]
fn dataset_build_pairs_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs");
    let stdout = ok(&with(&["dataset", "build-pairs", "--out", out.to_str().unwrap()], &["--task", "objectnav", "--modality", "label", "--pairs", "20", "--probes", "5"]));
    assert!(stdout.contains("wrote 20 pairs"), "{stdout}");
    assert!(echo(&out).contains("modality = label\n"));
}
