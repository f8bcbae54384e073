use std::path::Path;
use std::process::{Command, Output};

use ppt_lab::config::RunConfig;
use ppt_lab::eval::load_report;

fn ppt_lab(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppt-lab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PPT_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn print_config_resolves_presets_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppt_lab(dir.path(), &["print-config", "--preset", "tricky", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    let cfg = RunConfig::from_json(&stdout(&out)).unwrap();
    assert_eq!(cfg.data.preset, "tricky");
    assert_eq!(cfg.data.horizon, 200);
    assert_eq!((cfg.data.seed, cfg.train.seed, cfg.eval.seed), (4, 4, 4));

    std::fs::write(dir.path().join("c.json"), r#"{"train": {"lambda": 500.0}}"#).unwrap();
    let out = ppt_lab(dir.path(), &["print-config", "--config", "c.json"]);
    assert_eq!(RunConfig::from_json(&stdout(&out)).unwrap().train.lambda, 500.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"lamda": 1}}"#).unwrap();
    assert_eq!(code(&ppt_lab(dir.path(), &["print-config", "--config", "bad.json"])), 2);
    assert_eq!(code(&ppt_lab(dir.path(), &["print-config", "--preset", "nope"])), 2);
    assert_eq!(code(&ppt_lab(dir.path(), &["train", "--data", "missing.ds", "--out", "o"])), 3);
    std::fs::write(dir.path().join("junk.ds"), b"junk").unwrap();
    assert_eq!(code(&ppt_lab(dir.path(), &["train", "--data", "junk.ds", "--out", "o"])), 3);
    assert_eq!(code(&ppt_lab(dir.path(), &["eval", "--model", "no-equals-sign", "--out", "r"])), 2);
    assert_ne!(code(&ppt_lab(dir.path(), &["frobnicate"])), 0);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppt_lab(dir.path(), &["grad-check"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 13, "{text}");
}

#[test]
fn dpt_pipeline_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let steps = [
        vec!["gen-data", "--preset", "ideal", "--num-envs", "32", "--seed", "2", "--out", "d.ds"],
        vec!["train", "--data", "d.ds", "--algo", "dpt", "--steps", "5", "--batch-size", "8", "--out", "dpt"],
        vec!["eval", "--model", "DPT=dpt", "--num-envs", "12", "--sigma2", "0.3,0.5", "--horizon", "20", "--out", "rep"],
        vec!["report", "--input", "ideal=rep", "--out", "fig"],
    ];
    for args in &steps {
        let out = ppt_lab(cwd, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["dpt/policy.ckpt", "dpt/train_log.csv", "dpt/config.json", "dpt/train_summary.json", "rep/config.json"] {
        assert!(cwd.join(f).is_file(), "{f} missing");
    }
    assert!(!cwd.join("dpt/predictor.ckpt").exists());
    let report = load_report(cwd.join("rep")).unwrap();
    assert_eq!(report.algorithms(), vec!["DPT", "UCB", "Random"]);
    let cell = report.cell("DPT", 0.5).unwrap();
    assert_eq!((cell.avg_regret.len(), cell.totals.len()), (20, 12));
    assert!(cell.prediction_loss.is_none());
    let summary = std::fs::read_to_string(cwd.join("fig/summary.md")).unwrap();
    assert!(summary.contains("DPT"));
    assert!(cwd.join("fig/regret_vs_variance.svg").is_file());

    let out = ppt_lab(cwd, &["eval", "--model", "DPT=dpt", "--horizon", "500", "--out", "too_long"]);
    assert_eq!(code(&out), 2);
    assert!(!cwd.join("too_long").exists());
}
