use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use rvrae::model::{Dims, RvraeModel};
use tempfile::TempDir;

fn rvrae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvrae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--n-stocks", "12", "--t-total", "60", "--n-chars", "4", "--k-true", "2", "--seed", "4",
];
const MODEL: &[&str] = &["--n-factors", "2", "--hidden", "4", "--window", "4", "--seed", "4"];

fn gen_small(dir: &Path) -> PathBuf {
    let mut args = vec!["gen", "--data", "panel.csv"];
    args.extend_from_slice(SMALL);
    let o = rvrae(dir, &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join("panel.csv")
}

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--history", "h.csv"];
    args.extend_from_slice(MODEL);
    args.extend_from_slice(extra);
    rvrae(dir, &args)
}

#[test]
fn gen_default_row_count_and_ground_truth() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["gen", "--data", "out/panel.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/panel.csv")).unwrap();
    assert_eq!(text.lines().count() - 1, 240 * 50);
    assert!(text.starts_with("date,ticker,ret,c01,"));
    let factors = fs::read_to_string(dir.path().join("out/panel_factors.csv")).unwrap();
    assert_eq!(factors.lines().count() - 1, 240);
    let betas = fs::read_to_string(dir.path().join("out/panel_betas.csv")).unwrap();
    assert_eq!(betas.lines().count() - 1, 240 * 50);
}

#[test]
fn gen_is_byte_identical_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        gen_small(d.path());
    }
    for f in ["panel.csv", "panel_factors.csv", "panel_betas.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn negative_noise_is_a_config_error_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["gen", "--sigma-u", "-0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma_u"), "{}", stderr(&o));
    assert!(!dir.path().join("panel.csv").exists());
}

#[test]
fn unknown_key_and_bad_value_exit_2() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["gen", "--colour", "blue"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    let o = rvrae(dir.path(), &["train", "--epochs", "many"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs"));
    fs::write(dir.path().join("bad.cfg"), "seed = 1\nwhatever = 2\n").unwrap();
    let o = rvrae(dir.path(), &["gen", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("whatever"));
}

#[test]
fn missing_data_path_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["train", "--data", "absent.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    let o = train_small(dir.path(), &["--epochs", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = fs::read_to_string(dir.path().join("m.ckpt")).unwrap();
    let init = RvraeModel::new(Dims::new(12, 2, 4, 4, 4), 4).unwrap();
    assert_eq!(ckpt, init.to_checkpoint());
    let history = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn tiny_run_is_fast_and_flags_beat_config() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(
        dir.path(),
        &["gen", "--data", "panel.csv", "--n-stocks", "8", "--t-total", "60", "--seed", "2"],
    );
    assert_eq!(o.status.code(), Some(0));
    fs::write(dir.path().join("run.cfg"), "epochs = 1\npatience = 100\n").unwrap();
    let start = Instant::now();
    let o = rvrae(
        dir.path(),
        &["train", "--config", "run.cfg", "--data", "panel.csv", "--epochs", "5"],
    );
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(secs < 60.0, "{secs} s");
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 5);
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--epochs", "2"]).status.code(), Some(0));
    let first = fs::read_to_string(dir.path().join("m.ckpt")).unwrap();
    let o = train_small(dir.path(), &["--epochs", "2", "--resume"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = fs::read_to_string(dir.path().join("m.ckpt")).unwrap();
    assert_ne!(first, second);
    assert!(RvraeModel::from_checkpoint(&second).is_ok());
}

#[test]
fn eval_and_predict_write_reports() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--epochs", "2"]).status.code(), Some(0));
    let o = rvrae(dir.path(), &["eval", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--report", "r/rep.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = fs::read_to_string(dir.path().join("r/rep.csv")).unwrap();
    assert_eq!(rep.lines().count(), 2);
    assert!(rep.starts_with("total_r2,"));
    let months = fs::read_to_string(dir.path().join("r/rep_months.csv")).unwrap();
    // 60 months at 15/3/3 leave the last 9 for testing
    assert_eq!(months.lines().count(), 1 + 9);

    let o = rvrae(dir.path(), &["predict", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--date", "2004-06"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pred = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let rows: Vec<&str> = pred.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.starts_with("2004-06,")));
    let o = rvrae(dir.path(), &["predict", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--date", "1990-01"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_test_split_exits_2() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--epochs", "0"]).status.code(), Some(0));
    let o = rvrae(
        dir.path(),
        &["eval", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--split-test", "0"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn checkpoint_panel_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--epochs", "0"]).status.code(), Some(0));
    let o = rvrae(dir.path(), &["gen", "--data", "wide.csv", "--n-stocks", "15", "--n-chars", "4"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["eval", "predict"] {
        let o = rvrae(dir.path(), &[cmd, "--data", "wide.csv", "--checkpoint", "m.ckpt"]);
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", stderr(&o));
    }
    let o = train_small(dir.path(), &["--data", "wide.csv", "--resume", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gradcheck_passes_and_lists_every_group() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    for group in ["encoder.", "prior.", "decoder.", "beta."] {
        assert!(out.contains(group), "{group} missing:\n{out}");
    }
    let init = RvraeModel::new(Dims::new(8, 2, 4, 6, 4), 0).unwrap();
    for name in init.params.names() {
        assert!(out.contains(name), "{name} missing");
    }
    assert!(out.contains("passed"));
}

#[test]
fn corrupted_backward_rule_exits_1_naming_a_parameter() {
    let dir = TempDir::new().unwrap();
    let o = rvrae(dir.path(), &["gradcheck", "--corrupt-backward", "sigmoid"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gradient check failed at `"), "{err}");
    let o = rvrae(dir.path(), &["gradcheck", "--corrupt-backward", "teleport"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn omission_mode_writes_runs_and_summary() {
    let dir = TempDir::new().unwrap();
    gen_small(dir.path());
    assert_eq!(train_small(dir.path(), &["--epochs", "0"]).status.code(), Some(0));
    let o = rvrae(
        dir.path(),
        &[
            "eval", "--data", "panel.csv", "--checkpoint", "m.ckpt", "--report", "omit.csv", "--omit-m", "3,5",
            "--seeds", "2", "--epochs", "1",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = fs::read_to_string(dir.path().join("omit_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);
    let summary = fs::read_to_string(dir.path().join("omit.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("m=3") && lines[0].contains("m=5"), "{summary}");
}
