use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mmfuse::eval::MetricsReport;

fn mmfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfuse"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MMFUSE_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// A small, fast variant of the synthetic preset.
fn small_config(dir: &Path, kind: &str) -> std::path::PathBuf {
    let preset = mmfuse_cli::config::preset_text("synthetic-weak").unwrap();
    let cfg = preset
        .replace("samples = 2100", "samples = 500")
        .replace("test_rows = 1000", "test_rows = 150")
        .replace("dev_rows = 500", "dev_rows = 100")
        .replace("max_epochs = 60", "max_epochs = 4")
        .replace("kind = \"mul\"", &format!("kind = \"{kind}\""));
    let path = dir.join(format!("{kind}.toml"));
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn validate_accepts_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmfuse(&["validate", "--preset", "synthetic-weak"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).trim(), "ok");
}

#[test]
fn validate_lists_every_violation_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "add");
    let cfg = fs::read_to_string(&path)
        .unwrap()
        .replace("beta = 0.5", "beta = 1.5\nboosted = true")
        .replace("batch_size = 100", "batch_size = 0");
    fs::write(&path, cfg).unwrap();
    let out = mmfuse(&["validate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("[0, 1]"), "{err}");
    assert!(err.contains("boosted requires"), "{err}");
    assert!(err.contains("batch_size"), "{err}");
}

#[test]
fn malformed_toml_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\n[dataset\n").unwrap();
    let out = mmfuse(&["validate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_metrics_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmfuse(&["compare", "nope/metrics.json", "nada/metrics.json"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
}

#[test]
fn run_writes_exactly_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "mulmix");
    let out = mmfuse(&["run", "--config", path.to_str().unwrap(), "--seed", "3", "--out", "r"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("r"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["checkpoint.json", "config.toml", "metrics.json", "train_log.csv"]);

    let m: MetricsReport = serde_json::from_str(&fs::read_to_string(dir.path().join("r/metrics.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 3);
    assert_eq!(m.kind, "mulmix");
    assert_eq!(m.samples, 150);
    assert_eq!(m.per_modality.len(), 3);
    assert!(m.over_learn_error.is_some());
    let log = fs::read_to_string(dir.path().join("r/train_log.csv")).unwrap();
    assert!(log.starts_with("iteration,epoch,train_loss,dev_metric\n"));

    // the written config reproduces the run
    let again = mmfuse(&["run", "--config", "r/config.toml", "--out", "r2"], dir.path());
    assert!(again.status.success(), "{}", text(&again.stderr));
    let m2: MetricsReport = serde_json::from_str(&fs::read_to_string(dir.path().join("r2/metrics.json")).unwrap()).unwrap();
    assert_eq!(m2.errors, m.errors);
    assert_eq!(m2.test_loss, m.test_loss);
}

#[test]
fn output_root_applies_to_relative_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "add");
    let out = Command::new(env!("CARGO_BIN_EXE_mmfuse"))
        .args(["run", "--config", path.to_str().unwrap()])
        .current_dir(dir.path())
        .env("MMFUSE_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("root/runs/synthetic-weak/metrics.json").exists());
}

#[test]
fn sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "mul");
    let cfg = fs::read_to_string(&path).unwrap().replace("[training]", "[eval]\nbaselines = false\n\n[training]");
    fs::write(&path, cfg).unwrap();
    let out = mmfuse(
        &["sweep", "--config", path.to_str().unwrap(), "--grid", "beta=0:1:3", "--seeds", "2", "--out", "s", "--parallel", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,mean_err,std_err,n_seeds");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,") && lines[2].starts_with("0.5,") && lines[3].starts_with("1,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",2")));
    // cell seeds are base seed + seed index
    for s in [1, 2] {
        assert!(dir.path().join(format!("s/beta=0.5/seed-{s}/metrics.json")).exists());
    }

    // a rerun finds every cell finished and leaves it untouched
    let cell = dir.path().join("s/beta=1/seed-2/metrics.json");
    let before = fs::metadata(&cell).unwrap().modified().unwrap();
    let again = mmfuse(
        &["sweep", "--config", path.to_str().unwrap(), "--grid", "beta=0:1:3", "--seeds", "2", "--out", "s"],
        dir.path(),
    );
    assert!(again.status.success(), "{}", text(&again.stderr));
    assert_eq!(fs::metadata(&cell).unwrap().modified().unwrap(), before);
    assert_eq!(fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap(), csv);

    let out = mmfuse(
        &["compare", "s/beta=0/seed-1", "s/beta=0/seed-2", "s/beta=1/seed-1", "--csv", "cmp.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.contains("mul"), "{table}");
    let cmp = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert!(cmp.lines().nth(1).unwrap().starts_with("mul,3,"), "{cmp}");
}

#[test]
fn gen_data_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path(), "mul");
    let out = mmfuse(&["gen-data", "--config", path.to_str().unwrap(), "--out", "d"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("d/synthetic-weak.csv")).unwrap();
    assert_eq!(csv.lines().count(), 500);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 3 * 8);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d/synthetic-weak.json")).unwrap()).unwrap();
    assert!(meta.get("informative_modality").is_some());
}
