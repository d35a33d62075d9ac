//! End-to-end runs of the `hawkes-mf` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hawkes-mf");

const LLN: &str = r#"experiment = "lln"

[model]
n = [20, 80]
p = 0.8
q = 0.5
kernel = { exponential = { lambda = 1.0 } }
transfer = { arctan = {} }

[run]
horizon = 5.0
intervals = 256
replicates = 20
master_seed = 5
"#;

fn run(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn meanfield_is_zero_for_balanced_signs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &LLN.replace("p = 0.8", "p = 0.5").replace("\"lln\"", "\"critical\""));
    let out = dir.path().join("mf");
    let o = Command::new(BIN).args(["meanfield", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("I.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema: hawkes-mf/"));
    assert_eq!(lines.next().unwrap(), "t,I,h_I");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "0", "{line}");
        assert_eq!(fields[2], "1", "{line}");
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &LLN.replace("replicates = 20", "replicates = 2"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = Command::new(BIN).args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(out).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["events_N20_r0.csv", "events_N80_r1.csv", "summary.csv"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn verify_writes_a_decreasing_table_and_reruns_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", LLN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = Command::new(BIN).args(["verify", "--config"]).arg(&cfg).arg("--out").arg(&a).output().unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("lln/median_decreasing"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let rows = report["tables"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["name"] == "sup_error")
        .unwrap()["rows"]
        .as_array()
        .unwrap()
        .clone();
    let medians: Vec<f64> = rows.iter().map(|r| r["cells"][0]["value"].as_f64().unwrap()).collect();
    assert!(medians[1] < medians[0], "{medians:?}");

    let o2 = Command::new(BIN)
        .args(["verify", "--config"])
        .arg(a.join("manifest.json"))
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), o2.status.code(), "{}", stderr(&o2));
    for entry in std::fs::read_dir(a.join("tables")).unwrap() {
        let name = entry.unwrap().file_name();
        let x = std::fs::read(a.join("tables").join(&name)).unwrap();
        let y = std::fs::read(b.join("tables").join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &LLN.replace("q = 0.5", "q = 0.5\nqq = 0.1"));
    let o = run(&["verify", "--config"], &[&cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.qq"), "{}", stderr(&o));
}

#[test]
fn regime_mismatch_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &LLN.replace("p = 0.8", "p = 0.5"));
    let o = run(&["verify", "--config"], &[&cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("model.p"), "{}", stderr(&o));
}

#[test]
fn plot_data_of_a_report_without_series_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &LLN.replace("\"lln\"", "\"backends\"").replace("n = [20, 80]", "n = 10"));
    let out = dir.path().join("v");
    let o = Command::new(BIN).args(["verify", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let plot = dir.path().join("plot.csv");
    let o = Command::new(BIN).args(["plot-data", "--report"]).arg(&out).arg("--out").arg(&plot).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(plot).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert_eq!(text.lines().nth(1), Some("series,t,value,replicate"));
}

#[test]
fn fluctuations_writes_samples_and_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", LLN);
    let out = dir.path().join("f");
    let o = Command::new(BIN)
        .args(["fluctuations", "--samples", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("samples/sample_00002.csv").exists());
    assert!(out.join("covariance.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn shipped_configs_validate() {
    let names = [
        "lln.toml",
        "clt.toml",
        "compensated.toml",
        "critical.toml",
        "critical_complementary.toml",
        "independence.toml",
        "backends.toml",
    ];
    for name in names {
        let cfg = hawkes_mf::config::ExperimentConfig::load(&shipped(name)).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
