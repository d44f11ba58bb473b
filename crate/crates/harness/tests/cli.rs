//! End-to-end runs of the `sim` binary: outputs, manifests and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xbarsim_harness::{ExperimentConfig, Recipe};

fn sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("XBARSIM_MNIST_DIR")
        .output()
        .expect("sim binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_summary_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"version": 1, "seeds": [0, 1]}"#);
    let o = sim(&["run", "ex-situ", "--config", &cfg, "--out", "res"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let res = dir.path().join("res");
    for f in ["summary.json", "manifest.json", "metrics.csv", "trace.csv"] {
        assert!(res.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("manifest.json")).unwrap()).unwrap();
    let expected = ExperimentConfig::load(Path::new(&cfg), Some(Recipe::ExSitu)).unwrap().hash();
    assert_eq!(manifest["config_hash"], expected.as_str());
    assert_eq!(manifest["recipe"], "ex-situ");
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    let metrics = fs::read_to_string(res.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,metric,value\n"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = sim(&["--threads", "2", "run", "hybrid", "--seeds", "3", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "trace.csv", "summary.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn sweep_writes_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", r#"{"version": 1, "recipe": "ex-situ", "seeds": [0, 1]}"#);
    let o = sim(
        &["sweep", "--config", &cfg, "--axis", "stuck_fraction=0,0.1", "--out", "sw"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("stuck_fraction,metric,median,q25,q75,seeds"));
    let rows: Vec<_> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("0,")) && rows.iter().any(|r| r.starts_with("0.1,")));
    assert!(rows.iter().all(|r| r.ends_with(",2")));
}

#[test]
fn empty_axis_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", r#"{"version": 1, "recipe": "ex-situ", "seeds": [0]}"#);
    let o = sim(&["sweep", "--config", &cfg, "--axis", "bound_sigma=", "--out", "sw"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv, "bound_sigma,metric,median,q25,q75,seeds\n");
}

#[test]
fn list_names_every_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["list"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for r in ["forming", "tuning", "ex-situ", "defect-aware", "in-situ", "hybrid", "mnist", "temperature"] {
        assert!(text.contains(r), "{r} missing from list");
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("no_version.json", r#"{"seeds": [0]}"#),
        ("bad_version.json", r#"{"version": 7}"#),
        ("unknown_key.json", r#"{"version": 1, "sedes": [0]}"#),
        ("bad_knob.json", r#"{"version": 1, "knobs": {"stuck_fraction": 1.5}}"#),
        ("wrong_recipe.json", r#"{"version": 1, "recipe": "forming"}"#),
        ("not_json.json", "{version"),
    ];
    for (name, text) in cases {
        let cfg = write_config(dir.path(), name, text);
        let o = sim(&["run", "ex-situ", "--config", &cfg, "--out", "x"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error: "), "{name}");
    }
    let o = sim(&["run", "no-such-recipe"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = sim(&["run", "ex-situ", "--seeds", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "t.json", r#"{"version": 1, "recipe": "temperature"}"#);
    let o = sim(&["sweep", "--config", &cfg, "--axis", "stuck_fraction=0.1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["run", "mnist"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let cfg = write_config(dir.path(), "m.json", r#"{"version": 1, "mnist": {"dir": "nowhere"}}"#);
    let o = sim(&["run", "mnist", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = sim(&["tune-image", "--image", "absent.txt"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn io_errors_exit_with_5() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["run", "ex-situ", "--config", "absent.json"], dir.path());
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = sim(&["run", "ex-situ", "--seeds", "1", "--out", "blocker/sub"], dir.path());
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn tune_image_and_form_commands() {
    let dir = tempfile::tempdir().unwrap();
    let img: String = (0..6)
        .map(|r| (0..8).map(|c| ((r * 8 + c) * 5).to_string()).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    fs::write(dir.path().join("img.txt"), img).unwrap();
    let o = sim(&["tune-image", "--image", "img.txt", "--out", "ti"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let map = fs::read_to_string(dir.path().join("ti/tuning_map.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 48);
    let o = sim(&["form", "--out", "fm"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("fm/forming_levels.csv").is_file());
}
