use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kerrcrit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerrcrit")).args(args).env_remove("RUST_LOG").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_section(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn minimal_steady_config_uses_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[steady]\nomega = 1.0\nepsilon = 1.2\nchi = 0.04\n").unwrap();
    let out = dir.path().join("steady");
    let o = kerrcrit(&["steady", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = data_section(&out.join("data.tsv"));
    assert!(text.contains("\"gamma\":1.0"), "{text}");
    assert!(text.contains("\"dim\":null"));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "steady");
    assert!(meta["created_unix"].as_u64().is_some());
    assert!(out.join("rho.json").exists());
}

#[test]
fn flag_overrides_file_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[steady]\nomega = 1.0\nepsilon = 1.2\nchi = 0.04\n").unwrap();
    let out = dir.path().join("o");
    let o = kerrcrit(&["steady", "-c", cfg.to_str().unwrap(), "--set", "chi=0.08", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("overrides"), "{}", stderr(&o));
    assert!(data_section(&out.join("data.tsv")).contains("\"chi\":0.08"));
}

#[test]
fn config_errors_name_the_key_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = kerrcrit(&["steady", "--set", "omega=1", "--set", "epsilon=1", "--set", "chi=-0.1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`chi`"), "{}", stderr(&o));
    let o = kerrcrit(&["steady", "--set", "omega=1", "--set", "epsilon=1", "--set", "chi=0.1", "--set", "kappa=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[thermo]\nl = [1.0, 2.0]\nepsilon = { min = 0.5, max = 1.5, points = 3 }\n[run]\nworkers = 1\n").unwrap();
    let mut texts = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = kerrcrit(&["thermo", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        texts.push(data_section(&out.join("data.tsv")));
    }
    assert_eq!(texts[0], texts[1]);
    assert!(texts[0].contains("n_over_l"));
}

#[test]
fn magnetometer_reports_sub_micro_flux_quantum_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = kerrcrit(&["magnetometer", "-o", out.to_str().unwrap(), "-f", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("data.json")).unwrap()).unwrap();
    let s = t["values"]["sensitivity"][0].as_f64().unwrap();
    assert!((s / 6e-7 - 1.0).abs() < 0.05, "{s}");
    assert_eq!(t["values"]["bound_respected"][0].as_f64(), Some(1.0));
}

#[test]
fn validate_round_trips_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for (format, sub) in [("tsv", "a"), ("json", "b")] {
        let out = dir.path().join(sub);
        let o = kerrcrit(&[
            "steady", "--set", "omega=0", "--set", "epsilon=1.5", "--set", "chi=0.2", "-f", format, "-o", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v = kerrcrit(&["validate", out.to_str().unwrap()]);
        assert!(v.status.success(), "{}", stderr(&v));
        assert_eq!(String::from_utf8_lossy(&v.stdout).lines().count(), 3);
    }
    let bad = dir.path().join("a").join("data.tsv");
    let text = fs::read_to_string(&bad).unwrap().replace("n_photon", "n_photon\textra");
    fs::write(&bad, text).unwrap();
    assert_eq!(kerrcrit(&["validate", dir.path().join("a").to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn failed_points_exit_3_or_4_with_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    // A tiny truncation budget cannot hold the large-L points.
    fs::write(&cfg, "[thermo]\nl = [1.0, 50.0]\nepsilon = [2.0]\nmin_dim = 10\nmax_dim = 24\n").unwrap();
    let out = dir.path().join("t");
    let o = kerrcrit(&["thermo", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("L = 50"), "{}", stderr(&o));
    let o = kerrcrit(&["thermo", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap(), "--keep-going"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let text = data_section(&out.join("data.tsv"));
    assert!(text.contains("NaN"));
    assert!(text.contains("# partial: true"));
}

#[test]
fn time_trace_and_wigner_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tt");
    let o = kerrcrit(&[
        "time-trace", "--set", "omega=1", "--set", "epsilon=0.5", "--set", "chi=0.1", "--set", "t_final=4", "--set", "samples=5",
        "-o", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_section(&out.join("data.tsv")).lines().filter(|l| !l.starts_with('#')).count(), 6);
    let out = dir.path().join("w");
    let o = kerrcrit(&[
        "wigner", "--set", "omega=0", "--set", "epsilon=1", "--set", "chi=0.3", "--set", "points=21", "-f", "json", "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("data.json")).unwrap()).unwrap();
    assert!((t["metadata"]["norm"].as_f64().unwrap() - 1.0).abs() < 0.02);
}
