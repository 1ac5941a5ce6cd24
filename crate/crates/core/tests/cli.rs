use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ldaction::cli::{execute, RunConfig, EXIT_CONFIG};
use ldaction::dynamics::saddle_total_ld_closed_form;
use ldaction::sections::{Axis, SectionSpec};

fn ldaction(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldaction"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const SMALL_DUFFING: &str = r#"{
  "command": "stochastic-field",
  "system": { "kind": "duffing", "sigma": 0.025 },
  "ld": {
    "tau_f": 2.0, "tau_b": 2.0, "dt": 0.005, "method": "euler_maruyama",
    "ensemble": { "n_realizations": 3, "seed": 1 }
  },
  "section": {
    "kind": "full_plane",
    "x": { "min": -1.7, "max": 1.7, "count": 9 },
    "y": { "min": -0.9, "max": 0.9, "count": 7 }
  },
  "global_seed": 42
}"#;

#[test]
fn bundled_configs_parse_and_validate() {
    let mut count = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let config = RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.resolve(None).validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 10);
}

#[test]
fn malformed_json_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", "{ \"command\": \"field\", ");
    let out = tmp.path().join("out");
    let o = ldaction(&["field", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn unknown_key_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", &SMALL_DUFFING.replace("\"global_seed\"", "\"global_sead\""));
    let out = tmp.path().join("out");
    let o = ldaction(&["stochastic-field", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("global_sead"));
    assert!(!out.exists());
}

#[test]
fn command_must_match_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_DUFFING);
    let o = ldaction(&["field", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn empty_feasible_set_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{
  "command": "field",
  "system": { "kind": "proton_transfer", "m": 1.0, "barrier": 0.25, "well": 0.7071067811865476, "omega": 1.0, "coupling": 0.5 },
  "ld": { "tau_f": 1.0, "tau_b": 1.0, "dt": 0.01 },
  "section": {
    "kind": "energy_section", "fixed_dof": 0, "fixed_value": 0.0, "energy": -1.0,
    "x": { "min": -1, "max": 1, "count": 5 }, "y": { "min": -1, "max": 1, "count": 5 }
  }
}"#;
    let cfg = write(tmp.path(), "c.json", text);
    let out = tmp.path().join("out");
    let o = ldaction(&["field", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty feasible set"));
    assert!(!out.exists());
}

#[test]
fn manifest_replay_is_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", SMALL_DUFFING);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = ldaction(&["stochastic-field", "--config", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = a.join("manifest.json");
    let o = ldaction(&[
        "stochastic-field",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--threads",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, fb);
    let text = fs::read_to_string(manifest).unwrap();
    assert!(text.contains("\"library_version\""));
    assert!(text.contains("\"seed\": 42"));
}

#[test]
fn seed_flag_changes_stochastic_output() {
    let config = RunConfig::from_json(SMALL_DUFFING).unwrap();
    let a = execute(&config.clone().resolve(None)).unwrap();
    let b = execute(&config.resolve(Some(43))).unwrap();
    assert_ne!(a[4].bytes, b[4].bytes);
}

#[test]
fn saddle_fixed_config_matches_closed_form() {
    // The bundled config on a coarser grid, to keep the test quick.
    let text = fs::read_to_string(configs_dir().join("saddle_fixed.json")).unwrap();
    let mut config = RunConfig::from_json(&text).unwrap().resolve(None);
    let axis = Axis::new(-4.0, 4.0, 21);
    config.section = Some(SectionSpec::FullPlane { x: axis, y: axis });
    let files = execute(&config).unwrap();
    let total = files.iter().find(|f| f.name == "total.f64bin").unwrap();
    let values: Vec<f64> = total.bytes.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(values.len(), 441);
    for j in 0..21 {
        for i in 0..21 {
            let exact = saddle_total_ld_closed_form(1.0, axis.value(i), axis.value(j), 6.0);
            let v = values[j * 21 + i];
            assert!((v - exact).abs() <= 1e-6 * exact.abs(), "({i},{j}): {v} vs {exact}");
        }
    }
}

#[test]
fn harmonic_frequency_config_finds_twice_omega() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("harmonic_frequency.json");
    let o = ldaction(&["frequency", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("frequency.json")).unwrap()).unwrap();
    let omega = json["estimate"]["omega"].as_f64().unwrap();
    let resolution = json["estimate"]["resolution"].as_f64().unwrap();
    assert!((omega - 2.0).abs() <= resolution);
    let csv = fs::read_to_string(tmp.path().join("g_series.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("tau,g"));
    assert_eq!(csv.lines().count(), 2049);
}

#[test]
fn poincare_and_extract_commands_write_point_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let pt = r#""system": { "kind": "proton_transfer", "m": 1.0, "barrier": 0.25, "well": 0.7071067811865476, "omega": 1.0, "coupling": 0.5 }"#;
    let section = r#""section": {
    "kind": "energy_section", "fixed_dof": 0, "fixed_value": 0.0, "energy": 0.1,
    "x": { "min": -1.05, "max": 1.05, "count": 21 }, "y": { "min": -0.85, "max": 0.85, "count": 21 }
  }"#;
    let poincare = format!(
        r#"{{ "command": "poincare", {pt}, {section},
  "poincare": {{ "orbits": 2, "t_max": 50.0, "max_crossings": 100, "dt": 0.01 }},
  "output": {{ "format": "csv" }} }}"#
    );
    let cfg = write(tmp.path(), "p.json", &poincare);
    let out = tmp.path().join("p");
    let o = ldaction(&["poincare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("crossings.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("orbit,k,t,x,y"));
    assert!(csv.lines().count() > 10);

    let extract = format!(
        r#"{{ "command": "extract", {pt}, {section},
  "ld": {{ "tau_f": 2.0, "tau_b": 2.0, "dt": 0.01 }},
  "extract": {{ "percentile": 90.0 }} }}"#
    );
    let cfg = write(tmp.path(), "e.json", &extract);
    let out = tmp.path().join("e");
    let o = ldaction(&["extract", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("component,i,j,x,y"));
    for component in ["forward", "backward", "total"] {
        assert!(csv.lines().any(|l| l.starts_with(component)));
    }
    assert!(out.join("total.meta.json").exists());
}

#[test]
fn bench_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ldaction(&["bench", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.ends_with("PASS")).count(), 7);
    assert!(tmp.path().join("bench.csv").exists());
}
