use std::process::{Command, Output};

fn cgge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgge")).args(args).output().unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn null_quench_has_nothing_to_distinguish() {
    let out = cgge(&["quench", "--n", "10", "--m", "5", "--j", "0"]);
    assert!(out.status.success());
    let r = json(&out.stdout);
    assert_eq!(r["schema_version"], 1);
    for s in ["de", "gge", "gce", "cgge"] {
        assert!(r["entropies"][s].as_f64().unwrap().abs() < 1e-12, "{s}");
    }
    for e in ["gge", "gce", "cgge"] {
        let c = &r["comparisons"][e];
        assert!(c["kl_de_to_model"].as_f64().unwrap() < 1e-12);
        assert!(c["trace_distance"].as_f64().unwrap() < 1e-12);
        assert!(c["tv_coarse"].as_f64().unwrap() < 1e-12);
    }
}

#[test]
fn entropies_are_ordered() {
    let out = cgge(&["quench", "--n", "10", "--m", "5", "--j", "4", "--period", "5", "--bin", "1.0"]);
    assert!(out.status.success());
    let s = &json(&out.stdout)["entropies"];
    let get = |k: &str| s[k].as_f64().unwrap();
    assert!(get("de") <= get("cgge") + 1e-8 && get("cgge") <= get("gge") + 1e-8);
}

#[test]
fn usage_errors_exit_1_with_an_error_object() {
    let out = cgge(&["quench", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let e = json(&out.stderr);
    assert_eq!(e["error"]["kind"], "usage");
    assert_eq!(e["error"]["exit_code"], 1);

    let out = cgge(&["quench", "--n", "8"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out.stderr)["error"]["kind"], "invalid_params");
}

#[test]
fn help_exits_0() {
    assert!(cgge(&["--help"]).status.success());
    assert!(cgge(&["quench", "--help"]).status.success());
}

#[test]
fn budget_errors_exit_3() {
    let out = cgge(&["quench", "--n", "30", "--budget", "1000"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out.stderr)["error"]["kind"], "budget_exceeded");
}

#[test]
fn sweep_records_failures_and_continues() {
    let out = cgge(&["sweep", "--sizes", "10,20", "--js", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "n,m,j,s_de,s_gge,s_gce,s_cgge,status");
    assert!(rows[1].starts_with("10,5,4.0,") && rows[1].ends_with(",ok"));
    assert!(rows[2].starts_with("20,10,4.0,,,,,fermi_degeneracy"));
}

#[test]
fn energy_bins_sum_to_one() {
    let out = cgge(&["energy-dist", "--n", "10", "--j", "12"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut sums = [0.0; 4];
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<f64> = line.split(',').skip(3).map(|x| x.parse().unwrap()).collect();
        for (s, x) in sums.iter_mut().zip(cols) {
            *s += x;
        }
    }
    for s in sums {
        assert!((s - 1.0).abs() < 1e-8, "{sums:?}");
    }
}

#[test]
fn null_quench_energy_distribution_is_one_bin() {
    let out = cgge(&["energy-dist", "--n", "10", "--j", "0", "--sector", "fixed"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let occupied: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter(|l| l.split(',').skip(3).any(|x| x.parse::<f64>().unwrap() > 1e-12))
        .collect();
    assert_eq!(occupied.len(), 1, "{text}");
}

#[test]
fn window_lists_single_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let states = dir.path().join("states.csv");
    let out = cgge(&["energy-dist", "--n", "10", "--j", "12", "--window", "-25", "-22", "--states-out", states.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(states).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert!(!rows.is_empty());
    for r in rows {
        let e: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-25.0..-22.0).contains(&e));
    }
}

#[test]
fn vij_reproduces_a_saved_model_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let m = model.to_str().unwrap();
    let fitted = cgge(&["vij", "--n", "10", "--j", "12", "--model-out", m]);
    let loaded = cgge(&["vij", "--n", "10", "--j", "12", "--model", m]);
    assert!(fitted.status.success() && loaded.status.success());
    assert_eq!(fitted.stdout, loaded.stdout);
    let text = String::from_utf8(fitted.stdout).unwrap();
    assert!(text.contains("# band_boundaries=2;4;6;8"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').skip(2).map(|x| x.parse().unwrap()).collect())
        .collect();
    for i in 0..10 {
        assert_eq!(rows[i][i], 0.0);
        for j in 0..10 {
            assert_eq!(rows[i][j], rows[j][i]);
        }
    }
}

#[test]
fn independent_targets_give_zero_couplings() {
    // a null quench leaves every mode sharply occupied or empty
    let out = cgge(&["vij", "--n", "10", "--j", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        assert!(line.split(',').skip(2).all(|x| x.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn oracle_validation_passes_on_small_rings() {
    for j in ["0", "4", "12"] {
        let out = cgge(&["oracle-validate", "--n", "6", "--period", "3", "--j", j]);
        assert!(out.status.success());
        let r = json(&out.stdout);
        assert_eq!(r["pass"], true, "{r}");
        if j == "0" {
            assert!(r["validation"]["moment_deviation"].as_f64().unwrap() < 1e-12);
        }
    }
    let out = cgge(&["oracle-validate", "--n", "30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n": 10, "j": 12.0, "bin": 2.0}"#).unwrap();
    let report = dir.path().join("r.json");
    let out = cgge(&["quench", "--config", cfg.to_str().unwrap(), "--j", "4", "--out", report.to_str().unwrap()]);
    assert!(out.status.success() && out.stdout.is_empty());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["config"]["j"], 4.0);
    assert_eq!(r["config"]["bin"], 2.0);
}
