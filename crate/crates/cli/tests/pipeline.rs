use std::path::Path;
use std::process::{Command, Output};

use behavior_guard_cli::{run_experiment, ExperimentConfig, Report};
use behavior_guard_core::conditions::{Certificate, ConditionId};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_behavior-guard"))
        .args(args)
        .current_dir(cwd)
        .env("BEHAVIOR_GUARD_LOG", "error")
        .output()
        .expect("binary runs")
}

fn entry_config(dir: &Path, methods: &str, noise: f64) -> String {
    format!(
        r#"{{
            "system": "mass_spring_chain:3",
            "T": 11, "L": 3, "k": 1,
            "attack": {{"kind": "entry", "magnitude": 14.0}},
            "noise": {{"distribution": "gaussian", "sigma": {noise}}},
            "methods": [{methods}],
            "trials": 6,
            "seed": 42,
            "out_dir": {:?}
        }}"#,
        dir.display().to_string()
    )
}

fn read_report(path: &Path) -> Report {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn staged_pipeline_equals_single_shot() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let text = entry_config(dir, r#""noisy_entries", "l1""#, 0.5f64.sqrt());
    std::fs::write(dir.join("cfg.json"), &text).unwrap();

    assert!(bin(&["simulate", "--config", "cfg.json"], dir).status.success());
    let attack = bin(&["attack", "--config", "cfg.json", "--input", &dir.join("online.csv").display().to_string()], dir);
    assert!(attack.status.success(), "{}", String::from_utf8_lossy(&attack.stderr));
    let out = bin(
        &[
            "recover", "--config", "cfg.json",
            "--offline", "offline.csv", "--input", "attacked.csv",
            "--truth", "online.csv", "--attacks", "attacks.json",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let staged = read_report(&dir.join("report.json"));
    staged.check_consistency().unwrap();
    let single = run_experiment(&ExperimentConfig::from_json(&text).unwrap(), 1).unwrap();
    assert_eq!(staged.without_timings().to_json(), single.without_timings().to_json());
    assert!(dir.join("recovered_l1.csv").exists());
}

#[test]
fn reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut outputs = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "4")] {
        let out = bin(&["reproduce", "--preset", "fig2_entry", "--out", run, "--jobs", jobs], dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report = read_report(&dir.join(run).join("report.json"));
        report.check_consistency().unwrap();
        let mut clean = report.without_timings();
        clean.config.out_dir = "out".into();
        outputs.push(clean.to_json());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_override_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for (run, seed) in [("a", "1"), ("b", "2")] {
        assert!(bin(&["simulate", "--preset", "fig2_entry", "--out", run, "--seed", seed], dir).status.success());
    }
    let a = std::fs::read_to_string(dir.join("a/offline.csv")).unwrap();
    let b = std::fs::read_to_string(dir.join("b/offline.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_attack_zero_noise_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let text = entry_config(tmp.path(), r#""bruteforce_entries", "l1", "noisy_entries""#, 0.0).replace("\"k\": 1", "\"k\": 0");
    let report = run_experiment(&ExperimentConfig::from_json(&text).unwrap(), 1).unwrap();
    for s in &report.summary {
        assert_eq!(s.recovered, s.trials);
        assert!(s.rmse_max.unwrap() < 1e-9, "{} {:?}", s.method.name(), s.rmse_max);
    }
}

#[test]
fn certify_output_channel_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["certify", "--preset", "fig3_channel", "--channels", "3", "--out", "c"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let certs: Vec<Certificate> =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("c/certificates.json")).unwrap()).unwrap();
    let cond3 = certs.iter().find(|c| c.condition == ConditionId::Cond3).unwrap();
    assert_eq!(cond3.holds, Some(true));
}

#[test]
fn plot_data_is_tidy() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(bin(&["reproduce", "--preset", "fig4_compare", "--out", "p"], tmp.path()).status.success());
    let mut rdr = csv::Reader::from_path(tmp.path().join("p/plot.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["time", "variable", "series", "value"]);
    let mut series = std::collections::BTreeSet::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        series.insert(rec[2].to_string());
        rows += 1;
    }
    let expected: std::collections::BTreeSet<String> =
        ["true", "attacked", "recovered_bruteforce_entries", "recovered_l1"].iter().map(|s| s.to_string()).collect();
    assert_eq!(series, expected);
    // 20 windows of 3 samples and 4 variables, four series
    assert_eq!(rows, 20 * 3 * 4 * 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    std::fs::write(dir.join("broken.json"), "{\n  \"system\": \"mass_spring_chain:3\",\n  \"T\": }").unwrap();
    let out = bin(&["bench", "--config", "broken.json"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = bin(&["reproduce", "--preset", "fig99"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    let out = bin(&["bench", "--config", "missing.json"], dir);
    assert_eq!(out.status.code(), Some(2));

    // ten masses with the default tolerance fail the excitation test
    let chain = r#"{"system": "mass_spring_chain:10", "T": 48, "L": 3, "k": 1,
        "attack": {"kind": "entry", "magnitude": 1.0}, "methods": ["l1"], "trials": 1}"#;
    std::fs::write(dir.join("chain.json"), chain).unwrap();
    assert_eq!(bin(&["bench", "--config", "chain.json"], dir).status.code(), Some(3));

    // a zero budget cannot explain attacked data
    let text = entry_config(dir, r#""bruteforce_entries""#, 0.0);
    std::fs::write(dir.join("cfg.json"), &text).unwrap();
    assert!(bin(&["simulate", "--config", "cfg.json"], dir).status.success());
    assert!(bin(&["attack", "--config", "cfg.json", "--input", "online.csv"], dir).status.success());
    let zero = text.replace("\"k\": 1", "\"k\": 0");
    std::fs::write(dir.join("zero.json"), zero).unwrap();
    let out = bin(&["recover", "--config", "zero.json", "--offline", "offline.csv", "--input", "attacked.csv"], dir);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scaling_preset_writes_its_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["reproduce", "--preset", "table1_scaling", "--out", "t"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(tmp.path().join("t/scaling.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.starts_with("n_masses,state_dim,hankel_rows,hankel_cols,method,trials,recovered"));
}
