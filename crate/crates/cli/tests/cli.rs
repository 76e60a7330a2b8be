//! End-to-end checks of the command-line surface: exit codes, output
//! formats, determinism, and parse-back of emitted files.

use std::process::{Command, Output};

fn dynlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynlat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn presets_lists_all_devices_and_networks() {
    let out = dynlat(&["presets"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in [
        "v100",
        "gtx1080",
        "tx2",
        "nano",
        "resnet50",
        "resnet101",
        "regnety400mf",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn predict_with_target_reports_positive_speedup() {
    let out = dynlat(&[
        "predict",
        "--hw",
        "v100",
        "--net",
        "resnet101",
        "--s-net",
        "8,4,7,1",
        "--target",
        "0.4",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(doc["speedup"].as_f64().unwrap() > 0.0);
    assert!(doc["solved_rate"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["per_block"].as_array().unwrap().len(), 33);
}

#[test]
fn predict_all_ones_static_fusion_none_keeps_flops_ratio_above_one() {
    let out = dynlat(&["predict", "--net", "resnet50", "--rate", "1.0"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // masker overhead keeps dynamic FLOPs above static at full rate
    assert!(doc["flops_ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn predict_all_ones_without_maskers_is_the_static_network() {
    let out = dynlat(&[
        "predict",
        "--net",
        "resnet50",
        "--rate",
        "1.0",
        "--no-masker",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["speedup"].as_f64().unwrap(), 0.0);
    assert_eq!(doc["flops_ratio"].as_f64().unwrap(), 1.0);
}

#[test]
fn predict_missing_rates_exits_2() {
    let out = dynlat(&["predict", "--net", "resnet50"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_conflicting_rates_rejected() {
    let out = dynlat(&[
        "predict", "--net", "resnet50", "--rate", "0.5", "--target", "0.4",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_unachievable_target_exits_3() {
    let out = dynlat(&["predict", "--net", "resnet50", "--target", "0.01"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_unknown_preset_exits_2() {
    let out = dynlat(&[
        "predict", "--hw", "v101", "--net", "resnet50", "--rate", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_rate_grid_has_21_rows_and_is_deterministic() {
    let args = [
        "sweep",
        "--hw",
        "v100",
        "--net",
        "resnet101",
        "--axis",
        "r",
        "--block",
        "0.1",
        "--s",
        "8",
    ];
    let first = dynlat(&args);
    assert!(first.status.success());
    let text = stdout(&first);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x,l_dyn_us,l_stat_us,r_l");
    assert_eq!(rows.len(), 1 + 21);
    let again = dynlat(&args);
    assert_eq!(first.stdout, again.stdout, "reruns must be byte-identical");
}

#[test]
fn sweep_granularity_covers_the_candidate_set() {
    let out = dynlat(&[
        "sweep",
        "--net",
        "resnet101",
        "--axis",
        "s",
        "--block",
        "0.1",
        "--rate",
        "0.5",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let xs: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(xs, vec!["1", "2", "4", "7", "8", "14", "28"]);
}

#[test]
fn sweep_csv_parses_back_into_the_sweep_type() {
    let out = dynlat(&[
        "sweep",
        "--net",
        "resnet101",
        "--axis",
        "r",
        "--block",
        "1.0",
        "--s",
        "4",
    ]);
    assert!(out.status.success());
    let parsed = dynlat::sched::SweepResult::from_csv(
        dynlat::sched::SweepAxis::R,
        "block",
        "v100",
        &stdout(&out),
    )
    .unwrap();
    assert_eq!(parsed.points.len(), 21);
    for p in parsed.points {
        assert!((p.r_l - p.l_dyn / p.l_stat).abs() < 1e-3);
    }
}

#[test]
fn sweep_bad_selector_exits_2() {
    let out = dynlat(&[
        "sweep", "--net", "resnet50", "--axis", "r", "--block", "9.0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = dynlat(&[
        "sweep", "--net", "resnet50", "--axis", "r", "--block", "first",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_rows_strictly_decrease() {
    let out = dynlat(&[
        "ablate",
        "--hw",
        "v100",
        "--net",
        "resnet101",
        "--block",
        "0.1",
        "--s",
        "4",
        "--rate",
        "0.6",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let latencies: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(latencies.len(), 4);
    for w in latencies.windows(2) {
        assert!(w[1] < w[0], "{w:?}");
    }
}

#[test]
fn validate_default_suite_passes() {
    let out = dynlat(&["validate"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn validate_detects_injected_fault() {
    let out = dynlat(&["validate", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("off2on"), "per-term diff missing: {err}");
}

#[test]
fn hardware_spec_file_round_trips_through_predict() {
    let dir = std::env::temp_dir().join("dynlat_cli_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("hw.json");
    let hw = dynlat::model::HardwareSpec::preset("gtx1080").unwrap();
    std::fs::write(&path, serde_json::to_string_pretty(&hw).unwrap()).unwrap();
    let out = dynlat(&[
        "predict",
        "--hw",
        path.to_str().unwrap(),
        "--net",
        "resnet50",
        "--rate",
        "0.5",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["hardware"], "gtx1080");
}
