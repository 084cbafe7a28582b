use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use devcert::suite::Sizes;
use devcert_cli::report::{format_float, without_timing};
use devcert_cli::{fixture, run, Invocation, Verb};
use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn devcert(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_devcert"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    let text = String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr);
    (o.status.code().expect("exit code"), text)
}

fn with_config(verb: &str, cfg: &str, extra: &[&str], out: &Path) -> (i32, String) {
    let path = fixture(cfg);
    let mut args = vec![verb, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    devcert(&args, out)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn good_device_certifies_and_verifies() {
    let out = scratch("good_certify");
    let (code, text) = with_config("certify", "good_device.cfg", &[], &out);
    assert_eq!(code, 0, "{text}");
    let r = report(&out);
    assert_eq!(r["verb"], "certify");
    assert_eq!(r["result"]["F"], 1);
    assert!(out.join("intervals.csv").exists());

    let out = scratch("good_verify");
    let (code, text) = with_config("verify", "good_device.cfg", &[], &out);
    assert_eq!(code, 0, "{text}");
    let bound = &report(&out)["result"]["bound"];
    assert_eq!(bound["holds_sum"], true);
    assert_eq!(bound["holds_max"], true);
    let csv = fs::read_to_string(out.join("instances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(!csv.contains('\r'));
}

#[test]
fn counterexample_config() {
    let out = scratch("counterexample");
    let (code, text) = with_config("verify", "counterexample_l4.cfg", &[], &out);
    assert_eq!(code, 0, "{text}");
    let bound = &report(&out)["result"]["bound"];
    let d = bound["conditional_distance"].as_f64().unwrap();
    assert!((d - 0.9375).abs() < 1e-9);
    assert!(bound["lhs"].as_f64().unwrap() <= bound["eps_cert"].as_f64().unwrap());
}

#[test]
fn two_instance_otp_and_adaptive_configs_hold() {
    for (cfg, extra) in [("two_instance_otp.cfg", &[][..]), ("adaptive_source.cfg", &["--adaptive"][..])] {
        let out = scratch(cfg);
        let (code, text) = with_config("verify", cfg, extra, &out);
        assert_eq!(code, 0, "{cfg}: {text}");
        let bound = &report(&out)["result"]["bound"];
        assert_eq!(bound["holds_sum"], true, "{cfg}");
        assert_eq!(bound["holds_max"], true, "{cfg}");
    }
    let out = scratch("adaptive_certify");
    let (code, text) = with_config("certify", "adaptive_source.cfg", &["--adaptive"], &out);
    assert_eq!(code, 0, "{text}");
    assert!(report(&out)["result"]["protocol"]["key_length"].is_u64());
}

#[test]
fn error_exit_codes() {
    let out = scratch("malformed");
    let (code, text) = with_config("verify", "malformed.cfg", &[], &out);
    assert_eq!(code, 2, "{text}");
    assert!(!out.exists());

    let out = scratch("missing");
    let (code, _) = devcert(&["verify", "--config", "/nonexistent/devcert.cfg"], &out);
    assert_eq!(code, 2);
    assert!(!out.exists());

    let out = scratch("stipulated");
    let (code, text) = with_config("verify", "stipulated_below_audit.cfg", &[], &out);
    assert_eq!(code, 3, "{text}");
    assert!(!out.exists());

    let out = scratch("stipulated_audit");
    let (code, _) = with_config("audit", "stipulated_below_audit.cfg", &["--instance", "1"], &out);
    assert_eq!(code, 3);
    assert!(fs::read_to_string(out.join("audit.csv")).unwrap().contains("false"));

    let out = scratch("oversized");
    let (code, text) = with_config("verify", "oversized.cfg", &[], &out);
    assert_eq!(code, 4, "{text}");
    assert!(!out.exists());
}

#[test]
fn coherent_laser_is_rejected() {
    let out = scratch("laser");
    let rejected = (0..100u64)
        .filter(|&seed| {
            let inv = Invocation {
                verb: Verb::Certify,
                config: Some(fixture("coherent_laser.cfg")),
                seed: Some(seed),
                adaptive: false,
                out: out.clone(),
                sizes: Sizes::Tiny,
                instance: None,
            };
            run(&inv).unwrap();
            report(&out)["result"]["F"] == 0
        })
        .count();
    assert!(rejected >= 95, "{rejected}");
}

#[test]
fn report_layout_and_seed_override() {
    let out = scratch("layout");
    let (code, _) = with_config("certify", "good_device.cfg", &["--seed", "77"], &out);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let r: Value = serde_json::from_str(&text).unwrap();
    let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["tool", "library_version", "verb", "config_hash", "master_seed", "result", "content_hash", "timing"]
    );
    assert_eq!(r["master_seed"], 77);
    assert_eq!(r["library_version"], devcert::VERSION);
    let bytes = fs::read(fixture("good_device.cfg")).unwrap();
    assert_eq!(r["config_hash"], devcert_cli::config::sha256_hex(&bytes));
    assert_eq!(r["content_hash"].as_str().unwrap().len(), 64);
    let eps = format_float(0.05);
    assert_eq!(eps, "5.0000000000000003e-2");
    assert!(text.contains(&format!("\"eps_cert\": {eps}")));
    assert!(without_timing(&text).len() < text.len());

    let again = scratch("layout_default_seed");
    with_config("certify", "good_device.cfg", &[], &again);
    assert_eq!(report(&again)["master_seed"], 20240611);
}

#[test]
fn suite_reports_are_reproducible() {
    let (a, b) = (scratch("suite_a"), scratch("suite_b"));
    for out in [&a, &b] {
        let (code, text) = devcert(&["suite", "--sizes", "tiny", "--seed", "9"], out);
        assert_eq!(code, 0, "{text}");
    }
    let ra = fs::read_to_string(a.join("report.json")).unwrap();
    let rb = fs::read_to_string(b.join("report.json")).unwrap();
    assert_eq!(without_timing(&ra), without_timing(&rb));
    assert_eq!(fs::read(a.join("suite.csv")).unwrap(), fs::read(b.join("suite.csv")).unwrap());
    assert_eq!(report(&a)["config_hash"], Value::Null);
}
