use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const STUDY: &str = r#"
study_id = "cli-study"
variables = ["at_home", "affect_positive_share"]

[link]
window_start = "2020-03-01T00:00:00Z"
window_end = "2020-03-31T00:00:00Z"
bin_ms = 86400000

[denseness]
period_ms = 604800000
min_records = 1

[accuracy]
home-geofence = { accuracy = 0.95, evaluated_on = "labelled fixture pings" }
face-affect = { accuracy = 0.8, evaluated_on = "labelled fixture photos" }

[checklist]
data_controllers = ["instagram", "google_takeout"]

[funnel]
population_size = 2000
seed = 1
[[funnel.groups]]
name = "A"
share = 0.5
[[funnel.groups]]
name = "B"
share = 0.5
outcome_mean = 1.0
[funnel.respond]
model = "by_group"
probabilities = { A = 0.8, B = 0.4 }
"#;

fn ddp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddp"))
        .args(args)
        .env("DDP_WORKDIR", dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn correct_counts_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddp(
        dir.path(),
        &[
            "correct-counts",
            "--observed",
            "115,85",
            "--sensitivity",
            "0.9",
            "--specificity",
            "0.75",
        ],
    );
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for c in v["counts"].as_array().unwrap() {
        assert!((c.as_f64().unwrap() - 100.0).abs() < 1e-9);
    }

    let o = ddp(
        dir.path(),
        &[
            "weights",
            "--frame",
            "A=800,B=200",
            "--respondents",
            "A=50,B=5",
        ],
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(
        out.contains("A,800,50,16\n") && out.contains("B,200,5,40\n"),
        "{out}"
    );
    assert!(out.contains("total 1000 calibrated true"));
}

#[test]
fn exit_codes_separate_config_and_stage_failures() {
    let dir = tempfile::tempdir().unwrap();
    // Unparseable config.
    std::fs::write(dir.path().join("bad.toml"), "study_id = 3").unwrap();
    let o = ddp(
        dir.path(),
        &[
            "transform",
            "x.zip",
            "--config",
            "bad.toml",
            "--respondent",
            "r",
            "--out",
            "s.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    // Usage error.
    assert_eq!(ddp(dir.path(), &["weights"]).status.code(), Some(2));
    // Stage failure: not a zip.
    std::fs::write(dir.path().join("study.toml"), STUDY).unwrap();
    std::fs::write(dir.path().join("x.zip"), b"not a zip").unwrap();
    let o = ddp(
        dir.path(),
        &[
            "transform",
            "x.zip",
            "--config",
            "study.toml",
            "--respondent",
            "r",
            "--out",
            "s.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("detect stage failed for x.zip"), "{err}");
    // Invalid fixture spec is a config error.
    std::fs::write(
        dir.path().join("spec.toml"),
        "provider = \"instagram\"\npngs = 1\nrenamed_pngs = 2\n",
    )
    .unwrap();
    let o = ddp(
        dir.path(),
        &["fixture", "gen", "--spec", "spec.toml", "--out", "f.zip"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixture_gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.zip", "b.zip"] {
        assert!(ddp(
            dir.path(),
            &[
                "fixture",
                "gen",
                "--provider",
                "instagram",
                "--seed",
                "9",
                "--out",
                name
            ]
        )
        .status
        .success());
    }
    let a = std::fs::read(dir.path().join("a.zip")).unwrap();
    let b = std::fs::read(dir.path().join("b.zip")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("a.zip.truth.json").exists());
}

#[test]
fn respondent_and_researcher_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("study.toml"), STUDY).unwrap();
    for (provider, out) in [("instagram", "ig.zip"), ("google", "takeout.zip")] {
        let o = ddp(
            d,
            &[
                "fixture",
                "gen",
                "--provider",
                provider,
                "--seed",
                "4",
                "--out",
                out,
            ],
        );
        assert!(o.status.success());
    }
    let o = ddp(
        d,
        &[
            "parse",
            "ig.zip",
            "takeout.zip",
            "--schema-version",
            "instagram-fixture/1",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(1),
        "second archive has another schema"
    );

    let o = ddp(
        d,
        &[
            "transform",
            "ig.zip",
            "takeout.zip",
            "--config",
            "study.toml",
            "--respondent",
            "r-1",
            "--out",
            "store.csv",
            "--report",
            "pipeline.json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("at_home:"));

    let mut child = Command::new(env!("CARGO_BIN_EXE_ddp"))
        .args([
            "consent",
            "serve",
            "--config",
            "study.toml",
            "--store",
            "store.csv",
            "--port",
            "0",
            "--package-out",
            "package.zip",
            "--archive",
            "ig.zip",
            "--report",
            "consent.json",
        ])
        .env("DDP_WORKDIR", d)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let base = first
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();

    let vars: serde_json::Value = ureq::get(&format!("{base}/variables"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(vars.as_array().unwrap().len(), 2);
    for (v, decision) in [
        ("at_home", "approved"),
        ("affect_positive_share", "rejected"),
    ] {
        ureq::get(&format!("{base}/preview/{v}?page=0&page_size=5"))
            .call()
            .unwrap();
        ureq::post(&format!("{base}/decision"))
            .send_json(serde_json::json!({ "variable": v, "decision": decision }))
            .unwrap();
    }
    let fin: serde_json::Value = ureq::post(&format!("{base}/finalize"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(fin["status"], "package");
    ureq::post(&format!("{base}/purge"))
        .send_json(serde_json::json!({ "keep_archives": false }))
        .unwrap();
    assert!(child.wait().unwrap().success());
    assert!(!d.join("ig.zip").exists(), "archive purged");
    assert!(!d.join("store.csv").exists(), "derived store purged");

    let o = ddp(d, &["package", "verify", "package.zip"]);
    assert!(o.status.success());
    let o = ddp(
        d,
        &[
            "ingest",
            "package.zip",
            "--config",
            "study.toml",
            "--out",
            "linked.csv",
            "--report",
            "ingest.json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let linked = std::fs::read_to_string(d.join("linked.csv")).unwrap();
    assert!(
        linked.starts_with("pseudonym,bin_start_iso,at_home\n"),
        "{linked}"
    );

    let o = ddp(
        d,
        &[
            "simulate-funnel",
            "--config",
            "study.toml",
            "--replications",
            "20",
            "--out",
            "mc.csv",
            "--report",
            "funnel.json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(d.join("mc.csv"))
        .unwrap()
        .contains("nonresponse_bias"));

    let o = ddp(
        d,
        &[
            "checklist",
            "--config",
            "study.toml",
            "--evidence",
            "pipeline.json",
            "--evidence",
            "consent.json",
            "--evidence",
            "ingest.json",
            "--evidence",
            "funnel.json",
            "--out",
            "checklist.json",
            "--strict",
        ],
    );
    assert!(o.status.success(), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("checklist.json")).unwrap()).unwrap();
    let items = report["items"].as_array().unwrap();
    assert_eq!(items.len(), 31);
    assert!(items.iter().all(|i| i["status"] != "fail"));

    // Tampered package: flip one byte inside records.csv.
    let mut bytes = std::fs::read(d.join("package.zip")).unwrap();
    let at = bytes.windows(7).position(|w| w == b"at_home").unwrap() + 30;
    bytes[at] ^= 0x04;
    std::fs::write(d.join("bad.zip"), bytes).unwrap();
    let o = ddp(d, &["package", "verify", "bad.zip"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ddp(
        d,
        &[
            "ingest",
            "bad.zip",
            "--config",
            "study.toml",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.zip"));
}
