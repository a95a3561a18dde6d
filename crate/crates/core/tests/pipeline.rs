use std::path::{Path, PathBuf};

use ddp_core::consent::{ConsentSession, Decision, LocalArtifacts};
use ddp_core::fixture::{generate_fixture, FixtureSpec, GoogleSpec, GroundTruth, InstagramSpec};
use ddp_core::study::{
    ingest, report_checklist, run_pipeline, ConsentEvidence, Evidence, EvidenceFile, IngestError,
    ItemStatus, PipelineOptions, PipelineStage, StudyConfig,
};
use ddp_core::transform::{EmotionLabel, AFFECT_POSITIVE_SHARE, AT_HOME, DAY_MS};
use ddp_core::{Pseudonym, Timestamp};

const CONFIG: &str = r#"
study_id = "demo-study"
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
face-affect = { accuracy = 0.80, evaluated_on = "labelled fixture photos" }

[checklist]
target_population = "adolescents in the Netherlands"
data_controllers = ["instagram", "google_takeout"]
"#;

fn fixtures(dir: &Path, seed: u64) -> (Vec<PathBuf>, GroundTruth, GroundTruth) {
    let ig = dir.join(format!("ig-{seed}.zip"));
    let gg = dir.join(format!("takeout-{seed}.zip"));
    let t_ig =
        generate_fixture(&FixtureSpec::Instagram(InstagramSpec::default()), seed, &ig).unwrap();
    let t_gg = generate_fixture(
        &FixtureSpec::GoogleTakeout(GoogleSpec::default()),
        seed,
        &gg,
    )
    .unwrap();
    (vec![ig, gg], t_ig, t_gg)
}

#[test]
fn pipeline_derives_both_variables_against_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, t_ig, t_gg) = fixtures(dir.path(), 3);
    let config = StudyConfig::from_toml(CONFIG).unwrap();
    let owner = Pseudonym::derive("demo-study", "r1");
    let out = run_pipeline(&paths, &config, &owner, &PipelineOptions::default()).unwrap();

    // at_home: one record per valid unique ping, labels equal the planted truth.
    let truth_pings: Vec<_> = t_gg
        .pings
        .iter()
        .filter(|p| p.valid && p.duplicate_of.is_none())
        .collect();
    let at_home: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.variable == AT_HOME)
        .collect();
    assert_eq!(at_home.len(), truth_pings.len());
    let mut expected: Vec<(i64, String)> = truth_pings
        .iter()
        .map(|p| (p.at_ms, p.at_home.to_string()))
        .collect();
    expected.sort();
    let got: Vec<(i64, String)> = at_home
        .iter()
        .map(|r| (r.at.epoch_ms, r.value.to_string()))
        .collect();
    assert_eq!(got, expected);

    // affect: per-day positive share recomputed from the sidecar.
    let mut per_day: std::collections::BTreeMap<i64, (usize, usize)> = Default::default();
    for m in &t_ig.media {
        let (Some(at), Some(e)) = (m.taken_at_ms, m.emotion) else {
            continue;
        };
        let slot = per_day.entry(at.div_euclid(DAY_MS) * DAY_MS).or_default();
        slot.1 += 1;
        if e == EmotionLabel::Positive {
            slot.0 += 1;
        }
    }
    let affect: Vec<_> = out
        .records
        .iter()
        .filter(|r| r.variable == AFFECT_POSITIVE_SHARE)
        .collect();
    assert_eq!(affect.len(), per_day.len());
    for r in affect {
        let (pos, all) = per_day[&r.at.epoch_ms];
        assert!((r.value.as_number().unwrap() - pos as f64 / all as f64).abs() < 1e-12);
    }

    assert!(out.report.denseness.as_ref().unwrap().passed());
    assert!(out
        .report
        .archives
        .iter()
        .all(|a| a.media_entries == a.media_parsed));

    // Deterministic re-run.
    let again = run_pipeline(&paths, &config, &owner, &PipelineOptions::default()).unwrap();
    assert_eq!(again.records, out.records);
}

#[test]
fn unsupported_archive_is_a_detect_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("other.zip");
    {
        let mut z = zip::ZipWriter::new(std::fs::File::create(&path).unwrap());
        z.start_file("notes.txt", zip::write::SimpleFileOptions::default())
            .unwrap();
        std::io::Write::write_all(&mut z, b"hello").unwrap();
        z.finish().unwrap();
    }
    let config = StudyConfig::from_toml(CONFIG).unwrap();
    let err = run_pipeline(
        &[path],
        &config,
        &Pseudonym::derive("s", "r"),
        &PipelineOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err.stage, PipelineStage::Detect);
    assert!(err.archive.ends_with("other.zip"));

    let (paths, _, _) = fixtures(dir.path(), 1);
    let opts = PipelineOptions {
        expected_schema: Some("instagram-fixture/2".into()),
    };
    let err = run_pipeline(&paths, &config, &Pseudonym::derive("s", "r"), &opts).unwrap_err();
    assert_eq!(err.stage, PipelineStage::Detect);
}

#[test]
fn username_pseudonym_collision_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ig.zip");
    let spec = InstagramSpec {
        username: "p-same".into(),
        ..Default::default()
    };
    generate_fixture(&FixtureSpec::Instagram(spec), 1, &path).unwrap();
    let config = StudyConfig::from_toml(CONFIG).unwrap();
    let err = run_pipeline(
        &[path],
        &config,
        &Pseudonym::new("p-same").unwrap(),
        &PipelineOptions::default(),
    )
    .unwrap_err();
    assert_eq!(err.stage, PipelineStage::Parse);
}

fn donate(
    dir: &Path,
    config: &StudyConfig,
    seed: u64,
    reject: Option<&str>,
) -> (PathBuf, ConsentEvidence) {
    let (paths, _, _) = fixtures(dir, seed);
    let owner = Pseudonym::derive(&config.study_id, &format!("respondent-{seed}"));
    let out = run_pipeline(&paths, config, &owner, &PipelineOptions::default()).unwrap();
    let mut s = ConsentSession::start(
        &config.study_id,
        out.records,
        &config.registry(),
        LocalArtifacts::new(dir),
    )
    .unwrap();
    for v in [AT_HOME, AFFECT_POSITIVE_SHARE] {
        s.preview(v, 0, 10).unwrap();
        let d = if Some(v) == reject {
            Decision::Rejected
        } else {
            Decision::Approved
        };
        s.record_decision(v, d).unwrap();
    }
    let pkg = s
        .finalize(Timestamp::from_epoch_ms(0))
        .unwrap()
        .unwrap()
        .clone();
    let out_path = dir.join(format!("package-{seed}.zip"));
    pkg.write_to(&out_path).unwrap();
    (out_path, ConsentEvidence::from_session(&s))
}

#[test]
fn ingest_three_packages_and_checklist() {
    let dir = tempfile::tempdir().unwrap();
    let config = StudyConfig::from_toml(CONFIG).unwrap();
    let mut evidence = Evidence::default();
    let mut packages = Vec::new();
    for seed in 1..=3 {
        let (p, c) = donate(dir.path(), &config, seed, None);
        packages.push(p);
        evidence.add(format!("consent-{seed}.json"), EvidenceFile::Consent(c));
    }
    let out = ingest(&packages, &config).unwrap();
    assert_eq!(out.dataset.owners().len(), 3);
    assert_eq!(out.report.pseudonyms, 3);
    assert_eq!(
        out.dataset.variables,
        vec![AFFECT_POSITIVE_SHARE.to_string(), AT_HOME.to_string()]
    );
    assert!(out.report.validation.out_of_window.is_empty());

    let (paths, _, _) = fixtures(dir.path(), 1);
    let owner = Pseudonym::derive(&config.study_id, "respondent-1");
    let run = run_pipeline(&paths, &config, &owner, &PipelineOptions::default()).unwrap();
    evidence.add("pipeline.json", EvidenceFile::Pipeline(run.report));
    evidence.add("ingest.json", EvidenceFile::Ingest(out.report));
    let report = report_checklist(&config, &evidence);
    for id in [
        "ddps.controllers_selected",
        "ddps.denseness",
        "extracted.all_formats",
        "extracted.validated_scripts",
        "transformed.method_selected",
        "transformed.known_accuracy",
        "transformed.represents_indicators",
        "analysis.linked_person_level",
        "analysis.respondent_ids",
        "analysis.variables_identified",
        "analysis.respondent_preview",
    ] {
        assert_eq!(
            report.item(id).unwrap().status,
            ItemStatus::Pass,
            "{id}: {}",
            report.item(id).unwrap().note
        );
    }
    // No funnel run was supplied.
    assert_eq!(
        report.item("sample.known_probability").unwrap().status,
        ItemStatus::Fail
    );
    assert_eq!(
        report.item("construct.defined").unwrap().status,
        ItemStatus::Manual
    );
}

#[test]
fn tampered_or_foreign_packages_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = StudyConfig::from_toml(CONFIG).unwrap();
    let (pkg, _) = donate(dir.path(), &config, 4, Some(AFFECT_POSITIVE_SHARE));
    let mut bytes = std::fs::read(&pkg).unwrap();
    let at = bytes.windows(7).position(|w| w == b"at_home").unwrap() + 40;
    bytes[at] ^= 0x20;
    let bad = dir.path().join("tampered.zip");
    std::fs::write(&bad, bytes).unwrap();
    match ingest(&[pkg.clone(), bad], &config) {
        Err(IngestError::Package(e)) => assert!(e.to_string().contains("tampered.zip"), "{e}"),
        other => panic!("expected tamper error, got {other:?}"),
    }

    let other = StudyConfig::from_toml(&CONFIG.replace("demo-study", "other-study")).unwrap();
    assert!(matches!(
        ingest(std::slice::from_ref(&pkg), &other),
        Err(IngestError::WrongStudy { .. })
    ));
    assert!(matches!(
        ingest(&[pkg.clone(), pkg], &config),
        Err(IngestError::DuplicatePseudonym { .. })
    ));

    let empty = ingest(&[], &config).unwrap();
    assert!(empty.dataset.rows.is_empty());
    assert_eq!(empty.report.notes.len(), 1);
}

#[test]
fn checklist_fails_on_missing_accuracy_and_sparse_series() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONFIG
        .replace("min_records = 1", "min_records = 5000")
        .replace(
            "face-affect = { accuracy = 0.80, evaluated_on = \"labelled fixture photos\" }\n",
            "",
        );
    let config = StudyConfig::from_toml(&text).unwrap();
    let (paths, _, _) = fixtures(dir.path(), 2);
    let owner = Pseudonym::derive(&config.study_id, "r");
    let run = run_pipeline(&paths, &config, &owner, &PipelineOptions::default()).unwrap();
    assert!(!run.report.denseness.as_ref().unwrap().passed());

    let mut evidence = Evidence::default();
    evidence.add("reports/pipeline.json", EvidenceFile::Pipeline(run.report));
    let report = report_checklist(&config, &evidence);

    let acc = report.item("transformed.known_accuracy").unwrap();
    assert_eq!(acc.status, ItemStatus::Fail);
    assert!(acc.note.contains("face-affect"), "{}", acc.note);
    let dense = report.item("ddps.denseness").unwrap();
    assert_eq!(dense.status, ItemStatus::Fail);
    assert_eq!(dense.evidence, vec!["reports/pipeline.json".to_string()]);
}
