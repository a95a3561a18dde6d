use std::collections::BTreeMap;

use ddp_core::archive::{detect_provider, DdpArchive};
use ddp_core::fixture::{
    generate_fixture, FixtureSpec, GoogleSpec, GroundTruth, InstagramSpec, TrapKind,
};
use ddp_core::parsers::{parse_google_location, parse_instagram, RecordFlag};
use ddp_core::{DetectedFormat, ProviderId, Pseudonym};

fn owner() -> Pseudonym {
    Pseudonym::new("p-0001").unwrap()
}

#[test]
fn instagram_fixture_parses_to_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ig.zip");
    let spec = InstagramSpec {
        unparseable_timestamps: 2,
        unindexed_photos: 2,
        ..Default::default()
    };
    let truth = generate_fixture(&FixtureSpec::Instagram(spec), 11, &path).unwrap();
    let reloaded = GroundTruth::load(&ddp_core::fixture::sidecar_path(&path)).unwrap();
    assert_eq!(reloaded, truth);

    let det = detect_provider(&path).unwrap();
    assert_eq!(det.provider, ProviderId::Instagram);
    assert_eq!(det.root, "instagram_export/");

    let archive = DdpArchive::open(&path).unwrap();
    let (records, report) = parse_instagram(&archive, &owner()).unwrap();
    let by_path: BTreeMap<_, _> = records
        .iter()
        .map(|r| (r.file.relative_path.clone(), r))
        .collect();

    for m in &truth.media {
        let r = by_path
            .get(&m.path)
            .unwrap_or_else(|| panic!("{} not parsed", m.path));
        assert_eq!(r.file.format, m.format, "{}", m.path);
        assert_eq!(r.taken_at.map(|t| t.epoch_ms), m.taken_at_ms, "{}", m.path);
        assert_eq!(
            r.flags.contains(&RecordFlag::Unindexed),
            !m.indexed,
            "{}",
            m.path
        );
    }
    let renamed = truth.traps_of(TrapKind::RenamedExtension).next().unwrap();
    let r = by_path[renamed.path.as_ref().unwrap()];
    assert!(r.file.relative_path.ends_with(".jpg"));
    assert_eq!(r.file.format, DetectedFormat::Png);

    assert_eq!(truth.traps_of(TrapKind::UnparseableTimestamp).count(), 2);
    assert_eq!(
        records
            .iter()
            .filter(|r| r.flags.contains(&RecordFlag::TimestampUnparsed))
            .count(),
        2
    );
    // Text posts are parsed too; nothing is dropped.
    assert_eq!(report.dropped, 0);
    assert_eq!(
        records.len(),
        truth.media.len() + InstagramSpec::default().text_posts
    );
}

#[test]
fn google_fixture_parses_to_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("takeout.zip");
    let spec = GoogleSpec {
        out_of_range: 3,
        duplicates: 4,
        gap: Some([30, 6]),
        ..Default::default()
    };
    let truth = generate_fixture(&FixtureSpec::GoogleTakeout(spec), 5, &path).unwrap();
    let archive = DdpArchive::open(&path).unwrap();
    assert_eq!(archive.root, "Takeout/Location History/");
    let (pings, report) = parse_google_location(&archive, &owner()).unwrap();

    let valid_unique: Vec<_> = truth
        .pings
        .iter()
        .filter(|p| p.valid && p.duplicate_of.is_none())
        .collect();
    assert_eq!(pings.len(), valid_unique.len());
    assert_eq!(report.dropped, 3);
    assert_eq!(report.deduplicated, 4);
    assert_eq!(
        report.emitted + report.dropped + report.deduplicated,
        truth.pings.len()
    );

    // Kept duplicates are the originals (better accuracy).
    let mut expected: Vec<_> = valid_unique
        .iter()
        .map(|p| (p.at_ms, p.lat_e7, p.accuracy_m))
        .collect();
    expected.sort();
    let got: Vec<_> = pings
        .iter()
        .map(|p| (p.at.epoch_ms, p.lat_e7 as i64, p.accuracy_m.unwrap()))
        .collect();
    assert_eq!(got, expected);

    let gap = truth.traps_of(TrapKind::Gap).count();
    assert_eq!(gap, 1);
}

#[test]
fn bare_array_and_iso_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bare.zip");
    let spec = GoogleSpec {
        wrapped: false,
        iso_timestamps: true,
        days: 2,
        ..Default::default()
    };
    let truth = generate_fixture(&FixtureSpec::GoogleTakeout(spec), 9, &path).unwrap();
    let archive = DdpArchive::open(&path).unwrap();
    let (pings, _) = parse_google_location(&archive, &owner()).unwrap();
    let valid = truth
        .pings
        .iter()
        .filter(|p| p.valid && p.duplicate_of.is_none())
        .count();
    assert_eq!(pings.len(), valid);
}
