//! Deterministic synthetic download packages.
//!
//! [`build_fixture`] turns a [`FixtureSpec`] and a seed into zip bytes that
//! follow the fixture schemas, plus a [`GroundTruth`] describing everything
//! planted in them: every media file with its real format, which entries the
//! index omits, which pings are invalid or duplicated. Tests use the ground
//! truth as their oracle; it is written next to the archive, never inside.
//!
//! Members are stored uncompressed with fixed timestamps, so the same spec and
//! seed give the same bytes on every platform.

use std::collections::BTreeSet;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, FixedOffset, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipWriter};

use crate::archive::{
    GOOGLE_LOCATION_FILE, GOOGLE_TAKEOUT_SCHEMA_V1, INSTAGRAM_INDEX, INSTAGRAM_MEDIA_DIR,
    INSTAGRAM_SCHEMA_V1,
};
use crate::parsers::{MediaType, MAX_LAT_E7};
use crate::timestamp::{parse_timestamp, render_iso};
use crate::transform::{haversine_m, EmotionLabel};
use crate::types::{DetectedFormat, ProviderId};

const HOUR_MS: i64 = 3_600_000;
const DAY_MS: i64 = 24 * HOUR_MS;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    Spec(String),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum FixtureSpec {
    Instagram(InstagramSpec),
    GoogleTakeout(GoogleSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstagramSpec {
    pub username: String,
    /// Directory prefix inside the zip, empty or ending in `/`.
    pub root: String,
    /// First day covered, ISO 8601.
    pub start: String,
    pub days: u32,
    pub jpegs: usize,
    /// PNG photos; the first `renamed_pngs` of them get a `.jpg` name.
    pub pngs: usize,
    pub renamed_pngs: usize,
    pub videos: usize,
    pub text_posts: usize,
    /// Extra JPEG photos present in the archive but missing from the index.
    pub unindexed_photos: usize,
    /// Indexed entries whose `taken_at` cannot be parsed.
    pub unparseable_timestamps: usize,
    /// Sort media into `media/YYYY/MM/` subdirectories.
    pub nested: bool,
    /// Relative weights of file-name tokens `happy`, `sad`, `face`, none.
    pub emotion_weights: [u32; 4],
}

impl Default for InstagramSpec {
    fn default() -> Self {
        InstagramSpec {
            username: "fixture_user".into(),
            root: "instagram_export/".into(),
            start: "2020-03-01T00:00:00Z".into(),
            days: 14,
            jpegs: 20,
            pngs: 4,
            renamed_pngs: 1,
            videos: 2,
            text_posts: 2,
            unindexed_photos: 1,
            unparseable_timestamps: 0,
            nested: true,
            emotion_weights: [4, 2, 2, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoogleSpec {
    pub username: String,
    pub root: String,
    pub start: String,
    pub days: u32,
    pub interval_minutes: u32,
    pub home_lat_e7: i32,
    pub home_lon_e7: i32,
    pub away_lat_e7: i32,
    pub away_lon_e7: i32,
    /// Daytime hours (UTC, `[from, to)`) in which the person may be away.
    pub day_hours: [u32; 2],
    /// Chance of being away at a daytime ping.
    pub away_probability: f64,
    pub out_of_range: usize,
    pub duplicates: usize,
    /// Write ISO `timestamp` fields instead of string `timestampMs`.
    pub iso_timestamps: bool,
    /// Wrap the ping array in `{"locations": [...]}`.
    pub wrapped: bool,
    /// Pings carrying semantic-location candidates.
    pub semantic_pings: usize,
    /// Leave out pings for `[start_hour, start_hour + hours)` after `start`.
    pub gap: Option<[u32; 2]>,
}

impl Default for GoogleSpec {
    fn default() -> Self {
        GoogleSpec {
            username: "fixture_user".into(),
            root: "Takeout/Location History/".into(),
            start: "2020-03-01T00:00:00Z".into(),
            days: 14,
            interval_minutes: 30,
            home_lat_e7: 520_907_000,
            home_lon_e7: 51_214_000,
            away_lat_e7: 520_840_000,
            away_lon_e7: 51_700_000,
            day_hours: [8, 18],
            away_probability: 0.8,
            out_of_range: 1,
            duplicates: 2,
            iso_timestamps: false,
            wrapped: true,
            semantic_pings: 5,
            gap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    RenamedExtension,
    Unindexed,
    NestedDirectory,
    UnparseableTimestamp,
    OutOfRangeCoordinate,
    DuplicateTimestamp,
    Gap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTrap {
    pub kind: TrapKind,
    /// Member path for media traps.
    pub path: Option<String>,
    /// Position in the ping file for location traps.
    pub index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMedia {
    /// Full member path inside the zip.
    pub path: String,
    pub format: DetectedFormat,
    pub kind: MediaType,
    pub indexed: bool,
    /// Time the parser should report: index time for indexed entries, member
    /// mtime for unindexed ones, `None` where the index time is unparseable.
    pub taken_at_ms: Option<i64>,
    /// Face the mock classifier will report, from the file-name token.
    pub emotion: Option<EmotionLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPing {
    pub at_ms: i64,
    pub lat_e7: i64,
    pub lon_e7: i64,
    pub accuracy_m: u32,
    pub at_home: bool,
    /// False for planted out-of-range coordinates.
    pub valid: bool,
    /// Index of the ping this one duplicates (same instant, worse accuracy).
    pub duplicate_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub provider: ProviderId,
    pub schema_version: String,
    pub seed: u64,
    pub username: String,
    pub root: String,
    pub archive_sha256: String,
    pub media: Vec<PlantedMedia>,
    pub pings: Vec<PlantedPing>,
    pub home_e7: Option<(i32, i32)>,
    pub traps: Vec<PlantedTrap>,
}

impl FixtureSpec {
    pub fn from_toml(text: &str) -> Result<FixtureSpec, FixtureError> {
        toml::from_str(text).map_err(|e| FixtureError::Spec(e.to_string()))
    }
}

impl GroundTruth {
    pub fn traps_of(&self, kind: TrapKind) -> impl Iterator<Item = &PlantedTrap> {
        self.traps.iter().filter(move |t| t.kind == kind)
    }

    pub fn load(path: &Path) -> Result<GroundTruth, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| FixtureError::Spec(format!("{}: {e}", path.display())))
    }
}

fn io_err(path: &Path, e: impl ToString) -> FixtureError {
    FixtureError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// `archive.zip` → `archive.zip.truth.json`.
pub fn sidecar_path(archive: &Path) -> PathBuf {
    let mut name = archive
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".truth.json");
    archive.with_file_name(name)
}

/// Writes the archive and its ground-truth sidecar.
pub fn generate_fixture(
    spec: &FixtureSpec,
    seed: u64,
    out: &Path,
) -> Result<GroundTruth, FixtureError> {
    let (bytes, truth) = build_fixture(spec, seed)?;
    std::fs::write(out, &bytes).map_err(|e| io_err(out, e))?;
    let side = sidecar_path(out);
    let json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    std::fs::write(&side, json + "\n").map_err(|e| io_err(&side, e))?;
    Ok(truth)
}

pub fn build_fixture(
    spec: &FixtureSpec,
    seed: u64,
) -> Result<(Vec<u8>, GroundTruth), FixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bytes, mut truth) = match spec {
        FixtureSpec::Instagram(s) => build_instagram(s, seed, &mut rng)?,
        FixtureSpec::GoogleTakeout(s) => build_google(s, seed, &mut rng)?,
    };
    truth.archive_sha256 = hex::encode(Sha256::digest(&bytes));
    Ok((bytes, truth))
}

fn check_root(root: &str) -> Result<(), FixtureError> {
    if !(root.is_empty() || root.ends_with('/')) || root.starts_with('/') || root.contains("..") {
        return Err(FixtureError::Spec(format!(
            "root `{root}` must be a relative directory ending in `/`"
        )));
    }
    Ok(())
}

fn start_ms(start: &str) -> Result<i64, FixtureError> {
    parse_timestamp(start, None)
        .map(|t| t.epoch_ms)
        .map_err(|e| FixtureError::Spec(format!("start: {e}")))
}

struct Zip {
    w: ZipWriter<Cursor<Vec<u8>>>,
    dirs: BTreeSet<String>,
}

impl Zip {
    fn new() -> Self {
        Zip {
            w: ZipWriter::new(Cursor::new(Vec::new())),
            dirs: BTreeSet::new(),
        }
    }

    fn opts(mtime_ms: Option<i64>) -> SimpleFileOptions {
        let mtime = mtime_ms.and_then(zip_time).unwrap_or_default();
        SimpleFileOptions::default()
            .compression_method(CompressionMethod::Stored)
            .last_modified_time(mtime)
            .unix_permissions(0o644)
    }

    fn ensure_dirs(&mut self, path: &str) {
        let mut acc = String::new();
        let parts: Vec<&str> = path.split('/').collect();
        for part in &parts[..parts.len() - 1] {
            acc.push_str(part);
            acc.push('/');
            if self.dirs.insert(acc.clone()) {
                self.w
                    .add_directory(acc.as_str(), Zip::opts(None).unix_permissions(0o755))
                    .expect("in-memory zip");
            }
        }
    }

    fn file(&mut self, path: &str, bytes: &[u8], mtime_ms: Option<i64>) {
        self.ensure_dirs(path);
        self.w
            .start_file(path, Zip::opts(mtime_ms))
            .expect("in-memory zip");
        self.w.write_all(bytes).expect("in-memory zip");
    }

    fn finish(self) -> Vec<u8> {
        self.w.finish().expect("in-memory zip").into_inner()
    }
}

/// Zip timestamps hold local-less calendar time with 2 s resolution.
fn zip_time(ms: i64) -> Option<zip::DateTime> {
    let dt = DateTime::<Utc>::from_timestamp_millis(ms)?;
    zip::DateTime::from_date_and_time(
        u16::try_from(dt.year()).ok()?,
        dt.month() as u8,
        dt.day() as u8,
        dt.hour() as u8,
        dt.minute() as u8,
        dt.second() as u8,
    )
    .ok()
}

fn zip_time_floor(ms: i64) -> i64 {
    let s = ms.div_euclid(1000);
    (s - s.rem_euclid(2)) * 1000
}

// ---------------------------------------------------------------- media bytes

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &d in data {
        a = (a + d as u32) % 65_521;
        b = (b + a) % 65_521;
    }
    (b << 16) | a
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let mut h = crc32fast::Hasher::new();
    h.update(kind);
    h.update(data);
    out.extend_from_slice(&h.finalize().to_be_bytes());
}

/// Solid-colour RGB PNG with a stored (uncompressed) zlib stream.
pub fn png_bytes(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    let mut raw = Vec::with_capacity(((width * 3 + 1) * height) as usize);
    for _ in 0..height {
        // Filter type 0, then the pixels.
        raw.extend(std::iter::once(0).chain(rgb.iter().copied().cycle().take(3 * width as usize)));
    }
    let mut z = vec![0x78, 0x01];
    let mut chunks = raw.chunks(65_535).peekable();
    while let Some(c) = chunks.next() {
        z.push(u8::from(chunks.peek().is_none()));
        let len = c.len() as u16;
        z.extend_from_slice(&len.to_le_bytes());
        z.extend_from_slice(&(!len).to_le_bytes());
        z.extend_from_slice(c);
    }
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&width.to_be_bytes());
    ihdr.extend_from_slice(&height.to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
    png_chunk(&mut out, b"IHDR", &ihdr);
    png_chunk(&mut out, b"IDAT", &z);
    png_chunk(&mut out, b"IEND", &[]);
    out
}

/// JPEG-shaped bytes: JFIF header, baseline SOF0 with the given size and a
/// short pseudo-random scan.
pub fn jpeg_bytes(width: u16, height: u16, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = vec![0xFF, 0xD8];
    out.extend_from_slice(&[0xFF, 0xE0, 0x00, 0x10]);
    out.extend_from_slice(b"JFIF\0");
    out.extend_from_slice(&[1, 1, 0, 0, 1, 0, 1, 0, 0]);
    out.extend_from_slice(&[0xFF, 0xC0, 0x00, 0x11, 8]);
    out.extend_from_slice(&height.to_be_bytes());
    out.extend_from_slice(&width.to_be_bytes());
    out.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    out.extend_from_slice(&[
        0xFF, 0xDA, 0x00, 0x0C, 3, 1, 0, 2, 0x11, 3, 0x11, 0, 0x3F, 0,
    ]);
    for _ in 0..rng.gen_range(64..256) {
        out.push(rng.gen_range(0..0xFF));
    }
    out.extend_from_slice(&[0xFF, 0xD9]);
    out
}

/// ISO base-media bytes: `ftyp` box and a small `mdat`.
pub fn mp4_bytes(rng: &mut impl Rng) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&24u32.to_be_bytes());
    out.extend_from_slice(b"ftypisom");
    out.extend_from_slice(&0x200u32.to_be_bytes());
    out.extend_from_slice(b"isommp41");
    let payload: Vec<u8> = (0..rng.gen_range(64..256)).map(|_| rng.gen()).collect();
    out.extend_from_slice(&(payload.len() as u32 + 8).to_be_bytes());
    out.extend_from_slice(b"mdat");
    out.extend_from_slice(&payload);
    out
}

// ---------------------------------------------------------------- instagram

const TOKENS: [(&str, Option<EmotionLabel>); 4] = [
    ("happy", Some(EmotionLabel::Positive)),
    ("sad", Some(EmotionLabel::Negative)),
    ("face", Some(EmotionLabel::Neutral)),
    ("scene", None),
];

fn pick_token(weights: &[u32; 4], rng: &mut impl Rng) -> (&'static str, Option<EmotionLabel>) {
    let total: u32 = weights.iter().sum();
    let mut x = rng.gen_range(0..total);
    for (w, t) in weights.iter().zip(TOKENS) {
        if x < *w {
            return t;
        }
        x -= w;
    }
    TOKENS[3]
}

/// Renders an instant in one of the layouts found in real exports.
fn render_taken_at(ms: i64, rng: &mut impl Rng) -> serde_json::Value {
    let dt = DateTime::<Utc>::from_timestamp_millis(ms).expect("fixture times are in range");
    match rng.gen_range(0..5) {
        0 => serde_json::Value::String(render_iso(ms)),
        1 => {
            let off = FixedOffset::east_opt(2 * 3600).expect("valid offset");
            serde_json::Value::String(
                dt.with_timezone(&off)
                    .format("%Y-%m-%dT%H:%M:%S%.3f%:z")
                    .to_string(),
            )
        }
        2 => serde_json::Value::String(dt.format("%Y-%m-%dT%H:%M:%S%.3f").to_string()),
        3 => serde_json::Value::from(ms.div_euclid(1000)),
        _ => serde_json::Value::String(ms.to_string()),
    }
}

fn build_instagram(
    spec: &InstagramSpec,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u8>, GroundTruth), FixtureError> {
    check_root(&spec.root)?;
    if spec.renamed_pngs > spec.pngs {
        return Err(FixtureError::Spec("renamed_pngs exceeds pngs".into()));
    }
    if spec.days == 0 {
        return Err(FixtureError::Spec("days must be positive".into()));
    }
    if spec.emotion_weights.iter().sum::<u32>() == 0 {
        return Err(FixtureError::Spec(
            "emotion_weights must not all be zero".into(),
        ));
    }
    let indexed_media = spec.jpegs + spec.pngs + spec.videos;
    if spec.unparseable_timestamps > indexed_media {
        return Err(FixtureError::Spec(
            "more unparseable timestamps than indexed media".into(),
        ));
    }
    let start = start_ms(&spec.start)?;
    // Whole seconds keep ms and s renderings of the same instant equal.
    let draw_time =
        |rng: &mut ChaCha8Rng| start + rng.gen_range(0..spec.days as i64 * 86_400) * 1000;

    let mut zip = Zip::new();
    let mut truth = GroundTruth {
        provider: ProviderId::Instagram,
        schema_version: INSTAGRAM_SCHEMA_V1.into(),
        seed,
        username: spec.username.clone(),
        root: spec.root.clone(),
        archive_sha256: String::new(),
        media: Vec::new(),
        pings: Vec::new(),
        home_e7: None,
        traps: Vec::new(),
    };
    zip.file(
        &format!("{}profile.json", spec.root),
        serde_json::to_string_pretty(&serde_json::json!({ "username": spec.username }))
            .expect("json")
            .as_bytes(),
        None,
    );

    let media_dir = |ms: i64| {
        if spec.nested {
            let dt = DateTime::<Utc>::from_timestamp_millis(ms).expect("in range");
            format!("{INSTAGRAM_MEDIA_DIR}{:04}/{:02}/", dt.year(), dt.month())
        } else {
            INSTAGRAM_MEDIA_DIR.to_string()
        }
    };

    let mut index = Vec::new();
    let mut n = 0usize;
    let mut plan: Vec<(DetectedFormat, bool)> = Vec::new();
    plan.extend((0..spec.jpegs).map(|_| (DetectedFormat::Jpeg, false)));
    plan.extend((0..spec.pngs).map(|i| (DetectedFormat::Png, i < spec.renamed_pngs)));
    plan.extend((0..spec.videos).map(|_| (DetectedFormat::Mp4, false)));
    for (format, renamed) in plan {
        n += 1;
        let ms = draw_time(rng);
        let (token, emotion) = pick_token(&spec.emotion_weights, rng);
        let (ext, bytes, kind) = match format {
            DetectedFormat::Jpeg => (
                "jpg",
                jpeg_bytes(rng.gen_range(32..640), rng.gen_range(32..640), rng),
                MediaType::Photo,
            ),
            DetectedFormat::Png => (
                if renamed { "jpg" } else { "png" },
                png_bytes(rng.gen_range(8..48), rng.gen_range(8..48), rng.gen()),
                MediaType::Photo,
            ),
            _ => ("mp4", mp4_bytes(rng), MediaType::Video),
        };
        let rel = format!("{}IMG_{n:04}_{token}.{ext}", media_dir(ms));
        let full = format!("{}{rel}", spec.root);
        let unparseable = n <= spec.unparseable_timestamps;
        let taken_at = if unparseable {
            serde_json::Value::String("sometime last spring".into())
        } else {
            render_taken_at(ms, rng)
        };
        index.push(serde_json::json!({
            "path": rel,
            "taken_at": taken_at,
            "caption": format!("post {n}"),
            "kind": kind,
        }));
        zip.file(&full, &bytes, Some(ms));
        if renamed {
            truth.traps.push(PlantedTrap {
                kind: TrapKind::RenamedExtension,
                path: Some(full.clone()),
                index: None,
            });
        }
        if unparseable {
            truth.traps.push(PlantedTrap {
                kind: TrapKind::UnparseableTimestamp,
                path: Some(full.clone()),
                index: None,
            });
        }
        truth.media.push(PlantedMedia {
            path: full,
            format,
            kind,
            indexed: true,
            taken_at_ms: (!unparseable).then_some(ms),
            emotion,
        });
    }

    for k in 0..spec.text_posts {
        let ms = draw_time(rng);
        let rel = format!("posts/post_{:04}.txt", k + 1);
        zip.file(
            &format!("{}{rel}", spec.root),
            format!("text post number {}\n", k + 1).as_bytes(),
            Some(ms),
        );
        index.push(serde_json::json!({
            "path": rel,
            "taken_at": render_iso(ms),
            "kind": MediaType::TextPost,
        }));
    }

    for k in 0..spec.unindexed_photos {
        let ms = zip_time_floor(draw_time(rng));
        let (token, emotion) = pick_token(&spec.emotion_weights, rng);
        let full = format!(
            "{}{INSTAGRAM_MEDIA_DIR}archived/{}/IMG_U{:03}_{token}.jpg",
            spec.root,
            DateTime::<Utc>::from_timestamp_millis(ms)
                .expect("in range")
                .year(),
            k + 1
        );
        zip.file(
            &full,
            &jpeg_bytes(rng.gen_range(32..640), rng.gen_range(32..640), rng),
            Some(ms),
        );
        truth.traps.push(PlantedTrap {
            kind: TrapKind::Unindexed,
            path: Some(full.clone()),
            index: None,
        });
        truth.media.push(PlantedMedia {
            path: full,
            format: DetectedFormat::Jpeg,
            kind: MediaType::Photo,
            indexed: false,
            taken_at_ms: Some(ms),
            emotion,
        });
    }

    if spec.nested || spec.unindexed_photos > 0 {
        truth.traps.push(PlantedTrap {
            kind: TrapKind::NestedDirectory,
            path: Some(format!("{}{INSTAGRAM_MEDIA_DIR}", spec.root)),
            index: None,
        });
    }
    zip.ensure_dirs(&format!("{}{INSTAGRAM_MEDIA_DIR}", spec.root));
    zip.file(
        &format!("{}{INSTAGRAM_INDEX}", spec.root),
        serde_json::to_string_pretty(&index)
            .expect("json")
            .as_bytes(),
        None,
    );
    Ok((zip.finish(), truth))
}

// ---------------------------------------------------------------- google

fn jitter(rng: &mut impl Rng, lat: i32, lon: i32, lat_spread: i32, lon_spread: i32) -> (i64, i64) {
    (
        lat as i64 + rng.gen_range(-lat_spread..=lat_spread) as i64,
        lon as i64 + rng.gen_range(-lon_spread..=lon_spread) as i64,
    )
}

fn build_google(
    spec: &GoogleSpec,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u8>, GroundTruth), FixtureError> {
    check_root(&spec.root)?;
    if spec.days == 0 || spec.interval_minutes == 0 {
        return Err(FixtureError::Spec(
            "days and interval_minutes must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.away_probability) {
        return Err(FixtureError::Spec("away_probability outside [0, 1]".into()));
    }
    if spec.day_hours[0] > spec.day_hours[1] || spec.day_hours[1] > 24 {
        return Err(FixtureError::Spec(
            "day_hours must satisfy from <= to <= 24".into(),
        ));
    }
    let start = start_ms(&spec.start)?;
    let home_away_m = haversine_m(
        spec.home_lat_e7 as f64 / 1e7,
        spec.home_lon_e7 as f64 / 1e7,
        spec.away_lat_e7 as f64 / 1e7,
        spec.away_lon_e7 as f64 / 1e7,
    );
    if home_away_m < 1000.0 {
        return Err(FixtureError::Spec(
            "away location must be at least 1 km from home".into(),
        ));
    }
    let step = spec.interval_minutes as i64 * 60_000;
    let end = start + spec.days as i64 * DAY_MS;
    let gap = spec.gap.map(|[h, len]| {
        (
            start + h as i64 * HOUR_MS,
            start + (h + len) as i64 * HOUR_MS,
        )
    });

    let mut pings: Vec<PlantedPing> = Vec::new();
    let mut t = start;
    while t < end {
        if gap.is_some_and(|(a, b)| t >= a && t < b) {
            t += step;
            continue;
        }
        let hour = (t.rem_euclid(DAY_MS) / HOUR_MS) as u32;
        let daytime = hour >= spec.day_hours[0] && hour < spec.day_hours[1];
        let at_home = !(daytime && rng.gen_bool(spec.away_probability));
        // About +-11 m north-south and +-10 m east-west at Dutch latitudes.
        let (lat, lon) = if at_home {
            jitter(rng, spec.home_lat_e7, spec.home_lon_e7, 1000, 1500)
        } else {
            jitter(rng, spec.away_lat_e7, spec.away_lon_e7, 1000, 1500)
        };
        // Second-resolution timestamps with a little scatter around the cadence.
        let at_ms = t + rng.gen_range(0..(step / 1000).min(60)) * 1000;
        pings.push(PlantedPing {
            at_ms,
            lat_e7: lat,
            lon_e7: lon,
            accuracy_m: rng.gen_range(5..50),
            at_home,
            valid: true,
            duplicate_of: None,
        });
        t += step;
    }
    if pings.len() < spec.out_of_range + spec.duplicates + spec.semantic_pings {
        return Err(FixtureError::Spec(
            "too few pings for the requested plants".into(),
        ));
    }

    let mut traps = Vec::new();
    let mut chosen = BTreeSet::new();
    let pick = |rng: &mut ChaCha8Rng, chosen: &mut BTreeSet<usize>| loop {
        let i = rng.gen_range(0..pings.len());
        if chosen.insert(i) {
            return i;
        }
    };
    let mut bad = Vec::new();
    for _ in 0..spec.out_of_range {
        bad.push(pick(rng, &mut chosen));
    }
    let mut dups = Vec::new();
    for _ in 0..spec.duplicates {
        dups.push(pick(rng, &mut chosen));
    }
    let mut semantic = BTreeSet::new();
    for _ in 0..spec.semantic_pings {
        semantic.insert(pick(rng, &mut chosen));
    }
    for &i in &bad {
        pings[i].lat_e7 = MAX_LAT_E7 + rng.gen_range(1..50_000_000);
        pings[i].valid = false;
    }
    // Duplicates follow their original in file order so that the file is not
    // sorted by time either.
    let mut file: Vec<PlantedPing> = Vec::with_capacity(pings.len() + dups.len());
    let dup_set: BTreeSet<usize> = dups.iter().copied().collect();
    for (i, p) in pings.iter().enumerate() {
        let original = file.len();
        file.push(p.clone());
        if dup_set.contains(&i) {
            let mut d = p.clone();
            d.accuracy_m = p.accuracy_m + 100;
            d.lat_e7 += rng.gen_range(-500..=500);
            d.duplicate_of = Some(original);
            file.push(d);
        }
    }
    let mut raw = Vec::with_capacity(file.len());
    for (i, p) in file.iter().enumerate() {
        if !p.valid {
            traps.push(PlantedTrap {
                kind: TrapKind::OutOfRangeCoordinate,
                path: None,
                index: Some(i),
            });
        }
        if p.duplicate_of.is_some() {
            traps.push(PlantedTrap {
                kind: TrapKind::DuplicateTimestamp,
                path: None,
                index: Some(i),
            });
        }
        let mut obj = serde_json::Map::new();
        if spec.iso_timestamps {
            obj.insert("timestamp".into(), render_iso(p.at_ms).into());
        } else {
            obj.insert("timestampMs".into(), p.at_ms.to_string().into());
        }
        obj.insert("latitudeE7".into(), p.lat_e7.into());
        obj.insert("longitudeE7".into(), p.lon_e7.into());
        obj.insert("accuracy".into(), p.accuracy_m.into());
        let source_index = pings.iter().position(|q| q.at_ms == p.at_ms);
        if p.duplicate_of.is_none() && source_index.is_some_and(|s| semantic.contains(&s)) {
            let home_p = if p.at_home { 0.8 } else { 0.3 };
            obj.insert(
                "semanticCandidates".into(),
                serde_json::json!([
                    { "placeId": "home", "probability": home_p },
                    { "placeId": "work", "probability": 1.0 - home_p },
                ]),
            );
        }
        raw.push(serde_json::Value::Object(obj));
    }
    if let Some((a, b)) = gap {
        traps.push(PlantedTrap {
            kind: TrapKind::Gap,
            path: Some(format!("{}..{}", render_iso(a), render_iso(b))),
            index: None,
        });
    }

    let body = if spec.wrapped {
        serde_json::json!({ "locations": raw })
    } else {
        serde_json::Value::Array(raw)
    };
    let mut zip = Zip::new();
    zip.file(
        &format!("{}{GOOGLE_LOCATION_FILE}", spec.root),
        serde_json::to_string_pretty(&body)
            .expect("json")
            .as_bytes(),
        None,
    );
    zip.file(
        "Takeout/archive_browser.html",
        format!("<html><body>Takeout for {}</body></html>\n", spec.username).as_bytes(),
        None,
    );
    let truth = GroundTruth {
        provider: ProviderId::GoogleTakeout,
        schema_version: GOOGLE_TAKEOUT_SCHEMA_V1.into(),
        seed,
        username: spec.username.clone(),
        root: spec.root.clone(),
        archive_sha256: String::new(),
        media: Vec::new(),
        pings: file,
        home_e7: Some((spec.home_lat_e7, spec.home_lon_e7)),
        traps,
    };
    Ok((zip.finish(), truth))
}
