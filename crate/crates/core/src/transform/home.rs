use serde::{Deserialize, Serialize};

use super::{
    DerivedRecord, Provenance, TransformError, Value, VariableRegistry, AT_HOME, HOME_GEOFENCE,
    TRANSFORMER_VERSION,
};
use crate::parsers::LocationRecord;
use crate::types::ProviderId;

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const HOUR_MS: i64 = 3_600_000;
const DAY_MS: i64 = 24 * HOUR_MS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomeConfig {
    /// First night hour (inclusive), study-zone clock.
    pub night_start_hour: u32,
    /// Last night hour (exclusive). A window with start > end wraps midnight.
    pub night_end_hour: u32,
    pub cluster_radius_m: f64,
    pub min_support: usize,
    /// Study-zone offset from UTC in minutes.
    pub zone_offset_minutes: i32,
}

impl Default for HomeConfig {
    fn default() -> Self {
        HomeConfig {
            night_start_hour: 0,
            night_end_hour: 6,
            cluster_radius_m: 100.0,
            min_support: 10,
            zone_offset_minutes: 0,
        }
    }
}

impl HomeConfig {
    fn validate(&self) -> Result<(), TransformError> {
        if self.night_start_hour > 23 || self.night_end_hour > 24 {
            return Err(TransformError::InvalidConfig(format!(
                "night window {}..{} is not a valid hour range",
                self.night_start_hour, self.night_end_hour
            )));
        }
        if !(self.cluster_radius_m.is_finite() && self.cluster_radius_m > 0.0) {
            return Err(TransformError::InvalidConfig(format!(
                "cluster radius must be positive, got {}",
                self.cluster_radius_m
            )));
        }
        Ok(())
    }

    pub fn is_night(&self, epoch_ms: i64) -> bool {
        let local = epoch_ms + self.zone_offset_minutes as i64 * 60_000;
        let hour = (local.rem_euclid(DAY_MS) / HOUR_MS) as u32;
        let (s, e) = (self.night_start_hour, self.night_end_hour);
        match s.cmp(&e) {
            std::cmp::Ordering::Less => hour >= s && hour < e,
            std::cmp::Ordering::Greater => hour >= s || hour < e,
            std::cmp::Ordering::Equal => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeLocation {
    pub lat_e7: i32,
    pub lon_e7: i32,
    /// Number of night pings in the chosen cluster.
    pub support: usize,
    pub radius_m: f64,
    pub low_confidence: bool,
}

/// Great-circle distance in metres between two points given in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

struct Cluster {
    lat_sum: i64,
    lon_sum: i64,
    count: usize,
}

impl Cluster {
    fn centroid_e7(&self) -> (i32, i32) {
        let n = self.count as f64;
        (
            (self.lat_sum as f64 / n).round() as i32,
            (self.lon_sum as f64 / n).round() as i32,
        )
    }
}

/// Infers the home location as the centroid of the largest night-time cluster.
///
/// Night pings are visited in time order; each joins the first existing
/// cluster whose running centroid lies within `cluster_radius_m`, or opens a
/// new cluster. Ties in cluster size go to the cluster opened first.
pub fn infer_home(
    pings: &[LocationRecord],
    config: &HomeConfig,
) -> Result<HomeLocation, TransformError> {
    config.validate()?;
    if pings.is_empty() {
        return Err(TransformError::NoPings);
    }
    let mut night: Vec<&LocationRecord> = pings
        .iter()
        .filter(|p| config.is_night(p.at.epoch_ms))
        .collect();
    if night.is_empty() {
        return Err(TransformError::NoHome);
    }
    night.sort_by_key(|p| p.at.epoch_ms);

    let mut clusters: Vec<Cluster> = Vec::new();
    for p in night {
        let joined = clusters.iter_mut().find(|c| {
            let (lat, lon) = c.centroid_e7();
            haversine_m(lat as f64 / 1e7, lon as f64 / 1e7, p.lat_deg(), p.lon_deg())
                <= config.cluster_radius_m
        });
        match joined {
            Some(c) => {
                c.lat_sum += p.lat_e7 as i64;
                c.lon_sum += p.lon_e7 as i64;
                c.count += 1;
            }
            None => clusters.push(Cluster {
                lat_sum: p.lat_e7 as i64,
                lon_sum: p.lon_e7 as i64,
                count: 1,
            }),
        }
    }

    let mut best = &clusters[0];
    for c in &clusters[1..] {
        if c.count > best.count {
            best = c;
        }
    }
    let (lat_e7, lon_e7) = best.centroid_e7();
    Ok(HomeLocation {
        lat_e7,
        lon_e7,
        support: best.count,
        radius_m: config.cluster_radius_m,
        low_confidence: best.count < config.min_support,
    })
}

/// Labels a ping `at_home = true` when it lies within the home radius
/// (boundary inclusive).
///
/// Confidence is `1 - min(1, accuracy / radius)` floored at 0.5; pings without
/// an accuracy get the floor.
pub fn classify_at_home(
    ping: &LocationRecord,
    home: &HomeLocation,
    registry: &VariableRegistry,
) -> Result<DerivedRecord, TransformError> {
    let d = haversine_m(
        ping.lat_deg(),
        ping.lon_deg(),
        home.lat_e7 as f64 / 1e7,
        home.lon_e7 as f64 / 1e7,
    );
    let inside = d <= home.radius_m;
    let confidence = match ping.accuracy_m {
        Some(acc) => (1.0 - (acc as f64 / home.radius_m).min(1.0)).max(0.5),
        None => 0.5,
    };
    registry.record(
        ping.owner.clone(),
        ping.at,
        AT_HOME,
        Value::Label(inside.to_string()),
        Provenance {
            provider: ProviderId::GoogleTakeout,
            transformer_id: HOME_GEOFENCE.to_string(),
            transformer_version: TRANSFORMER_VERSION.to_string(),
            confidence,
        },
    )
}
