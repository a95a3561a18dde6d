//! Representation funnel on a synthetic population.
//!
//! Units carry a group label, a covariate `x ~ N(0, 1)` and an outcome
//! `y` (for the example study: a person's mean affect difference between
//! home and away). Each replication walks the population through coverage,
//! sampling, response (including platform use), compliance and consent, and
//! records the design-weighted mean of `y` after every step.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::{poststrat_weights, weighted_estimate, Estimate};
use super::FrameError;
use crate::stats::compensated_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelConfig {
    pub population_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub coverage: StageModel,
    #[serde(default)]
    pub sampling: SamplingDesign,
    #[serde(default)]
    pub respond: StageModel,
    #[serde(default)]
    pub platform_use: StageModel,
    #[serde(default)]
    pub comply: StageModel,
    #[serde(default)]
    pub consent: StageModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Fraction of the population; shares must add up to 1.
    pub share: f64,
    #[serde(default)]
    pub outcome_mean: f64,
}

/// `y = group.outcome_mean + covariate_effect * x + noise_sd * e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    #[serde(default)]
    pub covariate_effect: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel {
            covariate_effect: 0.0,
            noise_sd: 1.0,
        }
    }
}

/// Probability that a unit passes a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageModel {
    Constant {
        probability: f64,
    },
    ByGroup {
        probabilities: BTreeMap<String, f64>,
    },
    /// `logit p = intercept + covariate * x + outcome * y + group[g]`.
    Logistic {
        intercept: f64,
        #[serde(default)]
        covariate: f64,
        #[serde(default)]
        outcome: f64,
        #[serde(default)]
        group: BTreeMap<String, f64>,
    },
}

impl Default for StageModel {
    fn default() -> Self {
        StageModel::Constant { probability: 1.0 }
    }
}

impl StageModel {
    fn validate(&self, stage: &str, groups: &BTreeSet<&str>) -> Result<(), FrameError> {
        let check_p = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(FrameError::Config(format!(
                    "{stage}: probability {p} outside [0, 1]"
                )))
            }
        };
        match self {
            StageModel::Constant { probability } => check_p(*probability),
            StageModel::ByGroup { probabilities } => {
                for g in groups {
                    match probabilities.get(*g) {
                        Some(p) => check_p(*p)?,
                        None => {
                            return Err(FrameError::Config(format!(
                                "{stage}: no probability for group `{g}`"
                            )))
                        }
                    }
                }
                unknown_groups(stage, probabilities.keys(), groups)
            }
            StageModel::Logistic {
                intercept,
                covariate,
                outcome,
                group,
            } => {
                if [intercept, covariate, outcome].iter().any(|c| c.is_nan())
                    || group.values().any(|c| c.is_nan())
                {
                    return Err(FrameError::Config(format!("{stage}: NaN coefficient")));
                }
                unknown_groups(stage, group.keys(), groups)
            }
        }
    }

    fn probability(&self, group: &str, x: f64, y: f64) -> f64 {
        match self {
            StageModel::Constant { probability } => *probability,
            StageModel::ByGroup { probabilities } => probabilities[group],
            StageModel::Logistic {
                intercept,
                covariate,
                outcome,
                group: offsets,
            } => {
                let eta = intercept
                    + covariate * x
                    + outcome * y
                    + offsets.get(group).copied().unwrap_or(0.0);
                1.0 / (1.0 + (-eta).exp())
            }
        }
    }
}

fn unknown_groups<'a>(
    stage: &str,
    keys: impl Iterator<Item = &'a String>,
    groups: &BTreeSet<&str>,
) -> Result<(), FrameError> {
    for k in keys {
        if !groups.contains(k.as_str()) {
            return Err(FrameError::Config(format!("{stage}: unknown group `{k}`")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingDesign {
    /// Every covered unit.
    #[default]
    Census,
    Srs {
        size: usize,
    },
    /// Simple random sample of `sizes[g]` covered units from each group.
    Stratified {
        sizes: BTreeMap<String, usize>,
    },
    /// Units are grouped into runs of `cluster_size` within each group
    /// (schools, households); `clusters` clusters are drawn and every
    /// covered unit in them is taken.
    Clustered {
        cluster_size: usize,
        clusters: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Population,
    Frame,
    Sample,
    Respondents,
    Compliers,
    Consenters,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Population,
        Stage::Frame,
        Stage::Sample,
        Stage::Respondents,
        Stage::Compliers,
        Stage::Consenters,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Population => "population",
            Stage::Frame => "frame",
            Stage::Sample => "sample",
            Stage::Respondents => "respondents",
            Stage::Compliers => "compliers",
            Stage::Consenters => "consenters",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Stage::Population => "target population",
            Stage::Frame => "sampling frame",
            Stage::Sample => "sample",
            Stage::Respondents => "respondents",
            Stage::Compliers => "respondents with DDPs",
            Stage::Consenters => "donors (consented)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub stage: Stage,
    pub n: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelResult {
    pub seed: u64,
    pub replication: u64,
    /// One entry per [`Stage`], in funnel order.
    pub stages: Vec<StageEstimate>,
    /// Sampled units that answered the survey, before the platform-use filter.
    pub responded: usize,
    /// Final donors post-stratified by group to the frame counts.
    pub poststratified: Option<Estimate>,
    /// Groups with frame units but no donors.
    pub uncovered_groups: Vec<String>,
}

impl FunnelResult {
    pub fn population_truth(&self) -> f64 {
        self.stages[0].estimate
    }

    pub fn final_estimate(&self) -> f64 {
        self.stages[self.stages.len() - 1].estimate
    }

    pub fn estimate(&self, stage: Stage) -> Option<&StageEstimate> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

impl FunnelConfig {
    pub fn from_toml(text: &str) -> Result<Self, FrameError> {
        let cfg: FunnelConfig =
            toml::from_str(text).map_err(|e| FrameError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.population_size == 0 {
            return Err(FrameError::Config(
                "population_size must be positive".into(),
            ));
        }
        if self.groups.is_empty() {
            return Err(FrameError::Config("at least one group is required".into()));
        }
        let mut names = BTreeSet::new();
        for g in &self.groups {
            if g.name.is_empty() || !names.insert(g.name.as_str()) {
                return Err(FrameError::Config(format!(
                    "group name `{}` is empty or repeated",
                    g.name
                )));
            }
            if !(g.share.is_finite() && g.share >= 0.0) {
                return Err(FrameError::Config(format!(
                    "group `{}` has invalid share {}",
                    g.name, g.share
                )));
            }
            if !g.outcome_mean.is_finite() {
                return Err(FrameError::Config(format!(
                    "group `{}` has non-finite outcome mean",
                    g.name
                )));
            }
        }
        let total: f64 = compensated_sum(self.groups.iter().map(|g| g.share));
        if (total - 1.0).abs() > 1e-9 {
            return Err(FrameError::Config(format!(
                "group shares sum to {total}, not 1"
            )));
        }
        if !(self.outcome.noise_sd.is_finite() && self.outcome.noise_sd >= 0.0)
            || !self.outcome.covariate_effect.is_finite()
        {
            return Err(FrameError::Config(
                "outcome model needs finite effect and non-negative noise".into(),
            ));
        }
        for (stage, model) in [
            ("coverage", &self.coverage),
            ("respond", &self.respond),
            ("platform_use", &self.platform_use),
            ("comply", &self.comply),
            ("consent", &self.consent),
        ] {
            model.validate(stage, &names)?;
        }
        match &self.sampling {
            SamplingDesign::Census => {}
            SamplingDesign::Srs { size } if *size == 0 => {
                return Err(FrameError::Design("sample size must be positive".into()))
            }
            SamplingDesign::Srs { .. } => {}
            SamplingDesign::Stratified { sizes } => {
                unknown_groups("sampling", sizes.keys(), &names)?
            }
            SamplingDesign::Clustered {
                cluster_size,
                clusters,
            } => {
                if *cluster_size == 0 || *clusters == 0 {
                    return Err(FrameError::Design(
                        "cluster size and count must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Units per group, largest-remainder rounding of `share * N`.
    fn group_sizes(&self) -> Vec<usize> {
        let n = self.population_size;
        let raw: Vec<f64> = self.groups.iter().map(|g| g.share * n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut rest = n.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            (raw[b] - raw[b].floor())
                .total_cmp(&(raw[a] - raw[a].floor()))
                .then(a.cmp(&b))
        });
        for i in order.into_iter().cycle() {
            if rest == 0 {
                break;
            }
            sizes[i] += 1;
            rest -= 1;
        }
        sizes
    }
}

struct Unit {
    group: usize,
    cluster: usize,
    y: f64,
    covered: bool,
    responds: bool,
    uses_platform: bool,
    complies: bool,
    consents: bool,
}

/// Design-weighted mean shared by every stage, so identical unit sets give
/// bit-identical estimates.
fn stage_mean(units: &[Unit], members: &[(usize, f64)]) -> f64 {
    let num = compensated_sum(members.iter().map(|&(i, w)| w * units[i].y));
    let den = compensated_sum(members.iter().map(|&(_, w)| w));
    num / den
}

/// Runs replication 0 with the configured seed.
pub fn simulate_funnel(config: &FunnelConfig) -> Result<FunnelResult, FrameError> {
    simulate_replication(config, 0)
}

/// Runs one replication; its random stream is `replication` under the
/// configured seed, so results do not depend on scheduling.
pub fn simulate_replication(
    config: &FunnelConfig,
    replication: u64,
) -> Result<FunnelResult, FrameError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replication);

    let sizes = config.group_sizes();
    let cluster_size = match config.sampling {
        SamplingDesign::Clustered { cluster_size, .. } => cluster_size,
        _ => 1,
    };
    let mut units = Vec::with_capacity(config.population_size);
    let mut cluster_base = 0;
    for (g, (spec, &size)) in config.groups.iter().zip(&sizes).enumerate() {
        let name = spec.name.as_str();
        for k in 0..size {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let y = spec.outcome_mean
                + config.outcome.covariate_effect * x
                + config.outcome.noise_sd * e;
            let mut pass = |m: &StageModel| rng.gen::<f64>() < m.probability(name, x, y);
            units.push(Unit {
                group: g,
                cluster: cluster_base + k / cluster_size,
                y,
                covered: pass(&config.coverage),
                responds: pass(&config.respond),
                uses_platform: pass(&config.platform_use),
                complies: pass(&config.comply),
                consents: pass(&config.consent),
            });
        }
        cluster_base += size.div_ceil(cluster_size);
    }

    let population: Vec<(usize, f64)> = (0..units.len()).map(|i| (i, 1.0)).collect();
    let frame: Vec<(usize, f64)> = population
        .iter()
        .copied()
        .filter(|&(i, _)| units[i].covered)
        .collect();
    let sample = draw_sample(&config.sampling, config, &units, &frame, &mut rng)?;
    let respondents: Vec<(usize, f64)> = sample
        .iter()
        .copied()
        .filter(|&(i, _)| units[i].responds && units[i].uses_platform)
        .collect();
    let responded = sample.iter().filter(|&&(i, _)| units[i].responds).count();
    let compliers: Vec<(usize, f64)> = respondents
        .iter()
        .copied()
        .filter(|&(i, _)| units[i].complies)
        .collect();
    let consenters: Vec<(usize, f64)> = compliers
        .iter()
        .copied()
        .filter(|&(i, _)| units[i].consents)
        .collect();

    let mut stages = Vec::with_capacity(6);
    for (stage, members) in Stage::ALL.into_iter().zip([
        &population,
        &frame,
        &sample,
        &respondents,
        &compliers,
        &consenters,
    ]) {
        if members.is_empty() {
            return Err(FrameError::EmptyStage(stage.as_str().to_string()));
        }
        stages.push(StageEstimate {
            stage,
            n: members.len(),
            estimate: stage_mean(&units, members),
        });
    }

    let count_by_group = |members: &[(usize, f64)]| {
        let mut m: BTreeMap<String, u64> = BTreeMap::new();
        for &(i, _) in members {
            *m.entry(config.groups[units[i].group].name.clone())
                .or_default() += 1;
        }
        m
    };
    let frame_counts = count_by_group(&frame);
    let weights = poststrat_weights(&count_by_group(&consenters), &frame_counts)?;
    let strata: Vec<&str> = consenters
        .iter()
        .map(|&(i, _)| config.groups[units[i].group].name.as_str())
        .collect();
    let y: Vec<f64> = consenters.iter().map(|&(i, _)| units[i].y).collect();
    let poststratified = Some(weighted_estimate(&y, &weights.unit_weights(&strata)?)?);

    Ok(FunnelResult {
        seed: config.seed,
        replication,
        stages,
        responded,
        poststratified,
        uncovered_groups: weights.uncovered,
    })
}

fn srs(rng: &mut ChaCha8Rng, len: usize, amount: usize) -> Vec<usize> {
    let mut picked = index::sample(rng, len, amount).into_vec();
    picked.sort_unstable();
    picked
}

fn draw_sample(
    design: &SamplingDesign,
    config: &FunnelConfig,
    units: &[Unit],
    frame: &[(usize, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, f64)>, FrameError> {
    match design {
        SamplingDesign::Census => Ok(frame.to_vec()),
        SamplingDesign::Srs { size } => {
            if *size > frame.len() {
                return Err(FrameError::Design(format!(
                    "sample size {size} exceeds frame size {}",
                    frame.len()
                )));
            }
            let w = frame.len() as f64 / *size as f64;
            Ok(srs(rng, frame.len(), *size)
                .into_iter()
                .map(|k| (frame[k].0, w))
                .collect())
        }
        SamplingDesign::Stratified { sizes } => {
            let mut out = Vec::new();
            for (g, spec) in config.groups.iter().enumerate() {
                let n = sizes.get(&spec.name).copied().unwrap_or(0);
                if n == 0 {
                    continue;
                }
                let stratum: Vec<usize> = frame
                    .iter()
                    .map(|&(i, _)| i)
                    .filter(|&i| units[i].group == g)
                    .collect();
                if n > stratum.len() {
                    return Err(FrameError::Design(format!(
                        "stratum `{}`: sample size {n} exceeds frame size {}",
                        spec.name,
                        stratum.len()
                    )));
                }
                let w = stratum.len() as f64 / n as f64;
                out.extend(
                    srs(rng, stratum.len(), n)
                        .into_iter()
                        .map(|k| (stratum[k], w)),
                );
            }
            out.sort_by_key(|&(i, _)| i);
            Ok(out)
        }
        SamplingDesign::Clustered { clusters, .. } => {
            let ids: Vec<usize> = frame
                .iter()
                .map(|&(i, _)| units[i].cluster)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if *clusters > ids.len() {
                return Err(FrameError::Design(format!(
                    "{clusters} clusters requested but the frame has {}",
                    ids.len()
                )));
            }
            let chosen: BTreeSet<usize> = srs(rng, ids.len(), *clusters)
                .into_iter()
                .map(|k| ids[k])
                .collect();
            let w = ids.len() as f64 / *clusters as f64;
            Ok(frame
                .iter()
                .filter(|&&(i, _)| chosen.contains(&units[i].cluster))
                .map(|&(i, _)| (i, w))
                .collect())
        }
    }
}

/// Runs `replications` independent replications in parallel, in
/// replication order.
pub fn run_replications(
    config: &FunnelConfig,
    replications: u64,
) -> Result<Vec<FunnelResult>, FrameError> {
    config.validate()?;
    (0..replications)
        .into_par_iter()
        .map(|r| simulate_replication(config, r))
        .collect()
}
