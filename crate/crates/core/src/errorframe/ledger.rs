use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::funnel::{FunnelResult, Stage, StageEstimate};
use crate::stats::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerComponent {
    Coverage,
    Sampling,
    Nonresponse,
    Compliance,
    Consent,
}

impl LedgerComponent {
    pub const ALL: [LedgerComponent; 5] = [
        LedgerComponent::Coverage,
        LedgerComponent::Sampling,
        LedgerComponent::Nonresponse,
        LedgerComponent::Compliance,
        LedgerComponent::Consent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LedgerComponent::Coverage => "coverage_bias",
            LedgerComponent::Sampling => "sampling_error",
            LedgerComponent::Nonresponse => "nonresponse_bias",
            LedgerComponent::Compliance => "compliance_bias",
            LedgerComponent::Consent => "consent_bias",
        }
    }

    /// The stage whose estimate ends this step.
    pub fn stage(self) -> Stage {
        match self {
            LedgerComponent::Coverage => Stage::Frame,
            LedgerComponent::Sampling => Stage::Sample,
            LedgerComponent::Nonresponse => Stage::Respondents,
            LedgerComponent::Compliance => Stage::Compliers,
            LedgerComponent::Consent => Stage::Consenters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    pub stages: Vec<StageEstimate>,
    pub population_truth: f64,
    pub final_estimate: f64,
    pub coverage_bias: f64,
    pub sampling_error: f64,
    pub nonresponse_bias: f64,
    pub compliance_bias: f64,
    pub consent_bias: f64,
    /// `final_estimate - population_truth`.
    pub total: f64,
}

/// Stage-by-stage deltas `estimate(stage) - estimate(previous stage)`.
pub fn decompose_errors(result: &FunnelResult) -> ErrorLedger {
    let est = |s: Stage| {
        result
            .estimate(s)
            .map(|e| e.estimate)
            .expect("funnel result holds every stage")
    };
    let truth = est(Stage::Population);
    let last = est(Stage::Consenters);
    let ledger = ErrorLedger {
        stages: result.stages.clone(),
        population_truth: truth,
        final_estimate: last,
        coverage_bias: est(Stage::Frame) - truth,
        sampling_error: est(Stage::Sample) - est(Stage::Frame),
        nonresponse_bias: est(Stage::Respondents) - est(Stage::Sample),
        compliance_bias: est(Stage::Compliers) - est(Stage::Respondents),
        consent_bias: last - est(Stage::Compliers),
        total: last - truth,
    };
    debug_assert!(
        ledger.telescoping_residual().abs() <= 1e-9 * (1.0 + truth.abs().max(last.abs()))
    );
    ledger
}

impl ErrorLedger {
    pub fn delta(&self, c: LedgerComponent) -> f64 {
        match c {
            LedgerComponent::Coverage => self.coverage_bias,
            LedgerComponent::Sampling => self.sampling_error,
            LedgerComponent::Nonresponse => self.nonresponse_bias,
            LedgerComponent::Compliance => self.compliance_bias,
            LedgerComponent::Consent => self.consent_bias,
        }
    }

    pub fn deltas(&self) -> [(LedgerComponent, f64); 5] {
        LedgerComponent::ALL.map(|c| (c, self.delta(c)))
    }

    /// `Σ deltas - total`; zero up to rounding.
    pub fn telescoping_residual(&self) -> f64 {
        compensated_sum(self.deltas().iter().map(|d| d.1)) - self.total
    }

    fn stage(&self, s: Stage) -> Option<&StageEstimate> {
        self.stages.iter().find(|e| e.stage == s)
    }

    /// `stage,n,estimate,component,delta` with one row per stage and a
    /// closing `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,n,estimate,component,delta\n");
        let pop = self.stage(Stage::Population);
        let _ = writeln!(
            out,
            "population,{},{},,",
            pop.map_or(0, |s| s.n),
            self.population_truth
        );
        for c in LedgerComponent::ALL {
            let s = self.stage(c.stage());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.stage().as_str(),
                s.map_or(0, |s| s.n),
                s.map_or(f64::NAN, |s| s.estimate),
                c.as_str(),
                self.delta(c)
            );
        }
        let _ = writeln!(out, "total,,{},total,{}", self.final_estimate, self.total);
        out
    }

    /// Plain-text report with the measurement side on the left and the
    /// representation side on the right.
    pub fn render_report(&self) -> String {
        const LEFT: [&str; 11] = [
            "construct",
            "  | validity",
            "measurement (DDP variables)",
            "  | measurement error",
            "  |   (see agreement-stats)",
            "transformed data",
            "  | algorithmic error",
            "  |   (see correct-counts)",
            "linked data",
            "  | integration error",
            "  |   (see link validation)",
        ];
        let mut right = Vec::new();
        let pop = self.stage(Stage::Population);
        right.push(format!(
            "{:<24}{:>8} {:>12.6}",
            Stage::Population.description(),
            pop.map_or(0, |s| s.n),
            self.population_truth
        ));
        for c in LedgerComponent::ALL {
            right.push(format!("  | {:<18}{:>+19.6}", c.as_str(), self.delta(c)));
            let s = self.stage(c.stage());
            right.push(format!(
                "{:<24}{:>8} {:>12.6}",
                c.stage().description(),
                s.map_or(0, |s| s.n),
                s.map_or(f64::NAN, |s| s.estimate)
            ));
        }
        let width = 32;
        let mut out = format!("{:<width$} | {}\n", "MEASUREMENT", "REPRESENTATION");
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(45));
        for i in 0..LEFT.len().max(right.len()) {
            let l = LEFT.get(i).copied().unwrap_or("");
            let r = right.get(i).map(String::as_str).unwrap_or("");
            let _ = writeln!(out, "{l:<width$} | {r}");
        }
        let _ = writeln!(out, "{}-+-{}", "-".repeat(width), "-".repeat(45));
        let _ = writeln!(
            out,
            "{:<width$} | {:<22}{:>+19.6}",
            "", "total error", self.total
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub mean: f64,
    /// Monte-Carlo standard error of the mean.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ComponentSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = compensated_sum(values.iter().copied()) / n;
        let var = if values.len() > 1 {
            compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        ComponentSummary {
            mean,
            se,
            ci_low: mean - 1.96 * se,
            ci_high: mean + 1.96 * se,
        }
    }
}

/// Mean ledger over replications with 95% Monte-Carlo intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub replications: usize,
    pub components: Vec<(LedgerComponent, ComponentSummary)>,
    pub total: ComponentSummary,
}

impl MonteCarloSummary {
    /// `None` for an empty slice.
    pub fn from_ledgers(ledgers: &[ErrorLedger]) -> Option<Self> {
        if ledgers.is_empty() {
            return None;
        }
        let column = |f: &dyn Fn(&ErrorLedger) -> f64| ledgers.iter().map(f).collect::<Vec<_>>();
        Some(MonteCarloSummary {
            replications: ledgers.len(),
            components: LedgerComponent::ALL
                .into_iter()
                .map(|c| (c, ComponentSummary::of(&column(&|l| l.delta(c)))))
                .collect(),
            total: ComponentSummary::of(&column(&|l| l.total)),
        })
    }

    pub fn component(&self, c: LedgerComponent) -> ComponentSummary {
        self.components
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, s)| *s)
            .expect("summary holds every component")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,replications,mean,se,ci_low,ci_high\n");
        let rows = self
            .components
            .iter()
            .map(|(c, s)| (c.as_str(), s))
            .chain(std::iter::once(("total", &self.total)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                self.replications, s.mean, s.se, s.ci_low, s.ci_high
            );
        }
        out
    }
}
