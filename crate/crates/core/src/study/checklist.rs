//! Quality checklist for data donation studies.
//!
//! The item set is fixed (see `docs/checklist.md`). Items the software can
//! evidence are automated and always end in pass or fail; a missing report
//! counts as a failure. Scientific judgments stay manual and carry a prompt.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ingest::IngestReport;
use super::pipeline::PipelineReport;
use super::StudyConfig;
use crate::consent::{ConsentSession, Decision, SessionState, SessionSummary, VariableEntry};
use crate::errorframe::{FunnelConfig, FunnelResult, SamplingDesign, StageModel};
use crate::transform::transformer_provider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Measurement,
    Representation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemMode {
    Automated,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pass,
    Fail,
    Manual,
}

impl ItemStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemStatus::Pass => "pass",
            ItemStatus::Fail => "fail",
            ItemStatus::Manual => "manual",
        }
    }
}

use ItemMode::{Automated as A, Manual as M};
use Side::{Measurement as MS, Representation as RS};

/// `(id, side, section, text, mode)` for every item, in checklist order.
pub const CHECKLIST_ITEMS: [(&str, Side, &str, &str, ItemMode); 31] = [
    ("construct.defined", MS, "Construct", "The construct of interest is clearly defined", M),
    ("construct.scope", MS, "Construct", "The construct of interest matches the scope of the research", M),
    ("indicators.observable", MS, "Indicator(s)", "All aspects of the construct can be sufficiently represented through observable indicators (proxies)", M),
    ("indicators.measurable", MS, "Indicator(s)", "The indicators can be measured by data controllers", M),
    ("ddps.controllers_selected", MS, "DDPs", "Data controllers are selected in which the indicators of interest are measured", A),
    ("ddps.denseness", MS, "DDPs", "The denseness of the measured indicators matches the research purpose", A),
    ("ddps.credibility", MS, "DDPs", "The credibility of the data controller is positively evaluated", M),
    ("ddps.burden", MS, "DDPs", "The number of different data controllers is minimized to reduce response burden", M),
    ("extracted.all_formats", MS, "Extracted data", "Presence of the indicator is evaluated for all file formats present in the DDP", A),
    ("extracted.validated_scripts", MS, "Extracted data", "Relevant files are extracted using validated scripts with known accuracy rates", A),
    ("transformed.method_selected", MS, "Transformed data", "A transformation method is selected that extracts the outcome values for each indicator", A),
    ("transformed.training_sample", MS, "Transformed data", "The transformation method is trained on a sample similar to the data collected by means of DDPs", M),
    ("transformed.known_accuracy", MS, "Transformed data", "The transformation method has a known accuracy rate estimated on a comparable data-set", A),
    ("transformed.no_systematic_error", MS, "Transformed data", "The transformation method does not systematically include, exclude or misclassifies specific (identifiable) cases", M),
    ("transformed.represents_indicators", MS, "Transformed data", "The outcome values sufficiently represent all indicators identified", A),
    ("analysis.linked_person_level", MS, "Analysis of interest", "The shared data is linked on person level, such that different sets of transformed data are represented by different columns in one data-set", A),
    ("analysis.respondent_ids", MS, "Analysis of interest", "Individual respondents can be clearly identified, for example by means of an anonymized identification number", A),
    ("analysis.variables_identified", MS, "Analysis of interest", "The variables are clearly identified for each respondent", A),
    ("target.identified", RS, "Target population", "A target population is identified that matches the research purpose", M),
    ("target.subgroups_includable", RS, "Target population", "All identifiable subgroups can in theory be included in the study", M),
    ("frame.subgroups_present", RS, "Sampling frame", "All identifiable subgroups of the target population are present in the sampling frame", A),
    ("frame.matches_purpose", RS, "Sampling frame", "Evaluate whether the available sampling frame matches the research purpose", M),
    ("sample.inclusion_probability", RS, "Sample", "All subgroups in the sampling frame have a probability to be included in the sample", A),
    ("sample.known_probability", RS, "Sample", "All subgroups in the sampling frame have an equal or known probability to be included in the sample", A),
    ("respondents.clear_communication", RS, "Respondents", "The communication towards the sample is clear and simple", M),
    ("respondents.language", RS, "Respondents", "Communication is possible in the respondent's language", M),
    ("respondents.stepwise_consent", RS, "Respondents", "The procedure is explained in a step-by-step manner for informed consent at the start of the procedure", M),
    ("software.usability_validated", RS, "Respondent's DDPs", "The software's usability has been validated on an independent validation sample", M),
    ("software.devices", RS, "Respondent's DDPs", "The software is available for different types of devices and different versions of operating systems", M),
    ("software.assistance", RS, "Respondent's DDPs", "24 hour assistance is available during the data collection period", M),
    ("analysis.respondent_preview", RS, "Analysis of interest", "The respondents can see the final data-set containing the transformed data before it is shared with the researcher for informed consent", A),
];

/// What a consent session showed and decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentEvidence {
    pub session: SessionSummary,
    pub variables: Vec<VariableEntry>,
}

impl ConsentEvidence {
    pub fn from_session(s: &ConsentSession) -> Self {
        ConsentEvidence {
            session: s.summary(),
            variables: s.variables().to_vec(),
        }
    }
}

/// Representation-side facts of a funnel simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelEvidence {
    pub replications: usize,
    /// Groups the coverage model gives probability zero.
    pub groups_outside_frame: Vec<String>,
    /// Groups the sampling design can never draw.
    pub groups_without_sampling_chance: Vec<String>,
    /// Replications whose post-stratification weights reproduce the frame
    /// totals (every frame group has consenting units).
    pub calibrated_replications: usize,
}

impl FunnelEvidence {
    pub fn from_run(config: &FunnelConfig, results: &[FunnelResult]) -> Self {
        let zero = |m: &StageModel, g: &str| match m {
            StageModel::Constant { probability } => *probability == 0.0,
            StageModel::ByGroup { probabilities } => {
                probabilities.get(g).is_some_and(|p| *p == 0.0)
            }
            StageModel::Logistic { .. } => false,
        };
        let groups = config.groups.iter().map(|g| g.name.clone());
        FunnelEvidence {
            replications: results.len(),
            groups_outside_frame: groups
                .clone()
                .filter(|g| zero(&config.coverage, g))
                .collect(),
            groups_without_sampling_chance: groups
                .filter(|g| match &config.sampling {
                    SamplingDesign::Stratified { sizes } => sizes.get(g).copied().unwrap_or(0) == 0,
                    SamplingDesign::Srs { size } => *size == 0,
                    _ => false,
                })
                .collect(),
            calibrated_replications: results
                .iter()
                .filter(|r| r.poststratified.is_some() && r.uncovered_groups.is_empty())
                .count(),
        }
    }
}

/// One report file as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceFile {
    Pipeline(PipelineReport),
    Consent(ConsentEvidence),
    Ingest(IngestReport),
    Funnel(FunnelEvidence),
}

/// Collected reports, each with a pointer to where it came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evidence {
    pub pipeline: Vec<(String, PipelineReport)>,
    pub consent: Vec<(String, ConsentEvidence)>,
    pub ingest: Vec<(String, IngestReport)>,
    pub funnel: Vec<(String, FunnelEvidence)>,
}

impl Evidence {
    pub fn add(&mut self, pointer: impl Into<String>, file: EvidenceFile) {
        let p = pointer.into();
        match file {
            EvidenceFile::Pipeline(r) => self.pipeline.push((p, r)),
            EvidenceFile::Consent(r) => self.consent.push((p, r)),
            EvidenceFile::Ingest(r) => self.ingest.push((p, r)),
            EvidenceFile::Funnel(r) => self.funnel.push((p, r)),
        }
    }

    pub fn load(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file: EvidenceFile =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        self.add(path.display().to_string(), file);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub side: Side,
    pub section: String,
    pub text: String,
    pub mode: ItemMode,
    pub status: ItemStatus,
    pub evidence: Vec<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistReport {
    pub study_id: String,
    pub items: Vec<ChecklistItem>,
}

impl ChecklistReport {
    pub fn item(&self, id: &str) -> Option<&ChecklistItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn count(&self, status: ItemStatus) -> usize {
        self.items.iter().filter(|i| i.status == status).count()
    }

    pub fn render(&self) -> String {
        let mut out = format!("Checklist for study {}\n", self.study_id);
        let mut section = "";
        for i in &self.items {
            if i.section != section {
                section = &i.section;
                let _ = writeln!(
                    out,
                    "\n{} / {}",
                    match i.side {
                        Side::Measurement => "Measurement side",
                        Side::Representation => "Representation side",
                    },
                    section
                );
            }
            let _ = writeln!(out, "  [{:<6}] {:<34} {}", i.status.as_str(), i.id, i.note);
            if !i.evidence.is_empty() {
                let _ = writeln!(out, "           evidence: {}", i.evidence.join(", "));
            }
        }
        let _ = writeln!(
            out,
            "\n{} pass, {} fail, {} manual",
            self.count(ItemStatus::Pass),
            self.count(ItemStatus::Fail),
            self.count(ItemStatus::Manual)
        );
        out
    }
}

type Verdict = (bool, Vec<String>, String);

fn missing(what: &str) -> Verdict {
    (false, Vec::new(), format!("no {what} report supplied"))
}

fn pointers<T>(items: &[(String, T)]) -> Vec<String> {
    items.iter().map(|(p, _)| p.clone()).collect()
}

fn list_or(mut failures: Vec<String>, ok: &str) -> (bool, String) {
    failures.dedup();
    if failures.is_empty() {
        (true, ok.to_string())
    } else {
        (false, failures.join("; "))
    }
}

fn evaluate(id: &str, config: &StudyConfig, ev: &Evidence) -> Verdict {
    let registry = config.registry();
    match id {
        "ddps.controllers_selected" => {
            let mut fails = Vec::new();
            if config.checklist.data_controllers.is_empty() {
                fails.push("no data controllers declared".to_string());
            }
            for d in registry.iter() {
                if let Some(p) = transformer_provider(&d.transformer) {
                    if !config.checklist.data_controllers.contains(&p) {
                        fails.push(format!(
                            "`{}` needs {p}, which is not a declared controller",
                            d.name
                        ));
                    }
                }
            }
            if ev.pipeline.is_empty() {
                fails.push("no pipeline report supplied".into());
            }
            for p in &config.checklist.data_controllers {
                if !ev
                    .pipeline
                    .iter()
                    .any(|(_, r)| r.archives.iter().any(|a| a.provider == *p))
                {
                    fails.push(format!("no {p} archive was processed"));
                }
            }
            let (ok, note) = list_or(
                fails,
                "every indicator's platform is a declared, processed controller",
            );
            (ok, pointers(&ev.pipeline), note)
        }
        "ddps.denseness" => {
            if ev.pipeline.is_empty() {
                return missing("pipeline");
            }
            let mut fails = Vec::new();
            for (p, r) in &ev.pipeline {
                match &r.denseness {
                    None => fails.push(format!("{p}: denseness check did not run")),
                    Some(d) if !d.passed() => {
                        let gaps: usize = d.series.iter().map(|s| s.gaps.len()).sum();
                        fails.push(format!(
                            "{p}: {gaps} gap(s) below {} record(s) per {} ms",
                            d.requirement.min_records, d.requirement.period_ms
                        ));
                    }
                    Some(_) => {}
                }
            }
            let (ok, note) = list_or(fails, "every series meets the denseness requirement");
            (ok, pointers(&ev.pipeline), note)
        }
        "extracted.all_formats" => {
            if ev.pipeline.is_empty() {
                return missing("pipeline");
            }
            let fails = ev
                .pipeline
                .iter()
                .flat_map(|(_, r)| r.archives.iter())
                .filter(|a| a.media_entries != a.media_parsed)
                .map(|a| {
                    format!(
                        "{}: {} media member(s), {} parsed",
                        a.path, a.media_entries, a.media_parsed
                    )
                })
                .collect();
            let (ok, note) = list_or(
                fails,
                "every image and video member, whatever its format, was parsed",
            );
            (ok, pointers(&ev.pipeline), note)
        }
        "extracted.validated_scripts" => {
            if ev.pipeline.is_empty() {
                return missing("pipeline");
            }
            let fails = ev
                .pipeline
                .iter()
                .flat_map(|(_, r)| r.archives.iter())
                .filter(|a| a.schema_version.is_none())
                .map(|a| format!("{}: no versioned schema", a.path))
                .collect();
            let (ok, note) = list_or(
                fails,
                "all archives matched a versioned, tested parser schema",
            );
            (ok, pointers(&ev.pipeline), note)
        }
        "transformed.method_selected" => {
            let unbound: Vec<String> = registry
                .iter()
                .filter(|d| d.transformer.is_empty())
                .map(|d| format!("`{}` has no transformer", d.name))
                .collect();
            let (ok, note) = list_or(
                unbound,
                "every registered variable is bound to one transformer",
            );
            (ok, vec!["study config".into()], note)
        }
        "transformed.known_accuracy" => {
            let fails = config
                .transformers()
                .into_iter()
                .filter(|t| !config.accuracy.contains_key(t))
                .map(|t| format!("no accuracy declared for `{t}`"))
                .collect();
            let (ok, note) = list_or(fails, "accuracy declared for every transformer");
            (ok, vec!["study config [accuracy]".into()], note)
        }
        "transformed.represents_indicators" => {
            if ev.pipeline.is_empty() {
                return missing("pipeline");
            }
            let fails = registry
                .iter()
                .filter(|d| transformer_provider(&d.transformer).is_some())
                .filter(|d| {
                    !ev.pipeline
                        .iter()
                        .any(|(_, r)| r.records_by_variable.get(&d.name).is_some_and(|n| *n > 0))
                })
                .map(|d| format!("`{}` produced no values", d.name))
                .collect();
            let (ok, note) = list_or(fails, "every locally derived variable has values");
            (ok, pointers(&ev.pipeline), note)
        }
        "analysis.linked_person_level" => {
            if ev.ingest.is_empty() {
                return missing("ingest");
            }
            let ok = ev
                .ingest
                .iter()
                .any(|(_, r)| r.link.rows > 0 && r.pseudonyms > 0);
            let note = if ok {
                "records linked into one row per person and time bin".to_string()
            } else {
                "linkage produced no rows".to_string()
            };
            (ok, pointers(&ev.ingest), note)
        }
        "analysis.respondent_ids" => {
            if ev.ingest.is_empty() {
                return missing("ingest");
            }
            let mut fails = Vec::new();
            for (p, r) in &ev.ingest {
                let ids: BTreeSet<_> = r.packages.iter().map(|k| &k.pseudonym).collect();
                if ids.len() != r.packages.len() {
                    fails.push(format!("{p}: pseudonyms are not unique per package"));
                }
                if r.pseudonyms == 0 {
                    fails.push(format!("{p}: no respondents"));
                }
            }
            let (ok, note) = list_or(
                fails,
                "each respondent is keyed by a unique study pseudonym",
            );
            (ok, pointers(&ev.ingest), note)
        }
        "analysis.variables_identified" => {
            if ev.ingest.is_empty() {
                return missing("ingest");
            }
            let mut fails = Vec::new();
            for (p, r) in &ev.ingest {
                if r.variables.is_empty() {
                    fails.push(format!("{p}: dataset has no variables"));
                }
                for v in &r.variables {
                    if registry.get(v).is_none() {
                        fails.push(format!("{p}: column `{v}` is not registered"));
                    }
                }
            }
            let (ok, note) = list_or(fails, "every column is a registered, described variable");
            (ok, pointers(&ev.ingest), note)
        }
        "frame.subgroups_present" => {
            if ev.funnel.is_empty() {
                return missing("funnel");
            }
            let fails = ev
                .funnel
                .iter()
                .flat_map(|(p, f)| {
                    f.groups_outside_frame
                        .iter()
                        .map(move |g| format!("{p}: group `{g}` has zero coverage"))
                })
                .collect();
            let (ok, note) = list_or(fails, "every group has a positive coverage probability");
            (ok, pointers(&ev.funnel), note)
        }
        "sample.inclusion_probability" => {
            if ev.funnel.is_empty() {
                return missing("funnel");
            }
            let fails = ev
                .funnel
                .iter()
                .flat_map(|(p, f)| {
                    f.groups_without_sampling_chance
                        .iter()
                        .map(move |g| format!("{p}: group `{g}` cannot be sampled"))
                })
                .collect();
            let (ok, note) = list_or(fails, "every frame group can be sampled");
            (ok, pointers(&ev.funnel), note)
        }
        "sample.known_probability" => {
            if ev.funnel.is_empty() {
                return missing("funnel");
            }
            let fails = ev
                .funnel
                .iter()
                .filter(|(_, f)| f.replications == 0 || f.calibrated_replications < f.replications)
                .map(|(p, f)| {
                    format!(
                        "{p}: weights calibrated in {} of {} replications",
                        f.calibrated_replications, f.replications
                    )
                })
                .collect();
            let (ok, note) = list_or(
                fails,
                "design weights known and post-stratification weights calibrated",
            );
            (ok, pointers(&ev.funnel), note)
        }
        "analysis.respondent_preview" => {
            if ev.consent.is_empty() {
                return missing("consent");
            }
            let mut fails = Vec::new();
            for (p, c) in &ev.consent {
                if c.session.outcome.is_none() && c.session.state != SessionState::Finalized {
                    fails.push(format!("{p}: session was not finalized"));
                }
                for v in &c.variables {
                    if v.decision == Decision::Approved && !v.previewed {
                        fails.push(format!("{p}: `{}` approved without preview", v.name));
                    }
                }
            }
            let (ok, note) = list_or(fails, "every shared variable was previewed before consent");
            (ok, pointers(&ev.consent), note)
        }
        other => unreachable!("no rule for automated item {other}"),
    }
}

fn prompt(id: &str, config: &StudyConfig) -> String {
    let meta = &config.checklist;
    let stated = |label: &str, v: &str| {
        if v.is_empty() {
            format!("{label}: nothing on file")
        } else {
            format!("{label} on file: \"{v}\"")
        }
    };
    match id {
        "construct.defined" | "construct.scope" if !meta.constructs.is_empty() => {
            format!("review constructs: {}", meta.constructs.join(", "))
        }
        "target.identified" | "target.subgroups_includable" => {
            stated("target population", &meta.target_population)
        }
        "frame.matches_purpose" => stated("frame description", &meta.frame_description),
        "software.assistance" => "operational; confirm the helpdesk schedule".into(),
        _ => "researcher judgment required".into(),
    }
}

/// Evaluates every checklist item against the collected evidence.
pub fn report_checklist(config: &StudyConfig, evidence: &Evidence) -> ChecklistReport {
    let items = CHECKLIST_ITEMS
        .iter()
        .map(|&(id, side, section, text, mode)| {
            let (status, evidence, note) = match mode {
                ItemMode::Manual => (ItemStatus::Manual, Vec::new(), prompt(id, config)),
                ItemMode::Automated => {
                    let (ok, ptrs, note) = evaluate(id, config, evidence);
                    (
                        if ok {
                            ItemStatus::Pass
                        } else {
                            ItemStatus::Fail
                        },
                        ptrs,
                        note,
                    )
                }
            };
            ChecklistItem {
                id: id.to_string(),
                side,
                section: section.to_string(),
                text: text.to_string(),
                mode,
                status,
                evidence,
                note,
            }
        })
        .collect();
    ChecklistReport {
        study_id: config.study_id.clone(),
        items,
    }
}
