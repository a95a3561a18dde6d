//! `ddp`: command-line front end for donation studies.
//!
//! Exit status is 0 on success, 1 when a processing stage fails and 2 for
//! configuration or usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ddp_core::consent::{ConsentServer, ConsentSession, DonationPackage, LocalArtifacts};
use ddp_core::errorframe::{
    correct_counts, decompose_errors, poststrat_weights, run_replications, ConfusionMatrix,
    CountVector, FunnelConfig, MonteCarloSummary,
};
use ddp_core::fixture::{generate_fixture, FixtureSpec, GoogleSpec, InstagramSpec};
use ddp_core::integrate::RecordSource;
use ddp_core::study::{
    ingest, link_stores, parse_archives, report_checklist, run_pipeline, ConsentEvidence, Evidence,
    EvidenceFile, FunnelEvidence, IngestOutput, PipelineOptions, StudyConfig,
};
use ddp_core::transform::{read_records_csv, write_records_csv};
use ddp_core::Pseudonym;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "ddp",
    version,
    about = "Local processing, consent and integration of data download packages"
)]
struct Cli {
    /// Directory relative paths are resolved against.
    #[arg(long, global = true, env = "DDP_WORKDIR")]
    workdir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic archives with ground-truth sidecars.
    Fixture {
        #[command(subcommand)]
        action: FixtureAction,
    },
    /// Detect, manifest and parse archives; prints the parse reports.
    Parse(ParseArgs),
    /// Full local pipeline; writes the derived store.
    Transform(TransformArgs),
    /// Consent service for one respondent's store.
    Consent {
        #[command(subcommand)]
        action: ConsentAction,
    },
    /// Donation package utilities.
    Package {
        #[command(subcommand)]
        action: PackageAction,
    },
    /// Verify, link and validate donation packages.
    Ingest(IngestArgs),
    /// Link derived stores or survey files given as NAME=PATH.
    Link(LinkArgs),
    /// Correct class counts for known misclassification rates.
    CorrectCounts(CorrectArgs),
    /// Post-stratification weights.
    Weights(WeightArgs),
    /// Representation funnel simulation with error decomposition.
    SimulateFunnel(FunnelArgs),
    /// Quality checklist from collected reports.
    Checklist(ChecklistArgs),
}

#[derive(Subcommand)]
enum FixtureAction {
    Gen(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Instagram,
    Google,
}

#[derive(Args)]
struct FixtureArgs {
    /// TOML fixture spec; overrides --provider.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "instagram")]
    provider: Provider,
    /// Study config whose [[fixtures]] are all generated into --out.
    #[arg(long, conflicts_with_all = ["spec"])]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Archive path, or directory with --config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(required = true)]
    archives: Vec<PathBuf>,
    #[arg(long)]
    schema_version: Option<String>,
    /// Respondent key the pseudonym is derived from.
    #[arg(long, default_value = "respondent")]
    respondent: String,
    #[arg(long, default_value = "study")]
    study_id: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(required = true)]
    archives: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    respondent: String,
    #[arg(long)]
    schema_version: Option<String>,
    /// Derived store CSV.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline report JSON (checklist evidence).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ConsentAction {
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Where the package is written on finalize.
    #[arg(long)]
    package_out: Option<PathBuf>,
    /// Raw archives to delete on purge unless the respondent keeps them.
    #[arg(long = "archive")]
    archives: Vec<PathBuf>,
    /// Consent report JSON written after purge (checklist evidence).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PackageAction {
    Verify {
        #[arg(required = true)]
        packages: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    packages: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    /// Linked dataset CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long = "source", required = true, value_parser = parse_source)]
    sources: Vec<(String, PathBuf)>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CorrectArgs {
    /// Observed counts, comma separated (positive class first in the binary case).
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    observed: Vec<f64>,
    /// Rows `predicted` separated by `;`, entries by `,`.
    #[arg(long, conflicts_with_all = ["sensitivity", "specificity"])]
    matrix: Option<String>,
    #[arg(long, requires = "specificity")]
    sensitivity: Option<f64>,
    #[arg(long, requires = "sensitivity")]
    specificity: Option<f64>,
}

#[derive(Args)]
struct WeightArgs {
    /// Frame counts as `group=count`, comma separated.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_count)]
    frame: Vec<(String, u64)>,
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_count)]
    respondents: Vec<(String, u64)>,
}

#[derive(Args)]
struct FunnelArgs {
    /// Funnel TOML, or a study config with a [funnel] table.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 500)]
    replications: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo summary CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Funnel evidence JSON for the checklist.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ChecklistArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report files written by other commands.
    #[arg(long = "evidence")]
    evidence: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 1 if any automated item fails.
    #[arg(long)]
    strict: bool,
}

fn parse_source(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_count(s: &str) -> Result<(String, u64), String> {
    let (name, n) = s.split_once('=').ok_or("expected group=count")?;
    Ok((
        name.to_string(),
        n.parse().map_err(|e| format!("{s}: {e}"))?,
    ))
}

/// Failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: e.into(),
    }
}

fn stage_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: e.into(),
    }
}

type Outcome = Result<(), Failure>;

fn load_config(path: &Path) -> Result<StudyConfig, Failure> {
    StudyConfig::load(path).map_err(config_err)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(stage_err)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(stage_err)
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(stage_err)
}

fn fixture_gen(a: FixtureArgs) -> Outcome {
    if let Some(cfg) = &a.config {
        let config = load_config(cfg)?;
        if config.fixtures.is_empty() {
            return Err(config_err(anyhow!(
                "{} declares no fixtures",
                cfg.display()
            )));
        }
        fs::create_dir_all(&a.out).map_err(stage_err)?;
        for f in &config.fixtures {
            let path = a.out.join(format!("{}.zip", f.name));
            generate_fixture(&f.spec, f.seed ^ a.seed, &path).map_err(stage_err)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(config_err)?;
            FixtureSpec::from_toml(&text).map_err(config_err)?
        }
        None => match a.provider {
            Provider::Instagram => FixtureSpec::Instagram(InstagramSpec::default()),
            Provider::Google => FixtureSpec::GoogleTakeout(GoogleSpec::default()),
        },
    };
    let truth = generate_fixture(&spec, a.seed, &a.out).map_err(|e| match e {
        ddp_core::fixture::FixtureError::Spec(_) => config_err(e),
        other => stage_err(other),
    })?;
    println!(
        "{} ({} media, {} pings, {} traps, sha256 {})",
        a.out.display(),
        truth.media.len(),
        truth.pings.len(),
        truth.traps.len(),
        truth.archive_sha256
    );
    Ok(())
}

fn parse_cmd(a: ParseArgs) -> Outcome {
    let owner = Pseudonym::derive(&a.study_id, &a.respondent);
    let opts = PipelineOptions {
        expected_schema: a.schema_version,
    };
    let parsed = parse_archives(&a.archives, &owner, &opts).map_err(stage_err)?;
    for (s, r) in parsed.archives.iter().zip(&parsed.reports) {
        println!(
            "{}: {} {} emitted={} flagged={} dropped={} deduplicated={}",
            s.path,
            s.provider,
            s.schema_version.as_deref().unwrap_or("-"),
            r.emitted,
            r.flagged,
            r.dropped,
            r.deduplicated
        );
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({ "archives": parsed.archives, "reports": parsed.reports }),
        )?;
    }
    Ok(())
}

fn transform_cmd(a: TransformArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let owner = Pseudonym::derive(&config.study_id, &a.respondent);
    let opts = PipelineOptions {
        expected_schema: a.schema_version,
    };
    let out = run_pipeline(&a.archives, &config, &owner, &opts).map_err(stage_err)?;
    let file = fs::File::create(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(stage_err)?;
    write_records_csv(&out.records, file).map_err(stage_err)?;
    for (v, n) in &out.report.records_by_variable {
        println!("{v}: {n} record(s)");
    }
    for e in &out.report.transform.algorithmic_errors {
        println!("  algorithmic error: {e}");
    }
    if let Some(d) = &out.report.denseness {
        println!(
            "denseness: {}",
            if d.passed() { "passed" } else { "FAILED" }
        );
    }
    if let Some(path) = &a.report {
        write_json(path, &EvidenceFile::Pipeline(out.report))?;
    }
    Ok(())
}

fn consent_serve(a: ServeArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let file = fs::File::open(&a.store)
        .with_context(|| format!("opening {}", a.store.display()))
        .map_err(stage_err)?;
    let records = read_records_csv(file).map_err(stage_err)?;
    let workdir = std::env::current_dir().map_err(stage_err)?;
    let mut artifacts = LocalArtifacts::new(&workdir);
    artifacts.derived.push(a.store.clone());
    artifacts.archives.extend(a.archives.iter().cloned());
    let session = ConsentSession::start(&config.study_id, records, &config.registry(), artifacts)
        .map_err(config_err)?;
    let mut server = ConsentServer::bind(session, a.port).map_err(stage_err)?;
    if let Some(p) = &a.package_out {
        server = server.with_package_out(p.clone());
    }
    println!("listening on http://{}", server.addr());
    let _ = std::io::stdout().flush();
    let session = server.serve();
    println!(
        "session {} ended in state {:?}",
        session.id(),
        session.state()
    );
    if let Some(path) = &a.report {
        write_json(
            path,
            &EvidenceFile::Consent(ConsentEvidence::from_session(&session)),
        )?;
    }
    Ok(())
}

fn package_verify(packages: Vec<PathBuf>) -> Outcome {
    let mut failed = 0;
    for p in &packages {
        match DonationPackage::read(p) {
            Ok(pkg) => println!(
                "ok {} study={} pseudonym={} records={} checksum={}",
                p.display(),
                pkg.study_id,
                pkg.owner,
                pkg.records.len(),
                pkg.checksum()
            ),
            Err(e) => {
                failed += 1;
                println!("FAILED {e}");
            }
        }
    }
    if failed > 0 {
        return Err(stage_err(anyhow!(
            "{failed} of {} package(s) failed verification",
            packages.len()
        )));
    }
    Ok(())
}

fn finish_link(out: IngestOutput, csv: &Path, report: Option<&Path>) -> Outcome {
    let file = fs::File::create(csv)
        .with_context(|| format!("creating {}", csv.display()))
        .map_err(stage_err)?;
    out.dataset.write_csv(file).map_err(stage_err)?;
    println!("{}", out.report.link.render());
    println!("{}", out.report.validation.render());
    for n in &out.report.notes {
        println!("note: {n}");
    }
    if let Some(path) = report {
        write_json(path, &EvidenceFile::Ingest(out.report))?;
    }
    Ok(())
}

fn ingest_cmd(a: IngestArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let out = ingest(&a.packages, &config).map_err(stage_err)?;
    finish_link(out, &a.out, a.report.as_deref())
}

fn link_cmd(a: LinkArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let mut sources = Vec::with_capacity(a.sources.len());
    for (name, path) in &a.sources {
        let file = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .map_err(stage_err)?;
        let records = read_records_csv(file)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(stage_err)?;
        sources.push(RecordSource::new(name.clone(), records));
    }
    let out = link_stores(&sources, &config).map_err(stage_err)?;
    finish_link(out, &a.out, a.report.as_deref())
}

fn parse_matrix(text: &str) -> anyhow::Result<ConfusionMatrix> {
    let rows = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConfusionMatrix::from_rows(&rows)?)
}

fn correct_cmd(a: CorrectArgs) -> Outcome {
    let cm = match (&a.matrix, a.sensitivity, a.specificity) {
        (Some(m), _, _) => parse_matrix(m).map_err(config_err)?,
        (None, Some(se), Some(sp)) => ConfusionMatrix::binary(se, sp).map_err(config_err)?,
        _ => {
            return Err(config_err(anyhow!(
                "give --matrix or --sensitivity with --specificity"
            )))
        }
    };
    let observed = CountVector::new(a.observed).map_err(config_err)?;
    let c = correct_counts(&observed, &cm).map_err(stage_err)?;
    println!("{}", serde_json::to_string(&c).map_err(stage_err)?);
    if !c.is_feasible() {
        eprintln!(
            "warning: classes {:?} corrected below zero; rates and counts disagree",
            c.infeasible
        );
    }
    Ok(())
}

fn weights_cmd(a: WeightArgs) -> Outcome {
    let frame: BTreeMap<String, u64> = a.frame.into_iter().collect();
    let resp: BTreeMap<String, u64> = a.respondents.into_iter().collect();
    let w = poststrat_weights(&resp, &frame).map_err(config_err)?;
    println!("stratum,frame_count,respondents,weight");
    for s in &w.strata {
        let weight = s.weight.map(|x| x.to_string()).unwrap_or_default();
        println!("{},{},{},{weight}", s.stratum, s.frame_count, s.respondents);
    }
    println!("# total {} calibrated {}", w.total(), w.is_calibrated());
    Ok(())
}

fn load_funnel(path: &Path) -> Result<FunnelConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    match FunnelConfig::from_toml(&text) {
        Ok(c) => Ok(c),
        Err(direct) => match StudyConfig::from_toml(&text) {
            Ok(StudyConfig {
                funnel: Some(f), ..
            }) => Ok(f),
            _ => Err(config_err(direct)),
        },
    }
}

fn funnel_cmd(a: FunnelArgs) -> Outcome {
    let mut config = load_funnel(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.replications == 0 {
        return Err(config_err(anyhow!("--replications must be positive")));
    }
    let results = run_replications(&config, a.replications).map_err(stage_err)?;
    let ledgers: Vec<_> = results.iter().map(decompose_errors).collect();
    println!("{}", ledgers[0].render_report());
    let summary = MonteCarloSummary::from_ledgers(&ledgers).expect("at least one replication");
    print!("{}", summary.to_csv());
    if let Some(out) = &a.out {
        write_text(out, &summary.to_csv())?;
    }
    if let Some(path) = &a.report {
        write_json(
            path,
            &EvidenceFile::Funnel(FunnelEvidence::from_run(&config, &results)),
        )?;
    }
    Ok(())
}

fn checklist_cmd(a: ChecklistArgs) -> Outcome {
    let config = load_config(&a.config)?;
    let mut evidence = Evidence::default();
    for p in &a.evidence {
        evidence.load(p).map_err(|e| config_err(anyhow!(e)))?;
    }
    let report = report_checklist(&config, &evidence);
    print!("{}", report.render());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.strict && report.count(ddp_core::study::ItemStatus::Fail) > 0 {
        return Err(stage_err(anyhow!("automated checklist items failed")));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(dir) = &cli.workdir {
        std::env::set_current_dir(dir)
            .with_context(|| format!("working directory {}", dir.display()))
            .map_err(config_err)?;
    }
    match cli.command {
        Command::Fixture {
            action: FixtureAction::Gen(a),
        } => fixture_gen(a),
        Command::Parse(a) => parse_cmd(a),
        Command::Transform(a) => transform_cmd(a),
        Command::Consent {
            action: ConsentAction::Serve(a),
        } => consent_serve(a),
        Command::Package {
            action: PackageAction::Verify { packages },
        } => package_verify(packages),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Link(a) => link_cmd(a),
        Command::CorrectCounts(a) => correct_cmd(a),
        Command::Weights(a) => weights_cmd(a),
        Command::SimulateFunnel(a) => funnel_cmd(a),
        Command::Checklist(a) => checklist_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
