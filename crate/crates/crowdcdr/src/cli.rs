//! Command-line front end.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use crowdcdr_core::attendance::AttendanceError;
use crowdcdr_core::geo::unproject_local;
use crowdcdr_core::logistic::{FitError, LogisticFit, WALD_Z95};
use crowdcdr_core::math::two_sided_normal_p;
use crowdcdr_core::model::{Day, EventDefect, StateCode, StateTable, TowerId, TowerSite};
use crowdcdr_core::observe::count_unique_handsets;
use crowdcdr_core::pipeline::{
    run_attendance, run_social, run_spatial, Accumulator, AnalysisConfig, AttendanceReport, PipelineError,
    SocialReport, SpatialStage,
};
use crowdcdr_core::sbm::{bias_curve, estimate_block_probs, group_structure_demo, monte_carlo_bias, BlockEstimates};
use crowdcdr_core::spatial::{
    mean_log_representation, permutation_p_value, PeakMode, StateSpatial, MIN_BOOTSTRAP_REPLICATES,
};
use crowdcdr_core::synth::{generate, ScenarioConfig, Synthetic};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::io::{self as files, CdrReader, IngestError, InputPaths, ParseStats};
use crate::manifest::RunManifest;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(
    name = "crowdcdr",
    version,
    about = "Crowd attendance, social and spatial clustering from call-detail records"
)]
pub struct Cli {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding cdr.csv, towers.csv, market_shares.csv and projections.csv.
    #[arg(long, global = true, default_value = "data")]
    pub input_dir: PathBuf,
    #[arg(long, global = true, default_value = "out")]
    pub output_dir: PathBuf,
    /// Drop the host state from the social network (on by default).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub exclude_local: Option<bool>,
    #[arg(long, global = true, value_enum)]
    pub peak_mode: Option<PeakModeArg>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(MIN_BOOTSTRAP_REPLICATES as u64..))]
    pub bootstrap_replicates: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeakModeArg {
    Data,
    Calendar,
}

impl From<PeakModeArg> for PeakMode {
    fn from(m: PeakModeArg) -> Self {
        match m {
            PeakModeArg::Data => PeakMode::Data,
            PeakModeArg::Calendar => PeakMode::Calendar,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into the output directory.
    Gen {
        /// Full scenario TOML; the bundled scenario is used when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Parse and validate the inputs; write counts and daily handsets.
    Ingest,
    /// Attendance series, calibration and sensitivity tables.
    Attendance,
    /// Triple census and closure regression.
    Social,
    /// Cells and co-location report.
    Spatial,
    /// Block densities and the group-structure bias.
    Sbm,
    /// Every stage plus summary.json.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Ingest => "ingest",
            Command::Attendance => "attendance",
            Command::Social => "social",
            Command::Spatial => "spatial",
            Command::Sbm => "sbm",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Analysis(String),
    #[error("{0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Analysis(_) => "analysis",
            CliError::Output(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Analysis(_) => 4,
            CliError::Output(_) => 1,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn pipeline_error(e: PipelineError, paths: &InputPaths) -> CliError {
    let named = |p: &Path, e: &dyn std::fmt::Display| CliError::Data(format!("{}: {e}", p.display()));
    match &e {
        PipelineError::NoObservations => named(&paths.cdr, &e),
        PipelineError::Geo(g) => named(&paths.towers, g),
        PipelineError::Attendance(a @ AttendanceError::MissingMarketShare(_)) => named(&paths.market_shares, a),
        PipelineError::Attendance(a @ AttendanceError::NoProjectionOverlap) => named(&paths.projections, a),
        PipelineError::Attendance(a @ AttendanceError::InvalidFactor { .. }) => CliError::Usage(a.to_string()),
        _ => CliError::Analysis(e.to_string()),
    }
}

fn fit_error(e: &FitError) -> CliError {
    CliError::Analysis(format!("closure regression: {e}"))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(manifest) => {
            println!("{}: wrote {} files to {}", manifest.command, manifest.outputs.len(), cli.output_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}

/// Effective configuration: file (or defaults) with flags applied.
pub fn settings(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.exclude_local {
        cfg.social.exclude_local = b;
    }
    if let Some(m) = cli.peak_mode {
        cfg.spatial.peak_mode = m.into();
    }
    if let Some(r) = cli.bootstrap_replicates {
        cfg.spatial.bootstrap_replicates = r as usize;
    }
    if cfg.spatial.bootstrap_replicates < MIN_BOOTSTRAP_REPLICATES {
        return Err(CliError::Usage(format!(
            "bootstrap_replicates {} below the minimum {MIN_BOOTSTRAP_REPLICATES}",
            cfg.spatial.bootstrap_replicates
        )));
    }
    if !(0.0..=1.0).contains(&cfg.ingest.parse_tolerance) {
        return Err(CliError::Usage(format!("parse_tolerance {} outside [0, 1]", cfg.ingest.parse_tolerance)));
    }
    Ok(cfg)
}

/// Runs a parsed command and writes its manifest.
pub fn execute(cli: &Cli) -> Result<RunManifest, CliError> {
    let cfg = settings(cli)?;
    let mut manifest = RunManifest::new(
        cli.command.name(),
        cfg.seed,
        cfg.digest(),
        cli.config.as_ref().map(|p| p.display().to_string()),
    );
    if let Some(p) = &cli.config {
        manifest.input(p)?;
    }
    std::fs::create_dir_all(&cli.output_dir)?;
    let result = match &cli.command {
        Command::Gen { scenario } => gen(cli, &cfg, scenario.as_deref(), &mut manifest),
        command => analyze(cli, &cfg, command, &mut manifest),
    };
    // The manifest is written even when an analysis step fails after
    // producing some tables.
    manifest.write(&cli.output_dir)?;
    result.map(|()| manifest)
}

struct Out<'a> {
    dir: &'a Path,
    manifest: &'a mut RunManifest,
}

impl Out<'_> {
    fn table<S: AsRef<[u8]>>(
        &mut self,
        name: &str,
        source: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<S>>,
    ) -> io::Result<()> {
        files::write_table(&self.dir.join(name), header, rows)?;
        self.manifest.output(self.dir, name, source)
    }

    fn text(&mut self, name: &str, source: &str, text: &str) -> io::Result<()> {
        std::fs::write(self.dir.join(name), text)?;
        self.manifest.output(self.dir, name, source)
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn gen(cli: &Cli, cfg: &RunConfig, scenario: Option<&Path>, manifest: &mut RunManifest) -> Result<(), CliError> {
    let sc = match scenario {
        Some(p) => {
            manifest.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let mut sc: ScenarioConfig =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            sc
        }
        None => cfg.scenario.scenario(cfg.seed, cfg.window),
    };
    let syn = manifest.time("generate", || generate(&sc)).map_err(|e| CliError::Usage(format!("scenario: {e}")))?;
    let dir = cli.output_dir.as_path();
    manifest.time("write", || files::write_dataset(dir, &syn.events, &syn.towers, &syn.states, &syn.projections))?;
    let mut out = Out { dir, manifest };
    for (name, source) in [
        (files::CDR_FILE, "synth::generate"),
        (files::TOWERS_FILE, "synth::generate"),
        (files::MARKET_SHARES_FILE, "synth::generate"),
        (files::PROJECTIONS_FILE, "synth::emit_projections"),
    ] {
        out.manifest.output(dir, name, source)?;
    }
    let scenario_text = toml::to_string(&sc).map_err(io::Error::other)?;
    out.text("scenario.toml", "synth::ScenarioConfig", &scenario_text)?;
    out.text("truth.json", "synth::GroundTruth", &pretty(&truth_json(&syn))?)?;
    Ok(())
}

fn pretty(v: &Value) -> io::Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(io::Error::other)
}

fn state_key(s: StateCode) -> String {
    s.to_string()
}

fn truth_json(syn: &Synthetic) -> Value {
    let t = &syn.truth;
    let by_state = |m: &BTreeMap<StateCode, f64>| -> Value {
        Value::Object(m.iter().map(|(s, v)| (state_key(*s), json!(v))).collect())
    };
    json!({
        "events": syn.events.len(),
        "persons_present": t.attendees_by_state.values().sum::<u64>(),
        "beta0": t.beta0,
        "beta1": t.beta1,
        "non_use": t.non_use,
        "daily_use": t.daily_use,
        "peak_days": t.peak_days,
        "representation": by_state(&t.representation),
        "q_targets": by_state(&t.q_targets),
        "theta": by_state(&t.theta),
        "planted_edges": t.edges.len(),
        "groups": t.groups.len(),
        "daily_attendance": t.daily.iter().map(|(d, v)| json!([d, v])).collect::<Vec<_>>(),
        "cumulative_attendance": t.cumulative.iter().map(|(d, v)| json!([d, v])).collect::<Vec<_>>(),
    })
}

/// Inputs after one streaming pass over the record file.
pub struct Loaded {
    pub paths: InputPaths,
    pub states: StateTable,
    pub towers: Vec<TowerSite>,
    pub projections: BTreeMap<Day, f64>,
    pub acc: Accumulator,
    pub parse: ParseStats,
}

pub fn load(dir: &Path, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<Loaded, CliError> {
    let paths = InputPaths::in_dir(dir);
    let states = files::load_market_shares(&paths.market_shares)?;
    let towers = files::load_towers(&paths.towers)?;
    let projections = files::load_projections(&paths.projections)?;
    let known: BTreeSet<TowerId> = towers.iter().map(|t| t.id).collect();
    let window = cfg.window;
    let (acc, parse) = manifest.time("ingest", || -> Result<_, IngestError> {
        let mut reader = CdrReader::open(&paths.cdr, &cfg.ingest.schema, cfg.parse_options())?;
        let mut acc = Accumulator::default();
        while let Some(e) = reader.next_event()? {
            acc.observe(&e, &window, |t| known.contains(&t));
        }
        Ok((acc, reader.finish()?))
    })?;
    for p in [&paths.cdr, &paths.towers, &paths.market_shares, &paths.projections] {
        if p.exists() {
            manifest.input(p)?;
        }
    }
    Ok(Loaded { paths, states, towers, projections, acc, parse })
}

fn analyze(cli: &Cli, cfg: &RunConfig, command: &Command, manifest: &mut RunManifest) -> Result<(), CliError> {
    let data = load(&cli.input_dir, cfg, manifest)?;
    let acfg = cfg.analysis();
    let mut out = Out { dir: &cli.output_dir, manifest };
    let all = matches!(command, Command::Report);

    if matches!(command, Command::Ingest) || all {
        write_ingest(&mut out, &data)?;
    }
    if matches!(command, Command::Ingest) {
        return Ok(());
    }
    if matches!(command, Command::Sbm) || all {
        write_sbm(&mut out, &data, cfg)?;
    }
    if matches!(command, Command::Sbm) {
        return Ok(());
    }

    let attendance = out
        .manifest
        .time("attendance", || run_attendance(&data.acc, &data.states, &data.projections, &acfg))
        .map_err(|e| pipeline_error(e, &data.paths))?;
    if matches!(command, Command::Attendance) || all {
        write_attendance(&mut out, &data, &attendance)?;
    }

    let mut social = None;
    if matches!(command, Command::Social) || all {
        let (report, _) = out
            .manifest
            .time("social", || run_social(&data.acc, &data.states, &attendance.series.representation, &acfg));
        write_social(&mut out, &data.states, &attendance, &report)?;
        social = Some(report);
    }

    let mut spatial = None;
    if matches!(command, Command::Spatial) || all {
        let stage = out
            .manifest
            .time("spatial", || run_spatial(&data.acc, &data.towers, &attendance, &acfg))
            .map_err(|e| pipeline_error(e, &data.paths))?;
        write_spatial(&mut out, &data, &attendance, &stage, cfg)?;
        spatial = Some(stage);
    }

    if all {
        let summary = summary_json(&data, &acfg, &attendance, social.as_ref().unwrap(), spatial.as_ref().unwrap(), cfg);
        out.text(SUMMARY_FILE, "pipeline::analyze", &pretty(&summary)?)?;
    }
    if let Some(Err(e)) = social.as_ref().map(|s| &s.fit) {
        return Err(fit_error(e));
    }
    Ok(())
}

fn defect_name(d: EventDefect) -> &'static str {
    match d {
        EventDefect::TextWithDuration => "rejected_text_with_duration",
        EventDefect::OutsideWindow => "rejected_outside_window",
        EventDefect::NoCustomer => "rejected_no_customer",
        EventDefect::UnknownTower => "rejected_unknown_tower",
    }
}

const DEFECTS: [EventDefect; 4] =
    [EventDefect::TextWithDuration, EventDefect::OutsideWindow, EventDefect::NoCustomer, EventDefect::UnknownTower];

fn ingest_counts(data: &Loaded) -> Vec<(&'static str, u64)> {
    let mut rows = vec![("rows", data.parse.rows), ("malformed", data.parse.malformed)];
    for d in DEFECTS {
        let n = data.parse.rejected.get(&d).copied().unwrap_or(0) + data.acc.rejected.get(&d).copied().unwrap_or(0);
        rows.push((defect_name(d), n));
    }
    rows.push(("accepted", data.acc.accepted));
    rows.push(("daily_observations", data.acc.first_use.len() as u64));
    rows.push(("towers", data.towers.len() as u64));
    rows
}

fn write_ingest(out: &mut Out, data: &Loaded) -> io::Result<()> {
    out.table(
        "ingest_counts.csv",
        "ingest::parse_cdr",
        &["quantity", "count"],
        ingest_counts(data).into_iter().map(|(k, v)| vec![k.to_owned(), v.to_string()]),
    )?;
    let handsets = count_unique_handsets(&data.acc.first_use.observations());
    out.table(
        "handsets.csv",
        "observe::count_unique_handsets",
        &["state", "day", "handsets"],
        handsets.iter().map(|((s, d), n)| vec![s.to_string(), d.to_string(), n.to_string()]),
    )
}

fn write_attendance(out: &mut Out, data: &Loaded, a: &AttendanceReport) -> io::Result<()> {
    let f = &a.series.factors;
    let mut params = vec![
        ("prevalence", num(f.prevalence), "config"),
        ("daily_use", num(f.daily_use), "attendance::estimate_daily_use"),
        ("daily_use_span", opt(a.daily_use.span), "attendance::estimate_daily_use"),
        ("daily_use_interior", opt(a.daily_use.interior), "attendance::estimate_daily_use_interior"),
        ("stays", a.daily_use.stays.to_string(), "observe::stays"),
        ("non_use", num(f.non_use), if a.calibration.is_some() { "attendance::calibrate_non_use" } else { "config" }),
        (
            "cumulative_attendance",
            num(a.series.cumulative.values().next_back().copied().unwrap_or(0.0)),
            "attendance::cumulative_attendance",
        ),
        ("uncorrected_cumulative_attendance", num(a.uncorrected_cumulative), "attendance::cumulative_attendance"),
        ("persons", a.persons.to_string(), "observe::dedupe_daily"),
    ];
    if let Some(c) = &a.calibration {
        params.push(("calibration_scale", num(c.scale), "attendance::calibrate_non_use"));
        params.push(("calibration_days", c.days_used.len().to_string(), "attendance::calibrate_non_use"));
        if let Some(w) = c.warning {
            params.push(("calibration_warning", format!("{w:?}"), "attendance::calibrate_non_use"));
        }
    }
    out.table(
        "attendance_parameters.csv",
        "pipeline::run_attendance",
        &["parameter", "value", "source"],
        params.into_iter().map(|(k, v, s)| vec![k.to_owned(), v, s.to_owned()]),
    )?;

    let mut handsets_per_day: BTreeMap<Day, u64> = BTreeMap::new();
    for (&(_, d), &n) in &a.handsets {
        *handsets_per_day.entry(d).or_default() += n;
    }
    let days: Vec<Day> = data
        .projections
        .keys()
        .chain(a.series.cumulative.keys())
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let day_rows = |d: &Day| {
        vec![
            d.to_string(),
            handsets_per_day.get(d).copied().unwrap_or(0).to_string(),
            opt(a.base_daily.get(d).copied()),
            opt(a.series.daily.get(d).copied()),
            opt(a.series.cumulative.get(d).copied()),
            opt(data.projections.get(d).copied()),
        ]
    };
    out.table(
        "attendance_daily.csv",
        "attendance::attendance_series",
        &["day", "handsets", "estimate_without_non_use", "estimate", "cumulative", "projection"],
        days.iter().map(day_rows),
    )?;
    out.table(
        "attendance_by_state.csv",
        "attendance::state_representation",
        &["state", "name", "market_share", "is_local", "cumulative", "representation"],
        data.states.iter().map(|p| {
            vec![
                p.code.to_string(),
                p.name.clone(),
                num(p.market_share),
                p.is_local.to_string(),
                opt(a.series.by_state_cumulative.get(&p.code).copied()),
                opt(a.series.representation.get(&p.code).copied()),
            ]
        }),
    )?;
    let data_curve: BTreeMap<u64, f64> = a.censoring_sensitivity.iter().map(|&(q, v)| (q.to_bits(), v)).collect();
    out.table(
        "sensitivity.csv",
        "attendance::sensitivity_curve",
        &["non_use", "fixed_constant_total", "data_total"],
        a.sensitivity.iter().map(|&(q, v)| vec![num(q), num(v), opt(data_curve.get(&q.to_bits()).copied())]),
    )?;

    out.table(
        "plot_daily_attendance.csv",
        "attendance::attendance_series",
        &["day", "estimate", "projection"],
        days.iter()
            .map(|d| vec![d.to_string(), opt(a.series.daily.get(d).copied()), opt(data.projections.get(d).copied())]),
    )?;
    out.table(
        "plot_cumulative_attendance.csv",
        "attendance::cumulative_attendance",
        &["day", "cumulative"],
        a.series.cumulative.iter().map(|(d, v)| vec![d.to_string(), num(*v)]),
    )?;
    out.table(
        "plot_sensitivity.csv",
        "attendance::sensitivity_curve",
        &["non_use", "total"],
        a.sensitivity.iter().map(|&(q, v)| vec![num(q), num(v)]),
    )
}

fn fit_rows(fit: &LogisticFit) -> Vec<Vec<String>> {
    let z0 = fit.beta0 / fit.se0;
    vec![
        vec![
            "intercept".into(),
            num(fit.beta0),
            num(fit.se0),
            num(fit.beta0 - WALD_Z95 * fit.se0),
            num(fit.beta0 + WALD_Z95 * fit.se0),
            num(two_sided_normal_p(z0)),
            num(fit.n_obs),
        ],
        vec![
            "log10_representation".into(),
            num(fit.beta1),
            num(fit.se1),
            num(fit.ci1.0),
            num(fit.ci1.1),
            num(fit.p_value),
            num(fit.n_obs),
        ],
    ]
}

fn write_social(out: &mut Out, states: &StateTable, a: &AttendanceReport, s: &SocialReport) -> io::Result<()> {
    let mut sampled: BTreeMap<StateCode, (u64, u64)> = BTreeMap::new();
    for &(closed, _, st) in &s.sample {
        let e = sampled.entry(st).or_default();
        e.0 += 1;
        e.1 += closed as u64;
    }
    let codes: BTreeSet<StateCode> = s.census.per_state.keys().chain(sampled.keys()).copied().collect();
    out.table(
        "triples.csv",
        "social::census_triples",
        &[
            "state",
            "name",
            "representation",
            "closed",
            "open",
            "node_sets",
            "center_paths",
            "transitivity",
            "closed_fraction",
            "sampled",
            "sampled_closed",
        ],
        codes.iter().map(|&c| {
            let t = s.census.get(c);
            let (n, k) = sampled.get(&c).copied().unwrap_or_default();
            vec![
                c.to_string(),
                states.get(c).map(|p| p.name.clone()).unwrap_or_default(),
                opt(a.series.representation.get(&c).copied()),
                t.closed.to_string(),
                t.open.to_string(),
                t.node_sets().to_string(),
                t.center_paths().to_string(),
                opt(t.transitivity()),
                opt(t.closed_fraction()),
                n.to_string(),
                k.to_string(),
            ]
        }),
    )?;
    let header = ["term", "estimate", "se", "ci_lo", "ci_hi", "p_value", "n"];
    match &s.fit {
        Ok(fit) => out.table("closure_fit.csv", "logistic::fit_logistic", &header, fit_rows(fit)),
        Err(_) => out.table("closure_fit.csv", "logistic::fit_logistic", &header, Vec::<Vec<String>>::new()),
    }
}

fn ranked_rows(
    report: &BTreeMap<StateCode, StateSpatial>,
    rep: &BTreeMap<StateCode, f64>,
    states: &StateTable,
    value: impl Fn(&StateSpatial) -> (Option<f64>, Option<(f64, f64)>),
) -> Vec<Vec<String>> {
    let mut rows: Vec<(f64, StateCode)> = report.keys().filter_map(|s| rep.get(s).map(|&r| (r, *s))).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (r, s))| {
            let (v, ci) = value(&report[&s]);
            vec![
                (i + 1).to_string(),
                s.to_string(),
                states.get(s).map(|p| p.name.clone()).unwrap_or_default(),
                num(r),
                opt(v),
                opt(ci.map(|c| c.0)),
                opt(ci.map(|c| c.1)),
            ]
        })
        .collect()
}

/// Permutation p-value for the correlation between a per-state value and
/// mean log representation.
fn correlation_p(
    values: &BTreeMap<StateCode, f64>,
    rep: &BTreeMap<StateCode, f64>,
    permutations: usize,
    seed: u64,
) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = values.iter().filter_map(|(s, &v)| rep.get(s).map(|&r| (v, r))).unzip();
    if x.len() < 3 || permutations == 0 {
        return None;
    }
    permutation_p_value(&x, &y, permutations, seed)
}

fn write_spatial(
    out: &mut Out,
    data: &Loaded,
    a: &AttendanceReport,
    st: &SpatialStage,
    cfg: &RunConfig,
) -> io::Result<()> {
    let r = &st.report;
    let rep = mean_log_representation(&crowdcdr_core::attendance::daily_representation(&a.series.by_state_daily));
    let name = |s: StateCode| data.states.get(s).map(|p| p.name.clone()).unwrap_or_default();
    out.table(
        "spatial_report.csv",
        "spatial::spatial_report",
        &[
            "state",
            "name",
            "mean_log10_representation",
            "q_a",
            "q_a_ci_lo",
            "q_a_ci_hi",
            "q_h",
            "q_l",
            "q_d",
            "q_d_ci_lo",
            "q_d_ci_hi",
            "days_defined",
        ],
        r.per_state.iter().map(|(&s, v)| {
            vec![
                s.to_string(),
                name(s),
                opt(rep.get(&s).copied()),
                opt(v.estimates.q_a),
                opt(v.ci_a.map(|c| c.lo)),
                opt(v.ci_a.map(|c| c.hi)),
                opt(v.estimates.q_h),
                opt(v.estimates.q_l),
                opt(v.estimates.q_d),
                opt(v.ci_d.map(|c| c.lo)),
                opt(v.ci_d.map(|c| c.hi)),
                v.estimates.days_defined.to_string(),
            ]
        }),
    )?;
    let perms = cfg.spatial.permutations;
    out.table(
        "spatial_correlations.csv",
        "spatial::correlate",
        &["measure", "rho", "permutation_p_value", "states"],
        [("q_a", r.rho_a, r.q_a()), ("q_d", r.rho_d, r.q_d())].into_iter().map(|(m, rho, values)| {
            vec![
                m.to_owned(),
                opt(rho),
                opt(correlation_p(&values, &rep, perms, cfg.seed)),
                values.keys().filter(|s| rep.contains_key(s)).count().to_string(),
            ]
        }),
    )?;
    let class = |d: Day| {
        if r.partition.peaks.contains(&d) {
            "peak"
        } else if r.partition.high.contains(&d) {
            "high"
        } else {
            "low"
        }
    };
    out.table(
        "day_partition.csv",
        "spatial::partition_days",
        &["day", "class", "estimate"],
        cfg.window.day_range().map(|d| vec![d.to_string(), class(d).to_owned(), opt(a.series.daily.get(&d).copied())]),
    )?;
    out.table(
        "cells.csv",
        "geo::Tessellation::build",
        &["tower_id", "area_km2", "polygon_local_km"],
        st.tessellation.cells().iter().map(|c| vec![c.tower.to_string(), num(c.area), c.wkt()]),
    )?;

    let mut per_cell: BTreeMap<TowerId, u64> = BTreeMap::new();
    for cells in st.colocation.cells.values() {
        for (&t, &n) in cells {
            *per_cell.entry(t).or_default() += n;
        }
    }
    let origin = st.tessellation.origin();
    out.table(
        "plot_cells.csv",
        "geo::Tessellation::build",
        &["tower_id", "latitude", "longitude", "area_km2", "observations", "observations_per_km2"],
        st.tessellation.cells().iter().map(|c| {
            let site = st.tessellation.site(c.tower).map(|p| unproject_local(p, origin));
            let n = per_cell.get(&c.tower).copied().unwrap_or(0);
            vec![
                c.tower.to_string(),
                opt(site.map(|s| s.lat)),
                opt(site.map(|s| s.lon)),
                num(c.area),
                n.to_string(),
                num(n as f64 / c.area),
            ]
        }),
    )?;
    let header = ["rank", "state", "name", "mean_log10_representation", "value", "ci_lo", "ci_hi"];
    out.table(
        "plot_q_all_days.csv",
        "spatial::spatial_report",
        &header,
        ranked_rows(&r.per_state, &rep, &data.states, |v| (v.estimates.q_a, v.ci_a.map(|c| (c.lo, c.hi)))),
    )?;
    out.table(
        "plot_q_peak_ratio.csv",
        "spatial::spatial_report",
        &header,
        ranked_rows(&r.per_state, &rep, &data.states, |v| (v.estimates.q_d, v.ci_d.map(|c| (c.lo, c.hi)))),
    )
}

fn write_blocks(out: &mut Out, blocks: &BlockEstimates, states: &StateTable) -> io::Result<()> {
    let mut rows: Vec<Vec<String>> = blocks
        .per_state
        .iter()
        .map(|(s, b)| {
            vec![
                s.to_string(),
                states.get(*s).map(|p| p.name.clone()).unwrap_or_default(),
                b.n.to_string(),
                b.edges.to_string(),
                num(b.p),
            ]
        })
        .collect();
    rows.push(vec!["all".into(), String::new(), String::new(), String::new(), opt(blocks.baseline)]);
    out.table("sbm_blocks.csv", "sbm::estimate_block_probs", &["state", "name", "nodes", "edges", "p"], rows)
}

fn write_sbm(out: &mut Out, data: &Loaded, cfg: &RunConfig) -> io::Result<()> {
    let net = data.acc.network.build(&data.states, cfg.social.exclude_local);
    write_blocks(out, &estimate_block_probs(&net), &data.states)?;
    let s = &cfg.sbm;
    let curve = out.manifest.time("sbm_bias", || {
        bias_curve(&s.group_counts, s.group_size, s.p_in, s.p_out)
            .into_iter()
            .map(|(g, exact)| {
                let (mean, se) =
                    monte_carlo_bias(g, s.group_size, s.p_in, s.p_out, s.monte_carlo_replicates, cfg.seed ^ g);
                vec![g.to_string(), s.group_size.to_string(), num(exact), num(mean), num(se)]
            })
            .collect::<Vec<_>>()
    });
    out.table(
        "sbm_bias_curve.csv",
        "sbm::group_structure_bias",
        &["groups", "group_size", "expected_density", "monte_carlo_mean", "monte_carlo_se"],
        curve,
    )?;
    let demo = out.manifest.time("sbm_demo", || group_structure_demo(&s.demo(cfg.seed)));
    let rows = [
        ("density_a", demo.p_a),
        ("density_b", demo.p_b),
        ("density_ratio", demo.density_ratio()),
        ("closed_fraction_a", demo.triples_a.closed_fraction().unwrap_or(f64::NAN)),
        ("closed_fraction_b", demo.triples_b.closed_fraction().unwrap_or(f64::NAN)),
        ("closure_z", demo.closure_z),
        ("closure_p_value", demo.closure_p_value),
    ];
    out.table(
        "sbm_demo.csv",
        "sbm::group_structure_demo",
        &["quantity", "value"],
        rows.into_iter().map(|(k, v)| vec![k.to_owned(), num(v)]),
    )
}

fn summary_json(
    data: &Loaded,
    acfg: &AnalysisConfig,
    a: &AttendanceReport,
    s: &SocialReport,
    sp: &SpatialStage,
    cfg: &RunConfig,
) -> Value {
    let peak = a.series.daily.iter().max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(x.0)));
    let fit = match &s.fit {
        Ok(f) => json!({
            "beta0": f.beta0, "beta1": f.beta1, "se1": f.se1, "ci1": [f.ci1.0, f.ci1.1],
            "p_value": f.p_value, "n": f.n_obs, "odds_ratio_per_decade": f.odds_ratio_per_decade,
            "iterations": f.iterations, "max_abs_score": f.max_abs_score,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let per_state: Vec<Value> = sp
        .report
        .per_state
        .iter()
        .map(|(st, v)| {
            json!({
                "state": st.get(),
                "q_a": v.estimates.q_a, "q_a_ci": v.ci_a.map(|c| [c.lo, c.hi]),
                "q_h": v.estimates.q_h, "q_l": v.estimates.q_l,
                "q_d": v.estimates.q_d, "q_d_ci": v.ci_d.map(|c| [c.lo, c.hi]),
            })
        })
        .collect();
    json!({
        "seed": cfg.seed,
        "events": { "accepted": data.acc.accepted, "rejected": data.acc.rejected_total() + data.parse.rejected_total(), "malformed": data.parse.malformed },
        "attendance": {
            "prevalence": a.series.factors.prevalence,
            "daily_use": a.series.factors.daily_use,
            "non_use": a.series.factors.non_use,
            "non_use_calibrated": a.calibration.is_some(),
            "cumulative": a.series.cumulative.values().next_back(),
            "peak_day": peak.map(|p| p.0),
            "peak_daily": peak.map(|p| p.1),
            "daily": a.series.daily.iter().map(|(d, v)| json!([d, v])).collect::<Vec<_>>(),
            "cumulative_series": a.series.cumulative.iter().map(|(d, v)| json!([d, v])).collect::<Vec<_>>(),
            "representation": a.series.representation.iter().map(|(s, v)| (state_key(*s), json!(v))).collect::<serde_json::Map<_, _>>(),
            "sensitivity_constant": acfg.sensitivity_constant,
        },
        "social": {
            "exclude_local": acfg.exclude_local,
            "nodes": s.nodes,
            "edges": s.edges,
            "closed_triples": s.census.per_state.values().map(|t| t.closed).sum::<u64>(),
            "connected_triples": s.census.total_node_sets(),
            "sampled_triples": s.sample.len(),
            "closure_fit": fit,
        },
        "spatial": {
            "peak_mode": match acfg.peak_mode { PeakMode::Data => "data", PeakMode::Calendar => "calendar" },
            "peak_days": sp.report.partition.peaks,
            "high_days": sp.report.partition.high.len(),
            "active_cells": sp.tessellation.active_count(),
            "bootstrap_replicates": acfg.bootstrap.replicates,
            "rho_a": sp.report.rho_a,
            "rho_d": sp.report.rho_d,
            "per_state": per_state,
        },
    })
}
