//! The `wigner-ldp` command line.
//!
//! Every command writes a table, as CSV by default or as JSON with
//! `--format json`. CSV output starts with one `# {json}` line recording the
//! version, command, resolved configuration and seed, so files are plot-ready
//! and self-describing. Identical arguments give byte-identical output.
//!
//! Exit codes: 2 for invalid configuration, 3 when the law's regime cannot
//! support the request, 4 when a numerical method fails.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::annealed::{AnnealedError, AnnealedModel};
use crate::freeprob::{i_goe, RateValue};
use crate::laws::{classify, EntryLaw, LawError, LawSpec, LawTag};
use crate::montecarlo::{
    self, EnsembleSummary, LocalizationParams, MonteCarloError, TailEvent, TiltDirection, WignerEnsembleConfig,
};
use crate::numerics::NumericsError;
use crate::rate::{self, RateError};

/// Caps the number of worker threads.
pub const THREADS_ENV: &str = "WIGNER_LDP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wigner-ldp", version, about = "Large deviations of the largest eigenvalue of Wigner matrices")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Entry laws.
    #[command(subcommand)]
    Laws(LawsCommand),
    /// F(θ) on a θ grid: theta, F, regime, alpha_opt, zeta_opt, validity.
    Fcurve(FcurveArgs),
    /// The rate function on an x grid: x, I, I_GOE, [theta_star], validity.
    Rate(RateArgs),
    /// The GOE rate function: x, I_GOE.
    Igoe(GridArgs),
    /// Sample matrices: sample, lambda_max, ks, overlap_sq, plus a summary.
    Simulate(SimulateArgs),
    /// Tilted tail estimates across matrix sizes: N, log_p_per_N, stderr, ess.
    Tilt(TiltArgs),
    /// Localization statistics of top eigenvectors, one row per sample.
    Localize(LocalizeArgs),
}

#[derive(Debug, Subcommand)]
pub enum LawsCommand {
    /// Tail constants, classification and a psi grid (x, psi).
    Inspect(InspectArgs),
    /// The builtin laws (name, spec, A, B, classification).
    List,
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    /// Inline spec such as `sparse_gaussian:p=0.5`, a JSON spec, or a file
    /// holding the JSON spec.
    #[arg(long)]
    pub law: String,
    /// Print the law-spec JSON (the law file format) instead of the table.
    #[arg(long)]
    pub emit_spec: bool,
    #[arg(long, default_value_t = 10.0)]
    pub psi_xmax: f64,
    #[arg(long, default_value_t = 101)]
    pub psi_steps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FcurveArgs {
    #[arg(long)]
    pub law: String,
    #[arg(long)]
    pub theta_min: f64,
    #[arg(long)]
    pub theta_max: f64,
    #[arg(long)]
    pub steps: usize,
    /// Accept laws outside the classified regimes (values are upper bounds).
    #[arg(long)]
    pub allow_upper_bound: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RateArgs {
    #[arg(long)]
    pub law: String,
    #[arg(long)]
    pub xmin: f64,
    #[arg(long)]
    pub xmax: f64,
    #[arg(long)]
    pub steps: usize,
    /// Add the maximizing θ as a column.
    #[arg(long)]
    pub emit_theta: bool,
    /// Accept laws outside the classified regimes (values are upper bounds).
    #[arg(long)]
    pub allow_upper_bound: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    pub xmin: f64,
    #[arg(long)]
    pub xmax: f64,
    #[arg(long)]
    pub steps: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub law: String,
    /// Matrix size.
    #[arg(long = "N", alias = "n")]
    pub n: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub tilt_theta: Option<f64>,
    /// `uniform` or `loc:<v>,<r2>`.
    #[arg(long, default_value = "uniform")]
    pub tilt_dir: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    /// Compute every eigenvalue, which gives the semicircle distance.
    #[arg(long)]
    pub full_spectrum: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TiltArgs {
    #[arg(long)]
    pub law: String,
    /// Comma-separated matrix sizes.
    #[arg(long = "N-list", alias = "n-list", value_delimiter = ',')]
    pub n_list: Vec<usize>,
    /// Centre of the window `[x - δ, x + δ]` for the top eigenvalue.
    #[arg(long)]
    pub x: f64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long)]
    pub theta: f64,
    #[arg(long)]
    pub samples: usize,
    /// `uniform` or `loc:<v>,<r2>`.
    #[arg(long, default_value = "uniform")]
    pub tilt_dir: String,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r2: f64,
    /// Exponent κ of the small-entry threshold `ε N^κ`.
    #[arg(long, default_value_t = montecarlo::DEFAULT_DELOC_EXPONENT, allow_hyphen_values = true)]
    pub deloc_exponent: f64,
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Regime(String),
    Numeric(String),
    Io(io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Regime(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid configuration: {m}"),
            CliError::Regime(m) => write!(f, "regime error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<LawError> for CliError {
    fn from(e: LawError) -> Self {
        match e {
            LawError::NonStableTail { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<AnnealedError> for CliError {
    fn from(e: AnnealedError) -> Self {
        match e {
            AnnealedError::Law(l) => l.into(),
            AnnealedError::WrongRegime { .. } => CliError::Regime(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<RateError> for CliError {
    fn from(e: RateError) -> Self {
        match e {
            RateError::Annealed(a) => a.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Law(l) => l.into(),
            MonteCarloError::InvalidConfig(_) | MonteCarloError::FreeProb(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// A table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Str(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<RateValue> for Cell {
    fn from(v: RateValue) -> Self {
        Cell::Num(v.finite().unwrap_or(f64::INFINITY))
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl Cell {
    fn text(&self) -> String {
        match self {
            Cell::Num(v) if v.is_infinite() => if *v > 0.0 { "inf" } else { "-inf" }.to_string(),
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) => Value::String(self.text()),
            Cell::Int(v) => json!(v),
            Cell::Str(s) => json!(s),
            Cell::Bool(b) => json!(b),
            Cell::Empty => Value::Null,
        }
    }
}

/// Command output: provenance header, columns, rows and an optional summary.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Value,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Option<Value>,
}

impl Table {
    fn write<W: Write>(&self, format: Format, out: &mut W) -> Result<()> {
        match format {
            Format::Csv => {
                writeln!(out, "# {}", self.header)?;
                {
                    let mut w = csv::Writer::from_writer(&mut *out);
                    w.write_record(&self.columns).map_err(csv_io)?;
                    for r in &self.rows {
                        w.write_record(r.iter().map(Cell::text)).map_err(csv_io)?;
                    }
                    w.flush()?;
                }
                if let Some(s) = &self.summary {
                    writeln!(out, "# summary {s}")?;
                }
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| Value::Object(self.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect()))
                    .collect();
                let mut doc = json!({ "header": self.header, "rows": rows });
                if let Some(s) = &self.summary {
                    doc["summary"] = s.clone();
                }
                serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| CliError::Io(e.into()))?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(io::Error::new(io::ErrorKind::Other, e))
}

fn header(command: &str, config: impl Serialize, seed: u64, extra: Value) -> Value {
    let mut h = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": serde_json::to_value(config).expect("configs serialize"),
        "seed": seed,
    });
    if let (Value::Object(h), Value::Object(extra)) = (&mut h, extra) {
        h.extend(extra);
    }
    h
}

/// Reads a law from an inline spec, a JSON spec, or a file holding one.
pub fn resolve_law(arg: &str) -> Result<EntryLaw> {
    let path = Path::new(arg);
    let spec: LawSpec = if !arg.trim_start().starts_with('{') && path.is_file() {
        fs::read_to_string(path)?.trim().parse()?
    } else {
        arg.parse()?
    };
    Ok(spec.build()?)
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(CliError::Invalid(format!("need steps >= 1 and min <= max (got {lo}, {hi}, {steps})")));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect())
}

fn parse_direction(s: &str) -> Result<TiltDirection> {
    if s == "uniform" {
        return Ok(TiltDirection::Uniform);
    }
    let bad = || CliError::Invalid(format!("tilt direction must be `uniform` or `loc:<v>,<r2>`, got `{s}`"));
    let rest = s.strip_prefix("loc:").ok_or_else(bad)?;
    let (v, r2) = rest.split_once(',').ok_or_else(bad)?;
    Ok(TiltDirection::Localized {
        v: v.trim().parse().map_err(|_| bad())?,
        r2: r2.trim().parse().map_err(|_| bad())?,
    })
}

fn model_for(law: EntryLaw, allow_upper_bound: bool) -> Result<AnnealedModel> {
    let model = AnnealedModel::new(law)?;
    if model.classification().tag == LawTag::Unclassified && !allow_upper_bound {
        return Err(CliError::Regime(format!(
            "law {} is Unclassified; only upper bounds are available (pass --allow-upper-bound)",
            model.law().name()
        )));
    }
    Ok(model)
}

fn law_info(law: &EntryLaw) -> Result<Value> {
    let class = classify(law)?;
    Ok(json!({
        "name": law.name(),
        "spec": law.spec(),
        "a": class.constants.a,
        "b": class.constants.b,
        "m_star": class.constants.m_star,
        "classification": class.tag.to_string(),
    }))
}

fn laws_inspect(cli: &Cli, args: &InspectArgs) -> Result<Table> {
    let law = resolve_law(&args.law)?;
    let xs = linspace(0.0, args.psi_xmax, args.psi_steps)?;
    Ok(Table {
        header: header("laws-inspect", args, cli.seed, json!({ "law": law_info(&law)? })),
        columns: vec!["x", "psi"],
        rows: xs.iter().map(|&x| vec![x.into(), law.psi(x).into()]).collect(),
        summary: None,
    })
}

fn laws_list(cli: &Cli) -> Result<Table> {
    let mut rows = Vec::new();
    for law in crate::laws::builtin_catalog() {
        let class = classify(&law)?;
        rows.push(vec![
            Cell::Str(law.name().to_string()),
            Cell::Str(law.spec().to_string()),
            class.constants.a.into(),
            class.constants.b.into(),
            Cell::Str(class.tag.to_string()),
        ]);
    }
    Ok(Table {
        header: header("laws-list", json!({}), cli.seed, json!({})),
        columns: vec!["name", "spec", "a", "b", "classification"],
        rows,
        summary: None,
    })
}

fn fcurve(cli: &Cli, args: &FcurveArgs) -> Result<Table> {
    let model = model_for(resolve_law(&args.law)?, args.allow_upper_bound)?;
    let thetas = linspace(args.theta_min, args.theta_max, args.steps)?;
    if args.theta_min < 0.0 {
        return Err(CliError::Invalid("theta must be nonnegative".into()));
    }
    let mut rows = Vec::new();
    for t in thetas {
        let p = model.f_value(t)?;
        rows.push(vec![
            t.into(),
            p.value.into(),
            Cell::Str(p.regime.to_string()),
            p.alpha_opt.into(),
            p.zeta_opt.into(),
            p.validity.into(),
        ]);
    }
    Ok(Table {
        header: header("fcurve", args, cli.seed, json!({ "law": law_info(model.law())?, "theta_zero": model.theta_zero()? })),
        columns: vec!["theta", "F", "regime", "alpha_opt", "zeta_opt", "validity"],
        rows,
        summary: None,
    })
}

fn rate_cmd(cli: &Cli, args: &RateArgs) -> Result<Table> {
    let model = model_for(resolve_law(&args.law)?, args.allow_upper_bound)?;
    let xs = linspace(args.xmin, args.xmax, args.steps)?;
    let curve = rate::rate_curve(&model, &xs)?;
    let x_mu = rate::x_mu_proxy(&model, &curve)?;
    let mut columns = vec!["x", "I", "I_GOE"];
    if args.emit_theta {
        columns.push("theta_star");
    }
    columns.push("validity");
    let rows = curve
        .points
        .iter()
        .map(|p| {
            let mut r = vec![p.x.into(), p.value.into(), p.i_goe.into()];
            if args.emit_theta {
                r.push(p.theta_star.into());
            }
            r.push(p.validity.into());
            r
        })
        .collect();
    let extra = json!({
        "law": law_info(model.law())?,
        "theta_zero": curve.theta_zero,
        "x_mu_proxy": x_mu,
        "goe_window": rate::goe_window(curve.constants.a),
        "note": "rows with validity=false are upper bounds only",
    });
    Ok(Table { header: header("rate", args, cli.seed, extra), columns, rows, summary: None })
}

fn igoe(cli: &Cli, args: &GridArgs) -> Result<Table> {
    let xs = linspace(args.xmin, args.xmax, args.steps)?;
    Ok(Table {
        header: header("igoe", args, cli.seed, json!({})),
        columns: vec!["x", "I_GOE"],
        rows: xs.iter().map(|&x| vec![x.into(), i_goe(x).into()]).collect(),
        summary: None,
    })
}

fn ensemble_config(args: &EnsembleArgs, seed: u64) -> Result<WignerEnsembleConfig> {
    let mut cfg = WignerEnsembleConfig::new(resolve_law(&args.law)?, args.n, args.samples, seed);
    if let Some(theta) = args.tilt_theta {
        cfg = cfg.with_tilt(theta, parse_direction(&args.tilt_dir)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Table> {
    let cfg = ensemble_config(&args.ensemble, cli.seed)?;
    let records = montecarlo::simulate(&cfg, args.full_spectrum)?;
    let summary = EnsembleSummary::from_records(&cfg, &records);
    Ok(Table {
        header: header("simulate", args, cli.seed, json!({ "law": cfg.law.name() })),
        columns: vec!["sample", "lambda_max", "ks", "overlap_sq"],
        rows: records
            .iter()
            .map(|r| vec![Cell::Int(r.sample), r.lambda_max.into(), r.ks.into(), r.overlap_sq.into()])
            .collect(),
        summary: Some(serde_json::to_value(summary).expect("summary serializes")),
    })
}

fn tilt(cli: &Cli, args: &TiltArgs) -> Result<Table> {
    let law = resolve_law(&args.law)?;
    let dir = parse_direction(&args.tilt_dir)?;
    if args.n_list.is_empty() {
        return Err(CliError::Invalid("--N-list is empty".into()));
    }
    if !(args.delta > 0.0) {
        return Err(CliError::Invalid("delta must be positive".into()));
    }
    let event = TailEvent::Window { center: args.x, delta: args.delta };
    let mut rows = Vec::new();
    for &n in &args.n_list {
        let t = montecarlo::tail_estimate_tilted(&law, n, event, args.theta, &dir, args.samples, cli.seed)?;
        rows.push(vec![n.into(), t.log_p_per_n.into(), t.stderr.into(), t.ess.into()]);
    }
    Ok(Table {
        header: header("tilt", args, cli.seed, json!({ "law": law.name(), "i_goe": i_goe(args.x) })),
        columns: vec!["N", "log_p_per_N", "stderr", "ess"],
        rows,
        summary: None,
    })
}

fn localize(cli: &Cli, args: &LocalizeArgs) -> Result<Table> {
    let cfg = ensemble_config(&args.ensemble, cli.seed)?;
    let params = LocalizationParams { epsilon: args.epsilon, r2: args.r2, deloc_exponent: args.deloc_exponent };
    let stats = montecarlo::localization_experiment(&cfg, &params)?;
    Ok(Table {
        header: header("localize", args, cli.seed, json!({ "law": cfg.law.name() })),
        columns: vec!["sample", "bucket_count", "bucket_mass", "small_mass", "overlap_sq", "deloc_violation_count"],
        rows: stats
            .iter()
            .enumerate()
            .map(|(k, s)| {
                vec![
                    k.into(),
                    s.bucket_count.into(),
                    s.bucket_mass.into(),
                    s.small_mass.into(),
                    s.overlap_sq.into(),
                    s.deloc_violation_count.into(),
                ]
            })
            .collect(),
        summary: None,
    })
}

/// Runs a parsed command, returning its table. `laws inspect --emit-spec`
/// has no table and is handled by [`run`].
pub fn execute(cli: &Cli) -> Result<Table> {
    match &cli.command {
        Command::Laws(LawsCommand::Inspect(a)) => laws_inspect(cli, a),
        Command::Laws(LawsCommand::List) => laws_list(cli),
        Command::Fcurve(a) => fcurve(cli, a),
        Command::Rate(a) => rate_cmd(cli, a),
        Command::Igoe(a) => igoe(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Tilt(a) => tilt(cli, a),
        Command::Localize(a) => localize(cli, a),
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Invalid(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_parsed(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    configure_threads()?;
    let mut buf = Vec::new();
    match &cli.command {
        Command::Laws(LawsCommand::Inspect(a)) if a.emit_spec => {
            let law = resolve_law(&a.law)?;
            serde_json::to_writer(&mut buf, law.spec()).map_err(|e| CliError::Io(e.into()))?;
            writeln!(buf)?;
        }
        _ => execute(cli)?.write(cli.format, &mut buf)?,
    }
    match &cli.output {
        Some(p) => fs::write(p, buf)?,
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_parsed(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("wigner-ldp: {e}");
            e.exit_code()
        }
    }
}
