//! `memorize`: simulation, oracle, fitting, evaluation, ingestion and the
//! review service from the command line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use memorize_core::estimation::{fit_binned_alpha_beta, fit_halflife_regression, FitConfig, FittedModel};
use memorize_core::evaluation::{rank_and_compare, score_records, Grouping, RankConfig, Ranking, ScoringConfig, SequenceRecord, SCHEDULES};
use memorize_core::ingestion::{self, collapse_and_filter, parse_csv_where, IngestConfig};
use memorize_core::oracle::{optimality_study, ControlProblem};
use memorize_core::pipeline::{keep_user, run_csv, PipelineConfig};
use memorize_core::schedule::{Anchor, ScheduleArgs};
use memorize_core::simulator::{match_budget, run_ensemble, EnsembleMetrics, ExperimentConfig};
use memorize_core::{ItemParams, ModelKind, ReviewSequence, ScheduleRegistry, ScheduleSpec};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "memorize", version, about = "Optimal spaced-repetition scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo ensembles of one or more schedules on a single item.
    Simulate(SimulateArgs),
    /// DP optimum against the closed-form policy cost.
    Oracle(OracleArgs),
    /// Fit the memory model to canonical logs.
    Fit(FitArgs),
    /// Score canonical logs under every schedule and compare top pairs.
    Evaluate(EvaluateArgs),
    /// Study-log CSV to the canonical log format.
    Ingest(IngestArgs),
    /// Ingest, fit and evaluate a study-log CSV in one pass.
    Pipeline(PipelineArgs),
    /// Run the review service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Exp,
    Pl,
}

#[derive(Args, Clone, Debug)]
struct ModelOpts {
    #[arg(long, value_enum, default_value = "exp")]
    model: ModelArg,
    /// Time scale of the power-law curve.
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
}

impl ModelOpts {
    fn kind(&self) -> Result<ModelKind> {
        Ok(match self.model {
            ModelArg::Exp => ModelKind::Exponential,
            ModelArg::Pl => ModelKind::power_law(self.omega)?,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnchorArg {
    Crossing,
    Previous,
}

impl From<AnchorArg> for Anchor {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::Crossing => Anchor::Crossing,
            AnchorArg::Previous => Anchor::PreviousReview,
        }
    }
}

#[derive(Args, Debug)]
struct ItemOpts {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    n0: f64,
    #[arg(long, default_value_t = 20.0)]
    t_f: f64,
}

impl ItemOpts {
    fn params(&self) -> Result<ItemParams> {
        Ok(ItemParams::new(self.alpha, self.beta, self.n0)?)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Schedule name; repeat to run several. Unset parameters take the
    /// synthetic-experiment defaults.
    #[arg(long, default_value = "memorize")]
    schedule: Vec<String>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    m_th: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    t_lm: Option<f64>,
    #[arg(long, value_enum)]
    anchor: Option<AnchorArg>,
    /// Match every schedule after the first to the first one's mean review count.
    #[arg(long)]
    match_budget: bool,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    item: ItemOpts,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    grid_points: usize,
    /// Recall probe offsets past the horizon.
    #[arg(long, value_delimiter = ',', default_value = "5,15")]
    tau: Vec<f64>,
    /// CSV destination (default stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON summary destination (default stdout when `--csv` is set, else stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 3e-4)]
    q: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    dt: Vec<f64>,
    /// Monte-Carlo runs for the closed-form policy cost.
    #[arg(long, default_value_t = 4000)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    item: ItemOpts,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Canonical log files.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelOpts,
    /// Gap-binned alpha/beta with K bins and B bootstrap replicates.
    #[arg(long, num_args = 2, value_names = ["K", "B"])]
    binned: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupingArg {
    Pattern,
    ReviewCount,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RankingArg {
    LogLikelihood,
    LikelihoodRatio,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// FittedModel JSON, or a binned fit (its point fit is used).
    #[arg(long = "fitted")]
    fitted: PathBuf,
    #[arg(long, value_enum, default_value = "pattern")]
    grouping: GroupingArg,
    #[arg(long, value_enum, default_value = "log-likelihood")]
    ranking: RankingArg,
    #[arg(long, default_value_t = 0.25)]
    quantile: f64,
    #[arg(long, value_enum, default_value = "previous")]
    anchor: AnchorArg,
    #[arg(long, default_value_t = 0.5)]
    m_th: f64,
    #[arg(long, default_value_t = 4)]
    min_selected: usize,
    /// Directory for report.json, ratios.csv and quartiles.csv (default:
    /// report JSON on stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    input: PathBuf,
    /// Canonical log destination.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    min_user_events: usize,
    #[arg(long, default_value_t = 30)]
    min_item_events: usize,
    #[arg(long, default_value_t = 0)]
    coalesce_seconds: i64,
    /// Fraction of users kept, by a seeded hash of the user id.
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    input: PathBuf,
    /// Directory for report.json and the CSV tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    min_user_events: usize,
    #[arg(long, default_value_t = 30)]
    min_item_events: usize,
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Deck logs and snapshots; in-memory when unset.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<ReviewSequence>> {
    let mut seqs = Vec::new();
    for p in paths {
        let log = ingestion::load(p).with_context(|| format!("reading {}", p.display()))?;
        seqs.extend(log.sequences);
    }
    Ok(seqs)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let registry = ScheduleRegistry::default();
    let sargs = ScheduleArgs {
        q: a.q,
        mu: a.mu,
        t_lm: a.t_lm,
        m_th: a.m_th,
        c: a.c,
        zeta: a.zeta,
        anchor: a.anchor.map(Anchor::from),
    };
    let specs = a
        .schedule
        .iter()
        .map(|name| Ok(registry.create(name, &sargs)?.spec()))
        .collect::<Result<Vec<ScheduleSpec>>>()?;
    let base = ExperimentConfig {
        t0: 0.0,
        t_f: a.item.t_f,
        params: a.item.params()?,
        model: a.model.kind()?,
        schedule: specs[0],
        runs: a.runs,
        seed: a.seed,
        tau_probe: a.tau.clone(),
        grid_points: a.grid_points,
    };
    let mut ensembles: Vec<EnsembleMetrics> = Vec::new();
    let mut residuals: Vec<Option<f64>> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let (spec, residual) = if a.match_budget && i > 0 {
            let m = match_budget(ensembles[0].mean_reviews(), spec, &base)?;
            (m.spec, Some(m.residual()))
        } else {
            (*spec, None)
        };
        ensembles.push(run_ensemble(&base.with_schedule(spec))?);
        residuals.push(residual);
    }

    let mut csv = csv::Writer::from_writer(writer(a.csv.as_deref())?);
    csv.write_record(["t", "metric", "schedule", "median", "q_lo", "q_hi"])?;
    for e in &ensembles {
        for (t, metric, schedule, median, lo, hi) in e.csv_rows() {
            csv.write_record([
                t.to_string(),
                metric,
                schedule.to_string(),
                median.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
    }
    csv.flush()?;

    let schedules: Vec<_> = ensembles
        .iter()
        .zip(&residuals)
        .map(|(e, r)| {
            let recall: serde_json::Map<_, _> = e
                .recall
                .iter()
                .map(|b| (format!("{}", b.tau), json!(b.band.last_median())))
                .collect();
            json!({
                "spec": e.schedule,
                "mean_reviews": e.mean_reviews(),
                "median_reviews": e.reviews.last_median(),
                "median_forgetting_rate": e.forgetting_rate.last_median(),
                "median_recall_after": recall,
                "clamps": e.clamps,
                "budget_residual": r,
            })
        })
        .collect();
    let summary = json!({
        "runs": a.runs,
        "seed": a.seed,
        "t_f": a.item.t_f,
        "params": base.params,
        "model": base.model,
        "schedules": schedules,
    });
    match (&a.summary, &a.csv) {
        (Some(p), _) => write_json(&summary, writer(Some(p))?),
        (None, Some(_)) => write_json(&summary, io::stdout().lock()),
        (None, None) => write_json(&summary, io::stderr().lock()),
    }
}

fn oracle(a: OracleArgs) -> Result<()> {
    let problem = ControlProblem {
        params: a.item.params()?,
        model: a.model.kind()?,
        q: a.q,
        t0: 0.0,
        t_f: a.item.t_f,
    };
    let reports = optimality_study(&problem, &a.dt, a.runs, a.seed)?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "dt": r.dt,
                "dp_value": r.dp_value,
                "closed_form_value": r.closed_form_mc.mean,
                "closed_form_stderr": r.closed_form_mc.stderr,
                "closed_form_on_grid": r.closed_form_on_grid,
                "gap": r.gap,
                "lattice_nodes": r.lattice_nodes,
            })
        })
        .collect();
    write_json(&json!({ "problem": problem, "runs": a.runs, "seed": a.seed, "results": rows }), io::stdout().lock())
}

fn fit(a: FitArgs) -> Result<()> {
    let logs = read_logs(&a.logs)?;
    let config = FitConfig {
        max_iter: a.max_iter,
        seed: a.seed,
        ..FitConfig::default()
    };
    let kind = a.model.kind()?;
    let out = writer(a.out.as_deref())?;
    match a.binned.as_deref() {
        Some(&[k, b]) => write_json(&fit_binned_alpha_beta(&logs, kind, k, b, &config)?, out),
        Some(_) => bail!("--binned takes K and B"),
        None => write_json(&fit_halflife_regression(&logs, kind, &config)?, out),
    }
}

fn read_fitted(path: &Path) -> Result<FittedModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(base) = value.get_mut("base") {
        value = base.take();
    }
    Ok(serde_json::from_value(value).context("parsing fitted model")?)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let logs = read_logs(&a.logs)?;
    let model = read_fitted(&a.fitted)?;
    let records: Vec<SequenceRecord> = logs.into_iter().map(SequenceRecord::new).collect();
    let scoring = score_records(
        &records,
        &model,
        &ScoringConfig {
            threshold_anchor: a.anchor.into(),
            m_th: a.m_th,
            ..ScoringConfig::default()
        },
    )?;
    let report = rank_and_compare(
        &scoring.records,
        &SCHEDULES,
        &RankConfig {
            quantile: a.quantile,
            grouping: match a.grouping {
                GroupingArg::Pattern => Grouping::Pattern,
                GroupingArg::ReviewCount => Grouping::ReviewCount,
            },
            ranking: match a.ranking {
                RankingArg::LogLikelihood => Ranking::LogLikelihood,
                RankingArg::LikelihoodRatio => Ranking::LikelihoodRatio,
            },
            min_selected: a.min_selected,
        },
    )?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&report, writer(Some(&dir.join("report.json")))?)?;
            fs::write(dir.join("ratios.csv"), report.ratio_table_csv())?;
            fs::write(dir.join("quartiles.csv"), report.quartile_table_csv())?;
            Ok(())
        }
        None => write_json(&report, io::stdout().lock()),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    if !(a.subsample > 0.0 && a.subsample <= 1.0) {
        bail!("--subsample must lie in (0, 1]");
    }
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let parsed = parse_csv_where(io::BufReader::new(file), |u| keep_user(u, a.subsample, a.seed))?;
    for e in parsed.errors.iter().take(10) {
        tracing::warn!(line = e.line, "{}", e.message);
    }
    let config = IngestConfig {
        min_user_events: a.min_user_events,
        min_item_events: a.min_item_events,
        coalesce_seconds: a.coalesce_seconds,
    };
    let log = collapse_and_filter(&parsed.rows, &config)?;
    ingestion::persist(&log, &a.out)?;
    write_json(
        &json!({
            "rows": parsed.rows.len(),
            "row_errors": parsed.errors.len(),
            "pairs": log.sequences.len(),
            "events": log.event_count(),
            "out": a.out,
        }),
        io::stdout().lock(),
    )
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let config = PipelineConfig {
        ingest: IngestConfig {
            min_user_events: a.min_user_events,
            min_item_events: a.min_item_events,
            ..IngestConfig::default()
        },
        subsample: a.subsample,
        model: a.model.kind()?,
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let report = run_csv(io::BufReader::new(file), &config)?;
    fs::create_dir_all(&a.out)?;
    write_json(&report, writer(Some(&a.out.join("report.json")))?)?;
    for (name, table) in report.tables() {
        fs::write(a.out.join(name), table)?;
    }
    print!("{}", report.metrics_table_csv());
    Ok(())
}

async fn serve(a: ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let store = match &a.data_dir {
        Some(dir) => memorize_service::DeckStore::open(dir)?,
        None => memorize_service::DeckStore::in_memory(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on {}", listener.local_addr()?);
    io::stdout().flush()?;
    Ok(memorize_service::serve(listener, store).await?)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Oracle(a) => oracle(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ingest(a) => ingest(a),
        Command::Pipeline(a) => pipeline(a),
        Command::Serve(a) => tokio::runtime::Runtime::new()?.block_on(serve(a)),
    }
}
