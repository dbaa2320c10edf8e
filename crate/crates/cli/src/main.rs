//! `churnlab`: command-line client. Without `--server` it starts an
//! in-process service on a loopback port and talks to it over HTTP.
//!
//! Exit codes: 0 success, 1 error, 3 exact bound violation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use churnlab_client::{Client, ClientError};
use churnlab_core::api::*;
use churnlab_core::dataset::RegimeKind;
use churnlab_core::experiment::config::{apply_seed_override, load_config_value, ExperimentConfig};
use churnlab_core::experiment::pipeline::{DataKey, Predictions};
use churnlab_core::experiment::report::{self, StabilityReport, Summary};
use churnlab_core::metrics::PredictionMatrix;
use churnlab_core::trainer::{io as model_io, ModelClass};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

const VIOLATION_EXIT: u8 = 3;

#[derive(Parser)]
#[command(name = "churnlab", version, about = "Predictive churn and multiplicity experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory or file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads per job (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// List the planned training jobs and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Run only up to (or only) this stage of `run`.
    #[arg(long, global = true, value_enum, default_value_t = StageArg::All)]
    stage: StageArg,
    /// Replace the seed arrays with a single repetition using this seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Service URL; an in-process service is started when unset.
    #[arg(long, global = true, env = "CHURNLAB_SERVER")]
    server: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Ingest,
    Train,
    Analyze,
    Report,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Plain,
    UncertaintyAware,
}

impl From<ClassArg> for ModelClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Plain => ModelClass::Plain,
            ClassArg::UncertaintyAware => ModelClass::UncertaintyAware,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataArg {
    Full,
    Large,
    Small,
}

impl DataArg {
    fn key(self) -> DataKey {
        match self {
            DataArg::Full => DataKey::Full,
            DataArg::Large => DataKey::Regime(RegimeKind::Large),
            DataArg::Small => DataKey::Regime(RegimeKind::Small),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Randomized,
    Candidates,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print it with defaults filled.
    Validate,
    /// Load, split and featurize the dataset.
    Ingest,
    /// Train one model and write it as JSON.
    Train {
        #[arg(long, value_enum, default_value_t = ClassArg::Plain)]
        class: ClassArg,
        #[arg(long, value_enum, default_value_t = DataArg::Full)]
        data: DataArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
    },
    /// Build Rashomon sets.
    Rashomon {
        #[command(subcommand)]
        action: RashomonAction,
    },
    /// Churn between two rows of a prediction matrix CSV.
    Churn {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// CSV with `sample_id,label` columns; enables loss-based churn.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long = "gamma")]
        gammas: Vec<f64>,
    },
    /// Recompute all metrics from stored predictions.
    Analyze {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// β estimate, smooth-churn bounds and the zero churn difference test.
    BoundsCheck,
    /// Print the tables of a report and write its plot files.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Full pipeline.
    Run,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Heavy jobs running at once.
        #[arg(long, default_value_t = 1)]
        max_jobs: usize,
    },
}

#[derive(Subcommand)]
enum RashomonAction {
    Build {
        #[arg(long, value_enum, default_value_t = ModeArg::Randomized)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = ClassArg::Plain)]
        class: ClassArg,
        /// Anchor on a regime subsample instead of the full pool.
        #[arg(long, value_enum)]
        regime: Option<DataArg>,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_target(false)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(dispatch(cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(body) = e.downcast_ref::<ClientError>().and_then(ClientError::body) {
                for f in &body.field_errors {
                    eprintln!("  {}: {}", f.path, f.message);
                }
            }
            ExitCode::FAILURE
        }
    }
}

struct Ctx {
    g: Global,
    client: Client,
}

impl Ctx {
    fn config_value(&self) -> Result<Value> {
        let path = self.g.config.as_deref().context("--config is required")?;
        let mut v = load_config_value(path)?;
        if let Some(s) = self.g.seed_override {
            apply_seed_override(&mut v, s);
        }
        Ok(v)
    }

    /// Validate through the service, echoing warnings.
    async fn config(&self) -> Result<(Value, ExperimentConfig)> {
        let v = self.config_value()?;
        let checked = self.client.validate(&v).await?;
        for w in &checked.warnings {
            eprintln!("warning: {}: {}", w.path, w.message);
        }
        Ok((v, checked.config))
    }

    fn out_dir(&self, config: Option<&ExperimentConfig>) -> Result<PathBuf> {
        self.g
            .out
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .context("--out is required (or set output_dir in the config)")
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn violation_code(violated: bool) -> ExitCode {
    if violated { ExitCode::from(VIOLATION_EXIT) } else { ExitCode::SUCCESS }
}

async fn dispatch(cli: Cli) -> Result<ExitCode> {
    if let Command::Serve { addr, max_jobs } = cli.command {
        churnlab_server::serve(addr, max_jobs).await?;
        return Ok(ExitCode::SUCCESS);
    }
    if let Command::Report { report } = &cli.command {
        return report_cmd(report, cli.global.out.as_deref());
    }
    let client = match &cli.global.server {
        Some(url) => Client::new(url.clone()),
        None => {
            let (addr, _) = churnlab_server::spawn(([127, 0, 0, 1], 0).into(), 1).await?;
            tracing::debug!("in-process service on {addr}");
            Client::new(format!("http://{addr}"))
        }
    };
    let ctx = Ctx { g: cli.global, client };

    if ctx.g.dry_run {
        let (v, _) = ctx.config().await?;
        let plan = ctx.client.plan(&v).await?;
        eprintln!("{} backbones, {} models over {} repetitions", plan.plan.backbones, plan.plan.models, plan.plan.repetitions.len());
        for j in &plan.plan.jobs {
            let classes: Vec<&str> = j.classes.iter().map(|c| c.name()).collect();
            println!("rep {} group {} {} seed {} -> {}", j.repetition, j.group, j.data.name(), j.seed, classes.join(","));
        }
        return Ok(ExitCode::SUCCESS);
    }

    match cli.command {
        Command::Validate => {
            let (_, c) = ctx.config().await?;
            print_json(&c)?;
        }
        Command::Ingest => {
            let (v, c) = ctx.config().await?;
            let r = ctx.client.ingest(&v).await?;
            if let Ok(dir) = ctx.out_dir(Some(&c)) {
                fs::create_dir_all(&dir)?;
                report::write_json(&r.dataset, &dir.join("dataset.json"))?;
            }
            print_json(&r)?;
        }
        Command::Train { class, data, seed, repetition } => {
            let (v, _) = ctx.config().await?;
            let req = TrainRequest { config: v, class: class.into(), data: data.key(), seed, repetition };
            let r = ctx.client.train(&req).await?;
            let path = ctx.g.out.clone().unwrap_or_else(|| PathBuf::from(format!("model_{}_{}_seed{}.json", r.class.name(), r.data.name(), r.seed)));
            if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(p)?;
            }
            model_io::save(&r.model, &path)?;
            eprintln!("model written to {}", path.display());
            let mut summary = serde_json::to_value(&r)?;
            summary.as_object_mut().map(|o| o.remove("model"));
            print_json(&summary)?;
        }
        Command::Rashomon { action: RashomonAction::Build { mode, class, regime, repetition } } => {
            let (v, c) = ctx.config().await?;
            let regime = match regime.map(DataArg::key) {
                Some(DataKey::Regime(k)) => Some(k),
                _ => None,
            };
            let mode = match mode {
                ModeArg::Randomized => RashomonMode::Randomized,
                ModeArg::Candidates => RashomonMode::Candidates,
            };
            let req = RashomonRequest { config: v, mode, class: class.into(), regime, repetition, threads: ctx.g.jobs };
            let r = ctx.client.rashomon(&req).await?;
            let dir = ctx.out_dir(Some(&c))?;
            let set = r.bundle.into_set()?;
            set.save_dir(&dir)?;
            eprintln!("{} members, {} rejected; set written to {}", set.len(), set.rejected.len(), dir.display());
            print_json(&r.test)?;
        }
        Command::Churn { matrix, a, b, labels, gammas } => {
            let pm = PredictionMatrix::read_csv(fs::File::open(&matrix).with_context(|| matrix.display().to_string())?)?;
            let row = |id: &str| {
                pm.model_ids().iter().position(|m| m == id).with_context(|| format!("no model `{id}` in {}", matrix.display()))
            };
            let (ra, rb) = (row(&a)?, row(&b)?);
            let y = labels.map(|p| read_labels(&p, pm.sample_ids())).transpose()?;
            let req = ChurnRequest { scores_a: pm.scores()[ra].clone(), scores_b: pm.scores()[rb].clone(), y, gammas };
            print_json(&ctx.client.churn(&req).await?)?;
        }
        Command::Analyze { predictions } => {
            let (v, c) = ctx.config().await?;
            let preds = report::read_predictions(&predictions)?;
            let r = ctx.client.analyze(&AnalyzeRequest { config: v, predictions: preds }).await?;
            let dir = ctx.out_dir(Some(&c))?;
            report::write_outputs(&c, &r, None, &dir)?;
            print_tables(&r);
            return Ok(finish(&r));
        }
        Command::BoundsCheck => {
            let (v, c) = ctx.config().await?;
            let r = ctx.client.bounds_check(&v, ctx.g.jobs).await?;
            if let Ok(dir) = ctx.out_dir(Some(&c)) {
                fs::create_dir_all(&dir)?;
                report::write_json(&r, &dir.join("bounds_check.json"))?;
            }
            print_json(&r)?;
            return Ok(violation_code(r.has_hard_violation()));
        }
        Command::Run => return run_cmd(&ctx).await,
        Command::Report { .. } | Command::Serve { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn read_labels(path: &Path, ids: &[String]) -> Result<Vec<u8>> {
    let mut by_id = BTreeMap::new();
    for rec in csv::Reader::from_path(path)?.records() {
        let rec = rec?;
        let (Some(id), Some(label)) = (rec.get(0), rec.get(1)) else { bail!("{}: expected sample_id,label", path.display()) };
        let y: u8 = label.trim().parse().with_context(|| format!("bad label `{label}`"))?;
        if y > 1 {
            bail!("label must be 0 or 1, got {y}");
        }
        by_id.insert(id.trim().to_owned(), y);
    }
    ids.iter().map(|i| by_id.get(i).copied().with_context(|| format!("no label for sample `{i}`"))).collect()
}

fn finish(r: &StabilityReport) -> ExitCode {
    if r.has_hard_violation() {
        eprintln!("{} exact bound violation(s)", r.bounds.hard_violations);
    }
    violation_code(r.has_hard_violation())
}

async fn run_cmd(ctx: &Ctx) -> Result<ExitCode> {
    let (v, c) = ctx.config().await?;
    let dir = ctx.out_dir(Some(&c))?;
    fs::create_dir_all(&dir)?;
    let (stage, predictions) = match ctx.g.stage {
        StageArg::Report => return report_cmd(&dir.join(report::REPORT_FILE), Some(&dir.join("plots"))),
        StageArg::Ingest => (RunStage::Ingest, None),
        StageArg::Train => (RunStage::Train, None),
        StageArg::Analyze => (RunStage::Analyze, Some(report::read_predictions(&dir.join(report::PREDICTIONS_FILE))?)),
        StageArg::All => (RunStage::All, None),
    };
    let req = ExperimentRequest { config: v, threads: ctx.g.jobs, stage, predictions };
    let mut last = None;
    let status = ctx
        .client
        .run(&req, Duration::from_millis(500), |s| {
            if last != Some(s.state) {
                eprintln!("[{:>7.1}s] {} {:?}", s.elapsed_seconds, s.id, s.state);
                last = Some(s.state);
            }
        })
        .await?;
    if let Some(e) = status.error {
        let stage = e.stage.map(|s| format!(" ({s} stage)")).unwrap_or_default();
        bail!("experiment failed{stage}: {}", e.error);
    }
    let result = status.result.context("finished job without a result")?;
    match (result.report, result.predictions) {
        (Some(r), preds) => {
            let files = report::write_outputs(&c, &r, preds.as_ref(), &dir)?;
            eprintln!("{} files written to {}", files.len(), dir.display());
            print_tables(&r);
            Ok(finish(&r))
        }
        (None, Some(p)) => {
            write_predictions(&p, &dir)?;
            Ok(ExitCode::SUCCESS)
        }
        (None, None) => {
            report::write_json(&result.dataset, &dir.join("dataset.json"))?;
            print_json(&result.dataset)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write_predictions(p: &Predictions, dir: &Path) -> Result<()> {
    let path = dir.join(report::PREDICTIONS_FILE);
    report::write_json(p, &path)?;
    eprintln!("predictions written to {}", path.display());
    Ok(())
}

fn report_cmd(path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let r: StabilityReport = serde_json::from_str(&text)?;
    if r.compute_hash() != r.report_hash {
        eprintln!("warning: report hash does not match its contents");
    }
    if let Some(dir) = out {
        let files = report::emit_plot_data(&r, dir)?;
        eprintln!("{} plot files written to {}", files.len(), dir.display());
    }
    print_tables(&r);
    Ok(finish(&r))
}

fn fmt(s: &Summary) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.std)
}

fn print_tables(r: &StabilityReport) {
    println!("report {} (config {})", &r.report_hash[..12], &r.config_hash[..12]);
    for b in &r.classes {
        let t = &b.table1;
        println!("\n[{}] {} repetitions", b.class.name(), b.runs.len());
        println!("  ambiguity ({}):  {}", t.multiplicity_regime.name(), fmt(&t.ambiguity));
        println!("  discrepancy:          {}", fmt(&t.discrepancy));
        for (k, s) in &t.churn {
            println!("  churn {k:<14} {}", fmt(s));
        }
        if let Some(a) = &t.auc {
            println!("  auc (model B):        {}", fmt(a));
        }
        for (k, s) in &b.table2.common_arbitrariness {
            println!("  common arb. {k:<8} {}", fmt(s));
        }
    }
    let n = r.bounds.checks.len();
    println!(
        "\nbounds: {n} checks, {} hard violations, {} with unmet premise",
        r.bounds.hard_violations, r.bounds.preconditions_unmet
    );
    for s in &r.skipped {
        println!("skipped {}: {}", s.field, s.reason);
    }
}
