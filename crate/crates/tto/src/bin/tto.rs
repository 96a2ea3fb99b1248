//! Command line front end.
//!
//! Each subcommand resolves its flags against an optional flat JSON config
//! file (precedence: flags, then file, then defaults), runs the matching
//! library pipeline, and writes a self-contained run directory. Every
//! artifact except `run.log` is byte identical across reruns with the same
//! inputs, flags, and seed; wall-clock content lives only in the log.
//!
//! Exit codes: 0 clean, 1 stage error, 2 artifacts written but a fit failed
//! the hard scale-reduction gate (max split-Rhat at or above 1.2).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use tto::analysis::{
    outcome_prob_diff, outcome_xwoba_diff, summarize, trajectory_draws, tto_averages,
    tto_mean_diff, OutcomeWeights, SampleSummary, TrajectorySummary, TtoPair,
};
use tto::data::{
    exit_histogram, filter_analysis_set, group_games, parse_plate_appearances,
    truncate_selection_bias, ExitBinBy, Outcome, PlateAppearance, TruncationSummary,
};
use tto::model::{Dataset, Model, PlateState, Variant, N_CATEGORIES};
use tto::output::{read_draws_csv, write_diagnostics_json, write_draws_csv};
use tto::quality::{
    attach_quality_covariates, estimate_hyperparams, PriorMeans, QualityCovariates,
    QualityHyperparams,
};
use tto::sampler::{sample, ModelTarget, PosteriorDraws, SamplerConfig};
use tto::simlab::{kfold_cv, reference_state, run_study, SimStudy, SimStudyConfig};

/// Hard convergence gate: artifacts are still written, but the process exits
/// nonzero so pipelines notice the fit is not trustworthy.
const RHAT_GATE: f64 = 1.2;

#[derive(Parser)]
#[command(
    name = "tto",
    version,
    about = "Within-game pitcher decline: model fits, posterior trajectories, simulation studies"
)]
struct Cli {
    /// Base RNG seed; chains and simulated seasons derive their own streams.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for chain and season parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run directory to create; the command refuses to overwrite one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Flat key-value JSON file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model variant to plate appearance data.
    Fit(FitArgs),
    /// Summarize posterior expected wOBA across the batter sequence for an
    /// existing fit.
    Trajectory(TrajectoryArgs),
    /// Run a synthetic-season recovery study with known generating curves.
    Simulate(SimulateArgs),
    /// Game-level k-fold cross-validation against the base-rate baseline.
    Evaluate(EvaluateArgs),
    /// Descriptive reports: pitcher exit histograms and pass-difference
    /// posterior samples.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Plate appearance CSV.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Season to fit (default: the latest season in the file). Earlier
    /// seasons are still read to build prior player means.
    #[arg(long)]
    season: Option<u16>,

    /// Model variant: baseline, diffuse, indicator, or hierarchical.
    #[arg(long)]
    model: Option<String>,

    /// Number of MCMC chains (default 4).
    #[arg(long)]
    chains: Option<usize>,

    /// Total iterations per chain, warmup included (default 1500).
    #[arg(long)]
    iters: Option<usize>,

    /// Adaptation iterations discarded from the front of each chain
    /// (default 750).
    #[arg(long)]
    warmup: Option<usize>,

    /// Step size adaptation target for the acceptance statistic
    /// (default 0.8).
    #[arg(long)]
    target_accept: Option<f64>,

    /// Tree depth cap per transition (default 10).
    #[arg(long)]
    max_depth: Option<usize>,

    /// Prior player means CSV (player_id,role,prev_mean_woba). Default:
    /// built from the seasons before --season in the data file.
    #[arg(long)]
    priors: Option<PathBuf>,

    /// Within-season plate appearance wOBA standard deviation.
    #[arg(long)]
    tau: Option<f64>,

    /// Season-to-season standard deviation of player mean wOBA.
    #[arg(long)]
    nu: Option<f64>,

    /// Estimate tau and nu from multi-season history instead of fixing them.
    #[arg(long)]
    estimate_hyperparams: bool,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Run directory produced by `fit`.
    #[arg(long)]
    fit: Option<PathBuf>,

    /// Evaluation state preset: `sim-median` (league-median qualities,
    /// matched hands, away) or `data-mean` (covariate means of the fit data).
    #[arg(long)]
    preset: Option<String>,

    /// Explicit state `x_bat,x_pit,hand,home`; overrides --preset.
    #[arg(long)]
    state: Option<String>,

    /// Outcome weights `out,ubb,hbp,1b,2b,3b,hr` (out must be 0).
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Which generating design: 1 (no pass effects), 2 (small jumps), or
    /// 3 (large third-pass jump).
    #[arg(long)]
    study: Option<String>,

    /// `desk` (20 seasons x 1000 games) or `paper` (25 x 4860).
    #[arg(long)]
    scale: Option<String>,

    /// Override the season count of the chosen scale.
    #[arg(long)]
    seasons: Option<usize>,

    /// Override the games per season of the chosen scale.
    #[arg(long)]
    games: Option<usize>,

    /// Fraction of games in the training split.
    #[arg(long)]
    train_fraction: Option<f64>,

    /// Number of MCMC chains per season fit (default 4).
    #[arg(long)]
    chains: Option<usize>,

    /// Total iterations per chain, warmup included (default 550).
    #[arg(long)]
    iters: Option<usize>,

    /// Adaptation iterations discarded from the front of each chain
    /// (default 250).
    #[arg(long)]
    warmup: Option<usize>,

    /// Step size adaptation target for the acceptance statistic
    /// (default 0.8).
    #[arg(long)]
    target_accept: Option<f64>,

    /// Tree depth cap per transition (default 8).
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Plate appearance CSV.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Season to evaluate (default: the latest season in the file).
    #[arg(long)]
    season: Option<u16>,

    /// Number of game-level folds.
    #[arg(long)]
    folds: Option<usize>,

    /// Model variant to cross-validate.
    #[arg(long)]
    model: Option<String>,

    /// Prior player means CSV (player_id,role,prev_mean_woba). Default:
    /// built from the seasons before --season in the data file.
    #[arg(long)]
    priors: Option<PathBuf>,

    /// Within-season plate appearance wOBA standard deviation.
    #[arg(long)]
    tau: Option<f64>,

    /// Season-to-season standard deviation of player mean wOBA.
    #[arg(long)]
    nu: Option<f64>,

    /// Estimate tau and nu from multi-season history instead of fixing them.
    #[arg(long)]
    estimate_hyperparams: bool,

    /// Number of MCMC chains per fold fit (default 4).
    #[arg(long)]
    chains: Option<usize>,

    /// Total iterations per chain, warmup included (default 550).
    #[arg(long)]
    iters: Option<usize>,

    /// Adaptation iterations discarded from the front of each chain
    /// (default 250).
    #[arg(long)]
    warmup: Option<usize>,

    /// Step size adaptation target for the acceptance statistic
    /// (default 0.8).
    #[arg(long)]
    target_accept: Option<f64>,

    /// Tree depth cap per transition (default 8).
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(subcommand)]
    which: ReportCommand,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Histogram of starter exit sequence numbers by quality bin.
    ExitHist(ExitHistArgs),
    /// Posterior samples of a pass-to-pass performance difference.
    TtoDiff(TtoDiffArgs),
}

#[derive(Args)]
struct ExitHistArgs {
    /// Plate appearance CSV.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Season to report on (default: the latest season in the file).
    #[arg(long)]
    season: Option<u16>,

    /// Binning variable: `pitcher-quality` (running estimate entering each
    /// game) or `game-woba` (mean realized event wOBA of the game).
    #[arg(long)]
    bin_by: Option<String>,

    /// Number of evenly sized quantile bins.
    #[arg(long)]
    bins: Option<usize>,

    /// Prior player means CSV; only used with `--bin-by pitcher-quality`.
    #[arg(long)]
    priors: Option<PathBuf>,

    /// Within-season plate appearance wOBA standard deviation.
    #[arg(long)]
    tau: Option<f64>,

    /// Season-to-season standard deviation of player mean wOBA.
    #[arg(long)]
    nu: Option<f64>,
}

#[derive(Args)]
struct TtoDiffArgs {
    /// Run directory produced by `fit`.
    #[arg(long)]
    fit: Option<PathBuf>,

    /// Which pass boundary: `12` or `23`.
    #[arg(long)]
    pair: Option<String>,

    /// `xwoba` (expected wOBA points) or `probability` (one outcome's
    /// probability; requires --outcome).
    #[arg(long)]
    scale: Option<String>,

    /// Restrict to one outcome category (UBB, HBP, 1B, 2B, 3B, HR).
    #[arg(long)]
    outcome: Option<String>,

    /// Evaluation state preset: `sim-median` (league-median qualities,
    /// matched hands, away) or `data-mean` (covariate means of the fit data).
    #[arg(long)]
    preset: Option<String>,

    /// Explicit state `x_bat,x_pit,hand,home`; overrides --preset.
    #[arg(long)]
    state: Option<String>,

    /// Outcome weights `out,ubb,hbp,1b,2b,3b,hr` (out must be 0).
    #[arg(long)]
    weights: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = match cli.seed {
        Some(s) => s,
        None => file.get("seed")?.unwrap_or(1),
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file.get("threads")?,
    };
    if let Some(n) = threads {
        if n == 0 {
            bail!("config stage: --threads must be positive");
        }
        // Ignore the error if another pool was installed first; results do
        // not depend on thread count, only throughput does.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = match cli.out {
        Some(p) => Some(p),
        None => file.get::<String>("out")?.map(PathBuf::from),
    };
    let globals = Globals { seed, threads, out };

    match cli.command {
        Command::Fit(args) => cmd_fit(args, &file, &globals),
        Command::Trajectory(args) => cmd_trajectory(args, &file),
        Command::Simulate(args) => cmd_simulate(args, &file, &globals),
        Command::Evaluate(args) => cmd_evaluate(args, &file, &globals),
        Command::Report(args) => match args.which {
            ReportCommand::ExitHist(a) => cmd_exit_hist(a, &file, &globals),
            ReportCommand::TtoDiff(a) => cmd_tto_diff(a, &file),
        },
    }
}

struct Globals {
    seed: u64,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

impl Globals {
    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| anyhow!("config stage: this command needs --out <dir>"))
    }
}

/// Flat key-value JSON config; keys mirror long flag names with underscores
/// in place of dashes (for example `max_depth`, `train_fraction`).
struct FileConfig(serde_json::Map<String, Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self(serde_json::Map::new()));
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("config stage: reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("config stage: parsing {}", path.display()))?;
        match value {
            Value::Object(map) => Ok(Self(map)),
            other => bail!("config stage: expected a flat JSON object, got `{other}`"),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config stage: key `{key}` has the wrong type")),
        }
    }

    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        Ok(match flag {
            Some(p) => Some(p.clone()),
            None => self.get::<String>(key)?.map(PathBuf::from),
        })
    }
}

/// Timestamped stage lines, flushed to `run.log` at the end of a command.
/// This is the only artifact that may differ between identical reruns.
struct RunLog {
    start: Instant,
    lines: Vec<String>,
}

impl RunLog {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            lines: Vec::new(),
        }
    }

    fn stage(&mut self, stage: &str, msg: impl AsRef<str>) {
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.lines.push(format!(
            "[unix {unix} +{:.1}s] {stage}: {}",
            self.start.elapsed().as_secs_f64(),
            msg.as_ref()
        ));
    }

    fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("output stage: opening {}", path.display()))?;
        for line in &self.lines {
            writeln!(file, "{line}")
                .with_context(|| format!("output stage: writing {}", path.display()))?;
        }
        Ok(())
    }
}

/// A run directory staged at `<out>.partial` and renamed into place only
/// after every artifact is written, so interrupted runs never leave a half
/// filled directory at the requested path.
struct StagedDir {
    partial: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            bail!(
                "output stage: {} already exists; pick a fresh directory",
                target.display()
            );
        }
        let name = target
            .file_name()
            .ok_or_else(|| anyhow!("output stage: bad directory name {}", target.display()))?;
        let partial = target.with_file_name(format!("{}.partial", name.to_string_lossy()));
        if partial.exists() {
            fs::remove_dir_all(&partial)
                .with_context(|| format!("output stage: clearing stale {}", partial.display()))?;
        }
        fs::create_dir_all(&partial)
            .with_context(|| format!("output stage: creating {}", partial.display()))?;
        Ok(Self {
            partial,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    fn path(&self) -> &Path {
        &self.partial
    }

    fn commit(mut self) -> Result<PathBuf> {
        fs::rename(&self.partial, &self.target).with_context(|| {
            format!(
                "output stage: moving {} to {}",
                self.partial.display(),
                self.target.display()
            )
        })?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.partial);
        }
    }
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("output stage: serializing json")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("output stage: writing {}", path.display()))
}

/// The resolved settings a command actually ran with, echoed into the run
/// directory as `config.json`. Keys are sorted, so the file is stable.
fn write_effective_config(dir: &Path, entries: BTreeMap<&str, Value>) -> Result<()> {
    let map: BTreeMap<String, Value> = entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    write_json_file(&dir.join("config.json"), &map)
}

fn opt_path_value(p: &Option<PathBuf>) -> Value {
    match p {
        Some(p) => json!(p.display().to_string()),
        None => Value::Null,
    }
}

// ---------------------------------------------------------------------------
// Shared ingestion: parse -> season select -> filter -> truncate -> quality.

struct SamplerFlags {
    chains: Option<usize>,
    iters: Option<usize>,
    warmup: Option<usize>,
    target_accept: Option<f64>,
    max_depth: Option<usize>,
}

/// Defaults for one-off fits to real data: the full production run.
const FIT_DEFAULTS: (usize, usize, usize, f64, usize) = (4, 1500, 750, 0.8, 10);
/// Defaults for repeated study and cross-validation fits: shorter chains
/// with a depth cap that a pilot run showed never binds after adaptation.
const STUDY_DEFAULTS: (usize, usize, usize, f64, usize) = (4, 550, 250, 0.8, 8);

fn resolve_sampler(
    flags: &SamplerFlags,
    file: &FileConfig,
    seed: u64,
    defaults: (usize, usize, usize, f64, usize),
) -> Result<SamplerConfig> {
    let (chains, iters, warmup, accept, depth) = defaults;
    Ok(SamplerConfig {
        n_chains: flags.chains.or(file.get("chains")?).unwrap_or(chains),
        n_iter: flags.iters.or(file.get("iters")?).unwrap_or(iters),
        n_warmup: flags.warmup.or(file.get("warmup")?).unwrap_or(warmup),
        target_accept: flags
            .target_accept
            .or(file.get("target_accept")?)
            .unwrap_or(accept),
        max_tree_depth: flags.max_depth.or(file.get("max_depth")?).unwrap_or(depth),
        seed,
        ..SamplerConfig::default()
    })
}

struct QualityFlags {
    priors: Option<PathBuf>,
    tau: Option<f64>,
    nu: Option<f64>,
    estimate: bool,
}

struct Ingest {
    season: u16,
    rows_parsed: usize,
    rows_skipped: usize,
    rows_season: usize,
    rows_analysis: usize,
    truncation: TruncationSummary,
    fit_rows: Vec<PlateAppearance>,
    covariates: Vec<QualityCovariates>,
    hp: QualityHyperparams,
}

fn ingest(
    data: &Path,
    season: Option<u16>,
    qf: &QualityFlags,
    file: &FileConfig,
    log: &mut RunLog,
) -> Result<Ingest> {
    log.stage("parse", format!("reading {}", data.display()));
    let report = parse_plate_appearances(data, None).context("parse stage")?;
    if !report.skipped.is_empty() {
        log.stage(
            "parse",
            format!(
                "skipped {} malformed rows (first: line {}, {})",
                report.skipped.len(),
                report.skipped[0].line,
                report.skipped[0].reason
            ),
        );
    }
    let season = match season {
        Some(s) => s,
        None => report
            .records
            .iter()
            .map(|pa| pa.season)
            .max()
            .ok_or_else(|| anyhow!("parse stage: no valid rows in {}", data.display()))?,
    };

    let priors_path = file.path(&qf.priors, "priors")?;
    let priors = match &priors_path {
        Some(p) => PriorMeans::read_csv(p).context("quality stage: reading priors")?,
        None => PriorMeans::from_history(&report.records, season),
    };
    let hp = if qf.estimate {
        let (hp, est) = estimate_hyperparams(&report.records).context("quality stage")?;
        log.stage(
            "quality",
            format!(
                "estimated tau={:.4} nu={:.4} from {} batters / {} pitchers with history",
                hp.tau, hp.nu, est.batters_with_multiple_seasons, est.pitchers_with_multiple_seasons
            ),
        );
        hp
    } else {
        let tau = qf.tau.or(file.get("tau")?).unwrap_or(0.5);
        let nu = qf.nu.or(file.get("nu")?).unwrap_or(0.05);
        QualityHyperparams::new(tau, nu).context("quality stage")?
    };

    let season_rows: Vec<PlateAppearance> = report
        .records
        .iter()
        .filter(|pa| pa.season == season)
        .cloned()
        .collect();
    if season_rows.is_empty() {
        bail!("filter stage: no rows for season {season} in {}", data.display());
    }
    let analysis_rows = filter_analysis_set(&season_rows);
    let games = group_games(&analysis_rows).context("filter stage")?;
    let (kept_games, truncation) = truncate_selection_bias(games);
    let kept: BTreeSet<(&str, &str)> = kept_games
        .iter()
        .map(|g| (g.game_id.as_str(), g.pitcher_id.as_str()))
        .collect();
    let rows_analysis = analysis_rows.len();
    let fit_rows: Vec<PlateAppearance> = analysis_rows
        .into_iter()
        .filter(|pa| kept.contains(&(pa.game_id.as_str(), pa.pitcher_id.as_str())))
        .collect();
    if fit_rows.is_empty() {
        bail!("filter stage: truncation removed every game for season {season}");
    }
    log.stage(
        "filter",
        format!(
            "season {season}: {} analysis rows, {} of {} starter games kept, {} rows fit",
            rows_analysis, truncation.games_kept, truncation.games_before,
            fit_rows.len()
        ),
    );

    log.stage("quality", "attaching running quality covariates");
    let attached = attach_quality_covariates(&fit_rows, &priors, &hp).context("quality stage")?;

    Ok(Ingest {
        season,
        rows_parsed: report.records.len(),
        rows_skipped: report.skipped.len(),
        rows_season: season_rows.len(),
        rows_analysis,
        truncation,
        fit_rows,
        covariates: attached.covariates,
        hp,
    })
}

fn mean_by(rows: &[PlateAppearance], covs: &[QualityCovariates], f: impl Fn(&PlateAppearance, &QualityCovariates) -> f64) -> f64 {
    let n = rows.len().max(1) as f64;
    rows.iter().zip(covs).map(|(pa, c)| f(pa, c)).sum::<f64>() / n
}

// ---------------------------------------------------------------------------
// fit

fn cmd_fit(args: FitArgs, file: &FileConfig, globals: &Globals) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let data = file
        .path(&args.data, "data")?
        .ok_or_else(|| anyhow!("config stage: fit needs --data <csv>"))?;
    let season = match args.season {
        Some(s) => Some(s),
        None => file.get("season")?,
    };
    let variant_name: String = match args.model {
        Some(m) => m,
        None => file.get("model")?.unwrap_or_else(|| "baseline".to_string()),
    };
    let variant = Variant::from_str(&variant_name).context("config stage")?;
    let sampler = resolve_sampler(
        &SamplerFlags {
            chains: args.chains,
            iters: args.iters,
            warmup: args.warmup,
            target_accept: args.target_accept,
            max_depth: args.max_depth,
        },
        file,
        globals.seed,
        FIT_DEFAULTS,
    )?;
    let qf = QualityFlags {
        priors: args.priors,
        tau: args.tau,
        nu: args.nu,
        estimate: args.estimate_hyperparams || file.get("estimate_hyperparams")?.unwrap_or(false),
    };

    let ing = ingest(&data, season, &qf, file, &mut log)?;
    let dataset = Dataset::from_plate_appearances(&ing.fit_rows, &ing.covariates)
        .context("fit stage")?;
    let model = Model::for_dataset(variant, &dataset);
    log.stage(
        "fit",
        format!(
            "{} variant, {} rows, {} pitchers, {} batters, {} parameters",
            variant.name(),
            dataset.rows.len(),
            dataset.n_pitchers(),
            dataset.n_batters(),
            model.dim()
        ),
    );
    let draws = sample(&ModelTarget::new(model, &dataset), &sampler).context("fit stage")?;
    for w in &draws.stats.warnings {
        log.stage("fit", w);
    }
    let max_rhat = draws.max_rhat();
    let min_ess = draws
        .diagnostics
        .values()
        .map(|d| d.ess)
        .fold(f64::INFINITY, f64::min);
    log.stage(
        "fit",
        format!(
            "done: max split-Rhat {:.4}, min ESS {:.1}, {} divergences, {} leapfrogs",
            max_rhat, min_ess, draws.stats.divergences, draws.stats.leapfrogs
        ),
    );

    let staged = StagedDir::create(globals.out_dir()?)?;
    let dir = staged.path();

    write_effective_config(
        dir,
        BTreeMap::from([
            ("command", json!("fit")),
            ("data", json!(data.display().to_string())),
            ("season", json!(ing.season)),
            ("model", json!(variant.name())),
            ("chains", json!(sampler.n_chains)),
            ("iters", json!(sampler.n_iter)),
            ("warmup", json!(sampler.n_warmup)),
            ("target_accept", json!(sampler.target_accept)),
            ("max_depth", json!(sampler.max_tree_depth)),
            ("seed", json!(sampler.seed)),
            ("priors", opt_path_value(&qf.priors)),
            ("tau", json!(ing.hp.tau)),
            ("nu", json!(ing.hp.nu)),
            ("estimate_hyperparams", json!(qf.estimate)),
            ("threads", json!(globals.threads)),
        ]),
    )?;

    let meta = json!({
        "command": "fit",
        "variant": variant.name(),
        "season": ing.season,
        "rows_parsed": ing.rows_parsed,
        "rows_skipped": ing.rows_skipped,
        "rows_season": ing.rows_season,
        "rows_analysis": ing.rows_analysis,
        "rows_fit": ing.fit_rows.len(),
        "games_before_truncation": ing.truncation.games_before,
        "games_kept": ing.truncation.games_kept,
        "truncation_fraction_removed": ing.truncation.fraction_removed,
        "n_pitchers": dataset.n_pitchers(),
        "n_batters": dataset.n_batters(),
        "mean_x_bat": mean_by(&ing.fit_rows, &ing.covariates, |_, c| c.x_batter),
        "mean_x_pit": mean_by(&ing.fit_rows, &ing.covariates, |_, c| c.x_pitcher),
        "mean_hand": mean_by(&ing.fit_rows, &ing.covariates, |pa, _| f64::from(u8::from(pa.hand_match()))),
        "mean_home": mean_by(&ing.fit_rows, &ing.covariates, |pa, _| f64::from(u8::from(pa.home))),
        "tau": ing.hp.tau,
        "nu": ing.hp.nu,
        "param_names": draws.param_names,
        "max_rhat": max_rhat,
        "min_ess": min_ess,
        "divergences": draws.stats.divergences,
    });
    write_json_file(&dir.join("meta.json"), &meta)?;

    let draws_file = fs::File::create(dir.join("draws.csv"))
        .context("output stage: creating draws.csv")?;
    write_draws_csv(&draws, draws_file).context("output stage: draws.csv")?;
    let diag_file = fs::File::create(dir.join("diagnostics.json"))
        .context("output stage: creating diagnostics.json")?;
    write_diagnostics_json(&draws, diag_file).context("output stage: diagnostics.json")?;
    fs::write(dir.join("summary.txt"), fit_summary_text(&draws, variant)?)
        .context("output stage: summary.txt")?;

    log.stage("output", "run directory complete");
    log.write_to(&dir.join("run.log"))?;
    let final_dir = staged.commit()?;
    println!("fit written to {}", final_dir.display());

    if max_rhat >= RHAT_GATE {
        eprintln!("warning: max split-Rhat {max_rhat:.3} breaches the {RHAT_GATE} gate; treat this fit as unconverged");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// Plain-text posterior table. The pass-shift parameters (the quantities the
/// whole analysis is about) come first, then everything else.
fn fit_summary_text(draws: &PosteriorDraws, variant: Variant) -> Result<String> {
    let mut text = String::new();
    let _ = writeln!(text, "variant: {}", variant.name());
    let _ = writeln!(
        text,
        "chains: {}   kept draws per chain: {}   total: {}",
        draws.n_chains,
        draws.n_kept,
        draws.n_total()
    );
    let _ = writeln!(
        text,
        "divergences: {}   depth-limit hits: {}",
        draws.stats.divergences, draws.stats.max_depth_hits
    );
    let max_rhat = draws.max_rhat();
    let min_ess = draws
        .diagnostics
        .values()
        .map(|d| d.ess)
        .fold(f64::INFINITY, f64::min);
    let _ = writeln!(text, "max split-Rhat: {max_rhat:.4}   min ESS: {min_ess:.1}");
    let _ = writeln!(text);

    let header = format!(
        "{:<28} {:>10} {:>10} {:>10} {:>10} {:>8} {:>10}",
        "parameter", "mean", "sd", "2.5%", "97.5%", "Rhat", "ESS"
    );
    let mut rows: Vec<(usize, String)> = Vec::with_capacity(draws.dim());
    for (p, name) in draws.param_names.iter().enumerate() {
        let s = summarize(&draws.flat_param(p)).context("summary stage")?;
        let d = &draws.diagnostics[name];
        rows.push((
            p,
            format!(
                "{:<28} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>10.1}",
                name, s.mean, s.sd, s.q025, s.q975, d.rhat, d.ess
            ),
        ));
    }

    let is_pass_shift = |name: &str| name.starts_with("beta2[") || name.starts_with("beta3[");
    if draws.param_names.iter().any(|n| is_pass_shift(n)) {
        let _ = writeln!(text, "pass-shift parameters:");
        let _ = writeln!(text, "{header}");
        for (p, row) in &rows {
            if is_pass_shift(&draws.param_names[*p]) {
                let _ = writeln!(text, "{row}");
            }
        }
        let _ = writeln!(text);
    }
    let _ = writeln!(text, "all parameters:");
    let _ = writeln!(text, "{header}");
    for (_, row) in &rows {
        let _ = writeln!(text, "{row}");
    }
    Ok(text)
}

// ---------------------------------------------------------------------------
// trajectory

/// Loads the model shape and kept draws back out of a fit run directory.
fn load_fit(fit_dir: &Path) -> Result<(Model, PosteriorDraws, Value)> {
    let meta_path = fit_dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)
        .with_context(|| format!("input stage: reading {}", meta_path.display()))?;
    let meta: Value = serde_json::from_str(&text)
        .with_context(|| format!("input stage: parsing {}", meta_path.display()))?;
    let variant_name = meta["variant"]
        .as_str()
        .ok_or_else(|| anyhow!("input stage: meta.json lacks a variant field"))?;
    let variant = Variant::from_str(variant_name).context("input stage")?;
    let n_pitchers = meta["n_pitchers"].as_u64().unwrap_or(0) as usize;
    let n_batters = meta["n_batters"].as_u64().unwrap_or(0) as usize;
    let model = Model::new(variant, n_pitchers, n_batters);
    let draws = read_draws_csv(fit_dir.join("draws.csv")).context("input stage")?;
    if draws.dim() != model.dim() {
        bail!(
            "input stage: draws.csv has {} parameters but meta.json describes a {}-parameter model",
            draws.dim(),
            model.dim()
        );
    }
    Ok((model, draws, meta))
}

fn resolve_state(
    preset: Option<&str>,
    explicit: Option<&str>,
    meta: Option<&Value>,
) -> Result<PlateState> {
    if let Some(text) = explicit {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("config stage: bad --state `{text}`"))?;
        if parts.len() != 4 {
            bail!("config stage: --state needs 4 comma-separated values (x_bat,x_pit,hand,home), got {}", parts.len());
        }
        return Ok(PlateState::new(parts[0], parts[1], parts[2], parts[3]));
    }
    match preset.unwrap_or("sim-median") {
        "sim-median" => Ok(reference_state()),
        "data-mean" => {
            let meta = meta.ok_or_else(|| {
                anyhow!("config stage: the data-mean preset needs a fit directory with meta.json")
            })?;
            let field = |key: &str| -> Result<f64> {
                meta[key]
                    .as_f64()
                    .ok_or_else(|| anyhow!("input stage: meta.json lacks numeric `{key}`"))
            };
            Ok(PlateState::new(
                field("mean_x_bat")?,
                field("mean_x_pit")?,
                field("mean_hand")?,
                field("mean_home")?,
            ))
        }
        other => bail!("config stage: unknown preset `{other}` (expected sim-median or data-mean)"),
    }
}

fn resolve_weights(text: Option<&str>) -> Result<OutcomeWeights> {
    let Some(text) = text else {
        return Ok(OutcomeWeights::standard());
    };
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("config stage: bad --weights `{text}`"))?;
    let arr: [f64; N_CATEGORIES] = parts.as_slice().try_into().map_err(|_| {
        anyhow!(
            "config stage: --weights needs {} comma-separated values, got {}",
            N_CATEGORIES,
            parts.len()
        )
    })?;
    OutcomeWeights::new(arr).context("config stage")
}

fn cmd_trajectory(args: TrajectoryArgs, file: &FileConfig) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let fit_dir = file
        .path(&args.fit, "fit")?
        .ok_or_else(|| anyhow!("config stage: trajectory needs --fit <run-dir>"))?;
    let preset = match args.preset {
        Some(p) => Some(p),
        None => file.get("preset")?,
    };
    let state_spec = match args.state {
        Some(s) => Some(s),
        None => file.get("state")?,
    };
    let weights_spec = match args.weights {
        Some(w) => Some(w),
        None => file.get("weights")?,
    };

    let (model, draws, meta) = load_fit(&fit_dir)?;
    let state = resolve_state(preset.as_deref(), state_spec.as_deref(), Some(&meta))?;
    let weights = resolve_weights(weights_spec.as_deref())?;
    log.stage(
        "trajectory",
        format!(
            "{} draws at state ({}, {}, {}, {})",
            draws.n_total(),
            state.x_bat, state.x_pit, state.hand, state.home
        ),
    );

    let trajs = trajectory_draws(&model, &draws, &state, &weights).context("trajectory stage")?;
    let summary = TrajectorySummary::from_draws(&trajs).context("trajectory stage")?;
    let traj_file = fs::File::create(fit_dir.join("trajectory.csv"))
        .context("output stage: creating trajectory.csv")?;
    summary
        .write_csv(traj_file)
        .context("output stage: trajectory.csv")?;

    // Flat per-pass averages of the same posterior draws: the overlay lines
    // readers compare against the smooth trajectory.
    let per_pass: Vec<[f64; 3]> = trajs.iter().map(tto_averages).collect();
    let mut w = csv::Writer::from_writer(
        fs::File::create(fit_dir.join("tto_averages.csv"))
            .context("output stage: creating tto_averages.csv")?,
    );
    w.write_record(["tto", "mean", "sd", "q025", "q25", "q75", "q975"])
        .context("output stage: tto_averages.csv")?;
    for pass in 0..3 {
        let samples: Vec<f64> = per_pass.iter().map(|a| a[pass]).collect();
        let s = summarize(&samples).context("trajectory stage")?;
        w.write_record([
            (pass + 1).to_string(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q025.to_string(),
            s.q25.to_string(),
            s.q75.to_string(),
            s.q975.to_string(),
        ])
        .context("output stage: tto_averages.csv")?;
    }
    w.flush().context("output stage: tto_averages.csv")?;

    log.stage("output", "trajectory.csv and tto_averages.csv written");
    log.write_to(&fit_dir.join("run.log"))?;
    println!("trajectory written to {}", fit_dir.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// simulate

fn cmd_simulate(args: SimulateArgs, file: &FileConfig, globals: &Globals) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let study_spec: String = match args.study {
        Some(s) => s,
        None => file
            .get("study")?
            .ok_or_else(|| anyhow!("config stage: simulate needs --study 1|2|3"))?,
    };
    let study = SimStudy::from_str(&study_spec).map_err(|e| anyhow!("config stage: {e}"))?;
    let scale: String = match args.scale {
        Some(s) => s,
        None => file.get("scale")?.unwrap_or_else(|| "desk".to_string()),
    };
    let mut cfg = match scale.as_str() {
        "desk" => SimStudyConfig::desk(study, globals.seed),
        "paper" => SimStudyConfig::paper_scale(study, globals.seed),
        other => bail!("config stage: unknown scale `{other}` (expected desk or paper)"),
    };
    if let Some(n) = args.seasons.or(file.get("seasons")?) {
        cfg.n_seasons = n;
    }
    if let Some(g) = args.games.or(file.get("games")?) {
        cfg.games_per_season = g;
    }
    if let Some(f) = args.train_fraction.or(file.get("train_fraction")?) {
        cfg.train_fraction = f;
    }
    let sampler = resolve_sampler(
        &SamplerFlags {
            chains: args.chains,
            iters: args.iters,
            warmup: args.warmup,
            target_accept: args.target_accept,
            max_depth: args.max_depth,
        },
        file,
        globals.seed,
        STUDY_DEFAULTS,
    )?;

    log.stage(
        "simulate",
        format!(
            "study {study}: {} seasons x {} games, train fraction {}, {} chains x {} iterations",
            cfg.n_seasons, cfg.games_per_season, cfg.train_fraction, sampler.n_chains, sampler.n_iter
        ),
    );
    let report = run_study(&cfg, &sampler).context("simulate stage")?;
    for w in &report.warnings {
        log.stage("simulate", w);
    }
    log.stage(
        "simulate",
        format!(
            "coverage all {:.3}, beta {:.3}, {} of {} seasons excluded",
            report.coverage_all,
            report.coverage_beta,
            report.excluded_seasons.len(),
            cfg.n_seasons
        ),
    );

    let staged = StagedDir::create(globals.out_dir()?)?;
    let dir = staged.path();
    write_effective_config(
        dir,
        BTreeMap::from([
            ("command", json!("simulate")),
            ("study", json!(study.to_string())),
            ("scale", json!(scale)),
            ("seasons", json!(cfg.n_seasons)),
            ("games", json!(cfg.games_per_season)),
            ("train_fraction", json!(cfg.train_fraction)),
            ("chains", json!(sampler.n_chains)),
            ("iters", json!(sampler.n_iter)),
            ("warmup", json!(sampler.n_warmup)),
            ("target_accept", json!(sampler.target_accept)),
            ("max_depth", json!(sampler.max_tree_depth)),
            ("seed", json!(cfg.seed)),
            ("threads", json!(globals.threads)),
        ]),
    )?;
    write_json_file(&dir.join("report.json"), &report)?;

    // Figure-ready CSVs: the generating curve once, and truth plus posterior
    // bands per season.
    let mut w = csv::Writer::from_writer(
        fs::File::create(dir.join("truth_trajectory.csv"))
            .context("output stage: creating truth_trajectory.csv")?,
    );
    w.write_record(["t", "truth_xwoba"])
        .context("output stage: truth_trajectory.csv")?;
    for (i, v) in report.truth.trajectory.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])
            .context("output stage: truth_trajectory.csv")?;
    }
    w.flush().context("output stage: truth_trajectory.csv")?;

    let seasons_dir = dir.join("seasons");
    fs::create_dir_all(&seasons_dir).context("output stage: creating seasons/")?;
    for season in &report.seasons {
        let path = seasons_dir.join(format!("season_{:02}_trajectory.csv", season.season));
        let mut w = csv::Writer::from_writer(
            fs::File::create(&path)
                .with_context(|| format!("output stage: creating {}", path.display()))?,
        );
        w.write_record(["t", "truth", "mean", "q25", "q75", "q025", "q975"])
            .context("output stage: season trajectory")?;
        for (point, truth) in season.trajectory.points.iter().zip(&report.truth.trajectory) {
            w.write_record([
                point.t.to_string(),
                truth.to_string(),
                point.mean.to_string(),
                point.q25.to_string(),
                point.q75.to_string(),
                point.q025.to_string(),
                point.q975.to_string(),
            ])
            .context("output stage: season trajectory")?;
        }
        w.flush().context("output stage: season trajectory")?;
    }

    log.stage("output", "run directory complete");
    log.write_to(&dir.join("run.log"))?;
    let final_dir = staged.commit()?;
    println!("study report written to {}", final_dir.display());

    if !report.excluded_seasons.is_empty() {
        eprintln!(
            "warning: {} seasons breached the {RHAT_GATE} scale-reduction gate and were excluded",
            report.excluded_seasons.len()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// evaluate

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig, globals: &Globals) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let data = file
        .path(&args.data, "data")?
        .ok_or_else(|| anyhow!("config stage: evaluate needs --data <csv>"))?;
    let season = match args.season {
        Some(s) => Some(s),
        None => file.get("season")?,
    };
    let folds = match args.folds {
        Some(k) => k,
        None => file.get("folds")?.unwrap_or(5),
    };
    let variant_name: String = match args.model {
        Some(m) => m,
        None => file.get("model")?.unwrap_or_else(|| "baseline".to_string()),
    };
    let variant = Variant::from_str(&variant_name).context("config stage")?;
    let sampler = resolve_sampler(
        &SamplerFlags {
            chains: args.chains,
            iters: args.iters,
            warmup: args.warmup,
            target_accept: args.target_accept,
            max_depth: args.max_depth,
        },
        file,
        globals.seed,
        STUDY_DEFAULTS,
    )?;
    let qf = QualityFlags {
        priors: args.priors,
        tau: args.tau,
        nu: args.nu,
        estimate: args.estimate_hyperparams || file.get("estimate_hyperparams")?.unwrap_or(false),
    };

    let ing = ingest(&data, season, &qf, file, &mut log)?;
    log.stage(
        "evaluate",
        format!("{folds}-fold cross-validation of the {} variant", variant.name()),
    );
    let report = kfold_cv(&ing.fit_rows, &ing.covariates, folds, variant, &sampler)
        .context("evaluate stage")?;
    log.stage(
        "evaluate",
        format!(
            "mean cross-entropy: model {:.4}, base rates {:.4}",
            report.mean_ce_model, report.mean_ce_baserate
        ),
    );

    let staged = StagedDir::create(globals.out_dir()?)?;
    let dir = staged.path();
    write_effective_config(
        dir,
        BTreeMap::from([
            ("command", json!("evaluate")),
            ("data", json!(data.display().to_string())),
            ("season", json!(ing.season)),
            ("folds", json!(folds)),
            ("model", json!(variant.name())),
            ("chains", json!(sampler.n_chains)),
            ("iters", json!(sampler.n_iter)),
            ("warmup", json!(sampler.n_warmup)),
            ("target_accept", json!(sampler.target_accept)),
            ("max_depth", json!(sampler.max_tree_depth)),
            ("seed", json!(sampler.seed)),
            ("priors", opt_path_value(&qf.priors)),
            ("tau", json!(ing.hp.tau)),
            ("nu", json!(ing.hp.nu)),
            ("threads", json!(globals.threads)),
        ]),
    )?;
    write_json_file(&dir.join("cv.json"), &report)?;

    let mut w = csv::Writer::from_writer(
        fs::File::create(dir.join("folds.csv")).context("output stage: creating folds.csv")?,
    );
    w.write_record([
        "fold",
        "n_train_rows",
        "n_test_rows",
        "max_rhat",
        "divergences",
        "ce_model",
        "ce_baserate",
        "ce_clamp_events",
    ])
    .context("output stage: folds.csv")?;
    for f in &report.folds {
        w.write_record([
            f.fold.to_string(),
            f.n_train_rows.to_string(),
            f.n_test_rows.to_string(),
            f.max_rhat.to_string(),
            f.divergences.to_string(),
            f.ce_model.to_string(),
            f.ce_baserate.to_string(),
            f.ce_clamp_events.to_string(),
        ])
        .context("output stage: folds.csv")?;
    }
    w.flush().context("output stage: folds.csv")?;

    log.stage("output", "run directory complete");
    log.write_to(&dir.join("run.log"))?;
    let final_dir = staged.commit()?;
    println!("cross-validation report written to {}", final_dir.display());

    let worst = report
        .folds
        .iter()
        .map(|f| f.max_rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst >= RHAT_GATE {
        eprintln!("warning: a fold fit breached the {RHAT_GATE} scale-reduction gate (max split-Rhat {worst:.3})");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// report exit-hist

fn cmd_exit_hist(args: ExitHistArgs, file: &FileConfig, globals: &Globals) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let data = file
        .path(&args.data, "data")?
        .ok_or_else(|| anyhow!("config stage: exit-hist needs --data <csv>"))?;
    let season_flag = match args.season {
        Some(s) => Some(s),
        None => file.get("season")?,
    };
    let bin_by: String = match args.bin_by {
        Some(b) => b,
        None => file.get("bin_by")?.unwrap_or_else(|| "game-woba".to_string()),
    };
    let bins = match args.bins {
        Some(b) => b,
        None => file.get("bins")?.unwrap_or(6),
    };

    log.stage("parse", format!("reading {}", data.display()));
    let report = parse_plate_appearances(&data, None).context("parse stage")?;
    let season = match season_flag {
        Some(s) => s,
        None => report
            .records
            .iter()
            .map(|pa| pa.season)
            .max()
            .ok_or_else(|| anyhow!("parse stage: no valid rows in {}", data.display()))?,
    };
    let season_rows: Vec<PlateAppearance> = report
        .records
        .iter()
        .filter(|pa| pa.season == season)
        .cloned()
        .collect();
    // Exit patterns are the evidence for the selection-bias truncation, so
    // the histogram is built on the untruncated starter games.
    let analysis_rows = filter_analysis_set(&season_rows);
    let games = group_games(&analysis_rows).context("filter stage")?;
    log.stage(
        "filter",
        format!("season {season}: {} starter games", games.len()),
    );

    let hist = match bin_by.as_str() {
        "game-woba" => {
            exit_histogram(&games, ExitBinBy::MeanGameWoba, bins).context("report stage")?
        }
        "pitcher-quality" => {
            let priors_path = file.path(&args.priors, "priors")?;
            let priors = match &priors_path {
                Some(p) => PriorMeans::read_csv(p).context("quality stage: reading priors")?,
                None => PriorMeans::from_history(&report.records, season),
            };
            let tau = args.tau.or(file.get("tau")?).unwrap_or(0.5);
            let nu = args.nu.or(file.get("nu")?).unwrap_or(0.05);
            let hp = QualityHyperparams::new(tau, nu).context("quality stage")?;
            let attached =
                attach_quality_covariates(&analysis_rows, &priors, &hp).context("quality stage")?;
            // Quality entering each game: the running estimate at the
            // pitcher's first plate appearance of that game.
            let mut entering: BTreeMap<(String, String), f64> = BTreeMap::new();
            for (pa, cov) in analysis_rows.iter().zip(&attached.covariates) {
                entering
                    .entry((pa.game_id.clone(), pa.pitcher_id.clone()))
                    .or_insert(cov.x_pitcher);
            }
            exit_histogram(&games, ExitBinBy::PitcherQuality(&entering), bins)
                .context("report stage")?
        }
        other => bail!(
            "config stage: unknown --bin-by `{other}` (expected pitcher-quality or game-woba)"
        ),
    };

    let staged = StagedDir::create(globals.out_dir()?)?;
    let dir = staged.path();
    write_effective_config(
        dir,
        BTreeMap::from([
            ("command", json!("report exit-hist")),
            ("data", json!(data.display().to_string())),
            ("season", json!(season)),
            ("bin_by", json!(bin_by)),
            ("bins", json!(bins)),
            ("priors", opt_path_value(&args.priors)),
        ]),
    )?;
    let hist_file = fs::File::create(dir.join("exit_histogram.csv"))
        .context("output stage: creating exit_histogram.csv")?;
    hist.write_csv(hist_file)
        .context("output stage: exit_histogram.csv")?;

    log.stage("output", "run directory complete");
    log.write_to(&dir.join("run.log"))?;
    let final_dir = staged.commit()?;
    println!("exit histogram written to {}", final_dir.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// report tto-diff

fn cmd_tto_diff(args: TtoDiffArgs, file: &FileConfig) -> Result<ExitCode> {
    let mut log = RunLog::new();
    let fit_dir = file
        .path(&args.fit, "fit")?
        .ok_or_else(|| anyhow!("config stage: tto-diff needs --fit <run-dir>"))?;
    let pair_spec: String = match args.pair {
        Some(p) => p,
        None => file
            .get("pair")?
            .ok_or_else(|| anyhow!("config stage: tto-diff needs --pair 12|23"))?,
    };
    let pair = TtoPair::from_str(&pair_spec).map_err(|e| anyhow!("config stage: {e}"))?;
    let scale: String = match args.scale {
        Some(s) => s,
        None => file.get("scale")?.unwrap_or_else(|| "xwoba".to_string()),
    };
    let outcome_spec: Option<String> = match args.outcome {
        Some(o) => Some(o),
        None => file.get("outcome")?,
    };
    let outcome = outcome_spec
        .as_deref()
        .map(|code| {
            Outcome::from_code(code)
                .ok_or_else(|| anyhow!("config stage: unknown outcome code `{code}`"))
        })
        .transpose()?;
    let preset = match args.preset {
        Some(p) => Some(p),
        None => file.get("preset")?,
    };
    let state_spec = match args.state {
        Some(s) => Some(s),
        None => file.get("state")?,
    };
    let weights_spec = match args.weights {
        Some(w) => Some(w),
        None => file.get("weights")?,
    };

    let (model, draws, meta) = load_fit(&fit_dir)?;
    let state = resolve_state(preset.as_deref(), state_spec.as_deref(), Some(&meta))?;
    let weights = resolve_weights(weights_spec.as_deref())?;

    let samples: Vec<f64> = match (scale.as_str(), outcome) {
        ("xwoba", None) => {
            tto_mean_diff(&model, &draws, &state, &weights, pair).context("report stage")?
        }
        ("xwoba", Some(k)) => outcome_xwoba_diff(&model, &draws, &state, &weights, k, pair)
            .context("report stage")?,
        ("probability", Some(k)) => {
            outcome_prob_diff(&model, &draws, &state, k, pair).context("report stage")?
        }
        ("probability", None) => {
            bail!("config stage: --scale probability needs --outcome <code>")
        }
        (other, _) => bail!(
            "config stage: unknown scale `{other}` (expected xwoba or probability)"
        ),
    };
    let summary = summarize(&samples).context("report stage")?;
    let share_above_zero =
        samples.iter().filter(|v| **v > 0.0).count() as f64 / samples.len() as f64;

    let stem = match outcome {
        Some(k) => format!("tto_diff_{}_{}_{}", pair.label(), scale, k.code()),
        None => format!("tto_diff_{}_{}", pair.label(), scale),
    };
    let csv_path = fit_dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_writer(
        fs::File::create(&csv_path)
            .with_context(|| format!("output stage: creating {}", csv_path.display()))?,
    );
    w.write_record(["draw", "value"]).context("output stage")?;
    for (i, v) in samples.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])
            .context("output stage")?;
    }
    w.flush().context("output stage")?;

    let annotations = diff_annotations(pair, &scale, outcome, &summary, share_above_zero);
    write_json_file(&fit_dir.join(format!("{stem}.json")), &annotations)?;

    log.stage(
        "report",
        format!("{stem}: mean {:.4}, {} draws", summary.mean, summary.n),
    );
    log.write_to(&fit_dir.join("run.log"))?;
    println!("difference samples written to {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Sidecar for the difference histogram: the mean line, the zero reference
/// line, and the quantile spread.
fn diff_annotations(
    pair: TtoPair,
    scale: &str,
    outcome: Option<Outcome>,
    s: &SampleSummary,
    share_above_zero: f64,
) -> Value {
    json!({
        "pair": pair.label(),
        "scale": scale,
        "outcome": outcome.map(|k| k.code()),
        "n": s.n,
        "mean": s.mean,
        "sd": s.sd,
        "q025": s.q025,
        "q25": s.q25,
        "q75": s.q75,
        "q975": s.q975,
        "zero_reference": 0.0,
        "share_above_zero": share_above_zero,
    })
}
