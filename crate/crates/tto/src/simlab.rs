//! Synthetic season generation and the simulation studies built on it.
//!
//! Three generating regimes share one set of intercepts, decline slopes, and
//! covariate effects and differ only in their pass-boundary discontinuities:
//!
//! - study 1: no discontinuities (smooth decline only),
//! - study 2: modest jumps at both boundaries, about 10 xwOBA points each,
//! - study 3: no second-pass jump, one large third-pass jump.
//!
//! A study run generates independent seasons, splits each at the game level,
//! fits the constrained baseline model on the training share, and scores
//! credible-interval coverage of the generating parameters, discontinuity
//! statistics against closed-form truths, and out-of-sample cross-entropy
//! against an outcome-frequency baseline. Every random quantity is derived
//! from the study seed, so reports are reproducible bit for bit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    summarize, trajectory_boundary_step, trajectory_draws, trajectory_mean_diff, AnalysisError,
    OutcomeWeights, SampleSummary, TrajectorySummary, TtoPair,
};
use crate::data::{Hand, Outcome, PlateAppearance, LINEUP_SIZE, MAX_T};
use crate::model::{
    Dataset, Model, ModelError, ParamLayout, PlateState, Variant, N_CATEGORIES, N_FREE,
};
use crate::quality::{logit, PriorMeans, QualityCovariates, THETA_CLAMP};
use crate::sampler::{sample, ModelTarget, PosteriorDraws, SamplerConfig, SamplerError};

const PAS_PER_GAME: usize = MAX_T as usize;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad simulation config: {0}")]
    BadConfig(String),
    #[error("season {season} fit failed: {source}")]
    Fit {
        season: usize,
        #[source]
        source: SamplerError,
    },
    #[error("season {season} produced invalid fit data: {source}")]
    Data {
        season: usize,
        #[source]
        source: ModelError,
    },
    #[error("season {season} posterior analysis failed: {source}")]
    Analysis {
        season: usize,
        #[source]
        source: AnalysisError,
    },
    #[error("fold {fold} is too small to fit")]
    FoldTooSmall { fold: usize },
    #[error("fold count {k} must be between 2 and the number of games ({games})")]
    BadFoldCount { k: usize, games: usize },
    #[error("cannot score an empty test set")]
    EmptyTest,
}

/// Generating regime selector. The numbering is part of the external
/// interface (CLI flag, report field); see the module docs for what each
/// regime does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimStudy {
    One,
    Two,
    Three,
}

impl SimStudy {
    pub const ALL: [SimStudy; 3] = [SimStudy::One, SimStudy::Two, SimStudy::Three];

    pub fn index(self) -> u8 {
        match self {
            SimStudy::One => 1,
            SimStudy::Two => 2,
            SimStudy::Three => 3,
        }
    }
}

impl std::str::FromStr for SimStudy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1" => Ok(SimStudy::One),
            "2" => Ok(SimStudy::Two),
            "3" => Ok(SimStudy::Three),
            other => Err(format!("unknown study `{other}`, expected 1, 2, or 3")),
        }
    }
}

impl std::fmt::Display for SimStudy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Covariate distributions for synthetic seasons. Qualities are drawn on the
/// wOBA scale and logit-transformed after clamping; the defaults match the
/// observed medians and spreads (batter sd 41.5 points, pitcher sd 36.7).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub batter_mean: f64,
    pub batter_sd: f64,
    pub pitcher_mean: f64,
    pub pitcher_sd: f64,
    /// Probability that a batter shares the pitcher's handedness.
    pub hand_match_rate: f64,
    /// Probability that the lineup bats at home, drawn once per game.
    pub home_rate: f64,
}

impl Default for CovariateModel {
    fn default() -> Self {
        Self {
            batter_mean: 0.315,
            batter_sd: 0.0415,
            pitcher_mean: 0.315,
            pitcher_sd: 0.0367,
            hand_match_rate: 0.45,
            home_rate: 0.5,
        }
    }
}

impl CovariateModel {
    fn validate(&self) -> Result<(), SimError> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.batter_mean > 0.0 && self.batter_mean < 1.0)
            || !(self.pitcher_mean > 0.0 && self.pitcher_mean < 1.0)
        {
            return Err(SimError::BadConfig(
                "quality means must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.batter_sd > 0.0 && self.batter_sd.is_finite())
            || !(self.pitcher_sd > 0.0 && self.pitcher_sd.is_finite())
        {
            return Err(SimError::BadConfig("quality sds must be positive".into()));
        }
        if !prob(self.hand_match_rate) || !prob(self.home_rate) {
            return Err(SimError::BadConfig(
                "hand and home rates must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Configuration of one simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub study: SimStudy,
    pub n_seasons: usize,
    pub games_per_season: usize,
    pub seed: u64,
    /// Share of games used for fitting; the rest score cross-entropy.
    pub train_fraction: f64,
    pub covariates: CovariateModel,
}

impl SimStudyConfig {
    /// Desk scale: small enough to run on a workstation while leaving
    /// hundreds of coverage trials per study.
    pub fn desk(study: SimStudy, seed: u64) -> Self {
        Self {
            study,
            n_seasons: 20,
            games_per_season: 1000,
            seed,
            train_fraction: 0.8,
            covariates: CovariateModel::default(),
        }
    }

    /// Full scale: 25 seasons of 4860 games each.
    pub fn paper_scale(study: SimStudy, seed: u64) -> Self {
        Self {
            n_seasons: 25,
            games_per_season: 4860,
            ..Self::desk(study, seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_seasons == 0 {
            return Err(SimError::BadConfig("n_seasons must be positive".into()));
        }
        if self.games_per_season < 2 {
            return Err(SimError::BadConfig(
                "games_per_season must be at least 2 to split train/test".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(SimError::BadConfig(
                "train_fraction must lie strictly inside (0, 1)".into(),
            ));
        }
        self.covariates.validate()
    }
}

/// True coefficient values for one generating regime, stored on the
/// constrained scale: `eta[cov][k]` follows the covariate order
/// (x_bat, x_pit, hand, home).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratingParams {
    pub alpha0: [f64; N_FREE],
    pub alpha1: [f64; N_FREE],
    pub beta2: [f64; N_FREE],
    pub beta3: [f64; N_FREE],
    pub eta: [[f64; N_FREE]; 4],
}

impl GeneratingParams {
    pub fn for_study(study: SimStudy) -> Self {
        let (beta2, beta3) = match study {
            SimStudy::One => ([0.0; N_FREE], [0.0; N_FREE]),
            SimStudy::Two => (
                [2.0 / 65.0, 0.0, 4.0 / 65.0, 2.0 / 65.0, 0.0, 2.0 / 65.0],
                [1.0 / 15.0, 0.0, 2.0 / 15.0, 1.0 / 15.0, 0.0, 1.0 / 15.0],
            ),
            SimStudy::Three => (
                [0.0; N_FREE],
                [1.0 / 10.0, 1.0 / 10.0, 3.0 / 10.0, 1.0 / 10.0, 1.0 / 10.0, 3.0 / 20.0],
            ),
        };
        Self {
            alpha0: [-0.601, -1.804, -0.475, -0.943, -1.510, -0.565],
            alpha1: [0.00271, 0.0122, 0.00354, 0.00635, 0.0223, 0.00926],
            beta2,
            beta3,
            eta: [
                [0.865, 1.408, 0.371, 0.856, 1.399, 1.525],
                [1.128, 1.987, 1.050, 1.472, 3.286, 1.850],
                [-0.201, 0.166, -0.0164, -0.0420, -0.462, -0.0958],
                [0.0792, -0.0776, 0.0245, -0.00103, 0.107, 0.0230],
            ],
        }
    }

    /// Constrained baseline parameter vector in layout order.
    pub fn to_constrained(&self) -> Vec<f64> {
        let layout = ParamLayout::new(Variant::BaselineConstrained, 0, 0);
        let mut con = vec![0.0; layout.dim()];
        for k in 0..N_FREE {
            con[layout.alpha0(k)] = self.alpha0[k];
            con[layout.alpha1(k)] = self.alpha1[k];
            con[layout.beta2(k)] = self.beta2[k];
            con[layout.beta3(k)] = self.beta3[k];
            for cov in 0..4 {
                con[layout.eta(k, cov)] = self.eta[cov][k];
            }
        }
        con
    }
}

/// Reference covariate profile for simulated trajectories: median-quality
/// batter and pitcher, matching hands, lineup on the road.
pub fn reference_state() -> PlateState {
    PlateState::new(logit(0.315), logit(0.315), 1.0, 0.0)
}

/// Closed-form functionals of a generating regime at the reference state.
/// These are the deterministic "true curve" values that study reports and
/// figures compare posteriors against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFunctionals {
    /// True xwOBA at t = 1..=27, in points.
    pub trajectory: Vec<f64>,
    /// Pass-averaged differences.
    pub d12: f64,
    pub d23: f64,
    /// Boundary steps.
    pub jump12: f64,
    pub jump23: f64,
}

pub fn truth_functionals(gen: &GeneratingParams, weights: &OutcomeWeights) -> TruthFunctionals {
    let model = Model::new(Variant::BaselineConstrained, 0, 0);
    let con = gen.to_constrained();
    let traj = crate::analysis::draw_trajectory(&model, &con, &reference_state(), weights);
    TruthFunctionals {
        trajectory: traj.to_vec(),
        d12: trajectory_mean_diff(&traj, TtoPair::FirstSecond),
        d23: trajectory_mean_diff(&traj, TtoPair::SecondThird),
        jump12: trajectory_boundary_step(&traj, TtoPair::FirstSecond),
        jump23: trajectory_boundary_step(&traj, TtoPair::SecondThird),
    }
}

/// One generated season: plate appearances in play order, the true-quality
/// covariates aligned with them, and the per-player true wOBA talents (also
/// usable as a priors table when fitting the emitted CSV through the
/// running-quality pipeline).
#[derive(Debug, Clone)]
pub struct SeasonData {
    pub pas: Vec<PlateAppearance>,
    pub covariates: Vec<QualityCovariates>,
    pub true_woba: PriorMeans,
}

fn clamp_woba(v: f64) -> f64 {
    v.clamp(THETA_CLAMP.0, THETA_CLAMP.1)
}

/// splitmix64 finalizer; bijective on u64.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Independent derived seed per (season, purpose lane).
fn derive_seed(base: u64, season: u64, lane: u64) -> u64 {
    mix64(mix64(base.wrapping_add(GOLDEN.wrapping_mul(season + 1))).wrapping_add(GOLDEN.wrapping_mul(lane + 1)))
}

const LANE_GENERATE: u64 = 0;
const LANE_SPLIT: u64 = 1;
const LANE_FIT: u64 = 2;
const LANE_CV_ASSIGN: u64 = 3;
const LANE_CV_FIT: u64 = 4;

/// Generates one season: `games_per_season` games, each a fresh starting
/// pitcher facing a fresh 9-batter lineup for exactly three full passes.
/// Player qualities, handedness matches, and the home indicator are drawn
/// per game; outcomes follow the generating model's categorical
/// probabilities at each sequence number.
pub fn generate_season(
    cfg: &SimStudyConfig,
    gen: &GeneratingParams,
    season: usize,
) -> SeasonData {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, season as u64, LANE_GENERATE));
    let batter_talent = Normal::new(cfg.covariates.batter_mean, cfg.covariates.batter_sd)
        .expect("validated covariate model");
    let pitcher_talent = Normal::new(cfg.covariates.pitcher_mean, cfg.covariates.pitcher_sd)
        .expect("validated covariate model");
    let weights = OutcomeWeights::standard();
    let model = Model::new(Variant::BaselineConstrained, 0, 0);
    let con = gen.to_constrained();

    let lineup = LINEUP_SIZE as usize;
    let n_pas = cfg.games_per_season * PAS_PER_GAME;
    let mut pas = Vec::with_capacity(n_pas);
    let mut covariates = Vec::with_capacity(n_pas);
    let mut true_woba = PriorMeans::default();
    let season_label = season + 1;

    for game in 0..cfg.games_per_season {
        let game_id = format!("s{season_label:03}g{game:05}");
        let date = format!("d{game:05}");
        let pitcher_id = format!("s{season_label:03}p{game:05}");
        let pitcher_woba = clamp_woba(pitcher_talent.sample(&mut rng));
        let x_pit = logit(pitcher_woba);
        true_woba.pitchers.insert(pitcher_id.clone(), pitcher_woba);

        let mut batter_ids = Vec::with_capacity(lineup);
        let mut x_bat = Vec::with_capacity(lineup);
        let mut bat_hands = Vec::with_capacity(lineup);
        for slot in 0..lineup {
            let batter_id = format!("{game_id}b{slot}");
            let woba = clamp_woba(batter_talent.sample(&mut rng));
            x_bat.push(logit(woba));
            true_woba.batters.insert(batter_id.clone(), woba);
            batter_ids.push(batter_id);
            let matches = rng.gen_bool(cfg.covariates.hand_match_rate);
            bat_hands.push(if matches { Hand::R } else { Hand::L });
        }
        let home = rng.gen_bool(cfg.covariates.home_rate);

        for t in 1..=MAX_T {
            let slot = (t as usize - 1) % lineup;
            let hand = f64::from(bat_hands[slot] == Hand::R);
            let state = PlateState::new(x_bat[slot], x_pit, hand, f64::from(home));
            let probs = model.category_probabilities(&con, t, &state);
            let outcome = draw_outcome(&mut rng, &probs);
            pas.push(PlateAppearance {
                game_id: game_id.clone(),
                season: season_label as u16,
                date: date.clone(),
                pa_index: u32::from(t) - 1,
                pitcher_id: pitcher_id.clone(),
                batter_id: batter_ids[slot].clone(),
                is_starter: true,
                t,
                outcome,
                bat_hand: bat_hands[slot],
                pit_hand: Hand::R,
                home,
                event_woba: weights.weight(outcome),
            });
            covariates.push(QualityCovariates {
                x_batter: x_bat[slot],
                x_pitcher: x_pit,
            });
        }
    }

    SeasonData {
        pas,
        covariates,
        true_woba,
    }
}

/// Inverse-CDF categorical draw in outcome index order.
fn draw_outcome(rng: &mut ChaCha8Rng, probs: &[f64; N_CATEGORIES]) -> Outcome {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for outcome in Outcome::ALL {
        cum += probs[outcome.index()];
        if u < cum {
            return outcome;
        }
    }
    Outcome::HomeRun
}

/// Training-game mask: `mask[g]` is true when game `g` trains. The count of
/// training games is `round(train_fraction * n_games)` clamped so both
/// sides stay non-empty; membership comes from a seeded shuffle.
fn split_train_games(n_games: usize, train_fraction: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n_games).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n_games as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n_games - 1);
    let mut mask = vec![false; n_games];
    for &g in &order[..n_train] {
        mask[g] = true;
    }
    mask
}

/// Mean negative log probability of realized outcomes under `prob_fn`,
/// natural log. Zero (or non-finite) predicted probabilities for a realized
/// outcome are clamped at 1e-12 and counted.
pub fn cross_entropy<F>(
    mut prob_fn: F,
    test: &[(u8, PlateState, Outcome)],
) -> Result<CrossEntropy, SimError>
where
    F: FnMut(u8, &PlateState) -> [f64; N_CATEGORIES],
{
    if test.is_empty() {
        return Err(SimError::EmptyTest);
    }
    let mut total = 0.0;
    let mut clamped = 0usize;
    for (t, state, outcome) in test {
        let p = prob_fn(*t, state)[outcome.index()];
        let p = if p.is_finite() && p >= 1e-12 {
            p
        } else {
            clamped += 1;
            1e-12
        };
        total -= p.ln();
    }
    Ok(CrossEntropy {
        loss: total / test.len() as f64,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Realized outcomes whose predicted probability was clamped at 1e-12.
    pub clamped: usize,
}

/// Empirical outcome frequencies of a training set, as a constant
/// predictor. Categories absent from training keep probability zero; the
/// cross-entropy clamp handles them. An empty iterator yields all zeros.
pub fn base_rate_baseline(outcomes: impl IntoIterator<Item = Outcome>) -> [f64; N_CATEGORIES] {
    let mut counts = [0usize; N_CATEGORIES];
    let mut n = 0usize;
    for outcome in outcomes {
        counts[outcome.index()] += 1;
        n += 1;
    }
    let mut rates = [0.0; N_CATEGORIES];
    if n > 0 {
        for (rate, count) in rates.iter_mut().zip(counts) {
            *rate = count as f64 / n as f64;
        }
    }
    rates
}

/// Posterior-mean predicted probabilities: the average of per-draw
/// probability vectors at (t, state).
pub fn posterior_mean_probs(
    model: &Model,
    draws: &PosteriorDraws,
    t: u8,
    state: &PlateState,
) -> [f64; N_CATEGORIES] {
    let mut acc = [0.0; N_CATEGORIES];
    let mut n = 0usize;
    for con in draws.iter_draws() {
        let p = model.category_probabilities(con, t, state);
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
        n += 1;
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    acc
}

/// Everything recorded about one season's fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonResult {
    pub season: usize,
    pub fit_seed: u64,
    pub n_train_games: usize,
    pub n_test_games: usize,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub zero_variance_params: usize,
    pub divergences: usize,
    /// True when the fit failed the scale-reduction gate (max R-hat >= 1.2)
    /// and is excluded from study aggregates.
    pub excluded: bool,
    /// Per-parameter 95% interval coverage indicators, in parameter order.
    pub covered: Vec<bool>,
    pub d12: SampleSummary,
    pub d23: SampleSummary,
    pub jump12: SampleSummary,
    pub jump23: SampleSummary,
    pub d12_covered: bool,
    pub d23_covered: bool,
    /// Sequence numbers (of 27) where the true trajectory lies inside the
    /// posterior 95% band.
    pub truth_in_band: usize,
    pub trajectory: TrajectorySummary,
    pub ce_model: f64,
    pub ce_baserate: f64,
    pub ce_clamp_events: usize,
}

/// Aggregated study outcome. Coverage aggregates average over non-excluded
/// seasons; `per_param_coverage` is keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: u8,
    pub n_seasons: usize,
    pub games_per_season: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub coverage_all: f64,
    pub coverage_beta: f64,
    pub per_param_coverage: BTreeMap<String, f64>,
    pub mean_ce_model: f64,
    pub mean_ce_baserate: f64,
    pub excluded_seasons: Vec<usize>,
    pub truth: TruthFunctionals,
    pub param_names: Vec<String>,
    pub seasons: Vec<SeasonResult>,
    pub warnings: Vec<String>,
}

/// Runs the full study protocol: per season, generate, split by game, fit
/// the constrained baseline on the training share with a season-derived
/// seed, and score coverage, discontinuity statistics, and cross-entropy.
/// Seasons run in parallel; aggregation order is fixed by season index.
pub fn run_study(cfg: &SimStudyConfig, sampler: &SamplerConfig) -> Result<StudyReport, SimError> {
    cfg.validate()?;
    sampler
        .validate()
        .map_err(|e| SimError::BadConfig(e.to_string()))?;
    let gen = GeneratingParams::for_study(cfg.study);
    let weights = OutcomeWeights::standard();
    let truth = truth_functionals(&gen, &weights);
    let truth_con = gen.to_constrained();
    let param_names = ParamLayout::new(Variant::BaselineConstrained, 0, 0).names(&[], &[]);

    let seasons: Vec<SeasonResult> = (0..cfg.n_seasons)
        .into_par_iter()
        .map(|season| run_season(cfg, &gen, &truth, &truth_con, sampler, &weights, season))
        .collect::<Result<_, _>>()?;

    let included: Vec<&SeasonResult> = seasons.iter().filter(|s| !s.excluded).collect();
    let excluded_seasons: Vec<usize> = seasons
        .iter()
        .filter(|s| s.excluded)
        .map(|s| s.season)
        .collect();
    let mut warnings: Vec<String> = excluded_seasons
        .iter()
        .map(|s| format!("season {s} excluded: scale reduction factor reached 1.2"))
        .collect();
    if included.is_empty() {
        warnings.push("every season was excluded; coverage aggregates are undefined".into());
    }

    let mean_over = |f: &dyn Fn(&SeasonResult) -> f64| -> f64 {
        if included.is_empty() {
            f64::NAN
        } else {
            included.iter().map(|s| f(s)).sum::<f64>() / included.len() as f64
        }
    };
    let mut per_param_coverage = BTreeMap::new();
    for (p, name) in param_names.iter().enumerate() {
        per_param_coverage.insert(
            name.clone(),
            mean_over(&|s: &SeasonResult| f64::from(u8::from(s.covered[p]))),
        );
    }
    let group_coverage = |keep: &dyn Fn(&str) -> bool| -> f64 {
        let selected: Vec<usize> = (0..param_names.len())
            .filter(|&p| keep(&param_names[p]))
            .collect();
        if included.is_empty() || selected.is_empty() {
            return f64::NAN;
        }
        let mut acc = 0.0;
        for s in &included {
            for &p in &selected {
                acc += f64::from(u8::from(s.covered[p]));
            }
        }
        acc / (included.len() * selected.len()) as f64
    };

    Ok(StudyReport {
        study: cfg.study.index(),
        n_seasons: cfg.n_seasons,
        games_per_season: cfg.games_per_season,
        train_fraction: cfg.train_fraction,
        seed: cfg.seed,
        coverage_all: group_coverage(&|_| true),
        coverage_beta: group_coverage(&|name: &str| {
            name.starts_with("beta2[") || name.starts_with("beta3[")
        }),
        per_param_coverage,
        mean_ce_model: mean_over(&|s| s.ce_model),
        mean_ce_baserate: mean_over(&|s| s.ce_baserate),
        excluded_seasons,
        truth,
        param_names,
        seasons,
        warnings,
    })
}

fn run_season(
    cfg: &SimStudyConfig,
    gen: &GeneratingParams,
    truth: &TruthFunctionals,
    truth_con: &[f64],
    sampler: &SamplerConfig,
    weights: &OutcomeWeights,
    season: usize,
) -> Result<SeasonResult, SimError> {
    let data = generate_season(cfg, gen, season);
    let mask = split_train_games(
        cfg.games_per_season,
        cfg.train_fraction,
        derive_seed(cfg.seed, season as u64, LANE_SPLIT),
    );

    let mut train_pas = Vec::new();
    let mut train_covs = Vec::new();
    let mut test = Vec::new();
    for (i, pa) in data.pas.iter().enumerate() {
        let game = i / PAS_PER_GAME;
        if mask[game] {
            train_pas.push(pa.clone());
            train_covs.push(data.covariates[i]);
        } else {
            let state = PlateState::new(
                data.covariates[i].x_batter,
                data.covariates[i].x_pitcher,
                f64::from(pa.hand_match()),
                f64::from(pa.home),
            );
            test.push((pa.t, state, pa.outcome));
        }
    }
    let n_train_games = mask.iter().filter(|&&m| m).count();
    let n_test_games = cfg.games_per_season - n_train_games;

    let dataset = Dataset::from_plate_appearances(&train_pas, &train_covs)
        .map_err(|source| SimError::Data { season, source })?;
    let model = Model::for_dataset(Variant::BaselineConstrained, &dataset);
    let mut fit_cfg = sampler.clone();
    fit_cfg.seed = derive_seed(cfg.seed, season as u64, LANE_FIT);
    let target = ModelTarget::new(model, &dataset);
    let draws = sample(&target, &fit_cfg).map_err(|source| SimError::Fit { season, source })?;

    let max_rhat = draws.max_rhat();
    let excluded = max_rhat >= 1.2 || max_rhat.is_nan();
    let min_ess = draws
        .diagnostics
        .values()
        .filter(|d| !d.zero_variance)
        .map(|d| d.ess)
        .fold(f64::INFINITY, f64::min);
    let zero_variance_params = draws
        .diagnostics
        .values()
        .filter(|d| d.zero_variance)
        .count();

    let covered: Vec<bool> = (0..draws.dim())
        .map(|p| {
            let (lo, hi) = crate::analysis::credible_interval(&draws.flat_param(p), 0.95)
                .expect("draw count is validated by the sampler config");
            lo <= truth_con[p] && truth_con[p] <= hi
        })
        .collect();

    let state = reference_state();
    let trajs = trajectory_draws(&model, &draws, &state, weights)
        .map_err(|source| SimError::Analysis { season, source })?;
    let per_draw = |f: &dyn Fn(&[f64; PAS_PER_GAME]) -> f64| -> Vec<f64> {
        trajs.iter().map(f).collect()
    };
    let summarize_fn = |xs: Vec<f64>| -> Result<SampleSummary, SimError> {
        summarize(&xs).map_err(|source| SimError::Analysis { season, source })
    };
    let d12 = summarize_fn(per_draw(&|tr| trajectory_mean_diff(tr, TtoPair::FirstSecond)))?;
    let d23 = summarize_fn(per_draw(&|tr| trajectory_mean_diff(tr, TtoPair::SecondThird)))?;
    let jump12 = summarize_fn(per_draw(&|tr| {
        trajectory_boundary_step(tr, TtoPair::FirstSecond)
    }))?;
    let jump23 = summarize_fn(per_draw(&|tr| {
        trajectory_boundary_step(tr, TtoPair::SecondThird)
    }))?;
    let trajectory = TrajectorySummary::from_draws(&trajs)
        .map_err(|source| SimError::Analysis { season, source })?;
    let truth_in_band = trajectory
        .points
        .iter()
        .zip(&truth.trajectory)
        .filter(|(pt, tv)| pt.q025 <= **tv && **tv <= pt.q975)
        .count();

    let model_ce = cross_entropy(
        |t, st| posterior_mean_probs(&model, &draws, t, st),
        &test,
    )?;
    let rates = base_rate_baseline(train_pas.iter().map(|pa| pa.outcome));
    let base_ce = cross_entropy(|_, _| rates, &test)?;

    Ok(SeasonResult {
        season,
        fit_seed: fit_cfg.seed,
        n_train_games,
        n_test_games,
        n_train_rows: train_pas.len(),
        n_test_rows: test.len(),
        max_rhat,
        min_ess,
        zero_variance_params,
        divergences: draws.stats.divergences,
        excluded,
        covered,
        d12,
        d23,
        jump12,
        jump23,
        d12_covered: d12.q025 <= truth.d12 && truth.d12 <= d12.q975,
        d23_covered: d23.q025 <= truth.d23 && truth.d23 <= d23.q975,
        truth_in_band,
        trajectory,
        ce_model: model_ce.loss,
        ce_baserate: base_ce.loss,
        ce_clamp_events: model_ce.clamped + base_ce.clamped,
    })
}

/// One fold's scores in a game-level k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub max_rhat: f64,
    pub divergences: usize,
    pub ce_model: f64,
    pub ce_baserate: f64,
    pub ce_clamp_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub variant: String,
    pub folds: Vec<FoldResult>,
    pub mean_ce_model: f64,
    pub mean_ce_baserate: f64,
}

/// Game-level k-fold cross-validation of a model variant against the
/// base-rate baseline. Games are assigned to folds by a seeded shuffle of
/// their first-appearance order; each fold is scored with posterior-mean
/// predicted probabilities from a fit on the remaining folds.
pub fn kfold_cv(
    pas: &[PlateAppearance],
    covariates: &[QualityCovariates],
    k: usize,
    variant: Variant,
    sampler: &SamplerConfig,
) -> Result<CvReport, SimError> {
    sampler
        .validate()
        .map_err(|e| SimError::BadConfig(e.to_string()))?;
    if pas.len() != covariates.len() {
        return Err(SimError::BadConfig(format!(
            "{} plate appearances but {} covariate rows",
            pas.len(),
            covariates.len()
        )));
    }

    let mut game_order: Vec<&str> = Vec::new();
    let mut game_ordinal: BTreeMap<&str, usize> = BTreeMap::new();
    for pa in pas {
        if !game_ordinal.contains_key(pa.game_id.as_str()) {
            game_ordinal.insert(pa.game_id.as_str(), game_order.len());
            game_order.push(pa.game_id.as_str());
        }
    }
    let n_games = game_order.len();
    if k < 2 || k > n_games {
        return Err(SimError::BadFoldCount { k, games: n_games });
    }

    let mut shuffled: Vec<usize> = (0..n_games).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(sampler.seed, 0, LANE_CV_ASSIGN));
    shuffled.shuffle(&mut rng);
    let mut fold_of_game = vec![0usize; n_games];
    for (position, &g) in shuffled.iter().enumerate() {
        fold_of_game[g] = position % k;
    }

    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train_pas = Vec::new();
        let mut train_covs = Vec::new();
        let mut test = Vec::new();
        for (pa, cov) in pas.iter().zip(covariates) {
            if fold_of_game[game_ordinal[pa.game_id.as_str()]] == fold {
                let state = PlateState::new(
                    cov.x_batter,
                    cov.x_pitcher,
                    f64::from(pa.hand_match()),
                    f64::from(pa.home),
                );
                test.push((pa.t, state, pa.outcome));
            } else {
                train_pas.push(pa.clone());
                train_covs.push(*cov);
            }
        }
        if train_pas.is_empty() || test.is_empty() {
            return Err(SimError::FoldTooSmall { fold });
        }

        let dataset = Dataset::from_plate_appearances(&train_pas, &train_covs)
            .map_err(|source| SimError::Data { season: fold, source })?;
        let model = Model::for_dataset(variant, &dataset);
        let mut fit_cfg = sampler.clone();
        fit_cfg.seed = derive_seed(sampler.seed, fold as u64, LANE_CV_FIT);
        let target = ModelTarget::new(model, &dataset);
        let draws =
            sample(&target, &fit_cfg).map_err(|source| SimError::Fit { season: fold, source })?;

        let model_ce = cross_entropy(
            |t, st| posterior_mean_probs(&model, &draws, t, st),
            &test,
        )?;
        let rates = base_rate_baseline(train_pas.iter().map(|pa| pa.outcome));
        let base_ce = cross_entropy(|_, _| rates, &test)?;
        folds.push(FoldResult {
            fold,
            n_train_rows: train_pas.len(),
            n_test_rows: test.len(),
            max_rhat: draws.max_rhat(),
            divergences: draws.stats.divergences,
            ce_model: model_ce.loss,
            ce_baserate: base_ce.loss,
            ce_clamp_events: model_ce.clamped + base_ce.clamped,
        });
    }

    let mean = |f: &dyn Fn(&FoldResult) -> f64| {
        folds.iter().map(f).sum::<f64>() / folds.len() as f64
    };
    Ok(CvReport {
        k,
        variant: variant.name().to_string(),
        mean_ce_model: mean(&|r| r.ce_model),
        mean_ce_baserate: mean(&|r| r.ce_baserate),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_plate_appearances, write_plate_appearances};

    fn tiny_config(study: SimStudy, games: usize, seed: u64) -> SimStudyConfig {
        SimStudyConfig {
            study,
            n_seasons: 1,
            games_per_season: games,
            seed,
            train_fraction: 0.8,
            covariates: CovariateModel::default(),
        }
    }

    fn light_sampler() -> SamplerConfig {
        SamplerConfig {
            n_chains: 2,
            n_iter: 120,
            n_warmup: 60,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn generating_tables_land_in_the_constrained_layout() {
        let gen = GeneratingParams::for_study(SimStudy::Two);
        let layout = ParamLayout::new(Variant::BaselineConstrained, 0, 0);
        let con = gen.to_constrained();
        assert_eq!(con.len(), 48);
        assert_eq!(con[layout.alpha0(0)], -0.601);
        assert_eq!(con[layout.alpha1(4)], 0.0223);
        assert_eq!(con[layout.beta2(2)], 4.0 / 65.0);
        assert_eq!(con[layout.beta3(5)], 1.0 / 15.0);
        assert_eq!(con[layout.eta(0, 0)], 0.865);
        assert_eq!(con[layout.eta(5, 1)], 1.850);
        assert_eq!(con[layout.eta(4, 2)], -0.462);
        assert_eq!(con[layout.eta(3, 3)], -0.00103);

        let three = GeneratingParams::for_study(SimStudy::Three);
        assert_eq!(three.beta2, [0.0; N_FREE]);
        assert_eq!(three.beta3[2], 0.3);
        assert_eq!(GeneratingParams::for_study(SimStudy::One).beta3, [0.0; N_FREE]);
    }

    #[test]
    fn truth_functionals_match_frozen_oracle_values() {
        let weights = OutcomeWeights::standard();
        let close = |x: f64, v: f64| assert!((x - v).abs() < 2e-6, "{x} vs {v}");

        let one = truth_functionals(&GeneratingParams::for_study(SimStudy::One), &weights);
        close(one.d12, 10.900694);
        close(one.d23, 11.405160);

        let two = truth_functionals(&GeneratingParams::for_study(SimStudy::Two), &weights);
        close(two.d12, 19.757521);
        close(two.d23, 22.198733);
        close(two.jump12, 10.017801);
        close(two.jump23, 11.915168);

        let three = truth_functionals(&GeneratingParams::for_study(SimStudy::Three), &weights);
        close(three.d12, 10.900694);
        close(three.d23, 54.290096);
        close(three.jump23, 43.919001);

        // Studies 1 and 3 share every parameter through the second pass, so
        // their first two passes agree exactly.
        assert_eq!(one.d12.to_bits(), three.d12.to_bits());
        assert_eq!(one.jump12.to_bits(), three.jump12.to_bits());
        assert_eq!(one.trajectory[..18], three.trajectory[..18]);
        // Without a discontinuity the boundary step is pure per-PA drift.
        assert!(one.jump12 < 2.0 && one.jump23 < 2.0);
    }

    #[test]
    fn generated_outcome_frequencies_match_model_probabilities() {
        let gen = GeneratingParams::for_study(SimStudy::Two);
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let con = gen.to_constrained();
        let state = PlateState::new(logit(0.36), logit(0.29), 0.0, 1.0);
        let probs = model.category_probabilities(&con, 23, &state);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut counts = [0usize; N_CATEGORIES];
        for _ in 0..n {
            counts[draw_outcome(&mut rng, &probs).index()] += 1;
        }
        for (k, outcome) in Outcome::ALL.iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!(
                (freq - probs[k]).abs() <= 3.0 * se,
                "{outcome:?}: freq {freq} vs prob {} (se {se})",
                probs[k]
            );
        }
    }

    #[test]
    fn season_structure_is_sound() {
        let cfg = tiny_config(SimStudy::Two, 2, 11);
        let gen = GeneratingParams::for_study(cfg.study);
        let weights = OutcomeWeights::standard();
        let data = generate_season(&cfg, &gen, 0);

        assert_eq!(data.pas.len(), 54);
        assert_eq!(data.covariates.len(), 54);
        assert_eq!(data.true_woba.pitchers.len(), 2);
        assert_eq!(data.true_woba.batters.len(), 18);

        for game in 0..2 {
            let rows = &data.pas[game * 27..(game + 1) * 27];
            let covs = &data.covariates[game * 27..(game + 1) * 27];
            let pitcher = &rows[0].pitcher_id;
            let home = rows[0].home;
            for (i, pa) in rows.iter().enumerate() {
                assert_eq!(pa.t as usize, i + 1);
                assert_eq!(pa.pa_index as usize, i);
                assert_eq!(&pa.pitcher_id, pitcher);
                assert_eq!(pa.home, home);
                assert!(pa.is_starter);
                assert_eq!(pa.pit_hand, Hand::R);
                assert_eq!(pa.event_woba, weights.weight(pa.outcome));
                // Lineup cycles with period 9 and per-batter state is fixed.
                if i >= 9 {
                    assert_eq!(pa.batter_id, rows[i - 9].batter_id);
                    assert_eq!(pa.bat_hand, rows[i - 9].bat_hand);
                    assert_eq!(covs[i].x_batter, covs[i - 9].x_batter);
                }
                assert_eq!(covs[i].x_pitcher, covs[0].x_pitcher);
                let true_pit = data.true_woba.pitchers[&pa.pitcher_id];
                assert_eq!(covs[i].x_pitcher, logit(true_pit));
                let true_bat = data.true_woba.batters[&pa.batter_id];
                assert_eq!(covs[i].x_batter, logit(true_bat));
                assert!(true_bat > 0.0 && true_bat < 1.0);
            }
        }

        // In-order by the ingestion sort key, and CSV round-trippable.
        assert!(data
            .pas
            .windows(2)
            .all(|w| w[0].order_key() <= w[1].order_key()));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_plate_appearances(tmp.path(), &data.pas).unwrap();
        let report = parse_plate_appearances(tmp.path(), None).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(report.records, data.pas);
    }

    #[test]
    fn same_seed_reproduces_a_season_and_seeds_isolate() {
        let cfg = tiny_config(SimStudy::Three, 3, 9);
        let gen = GeneratingParams::for_study(cfg.study);
        let a = generate_season(&cfg, &gen, 0);
        let b = generate_season(&cfg, &gen, 0);
        assert_eq!(a.pas, b.pas);
        assert_eq!(a.covariates, b.covariates);

        let other_season = generate_season(&cfg, &gen, 1);
        assert_ne!(a.pas, other_season.pas);
        let mut cfg2 = cfg;
        cfg2.seed = 10;
        let other_seed = generate_season(&cfg2, &gen, 0);
        assert_ne!(
            a.covariates[0].x_pitcher.to_bits(),
            other_seed.covariates[0].x_pitcher.to_bits()
        );
    }

    #[test]
    fn train_split_is_a_seeded_partition() {
        let mask = split_train_games(10, 0.8, 4);
        assert_eq!(mask.len(), 10);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 8);
        assert_eq!(mask, split_train_games(10, 0.8, 4));

        // Extreme fractions still leave both sides non-empty.
        assert_eq!(split_train_games(5, 0.999, 1).iter().filter(|&&m| m).count(), 4);
        assert_eq!(split_train_games(5, 0.001, 1).iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn cross_entropy_oracles() {
        let state = reference_state();
        let one_of_each: Vec<(u8, PlateState, Outcome)> = Outcome::ALL
            .iter()
            .map(|&o| (5u8, state, o))
            .collect();

        // A perfect oracle scores zero.
        let perfect = cross_entropy(
            |_, _| [1.0; N_CATEGORIES],
            &[(1, state, Outcome::HomeRun)],
        )
        .unwrap();
        assert_eq!(perfect.loss, 0.0);
        assert_eq!(perfect.clamped, 0);

        // A uniform predictor scores ln 7 on any test set.
        let uniform = cross_entropy(|_, _| [1.0 / 7.0; N_CATEGORIES], &one_of_each).unwrap();
        assert!((uniform.loss - 7f64.ln()).abs() < 1e-12);

        // Zero probability on a realized outcome clamps at 1e-12 and counts.
        let mut degenerate = [0.0; N_CATEGORIES];
        degenerate[Outcome::Out.index()] = 1.0;
        let clamped = cross_entropy(|_, _| degenerate, &[(1, state, Outcome::Single)]).unwrap();
        assert_eq!(clamped.clamped, 1);
        assert!((clamped.loss - (-(1e-12f64).ln())).abs() < 1e-9);

        assert!(matches!(
            cross_entropy(|_, _| degenerate, &[]),
            Err(SimError::EmptyTest)
        ));

        // Observed 2017-style base rates: the in-sample entropy of the rate
        // vector itself, a frozen regression value. (An out-of-sample
        // cross-entropy against fold-specific rates would come out lower
        // and is not what this checks.)
        let rates = [0.676, 0.078, 0.009, 0.149, 0.048, 0.0045, 0.035];
        let entropy: f64 = -rates.iter().map(|p: &f64| p * p.ln()).sum::<f64>();
        assert!((entropy - 1.0771453937127131).abs() < 1e-15);
    }

    #[test]
    fn base_rates_count_outcomes() {
        let rates = base_rate_baseline([
            Outcome::Out,
            Outcome::Out,
            Outcome::Out,
            Outcome::HomeRun,
        ]);
        assert_eq!(rates, [0.75, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25]);
        assert_eq!(base_rate_baseline([]), [0.0; N_CATEGORIES]);

        // Degenerate single-category training: zero loss on same-category
        // test rows.
        let degenerate = base_rate_baseline([Outcome::Out]);
        let ce = cross_entropy(
            |_, _| degenerate,
            &[(1, reference_state(), Outcome::Out)],
        )
        .unwrap();
        assert_eq!(ce.loss, 0.0);
    }

    #[test]
    fn tiny_study_end_to_end() {
        let cfg = tiny_config(SimStudy::Two, 30, 3);
        let report = run_study(&cfg, &light_sampler()).unwrap();

        assert_eq!(report.study, 2);
        assert_eq!(report.seasons.len(), 1);
        assert_eq!(report.param_names.len(), 48);
        let season = &report.seasons[0];
        assert_eq!(season.covered.len(), 48);
        assert_eq!(season.n_train_games, 24);
        assert_eq!(season.n_test_games, 6);
        assert_eq!(season.n_train_rows, 24 * 27);
        assert_eq!(season.n_test_rows, 6 * 27);
        assert!(season.ce_model.is_finite() && season.ce_baserate.is_finite());
        assert!(season.ce_model > 0.0 && season.ce_model < 7f64.ln() + 1.0);
        assert!(season.truth_in_band <= 27);
        assert!(season.max_rhat >= 1.0);
        if !season.excluded {
            assert!((0.0..=1.0).contains(&report.coverage_all));
            assert!((0.0..=1.0).contains(&report.coverage_beta));
        }
        assert!((report.truth.d12 - 19.757521).abs() < 2e-6);

        // The report serializes with the documented top-level fields.
        let value = serde_json::to_value(&report).unwrap();
        for key in [
            "study",
            "n_seasons",
            "coverage_all",
            "coverage_beta",
            "per_param_coverage",
            "mean_ce_model",
            "mean_ce_baserate",
            "excluded_seasons",
        ] {
            assert!(value.get(key).is_some(), "missing report field {key}");
        }
        assert_eq!(value["per_param_coverage"].as_object().unwrap().len(), 48);
    }

    #[test]
    fn kfold_runs_and_validates_fold_counts() {
        let cfg = tiny_config(SimStudy::Two, 20, 7);
        let gen = GeneratingParams::for_study(cfg.study);
        let data = generate_season(&cfg, &gen, 0);

        let report = kfold_cv(
            &data.pas,
            &data.covariates,
            2,
            Variant::BaselineConstrained,
            &light_sampler(),
        )
        .unwrap();
        assert_eq!(report.k, 2);
        assert_eq!(report.folds.len(), 2);
        let total_test: usize = report.folds.iter().map(|f| f.n_test_rows).sum();
        assert_eq!(total_test, data.pas.len());
        for fold in &report.folds {
            assert_eq!(fold.n_train_rows + fold.n_test_rows, data.pas.len());
            assert!(fold.ce_model.is_finite() && fold.ce_baserate.is_finite());
        }
        assert!(report.mean_ce_model > 0.0);

        assert!(matches!(
            kfold_cv(
                &data.pas,
                &data.covariates,
                1,
                Variant::BaselineConstrained,
                &light_sampler()
            ),
            Err(SimError::BadFoldCount { k: 1, games: 20 })
        ));
        assert!(matches!(
            kfold_cv(
                &data.pas,
                &data.covariates,
                21,
                Variant::BaselineConstrained,
                &light_sampler()
            ),
            Err(SimError::BadFoldCount { k: 21, games: 20 })
        ));
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let good = tiny_config(SimStudy::One, 10, 1);
        assert!(good.validate().is_ok());

        let mut bad = good;
        bad.train_fraction = 1.0;
        assert!(bad.validate().is_err());
        bad = good;
        bad.games_per_season = 1;
        assert!(bad.validate().is_err());
        bad = good;
        bad.n_seasons = 0;
        assert!(bad.validate().is_err());
        bad = good;
        bad.covariates.hand_match_rate = 1.5;
        assert!(bad.validate().is_err());
        bad = good;
        bad.covariates.batter_sd = 0.0;
        assert!(bad.validate().is_err());

        assert_eq!(SimStudyConfig::desk(SimStudy::One, 1).n_seasons, 20);
        assert_eq!(SimStudyConfig::desk(SimStudy::One, 1).games_per_season, 1000);
        assert_eq!(SimStudyConfig::paper_scale(SimStudy::Two, 1).n_seasons, 25);
        assert_eq!(
            SimStudyConfig::paper_scale(SimStudy::Two, 1).games_per_season,
            4860
        );

        assert_eq!("2".parse::<SimStudy>().unwrap(), SimStudy::Two);
        assert!("4".parse::<SimStudy>().is_err());
    }
}
