//! Running empirical-Bayes estimates of batter and pitcher quality.
//!
//! Each player's true PA-level wOBA mean theta is given a normal prior
//! centered on the previous season's mean, and PA outcomes are treated as
//! normal observations with known standard deviation tau:
//!
//!   theta      ~ Normal(theta0, nu^2)
//!   x_1..x_j   ~ Normal(theta, tau^2)
//!   theta_hat  = (tau^-2 * sum x_i + nu^-2 * theta0) / (j tau^-2 + nu^-2)
//!
//! The logit of theta_hat, computed strictly from earlier plate appearances,
//! is the quality covariate entering the outcome model. Pitcher quality
//! mirrors the batter construction using the wOBA values the pitcher allows.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PlateAppearance;

/// Numerical guard: theta_hat is clamped to this open interval before the
/// logit transform. wOBA means live near 0.3, so the clamp is inert on real
/// data.
pub const THETA_CLAMP: (f64, f64) = (0.001, 0.999);

/// Observation and prior standard deviations of the normal-normal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityHyperparams {
    /// Within-season PA-level wOBA standard deviation.
    pub tau: f64,
    /// Season-to-season standard deviation of player mean wOBA.
    pub nu: f64,
}

impl QualityHyperparams {
    pub fn new(tau: f64, nu: f64) -> Result<Self, QualityError> {
        if !(tau.is_finite() && tau > 0.0 && nu.is_finite() && nu > 0.0) {
            return Err(QualityError::BadHyperparams { tau, nu });
        }
        Ok(Self { tau, nu })
    }
}

impl Default for QualityHyperparams {
    /// Compromise defaults: tau near the spread of single-event wOBA
    /// values, nu near the year-to-year drift of a player mean.
    fn default() -> Self {
        Self { tau: 0.5, nu: 0.05 }
    }
}

/// Running posterior state for one player within one season.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityState {
    /// Prior mean theta0 (previous-season mean wOBA, or the rookie median).
    pub theta0: f64,
    /// Sum of observed PA wOBA values this season.
    pub sum_x: f64,
    /// Number of observed PAs this season.
    pub j: u32,
    /// Posterior mean, kept equal to the closed form at all times.
    pub theta_hat: f64,
}

impl QualityState {
    pub fn new(theta0: f64) -> Self {
        Self {
            theta0,
            sum_x: 0.0,
            j: 0,
            theta_hat: theta0,
        }
    }

    /// Closed-form posterior mean for the current sums.
    fn closed_form(&self, hp: &QualityHyperparams) -> f64 {
        let tau2_inv = hp.tau.powi(-2);
        let nu2_inv = hp.nu.powi(-2);
        (tau2_inv * self.sum_x + nu2_inv * self.theta0) / (f64::from(self.j) * tau2_inv + nu2_inv)
    }

    /// Pure one-observation update; returns the new state.
    pub fn update(&self, x_new: f64, hp: &QualityHyperparams) -> Self {
        let mut next = Self {
            theta0: self.theta0,
            sum_x: self.sum_x + x_new,
            j: self.j + 1,
            theta_hat: 0.0,
        };
        next.theta_hat = next.closed_form(hp);
        next
    }

    /// Quality covariate: logit of the clamped posterior mean.
    pub fn covariate(&self) -> f64 {
        logit(self.theta_hat.clamp(THETA_CLAMP.0, THETA_CLAMP.1))
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inv_logit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("hyperparameters must be finite and positive, got tau={tau}, nu={nu}")]
    BadHyperparams { tau: f64, nu: f64 },
    #[error("player {player_id} ({role}) has no previous-season entry; mark it as a rookie")]
    MissingPrior { player_id: String, role: Role },
    #[error("cannot assign a rookie prior: no non-rookie {role} entries available")]
    EmptyRookiePool { role: Role },
    #[error(
        "insufficient history to estimate hyperparameters: need at least one {role} with \
         two seasons of data and at least one player-season with two plate appearances"
    )]
    InsufficientHistory { role: Role },
    #[error("degenerate variance: the estimated {which} is zero (all-constant histories)")]
    DegenerateVariance { which: String },
    #[error("priors file {path}: {reason}")]
    PriorsFile { path: String, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Player role for prior lookup and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Batter,
    Pitcher,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Batter => "batter",
            Role::Pitcher => "pitcher",
        })
    }
}

/// Previous-season mean wOBA per player, by role.
#[derive(Debug, Clone, Default)]
pub struct PriorMeans {
    pub batters: BTreeMap<String, f64>,
    pub pitchers: BTreeMap<String, f64>,
}

impl PriorMeans {
    /// Builds previous-season means from multi-season history: for each
    /// player, the mean PA wOBA of the most recent season strictly before
    /// `current_season` in which the player appeared.
    pub fn from_history(records: &[PlateAppearance], current_season: u16) -> Self {
        let mut out = PriorMeans::default();
        for (role, map) in [(Role::Batter, &mut out.batters), (Role::Pitcher, &mut out.pitchers)] {
            // player -> season -> (sum, count)
            let mut sums: BTreeMap<&str, BTreeMap<u16, (f64, u32)>> = BTreeMap::new();
            for pa in records {
                if pa.season >= current_season {
                    continue;
                }
                let id = match role {
                    Role::Batter => pa.batter_id.as_str(),
                    Role::Pitcher => pa.pitcher_id.as_str(),
                };
                let cell = sums
                    .entry(id)
                    .or_default()
                    .entry(pa.season)
                    .or_insert((0.0, 0));
                cell.0 += pa.event_woba;
                cell.1 += 1;
            }
            for (id, seasons) in sums {
                if let Some((_, (sum, count))) = seasons.iter().next_back().map(|(s, c)| (*s, *c)) {
                    map.insert(id.to_string(), sum / f64::from(count));
                }
            }
        }
        out
    }

    /// Reads a `player_id,role,prev_mean_woba` CSV.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, QualityError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| QualityError::Io {
            path: display.clone(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| QualityError::PriorsFile {
                path: display.clone(),
                reason: e.to_string(),
            })?
            .clone();
        let expected = ["player_id", "role", "prev_mean_woba"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(QualityError::PriorsFile {
                path: display,
                reason: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut out = PriorMeans::default();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| QualityError::PriorsFile {
                path: display.clone(),
                reason: e.to_string(),
            })?;
            let bad = |reason: String| QualityError::PriorsFile {
                path: display.clone(),
                reason: format!("row {}: {}", i + 2, reason),
            };
            let id = row.get(0).unwrap_or("").trim().to_string();
            let role = row.get(1).unwrap_or("").trim();
            let mean: f64 = row
                .get(2)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad prev_mean_woba `{}`", row.get(2).unwrap_or(""))))?;
            match role {
                "batter" => out.batters.insert(id, mean),
                "pitcher" => out.pitchers.insert(id, mean),
                other => return Err(bad(format!("unknown role `{other}`"))),
            };
        }
        Ok(out)
    }

    /// Writes the `player_id,role,prev_mean_woba` CSV.
    pub fn write_csv(&self, out: impl io::Write) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["player_id", "role", "prev_mean_woba"])?;
        for (id, mean) in &self.batters {
            writer.write_record([id.as_str(), "batter", &mean.to_string()])?;
        }
        for (id, mean) in &self.pitchers {
            writer.write_record([id.as_str(), "pitcher", &mean.to_string()])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Median with the midpoint convention for even counts.
fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Prior mean for one player: non-rookies use their previous-season mean;
/// rookies use the median over all non-rookie prior means of the same role.
pub fn prior_mean(
    player_id: &str,
    prev_season_means: &BTreeMap<String, f64>,
    rookie: bool,
    role: Role,
) -> Result<f64, QualityError> {
    if rookie {
        let mut pool: Vec<f64> = prev_season_means.values().copied().collect();
        median(&mut pool).ok_or(QualityError::EmptyRookiePool { role })
    } else {
        prev_season_means
            .get(player_id)
            .copied()
            .ok_or_else(|| QualityError::MissingPrior {
                player_id: player_id.to_string(),
                role,
            })
    }
}

/// Quality covariates for one plate appearance, on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityCovariates {
    pub x_batter: f64,
    pub x_pitcher: f64,
}

/// Result of attaching covariates to an ordered plate-appearance sequence.
#[derive(Debug)]
pub struct AttachedQuality {
    /// One entry per input plate appearance, in input order.
    pub covariates: Vec<QualityCovariates>,
    /// Final per-player states, useful for reporting.
    pub batter_states: BTreeMap<String, QualityState>,
    pub pitcher_states: BTreeMap<String, QualityState>,
}

/// Walks the sequence in order and computes each plate appearance's quality
/// covariates from strictly earlier plate appearances only: the covariate is
/// read from the running state *before* folding in the current outcome.
/// Players absent from the prior maps are treated as rookies.
///
/// The input must already be ordered by `order_key` (the parser guarantees
/// this) and contain a single season.
pub fn attach_quality_covariates(
    pas: &[PlateAppearance],
    priors: &PriorMeans,
    hp: &QualityHyperparams,
) -> Result<AttachedQuality, QualityError> {
    let mut batter_states: BTreeMap<String, QualityState> = BTreeMap::new();
    let mut pitcher_states: BTreeMap<String, QualityState> = BTreeMap::new();
    let mut covariates = Vec::with_capacity(pas.len());

    for pa in pas {
        if !batter_states.contains_key(&pa.batter_id) {
            let rookie = !priors.batters.contains_key(&pa.batter_id);
            let theta0 = prior_mean(&pa.batter_id, &priors.batters, rookie, Role::Batter)?;
            batter_states.insert(pa.batter_id.clone(), QualityState::new(theta0));
        }
        if !pitcher_states.contains_key(&pa.pitcher_id) {
            let rookie = !priors.pitchers.contains_key(&pa.pitcher_id);
            let theta0 = prior_mean(&pa.pitcher_id, &priors.pitchers, rookie, Role::Pitcher)?;
            pitcher_states.insert(pa.pitcher_id.clone(), QualityState::new(theta0));
        }
        let bstate = batter_states.get_mut(&pa.batter_id).expect("inserted above");
        let x_batter = bstate.covariate();
        *bstate = bstate.update(pa.event_woba, hp);

        let pstate = pitcher_states
            .get_mut(&pa.pitcher_id)
            .expect("inserted above");
        let x_pitcher = pstate.covariate();
        *pstate = pstate.update(pa.event_woba, hp);

        covariates.push(QualityCovariates { x_batter, x_pitcher });
    }

    Ok(AttachedQuality {
        covariates,
        batter_states,
        pitcher_states,
    })
}

/// Intermediate medians behind an estimated hyperparameter pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperparamReport {
    /// Median over batters of the per-player SD of season means.
    pub nu_median_batters: f64,
    pub nu_median_pitchers: f64,
    /// Median over batter player-seasons of the within-season PA wOBA SD.
    pub tau_median_batters: f64,
    pub tau_median_pitchers: f64,
    pub batters_with_multiple_seasons: usize,
    pub pitchers_with_multiple_seasons: usize,
}

/// Reproduces the empirical hyperparameter procedure on multi-season
/// history: nu averages the role medians of per-player season-mean standard
/// deviations; tau averages the role medians of within-season PA-level
/// standard deviations.
pub fn estimate_hyperparams(
    records: &[PlateAppearance],
) -> Result<(QualityHyperparams, HyperparamReport), QualityError> {
    let mut nu_medians = [0.0f64; 2];
    let mut tau_medians = [0.0f64; 2];
    let mut multi_season_counts = [0usize; 2];

    for (ri, role) in [Role::Batter, Role::Pitcher].into_iter().enumerate() {
        // player -> season -> PA wOBA values
        let mut history: BTreeMap<&str, BTreeMap<u16, Vec<f64>>> = BTreeMap::new();
        for pa in records {
            let id = match role {
                Role::Batter => pa.batter_id.as_str(),
                Role::Pitcher => pa.pitcher_id.as_str(),
            };
            history
                .entry(id)
                .or_default()
                .entry(pa.season)
                .or_default()
                .push(pa.event_woba);
        }

        let mut season_mean_sds = Vec::new();
        let mut within_season_sds = Vec::new();
        for seasons in history.values() {
            let means: Vec<f64> = seasons
                .values()
                .map(|xs| xs.iter().sum::<f64>() / xs.len() as f64)
                .collect();
            if means.len() >= 2 {
                season_mean_sds.push(sample_sd(&means));
            }
            for xs in seasons.values() {
                if xs.len() >= 2 {
                    within_season_sds.push(sample_sd(xs));
                }
            }
        }
        multi_season_counts[ri] = season_mean_sds.len();
        let nu_med = median(&mut season_mean_sds)
            .ok_or(QualityError::InsufficientHistory { role })?;
        let tau_med = median(&mut within_season_sds)
            .ok_or(QualityError::InsufficientHistory { role })?;
        nu_medians[ri] = nu_med;
        tau_medians[ri] = tau_med;
    }

    let nu = 0.5 * (nu_medians[0] + nu_medians[1]);
    let tau = 0.5 * (tau_medians[0] + tau_medians[1]);
    if nu <= 0.0 {
        return Err(QualityError::DegenerateVariance {
            which: "season-to-season standard deviation nu".into(),
        });
    }
    if tau <= 0.0 {
        return Err(QualityError::DegenerateVariance {
            which: "within-season standard deviation tau".into(),
        });
    }

    let report = HyperparamReport {
        nu_median_batters: nu_medians[0],
        nu_median_pitchers: nu_medians[1],
        tau_median_batters: tau_medians[0],
        tau_median_pitchers: tau_medians[1],
        batters_with_multiple_seasons: multi_season_counts[0],
        pitchers_with_multiple_seasons: multi_season_counts[1],
    };
    Ok((QualityHyperparams::new(tau, nu)?, report))
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}
