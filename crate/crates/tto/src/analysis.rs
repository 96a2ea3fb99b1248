//! Posterior functionals of fitted outcome models.
//!
//! The headline quantity is expected wOBA ("xwOBA", reported in points,
//! i.e. wOBA times 1000) at a fixed covariate profile as a function of the
//! within-game batter sequence number t. Functionals of that trajectory
//! separate the continuous decline story from discontinuous
//! times-through-the-order penalties:
//!
//! - the pass-averaged differences D12 and D23, which average xwOBA(t + 9) -
//!   xwOBA(t) over a full pass,
//! - the boundary steps xwOBA(10) - xwOBA(9) and xwOBA(19) - xwOBA(18),
//! - per-outcome probability (and probability-times-weight) versions of the
//!   pass-averaged differences.
//!
//! Everything is computed per posterior draw first; summaries (means,
//! standard deviations, type-7 quantile credible intervals) come last, so
//! interval statements are exact functionals of the draw set.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Outcome, MAX_T};
use crate::model::{Model, PlateState, N_CATEGORIES};
use crate::sampler::PosteriorDraws;

/// Inclusive sequence-number spans of the three times through the order.
pub const TTO_SPANS: [(u8, u8); 3] = [(1, 9), (10, 18), (19, 27)];

const T_BINS: usize = MAX_T as usize;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("interval level must lie strictly between 0 and 1, got {0}")]
    BadLevel(f64),
    #[error("bad outcome weights: {0}")]
    BadWeights(String),
    #[error("draws have {found} parameters but the model expects {expected}")]
    MismatchedDraws { expected: usize, found: usize },
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("write failed: {0}")]
    Io(#[from] io::Error),
}

/// Linear weights mapping outcome probabilities to expected wOBA points.
/// Outs carry weight zero by definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeWeights {
    w: [f64; N_CATEGORIES],
}

impl OutcomeWeights {
    /// The fixed weight set used throughout: walks 0.690, hit-by-pitch
    /// 0.719, singles 0.870, doubles 1.217, triples 1.529, home runs 1.940.
    pub fn standard() -> Self {
        Self {
            w: [0.0, 0.690, 0.719, 0.870, 1.217, 1.529, 1.940],
        }
    }

    pub fn new(w: [f64; N_CATEGORIES]) -> Result<Self, AnalysisError> {
        if w[0] != 0.0 {
            return Err(AnalysisError::BadWeights(format!(
                "the out category must carry weight 0, got {}",
                w[0]
            )));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(AnalysisError::BadWeights(format!(
                "weights must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self { w })
    }

    pub fn weight(&self, outcome: Outcome) -> f64 {
        self.w[outcome.index()]
    }

    /// Expected wOBA points for one probability vector: 1000 sum_k w_k p_k.
    pub fn xwoba(&self, probs: &[f64; N_CATEGORIES]) -> f64 {
        self.w
            .iter()
            .zip(probs)
            .map(|(w, p)| 1000.0 * w * p)
            .sum()
    }
}

/// xwOBA at every sequence number for one constrained parameter vector.
pub fn draw_trajectory(
    model: &Model,
    con: &[f64],
    state: &PlateState,
    weights: &OutcomeWeights,
) -> [f64; T_BINS] {
    let mut out = [0.0; T_BINS];
    for (ti, cell) in out.iter_mut().enumerate() {
        let probs = model.category_probabilities(con, (ti + 1) as u8, state);
        *cell = weights.xwoba(&probs);
    }
    out
}

/// Per-draw xwOBA trajectories, chain-major draw order.
pub fn trajectory_draws(
    model: &Model,
    draws: &PosteriorDraws,
    state: &PlateState,
    weights: &OutcomeWeights,
) -> Result<Vec<[f64; T_BINS]>, AnalysisError> {
    check_draws(model, draws)?;
    Ok(draws
        .iter_draws()
        .map(|con| draw_trajectory(model, con, state, weights))
        .collect())
}

fn check_draws(model: &Model, draws: &PosteriorDraws) -> Result<(), AnalysisError> {
    if model.dim() != draws.dim() {
        return Err(AnalysisError::MismatchedDraws {
            expected: model.dim(),
            found: draws.dim(),
        });
    }
    if draws.n_total() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: draws.n_total(),
        });
    }
    Ok(())
}

/// Pointwise posterior summary of an xwOBA trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u8,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub points: Vec<TrajectoryPoint>,
}

impl TrajectorySummary {
    /// Central 50% and 95% bands; the 50% band nests inside the 95% band by
    /// quantile monotonicity.
    pub fn from_draws(trajectories: &[[f64; T_BINS]]) -> Result<Self, AnalysisError> {
        if trajectories.len() < 2 {
            return Err(AnalysisError::TooFewSamples {
                needed: 2,
                got: trajectories.len(),
            });
        }
        let mut points = Vec::with_capacity(T_BINS);
        for ti in 0..T_BINS {
            let mut column: Vec<f64> = trajectories.iter().map(|tr| tr[ti]).collect();
            column.sort_by(f64::total_cmp);
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            points.push(TrajectoryPoint {
                t: (ti + 1) as u8,
                mean,
                q25: quantile_sorted(&column, 0.25),
                q75: quantile_sorted(&column, 0.75),
                q025: quantile_sorted(&column, 0.025),
                q975: quantile_sorted(&column, 0.975),
            });
        }
        Ok(Self { points })
    }

    /// `t,mean,q25,q75,q025,q975` rows.
    pub fn write_csv(&self, out: impl io::Write) -> Result<(), AnalysisError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean", "q25", "q75", "q025", "q975"])?;
        for p in &self.points {
            w.write_record([
                p.t.to_string(),
                p.mean.to_string(),
                p.q25.to_string(),
                p.q75.to_string(),
                p.q025.to_string(),
                p.q975.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean xwOBA within each pass through the order, for one trajectory.
pub fn tto_averages(trajectory: &[f64; T_BINS]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, (lo, hi)) in TTO_SPANS.iter().enumerate() {
        let span = &trajectory[usize::from(*lo) - 1..usize::from(*hi)];
        out[i] = span.iter().sum::<f64>() / span.len() as f64;
    }
    out
}

/// Which pass boundary a discontinuity statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtoPair {
    /// First versus second time through the order.
    FirstSecond,
    /// Second versus third time through the order.
    SecondThird,
}

impl TtoPair {
    /// 1-based sequence numbers of the earlier pass in the comparison.
    fn base_span(self) -> std::ops::RangeInclusive<usize> {
        match self {
            TtoPair::FirstSecond => 1..=9,
            TtoPair::SecondThird => 10..=18,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TtoPair::FirstSecond => "12",
            TtoPair::SecondThird => "23",
        }
    }
}

impl std::str::FromStr for TtoPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "12" => Ok(TtoPair::FirstSecond),
            "23" => Ok(TtoPair::SecondThird),
            other => Err(format!("unknown pass pair `{other}`; expected 12 or 23")),
        }
    }
}

/// Pass-averaged xwOBA difference for one trajectory:
/// (1/9) sum over the base span of xwOBA(t + 9) - xwOBA(t).
pub fn trajectory_mean_diff(trajectory: &[f64; T_BINS], pair: TtoPair) -> f64 {
    let mut acc = 0.0;
    for t in pair.base_span() {
        acc += trajectory[t + 9 - 1] - trajectory[t - 1];
    }
    acc / 9.0
}

/// Boundary step for one trajectory: xwOBA at the first sequence number of
/// the later pass minus xwOBA at the last sequence number of the earlier.
pub fn trajectory_boundary_step(trajectory: &[f64; T_BINS], pair: TtoPair) -> f64 {
    match pair {
        TtoPair::FirstSecond => trajectory[9] - trajectory[8],
        TtoPair::SecondThird => trajectory[18] - trajectory[17],
    }
}

/// Per-draw pass-averaged xwOBA differences.
pub fn tto_mean_diff(
    model: &Model,
    draws: &PosteriorDraws,
    state: &PlateState,
    weights: &OutcomeWeights,
    pair: TtoPair,
) -> Result<Vec<f64>, AnalysisError> {
    Ok(trajectory_draws(model, draws, state, weights)?
        .iter()
        .map(|tr| trajectory_mean_diff(tr, pair))
        .collect())
}

/// Per-draw boundary steps.
pub fn tto_boundary_step(
    model: &Model,
    draws: &PosteriorDraws,
    state: &PlateState,
    weights: &OutcomeWeights,
    pair: TtoPair,
) -> Result<Vec<f64>, AnalysisError> {
    Ok(trajectory_draws(model, draws, state, weights)?
        .iter()
        .map(|tr| trajectory_boundary_step(tr, pair))
        .collect())
}

/// Per-draw pass-averaged probability differences for one outcome:
/// (1/9) sum over the base span of P_k(t + 9) - P_k(t).
pub fn outcome_prob_diff(
    model: &Model,
    draws: &PosteriorDraws,
    state: &PlateState,
    outcome: Outcome,
    pair: TtoPair,
) -> Result<Vec<f64>, AnalysisError> {
    check_draws(model, draws)?;
    let k = outcome.index();
    Ok(draws
        .iter_draws()
        .map(|con| {
            let mut acc = 0.0;
            for t in pair.base_span() {
                let late = model.category_probabilities(con, (t + 9) as u8, state)[k];
                let early = model.category_probabilities(con, t as u8, state)[k];
                acc += late - early;
            }
            acc / 9.0
        })
        .collect())
}

/// Per-draw xwOBA-scale version of [`outcome_prob_diff`], computed as
/// exactly 1000 w_k times the probability difference so the two outputs
/// stay consistent to the bit.
pub fn outcome_xwoba_diff(
    model: &Model,
    draws: &PosteriorDraws,
    state: &PlateState,
    weights: &OutcomeWeights,
    outcome: Outcome,
    pair: TtoPair,
) -> Result<Vec<f64>, AnalysisError> {
    let w = weights.weight(outcome);
    Ok(outcome_prob_diff(model, draws, state, outcome, pair)?
        .into_iter()
        .map(|d| 1000.0 * w * d)
        .collect())
}

/// Moment and quantile summary of a per-draw sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q25: f64,
    pub q75: f64,
    pub q975: f64,
}

pub fn summarize(samples: &[f64]) -> Result<SampleSummary, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SampleSummary {
        n,
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        q975: quantile_sorted(&sorted, 0.975),
    })
}

/// Type-7 quantile (linear interpolation of order statistics) of a sorted
/// sample: h = (n - 1) p, value = x[floor h] + frac(h) (x[floor h + 1] -
/// x[floor h]).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Central credible interval at `level` from unsorted samples, type-7.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64), AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalysisError::BadLevel(level));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&sorted, alpha),
        quantile_sorted(&sorted, 1.0 - alpha),
    ))
}

/// Row/column design for the averaged-xwOBA table.
#[derive(Debug, Clone)]
pub enum TableAxes {
    /// Rows are same-handedness (0/1), columns home (0/1), at fixed quality.
    HandHome { x_bat: f64, x_pit: f64 },
    /// Rows are labelled batter-quality logits, columns pitcher-quality
    /// logits, with handedness and home fixed.
    Quality {
        bat_levels: Vec<(String, f64)>,
        pit_levels: Vec<(String, f64)>,
        hand: f64,
        home: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub row_level: String,
    pub col_level: String,
    pub mean: f64,
    pub two_sd: f64,
}

/// Posterior mean and two-standard-deviation spread of sequence-averaged
/// xwOBA, (1/27) sum over t, for each cell of the axis grid.
pub fn averaged_xwoba_table(
    model: &Model,
    draws: &PosteriorDraws,
    axes: &TableAxes,
    weights: &OutcomeWeights,
) -> Result<Vec<TableCell>, AnalysisError> {
    check_draws(model, draws)?;
    let cells: Vec<(String, String, PlateState)> = match axes {
        TableAxes::HandHome { x_bat, x_pit } => {
            let mut out = Vec::new();
            for hand in [0.0, 1.0] {
                for home in [0.0, 1.0] {
                    out.push((
                        format!("hand={}", hand as u8),
                        format!("home={}", home as u8),
                        PlateState::new(*x_bat, *x_pit, hand, home),
                    ));
                }
            }
            out
        }
        TableAxes::Quality { bat_levels, pit_levels, hand, home } => {
            let mut out = Vec::new();
            for (blabel, xb) in bat_levels {
                for (plabel, xp) in pit_levels {
                    out.push((
                        blabel.clone(),
                        plabel.clone(),
                        PlateState::new(*xb, *xp, *hand, *home),
                    ));
                }
            }
            out
        }
    };

    let mut table = Vec::with_capacity(cells.len());
    for (row, col, state) in cells {
        let per_draw: Vec<f64> = draws
            .iter_draws()
            .map(|con| {
                let tr = draw_trajectory(model, con, &state, weights);
                tr.iter().sum::<f64>() / T_BINS as f64
            })
            .collect();
        let s = summarize(&per_draw)?;
        table.push(TableCell {
            row_level: row,
            col_level: col,
            mean: s.mean,
            two_sd: 2.0 * s.sd,
        });
    }
    Ok(table)
}

/// `row_level,col_level,mean,two_sd` rows.
pub fn write_table_csv(cells: &[TableCell], out: impl io::Write) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_level", "col_level", "mean", "two_sd"])?;
    for c in cells {
        w.write_record([
            c.row_level.as_str(),
            c.col_level.as_str(),
            &c.mean.to_string(),
            &c.two_sd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::sampler::{PosteriorDraws, SampleStats};
    use proptest::prelude::*;

    fn draws_from_rows(rows: Vec<Vec<f64>>) -> PosteriorDraws {
        let dim = rows[0].len();
        let names = (0..dim).map(|i| format!("p{i}")).collect();
        let n = rows.len();
        assert_eq!(n % 2, 0);
        PosteriorDraws {
            param_names: names,
            n_chains: 2,
            n_kept: n / 2,
            draws: rows.into_iter().flatten().collect(),
            diagnostics: std::collections::BTreeMap::new(),
            stats: SampleStats::default(),
        }
    }

    // Baseline model with equal slopes everywhere: every non-out category
    // shares lp(t) = slope * t, so xwOBA has the closed form
    // 6965 e^{st} / (1 + 6 e^{st}).
    fn equal_slope_params(slope: f64) -> Vec<f64> {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let mut con = vec![0.0; model.dim()];
        for cat in 0..6 {
            con[model.layout().alpha1(cat)] = slope;
        }
        con
    }

    fn equal_slope_xwoba(slope: f64, t: f64) -> f64 {
        let e = (slope * t).exp();
        1000.0 * 6.965 * e / (1.0 + 6.0 * e)
    }

    #[test]
    fn uniform_probabilities_give_995_points() {
        let w = OutcomeWeights::standard();
        let probs = [1.0 / 7.0; 7];
        assert!((w.xwoba(&probs) - 995.0).abs() < 1e-10);
    }

    #[test]
    fn weight_validation() {
        assert!(OutcomeWeights::new([0.1, 0.7, 0.7, 0.9, 1.2, 1.5, 1.9]).is_err());
        assert!(OutcomeWeights::new([0.0, 0.7, 0.7, 0.9, 1.2, 1.5, f64::NAN]).is_err());
        assert!(OutcomeWeights::new([0.0, 0.7, 0.7, 0.9, 1.2, 1.5, 1.9]).is_ok());
    }

    #[test]
    fn trajectory_matches_closed_form_for_equal_slopes() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let con = equal_slope_params(0.01);
        let state = PlateState::new(0.0, 0.0, 0.0, 0.0);
        let tr = draw_trajectory(&model, &con, &state, &OutcomeWeights::standard());
        for (ti, value) in tr.iter().enumerate() {
            let expect = equal_slope_xwoba(0.01, (ti + 1) as f64);
            assert!((value - expect).abs() < 1e-9, "t={}: {value} vs {expect}", ti + 1);
        }
    }

    #[test]
    fn mean_diff_and_boundary_step_match_hand_sums() {
        let con = equal_slope_params(0.01);
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let state = PlateState::new(0.0, 0.0, 0.0, 0.0);
        let tr = draw_trajectory(&model, &con, &state, &OutcomeWeights::standard());

        let mut expect12 = 0.0;
        for t in 1..=9u32 {
            expect12 +=
                equal_slope_xwoba(0.01, (t + 9) as f64) - equal_slope_xwoba(0.01, t as f64);
        }
        expect12 /= 9.0;
        assert!((trajectory_mean_diff(&tr, TtoPair::FirstSecond) - expect12).abs() < 1e-9);

        let expect_step = equal_slope_xwoba(0.01, 19.0) - equal_slope_xwoba(0.01, 18.0);
        assert!(
            (trajectory_boundary_step(&tr, TtoPair::SecondThird) - expect_step).abs() < 1e-9
        );

        let avgs = tto_averages(&tr);
        let mean_first: f64 = (1..=9).map(|t| equal_slope_xwoba(0.01, t as f64)).sum::<f64>() / 9.0;
        assert!((avgs[0] - mean_first).abs() < 1e-9);
        // Rising trajectory: pass means increase.
        assert!(avgs[0] < avgs[1] && avgs[1] < avgs[2]);
    }

    #[test]
    fn flat_trajectory_has_zero_discontinuities() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let con = vec![0.0; model.dim()];
        let state = PlateState::new(0.0, 0.0, 0.0, 0.0);
        let tr = draw_trajectory(&model, &con, &state, &OutcomeWeights::standard());
        assert!(tr.iter().all(|v| (v - tr[0]).abs() < 1e-12));
        assert_eq!(trajectory_mean_diff(&tr, TtoPair::FirstSecond), 0.0);
        assert_eq!(trajectory_boundary_step(&tr, TtoPair::FirstSecond), 0.0);
    }

    #[test]
    fn per_outcome_diffs_sum_to_minus_out_diff_and_scale_exactly() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let mut rows = Vec::new();
        for i in 0..4 {
            let mut con = equal_slope_params(0.005 + 0.002 * i as f64);
            con[model.layout().beta3(2)] = 0.1 * i as f64;
            rows.push(con);
        }
        let draws = draws_from_rows(rows);
        let state = PlateState::new(-0.6, -0.8, 1.0, 0.0);
        let weights = OutcomeWeights::standard();

        let out_diff =
            outcome_prob_diff(&model, &draws, &state, Outcome::Out, TtoPair::SecondThird).unwrap();
        let mut non_out_sum = vec![0.0; draws.n_total()];
        for outcome in Outcome::ALL.iter().skip(1) {
            let d =
                outcome_prob_diff(&model, &draws, &state, *outcome, TtoPair::SecondThird).unwrap();
            for (acc, v) in non_out_sum.iter_mut().zip(&d) {
                *acc += v;
            }
        }
        for (total, out) in non_out_sum.iter().zip(&out_diff) {
            assert!((total + out).abs() <= 1e-12, "sum {total} out {out}");
        }

        // The xwOBA-scale per-outcome diff is the probability diff times
        // 1000 w_k, exactly.
        let probs =
            outcome_prob_diff(&model, &draws, &state, Outcome::HomeRun, TtoPair::SecondThird)
                .unwrap();
        let points = outcome_xwoba_diff(
            &model,
            &draws,
            &state,
            &weights,
            Outcome::HomeRun,
            TtoPair::SecondThird,
        )
        .unwrap();
        for (p, x) in probs.iter().zip(&points) {
            assert_eq!((1000.0 * 1.940 * p).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn type7_quantiles_match_reference_values() {
        let sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_sorted(&sorted, 0.25) - 25.75).abs() < 1e-12);
        assert!((quantile_sorted(&sorted, 0.75) - 75.25).abs() < 1e-12);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 100.0);
        let (lo, hi) = credible_interval(&sorted, 0.5).unwrap();
        assert!((lo - 25.75).abs() < 1e-12);
        assert!((hi - 75.25).abs() < 1e-12);
    }

    #[test]
    fn credible_interval_rejects_bad_inputs() {
        assert!(matches!(
            credible_interval(&[1.0], 0.5),
            Err(AnalysisError::TooFewSamples { .. })
        ));
        assert!(matches!(
            credible_interval(&[1.0, 2.0], 1.0),
            Err(AnalysisError::BadLevel(_))
        ));
        assert!(matches!(
            credible_interval(&[1.0, 2.0], 0.0),
            Err(AnalysisError::BadLevel(_))
        ));
    }

    #[test]
    fn trajectory_summary_nests_intervals_and_writes_csv() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| equal_slope_params(0.002 + 0.001 * i as f64))
            .collect();
        let draws = draws_from_rows(rows);
        let state = PlateState::new(0.0, 0.0, 0.0, 0.0);
        let trajs =
            trajectory_draws(&model, &draws, &state, &OutcomeWeights::standard()).unwrap();
        let summary = TrajectorySummary::from_draws(&trajs).unwrap();
        assert_eq!(summary.points.len(), 27);
        for p in &summary.points {
            assert!(p.q025 <= p.q25 && p.q25 <= p.q75 && p.q75 <= p.q975);
            assert!(p.mean >= p.q025 && p.mean <= p.q975);
        }
        let mut buf = Vec::new();
        summary.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,mean,q25,q75,q025,q975");
        assert_eq!(text.lines().count(), 28);
    }

    #[test]
    fn averaged_table_covers_the_grid() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| equal_slope_params(0.004 * i as f64)).collect();
        let draws = draws_from_rows(rows);
        let weights = OutcomeWeights::standard();

        let cells = averaged_xwoba_table(
            &model,
            &draws,
            &TableAxes::HandHome { x_bat: -0.78, x_pit: -0.78 },
            &weights,
        )
        .unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().any(|c| c.row_level == "hand=1" && c.col_level == "home=0"));
        assert!(cells.iter().all(|c| c.two_sd >= 0.0));

        let cells = averaged_xwoba_table(
            &model,
            &draws,
            &TableAxes::Quality {
                bat_levels: vec![("q10".into(), -0.9), ("q90".into(), -0.6)],
                pit_levels: vec![("q50".into(), -0.78)],
                hand: 1.0,
                home: 0.0,
            },
            &weights,
        )
        .unwrap();
        assert_eq!(cells.len(), 2);
        let mut buf = Vec::new();
        write_table_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row_level,col_level,mean,two_sd\n"));

        // Better batter quality must raise averaged xwOBA whenever batter
        // quality enters positively; with zero etas it's flat instead.
        assert!((cells[0].mean - cells[1].mean).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = Model::new(Variant::Indicator, 0, 0);
        let draws = draws_from_rows(vec![vec![0.0; 48], vec![0.0; 48]]);
        let state = PlateState::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            trajectory_draws(&model, &draws, &state, &OutcomeWeights::standard()),
            Err(AnalysisError::MismatchedDraws { expected: 186, found: 48 })
        ));
    }

    proptest! {
        #[test]
        fn quantiles_stay_within_range_and_increase(
            mut xs in proptest::collection::vec(-1e3f64..1e3, 2..60),
            p1 in 0.0f64..1.0,
            p2 in 0.0f64..1.0,
        ) {
            xs.sort_by(f64::total_cmp);
            let (lo, hi) = (p1.min(p2), p1.max(p2));
            let qlo = quantile_sorted(&xs, lo);
            let qhi = quantile_sorted(&xs, hi);
            prop_assert!(qlo >= xs[0] - 1e-9);
            prop_assert!(qhi <= xs[xs.len() - 1] + 1e-9);
            prop_assert!(qlo <= qhi + 1e-9);
        }

        #[test]
        fn credible_intervals_nest(
            xs in proptest::collection::vec(-1e3f64..1e3, 4..80),
        ) {
            let (lo50, hi50) = credible_interval(&xs, 0.5).unwrap();
            let (lo95, hi95) = credible_interval(&xs, 0.95).unwrap();
            prop_assert!(lo95 <= lo50 + 1e-9);
            prop_assert!(hi50 <= hi95 + 1e-9);
        }
    }
}
