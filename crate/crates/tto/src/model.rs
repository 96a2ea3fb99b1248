//! Multinomial logistic outcome model and its gradients.
//!
//! Every plate appearance lands in one of seven categories; outs are the
//! reference with linear predictor fixed at zero. For the non-out categories
//! the baseline variants use
//!
//!   lp_k(t, x) = alpha0_k + alpha1_k * t + beta2_k * 1{10 <= t <= 18}
//!              + beta3_k * 1{19 <= t <= 27} + eta_k . x
//!
//! where t is the within-game batter sequence number and x stacks batter
//! quality, pitcher quality, a same-handedness flag, and a home flag. The
//! constrained variant forces each continuous decline slope alpha1_k to be
//! positive by sampling its log; the diffuse variant drops the constraint
//! and widens every prior. The indicator variant replaces the parametric
//! t-trend with one free intercept per sequence number, and the hierarchical
//! variant gives each pitcher its own intercept and slope and each batter
//! its own pass-two and pass-three shifts, all non-centered.
//!
//! All densities are evaluated on the unconstrained scale with log-Jacobian
//! terms included, which is what the Hamiltonian sampler needs. Gradients
//! are analytic; finite differences exist only in tests as an oracle.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{Outcome, PlateAppearance, MAX_T};
use crate::quality::QualityCovariates;

/// Number of outcome categories, outs included.
pub const N_CATEGORIES: usize = 7;
/// Non-out categories carrying free parameters.
pub const N_FREE: usize = 6;
/// Covariates entering every variant, in storage order.
pub const COVARIATE_NAMES: [&str; 4] = ["x_bat", "x_pit", "hand", "home"];

const LN_2PI: f64 = 1.837877066409345483560659472811;
const LN_2: f64 = std::f64::consts::LN_2;

/// Covariate vector for one plate appearance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateState {
    /// Batter quality on the logit scale.
    pub x_bat: f64,
    /// Pitcher quality (wOBA allowed) on the logit scale.
    pub x_pit: f64,
    /// 1.0 when batter and pitcher share handedness.
    pub hand: f64,
    /// 1.0 when the batter's team is at home.
    pub home: f64,
}

impl PlateState {
    pub fn new(x_bat: f64, x_pit: f64, hand: f64, home: f64) -> Self {
        Self { x_bat, x_pit, hand, home }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_bat, self.x_pit, self.hand, self.home]
    }
}

/// Model variants sharing the outcome likelihood but differing in how the
/// sequence-number trend is parameterized and in their priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Positive continuous slopes, standard normal priors elsewhere.
    BaselineConstrained,
    /// Unconstrained slopes, Normal(0, 25) priors everywhere.
    BaselineDiffuse,
    /// One intercept per sequence number per category.
    Indicator,
    /// Pitcher-specific intercept and slope, batter-specific pass shifts.
    Hierarchical,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BaselineConstrained,
        Variant::BaselineDiffuse,
        Variant::Indicator,
        Variant::Hierarchical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineConstrained => "baseline",
            Variant::BaselineDiffuse => "diffuse",
            Variant::Indicator => "indicator",
            Variant::Hierarchical => "hierarchical",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "baseline" | "baseline-constrained" | "constrained" => Ok(Variant::BaselineConstrained),
            "diffuse" | "baseline-diffuse" => Ok(Variant::BaselineDiffuse),
            "indicator" => Ok(Variant::Indicator),
            "hierarchical" => Ok(Variant::Hierarchical),
            other => Err(ModelError::UnknownVariant(other.to_string())),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model variant `{0}`; expected baseline, diffuse, indicator, or hierarchical")]
    UnknownVariant(String),
    #[error("dataset has no rows")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter vector contains a non-finite value at index {index}")]
    NonFiniteParams { index: usize },
    #[error("sequence number {t} outside 1..={max}", max = MAX_T)]
    BadSequenceNumber { t: u8 },
}

/// One modeling-ready plate appearance.
#[derive(Debug, Clone, Copy)]
pub struct FitRow {
    pub t: u8,
    pub state: PlateState,
    pub y: Outcome,
    /// Index into `Dataset::pitcher_ids`.
    pub pitcher: u32,
    /// Index into `Dataset::batter_ids`.
    pub batter: u32,
}

/// Design matrix plus group index maps.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub rows: Vec<FitRow>,
    /// Sorted, deduplicated; row indices refer to positions here.
    pub pitcher_ids: Vec<String>,
    pub batter_ids: Vec<String>,
}

impl Dataset {
    /// Pairs filtered plate appearances with their quality covariates.
    /// Group ids are indexed in sorted order for determinism.
    pub fn from_plate_appearances(
        pas: &[PlateAppearance],
        covariates: &[QualityCovariates],
    ) -> Result<Self, ModelError> {
        if pas.is_empty() {
            return Err(ModelError::EmptyData);
        }
        if covariates.len() != pas.len() {
            return Err(ModelError::DimensionMismatch {
                expected: pas.len(),
                found: covariates.len(),
            });
        }
        let mut pitcher_index: BTreeMap<&str, u32> = BTreeMap::new();
        let mut batter_index: BTreeMap<&str, u32> = BTreeMap::new();
        for pa in pas {
            let next = pitcher_index.len() as u32;
            pitcher_index.entry(&pa.pitcher_id).or_insert(next);
            let next = batter_index.len() as u32;
            batter_index.entry(&pa.batter_id).or_insert(next);
        }
        // Re-index by sorted order (BTreeMap iteration) so ids and indices
        // agree regardless of arrival order.
        let pitcher_ids: Vec<String> = pitcher_index.keys().map(|s| s.to_string()).collect();
        let batter_ids: Vec<String> = batter_index.keys().map(|s| s.to_string()).collect();
        for (i, key) in pitcher_index.values_mut().enumerate() {
            *key = i as u32;
        }
        for (i, key) in batter_index.values_mut().enumerate() {
            *key = i as u32;
        }

        let mut rows = Vec::with_capacity(pas.len());
        for (pa, cov) in pas.iter().zip(covariates) {
            if pa.t == 0 || pa.t > MAX_T {
                return Err(ModelError::BadSequenceNumber { t: pa.t });
            }
            rows.push(FitRow {
                t: pa.t,
                state: PlateState::new(
                    cov.x_batter,
                    cov.x_pitcher,
                    f64::from(u8::from(pa.hand_match())),
                    f64::from(u8::from(pa.home)),
                ),
                y: pa.outcome,
                pitcher: pitcher_index[pa.pitcher_id.as_str()],
                batter: batter_index[pa.batter_id.as_str()],
            });
        }
        Ok(Self { rows, pitcher_ids, batter_ids })
    }

    pub fn n_pitchers(&self) -> usize {
        self.pitcher_ids.len()
    }

    pub fn n_batters(&self) -> usize {
        self.batter_ids.len()
    }
}

/// Flat parameter vector bookkeeping for one variant.
///
/// Baseline variants: `[alpha0 | alpha1 | beta2 | beta3 | eta]`, length 48.
/// Indicator: `[alpha_t (27 per category) | eta]`, length 186.
/// Hierarchical: `[mu (4 families) | eta | log sigma2 | z]`, length
/// 72 + 12 P + 12 B. Families are ordered intercept, slope, pass2, pass3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub variant: Variant,
    pub n_pitchers: usize,
    pub n_batters: usize,
}

const T_BINS: usize = MAX_T as usize;

impl ParamLayout {
    pub fn new(variant: Variant, n_pitchers: usize, n_batters: usize) -> Self {
        Self { variant, n_pitchers, n_batters }
    }

    pub fn dim(&self) -> usize {
        match self.variant {
            Variant::BaselineConstrained | Variant::BaselineDiffuse => 8 * N_FREE,
            Variant::Indicator => (T_BINS + 4) * N_FREE,
            Variant::Hierarchical => {
                12 * N_FREE + 2 * N_FREE * (self.n_pitchers + self.n_batters)
            }
        }
    }

    pub fn alpha0(&self, cat: usize) -> usize {
        cat
    }

    pub fn alpha1(&self, cat: usize) -> usize {
        N_FREE + cat
    }

    pub fn beta2(&self, cat: usize) -> usize {
        2 * N_FREE + cat
    }

    pub fn beta3(&self, cat: usize) -> usize {
        3 * N_FREE + cat
    }

    /// Indicator-variant intercept for category `cat` at `t = t_index + 1`.
    pub fn alpha_t(&self, cat: usize, t_index: usize) -> usize {
        cat * T_BINS + t_index
    }

    pub fn eta(&self, cat: usize, cov: usize) -> usize {
        let base = match self.variant {
            Variant::BaselineConstrained | Variant::BaselineDiffuse => 4 * N_FREE,
            Variant::Indicator => T_BINS * N_FREE,
            Variant::Hierarchical => 4 * N_FREE,
        };
        base + 4 * cat + cov
    }

    /// Hierarchical hypermean; family 0..4 = intercept, slope, pass2, pass3.
    pub fn hyper_mean(&self, family: usize, cat: usize) -> usize {
        N_FREE * family + cat
    }

    /// Hierarchical log group variance for one family and category.
    pub fn log_sigma2(&self, family: usize, cat: usize) -> usize {
        8 * N_FREE + N_FREE * family + cat
    }

    /// Hierarchical standardized group effect. Families 0 and 1 index
    /// pitchers; families 2 and 3 index batters.
    pub fn z(&self, family: usize, cat: usize, group: usize) -> usize {
        let base = 12 * N_FREE;
        match family {
            0 | 1 => base + family * N_FREE * self.n_pitchers + cat * self.n_pitchers + group,
            2 | 3 => {
                base + 2 * N_FREE * self.n_pitchers
                    + (family - 2) * N_FREE * self.n_batters
                    + cat * self.n_batters
                    + group
            }
            other => panic!("group-effect family {other} out of range"),
        }
    }

    /// Positions holding exp-transformed parameters (log scale when
    /// unconstrained, positive scale after `to_constrained`).
    pub fn exp_range(&self) -> std::ops::Range<usize> {
        match self.variant {
            Variant::BaselineConstrained => N_FREE..2 * N_FREE,
            Variant::Hierarchical => 8 * N_FREE..12 * N_FREE,
            Variant::BaselineDiffuse | Variant::Indicator => 0..0,
        }
    }

    /// Column names for draw storage, on the constrained scale.
    pub fn names(&self, pitcher_ids: &[String], batter_ids: &[String]) -> Vec<String> {
        let cats: Vec<&str> = Outcome::ALL[1..].iter().map(|o| o.code()).collect();
        let mut names = Vec::with_capacity(self.dim());
        match self.variant {
            Variant::BaselineConstrained | Variant::BaselineDiffuse => {
                for block in ["alpha0", "alpha1", "beta2", "beta3"] {
                    names.extend(cats.iter().map(|c| format!("{block}[{c}]")));
                }
                push_eta_names(&mut names, &cats);
            }
            Variant::Indicator => {
                for c in &cats {
                    names.extend((1..=T_BINS).map(|t| format!("alpha[{c}][t={t}]")));
                }
                push_eta_names(&mut names, &cats);
            }
            Variant::Hierarchical => {
                const FAMILIES: [&str; 4] = ["int", "slope", "pass2", "pass3"];
                for fam in FAMILIES {
                    names.extend(cats.iter().map(|c| format!("mu_{fam}[{c}]")));
                }
                push_eta_names(&mut names, &cats);
                for fam in FAMILIES {
                    names.extend(cats.iter().map(|c| format!("sigma2_{fam}[{c}]")));
                }
                for (fam, ids) in [
                    ("int", pitcher_ids),
                    ("slope", pitcher_ids),
                    ("pass2", batter_ids),
                    ("pass3", batter_ids),
                ] {
                    for c in &cats {
                        names.extend(ids.iter().map(|id| format!("z_{fam}[{c}][{id}]")));
                    }
                }
            }
        }
        debug_assert_eq!(names.len(), self.dim());
        names
    }
}

fn push_eta_names(names: &mut Vec<String>, cats: &[&str]) {
    for c in cats {
        names.extend(COVARIATE_NAMES.iter().map(|cov| format!("eta[{c}][{cov}]")));
    }
}

/// Second-pass indicator as a float, for `t = t_index + 1`.
#[inline]
fn pass2(t_index: usize) -> f64 {
    if (9..18).contains(&t_index) {
        1.0
    } else {
        0.0
    }
}

/// Third-pass indicator as a float, for `t = t_index + 1`.
#[inline]
fn pass3(t_index: usize) -> f64 {
    if t_index >= 18 {
        1.0
    } else {
        0.0
    }
}

/// The baseline linear predictor cell, shared with the indicator embedding
/// so that embedded parameters reproduce baseline likelihoods bit for bit.
#[inline]
pub fn baseline_cell(a0: f64, a1: f64, b2: f64, b3: f64, t_index: usize) -> f64 {
    a0 + a1 * (t_index + 1) as f64 + b2 * pass2(t_index) + b3 * pass3(t_index)
}

/// Expands constrained baseline parameters (length 48) into constrained
/// indicator parameters (length 186) that define the identical likelihood.
pub fn embed_baseline_in_indicator(baseline_con: &[f64]) -> Vec<f64> {
    let bl = ParamLayout::new(Variant::BaselineConstrained, 0, 0);
    let il = ParamLayout::new(Variant::Indicator, 0, 0);
    assert_eq!(baseline_con.len(), bl.dim());
    let mut out = vec![0.0; il.dim()];
    for cat in 0..N_FREE {
        let a0 = baseline_con[bl.alpha0(cat)];
        let a1 = baseline_con[bl.alpha1(cat)];
        let b2 = baseline_con[bl.beta2(cat)];
        let b3 = baseline_con[bl.beta3(cat)];
        for ti in 0..T_BINS {
            out[il.alpha_t(cat, ti)] = baseline_cell(a0, a1, b2, b3, ti);
        }
        for cov in 0..4 {
            out[il.eta(cat, cov)] = baseline_con[bl.eta(cat, cov)];
        }
    }
    out
}

/// Numerically stable softmax over the seven categories; `lp[0]` is the out
/// category and must be zero.
pub fn softmax7(lp: &[f64; N_CATEGORIES]) -> [f64; N_CATEGORIES] {
    let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CATEGORIES];
    let mut denom = 0.0;
    for k in 0..N_CATEGORIES {
        out[k] = (lp[k] - m).exp();
        denom += out[k];
    }
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// One variant bound to its layout; stateless beyond dimensions.
#[derive(Debug, Clone, Copy)]
pub struct Model {
    layout: ParamLayout,
}

impl Model {
    pub fn new(variant: Variant, n_pitchers: usize, n_batters: usize) -> Self {
        Self {
            layout: ParamLayout::new(variant, n_pitchers, n_batters),
        }
    }

    pub fn for_dataset(variant: Variant, data: &Dataset) -> Self {
        Self::new(variant, data.n_pitchers(), data.n_batters())
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn param_names(&self, data: &Dataset) -> Vec<String> {
        self.layout.names(&data.pitcher_ids, &data.batter_ids)
    }

    /// Maps unconstrained sampler coordinates to the constrained scale by
    /// exponentiating the log-scale blocks.
    pub fn to_constrained(&self, unc: &[f64]) -> Vec<f64> {
        let mut out = unc.to_vec();
        for i in self.layout.exp_range() {
            out[i] = out[i].exp();
        }
        out
    }

    fn check_params(&self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteParams { index });
        }
        Ok(())
    }

    /// Log posterior density and gradient in unconstrained coordinates,
    /// including transform Jacobians. The gradient buffer is overwritten.
    /// Interior overflow yields negative infinity (a divergent point), not
    /// an error.
    pub fn log_posterior_and_grad(
        &self,
        data: &Dataset,
        unc: &[f64],
        grad: &mut [f64],
    ) -> Result<f64, ModelError> {
        self.check_params(unc)?;
        if data.rows.is_empty() {
            return Err(ModelError::EmptyData);
        }
        if grad.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: grad.len(),
            });
        }
        grad.fill(0.0);
        let con = self.to_constrained(unc);
        let loglik = self.log_likelihood_and_grad_constrained(data, &con, grad);
        // Chain rule through v = exp(u): d/du = v * d/dv.
        for i in self.layout.exp_range() {
            grad[i] *= con[i];
        }
        let logprior = self.log_prior_and_grad(unc, grad);
        let total = loglik + logprior;
        if total.is_nan() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(total)
    }

    /// Convenience wrapper allocating its own gradient buffer.
    pub fn log_posterior(&self, data: &Dataset, unc: &[f64]) -> Result<f64, ModelError> {
        let mut grad = vec![0.0; self.dim()];
        self.log_posterior_and_grad(data, unc, &mut grad)
    }

    /// Log likelihood on the constrained scale.
    pub fn log_likelihood(&self, data: &Dataset, con: &[f64]) -> Result<f64, ModelError> {
        self.check_params(con)?;
        if data.rows.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let mut grad = vec![0.0; self.dim()];
        Ok(self.log_likelihood_and_grad_constrained(data, con, &mut grad))
    }

    /// Likelihood and its gradient with respect to the constrained vector;
    /// gradient contributions are added into `grad`.
    fn log_likelihood_and_grad_constrained(
        &self,
        data: &Dataset,
        con: &[f64],
        grad: &mut [f64],
    ) -> f64 {
        match self.layout.variant {
            Variant::Hierarchical => self.loglik_hierarchical(data, con, grad),
            _ => self.loglik_tabular(data, con, grad),
        }
    }

    /// Baseline and indicator variants: the t-dependence enters only through
    /// a per-category table `a[cat][t-1]`, so residuals are bucketed by cell
    /// and folded into the trend parameters afterwards.
    fn loglik_tabular(&self, data: &Dataset, con: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let mut a = [[0.0f64; T_BINS]; N_FREE];
        match l.variant {
            Variant::BaselineConstrained | Variant::BaselineDiffuse => {
                for cat in 0..N_FREE {
                    let a0 = con[l.alpha0(cat)];
                    let a1 = con[l.alpha1(cat)];
                    let b2 = con[l.beta2(cat)];
                    let b3 = con[l.beta3(cat)];
                    for (ti, cell) in a[cat].iter_mut().enumerate() {
                        *cell = baseline_cell(a0, a1, b2, b3, ti);
                    }
                }
            }
            Variant::Indicator => {
                for cat in 0..N_FREE {
                    for (ti, cell) in a[cat].iter_mut().enumerate() {
                        *cell = con[l.alpha_t(cat, ti)];
                    }
                }
            }
            Variant::Hierarchical => unreachable!("hierarchical uses its own path"),
        }

        let mut grad_a = [[0.0f64; T_BINS]; N_FREE];
        let mut loglik = 0.0;
        for row in &data.rows {
            let ti = usize::from(row.t - 1);
            let x = row.state.to_array();
            let mut lp = [0.0f64; N_CATEGORIES];
            for (cat, table) in a.iter().enumerate() {
                let e = l.eta(cat, 0);
                lp[cat + 1] = table[ti]
                    + con[e] * x[0]
                    + con[e + 1] * x[1]
                    + con[e + 2] * x[2]
                    + con[e + 3] * x[3];
            }
            let (probs, log_norm) = softmax_with_log_norm(&lp);
            loglik += lp[row.y.index()] - log_norm;
            for cat in 0..N_FREE {
                let r = f64::from(u8::from(row.y.index() == cat + 1)) - probs[cat + 1];
                grad_a[cat][ti] += r;
                let e = l.eta(cat, 0);
                grad[e] += r * x[0];
                grad[e + 1] += r * x[1];
                grad[e + 2] += r * x[2];
                grad[e + 3] += r * x[3];
            }
        }

        match l.variant {
            Variant::BaselineConstrained | Variant::BaselineDiffuse => {
                for cat in 0..N_FREE {
                    let (mut g0, mut g1, mut g2, mut g3) = (0.0, 0.0, 0.0, 0.0);
                    for (ti, g) in grad_a[cat].iter().enumerate() {
                        g0 += g;
                        g1 += g * (ti + 1) as f64;
                        g2 += g * pass2(ti);
                        g3 += g * pass3(ti);
                    }
                    grad[l.alpha0(cat)] += g0;
                    grad[l.alpha1(cat)] += g1;
                    grad[l.beta2(cat)] += g2;
                    grad[l.beta3(cat)] += g3;
                }
            }
            Variant::Indicator => {
                for cat in 0..N_FREE {
                    for (ti, g) in grad_a[cat].iter().enumerate() {
                        grad[l.alpha_t(cat, ti)] += g;
                    }
                }
            }
            Variant::Hierarchical => unreachable!(),
        }
        loglik
    }

    fn loglik_hierarchical(&self, data: &Dataset, con: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        // sigma[family][cat] = sqrt(sigma2); positive by construction.
        let mut sigma = [[0.0f64; N_FREE]; 4];
        for (family, row) in sigma.iter_mut().enumerate() {
            for (cat, s) in row.iter_mut().enumerate() {
                *s = con[l.log_sigma2(family, cat)].sqrt();
            }
        }

        let mut loglik = 0.0;
        for row in &data.rows {
            let ti = usize::from(row.t - 1);
            let t = f64::from(row.t);
            let (i2, i3) = (pass2(ti), pass3(ti));
            let p = row.pitcher as usize;
            let b = row.batter as usize;
            let x = row.state.to_array();
            let mut lp = [0.0f64; N_CATEGORIES];
            for cat in 0..N_FREE {
                let a0 = con[l.hyper_mean(0, cat)] + sigma[0][cat] * con[l.z(0, cat, p)];
                let a1 = con[l.hyper_mean(1, cat)] + sigma[1][cat] * con[l.z(1, cat, p)];
                let b2 = con[l.hyper_mean(2, cat)] + sigma[2][cat] * con[l.z(2, cat, b)];
                let b3 = con[l.hyper_mean(3, cat)] + sigma[3][cat] * con[l.z(3, cat, b)];
                let e = l.eta(cat, 0);
                lp[cat + 1] = a0 + a1 * t + b2 * i2 + b3 * i3
                    + con[e] * x[0]
                    + con[e + 1] * x[1]
                    + con[e + 2] * x[2]
                    + con[e + 3] * x[3];
            }
            let (probs, log_norm) = softmax_with_log_norm(&lp);
            loglik += lp[row.y.index()] - log_norm;
            for cat in 0..N_FREE {
                let r = f64::from(u8::from(row.y.index() == cat + 1)) - probs[cat + 1];
                let mults = [1.0, t, i2, i3];
                let groups = [p, p, b, b];
                for family in 0..4 {
                    let rm = r * mults[family];
                    if rm == 0.0 {
                        continue;
                    }
                    let zi = l.z(family, cat, groups[family]);
                    grad[l.hyper_mean(family, cat)] += rm;
                    grad[zi] += rm * sigma[family][cat];
                    // d lp / d sigma2 = z / (2 sigma) times the multiplier.
                    grad[l.log_sigma2(family, cat)] +=
                        rm * con[zi] / (2.0 * sigma[family][cat]);
                }
                let e = l.eta(cat, 0);
                grad[e] += r * x[0];
                grad[e + 1] += r * x[1];
                grad[e + 2] += r * x[2];
                grad[e + 3] += r * x[3];
            }
        }
        loglik
    }

    /// Log prior in unconstrained coordinates, Jacobians included; gradient
    /// contributions are added into `grad`.
    pub fn log_prior_and_grad(&self, unc: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let mut lp = 0.0;
        match l.variant {
            Variant::BaselineConstrained => {
                for cat in 0..N_FREE {
                    for idx in [l.alpha0(cat), l.beta2(cat), l.beta3(cat)] {
                        lp += std_normal(unc[idx], &mut grad[idx]);
                    }
                    for cov in 0..4 {
                        let idx = l.eta(cat, cov);
                        lp += std_normal(unc[idx], &mut grad[idx]);
                    }
                    let idx = l.alpha1(cat);
                    lp += half_t7_log_scale(unc[idx], &mut grad[idx]);
                }
            }
            Variant::BaselineDiffuse => {
                for (idx, v) in unc.iter().enumerate() {
                    lp += normal(*v, 25.0, &mut grad[idx]);
                }
            }
            Variant::Indicator => {
                for (idx, v) in unc.iter().enumerate() {
                    lp += std_normal(*v, &mut grad[idx]);
                }
            }
            Variant::Hierarchical => {
                for family in 0..4 {
                    for cat in 0..N_FREE {
                        let idx = l.hyper_mean(family, cat);
                        lp += normal(unc[idx], 25.0, &mut grad[idx]);
                        let idx = l.log_sigma2(family, cat);
                        lp += half_normal_variance_log_scale(unc[idx], &mut grad[idx]);
                    }
                }
                for cat in 0..N_FREE {
                    for cov in 0..4 {
                        let idx = l.eta(cat, cov);
                        lp += std_normal(unc[idx], &mut grad[idx]);
                    }
                }
                for idx in 12 * N_FREE..l.dim() {
                    lp += std_normal(unc[idx], &mut grad[idx]);
                }
            }
        }
        lp
    }

    /// Population-level linear predictors at one design point. For the
    /// hierarchical variant this uses the hypermeans, i.e. the trajectory of
    /// a typical pitcher facing a typical batter.
    pub fn linear_predictors(
        &self,
        con: &[f64],
        t: u8,
        state: &PlateState,
    ) -> [f64; N_CATEGORIES] {
        assert!((1..=MAX_T).contains(&t), "sequence number {t} outside 1..={MAX_T}");
        let l = &self.layout;
        let ti = usize::from(t - 1);
        let x = state.to_array();
        let mut lp = [0.0f64; N_CATEGORIES];
        for cat in 0..N_FREE {
            let trend = match l.variant {
                Variant::BaselineConstrained | Variant::BaselineDiffuse => baseline_cell(
                    con[l.alpha0(cat)],
                    con[l.alpha1(cat)],
                    con[l.beta2(cat)],
                    con[l.beta3(cat)],
                    ti,
                ),
                Variant::Indicator => con[l.alpha_t(cat, ti)],
                Variant::Hierarchical => baseline_cell(
                    con[l.hyper_mean(0, cat)],
                    con[l.hyper_mean(1, cat)],
                    con[l.hyper_mean(2, cat)],
                    con[l.hyper_mean(3, cat)],
                    ti,
                ),
            };
            let e = l.eta(cat, 0);
            lp[cat + 1] = trend
                + con[e] * x[0]
                + con[e + 1] * x[1]
                + con[e + 2] * x[2]
                + con[e + 3] * x[3];
        }
        lp
    }

    /// Category probabilities at one design point, constrained scale.
    pub fn category_probabilities(
        &self,
        con: &[f64],
        t: u8,
        state: &PlateState,
    ) -> [f64; N_CATEGORIES] {
        softmax7(&self.linear_predictors(con, t, state))
    }
}

fn softmax_with_log_norm(lp: &[f64; N_CATEGORIES]) -> ([f64; N_CATEGORIES], f64) {
    let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; N_CATEGORIES];
    let mut denom = 0.0;
    for k in 0..N_CATEGORIES {
        probs[k] = (lp[k] - m).exp();
        denom += probs[k];
    }
    for v in &mut probs {
        *v /= denom;
    }
    (probs, m + denom.ln())
}

/// Standard normal log density; the gradient is added into `grad`.
fn std_normal(v: f64, grad: &mut f64) -> f64 {
    *grad += -v;
    -0.5 * (LN_2PI + v * v)
}

/// Normal(0, variance) log density.
fn normal(v: f64, variance: f64, grad: &mut f64) -> f64 {
    *grad += -v / variance;
    -0.5 * (LN_2PI + variance.ln() + v * v / variance)
}

/// Log density of a Student-t with 7 degrees of freedom, scale 1.
fn ln_t7(x: f64) -> f64 {
    use std::f64::consts::PI;
    // ln Gamma(4) - ln Gamma(3.5) - 0.5 ln(7 pi); Gamma(3.5) = 15 sqrt(pi)/8.
    let norm = 6.0f64.ln() - (15.0 * PI.sqrt() / 8.0).ln() - 0.5 * (7.0 * PI).ln();
    norm - 4.0 * (1.0 + x * x / 7.0).ln()
}

/// Half-t(7, scale 1) prior on a positive parameter sampled on the log
/// scale: log p(u) = ln 2 + ln t7(e^u) + u, the trailing u being the
/// Jacobian of the exp transform.
fn half_t7_log_scale(u: f64, grad: &mut f64) -> f64 {
    let x = u.exp();
    let q = x * x / 7.0;
    *grad += 1.0 - 8.0 * q / (1.0 + q);
    LN_2 + ln_t7(x) + u
}

/// Half-Normal(0, 1) prior on a variance sampled on the log scale:
/// log p(u) = ln 2 - ln(2 pi)/2 - e^{2u}/2 + u.
fn half_normal_variance_log_scale(u: f64, grad: &mut f64) -> f64 {
    let e2 = (2.0 * u).exp();
    *grad += 1.0 - e2;
    LN_2 - 0.5 * LN_2PI - 0.5 * e2 + u
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset(n_rows: usize, n_pitchers: u32, n_batters: u32, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_rows)
            .map(|_| FitRow {
                t: rng.gen_range(1..=MAX_T),
                state: PlateState::new(
                    rng.gen_range(-1.0..-0.5),
                    rng.gen_range(-1.0..-0.5),
                    f64::from(u8::from(rng.gen_bool(0.45))),
                    f64::from(u8::from(rng.gen_bool(0.5))),
                ),
                y: Outcome::ALL[rng.gen_range(0..N_CATEGORIES)],
                pitcher: rng.gen_range(0..n_pitchers),
                batter: rng.gen_range(0..n_batters),
            })
            .collect();
        Dataset {
            rows,
            pitcher_ids: (0..n_pitchers).map(|i| format!("p{i}")).collect(),
            batter_ids: (0..n_batters).map(|i| format!("b{i}")).collect(),
        }
    }

    fn random_params(model: &Model, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let exp_range = model.layout().exp_range();
        (0..model.dim())
            .map(|i| {
                if exp_range.contains(&i) {
                    // Keep exp-transformed coordinates small enough that the
                    // likelihood stays finite.
                    -2.0 + rng.gen_range(-0.5..0.5)
                } else {
                    rng.gen_range(-0.5..0.5)
                }
            })
            .collect()
    }

    fn fd_gradient(model: &Model, data: &Dataset, unc: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut out = vec![0.0; unc.len()];
        let mut probe = unc.to_vec();
        for i in 0..unc.len() {
            probe[i] = unc[i] + h;
            let up = model.log_posterior(data, &probe).unwrap();
            probe[i] = unc[i] - h;
            let down = model.log_posterior(data, &probe).unwrap();
            probe[i] = unc[i];
            out[i] = (up - down) / (2.0 * h);
        }
        out
    }

    #[test]
    fn layout_dimensions() {
        assert_eq!(ParamLayout::new(Variant::BaselineConstrained, 0, 0).dim(), 48);
        assert_eq!(ParamLayout::new(Variant::BaselineDiffuse, 0, 0).dim(), 48);
        assert_eq!(ParamLayout::new(Variant::Indicator, 0, 0).dim(), 186);
        assert_eq!(
            ParamLayout::new(Variant::Hierarchical, 10, 90).dim(),
            72 + 12 * 10 + 12 * 90
        );
    }

    #[test]
    fn layout_names_are_unique_and_sized() {
        let pids: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let bids: Vec<String> = (0..5).map(|i| format!("b{i}")).collect();
        for variant in Variant::ALL {
            let layout = ParamLayout::new(variant, pids.len(), bids.len());
            let names = layout.names(&pids, &bids);
            assert_eq!(names.len(), layout.dim());
            let unique: std::collections::BTreeSet<&String> = names.iter().collect();
            assert_eq!(unique.len(), names.len(), "{variant}: duplicate names");
        }
    }

    #[test]
    fn hierarchical_layout_covers_every_index_once() {
        let l = ParamLayout::new(Variant::Hierarchical, 3, 4);
        let mut seen = vec![false; l.dim()];
        for family in 0..4 {
            for cat in 0..N_FREE {
                for idx in [l.hyper_mean(family, cat), l.log_sigma2(family, cat)] {
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
                let groups = if family < 2 { 3 } else { 4 };
                for g in 0..groups {
                    let idx = l.z(family, cat, g);
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
        }
        for cat in 0..N_FREE {
            for cov in 0..4 {
                let idx = l.eta(cat, cov);
                assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn student_t_normalizer_matches_reference_value() {
        assert!((ln_t7(1.0) - (-1.4886597210694654)).abs() < 1e-14);
        let mut g = 0.0;
        let at_zero = half_t7_log_scale(0.0, &mut g);
        assert!((at_zero - (-0.7955125405095201)).abs() < 1e-14);
        // d/du [ln t7(e^u) + u] at u = 0: 1 - (8/7)/(1 + 1/7) = 0.
        assert!(g.abs() < 1e-15);
    }

    #[test]
    // The frozen totals are written with every digit of the oracle output.
    #[allow(clippy::excessive_precision)]
    fn prior_values_at_origin_match_hand_computed_totals() {
        // Constrained baseline: 42 standard normal dims at 0 contribute
        // -ln(2 pi)/2 each; 6 log-slope dims contribute ln 2 + ln t7(1).
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let mut grad = vec![0.0; model.dim()];
        let lp = model.log_prior_and_grad(&vec![0.0; model.dim()], &mut grad);
        assert!((lp - (-43.368493637653375)).abs() < 1e-10);
        assert!(grad.iter().all(|g| g.abs() < 1e-14));

        // Diffuse: 48 Normal(0, 25) dims at 0.
        let model = Model::new(Variant::BaselineDiffuse, 0, 0);
        let mut grad = vec![0.0; model.dim()];
        let lp = model.log_prior_and_grad(&vec![0.0; model.dim()], &mut grad);
        assert!((lp - (-121.36206939066111)).abs() < 1e-10);

        // Indicator: 186 standard normal dims.
        let model = Model::new(Variant::Indicator, 0, 0);
        let mut grad = vec![0.0; model.dim()];
        let lp = model.log_prior_and_grad(&vec![0.0; model.dim()], &mut grad);
        assert!((lp - (-170.92256717606912)).abs() < 1e-10);

        // Hierarchical with 2 pitchers and 3 batters: 24 Normal(0, 25)
        // hypermeans, 24 standard normal etas, 24 log-variance dims at
        // ln 2 - ln(2 pi)/2 - 1/2 each, 60 standard normal z dims.
        let model = Model::new(Variant::Hierarchical, 2, 3);
        let mut grad = vec![0.0; model.dim()];
        let lp = model.log_prior_and_grad(&vec![0.0; model.dim()], &mut grad);
        assert!((lp - (-155.29086394799652)).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_for_every_variant() {
        let data = toy_dataset(60, 3, 5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for variant in Variant::ALL {
            let model = Model::for_dataset(variant, &data);
            for _ in 0..2 {
                let unc = random_params(&model, &mut rng);
                let mut analytic = vec![0.0; model.dim()];
                let lp = model
                    .log_posterior_and_grad(&data, &unc, &mut analytic)
                    .unwrap();
                assert!(lp.is_finite());
                let fd = fd_gradient(&model, &data, &unc);
                let diff: f64 = analytic
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(
                    diff / scale < 1e-6,
                    "{variant}: relative gradient error {}",
                    diff / scale
                );
            }
        }
    }

    #[test]
    fn indicator_embedding_reproduces_baseline_likelihood_bitwise() {
        let data = toy_dataset(200, 4, 9, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let baseline = Model::for_dataset(Variant::BaselineConstrained, &data);
        let indicator = Model::for_dataset(Variant::Indicator, &data);
        for _ in 0..5 {
            let unc = random_params(&baseline, &mut rng);
            let con = baseline.to_constrained(&unc);
            let embedded = embed_baseline_in_indicator(&con);
            let a = baseline.log_likelihood(&data, &con).unwrap();
            let b = indicator.log_likelihood(&data, &embedded).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn probabilities_form_a_simplex_and_respect_the_reference_category() {
        let data = toy_dataset(1, 2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for variant in Variant::ALL {
            let model = Model::for_dataset(variant, &data);
            let con = model.to_constrained(&random_params(&model, &mut rng));
            let state = PlateState::new(-0.78, -0.80, 1.0, 0.0);
            for t in [1u8, 9, 10, 18, 19, 27] {
                let lp = model.linear_predictors(&con, t, &state);
                assert_eq!(lp[0], 0.0);
                let probs = model.category_probabilities(&con, t, &state);
                let sum: f64 = probs.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "{variant}: sum {sum}");
                assert!(probs.iter().all(|p| *p > 0.0));
            }
        }
    }

    #[test]
    fn category_probabilities_match_hand_computed_softmax() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let l = *model.layout();
        let mut con = vec![0.0; model.dim()];
        // Single nonzero category: walk with alpha0 = -1, slope 0.01,
        // pass shifts 0.2 and 0.3, eta = (1, 0, 0, 0).
        con[l.alpha0(0)] = -1.0;
        con[l.alpha1(0)] = 0.01;
        con[l.beta2(0)] = 0.2;
        con[l.beta3(0)] = 0.3;
        con[l.eta(0, 0)] = 1.0;
        let state = PlateState::new(-0.7, 0.0, 0.0, 0.0);
        let probs = model.category_probabilities(&con, 12, &state);
        let lp_walk: f64 = -1.0 + 0.01 * 12.0 + 0.2 + 1.0 * (-0.7);
        let denom = 5.0 + 1.0 + lp_walk.exp();
        assert!((probs[1] - lp_walk.exp() / denom).abs() < 1e-15);
        assert!((probs[0] - 1.0 / denom).abs() < 1e-15);
        assert!((probs[6] - 1.0 / denom).abs() < 1e-15);
    }

    #[test]
    fn constrained_map_exponentiates_only_the_log_blocks() {
        let model = Model::new(Variant::BaselineConstrained, 0, 0);
        let unc: Vec<f64> = (0..model.dim()).map(|i| i as f64 * 0.01 - 0.2).collect();
        let con = model.to_constrained(&unc);
        for i in 0..model.dim() {
            if model.layout().exp_range().contains(&i) {
                assert_eq!(con[i], unc[i].exp());
            } else {
                assert_eq!(con[i], unc[i]);
            }
        }
        let diffuse = Model::new(Variant::BaselineDiffuse, 0, 0);
        assert_eq!(diffuse.to_constrained(&unc), unc);
    }

    #[test]
    fn structural_errors_are_reported() {
        let data = toy_dataset(5, 2, 2, 1);
        let model = Model::for_dataset(Variant::BaselineConstrained, &data);
        let short = vec![0.0; 4];
        assert!(matches!(
            model.log_posterior(&data, &short),
            Err(ModelError::DimensionMismatch { .. })
        ));
        let mut bad = vec![0.0; model.dim()];
        bad[3] = f64::NAN;
        assert!(matches!(
            model.log_posterior(&data, &bad),
            Err(ModelError::NonFiniteParams { index: 3 })
        ));
        let empty = Dataset {
            rows: vec![],
            pitcher_ids: vec![],
            batter_ids: vec![],
        };
        assert!(matches!(
            model.log_posterior(&empty, &vec![0.0; model.dim()]),
            Err(ModelError::EmptyData)
        ));
    }

    #[test]
    fn overflow_becomes_negative_infinity_not_an_error() {
        let data = toy_dataset(5, 2, 2, 1);
        let model = Model::for_dataset(Variant::BaselineConstrained, &data);
        let mut unc = vec![0.0; model.dim()];
        // exp(600) overflows the linear predictor for t >= 1.
        unc[model.layout().alpha1(0)] = 600.0;
        let lp = model.log_posterior(&data, &unc).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn dataset_construction_indexes_groups_deterministically() {
        use crate::data::Hand;
        let mk = |batter: &str, pitcher: &str| PlateAppearance {
            game_id: "g1".into(),
            season: 2017,
            date: "2017-04-03".into(),
            pa_index: 0,
            pitcher_id: pitcher.into(),
            batter_id: batter.into(),
            is_starter: true,
            t: 5,
            outcome: Outcome::Single,
            bat_hand: Hand::L,
            pit_hand: Hand::L,
            home: true,
            event_woba: 0.870,
        };
        let pas = vec![mk("zeta", "omega"), mk("alpha", "delta")];
        let covs = vec![
            QualityCovariates { x_batter: -0.7, x_pitcher: -0.8 },
            QualityCovariates { x_batter: -0.6, x_pitcher: -0.9 },
        ];
        let data = Dataset::from_plate_appearances(&pas, &covs).unwrap();
        assert_eq!(data.batter_ids, vec!["alpha", "zeta"]);
        assert_eq!(data.pitcher_ids, vec!["delta", "omega"]);
        assert_eq!(data.rows[0].batter, 1);
        assert_eq!(data.rows[1].batter, 0);
        assert_eq!(data.rows[0].state.hand, 1.0);
        assert_eq!(data.rows[0].state.home, 1.0);
        assert_eq!(data.rows[0].state.x_bat, -0.7);

        let short = &covs[..1];
        assert!(matches!(
            Dataset::from_plate_appearances(&pas, short),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Dataset::from_plate_appearances(&[], &[]),
            Err(ModelError::EmptyData)
        ));
    }
}
