//! No-U-turn Hamiltonian Monte Carlo with adaptive warmup.
//!
//! The transition kernel grows a leapfrog trajectory by doubling until the
//! generalized no-U-turn criterion fails, selecting a state multinomially
//! with weights proportional to the joint density. Warmup interleaves dual
//! averaging of the step size toward a target acceptance statistic with
//! windowed estimation of a diagonal inverse mass matrix from posterior
//! draws. Chains run independently (in parallel when a thread pool is
//! available) from a shared seed with per-chain counter streams, so results
//! are bitwise reproducible regardless of thread count.

mod diagnostics;
mod nuts;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

pub use diagnostics::{diagnose, effective_sample_size, split_rhat, ParamDiagnostics};

use crate::model::{Dataset, Model, ModelError};

/// Energy error beyond which a leapfrog step is recorded as divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Log density with gradient, in unconstrained coordinates.
///
/// Implementations signal untraversable regions by returning negative
/// infinity; the sampler treats those points as divergent rather than
/// erroring. Gradients must be finite whenever the density is.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// Maps sampler coordinates to the reporting scale. Defaults to the
    /// identity for fully unconstrained targets.
    fn to_constrained(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("p{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Total iterations per chain, warmup included.
    pub n_iter: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Initial positions are uniform on (-radius, radius) per coordinate.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iter: 1500,
            n_warmup: 750,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn n_kept(&self) -> usize {
        self.n_iter - self.n_warmup
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: String| Err(SamplerError::BadConfig(msg));
        if self.n_chains < 2 {
            return fail(format!(
                "need at least 2 chains for convergence diagnostics, got {}",
                self.n_chains
            ));
        }
        if self.n_warmup < 20 {
            return fail(format!(
                "need at least 20 warmup iterations for adaptation, got {}",
                self.n_warmup
            ));
        }
        if self.n_iter <= self.n_warmup || self.n_iter - self.n_warmup < 10 {
            return fail(format!(
                "need at least 10 post-warmup iterations, got n_iter={} with n_warmup={}",
                self.n_iter, self.n_warmup
            ));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return fail(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 14 {
            return fail(format!(
                "max_tree_depth must lie in 1..=14, got {}",
                self.max_tree_depth
            ));
        }
        if !(self.init_radius.is_finite() && self.init_radius > 0.0) {
            return fail(format!("init_radius must be positive, got {}", self.init_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
    #[error("chain {chain}: no finite starting point found in {attempts} attempts")]
    InitFailed { chain: usize, attempts: usize },
    #[error("chain {chain}: step size search escaped ({lo:e}, {hi:e}); the density may be improper or discontinuous")]
    StepSizeSearchFailed { chain: usize, lo: f64, hi: f64 },
}

/// Per-run sampling statistics, post-warmup unless noted.
#[derive(Debug, Clone, Default)]
pub struct SampleStats {
    pub divergences: usize,
    /// Transitions terminated by the depth limit instead of a U-turn.
    pub max_depth_hits: usize,
    /// Adapted step size per chain.
    pub step_sizes: Vec<f64>,
    /// Mean acceptance statistic per chain.
    pub mean_accept: Vec<f64>,
    /// Total gradient steps across chains, warmup included.
    pub leapfrogs: usize,
    pub runtime_s: f64,
    pub warnings: Vec<String>,
}

/// Kept draws from all chains, on the constrained scale, with convergence
/// diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub n_chains: usize,
    /// Kept draws per chain.
    pub n_kept: usize,
    /// Row-major `[chain][iteration][parameter]`.
    pub draws: Vec<f64>,
    pub diagnostics: BTreeMap<String, ParamDiagnostics>,
    pub stats: SampleStats,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_chains * self.n_kept
    }

    pub fn value(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.draws[(chain * self.n_kept + iter) * self.dim() + param]
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// One parameter's draws within one chain.
    pub fn chain_param(&self, chain: usize, param: usize) -> Vec<f64> {
        (0..self.n_kept).map(|i| self.value(chain, i, param)).collect()
    }

    /// One parameter's draws pooled over chains, chain-major order.
    pub fn flat_param(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_total());
        for chain in 0..self.n_chains {
            for iter in 0..self.n_kept {
                out.push(self.value(chain, iter, param));
            }
        }
        out
    }

    pub fn mean(&self, param: usize) -> f64 {
        let mut sum = 0.0;
        for chain in 0..self.n_chains {
            for iter in 0..self.n_kept {
                sum += self.value(chain, iter, param);
            }
        }
        sum / self.n_total() as f64
    }

    /// Iterates over every kept draw vector, chain-major.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim())
    }

    /// Recomputes the per-parameter diagnostics map from the stored draws.
    pub fn compute_diagnostics(&self) -> BTreeMap<String, ParamDiagnostics> {
        let mut out = BTreeMap::new();
        for (p, name) in self.param_names.iter().enumerate() {
            let chains: Vec<Vec<f64>> =
                (0..self.n_chains).map(|c| self.chain_param(c, p)).collect();
            out.insert(name.clone(), diagnose(&chains));
        }
        out
    }

    /// Largest split R-hat across parameters, skipping zero-variance ones.
    pub fn max_rhat(&self) -> f64 {
        self.diagnostics
            .values()
            .filter(|d| !d.zero_variance)
            .map(|d| d.rhat)
            .fold(1.0, f64::max)
    }
}

/// Runs all chains and assembles diagnostics.
pub fn sample<T: Target>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let start = Instant::now();
    let outputs: Result<Vec<nuts::ChainOutput>, SamplerError> = (0..config.n_chains)
        .into_par_iter()
        .map(|chain| nuts::run_chain(target, config, chain))
        .collect();
    let outputs = outputs?;

    let kept = config.n_kept();
    let mut draws = Vec::with_capacity(config.n_chains * kept * target.dim());
    let mut stats = SampleStats::default();
    for output in &outputs {
        draws.extend_from_slice(&output.draws);
        stats.divergences += output.divergences;
        stats.max_depth_hits += output.max_depth_hits;
        stats.step_sizes.push(output.step_size);
        stats.mean_accept.push(output.mean_accept);
        stats.leapfrogs += output.leapfrogs;
    }
    stats.runtime_s = start.elapsed().as_secs_f64();

    let total = (config.n_chains * kept) as f64;
    let divergence_rate = stats.divergences as f64 / total;
    if divergence_rate > 0.10 {
        stats.warnings.push(format!(
            "{:.1}% of post-warmup transitions diverged; estimates are unreliable",
            100.0 * divergence_rate
        ));
    }
    let depth_rate = stats.max_depth_hits as f64 / total;
    if depth_rate > 0.25 {
        stats.warnings.push(format!(
            "{:.1}% of post-warmup transitions hit the depth limit; consider a larger max_tree_depth",
            100.0 * depth_rate
        ));
    }

    let mut result = PosteriorDraws {
        param_names: target.param_names(),
        n_chains: config.n_chains,
        n_kept: kept,
        draws,
        diagnostics: BTreeMap::new(),
        stats,
    };
    result.diagnostics = result.compute_diagnostics();
    Ok(result)
}

/// Adapts an outcome model plus dataset to the sampler interface. Structural
/// model errors and non-finite densities both surface as divergent points.
pub struct ModelTarget<'a> {
    model: Model,
    data: &'a Dataset,
    names: Vec<String>,
}

impl<'a> ModelTarget<'a> {
    pub fn new(model: Model, data: &'a Dataset) -> Self {
        let names = model.param_names(data);
        Self { model, data, names }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl Target for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let value = match self.model.log_posterior_and_grad(self.data, position, grad) {
            Ok(v) => v,
            Err(ModelError::NonFiniteParams { .. }) => f64::NEG_INFINITY,
            Err(other) => panic!("model/target dimension drift: {other}"),
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            grad.fill(0.0);
            return f64::NEG_INFINITY;
        }
        value
    }

    fn to_constrained(&self, position: &[f64]) -> Vec<f64> {
        self.model.to_constrained(position)
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

/// Independent standard normal coordinates; used to validate the sampler
/// against known moments.
pub struct StdNormalTarget {
    pub dim: usize,
}

impl Target for StdNormalTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for (g, q) in grad.iter_mut().zip(position) {
            *g = -q;
            lp -= 0.5 * q * q;
        }
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct DiagNormalTarget {
        variances: Vec<f64>,
    }

    impl Target for DiagNormalTarget {
        fn dim(&self) -> usize {
            self.variances.len()
        }

        fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..position.len() {
                grad[i] = -position[i] / self.variances[i];
                lp -= 0.5 * position[i] * position[i] / self.variances[i];
            }
            lp
        }
    }

    struct ImpossibleTarget;

    impl Target for ImpossibleTarget {
        fn dim(&self) -> usize {
            2
        }

        fn log_density_grad(&self, _position: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            f64::NEG_INFINITY
        }
    }

    fn quick_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: 4,
            n_iter: 1000,
            n_warmup: 300,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn standard_normal_moments_and_diagnostics() {
        let target = StdNormalTarget { dim: 3 };
        let draws = sample(&target, &quick_config(7)).unwrap();
        assert_eq!(draws.n_total(), 2800);
        for p in 0..3 {
            let mean = draws.mean(p);
            assert!(mean.abs() < 0.10, "dim {p}: mean {mean}");
            let flat = draws.flat_param(p);
            let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (flat.len() - 1) as f64;
            assert!((var - 1.0).abs() < 0.20, "dim {p}: variance {var}");
            let d = &draws.diagnostics[&format!("p{p}")];
            assert!(d.rhat < 1.05, "dim {p}: rhat {}", d.rhat);
            assert!(d.ess > 400.0, "dim {p}: ess {}", d.ess);
            assert!(!d.zero_variance);
        }
        assert_eq!(draws.stats.divergences, 0);
        assert!(draws.stats.warnings.is_empty());
        for eps in &draws.stats.step_sizes {
            assert!((0.05..10.0).contains(eps), "step size {eps}");
        }
    }

    #[test]
    fn mass_adaptation_handles_badly_scaled_targets() {
        let target = DiagNormalTarget {
            variances: vec![25.0, 0.04],
        };
        let config = SamplerConfig {
            n_iter: 1300,
            n_warmup: 500,
            ..quick_config(11)
        };
        let draws = sample(&target, &config).unwrap();
        for (p, &true_var) in target.variances.iter().enumerate() {
            let mean = draws.mean(p);
            let sd = true_var.sqrt();
            assert!(mean.abs() < 0.15 * sd, "dim {p}: mean {mean}");
            let flat = draws.flat_param(p);
            let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (flat.len() - 1) as f64;
            assert!(
                (var / true_var - 1.0).abs() < 0.3,
                "dim {p}: variance ratio {}",
                var / true_var
            );
            let d = &draws.diagnostics[&format!("p{p}")];
            assert!(d.rhat < 1.05, "dim {p}: rhat {}", d.rhat);
            assert!(d.ess > 300.0, "dim {p}: ess {}", d.ess);
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible_and_chains_differ() {
        let target = StdNormalTarget { dim: 2 };
        let config = quick_config(42);
        let a = sample(&target, &config).unwrap();
        let b = sample(&target, &config).unwrap();
        assert_eq!(a.draws, b.draws);

        let other = sample(&target, &quick_config(43)).unwrap();
        assert_ne!(a.draws, other.draws);

        let chain0 = a.chain_param(0, 0);
        let chain1 = a.chain_param(1, 0);
        assert_ne!(chain0, chain1);
    }

    #[test]
    fn unsampleable_target_reports_init_failure() {
        let err = sample(&ImpossibleTarget, &quick_config(1)).unwrap_err();
        match err {
            SamplerError::InitFailed { attempts, .. } => assert_eq!(attempts, 100),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_setups() {
        let bad = |f: fn(&mut SamplerConfig)| {
            let mut c = SamplerConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert!(matches!(bad(|c| c.n_chains = 1), SamplerError::BadConfig(_)));
        assert!(matches!(bad(|c| c.n_warmup = 5), SamplerError::BadConfig(_)));
        assert!(matches!(
            bad(|c| {
                c.n_iter = 100;
                c.n_warmup = 95;
            }),
            SamplerError::BadConfig(_)
        ));
        assert!(matches!(bad(|c| c.target_accept = 1.0), SamplerError::BadConfig(_)));
        assert!(matches!(bad(|c| c.max_tree_depth = 0), SamplerError::BadConfig(_)));
        assert!(matches!(bad(|c| c.init_radius = 0.0), SamplerError::BadConfig(_)));
        assert!(SamplerConfig::default().validate().is_ok());
    }
}
