//! Sampler behavior on a known target, and what the diagnostics report.
//!
//! Runs the no-U-turn sampler on a 10-dimensional standard normal, where
//! every posterior quantity is known exactly, and prints per-coordinate
//! means, variances, split-chain scale reduction factors, and effective
//! sample sizes. Also prints the adaptation outcome: step sizes, gradient
//! step counts, divergences, and depth-limit hits.
//!
//! Run with `cargo run --example sampler_diagnostics`.

use tto::sampler::{sample, SamplerConfig, StdNormalTarget};

fn main() -> anyhow::Result<()> {
    let config = SamplerConfig {
        n_chains: 4,
        n_iter: 1000,
        n_warmup: 500,
        seed: 7,
        ..SamplerConfig::default()
    };
    let target = StdNormalTarget { dim: 10 };
    let draws = sample(&target, &config)?;

    println!(
        "{} chains x {} kept draws, {} total gradient steps",
        draws.n_chains, draws.n_kept, draws.stats.leapfrogs
    );
    println!(
        "adapted step sizes: {:?}",
        draws
            .stats
            .step_sizes
            .iter()
            .map(|e| (e * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    println!(
        "divergences: {}, depth-limit hits: {}",
        draws.stats.divergences, draws.stats.max_depth_hits
    );

    println!(
        "\n{:<6} {:>9} {:>9} {:>8} {:>9}  (want mean 0, var 1, Rhat near 1)",
        "coord", "mean", "var", "Rhat", "ESS"
    );
    for (p, name) in draws.param_names.iter().enumerate() {
        let samples = draws.flat_param(p);
        let mean = draws.mean(p);
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let d = &draws.diagnostics[name];
        println!(
            "{:<6} {:>9.4} {:>9.4} {:>8.4} {:>9.1}",
            name, mean, var, d.rhat, d.ess
        );
    }

    if let Some(warning) = draws.stats.warnings.first() {
        println!("\nsampler warning: {warning}");
    } else {
        println!("\nno sampler warnings");
    }
    Ok(())
}
