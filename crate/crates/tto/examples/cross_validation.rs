//! Game-level k-fold cross-validation: model vs base rates.
//!
//! Splits a synthetic season's games into two folds, fits the constrained
//! baseline on each training side, and scores held-out plate appearances by
//! multinomial cross-entropy. The comparison column is the entropy of the
//! training outcome frequencies, the strongest covariate-free predictor.
//! On data this small the model should roughly match the base rates, not
//! beat them by much: the pass effects are worth only a few thousandths.
//!
//! Run with `cargo run --example cross_validation`.

use tto::model::Variant;
use tto::sampler::SamplerConfig;
use tto::simlab::{generate_season, kfold_cv, GeneratingParams, SimStudy, SimStudyConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = SimStudyConfig::desk(SimStudy::Two, 31);
    cfg.games_per_season = 40;
    let gen = GeneratingParams::for_study(SimStudy::Two);
    let season = generate_season(&cfg, &gen, 0);

    let sampler = SamplerConfig {
        n_chains: 2,
        n_iter: 150,
        n_warmup: 75,
        max_tree_depth: 8,
        seed: 13,
        ..SamplerConfig::default()
    };
    let report = kfold_cv(
        &season.pas,
        &season.covariates,
        2,
        Variant::BaselineConstrained,
        &sampler,
    )?;

    println!("{}-fold cross-validation, {} variant", report.k, report.variant);
    println!(
        "{:>4} {:>12} {:>11} {:>10} {:>10}",
        "fold", "train rows", "test rows", "ce model", "ce base"
    );
    for f in &report.folds {
        println!(
            "{:>4} {:>12} {:>11} {:>10.4} {:>10.4}",
            f.fold, f.n_train_rows, f.n_test_rows, f.ce_model, f.ce_baserate
        );
    }
    println!(
        "\nmeans: model {:.4}, base rates {:.4} (lower is better)",
        report.mean_ce_model, report.mean_ce_baserate
    );
    Ok(())
}
