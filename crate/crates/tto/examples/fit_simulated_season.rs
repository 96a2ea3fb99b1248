//! End-to-end fit on synthetic data with known pass effects.
//!
//! Generates a small season from the study-2 design (modest second- and
//! third-pass jumps), writes it to disk in the plate appearance CSV schema
//! together with the true player qualities as a priors file, re-reads both,
//! and fits the constrained baseline model. At only 80 games the posteriors
//! are wide; the point is that the generating values sit inside the
//! intervals, not that the means pin them down.
//!
//! The files are left under a `tto_fit_example` directory in the system
//! temp dir, ready for the command line interface:
//!
//! ```text
//! tto fit --data <dir>/pa.csv --priors <dir>/priors.csv --out <run> \
//!     --chains 2 --iters 200 --warmup 100
//! ```
//!
//! Run with `cargo run --example fit_simulated_season`.

use tto::analysis::credible_interval;
use tto::data::{parse_plate_appearances, write_plate_appearances};
use tto::model::{Dataset, Model, Variant};
use tto::quality::{attach_quality_covariates, PriorMeans, QualityHyperparams};
use tto::sampler::{sample, ModelTarget, SamplerConfig};
use tto::simlab::{generate_season, GeneratingParams, SimStudy, SimStudyConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = SimStudyConfig::desk(SimStudy::Two, 11);
    cfg.games_per_season = 80;
    let gen = GeneratingParams::for_study(SimStudy::Two);
    let season = generate_season(&cfg, &gen, 0);
    println!(
        "generated {} plate appearances across {} games",
        season.pas.len(),
        cfg.games_per_season
    );

    let dir = std::env::temp_dir().join("tto_fit_example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir)?;
    let pa_path = dir.join("pa.csv");
    let priors_path = dir.join("priors.csv");
    write_plate_appearances(&pa_path, &season.pas)?;
    season
        .true_woba
        .write_csv(std::fs::File::create(&priors_path)?)?;
    println!("wrote {} and {}", pa_path.display(), priors_path.display());

    // Round-trip through the same readers the command line uses.
    let report = parse_plate_appearances(&pa_path, None)?;
    let priors = PriorMeans::read_csv(&priors_path)?;
    let hp = QualityHyperparams::new(0.5, 0.05)?;
    let attached = attach_quality_covariates(&report.records, &priors, &hp)?;
    let dataset = Dataset::from_plate_appearances(&report.records, &attached.covariates)?;
    let model = Model::for_dataset(Variant::BaselineConstrained, &dataset);

    let sampler = SamplerConfig {
        n_chains: 2,
        n_iter: 200,
        n_warmup: 100,
        max_tree_depth: 8,
        seed: 5,
        ..SamplerConfig::default()
    };
    println!("fitting {} rows, {} parameters...", dataset.rows.len(), model.dim());
    let draws = sample(&ModelTarget::new(model, &dataset), &sampler)?;
    println!(
        "max split-Rhat {:.3}, divergences {}",
        draws.max_rhat(),
        draws.stats.divergences
    );

    println!(
        "\n{:<12} {:>8} {:>8} {:>20}",
        "parameter", "mean", "truth", "95% interval"
    );
    let truths = [
        ("beta2[UBB]", gen.beta2[0]),
        ("beta2[1B]", gen.beta2[2]),
        ("beta2[HR]", gen.beta2[5]),
        ("beta3[UBB]", gen.beta3[0]),
        ("beta3[1B]", gen.beta3[2]),
        ("beta3[HR]", gen.beta3[5]),
    ];
    for (name, truth) in truths {
        let p = draws
            .param_index(name)
            .ok_or_else(|| anyhow::anyhow!("missing parameter {name}"))?;
        let (lo, hi) = credible_interval(&draws.flat_param(p), 0.95)?;
        println!(
            "{:<12} {:>8.3} {:>8.3}   [{:>6.3}, {:>6.3}]{}",
            name,
            draws.mean(p),
            truth,
            lo,
            hi,
            if (lo..=hi).contains(&truth) { " *" } else { "" }
        );
    }
    println!("(* = truth inside the interval)");
    Ok(())
}
