//! Posterior expected-wOBA trajectories and pass-boundary discontinuities.
//!
//! Fits a small synthetic season with a deliberately large third-pass jump
//! (the study-3 design), then summarizes the posterior trajectory across the
//! 27 batter sequence numbers, the within-pass flat averages, and the two
//! discontinuity statistics: the difference of adjacent pass means and the
//! step across the pass boundary itself.
//!
//! Run with `cargo run --example trajectory_and_discontinuity`.

use tto::analysis::{
    summarize, tto_averages, tto_boundary_step, tto_mean_diff, trajectory_draws,
    OutcomeWeights, TrajectorySummary, TtoPair,
};
use tto::model::{Dataset, Model, Variant};
use tto::sampler::{sample, ModelTarget, SamplerConfig};
use tto::simlab::{
    generate_season, reference_state, truth_functionals, GeneratingParams, SimStudy,
    SimStudyConfig,
};

fn main() -> anyhow::Result<()> {
    let mut cfg = SimStudyConfig::desk(SimStudy::Three, 23);
    cfg.games_per_season = 60;
    let gen = GeneratingParams::for_study(SimStudy::Three);
    let weights = OutcomeWeights::standard();
    let truth = truth_functionals(&gen, &weights);

    let season = generate_season(&cfg, &gen, 0);
    let dataset = Dataset::from_plate_appearances(&season.pas, &season.covariates)?;
    let model = Model::for_dataset(Variant::BaselineConstrained, &dataset);
    let sampler = SamplerConfig {
        n_chains: 2,
        n_iter: 180,
        n_warmup: 90,
        max_tree_depth: 8,
        seed: 9,
        ..SamplerConfig::default()
    };
    println!("fitting {} rows...", dataset.rows.len());
    let draws = sample(&ModelTarget::new(model, &dataset), &sampler)?;

    // All functionals evaluate at the league-median reference state.
    let state = reference_state();
    let trajs = trajectory_draws(&model, &draws, &state, &weights)?;
    let summary = TrajectorySummary::from_draws(&trajs)?;

    println!("\nposterior expected wOBA by sequence number (truth alongside):");
    println!("{:>3} {:>9} {:>9} {:>19}", "t", "truth", "mean", "50% interval");
    for (point, truth_v) in summary.points.iter().zip(&truth.trajectory) {
        println!(
            "{:>3} {:>9.1} {:>9.1}   [{:>7.1}, {:>7.1}]",
            point.t, truth_v, point.mean, point.q25, point.q75
        );
    }

    let passes = tto_averages(&truth.trajectory.clone().try_into().expect("27 points"));
    println!("\ntrue within-pass averages: {passes:.1?}");

    for pair in [TtoPair::FirstSecond, TtoPair::SecondThird] {
        let d = summarize(&tto_mean_diff(&model, &draws, &state, &weights, pair)?)?;
        let j = summarize(&tto_boundary_step(&model, &draws, &state, &weights, pair)?)?;
        let (d_truth, j_truth) = match pair {
            TtoPair::FirstSecond => (truth.d12, truth.jump12),
            TtoPair::SecondThird => (truth.d23, truth.jump23),
        };
        println!(
            "\npair {}: pass-mean difference {:.2} (truth {:.2}), 95% [{:.2}, {:.2}]",
            pair.label(),
            d.mean,
            d_truth,
            d.q025,
            d.q975
        );
        println!(
            "         boundary step        {:.2} (truth {:.2}), 95% [{:.2}, {:.2}]",
            j.mean, j_truth, j.q025, j.q975
        );
    }
    Ok(())
}
