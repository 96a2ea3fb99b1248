//! Running player-quality estimates from raw plate appearance CSV.
//!
//! Builds a two-season file for one batter, derives the prior mean from the
//! first season, then walks the second season printing the normal-normal
//! posterior mean before each plate appearance. The estimate must only ever
//! use strictly earlier outcomes: the covariate attached to a plate
//! appearance is read before that appearance's result is folded in.
//!
//! Run with `cargo run --example quality_running_estimate`.

use std::fmt::Write as _;

use tto::data::parse_plate_appearances;
use tto::quality::{
    attach_quality_covariates, inv_logit, PriorMeans, QualityHyperparams,
};

fn main() -> anyhow::Result<()> {
    // Season 1: the batter runs hot (several singles). Season 2: outs.
    // The other players exist so the filter and grouping stay realistic.
    let mut csv = String::from(
        "game_id,season,date,pa_index,pitcher_id,batter_id,is_starter,t,outcome,bat_hand,pit_hand,home,event_woba\n",
    );
    for (i, outcome, woba) in [
        (0, "1B", 0.870),
        (1, "1B", 0.870),
        (2, "OUT", 0.0),
        (3, "2B", 1.217),
        (4, "1B", 0.870),
        (5, "OUT", 0.0),
    ] {
        let _ = writeln!(csv, "g1,1,d001,{i},p1,bat,1,{},{outcome},L,R,1,{woba}", i + 1);
    }
    for (i, outcome, woba) in [
        (0, "OUT", 0.0),
        (1, "OUT", 0.0),
        (2, "1B", 0.870),
        (3, "OUT", 0.0),
    ] {
        let _ = writeln!(csv, "g2,2,d001,{i},p2,bat,1,{},{outcome},L,L,0,{woba}", i + 1);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("pa.csv");
    std::fs::write(&path, csv)?;
    let report = parse_plate_appearances(&path, None)?;
    println!(
        "parsed {} rows ({} skipped)",
        report.records.len(),
        report.skipped.len()
    );

    // Prior mean for season 2 = the batter's season-1 average wOBA.
    let priors = PriorMeans::from_history(&report.records, 2);
    println!("prior mean from season 1: {:.4}", priors.batters["bat"]);

    let season2: Vec<_> = report
        .records
        .iter()
        .filter(|pa| pa.season == 2)
        .cloned()
        .collect();
    let hp = QualityHyperparams::new(0.5, 0.05)?;
    let attached = attach_quality_covariates(&season2, &priors, &hp)?;

    println!("\nseason 2, plate appearance by plate appearance:");
    println!("{:>4} {:>8} {:>22} {:>10}", "pa", "outcome", "estimate before (logit)", "as wOBA");
    for (pa, cov) in season2.iter().zip(&attached.covariates) {
        println!(
            "{:>4} {:>8} {:>22.4} {:>10.4}",
            pa.pa_index,
            pa.outcome.code(),
            cov.x_batter,
            inv_logit(cov.x_batter)
        );
    }
    println!(
        "\nfinal posterior mean after season 2: {:.4}",
        attached.batter_states["bat"].theta_hat
    );
    Ok(())
}
