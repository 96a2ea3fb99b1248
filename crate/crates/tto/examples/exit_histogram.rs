//! Starter exit patterns by pitcher quality: the case for truncation.
//!
//! Synthesizes a season where weaker starters tend to be pulled earlier,
//! bins games into quality sextiles, and prints each bin's distribution of
//! exit sequence numbers. Weak-bin games piling up at low exits while
//! strong bins reach 27 is exactly the selection bias that motivates
//! dropping games whose starter left before the third pass.
//!
//! Run with `cargo run --example exit_histogram`.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tto::data::{exit_histogram, group_games, ExitBinBy, Hand, Outcome, PlateAppearance};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pas = Vec::new();
    let mut quality: BTreeMap<(String, String), f64> = BTreeMap::new();

    for g in 0..300 {
        let game_id = format!("g{g:04}");
        let pitcher_id = format!("p{g:04}");
        // Latent quality in expected-wOBA-against terms; lower is better.
        let q: f64 = rng.gen_range(0.250..0.380);
        quality.insert((game_id.clone(), pitcher_id.clone()), q);
        // Better pitchers last longer; everything is noisy.
        let lean = 27.0 - 55.0 * (q - 0.250);
        let t_exit = (lean + rng.gen_range(-6.0..6.0)).round().clamp(6.0, 27.0) as u8;
        for t in 1..=t_exit {
            pas.push(PlateAppearance {
                game_id: game_id.clone(),
                season: 1,
                date: format!("d{g:04}"),
                pa_index: u32::from(t) - 1,
                pitcher_id: pitcher_id.clone(),
                batter_id: format!("b{:02}", (t - 1) % 9),
                is_starter: true,
                t,
                outcome: Outcome::Out,
                bat_hand: Hand::R,
                pit_hand: Hand::R,
                home: false,
                event_woba: 0.0,
            });
        }
    }

    let games = group_games(&pas)?;
    let hist = exit_histogram(&games, ExitBinBy::PitcherQuality(&quality), 6)?;

    println!("exit sequence number counts by quality sextile (bin 1 = best):");
    for bin in &hist.bins {
        let total: usize = bin.counts.values().sum();
        let early: usize = bin
            .counts
            .iter()
            .filter(|(t, _)| **t < 19)
            .map(|(_, c)| *c)
            .sum();
        let full: usize = bin.counts.get(&27).copied().unwrap_or(0);
        println!(
            "{:>6}: {:>3} games, {:>5.1}% exit before the third pass, {:>5.1}% finish all 27",
            bin.label,
            total,
            100.0 * early as f64 / total as f64,
            100.0 * full as f64 / total as f64
        );
    }
    Ok(())
}
