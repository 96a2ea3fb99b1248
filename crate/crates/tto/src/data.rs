//! Plate-appearance table ingestion and filtering.
//!
//! The pipeline consumes a flat CSV of event-parsed plate appearances (one
//! row per completed batter-pitcher confrontation), validates rows, restricts
//! the analysis set to starting pitchers within their first three times
//! through the order, drops games where the starter exits before the third
//! time through, and summarizes pitcher exit timing as quantile-binned
//! histogram tables.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact input/output CSV header, in column order.
pub const CSV_HEADER: [&str; 13] = [
    "game_id",
    "season",
    "date",
    "pa_index",
    "pitcher_id",
    "batter_id",
    "is_starter",
    "t",
    "outcome",
    "bat_hand",
    "pit_hand",
    "home",
    "event_woba",
];

/// Batters faced per time through the order.
pub const LINEUP_SIZE: u8 = 9;
/// Last batter sequence number inside the third time through the order.
pub const MAX_T: u8 = 27;
/// First batter sequence number of the third time through the order.
pub const THIRD_TTO_START: u8 = 19;

/// Categorical plate-appearance outcome. `Out` is the reference category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Out,
    Walk,
    HitByPitch,
    Single,
    Double,
    Triple,
    HomeRun,
}

impl Outcome {
    pub const N: usize = 7;
    pub const ALL: [Outcome; 7] = [
        Outcome::Out,
        Outcome::Walk,
        Outcome::HitByPitch,
        Outcome::Single,
        Outcome::Double,
        Outcome::Triple,
        Outcome::HomeRun,
    ];
    /// Codes used by the CSV format and by parameter names, in index order.
    pub const CODES: [&'static str; 7] = ["OUT", "UBB", "HBP", "1B", "2B", "3B", "HR"];

    /// Zero-based index; the reference category `Out` is 0.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Outcome> {
        Outcome::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        Outcome::CODES[self.index()]
    }

    pub fn from_code(code: &str) -> Option<Outcome> {
        Outcome::CODES
            .iter()
            .position(|c| *c == code)
            .map(|i| Outcome::ALL[i])
    }

    pub fn is_out(self) -> bool {
        self == Outcome::Out
    }
}

/// Batter or pitcher handedness; `S` marks switch hitters, which the
/// analysis set excludes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hand {
    L,
    R,
    S,
}

impl Hand {
    pub fn code(self) -> &'static str {
        match self {
            Hand::L => "L",
            Hand::R => "R",
            Hand::S => "S",
        }
    }

    pub fn from_code(code: &str) -> Option<Hand> {
        match code {
            "L" => Some(Hand::L),
            "R" => Some(Hand::R),
            "S" => Some(Hand::S),
            _ => None,
        }
    }
}

/// One validated plate appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateAppearance {
    pub game_id: String,
    pub season: u16,
    /// Opaque date token; lexicographic order must match chronology.
    pub date: String,
    /// Within-season ordering index; combined with `date` it forms the
    /// monotone ordering token used by the running quality estimator.
    pub pa_index: u32,
    pub pitcher_id: String,
    pub batter_id: String,
    pub is_starter: bool,
    /// Batter sequence number: how many batters the pitcher has faced,
    /// counting this one.
    pub t: u8,
    pub outcome: Outcome,
    pub bat_hand: Hand,
    pub pit_hand: Hand,
    /// True when the batter's team is at home.
    pub home: bool,
    /// Realized wOBA weight of the event, on the 0-2 scale (points / 1000).
    pub event_woba: f64,
}

impl PlateAppearance {
    /// Ordering token for within-season chronology.
    pub fn order_key(&self) -> (u16, &str, u32) {
        (self.season, self.date.as_str(), self.pa_index)
    }

    /// Platoon indicator: 1 when batter and pitcher share handedness.
    pub fn hand_match(&self) -> bool {
        self.bat_hand == self.pit_hand
    }
}

/// All plate appearances one starting pitcher recorded in one game,
/// ordered by batter sequence number.
#[derive(Debug, Clone)]
pub struct GameRecord {
    pub game_id: String,
    pub pitcher_id: String,
    pub pas: Vec<PlateAppearance>,
    /// Last batter sequence number faced.
    pub t_max: u8,
}

/// A row rejected during parsing, with its 1-based CSV line number.
#[derive(Debug, Clone)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

/// Outcome of parsing one CSV file.
#[derive(Debug, Default)]
pub struct ParseReport {
    /// Valid records, sorted by `(season, date, pa_index)`.
    pub records: Vec<PlateAppearance>,
    pub skipped: Vec<SkippedRow>,
    /// Rows dropped by the optional season filter (not an error).
    pub season_filtered: usize,
    /// Total data rows read, valid or not.
    pub rows_read: usize,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("game {game_id}, pitcher {pitcher_id}: batter sequence number t={t} appears twice")]
    DuplicateT {
        game_id: String,
        pitcher_id: String,
        t: u8,
    },
    #[error("exit histogram needs at least one bin")]
    BadBinCount,
    #[error("exit histogram: {distinct} distinct bin values cannot fill {bins} quantile bins")]
    DegenerateBins { distinct: usize, bins: usize },
    #[error("no pitcher quality value supplied for game {game_id}, pitcher {pitcher_id}")]
    MissingQuality { game_id: String, pitcher_id: String },
    #[error("exit histogram: no games to bin")]
    EmptyGames,
}

fn io_err(path: &Path, source: io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> DataError {
    DataError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Parses a plate-appearance CSV. Malformed rows are skipped and reported,
/// not fatal; structural problems (missing file, wrong header) are errors.
///
/// `season_filter` is an inclusive year range; rows outside it are dropped
/// silently and counted in the report.
pub fn parse_plate_appearances(
    path: impl AsRef<Path>,
    season_filter: Option<(u16, u16)>,
) -> Result<ParseReport, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_HEADER {
        return Err(DataError::Header {
            expected: CSV_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut report = ParseReport::default();
    for row in reader.records() {
        let record = match row {
            Ok(r) => r,
            Err(e) => return Err(csv_err(path, e)),
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        report.rows_read += 1;
        match parse_row(&record) {
            Ok(pa) => {
                if let Some((lo, hi)) = season_filter {
                    if pa.season < lo || pa.season > hi {
                        report.season_filtered += 1;
                        continue;
                    }
                }
                report.records.push(pa);
            }
            Err(reason) => report.skipped.push(SkippedRow { line, reason }),
        }
    }
    report
        .records
        .sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    Ok(report)
}

fn parse_row(record: &csv::StringRecord) -> Result<PlateAppearance, String> {
    if record.len() != CSV_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            CSV_HEADER.len(),
            record.len()
        ));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();

    let game_id = field(0).to_string();
    if game_id.is_empty() {
        return Err("empty game_id".into());
    }
    let season: u16 = field(1)
        .parse()
        .map_err(|_| format!("bad season `{}`", field(1)))?;
    let date = field(2).to_string();
    let pa_index: u32 = field(3)
        .parse()
        .map_err(|_| format!("bad pa_index `{}`", field(3)))?;
    let pitcher_id = field(4).to_string();
    let batter_id = field(5).to_string();
    if pitcher_id.is_empty() || batter_id.is_empty() {
        return Err("empty player id".into());
    }
    let is_starter = parse_flag(field(6)).ok_or_else(|| format!("bad is_starter `{}`", field(6)))?;
    let t: u8 = field(7).parse().map_err(|_| format!("bad t `{}`", field(7)))?;
    if t == 0 {
        return Err("t must be >= 1".into());
    }
    // Starter rows outside the first three times through the order are
    // rejected here so every surviving starter row satisfies 1 <= t <= 27.
    if is_starter && t > MAX_T {
        return Err(format!("starter row with t={t} outside 1..={MAX_T}"));
    }
    let outcome =
        Outcome::from_code(field(8)).ok_or_else(|| format!("unknown outcome `{}`", field(8)))?;
    let bat_hand =
        Hand::from_code(field(9)).ok_or_else(|| format!("unknown bat_hand `{}`", field(9)))?;
    let pit_hand =
        Hand::from_code(field(10)).ok_or_else(|| format!("unknown pit_hand `{}`", field(10)))?;
    let home = parse_flag(field(11)).ok_or_else(|| format!("bad home `{}`", field(11)))?;
    let event_woba: f64 = field(12)
        .parse()
        .map_err(|_| format!("bad event_woba `{}`", field(12)))?;
    if !event_woba.is_finite() || event_woba < 0.0 {
        return Err(format!("event_woba {event_woba} not a finite non-negative value"));
    }

    Ok(PlateAppearance {
        game_id,
        season,
        date,
        pa_index,
        pitcher_id,
        batter_id,
        is_starter,
        t,
        outcome,
        bat_hand,
        pit_hand,
        home,
        event_woba,
    })
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Writes records in the exact input CSV schema, so that
/// parse -> serialize -> parse round-trips field values.
pub fn write_plate_appearances(
    path: impl AsRef<Path>,
    records: &[PlateAppearance],
) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(io::BufWriter::new(file));
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for pa in records {
        writer
            .write_record([
                pa.game_id.as_str(),
                &pa.season.to_string(),
                pa.date.as_str(),
                &pa.pa_index.to_string(),
                pa.pitcher_id.as_str(),
                pa.batter_id.as_str(),
                if pa.is_starter { "1" } else { "0" },
                &pa.t.to_string(),
                pa.outcome.code(),
                pa.bat_hand.code(),
                pa.pit_hand.code(),
                if pa.home { "1" } else { "0" },
                &pa.event_woba.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Restricts to the analysis set: starting-pitcher plate appearances within
/// the first three times through the order, with switch hitters removed.
pub fn filter_analysis_set(records: &[PlateAppearance]) -> Vec<PlateAppearance> {
    records
        .iter()
        .filter(|pa| {
            pa.is_starter
                && (1..=MAX_T).contains(&pa.t)
                && pa.bat_hand != Hand::S
                && pa.pit_hand != Hand::S
        })
        .cloned()
        .collect()
}

/// Groups plate appearances into per-(game, starting pitcher) records.
/// Output is ordered by `(game_id, pitcher_id)`; each game's plate
/// appearances are ordered by `t`, which must be unique within a game.
pub fn group_games(records: &[PlateAppearance]) -> Result<Vec<GameRecord>, DataError> {
    let mut by_game: BTreeMap<(String, String), Vec<PlateAppearance>> = BTreeMap::new();
    for pa in records {
        by_game
            .entry((pa.game_id.clone(), pa.pitcher_id.clone()))
            .or_default()
            .push(pa.clone());
    }
    let mut games = Vec::with_capacity(by_game.len());
    for ((game_id, pitcher_id), mut pas) in by_game {
        pas.sort_by_key(|pa| pa.t);
        for pair in pas.windows(2) {
            if pair[0].t == pair[1].t {
                return Err(DataError::DuplicateT {
                    game_id,
                    pitcher_id,
                    t: pair[0].t,
                });
            }
        }
        let t_max = pas.last().map(|pa| pa.t).unwrap_or(0);
        games.push(GameRecord {
            game_id,
            pitcher_id,
            pas,
            t_max,
        });
    }
    Ok(games)
}

/// Summary of the selection-bias truncation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationSummary {
    pub games_before: usize,
    pub games_kept: usize,
    pub fraction_removed: f64,
}

/// Drops whole games in which the starter exits before the third time
/// through the order (t_max < 19). Retained games are untouched.
pub fn truncate_selection_bias(games: Vec<GameRecord>) -> (Vec<GameRecord>, TruncationSummary) {
    let games_before = games.len();
    let kept: Vec<GameRecord> = games
        .into_iter()
        .filter(|g| g.t_max >= THIRD_TTO_START)
        .collect();
    let summary = TruncationSummary {
        games_before,
        games_kept: kept.len(),
        fraction_removed: if games_before == 0 {
            0.0
        } else {
            (games_before - kept.len()) as f64 / games_before as f64
        },
    };
    (kept, summary)
}

/// Per-game binning variable for the exit histogram.
pub enum ExitBinBy<'a> {
    /// Mean realized event wOBA over the game's plate appearances.
    MeanGameWoba,
    /// Externally supplied pitcher quality, keyed by (game_id, pitcher_id).
    PitcherQuality(&'a BTreeMap<(String, String), f64>),
}

/// Mean realized event wOBA of one game.
pub fn mean_game_woba(game: &GameRecord) -> f64 {
    if game.pas.is_empty() {
        return 0.0;
    }
    game.pas.iter().map(|pa| pa.event_woba).sum::<f64>() / game.pas.len() as f64
}

/// One quantile bin of games with exit-time counts.
#[derive(Debug, Clone)]
pub struct ExitBin {
    pub label: String,
    /// Smallest and largest bin-variable values falling in this bin.
    pub lo: f64,
    pub hi: f64,
    /// Count of games by last batter sequence number faced.
    pub counts: BTreeMap<u8, usize>,
}

/// Histogram of pitcher exit times, split into evenly sized quantile bins
/// of a per-game variable.
#[derive(Debug, Clone)]
pub struct ExitHistogram {
    pub bins: Vec<ExitBin>,
}

impl ExitHistogram {
    /// Emits `bin_label,t_exit,count` rows.
    pub fn write_csv(&self, out: impl io::Write) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["bin_label", "t_exit", "count"])?;
        for bin in &self.bins {
            for (t_exit, count) in &bin.counts {
                writer.write_record([
                    bin.label.as_str(),
                    &t_exit.to_string(),
                    &count.to_string(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Bins games into `n_bins` evenly sized quantile groups of the binning
/// variable (ties broken by input order) and tabulates exit times per bin.
pub fn exit_histogram(
    games: &[GameRecord],
    bin_by: ExitBinBy<'_>,
    n_bins: usize,
) -> Result<ExitHistogram, DataError> {
    if n_bins < 1 {
        return Err(DataError::BadBinCount);
    }
    if games.is_empty() {
        return Err(DataError::EmptyGames);
    }
    let mut values = Vec::with_capacity(games.len());
    for game in games {
        let v = match &bin_by {
            ExitBinBy::MeanGameWoba => mean_game_woba(game),
            ExitBinBy::PitcherQuality(map) => *map
                .get(&(game.game_id.clone(), game.pitcher_id.clone()))
                .ok_or_else(|| DataError::MissingQuality {
                    game_id: game.game_id.clone(),
                    pitcher_id: game.pitcher_id.clone(),
                })?,
        };
        values.push(v);
    }
    let mut distinct: Vec<f64> = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(DataError::DegenerateBins {
            distinct: distinct.len(),
            bins: n_bins,
        });
    }

    // Rank games by (value, input order); split ranks into n_bins contiguous
    // chunks whose sizes differ by at most one.
    let mut order: Vec<usize> = (0..games.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let base = games.len() / n_bins;
    let extra = games.len() % n_bins;

    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0usize;
    for b in 0..n_bins {
        let size = base + usize::from(b < extra);
        let chunk = &order[start..start + size];
        start += size;
        let lo = values[chunk[0]];
        let hi = values[*chunk.last().expect("chunk sizes are positive")];
        let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
        for &gi in chunk {
            *counts.entry(games[gi].t_max).or_insert(0) += 1;
        }
        bins.push(ExitBin {
            label: format!("q{}", b + 1),
            lo,
            hi,
            counts,
        });
    }
    Ok(ExitHistogram { bins })
}
