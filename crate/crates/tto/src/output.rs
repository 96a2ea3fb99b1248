//! Draw and diagnostic artifact serialization.
//!
//! Draw matrices are stored as CSV with one column per parameter plus
//! `chain` and `iter` indices, using shortest round-trip float formatting so
//! a write/read cycle reproduces every draw bit for bit. Diagnostics travel
//! in a JSON sidecar that carries no wall-clock fields, so identical runs
//! produce byte-identical files; timing belongs in run logs.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{ParamDiagnostics, PosteriorDraws, SampleStats};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed draws file: {0}")]
    Shape(String),
}

/// Writes `<parameters...>,chain,iter` rows, chain-major.
pub fn write_draws_csv(draws: &PosteriorDraws, out: impl io::Write) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = draws.param_names.iter().map(String::as_str).collect();
    header.push("chain");
    header.push("iter");
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for chain in 0..draws.n_chains {
        for iter in 0..draws.n_kept {
            record.clear();
            for p in 0..draws.dim() {
                record.push(draws.value(chain, iter, p).to_string());
            }
            record.push(chain.to_string());
            record.push(iter.to_string());
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(|e| OutputError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

/// Reads a draws CSV back into memory, recomputing diagnostics from the
/// draws themselves. Sampler statistics are not stored in the CSV, so
/// `stats` is defaulted.
pub fn read_draws_csv(path: impl AsRef<Path>) -> Result<PosteriorDraws, OutputError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| OutputError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[cols.len() - 2..] != ["chain", "iter"] {
        return Err(OutputError::Shape(
            "expected parameter columns followed by `chain,iter`".into(),
        ));
    }
    let dim = cols.len() - 2;
    let param_names: Vec<String> = cols[..dim].iter().map(|s| s.to_string()).collect();

    // (chain, iter) -> draw vector; validated rectangular afterwards.
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |reason: String| OutputError::Shape(format!("row {}: {}", i + 2, reason));
        if row.len() != cols.len() {
            return Err(bad(format!("expected {} fields, got {}", cols.len(), row.len())));
        }
        let parse_idx = |field: &str, what: &str| {
            field
                .parse::<usize>()
                .map_err(|_| bad(format!("bad {what} index `{field}`")))
        };
        let chain = parse_idx(&row[dim], "chain")?;
        let iter = parse_idx(&row[dim + 1], "iter")?;
        let mut values = Vec::with_capacity(dim);
        for p in 0..dim {
            let v: f64 = row[p]
                .parse()
                .map_err(|_| bad(format!("bad value `{}` in column {}", &row[p], cols[p])))?;
            values.push(v);
        }
        if cells.insert((chain, iter), values).is_some() {
            return Err(bad(format!("duplicate draw ({chain}, {iter})")));
        }
    }
    if cells.is_empty() {
        return Err(OutputError::Shape("no draws".into()));
    }
    let n_chains = cells.keys().map(|(c, _)| c + 1).max().unwrap();
    let n_kept = cells.keys().map(|(_, i)| i + 1).max().unwrap();
    if cells.len() != n_chains * n_kept {
        return Err(OutputError::Shape(format!(
            "expected {} draws for {} chains x {} iterations, got {}",
            n_chains * n_kept,
            n_chains,
            n_kept,
            cells.len()
        )));
    }
    let mut draws = Vec::with_capacity(n_chains * n_kept * dim);
    for (_, values) in cells {
        draws.extend(values);
    }
    let mut result = PosteriorDraws {
        param_names,
        n_chains,
        n_kept,
        draws,
        diagnostics: BTreeMap::new(),
        stats: SampleStats::default(),
    };
    result.diagnostics = result.compute_diagnostics();
    Ok(result)
}

/// On-disk diagnostics sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub params: BTreeMap<String, ParamDiagnostics>,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub step_sizes: Vec<f64>,
    pub mean_accept: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DiagnosticsFile {
    pub fn from_draws(draws: &PosteriorDraws) -> Self {
        Self {
            params: draws.diagnostics.clone(),
            divergences: draws.stats.divergences,
            max_depth_hits: draws.stats.max_depth_hits,
            step_sizes: draws.stats.step_sizes.clone(),
            mean_accept: draws.stats.mean_accept.clone(),
            warnings: draws.stats.warnings.clone(),
        }
    }
}

pub fn write_diagnostics_json(
    draws: &PosteriorDraws,
    out: impl io::Write,
) -> Result<(), OutputError> {
    let file = DiagnosticsFile::from_draws(draws);
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn read_diagnostics_json(path: impl AsRef<Path>) -> Result<DiagnosticsFile, OutputError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_reader(io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_draws() -> PosteriorDraws {
        let values = [
            // chain 0
            [0.1, 1.0 / 3.0],
            [0.2, 2.0 / 7.0],
            [-0.3, 0.5],
            [0.4, -0.125],
            [-0.05, 0.75],
            [0.22, -2.0 / 3.0],
            // chain 1
            [0.15, 0.25],
            [0.05, -1.0 / 9.0],
            [0.0, 1e-17],
            [-0.2, 0.6],
            [0.3, -0.4],
            [0.12, 0.05],
        ];
        let mut result = PosteriorDraws {
            param_names: vec!["alpha".into(), "beta".into()],
            n_chains: 2,
            n_kept: 6,
            draws: values.iter().flatten().copied().collect(),
            diagnostics: BTreeMap::new(),
            stats: SampleStats {
                divergences: 1,
                max_depth_hits: 0,
                step_sizes: vec![0.8, 0.9],
                mean_accept: vec![0.91, 0.87],
                warnings: vec![],
                runtime_s: 1.5,
                leapfrogs: 42,
            },
        };
        result.diagnostics = result.compute_diagnostics();
        result
    }

    #[test]
    fn draws_round_trip_bitwise() {
        let draws = small_draws();
        let mut buf = Vec::new();
        write_draws_csv(&draws, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("alpha,beta,chain,iter\n"));
        assert_eq!(text.lines().count(), 13);

        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &buf).unwrap();
        let back = read_draws_csv(tmp.path()).unwrap();
        assert_eq!(back.param_names, draws.param_names);
        assert_eq!(back.n_chains, 2);
        assert_eq!(back.n_kept, 6);
        for (a, b) in back.draws.iter().zip(&draws.draws) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.diagnostics.len(), 2);
    }

    #[test]
    fn diagnostics_json_round_trip() {
        let draws = small_draws();
        let mut buf = Vec::new();
        write_diagnostics_json(&draws, &mut buf).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(tmp.path(), &buf).unwrap();
        let back = read_diagnostics_json(tmp.path()).unwrap();
        assert_eq!(back, DiagnosticsFile::from_draws(&draws));
        assert_eq!(back.divergences, 1);
        assert!(back.params.contains_key("alpha"));

        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        // No wall-clock fields: identical runs must serialize identically.
        assert!(value.get("runtime_s").is_none());
        assert!(value["params"]["beta"].get("rhat").is_some());
    }

    #[test]
    fn malformed_draws_files_are_rejected() {
        let cases = [
            ("alpha,beta\n0.1,0.2\n", "missing chain/iter"),
            ("alpha,chain,iter\n0.1,0,0\n0.2,0,2\n", "ragged grid"),
            ("alpha,chain,iter\nx,0,0\n", "bad float"),
            ("alpha,chain,iter\n0.1,0,0\n0.2,0,0\n", "duplicate"),
            ("alpha,chain,iter\n", "empty"),
        ];
        for (content, label) in cases {
            let tmp = tempfile::NamedTempFile::new().unwrap();
            std::fs::write(tmp.path(), content).unwrap();
            assert!(read_draws_csv(tmp.path()).is_err(), "{label} should fail");
        }
    }
}
