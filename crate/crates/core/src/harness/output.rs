use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::simulate::Simulation;
use crate::error::Result;

/// FNV-1a (64 bit) of the compact JSON encoding of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

/// Describes one run and the files it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new<S: Serialize>(command: &str, seed: u64, config: &S) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            outputs: Vec::new(),
        })
    }
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct AlphaRow<'a> {
    n: u64,
    n_source: String,
    stage: usize,
    f_id: &'a str,
    replicate: usize,
    alpha: f64,
    alpha_learned: f64,
}

/// One line of `deviation.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub n: u64,
    pub n_source: String,
    pub replicate: usize,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub sup_deviation: f64,
}

pub fn read_deviation_csv(path: impl AsRef<Path>) -> Result<Vec<DeviationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct ExcludedRow {
    n: u64,
    n_source: String,
    excluded: usize,
}

/// Writes `alpha.csv`, `deviation.csv` and `excluded.csv` into `dir`.
pub fn write_simulation(dir: impl AsRef<Path>, sim: &Simulation) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let alpha_path = dir.join("alpha.csv");
    let mut w = csv::Writer::from_path(&alpha_path)?;
    for r in &sim.records {
        for (stage, (a, b)) in r.alpha.iter().zip(&r.alpha_learned).enumerate() {
            for (k, f_id) in sim.functions.iter().enumerate() {
                w.serialize(AlphaRow {
                    n: r.n,
                    n_source: r.source_size.to_string(),
                    stage,
                    f_id,
                    replicate: r.replicate,
                    alpha: a[k],
                    alpha_learned: b[k],
                })?;
            }
        }
    }
    w.flush()?;

    let dev_path = dir.join("deviation.csv");
    let mut w = csv::Writer::from_path(&dev_path)?;
    for r in &sim.records {
        w.serialize(DeviationRow {
            n: r.n,
            n_source: r.source_size.to_string(),
            replicate: r.replicate,
            lambda: r.lambda,
            lambda_prime: r.lambda_prime,
            sup_deviation: r.sup_deviation,
        })?;
    }
    w.flush()?;

    let excl_path = dir.join("excluded.csv");
    let mut w = csv::Writer::from_path(&excl_path)?;
    for e in &sim.excluded {
        w.serialize(ExcludedRow {
            n: e.n,
            n_source: e.source_size.to_string(),
            excluded: e.count,
        })?;
    }
    w.flush()?;
    Ok(vec![alpha_path, dev_path, excl_path])
}
