use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which CSV columns hold the numeric response and the category labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSchema {
    pub value: String,
    pub categories: Vec<String>,
}

impl SampleSchema {
    pub fn new(value: impl Into<String>, categories: &[&str]) -> Self {
        SampleSchema {
            value: value.into(),
            categories: categories.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub value: T,
    /// Index into the owning sample's cell list.
    pub cell: usize,
    pub weight: T,
}

/// Observations with per-individual weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample<T> {
    cells: Vec<String>,
    observations: Vec<Observation<T>>,
    stage: usize,
}

impl<T: Scalar> WeightedSample<T> {
    /// Stage-0 sample: every weight is exactly `1/n`.
    pub fn uniform(cells: Vec<String>, data: Vec<(T, usize)>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::validation("sample has no observations"));
        }
        let n = data.len() as u64;
        let w = T::from_ratio(1, n);
        let mut observations = Vec::with_capacity(data.len());
        for (value, cell) in data {
            if cell >= cells.len() {
                return Err(Error::validation(format!("observation cell {cell} out of range")));
            }
            observations.push(Observation {
                value,
                cell,
                weight: w.clone(),
            });
        }
        Ok(WeightedSample {
            cells,
            observations,
            stage: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cells.len()];
        for o in &self.observations {
            counts[o.cell] += 1;
        }
        counts
    }

    pub fn total_weight(&self) -> T {
        self.observations
            .iter()
            .fold(T::zero(), |acc, o| acc + o.weight.clone())
    }

    /// Weighted mean of the observation values.
    pub fn weighted_mean(&self) -> T {
        self.observations
            .iter()
            .fold(T::zero(), |acc, o| acc + o.weight.clone() * o.value.clone())
    }

    /// Returns a copy with new weights and stage; used by the raking engine.
    pub(crate) fn reweighted(&self, weights: Vec<T>, stage: usize) -> Self {
        let observations = self
            .observations
            .iter()
            .zip(weights)
            .map(|(o, weight)| Observation {
                value: o.value.clone(),
                cell: o.cell,
                weight,
            })
            .collect();
        WeightedSample {
            cells: self.cells.clone(),
            observations,
            stage,
        }
    }
}

/// A parsed sample file: the stage-0 sample over its observed cells plus the
/// raw labels needed to map observations onto a joined cell space.
#[derive(Clone, Debug)]
pub struct LoadedSample<T> {
    pub sample: WeightedSample<T>,
    pub categories: Vec<String>,
    /// Raw category labels per observation, in `categories` order.
    pub labels: Vec<Vec<String>>,
    /// Empirical counts of `sample.cells()`.
    pub counts: Vec<usize>,
}

pub fn load_sample<T: Scalar>(path: impl AsRef<Path>, schema: &SampleSchema) -> Result<LoadedSample<T>> {
    let file = std::fs::File::open(path)?;
    read_sample(file, schema)
}

pub fn read_sample<T: Scalar, R: Read>(reader: R, schema: &SampleSchema) -> Result<LoadedSample<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column '{name}'"),
            })
    };
    let value_col = column(&schema.value)?;
    let cat_cols = schema
        .categories
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<(T, Vec<String>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = record.get(value_col).ok_or_else(|| Error::Parse {
            line,
            message: "missing value field".into(),
        })?;
        let value = T::from_decimal(field).ok_or_else(|| Error::Parse {
            line,
            message: format!("value '{field}' is not numeric"),
        })?;
        let mut labels = Vec::with_capacity(cat_cols.len());
        for (&c, name) in cat_cols.iter().zip(&schema.categories) {
            match record.get(c) {
                Some(l) if !l.is_empty() => labels.push(l.to_string()),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("missing label for column '{name}'"),
                    })
                }
            }
        }
        raw.push((value, labels));
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "sample file has no data rows".into(),
        });
    }

    let mut index: BTreeMap<String, usize> = raw.iter().map(|(_, l)| (l.join("|"), 0)).collect();
    for (i, v) in index.values_mut().enumerate() {
        *v = i;
    }
    let cells: Vec<String> = index.keys().cloned().collect();
    let mut labels = Vec::with_capacity(raw.len());
    let mut data = Vec::with_capacity(raw.len());
    for (value, l) in raw {
        data.push((value, index[&l.join("|")]));
        labels.push(l);
    }
    let sample = WeightedSample::uniform(cells, data)?;
    let counts = sample.cell_counts();
    Ok(LoadedSample {
        sample,
        categories: schema.categories.clone(),
        labels,
        counts,
    })
}
