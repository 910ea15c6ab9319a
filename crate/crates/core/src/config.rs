//! Human-editable model files (TOML).
//!
//! ```toml
//! [[partition]]
//! name = "A"
//! blocks = [["1"], ["2"], ["3"]]
//! margin = [0.45, 0.35, 0.2]
//!
//! [[partition]]
//! name = "B"
//! blocks = [["1"], ["2"]]
//! counts = [5512, 4488]          # learned from a source of size 10000
//!
//! [raking]
//! order = ["A", "B"]
//! to_stability = true
//! ```
//!
//! Optional sections: `[truth]` (cell probabilities keyed by cell id),
//! `[[function]]` (name and `values` keyed by cell id), `[experiment]`
//! for `simulate` and `[test]` for `mc-power`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::auxinfo::AuxSource;
use crate::error::{Error, Result};
use crate::model::{join_cells, CellJoin, CellSpace, DeclaredPartition, FunctionOnCells, Partition, PartitionSequence};
use crate::stattests::DofConvention;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "partition")]
    pub partitions: Vec<PartitionEntry>,
    #[serde(default)]
    pub raking: RakingSettings,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub truth: BTreeMap<String, f64>,
    #[serde(default, rename = "function", skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestSettings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionEntry {
    pub name: String,
    /// Categorical column the blocks refer to; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub blocks: Vec<Vec<String>>,
    /// Exact margin P[A^(N)].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<Vec<f64>>,
    /// Block counts of a learned source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
    /// n_N, checked against the counts when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_size: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RakingSettings {
    /// Partition names in visiting order; declaration order when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
    pub cycles: usize,
    pub to_stability: bool,
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for RakingSettings {
    fn default() -> Self {
        RakingSettings {
            order: None,
            cycles: 1,
            to_stability: false,
            tol: 1e-10,
            max_cycles: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionEntry {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

/// Size of an auxiliary source; `Exact` stands for n_N = ∞.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceSize {
    Finite(u64),
    Exact,
}

impl fmt::Display for SourceSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSize::Finite(n) => write!(f, "{n}"),
            SourceSize::Exact => write!(f, "exact"),
        }
    }
}

impl std::str::FromStr for SourceSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "inf" => Ok(SourceSize::Exact),
            _ => s
                .parse::<u64>()
                .ok()
                .filter(|&n| n > 0)
                .map(SourceSize::Finite)
                .ok_or_else(|| Error::validation(format!("source size '{s}' is not a positive integer or 'exact'"))),
        }
    }
}

impl Serialize for SourceSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SourceSize::Finite(n) => s.serialize_u64(*n),
            SourceSize::Exact => s.serialize_str("exact"),
        }
    }
}

impl<'de> Deserialize<'de> for SourceSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("source size must be positive")),
            Raw::Int(n) => Ok(SourceSize::Finite(n)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_source_sizes() -> Vec<SourceSize> {
    vec![SourceSize::Exact]
}

fn default_replicates() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Primary sample sizes.
    pub n: Vec<u64>,
    #[serde(default = "default_source_sizes")]
    pub source_sizes: Vec<SourceSize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Ratio steps N0; one pass over the order when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSettings {
    /// Name of the partition tested by the chi-square test.
    pub partition: String,
    /// P0 margin of the tested partition.
    pub p0: Vec<f64>,
    /// Function for the Z-test and its null mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0_f: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub n: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_size: Option<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dof: DofConvention,
}

/// A validated model: joined cells, raking order, margins and functions.
#[derive(Clone, Debug)]
pub struct Model {
    pub join: CellJoin,
    /// Partitions in visiting order.
    pub order: Vec<Partition>,
    /// One source per entry of `order`.
    pub sources: Vec<AuxSource<f64>>,
    pub truth: Option<CellSpace<f64>>,
    pub functions: Vec<FunctionOnCells<f64>>,
    pub raking: RakingSettings,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("cannot serialize config: {e}")))
    }

    pub fn build(&self) -> Result<Model> {
        if self.raking.max_cycles == 0 || !(self.raking.tol > 0.0) {
            return Err(Error::validation("raking needs tol > 0 and max_cycles >= 1"));
        }
        let declared: Vec<DeclaredPartition> = self
            .partitions
            .iter()
            .map(|p| DeclaredPartition {
                name: p.name.clone(),
                column: p.column.clone().unwrap_or_else(|| p.name.clone()),
                blocks: p.blocks.clone(),
            })
            .collect();
        let join = join_cells(&declared)?;
        let truth = if self.truth.is_empty() {
            None
        } else {
            Some(join.cell_space(&self.truth)?)
        };

        let names: Vec<String> = match &self.raking.order {
            Some(order) => order.clone(),
            None => self.partitions.iter().map(|p| p.name.clone()).collect(),
        };
        if names.is_empty() {
            return Err(Error::validation("raking order is empty"));
        }
        let mut order = Vec::with_capacity(names.len());
        let mut sources = Vec::with_capacity(names.len());
        for name in &names {
            let entry = self
                .partitions
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::validation(format!("raking order names unknown partition '{name}'")))?;
            let partition = join.partition_named(name).expect("joined").clone();
            sources.push(source_of(entry, &partition, truth.as_ref())?);
            order.push(partition);
        }

        let mut functions = Vec::with_capacity(self.functions.len());
        for f in &self.functions {
            let values: BTreeMap<String, f64> = f.values.clone();
            functions.push(function_on(&join, &f.name, &values)?);
        }
        Ok(Model {
            join,
            order,
            sources,
            truth,
            functions,
            raking: self.raking.clone(),
        })
    }
}

fn source_of(entry: &PartitionEntry, partition: &Partition, truth: Option<&CellSpace<f64>>) -> Result<AuxSource<f64>> {
    let name = &entry.name;
    let check_len = |len: usize| {
        if len == partition.m() {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "partition '{name}' has {} blocks but {len} margin entries",
                partition.m()
            )))
        }
    };
    match (&entry.margin, &entry.counts) {
        (Some(_), Some(_)) => Err(Error::validation(format!(
            "partition '{name}' gives both an exact margin and learned counts"
        ))),
        (Some(margin), None) => {
            check_len(margin.len())?;
            AuxSource::exact(partition.id(), margin.clone())
        }
        (None, Some(counts)) => {
            check_len(counts.len())?;
            let source = AuxSource::learned(partition.id(), counts.clone())?;
            if let Some(size) = entry.source_size {
                if source.source_size() != Some(size) {
                    return Err(Error::validation(format!(
                        "partition '{name}': counts sum to {} but source_size is {size}",
                        source.source_size().unwrap_or(0)
                    )));
                }
            }
            Ok(source)
        }
        (None, None) => match truth {
            Some(space) => AuxSource::exact(partition.id(), space.margins(partition)),
            None => Err(Error::validation(format!(
                "partition '{name}' needs a margin, learned counts or a [truth] table"
            ))),
        },
    }
}

fn function_on(join: &CellJoin, name: &str, values: &BTreeMap<String, f64>) -> Result<FunctionOnCells<f64>> {
    let mut out = Vec::with_capacity(join.cells().len());
    for key in values.keys() {
        if !join.cells().contains(key) {
            return Err(Error::validation(format!("function '{name}': unknown cell '{key}'")));
        }
    }
    for c in join.cells() {
        out.push(
            *values
                .get(c)
                .ok_or_else(|| Error::validation(format!("function '{name}' has no value for cell '{c}'")))?,
        );
    }
    FunctionOnCells::new(name, out)
}

impl Model {
    pub fn margins(&self) -> Vec<Vec<f64>> {
        self.sources.iter().map(|s| s.margin()).collect()
    }

    /// The raking sequence, with p_(N0) from the truth when known and from
    /// the margins otherwise.
    pub fn sequence(&self) -> Result<PartitionSequence<f64>> {
        match &self.truth {
            Some(space) => PartitionSequence::new(space, self.order.clone()),
            None => PartitionSequence::from_margins(self.order.clone(), &self.margins()),
        }
    }

    pub fn truth(&self) -> Result<&CellSpace<f64>> {
        self.truth
            .as_ref()
            .ok_or_else(|| Error::validation("this command needs a [truth] table"))
    }

    pub fn function(&self, name: &str) -> Result<&FunctionOnCells<f64>> {
        self.functions
            .iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::validation(format!("unknown function '{name}'")))
    }

    pub fn partition(&self, name: &str) -> Result<&Partition> {
        self.join
            .partition_named(name)
            .ok_or_else(|| Error::validation(format!("unknown partition '{name}'")))
    }
}
