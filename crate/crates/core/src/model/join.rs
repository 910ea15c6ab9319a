use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{CellSpace, LoadedSample, Partition, WeightedSample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A partition as written by a user: blocks of raw labels of one
/// categorical column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredPartition {
    pub name: String,
    pub column: String,
    pub blocks: Vec<Vec<String>>,
}

impl DeclaredPartition {
    pub fn new(name: &str, column: &str, blocks: &[&[&str]]) -> Self {
        DeclaredPartition {
            name: name.to_string(),
            column: column.to_string(),
            blocks: blocks
                .iter()
                .map(|b| b.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }
}

/// The atoms of the join of all declared partitions, with every partition
/// re-expressed over them.
#[derive(Clone, Debug)]
pub struct CellJoin {
    columns: Vec<String>,
    /// Per column: label -> atom index.
    atom_of: Vec<HashMap<String, usize>>,
    /// Per column: atom display names.
    atom_names: Vec<Vec<String>>,
    cells: Vec<String>,
    cell_index: HashMap<Vec<usize>, usize>,
    partitions: Vec<Partition>,
}

/// Joins declared partitions into their common cell space.
///
/// Within one column the atoms are the classes of labels that no partition
/// separates; across columns the cells are the product of the atoms. Cell
/// identifiers are the atom names joined by `|` in column order, and cells
/// are sorted lexicographically.
pub fn join_cells(declared: &[DeclaredPartition]) -> Result<CellJoin> {
    if declared.is_empty() {
        return Err(Error::validation("no partitions declared"));
    }
    let mut columns: Vec<String> = Vec::new();
    for d in declared {
        if !columns.contains(&d.column) {
            columns.push(d.column.clone());
        }
    }

    let mut atom_of = Vec::with_capacity(columns.len());
    let mut atom_names = Vec::with_capacity(columns.len());
    for column in &columns {
        let on_column: Vec<&DeclaredPartition> =
            declared.iter().filter(|d| &d.column == column).collect();
        let mut universe: Vec<String> = Vec::new();
        let mut block_maps: Vec<HashMap<&str, usize>> = Vec::new();
        for d in &on_column {
            let mut map = HashMap::new();
            for (j, block) in d.blocks.iter().enumerate() {
                if block.is_empty() {
                    return Err(Error::validation(format!(
                        "partition '{}' block {j} is empty",
                        d.name
                    )));
                }
                for label in block {
                    if map.insert(label.as_str(), j).is_some() {
                        return Err(Error::validation(format!(
                            "partition '{}' has overlapping blocks on label '{label}'",
                            d.name
                        )));
                    }
                    if !universe.contains(label) {
                        universe.push(label.clone());
                    }
                }
            }
            if d.blocks.len() < 2 {
                return Err(Error::validation(format!(
                    "partition '{}' needs at least 2 blocks",
                    d.name
                )));
            }
            block_maps.push(map);
        }
        for (d, map) in on_column.iter().zip(&block_maps) {
            if let Some(missing) = universe.iter().find(|l| !map.contains_key(l.as_str())) {
                return Err(Error::validation(format!(
                    "partition '{}' does not cover label '{missing}' of column '{column}'",
                    d.name
                )));
            }
        }
        // labels with identical block signatures form one atom
        let mut groups: Vec<(Vec<usize>, Vec<String>)> = Vec::new();
        for label in &universe {
            let sig: Vec<usize> = block_maps.iter().map(|m| m[label.as_str()]).collect();
            match groups.iter_mut().find(|(s, _)| *s == sig) {
                Some((_, labels)) => labels.push(label.clone()),
                None => groups.push((sig, vec![label.clone()])),
            }
        }
        let mut map = HashMap::new();
        let mut names = Vec::with_capacity(groups.len());
        for (a, (_, labels)) in groups.iter().enumerate() {
            for l in labels {
                map.insert(l.clone(), a);
            }
            names.push(labels.join("+"));
        }
        atom_of.push(map);
        atom_names.push(names);
    }

    // cartesian product of atoms, sorted by identifier
    let mut combos: Vec<Vec<usize>> = vec![vec![]];
    for names in &atom_names {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                (0..names.len()).map(move |a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    let mut keyed: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for combo in combos {
        let id = combo
            .iter()
            .zip(&atom_names)
            .map(|(&a, names)| names[a].as_str())
            .collect::<Vec<_>>()
            .join("|");
        keyed.insert(id, combo);
    }
    let cells: Vec<String> = keyed.keys().cloned().collect();
    let cell_index: HashMap<Vec<usize>, usize> = keyed
        .values()
        .enumerate()
        .map(|(i, combo)| (combo.clone(), i))
        .collect();
    let combos: Vec<&Vec<usize>> = keyed.values().collect();

    let mut partitions = Vec::with_capacity(declared.len());
    for (k, d) in declared.iter().enumerate() {
        let col = columns.iter().position(|c| c == &d.column).expect("known column");
        let mut blocks = vec![Vec::new(); d.blocks.len()];
        for (cell, combo) in combos.iter().enumerate() {
            let atom = combo[col];
            // every label of an atom sits in the same block
            let label = atom_names[col][atom].split('+').next().expect("nonempty atom");
            let j = d
                .blocks
                .iter()
                .position(|b| b.iter().any(|l| l == label))
                .expect("covered label");
            blocks[j].push(cell);
        }
        let labels = d.blocks.iter().map(|b| b.join("+")).collect();
        partitions.push(Partition::new(k + 1, d.name.clone(), labels, blocks, cells.len())?);
    }

    Ok(CellJoin {
        columns,
        atom_of,
        atom_names,
        cells,
        cell_index,
        partitions,
    })
}

impl CellJoin {
    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition_named(&self, name: &str) -> Option<&Partition> {
        self.partitions.iter().find(|p| p.name() == name)
    }

    /// Atom names of one column, in first-seen order.
    pub fn atoms(&self, column: usize) -> &[String] {
        &self.atom_names[column]
    }

    /// Cell index of an observation given its raw label per column.
    pub fn locate(&self, label_of_column: impl Fn(&str) -> Option<String>) -> Option<usize> {
        let mut combo = Vec::with_capacity(self.columns.len());
        for (col, name) in self.columns.iter().enumerate() {
            let label = label_of_column(name)?;
            combo.push(*self.atom_of[col].get(&label)?);
        }
        self.cell_index.get(&combo).copied()
    }

    /// Maps a loaded sample onto the joined cells (stage 0, weights 1/n).
    pub fn assign<T: Scalar>(&self, loaded: &LoadedSample<T>) -> Result<WeightedSample<T>> {
        let mut data = Vec::with_capacity(loaded.labels.len());
        for (i, (obs, labels)) in loaded
            .sample
            .observations()
            .iter()
            .zip(&loaded.labels)
            .enumerate()
        {
            let cell = self
                .locate(|col| {
                    loaded
                        .categories
                        .iter()
                        .position(|c| c == col)
                        .map(|k| labels[k].clone())
                })
                .ok_or_else(|| {
                    Error::validation(format!(
                        "observation {} with labels {:?} falls outside the declared partitions",
                        i + 1,
                        labels
                    ))
                })?;
            data.push((obs.value.clone(), cell));
        }
        WeightedSample::uniform(self.cells.clone(), data)
    }

    /// Builds the cell space from cell probabilities keyed by identifier.
    pub fn cell_space<T: Scalar>(&self, prob: &BTreeMap<String, T>) -> Result<CellSpace<T>> {
        for key in prob.keys() {
            if !self.cells.contains(key) {
                return Err(Error::validation(format!("unknown cell '{key}' in probabilities")));
            }
        }
        let mut values = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            values.push(
                prob.get(c)
                    .cloned()
                    .ok_or_else(|| Error::validation(format!("no probability for cell '{c}'")))?,
            );
        }
        CellSpace::new(self.cells.clone(), values)
    }
}
