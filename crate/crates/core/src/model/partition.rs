use serde::{Deserialize, Serialize};

use super::CellSpace;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A partition A^(N) of the cell space into `m >= 2` nonempty blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    id: usize,
    name: String,
    labels: Vec<String>,
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl Partition {
    /// Builds a partition from blocks of cell indices over `n_cells` cells.
    pub fn new(
        id: usize,
        name: impl Into<String>,
        labels: Vec<String>,
        blocks: Vec<Vec<usize>>,
        n_cells: usize,
    ) -> Result<Self> {
        let name = name.into();
        if blocks.len() < 2 {
            return Err(Error::validation(format!(
                "partition '{name}' needs at least 2 blocks, got {}",
                blocks.len()
            )));
        }
        if labels.len() != blocks.len() {
            return Err(Error::validation(format!(
                "partition '{name}': {} labels for {} blocks",
                labels.len(),
                blocks.len()
            )));
        }
        let mut block_of = vec![usize::MAX; n_cells];
        for (j, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::validation(format!("partition '{name}' block {j} is empty")));
            }
            for &c in block {
                if c >= n_cells {
                    return Err(Error::validation(format!(
                        "partition '{name}' references cell {c} outside 0..{n_cells}"
                    )));
                }
                if block_of[c] != usize::MAX {
                    return Err(Error::validation(format!(
                        "partition '{name}' blocks overlap on cell {c}"
                    )));
                }
                block_of[c] = j;
            }
        }
        if let Some(c) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::validation(format!(
                "partition '{name}' does not cover cell {c}"
            )));
        }
        let blocks = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(Partition {
            id,
            name,
            labels,
            blocks,
            block_of,
        })
    }

    /// Builds a partition from blocks of cell identifiers of `space`.
    pub fn from_cell_ids<T: Scalar, S: AsRef<str>>(
        id: usize,
        name: impl Into<String>,
        space: &CellSpace<T>,
        blocks: &[Vec<S>],
    ) -> Result<Self> {
        let name = name.into();
        let mut idx_blocks = Vec::with_capacity(blocks.len());
        for block in blocks {
            let mut idx = Vec::with_capacity(block.len());
            for cell in block {
                let cell = cell.as_ref();
                idx.push(space.index_of(cell).ok_or_else(|| {
                    Error::validation(format!("partition '{name}': unknown cell '{cell}'"))
                })?);
            }
            idx_blocks.push(idx);
        }
        let labels = blocks
            .iter()
            .map(|b| b.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(","))
            .collect();
        Self::new(id, name, labels, idx_blocks, space.len())
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_cells(&self) -> usize {
        self.block_of.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, cell: usize) -> usize {
        self.block_of[cell]
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    /// Indicator vector of block `j` over the cells.
    pub fn indicator<T: Scalar>(&self, j: usize) -> Vec<T> {
        self.block_of
            .iter()
            .map(|&b| if b == j { T::one() } else { T::zero() })
            .collect()
    }

    pub fn block_totals<T: Scalar>(&self, mass: &[T]) -> Vec<T> {
        let mut totals = vec![T::zero(); self.m()];
        for (c, m) in mass.iter().enumerate() {
            let j = self.block_of[c];
            totals[j] = totals[j].clone() + m.clone();
        }
        totals
    }
}

/// Ordered partitions A^(1), ..., A^(N0) with the derived constants
/// p_(N0) (smallest block probability) and m_(N0) (largest block count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSequence<T> {
    partitions: Vec<Partition>,
    p_min: T,
    m_max: usize,
}

impl<T: Scalar> PartitionSequence<T> {
    pub fn new(space: &CellSpace<T>, partitions: Vec<Partition>) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::validation("partition sequence is empty"));
        }
        let mut p_min: Option<T> = None;
        let mut m_max = 0;
        for p in &partitions {
            if p.n_cells() != space.len() {
                return Err(Error::validation(format!(
                    "partition '{}' spans {} cells, space has {}",
                    p.name(),
                    p.n_cells(),
                    space.len()
                )));
            }
            m_max = m_max.max(p.m());
            for q in space.margins(p) {
                p_min = Some(match p_min {
                    Some(cur) if cur <= q => cur,
                    _ => q,
                });
            }
        }
        let p_min = p_min.expect("nonempty");
        if p_min <= T::zero() {
            return Err(Error::validation("a block has zero probability"));
        }
        Ok(PartitionSequence {
            partitions,
            p_min,
            m_max,
        })
    }

    /// Sequence whose block probabilities are given directly as margin
    /// vectors, for when only the auxiliary information is known.
    pub fn from_margins(partitions: Vec<Partition>, margins: &[Vec<T>]) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::validation("partition sequence is empty"));
        }
        if partitions.len() != margins.len() {
            return Err(Error::validation(format!(
                "{} partitions but {} margin vectors",
                partitions.len(),
                margins.len()
            )));
        }
        let n_cells = partitions[0].n_cells();
        let mut p_min: Option<T> = None;
        for (p, v) in partitions.iter().zip(margins) {
            if p.n_cells() != n_cells || v.len() != p.m() {
                return Err(Error::validation(format!(
                    "partition '{}' does not match its margin or the other partitions",
                    p.name()
                )));
            }
            for q in v {
                p_min = Some(match p_min {
                    Some(cur) if cur <= *q => cur,
                    _ => q.clone(),
                });
            }
        }
        let p_min = p_min.expect("nonempty");
        if p_min <= T::zero() {
            return Err(Error::validation("a block has zero margin"));
        }
        let m_max = partitions.iter().map(|p| p.m()).max().unwrap_or(0);
        Ok(PartitionSequence {
            partitions,
            p_min,
            m_max,
        })
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// p_(N0).
    pub fn p_min(&self) -> &T {
        &self.p_min
    }

    /// m_(N0).
    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// Partition visited at (1-based) stage `stage` with cyclic reuse.
    pub fn at_stage(&self, stage: usize) -> &Partition {
        &self.partitions[(stage - 1) % self.partitions.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> CellSpace<f64> {
        CellSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.2, 0.3, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn validates_blocks() {
        let s = space();
        assert!(Partition::from_cell_ids(1, "p", &s, &[vec!["a"], vec!["b", "c"]]).is_ok());
        // overlap
        assert!(Partition::from_cell_ids(1, "p", &s, &[vec!["a", "b"], vec!["b", "c"]]).is_err());
        // not covering
        assert!(Partition::from_cell_ids(1, "p", &s, &[vec!["a"], vec!["b"]]).is_err());
        // single block
        assert!(Partition::from_cell_ids(1, "p", &s, &[vec!["a", "b", "c"]]).is_err());
        // empty block
        let empty: Vec<&str> = vec![];
        assert!(Partition::from_cell_ids(1, "p", &s, &[vec!["a", "b", "c"], empty]).is_err());
    }

    #[test]
    fn sequence_constants() {
        let s = space();
        let p1 = Partition::from_cell_ids(1, "p1", &s, &[vec!["a"], vec!["b", "c"]]).unwrap();
        let p2 = Partition::from_cell_ids(2, "p2", &s, &[vec!["a"], vec!["b"], vec!["c"]]).unwrap();
        let seq = PartitionSequence::new(&s, vec![p1, p2]).unwrap();
        assert_eq!(*seq.p_min(), 0.2);
        assert_eq!(seq.m_max(), 3);
        assert_eq!(seq.at_stage(3).name(), "p1");
        let totals = s.margins(&seq.partitions()[0]);
        assert!((totals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
