use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{FunctionOnCells, Partition, EXACT_TOL};
use crate::error::{Error, Result};
use crate::scalar::{sum, Scalar};

/// The atoms generated by all partitions, with their true probabilities.
///
/// Cells are kept in lexicographic order of their identifiers so matrix
/// layouts are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpace<T> {
    cells: Vec<String>,
    prob: Vec<T>,
}

impl<T: Scalar> CellSpace<T> {
    pub fn new(cells: Vec<String>, prob: Vec<T>) -> Result<Self> {
        Self::with_tolerance(cells, prob, EXACT_TOL)
    }

    pub fn with_tolerance(cells: Vec<String>, prob: Vec<T>, tol: f64) -> Result<Self> {
        if cells.len() != prob.len() {
            return Err(Error::validation(format!(
                "{} cells but {} probabilities",
                cells.len(),
                prob.len()
            )));
        }
        if cells.is_empty() {
            return Err(Error::validation("cell space is empty"));
        }
        let mut pairs: Vec<(String, T)> = cells.into_iter().zip(prob).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::validation(format!("duplicate cell '{}'", w[0].0)));
            }
        }
        for (id, p) in &pairs {
            if *p <= T::zero() {
                return Err(Error::validation(format!(
                    "cell '{id}' has non-positive probability {p:?}"
                )));
            }
        }
        let (cells, prob): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let total = sum(&prob);
        if !total.within(&T::one(), tol) {
            return Err(Error::validation(format!(
                "cell probabilities sum to {total:?}, not 1"
            )));
        }
        Ok(CellSpace { cells, prob })
    }

    pub fn from_map(map: BTreeMap<String, T>) -> Result<Self> {
        let (cells, prob) = map.into_iter().unzip();
        Self::new(cells, prob)
    }

    /// Re-runs construction checks; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.cells.clone(), self.prob.clone()).map(|_| ())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    pub fn prob(&self) -> &[T] {
        &self.prob
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.cells.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    pub fn index_map(&self) -> HashMap<&str, usize> {
        self.cells.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
    }

    /// P(f).
    pub fn expectation(&self, f: &FunctionOnCells<T>) -> T {
        self.prob
            .iter()
            .zip(f.values())
            .fold(T::zero(), |acc, (p, v)| acc + p.clone() * v.clone())
    }

    /// Var(f(X)) under the cell law.
    pub fn variance(&self, f: &FunctionOnCells<T>) -> T {
        let mean = self.expectation(f);
        self.prob.iter().zip(f.values()).fold(T::zero(), |acc, (p, v)| {
            let d = v.clone() - mean.clone();
            acc + p.clone() * d.clone() * d
        })
    }

    /// Block probabilities P[A^(N)].
    pub fn margins(&self, partition: &Partition) -> Vec<T> {
        partition.block_totals(&self.prob)
    }

    /// E[f | A_j] for every block of the partition.
    pub fn conditional_means(&self, f: &FunctionOnCells<T>, partition: &Partition) -> Vec<T> {
        partition
            .blocks()
            .iter()
            .map(|block| {
                let (mass, weighted) = block.iter().fold((T::zero(), T::zero()), |(m, w), &c| {
                    (
                        m + self.prob[c].clone(),
                        w + self.prob[c].clone() * f.values()[c].clone(),
                    )
                });
                weighted / mass
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cells_are_sorted_with_probabilities() {
        let cs = CellSpace::new(ids(&["b", "a", "c"]), vec![0.5, 0.2, 0.3]).unwrap();
        assert_eq!(cs.cells(), &ids(&["a", "b", "c"])[..]);
        assert_eq!(cs.prob(), &[0.2, 0.5, 0.3]);
        assert_eq!(cs.index_of("c"), Some(2));
        assert_eq!(cs.index_of("z"), None);
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(CellSpace::new(ids(&["a", "a"]), vec![0.5, 0.5]).is_err());
        assert!(CellSpace::new(ids(&["a", "b"]), vec![0.5, 0.4]).is_err());
        assert!(CellSpace::new(ids(&["a", "b"]), vec![1.0, 0.0]).is_err());
        assert!(CellSpace::new(ids(&["a", "b"]), vec![1.2, -0.2]).is_err());
        assert!(CellSpace::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn moments() {
        let cs = CellSpace::<f64>::new(ids(&["a", "b"]), vec![0.25, 0.75]).unwrap();
        let f = FunctionOnCells::new("f", vec![1.0, 0.0]).unwrap();
        assert_eq!(cs.expectation(&f), 0.25);
        assert!((cs.variance(&f) - 0.1875).abs() < 1e-15);
    }
}
