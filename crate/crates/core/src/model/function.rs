use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CellSpace, Partition};
use crate::error::{Error, Result};
use crate::scalar::{max_abs, Scalar};

/// A bounded function on the cells, one value per cell in cell-space order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionOnCells<T> {
    name: String,
    values: Vec<T>,
    bound: T,
}

impl<T: Scalar> FunctionOnCells<T> {
    /// Uses the tightest bound, `max |values|`.
    pub fn new(name: impl Into<String>, values: Vec<T>) -> Result<Self> {
        let bound = max_abs(&values);
        Self::with_bound(name, values, bound)
    }

    pub fn with_bound(name: impl Into<String>, values: Vec<T>, bound: T) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::validation(format!("function '{name}' has no values")));
        }
        if max_abs(&values) > bound {
            return Err(Error::validation(format!(
                "function '{name}' exceeds its bound {bound:?}"
            )));
        }
        Ok(FunctionOnCells {
            name,
            values,
            bound,
        })
    }

    /// Values keyed by cell identifier; every cell of `space` must appear.
    pub fn from_map(
        name: impl Into<String>,
        space: &CellSpace<T>,
        map: &BTreeMap<String, T>,
    ) -> Result<Self> {
        let name = name.into();
        let mut values = Vec::with_capacity(space.len());
        for cell in space.cells() {
            values.push(map.get(cell).cloned().ok_or_else(|| {
                Error::validation(format!("function '{name}' has no value for cell '{cell}'"))
            })?);
        }
        if map.len() != space.len() {
            return Err(Error::validation(format!(
                "function '{name}' names cells outside the cell space"
            )));
        }
        Self::new(name, values)
    }

    pub fn constant(name: impl Into<String>, n_cells: usize, c: T) -> Result<Self> {
        Self::new(name, vec![c; n_cells])
    }

    /// Indicator of block `j` of `partition`.
    pub fn indicator(partition: &Partition, j: usize) -> Self {
        let name = format!("1[{}:{}]", partition.name(), partition.labels()[j]);
        Self::new(name, partition.indicator(j)).expect("indicator is bounded")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// M_F.
    pub fn bound(&self) -> &T {
        &self.bound
    }

    /// K_F = max(1, M_F).
    pub fn k_f(&self) -> T {
        if self.bound > T::one() {
            self.bound.clone()
        } else {
            T::one()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_and_k() {
        let f = FunctionOnCells::new("f", vec![0.5, -0.25]).unwrap();
        assert_eq!(*f.bound(), 0.5);
        assert_eq!(f.k_f(), 1.0);
        let g = FunctionOnCells::new("g", vec![3.0, -1.0]).unwrap();
        assert_eq!(g.k_f(), 3.0);
        assert!(FunctionOnCells::with_bound("h", vec![2.0], 1.0).is_err());
    }

    #[test]
    fn from_map_requires_all_cells() {
        let s = CellSpace::new(vec!["a".into(), "b".into()], vec![0.5, 0.5]).unwrap();
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), 1.0);
        assert!(FunctionOnCells::from_map("f", &s, &m).is_err());
        m.insert("b".to_string(), 2.0);
        let f = FunctionOnCells::from_map("f", &s, &m).unwrap();
        assert_eq!(f.values(), &[1.0, 2.0]);
        m.insert("c".to_string(), 2.0);
        assert!(FunctionOnCells::from_map("f", &s, &m).is_err());
    }
}
