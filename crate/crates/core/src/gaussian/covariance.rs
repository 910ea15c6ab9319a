use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellSpace, FunctionOnCells, Partition, PartitionSequence};
use crate::scalar::Scalar;

/// Eigenvalues above −PSD_TOL count as nonnegative.
pub const PSD_TOL: f64 = 1e-10;

/// Covariance of (G^(N)(1_c))_c over the cells, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel<T> {
    prob: Vec<T>,
    sigma: Vec<T>,
    stage: usize,
    visit_order: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizedVariance<T> {
    pub variance: T,
    pub steps: usize,
    pub converged: bool,
}

impl<T: Scalar> CovarianceModel<T> {
    /// Stage 0: Σ = diag(p) − p pᵀ.
    pub fn brownian_bridge(space: &CellSpace<T>) -> Self {
        Self::bridge_over(space.prob())
    }

    /// Stage-0 bridge of an arbitrary cell distribution, such as raked
    /// empirical weights for a plug-in variance. Zero cells are allowed.
    pub fn from_probabilities(prob: &[T]) -> Result<Self> {
        if prob.is_empty() || prob.iter().any(|p| *p < T::zero()) {
            return Err(Error::validation("cell probabilities must be nonnegative"));
        }
        if !crate::scalar::sum(prob).within(&T::one(), 1e-9) {
            return Err(Error::validation("cell probabilities must sum to 1"));
        }
        Ok(Self::bridge_over(prob))
    }

    fn bridge_over(p: &[T]) -> Self {
        let d = p.len();
        let mut sigma = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let cross = p[i].clone() * p[j].clone();
                sigma.push(if i == j { p[i].clone() - cross } else { -cross });
            }
        }
        CovarianceModel {
            prob: p.to_vec(),
            sigma,
            stage: 0,
            visit_order: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.prob.len()
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn entry(&self, i: usize, j: usize) -> &T {
        &self.sigma[i * self.dim() + j]
    }

    /// One raking step: G^(N)(f) = G^(N−1)(f) − Σ_j E[f|A_j] G^(N−1)(A_j).
    pub fn bridge_step(&self, partition: &Partition) -> Result<Self> {
        let d = self.dim();
        if partition.n_cells() != d {
            return Err(Error::validation(format!(
                "partition '{}' spans {} cells, model has {d}",
                partition.name(),
                partition.n_cells()
            )));
        }
        let block_p = partition.block_totals(&self.prob);
        if let Some(j) = block_p.iter().position(|p| *p <= T::zero()) {
            return Err(Error::Degenerate(format!(
                "block {j} of partition '{}' has zero probability",
                partition.name()
            )));
        }
        let ratio: Vec<T> = (0..d)
            .map(|c| self.prob[c].clone() / block_p[partition.block_of(c)].clone())
            .collect();
        let m = partition.m();

        // rows: (LΣ)[c,:] = Σ[c,:] − r_c Σ_{c'∈A_j(c)} Σ[c',:]
        let mut block_rows = vec![T::zero(); m * d];
        for c in 0..d {
            let j = partition.block_of(c);
            for k in 0..d {
                let idx = j * d + k;
                block_rows[idx] = block_rows[idx].clone() + self.sigma[c * d + k].clone();
            }
        }
        let mut left = vec![T::zero(); d * d];
        for c in 0..d {
            let j = partition.block_of(c);
            for k in 0..d {
                left[c * d + k] =
                    self.sigma[c * d + k].clone() - ratio[c].clone() * block_rows[j * d + k].clone();
            }
        }
        // columns: Σ'[a,b] = (LΣ)[a,b] − r_b Σ_{b'∈A_j(b)} (LΣ)[a,b']
        let mut block_cols = vec![T::zero(); d * m];
        for a in 0..d {
            for b in 0..d {
                let idx = a * m + partition.block_of(b);
                block_cols[idx] = block_cols[idx].clone() + left[a * d + b].clone();
            }
        }
        let mut sigma = vec![T::zero(); d * d];
        for a in 0..d {
            for b in 0..d {
                sigma[a * d + b] = left[a * d + b].clone()
                    - ratio[b].clone() * block_cols[a * m + partition.block_of(b)].clone();
            }
        }
        let mut visit_order = self.visit_order.clone();
        visit_order.push(partition.id());
        Ok(CovarianceModel {
            prob: self.prob.clone(),
            sigma,
            stage: self.stage + 1,
            visit_order,
        })
    }

    /// Applies `steps` bridge steps following the sequence cyclically.
    pub fn bridge_steps(&self, seq: &PartitionSequence<T>, steps: usize) -> Result<Self> {
        let mut m = self.clone();
        for k in 0..steps {
            m = m.bridge_step(&seq.partitions()[k % seq.len()])?;
        }
        Ok(m)
    }

    /// Cov(G^(N)(f), G^(N)(g)) = fᵀ Σ g.
    pub fn covariance_of(&self, f: &FunctionOnCells<T>, g: &FunctionOnCells<T>) -> T {
        let d = self.dim();
        let (fv, gv) = (f.values(), g.values());
        let mut acc = T::zero();
        for i in 0..d {
            let mut row = T::zero();
            for j in 0..d {
                row = row + self.sigma[i * d + j].clone() * gv[j].clone();
            }
            acc = acc + fv[i].clone() * row;
        }
        acc
    }

    /// σ_f^(N) = Var(G^(N)(f)); tiny negative rounding is clamped to 0.
    pub fn variance_of(&self, f: &FunctionOnCells<T>) -> T {
        let v = self.covariance_of(f, f);
        if v < T::zero() && v >= T::from_f64_lossy(-PSD_TOL) {
            T::zero()
        } else {
            v
        }
    }

    /// σ_f^(N) for N = 0..=steps along the cyclic sequence.
    pub fn variance_trajectory(
        &self,
        seq: &PartitionSequence<T>,
        f: &FunctionOnCells<T>,
        steps: usize,
    ) -> Result<Vec<T>> {
        let mut m = self.clone();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(m.variance_of(f));
        for k in 0..steps {
            m = m.bridge_step(&seq.partitions()[k % seq.len()])?;
            out.push(m.variance_of(f));
        }
        Ok(out)
    }

    /// Iterates the cyclic recursion until successive full cycles change
    /// Var(G^(N)(f)) by at most `tol`, or `max_steps` steps were taken.
    pub fn stabilized_variance(
        &self,
        seq: &PartitionSequence<T>,
        f: &FunctionOnCells<T>,
        tol: f64,
        max_steps: usize,
    ) -> Result<StabilizedVariance<T>> {
        let tol_t = T::from_f64_lossy(tol);
        let mut m = self.clone();
        let mut last = m.variance_of(f);
        let mut steps = 0;
        while steps < max_steps {
            for p in seq.partitions() {
                m = m.bridge_step(p)?;
                steps += 1;
            }
            let v = m.variance_of(f);
            let done = (v.clone() - last.clone()).abs() <= tol_t;
            last = v;
            if done {
                return Ok(StabilizedVariance {
                    variance: last,
                    steps,
                    converged: true,
                });
            }
        }
        Ok(StabilizedVariance {
            variance: last,
            steps,
            converged: false,
        })
    }

    pub fn to_f64_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.sigma[i * d + j].to_f64_lossy())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_f64_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest |Σ_ij − Σ_ji|.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..i {
                worst = worst.max((self.entry(i, j).clone() - self.entry(j, i).clone()).abs().to_f64_lossy());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> CellSpace<f64> {
        CellSpace::new(
            ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn stage_zero_is_brownian_bridge() {
        let s = space();
        let m = CovarianceModel::brownian_bridge(&s);
        for c in 0..4 {
            let mut v = vec![0.0; 4];
            v[c] = 1.0;
            let f = FunctionOnCells::new("ind", v).unwrap();
            let p = s.prob()[c];
            assert!((m.variance_of(&f) - p * (1.0 - p)).abs() < 1e-15);
        }
        let k = FunctionOnCells::constant("k", 4, 3.0).unwrap();
        assert!(m.variance_of(&k).abs() < 1e-15);
    }

    #[test]
    fn stepped_blocks_have_zero_variance() {
        let s = space();
        let p = Partition::from_cell_ids(1, "p", &s, &[vec!["a", "c"], vec!["b", "d"]]).unwrap();
        let q = Partition::from_cell_ids(2, "q", &s, &[vec!["a"], vec!["b", "c"], vec!["d"]]).unwrap();
        let m = CovarianceModel::brownian_bridge(&s).bridge_step(&q).unwrap().bridge_step(&p).unwrap();
        for j in 0..2 {
            let ind = FunctionOnCells::indicator(&p, j);
            assert!(m.variance_of(&ind).abs() < 1e-12);
        }
        assert_eq!(m.visit_order(), &[2, 1]);
        assert_eq!(m.stage(), 2);
        assert!(m.asymmetry() < 1e-15);
        assert!(m.min_eigenvalue() > -PSD_TOL);
        let k = FunctionOnCells::constant("k", 4, -2.0).unwrap();
        assert!(m.variance_of(&k).abs() < 1e-12);
    }

    #[test]
    fn full_conditioning_kills_the_bridge() {
        let s = CellSpace::<f64>::new(vec!["x".into(), "y".into()], vec![0.5, 0.5]).unwrap();
        let p = Partition::from_cell_ids(1, "p", &s, &[vec!["x"], vec!["y"]]).unwrap();
        let m = CovarianceModel::brownian_bridge(&s).bridge_step(&p).unwrap();
        assert!(m.sigma().iter().all(|v| v.abs() < 1e-16));
    }
}
