//! The ratio step, raking cycles, stabilization, and evaluation of raked
//! measures and processes.
//!
//! Weights live per observation but are updated per cell: every observation
//! in a cell shares one cumulative multiplier, so a step costs O(cells).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellSpace, FunctionOnCells, Partition, PartitionSequence, WeightedSample, EXACT_TOL};
use crate::scalar::{sum, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RakingStep<T> {
    pub partition: usize,
    pub margin: Vec<T>,
}

/// P_n^(N) (or its learned counterpart when the margins are estimates).
#[derive(Clone, Debug)]
pub struct RakedMeasure<T> {
    sample: Option<Arc<WeightedSample<T>>>,
    n: usize,
    counts: Vec<usize>,
    mass: Vec<T>,
    multiplier: Vec<T>,
    stage: usize,
    history: Vec<RakingStep<T>>,
}

/// Result of raking until the margins stop moving.
#[derive(Clone, Debug)]
pub struct Stabilized<T> {
    pub measure: RakedMeasure<T>,
    pub converged: bool,
    pub cycles: usize,
    /// Sup-norm margin violation at exit.
    pub residual: T,
}

/// α_n^(N)(f) = √n (P_n^(N)(f) − P(f)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RakedProcessValue<T> {
    pub function: String,
    pub stage: usize,
    pub value: T,
}

impl<T: Scalar> RakedMeasure<T> {
    pub fn from_sample(sample: WeightedSample<T>) -> Self {
        let n_cells = sample.cells().len();
        let mut mass = vec![T::zero(); n_cells];
        for o in sample.observations() {
            mass[o.cell] = mass[o.cell].clone() + o.weight.clone();
        }
        RakedMeasure {
            n: sample.n(),
            counts: sample.cell_counts(),
            mass,
            multiplier: vec![T::one(); n_cells],
            stage: sample.stage(),
            history: Vec::new(),
            sample: Some(Arc::new(sample)),
        }
    }

    /// Empirical measure of a sample known only through its cell counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::validation("sample is empty"));
        }
        Ok(RakedMeasure {
            sample: None,
            n: n as usize,
            counts: counts.iter().map(|&c| c as usize).collect(),
            mass: counts.iter().map(|&c| T::from_ratio(c, n)).collect(),
            multiplier: vec![T::one(); counts.len()],
            stage: 0,
            history: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn history(&self) -> &[RakingStep<T>] {
        &self.history
    }

    /// Total weight per cell.
    pub fn cell_mass(&self) -> &[T] {
        &self.mass
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Weight of each observation in cell `c` when the sample started
    /// uniform; `None` for empty cells.
    pub fn individual_weight(&self, cell: usize) -> Option<T> {
        (self.counts[cell] > 0).then(|| self.multiplier[cell].clone() * T::from_ratio(1, self.n as u64))
    }

    /// Per-observation weights w_i^(N), when observations are attached.
    pub fn weights(&self) -> Option<Vec<T>> {
        let sample = self.sample.as_ref()?;
        Some(
            sample
                .observations()
                .iter()
                .map(|o| o.weight.clone() * self.multiplier[o.cell].clone())
                .collect(),
        )
    }

    /// The sample with its current weights.
    pub fn weighted_sample(&self) -> Option<WeightedSample<T>> {
        let weights = self.weights()?;
        Some(self.sample.as_ref()?.reweighted(weights, self.stage))
    }

    /// Σ w_i X_i over the attached observation values.
    pub fn mean_of_values(&self) -> Option<T> {
        self.weighted_sample().map(|s| s.weighted_mean())
    }

    pub fn total_weight(&self) -> T {
        sum(&self.mass)
    }

    pub fn block_totals(&self, partition: &Partition) -> Vec<T> {
        partition.block_totals(&self.mass)
    }

    /// One ratio step on `partition` towards `margin`.
    pub fn ratio_step(&self, partition: &Partition, margin: &[T]) -> Result<Self> {
        let mut next = self.clone();
        next.apply_step(partition, margin)?;
        Ok(next)
    }

    /// In-place ratio step.
    pub fn apply_step(&mut self, partition: &Partition, margin: &[T]) -> Result<()> {
        check_margin(partition, margin)?;
        if partition.n_cells() != self.mass.len() {
            return Err(Error::validation(format!(
                "partition '{}' spans {} cells, measure has {}",
                partition.name(),
                partition.n_cells(),
                self.mass.len()
            )));
        }
        let totals = self.block_totals(partition);
        let mut factors = Vec::with_capacity(totals.len());
        for (j, (total, target)) in totals.iter().zip(margin).enumerate() {
            if total.is_zero() {
                if target.is_zero() {
                    factors.push(T::zero());
                    continue;
                }
                return Err(Error::ZeroCell {
                    partition: partition.id(),
                    block: j,
                    label: partition.labels()[j].clone(),
                    target: target.to_f64_lossy(),
                });
            }
            factors.push(target.clone() / total.clone());
        }
        for c in 0..self.mass.len() {
            let f = &factors[partition.block_of(c)];
            self.mass[c] = self.mass[c].clone() * f.clone();
            self.multiplier[c] = self.multiplier[c].clone() * f.clone();
        }
        self.stage += 1;
        self.history.push(RakingStep {
            partition: partition.id(),
            margin: margin.to_vec(),
        });
        Ok(())
    }

    /// Applies the sequence `cycles` times, one margin vector per partition.
    pub fn rake(&self, seq: &PartitionSequence<T>, margins: &[Vec<T>], cycles: usize) -> Result<Self> {
        check_lengths(seq, margins)?;
        let mut m = self.clone();
        for _ in 0..cycles {
            for (p, v) in seq.partitions().iter().zip(margins) {
                m.apply_step(p, v)?;
            }
        }
        Ok(m)
    }

    /// Applies `steps` ratio steps following the sequence cyclically.
    pub fn rake_steps(&self, seq: &PartitionSequence<T>, margins: &[Vec<T>], steps: usize) -> Result<Self> {
        check_lengths(seq, margins)?;
        let mut m = self.clone();
        for k in 0..steps {
            let i = k % seq.len();
            m.apply_step(&seq.partitions()[i], &margins[i])?;
        }
        Ok(m)
    }

    /// Largest |block total − margin| over all partitions.
    pub fn margin_violation(&self, seq: &PartitionSequence<T>, margins: &[Vec<T>]) -> T {
        let mut worst = T::zero();
        for (p, v) in seq.partitions().iter().zip(margins) {
            for (t, target) in self.block_totals(p).into_iter().zip(v) {
                let d = (t - target.clone()).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Cycles until the sup-norm margin violation is at most `tol`, or
    /// `max_cycles` is reached. Hitting the cap is reported, not an error.
    pub fn rake_to_stability(
        &self,
        seq: &PartitionSequence<T>,
        margins: &[Vec<T>],
        tol: f64,
        max_cycles: usize,
    ) -> Result<Stabilized<T>> {
        if !(tol > 0.0) {
            return Err(Error::validation("stabilization tolerance must be positive"));
        }
        check_lengths(seq, margins)?;
        let tol_t = T::from_f64_lossy(tol);
        let mut m = self.clone();
        let mut residual = m.margin_violation(seq, margins);
        let mut cycles = 0;
        while residual > tol_t && cycles < max_cycles {
            for (p, v) in seq.partitions().iter().zip(margins) {
                m.apply_step(p, v)?;
            }
            cycles += 1;
            residual = m.margin_violation(seq, margins);
        }
        Ok(Stabilized {
            converged: residual <= tol_t,
            measure: m,
            cycles,
            residual,
        })
    }

    /// P_n^(N)(f), aggregated per cell.
    pub fn eval(&self, f: &FunctionOnCells<T>) -> T {
        self.mass
            .iter()
            .zip(f.values())
            .fold(T::zero(), |acc, (m, v)| acc + m.clone() * v.clone())
    }
}

impl<T: Scalar + num_traits::Float> RakedMeasure<T> {
    pub fn process_value(&self, f: &FunctionOnCells<T>, truth: &CellSpace<T>) -> RakedProcessValue<T> {
        let n = T::from_usize(self.n).expect("sample size fits");
        RakedProcessValue {
            function: f.name().to_string(),
            stage: self.stage,
            value: n.sqrt() * (self.eval(f) - truth.expectation(f)),
        }
    }
}

fn check_margin<T: Scalar>(partition: &Partition, margin: &[T]) -> Result<()> {
    if margin.len() != partition.m() {
        return Err(Error::validation(format!(
            "partition '{}' has {} blocks but margin has {} entries",
            partition.name(),
            partition.m(),
            margin.len()
        )));
    }
    if margin.iter().any(|v| *v < T::zero()) {
        return Err(Error::validation(format!(
            "negative margin for partition '{}'",
            partition.name()
        )));
    }
    let total = sum(margin);
    if !total.within(&T::one(), EXACT_TOL) {
        return Err(Error::validation(format!(
            "margin for partition '{}' sums to {total:?}",
            partition.name()
        )));
    }
    Ok(())
}

fn check_lengths<T: Scalar>(seq: &PartitionSequence<T>, margins: &[Vec<T>]) -> Result<()> {
    if margins.len() != seq.len() {
        return Err(Error::validation(format!(
            "{} margin vectors for {} partitions",
            margins.len(),
            seq.len()
        )));
    }
    Ok(())
}
