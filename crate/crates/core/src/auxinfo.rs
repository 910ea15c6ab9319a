//! Auxiliary-information sources and their deviation bounds.
//!
//! A source either knows the true block probabilities of its partition or
//! reports a multinomial estimate from a sample of size `n_N`. Only the
//! fully explicit bounds are evaluated: the Hoeffding envelope for Λ'_n,
//! the multinomial bound on the probability that some block is empty, and
//! the threshold reduction used to control the learned raked process.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellSpace, Partition, PartitionSequence};
use crate::rng::multinomial;
use crate::scalar::{sum, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AuxKind<T> {
    Exact { margin: Vec<T> },
    Learned { counts: Vec<u64>, source_size: u64 },
}

/// Auxiliary information for the partition with id `partition`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxSource<T> {
    pub partition: usize,
    pub kind: AuxKind<T>,
}

impl<T: Scalar> AuxSource<T> {
    pub fn exact(partition: usize, margin: Vec<T>) -> Result<Self> {
        if margin.iter().any(|v| *v < T::zero()) || !sum(&margin).within(&T::one(), 1e-12) {
            return Err(Error::validation(format!(
                "exact margin for partition {partition} is not a probability vector"
            )));
        }
        Ok(AuxSource {
            partition,
            kind: AuxKind::Exact { margin },
        })
    }

    pub fn learned(partition: usize, counts: Vec<u64>) -> Result<Self> {
        let source_size: u64 = counts.iter().sum();
        if source_size == 0 {
            return Err(Error::validation(format!(
                "learned source for partition {partition} has no observations"
            )));
        }
        Ok(AuxSource {
            partition,
            kind: AuxKind::Learned { counts, source_size },
        })
    }

    /// The margin vector handed to the ratio step: P[A^(N)] or
    /// P'_N[A^(N)] = counts / n_N.
    pub fn margin(&self) -> Vec<T> {
        match &self.kind {
            AuxKind::Exact { margin } => margin.clone(),
            AuxKind::Learned { counts, source_size } => {
                counts.iter().map(|&c| T::from_ratio(c, *source_size)).collect()
            }
        }
    }

    /// n_N, or `None` for exact information.
    pub fn source_size(&self) -> Option<u64> {
        match &self.kind {
            AuxKind::Exact { .. } => None,
            AuxKind::Learned { source_size, .. } => Some(*source_size),
        }
    }

    /// Requires n_N > n for learned sources.
    pub fn check_larger_than(&self, n: usize) -> Result<()> {
        match self.source_size() {
            Some(size) if size <= n as u64 => Err(Error::validation(format!(
                "source for partition {} has n_N = {size} <= n = {n}",
                self.partition
            ))),
            _ => Ok(()),
        }
    }
}

/// Margin vectors of a list of sources, in order.
pub fn margins_of<T: Scalar>(sources: &[AuxSource<T>]) -> Vec<Vec<T>> {
    sources.iter().map(|s| s.margin()).collect()
}

/// Draws P'_N[A^(N)] ~ Multinomial(n_N, P[A^(N)]) / n_N.
pub fn draw_learned<T: Scalar, R: Rng + ?Sized>(
    truth: &CellSpace<T>,
    partition: &Partition,
    source_size: u64,
    rng: &mut R,
) -> Result<AuxSource<T>> {
    if source_size == 0 {
        return Err(Error::validation("source size must be at least 1"));
    }
    let probs: Vec<f64> = truth.margins(partition).iter().map(|p| p.to_f64_lossy()).collect();
    AuxSource::learned(partition.id(), multinomial(source_size, &probs, rng))
}

/// Upper bound on P(Λ'_n > λ): 2 N0 m_(N0) exp(−2λ²).
pub fn hoeffding_tail(n0: usize, m_max: usize, lambda: f64) -> f64 {
    2.0 * n0 as f64 * m_max as f64 * (-2.0 * lambda * lambda).exp()
}

/// Bounds on the probability that some used block is empty in a sample of
/// size `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroCellTail {
    /// Σ_N m_N (1 − p_N)^n with p_N the smallest block probability of A^(N).
    pub per_partition: f64,
    /// N0 m_(N0) (1 − p_(N0))^n.
    pub coarse: f64,
}

pub fn zero_cell_tail<T: Scalar>(n: u64, truth: &CellSpace<T>, seq: &PartitionSequence<T>) -> ZeroCellTail {
    let margins: Vec<Vec<f64>> = seq
        .partitions()
        .iter()
        .map(|p| truth.margins(p).iter().map(|q| q.to_f64_lossy()).collect())
        .collect();
    zero_cell_tail_from_margins(n, &margins)
}

/// The same bounds from the block probabilities of each partition.
pub fn zero_cell_tail_from_margins(n: u64, margins: &[Vec<f64>]) -> ZeroCellTail {
    let exponent = n as f64;
    let smallest = |v: &Vec<f64>| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let per_partition = margins
        .iter()
        .map(|v| v.len() as f64 * (1.0 - smallest(v)).powf(exponent))
        .sum();
    let p_min = margins.iter().map(smallest).fold(f64::INFINITY, f64::min);
    let m_max = margins.iter().map(|v| v.len()).max().unwrap_or(0);
    let coarse = margins.len() as f64 * m_max as f64 * (1.0 - p_min).powf(exponent);
    ZeroCellTail {
        per_partition,
        coarse,
    }
}

/// Constants entering the deviation bound of the learned raked process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// N0, number of raking steps.
    pub n0: usize,
    /// p_(N0).
    pub p_min: f64,
    /// m_(N0).
    pub m_max: usize,
    /// K_F = max(1, M_F).
    pub k_f: f64,
    /// Primary sample size n.
    pub n: u64,
    /// n_(N0) = min_N n_N.
    pub source_min: u64,
}

/// Reduction of P(sup_N ||α̃_n^(N)||_F > t): the rescaled threshold at which
/// the unraked process has to be controlled, and the additive multinomial
/// term. The base probability itself is left to the caller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDeviationBound {
    pub threshold: f64,
    pub additive: f64,
}

pub fn deviation_bound_raw(t: f64, inputs: &BoundInputs) -> Result<RawDeviationBound> {
    if !(t > 0.0) {
        return Err(Error::validation("threshold t must be positive"));
    }
    let BoundInputs {
        n0,
        p_min,
        m_max,
        k_f,
        n,
        source_min,
    } = *inputs;
    let n_f = n as f64;
    let k = n0 as i32;
    let m = m_max as f64;
    let threshold = t * p_min.powi(k) / (4f64.powi(k) * m.powi(k) * k_f.powi(k) * (1.0 + t / n_f.sqrt()).powi(k));
    let additive = 2.0 * (n0 as f64).powi(3) * m
        * (-(source_min as f64) * p_min * p_min * t * t / (2.0 * n_f * m * m * k_f * k_f)).exp();
    Ok(RawDeviationBound { threshold, additive })
}

/// How far the source sizes are from the regime n log n = o(n_(N0)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n: u64,
    pub source_min: u64,
    /// n log(n) / n_(N0).
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const DEFAULT_SIZE_THRESHOLD: f64 = 0.05;

pub fn size_condition(n: u64, source_sizes: &[u64], threshold: f64) -> Result<SizeReport> {
    if n == 0 || source_sizes.is_empty() || source_sizes.contains(&0) {
        return Err(Error::validation("sizes must be at least 1"));
    }
    let source_min = *source_sizes.iter().min().expect("nonempty");
    let ratio = n as f64 * (n as f64).ln() / source_min as f64;
    Ok(SizeReport {
        n,
        source_min,
        ratio,
        threshold,
        pass: ratio < threshold,
    })
}

/// Observed supremum deviations of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Λ'_n = sup_{N,j} √n_N |P'_N(A_j) − P(A_j)|.
    pub lambda_prime: f64,
    /// Λ_n = sup over stages and functions of |α_n^(N)| and |α̃_n^(N)|.
    pub lambda: f64,
    pub n0: usize,
    pub m_max: usize,
}

impl DeviationReport {
    pub fn hoeffding_bound(&self, lambda: f64) -> f64 {
        hoeffding_tail(self.n0, self.m_max, lambda)
    }
}

/// Λ'_n over the learned sources (exact sources contribute 0).
pub fn lambda_prime<T: Scalar>(truth: &CellSpace<T>, seq: &PartitionSequence<T>, sources: &[AuxSource<T>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, src) in seq.partitions().iter().zip(sources) {
        if let Some(size) = src.source_size() {
            let scale = (size as f64).sqrt();
            for (est, tru) in src.margin().iter().zip(truth.margins(p)) {
                worst = worst.max(scale * (est.to_f64_lossy() - tru.to_f64_lossy()).abs());
            }
        }
    }
    worst
}
