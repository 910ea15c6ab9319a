use serde::{Deserialize, Serialize};

use super::simulate::Simulation;
use crate::config::SourceSize;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceModel;
use crate::model::{CellSpace, FunctionOnCells, PartitionSequence};

/// Least-squares line y = intercept + slope·x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    /// slope ± 2 standard errors.
    pub band: (f64, f64),
    pub points: usize,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(Error::validation("a rate fit needs at least 3 grid points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::validation("non-finite value in rate fit"));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("rate fit grid has repeated points"));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (rss / (k - 2.0) / sxx).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        slope_std_error: se,
        band: (slope - 2.0 * se, slope + 2.0 * se),
        points: points.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: u64,
    pub source_size: u64,
    /// √(n log n / n_N).
    pub scale: f64,
    pub replicates: usize,
    pub mean: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub n: u64,
    pub points: Vec<RatePoint>,
    /// log(mean deviation) against log(scale).
    pub fit: LineFit,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fits the sup-deviation between learned and exact raking against
/// √(n log n / n_N) over the finite source sizes simulated at `n`.
pub fn rate_fit(sim: &Simulation, n: u64) -> Result<RateReport> {
    let rows: Vec<(u64, f64)> = sim
        .records
        .iter()
        .filter(|r| r.n == n)
        .filter_map(|r| match r.source_size {
            SourceSize::Finite(s) => Some((s, r.sup_deviation)),
            SourceSize::Exact => None,
        })
        .collect();
    rate_fit_deviations(n, &rows)
}

/// Same fit from (n_N, sup-deviation) pairs, one per replicate.
pub fn rate_fit_deviations(n: u64, rows: &[(u64, f64)]) -> Result<RateReport> {
    let mut sizes: Vec<u64> = rows.iter().map(|r| r.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut points = Vec::with_capacity(sizes.len());
    for size in sizes {
        let mut devs: Vec<f64> = rows.iter().filter(|r| r.0 == size).map(|r| r.1).collect();
        devs.sort_by(f64::total_cmp);
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        points.push(RatePoint {
            n,
            source_size: size,
            scale: (n as f64 * (n as f64).ln() / size as f64).sqrt(),
            replicates: devs.len(),
            mean,
            q10: quantile(&devs, 0.1),
            q50: quantile(&devs, 0.5),
            q90: quantile(&devs, 0.9),
        });
    }
    if points.iter().any(|p| !(p.mean > 0.0) || !(p.scale > 0.0)) {
        return Err(Error::validation("rate fit needs positive deviations and n >= 2"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.scale.ln(), p.mean.ln())).collect();
    let fit = fit_line(&logs)?;
    Ok(RateReport { n, points, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: u64,
    pub source_size: SourceSize,
    pub stage: usize,
    pub function: String,
    pub replicates: usize,
    pub exact: f64,
    pub mc: f64,
    pub mc_learned: f64,
    /// |mc − exact| / exact, absent when the exact variance vanishes.
    pub rel_error: Option<f64>,
    pub rel_error_learned: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
}

impl VarianceReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.rel_error)
            .fold(0.0, f64::max)
    }
}

pub const MIN_VARIANCE_REPLICATES: usize = 1000;

fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let k = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / k;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0)
}

/// Monte Carlo variances of α_n^(N)(f) and α̃_n^(N)(f) against σ_f^(N).
pub fn variance_convergence(
    sim: &Simulation,
    truth: &CellSpace<f64>,
    seq: &PartitionSequence<f64>,
    functions: &[FunctionOnCells<f64>],
) -> Result<VarianceReport> {
    if functions.len() != sim.functions.len() {
        return Err(Error::validation("functions do not match the simulation"));
    }
    let mut model = CovarianceModel::brownian_bridge(truth);
    let mut exact = Vec::with_capacity(sim.stages + 1);
    for stage in 0..=sim.stages {
        if stage > 0 {
            model = model.bridge_step(seq.at_stage(stage))?;
        }
        exact.push(functions.iter().map(|f| model.variance_of(f)).collect::<Vec<f64>>());
    }
    let mut groups: Vec<(u64, SourceSize)> = sim.records.iter().map(|r| (r.n, r.source_size)).collect();
    groups.sort();
    groups.dedup();
    let mut rows = Vec::new();
    for (n, size) in groups {
        let records: Vec<_> = sim.at(n, size).collect();
        if records.len() < MIN_VARIANCE_REPLICATES {
            return Err(Error::validation(format!(
                "variance check needs at least {MIN_VARIANCE_REPLICATES} replicates, got {} at n = {n}",
                records.len()
            )));
        }
        for stage in 0..=sim.stages {
            for (k, name) in sim.functions.iter().enumerate() {
                let mc = sample_variance(records.iter().map(|r| r.alpha[stage][k]));
                let mc_learned = sample_variance(records.iter().map(|r| r.alpha_learned[stage][k]));
                let e = exact[stage][k];
                let rel = |v: f64| (e > 1e-12).then(|| (v - e).abs() / e);
                rows.push(VarianceRow {
                    n,
                    source_size: size,
                    stage,
                    function: name.clone(),
                    replicates: records.len(),
                    exact: e,
                    mc,
                    mc_learned,
                    rel_error: rel(mc),
                    rel_error_learned: rel(mc_learned),
                });
            }
        }
    }
    Ok(VarianceReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{appendix_a_truth, simulate_processes, ExperimentConfig};

    #[test]
    fn exact_line() {
        let fit = fit_line(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.slope_std_error < 1e-12);
    }

    #[test]
    fn constant_deviation_has_zero_slope() {
        let fit = fit_line(&[(-3.0, 0.5), (-2.0, 0.5), (-1.0, 0.5)]).unwrap();
        assert_eq!(fit.slope, 0.0);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(fit_line(&[(1.0, 1.0), (1.0, 1.0)]).is_err());
        assert!(fit_line(&[(1.0, 1.0), (1.0, 2.0), (2.0, 1.0)]).is_err());
        assert!(fit_line(&[(1.0, f64::NAN), (2.0, 2.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn variance_needs_enough_replicates() {
        let (truth, parts, f) = appendix_a_truth();
        let seq = PartitionSequence::new(&truth, parts).unwrap();
        let config = ExperimentConfig {
            truth: truth.clone(),
            sequence: seq.clone(),
            functions: vec![f.clone()],
            n_grid: vec![100],
            source_sizes: vec![SourceSize::Exact],
            stages: 1,
            replicates: 10,
            seed: 1,
        };
        let sim = simulate_processes(&config).unwrap();
        assert!(variance_convergence(&sim, &truth, &seq, &[f]).is_err());
    }

    #[test]
    fn stepped_indicator_has_no_variance() {
        let (truth, parts, _) = appendix_a_truth();
        let seq = PartitionSequence::new(&truth, parts.clone()).unwrap();
        let ind = FunctionOnCells::indicator(&parts[0], 1);
        let config = ExperimentConfig {
            truth: truth.clone(),
            sequence: seq.clone(),
            functions: vec![ind.clone()],
            n_grid: vec![400],
            source_sizes: vec![SourceSize::Exact],
            stages: 1,
            replicates: 1000,
            seed: 2,
        };
        let sim = simulate_processes(&config).unwrap();
        let report = variance_convergence(&sim, &truth, &seq, &[ind]).unwrap();
        let stage1 = report.rows.iter().find(|r| r.stage == 1).unwrap();
        assert!(stage1.exact.abs() < 1e-15);
        assert!(stage1.mc < 1e-20);
        let stage0 = report.rows.iter().find(|r| r.stage == 0).unwrap();
        assert!(stage0.rel_error.unwrap() < 0.15);
    }
}
