//! Z-tests and chi-square goodness-of-fit tests on raked measures, the
//! beta-risk ratio bound, and their Monte Carlo level/power study.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::auxinfo::draw_learned;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceModel;
use crate::model::{CellSpace, FunctionOnCells, Partition, PartitionSequence};
use crate::raking::RakedMeasure;
use crate::rng::{draw_cell_counts, stream};
use crate::scalar::Scalar;

/// Which statistic a test result refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Raked(usize),
    RakedLearned(usize),
    RakedStable,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Plain => write!(f, "plain"),
            Variant::Raked(n) => write!(f, "raked({n})"),
            Variant::RakedLearned(n) => write!(f, "raked_learned({n})"),
            Variant::RakedStable => write!(f, "raked_stable"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub statistic: f64,
    pub variant: Variant,
    pub threshold: f64,
    pub reject: bool,
    pub alpha: f64,
}

/// Degrees of freedom used for the chi-square threshold of an m-block test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofConvention {
    /// m − 1, the limiting law of the statistic.
    #[default]
    Standard,
    /// m, as the threshold is written in the source.
    Paper,
}

impl DofConvention {
    pub fn dof(self, m: usize) -> usize {
        match self {
            DofConvention::Standard => m - 1,
            DofConvention::Paper => m,
        }
    }
}

impl std::str::FromStr for DofConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(DofConvention::Standard),
            "paper" => Ok(DofConvention::Paper),
            other => Err(Error::validation(format!("unknown dof convention '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub variant: Variant,
    pub dof: usize,
    pub threshold: f64,
    pub reject: bool,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("alpha = {alpha} must lie in (0,1)")))
    }
}

/// Φ⁻¹(p) for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Quantile of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_quantile(p: f64, dof: usize) -> Result<f64> {
    let law = ChiSquared::new(dof as f64)
        .map_err(|e| Error::validation(format!("chi-square with {dof} dof: {e}")))?;
    Ok(law.inverse_cdf(p))
}

/// Two-sided Z-test threshold t_α = Φ⁻¹(1 − α/2).
pub fn z_threshold(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(normal_quantile(1.0 - alpha / 2.0))
}

/// Z = √n (estimate − P0(f)) / σ, with σ a standard deviation.
pub fn z_from_estimate(estimate: f64, n: usize, p0_f: f64, sigma: f64, alpha: f64, variant: Variant) -> Result<ZTestResult> {
    if !(sigma > 0.0) {
        return Err(Error::validation(format!("sigma = {sigma} must be positive")));
    }
    let threshold = z_threshold(alpha)?;
    let statistic = (n as f64).sqrt() * (estimate - p0_f) / sigma;
    Ok(ZTestResult {
        statistic,
        variant,
        threshold,
        reject: statistic.abs() > threshold,
        alpha,
    })
}

pub fn z_test<T: Scalar>(
    measure: &RakedMeasure<T>,
    f: &FunctionOnCells<T>,
    p0_f: f64,
    sigma: f64,
    alpha: f64,
    variant: Variant,
) -> Result<ZTestResult> {
    z_from_estimate(measure.eval(f).to_f64_lossy(), measure.n(), p0_f, sigma, alpha, variant)
}

/// Variance of the raked bridge with the truth replaced by the raked
/// empirical cell weights, following the measure's own step history.
pub fn plug_in_variance<T: Scalar>(
    measure: &RakedMeasure<T>,
    f: &FunctionOnCells<T>,
    partitions: &[Partition],
) -> Result<T> {
    let mut model = CovarianceModel::from_probabilities(measure.cell_mass())?;
    for step in measure.history() {
        let p = partitions
            .iter()
            .find(|p| p.id() == step.partition)
            .ok_or_else(|| Error::validation(format!("partition {} not supplied", step.partition)))?;
        model = model.bridge_step(p)?;
    }
    Ok(model.variance_of(f))
}

/// Plug-in variance of the raked bridge at the observed values X_i.
///
/// Splitting X into its cell means and the within-cell residual, raking
/// only acts on the first part, so the variance is that of the cell-mean
/// function plus the weighted within-cell variance.
pub fn plug_in_sample_variance(measure: &RakedMeasure<f64>, partitions: &[Partition]) -> Result<f64> {
    let sample = measure
        .weighted_sample()
        .ok_or_else(|| Error::validation("measure has no observations attached"))?;
    let mass = measure.cell_mass();
    let mut sums = vec![0.0; mass.len()];
    for o in sample.observations() {
        sums[o.cell] += o.weight * o.value;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(mass)
        .map(|(s, m)| if *m > 0.0 { s / m } else { 0.0 })
        .collect();
    let within: f64 = sample
        .observations()
        .iter()
        .map(|o| o.weight * (o.value - means[o.cell]).powi(2))
        .sum();
    let f = FunctionOnCells::new("cell mean", means)?;
    Ok(plug_in_variance(measure, &f, partitions)? + within)
}

/// exp(n (P(f) − P0(f))² (1/σ^(N) − 1/σ)), a lower bound on the ratio of
/// beta risks of the plain and raked Z-tests.
pub fn power_ratio_bound(p_f: f64, p0_f: f64, sigma0: f64, sigma_n: f64, n: u64) -> Result<f64> {
    if !(sigma_n > 0.0 && sigma_n < sigma0) {
        return Err(Error::validation(format!(
            "need 0 < sigma_N < sigma_0, got sigma_N = {sigma_n}, sigma_0 = {sigma0}"
        )));
    }
    let gap = p_f - p0_f;
    Ok((n as f64 * gap * gap * (1.0 / sigma_n - 1.0 / sigma0)).exp())
}

/// n Σ_i (w_i − P0_i)² / P0_i.
pub fn chi_square_statistic(n: usize, block_weights: &[f64], p0: &[f64]) -> Result<f64> {
    check_p0(p0)?;
    if block_weights.len() != p0.len() {
        return Err(Error::validation(format!(
            "{} block weights for {} reference probabilities",
            block_weights.len(),
            p0.len()
        )));
    }
    Ok(n as f64
        * block_weights
            .iter()
            .zip(p0)
            .map(|(w, q)| (w - q) * (w - q) / q)
            .sum::<f64>())
}

fn check_p0(p0: &[f64]) -> Result<()> {
    if p0.len() < 2 {
        return Err(Error::validation("chi-square test needs at least two blocks"));
    }
    if let Some(j) = p0.iter().position(|q| !(*q > 0.0)) {
        return Err(Error::validation(format!("reference probability of block {j} is not positive")));
    }
    let total: f64 = p0.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("reference probabilities sum to {total}")));
    }
    Ok(())
}

pub fn chi_square_test<T: Scalar>(
    measure: &RakedMeasure<T>,
    partition: &Partition,
    p0_margin: &[f64],
    alpha: f64,
    convention: DofConvention,
    variant: Variant,
) -> Result<ChiSquareResult> {
    check_alpha(alpha)?;
    let weights: Vec<f64> = measure
        .block_totals(partition)
        .iter()
        .map(|w| w.to_f64_lossy())
        .collect();
    let statistic = chi_square_statistic(measure.n(), &weights, p0_margin)?;
    let dof = convention.dof(partition.m());
    let threshold = chi_square_quantile(1.0 - alpha, dof)?;
    Ok(ChiSquareResult {
        statistic,
        variant,
        dof,
        threshold,
        reject: statistic > threshold,
        alpha,
    })
}

/// A Z-test to run alongside the chi-square tests in [`level_and_power_mc`].
#[derive(Clone, Debug)]
pub struct ZSpec {
    pub function: FunctionOnCells<f64>,
    /// P0(f) under the null.
    pub p0_f: f64,
}

/// Monte Carlo study of rejection rates under a given truth.
#[derive(Clone, Debug)]
pub struct McConfig {
    /// Law the samples are drawn from (H0 when its B-margins equal `p0_margin`).
    pub truth: CellSpace<f64>,
    /// Partitions raked on, with exact margins taken from the truth.
    pub rake: PartitionSequence<f64>,
    /// Number of ratio steps N.
    pub stages: usize,
    pub test_partition: Partition,
    pub p0_margin: Vec<f64>,
    pub z: Option<ZSpec>,
    pub n: u64,
    /// n_N of every learned source; `None` skips the learned variants.
    pub source_size: Option<u64>,
    pub replicates: usize,
    pub alpha: f64,
    pub dof: DofConvention,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub statistic: String,
    pub variant: Variant,
    pub rejections: usize,
    pub used: usize,
    pub rate: f64,
    /// Binomial standard error √(rate (1 − rate) / used).
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n: u64,
    pub stages: usize,
    pub source_size: Option<u64>,
    pub replicates: usize,
    /// Replicates dropped because some block had no sample mass.
    pub excluded: usize,
    pub alpha: f64,
    pub chi_square_threshold: f64,
    pub z_threshold: Option<f64>,
    /// σ_f and σ_f^(N) as standard deviations.
    pub sigma: Option<(f64, f64)>,
    pub rates: Vec<RejectionRate>,
}

impl McReport {
    pub fn rate(&self, statistic: &str, variant: Variant) -> Option<&RejectionRate> {
        self.rates.iter().find(|r| r.statistic == statistic && r.variant == variant)
    }

    /// P(|Z_n| ≤ t) / P(|Z_n^(N)| ≤ t) and its relative Monte Carlo error.
    pub fn beta_risk_ratio(&self) -> Option<(f64, f64)> {
        let plain = self.rate("z", Variant::Plain)?;
        let raked = self.rate("z", Variant::Raked(self.stages))?;
        let b0 = 1.0 - plain.rate;
        let bn = 1.0 - raked.rate;
        if b0 <= 0.0 || bn <= 0.0 {
            return None;
        }
        let rel2 = (1.0 - b0) / (plain.used as f64 * b0) + (1.0 - bn) / (raked.used as f64 * bn);
        Some((b0 / bn, rel2.sqrt()))
    }
}

struct Decisions {
    flags: Vec<bool>,
}

pub fn level_and_power_mc(config: &McConfig) -> Result<McReport> {
    if config.replicates == 0 {
        return Err(Error::validation("replicates must be at least 1"));
    }
    if config.n == 0 {
        return Err(Error::validation("sample size must be at least 1"));
    }
    check_alpha(config.alpha)?;
    check_p0(&config.p0_margin)?;
    if config.test_partition.m() != config.p0_margin.len() {
        return Err(Error::validation("reference margin does not match the test partition"));
    }
    let exact: Vec<Vec<f64>> = config
        .rake
        .partitions()
        .iter()
        .map(|p| config.truth.margins(p))
        .collect();
    let dof = config.dof.dof(config.test_partition.m());
    let chi_threshold = chi_square_quantile(1.0 - config.alpha, dof)?;
    let learned = config.source_size.is_some();

    let sigmas = match &config.z {
        Some(z) => {
            let bridge = CovarianceModel::brownian_bridge(&config.truth);
            let s0 = bridge.variance_of(&z.function).sqrt();
            let sn = bridge
                .bridge_steps(&config.rake, config.stages)?
                .variance_of(&z.function)
                .sqrt();
            if !(sn > 0.0) {
                return Err(Error::Degenerate("raked variance of f is zero".into()));
            }
            Some((s0, sn))
        }
        None => None,
    };
    let z_t = config.z.as_ref().map(|_| z_threshold(config.alpha)).transpose()?;

    let mut labels: Vec<(&str, Variant)> = vec![("chi2", Variant::Plain), ("chi2", Variant::Raked(config.stages))];
    if learned {
        labels.push(("chi2", Variant::RakedLearned(config.stages)));
    }
    if config.z.is_some() {
        labels.push(("z", Variant::Plain));
        labels.push(("z", Variant::Raked(config.stages)));
        if learned {
            labels.push(("z", Variant::RakedLearned(config.stages)));
        }
    }

    let outcomes: Vec<Result<Option<Decisions>>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(config.seed, &[rep as u64]);
            let counts = draw_cell_counts(&config.truth, config.n, &mut rng);
            let sources = match config.source_size {
                Some(size) => Some(
                    config
                        .rake
                        .partitions()
                        .iter()
                        .map(|p| draw_learned(&config.truth, p, size, &mut rng).map(|s| s.margin()))
                        .collect::<Result<Vec<Vec<f64>>>>()?,
                ),
                None => None,
            };
            let base = RakedMeasure::<f64>::from_counts(&counts)?;
            let raked = match base.rake_steps(&config.rake, &exact, config.stages) {
                Ok(m) => m,
                Err(e) if e.is_zero_cell() => return Ok(None),
                Err(e) => return Err(e),
            };
            let learned_measure = match &sources {
                Some(margins) => match base.rake_steps(&config.rake, margins, config.stages) {
                    Ok(m) => Some(m),
                    Err(e) if e.is_zero_cell() => return Ok(None),
                    Err(e) => return Err(e),
                },
                None => None,
            };
            let mut measures = vec![&base, &raked];
            measures.extend(learned_measure.as_ref());
            let mut flags = Vec::with_capacity(labels.len());
            for m in &measures {
                let w: Vec<f64> = m.block_totals(&config.test_partition);
                flags.push(chi_square_statistic(m.n(), &w, &config.p0_margin)? > chi_threshold);
            }
            if let (Some(z), Some((s0, sn)), Some(t)) = (&config.z, sigmas, z_t) {
                let root_n = (config.n as f64).sqrt();
                for (k, m) in measures.iter().enumerate() {
                    let sigma = if k == 0 { s0 } else { sn };
                    let stat = root_n * (m.eval(&z.function) - z.p0_f) / sigma;
                    flags.push(stat.abs() > t);
                }
            }
            Ok(Some(Decisions { flags }))
        })
        .collect();

    let mut rejections = vec![0usize; labels.len()];
    let mut used = 0usize;
    let mut excluded = 0usize;
    for outcome in outcomes {
        match outcome? {
            Some(d) => {
                used += 1;
                for (r, flag) in rejections.iter_mut().zip(d.flags) {
                    *r += flag as usize;
                }
            }
            None => excluded += 1,
        }
    }
    let rates = labels
        .iter()
        .zip(rejections)
        .map(|((name, variant), rej)| {
            let rate = if used > 0 { rej as f64 / used as f64 } else { f64::NAN };
            RejectionRate {
                statistic: name.to_string(),
                variant: *variant,
                rejections: rej,
                used,
                rate,
                std_error: (rate * (1.0 - rate) / used as f64).sqrt(),
            }
        })
        .collect();
    Ok(McReport {
        n: config.n,
        stages: config.stages,
        source_size: config.source_size,
        replicates: config.replicates,
        excluded,
        alpha: config.alpha,
        chi_square_threshold: chi_threshold,
        z_threshold: z_t,
        sigma: sigmas,
        rates,
    })
}
