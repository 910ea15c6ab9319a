use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxinfo::{draw_learned, lambda_prime, AuxSource};
use crate::config::SourceSize;
use crate::error::{Error, Result};
use crate::model::{CellSpace, FunctionOnCells, PartitionSequence};
use crate::raking::RakedMeasure;
use crate::rng::{draw_cell_counts, stream};

const TAG_SAMPLE: u64 = 1;
const TAG_SOURCE: u64 = 2;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub truth: CellSpace<f64>,
    pub sequence: PartitionSequence<f64>,
    pub functions: Vec<FunctionOnCells<f64>>,
    pub n_grid: Vec<u64>,
    pub source_sizes: Vec<SourceSize>,
    /// Ratio steps N0, following the sequence cyclically.
    pub stages: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.source_sizes.is_empty() {
            return Err(Error::validation("n grid and source-size grid must be nonempty"));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::validation("sample sizes must be positive"));
        }
        if self.replicates == 0 {
            return Err(Error::validation("replicates must be at least 1"));
        }
        if self.functions.is_empty() {
            return Err(Error::validation("no functions to track"));
        }
        if let Some(f) = self.functions.iter().find(|f| f.len() != self.truth.len()) {
            return Err(Error::validation(format!("function '{}' does not match the cells", f.name())));
        }
        Ok(())
    }
}

/// One replicate at one (n, n_N) grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: u64,
    pub source_size: SourceSize,
    pub replicate: usize,
    /// α_n^(N)(f) indexed [N][f] for N = 0..=N0.
    pub alpha: Vec<Vec<f64>>,
    /// α̃_n^(N)(f) indexed the same way.
    pub alpha_learned: Vec<Vec<f64>>,
    /// Λ_n: sup over stages and functions of |α| and |α̃|.
    pub lambda: f64,
    /// Λ'_n.
    pub lambda_prime: f64,
    /// sup_{N ≤ N0} ||α̃_n^(N) − α_n^(N)||_F.
    pub sup_deviation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCount {
    pub n: u64,
    pub source_size: SourceSize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub functions: Vec<String>,
    pub stages: usize,
    pub records: Vec<ReplicateRecord>,
    pub excluded: Vec<ExcludedCount>,
}

impl Simulation {
    pub fn at(&self, n: u64, source_size: SourceSize) -> impl Iterator<Item = &ReplicateRecord> {
        self.records
            .iter()
            .filter(move |r| r.n == n && r.source_size == source_size)
    }

    pub fn excluded_at(&self, n: u64, source_size: SourceSize) -> usize {
        self.excluded
            .iter()
            .find(|e| e.n == n && e.source_size == source_size)
            .map_or(0, |e| e.count)
    }
}

/// Process values at stages 0..=steps, or `None` if some block empties.
fn trajectory(
    start: &RakedMeasure<f64>,
    seq: &PartitionSequence<f64>,
    margins: &[Vec<f64>],
    steps: usize,
    functions: &[FunctionOnCells<f64>],
    means: &[f64],
) -> Result<Option<Vec<Vec<f64>>>> {
    let root_n = (start.n() as f64).sqrt();
    let values = |m: &RakedMeasure<f64>| -> Vec<f64> {
        functions
            .iter()
            .zip(means)
            .map(|(f, mean)| root_n * (m.eval(f) - mean))
            .collect()
    };
    let mut m = start.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(values(&m));
    for k in 0..steps {
        let i = k % seq.len();
        match m.apply_step(&seq.partitions()[i], &margins[i]) {
            Ok(()) => out.push(values(&m)),
            Err(e) if e.is_zero_cell() => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(out))
}

/// Draws, for every n and replicate, one primary sample shared by all
/// source sizes, rakes it with exact and with learned margins, and records
/// both processes. Replicates whose raking hits an empty block are counted
/// and left out.
pub fn simulate_processes(config: &ExperimentConfig) -> Result<Simulation> {
    config.validate()?;
    let seq = &config.sequence;
    let exact: Vec<Vec<f64>> = seq.partitions().iter().map(|p| config.truth.margins(p)).collect();
    let means: Vec<f64> = config.functions.iter().map(|f| config.truth.expectation(f)).collect();

    let jobs: Vec<(usize, usize)> = (0..config.n_grid.len())
        .flat_map(|i| (0..config.replicates).map(move |r| (i, r)))
        .collect();
    type JobOutcome = Result<Vec<(usize, Option<ReplicateRecord>)>>;
    let per_job: Vec<JobOutcome> = jobs
        .par_iter()
        .map(|&(i, rep)| {
            let n = config.n_grid[i];
            let mut rng = stream(config.seed, &[TAG_SAMPLE, i as u64, rep as u64]);
            let counts = draw_cell_counts(&config.truth, n, &mut rng);
            let base = RakedMeasure::<f64>::from_counts(&counts)?;
            let alpha = trajectory(&base, seq, &exact, config.stages, &config.functions, &means)?;
            let mut out = Vec::with_capacity(config.source_sizes.len());
            for (k, &size) in config.source_sizes.iter().enumerate() {
                let Some(alpha) = alpha.as_ref() else {
                    out.push((k, None));
                    continue;
                };
                let (learned, lp) = match size {
                    SourceSize::Exact => (Some(alpha.clone()), 0.0),
                    SourceSize::Finite(n_n) => {
                        let mut src_rng = stream(config.seed, &[TAG_SOURCE, i as u64, rep as u64, k as u64]);
                        let sources = seq
                            .partitions()
                            .iter()
                            .map(|p| draw_learned(&config.truth, p, n_n, &mut src_rng))
                            .collect::<Result<Vec<AuxSource<f64>>>>()?;
                        let margins: Vec<Vec<f64>> = sources.iter().map(|s| s.margin()).collect();
                        let lp = lambda_prime(&config.truth, seq, &sources);
                        (trajectory(&base, seq, &margins, config.stages, &config.functions, &means)?, lp)
                    }
                };
                let record = learned.map(|alpha_learned| {
                    let mut lambda: f64 = 0.0;
                    let mut dev: f64 = 0.0;
                    for (a, b) in alpha.iter().zip(&alpha_learned) {
                        for (x, y) in a.iter().zip(b) {
                            lambda = lambda.max(x.abs()).max(y.abs());
                            dev = dev.max((x - y).abs());
                        }
                    }
                    ReplicateRecord {
                        n,
                        source_size: size,
                        replicate: rep,
                        alpha: alpha.clone(),
                        alpha_learned,
                        lambda,
                        lambda_prime: lp,
                        sup_deviation: dev,
                    }
                });
                out.push((k, record));
            }
            Ok(out)
        })
        .collect();

    let mut records = Vec::new();
    let mut excluded: Vec<ExcludedCount> = config
        .n_grid
        .iter()
        .flat_map(|&n| {
            config.source_sizes.iter().map(move |&s| ExcludedCount {
                n,
                source_size: s,
                count: 0,
            })
        })
        .collect();
    for (job, result) in jobs.iter().zip(per_job) {
        for (k, record) in result? {
            match record {
                Some(r) => records.push(r),
                None => excluded[job.0 * config.source_sizes.len() + k].count += 1,
            }
        }
    }
    Ok(Simulation {
        functions: config.functions.iter().map(|f| f.name().to_string()).collect(),
        stages: config.stages,
        records,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::appendix_a_truth;

    fn config(sizes: Vec<SourceSize>, replicates: usize) -> ExperimentConfig {
        let (truth, partitions, f) = appendix_a_truth();
        ExperimentConfig {
            sequence: PartitionSequence::new(&truth, partitions).unwrap(),
            truth,
            functions: vec![f],
            n_grid: vec![200],
            source_sizes: sizes,
            stages: 2,
            replicates,
            seed: 5,
        }
    }

    #[test]
    fn exact_sources_give_zero_deviation() {
        let sim = simulate_processes(&config(vec![SourceSize::Exact], 20)).unwrap();
        assert_eq!(sim.records.len() + sim.excluded_at(200, SourceSize::Exact), 20);
        for r in &sim.records {
            assert_eq!(r.alpha, r.alpha_learned);
            assert_eq!(r.sup_deviation, 0.0);
            assert_eq!(r.lambda_prime, 0.0);
            assert_eq!(r.alpha.len(), 3);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let c = config(vec![SourceSize::Finite(10_000), SourceSize::Exact], 16);
        assert_eq!(simulate_processes(&c).unwrap(), simulate_processes(&c).unwrap());
    }

    #[test]
    fn primary_sample_shared_across_sources() {
        let sim = simulate_processes(&config(vec![SourceSize::Finite(5_000), SourceSize::Finite(50_000)], 8)).unwrap();
        for rep in 0..8 {
            let rows: Vec<_> = sim.records.iter().filter(|r| r.replicate == rep).collect();
            if rows.len() == 2 {
                assert_eq!(rows[0].alpha, rows[1].alpha);
                assert_ne!(rows[0].alpha_learned, rows[1].alpha_learned);
            }
        }
    }

    #[test]
    fn rejects_empty_grids() {
        let mut c = config(vec![], 1);
        assert!(simulate_processes(&c).is_err());
        c.source_sizes = vec![SourceSize::Exact];
        c.replicates = 0;
        assert!(simulate_processes(&c).is_err());
    }
}
