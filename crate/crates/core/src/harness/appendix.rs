use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{join_cells, read_sample, CellJoin, CellSpace, DeclaredPartition, FunctionOnCells, Partition, SampleSchema, WeightedSample};
use crate::raking::RakedMeasure;

/// The ten generated observations of the worked example.
pub const APPENDIX_A_CSV: &str = "X,A,B
0.953,1,1
0.975,1,1
0.058,1,1
-0.766,2,1
-0.644,2,1
-0.819,2,1
0.028,2,2
0.627,2,2
1.04,3,1
-0.904,3,2
";

pub const APPENDIX_A_MARGIN_A: [f64; 3] = [0.45, 0.35, 0.2];
pub const APPENDIX_A_MARGIN_B: [f64; 2] = [0.55, 0.45];

const TRUE_MEAN: f64 = 0.225;
const PLAIN_MEAN: f64 = 0.0548;
const ONE_STEP_WEIGHTS: [f64; 3] = [0.15, 0.07, 0.1];
const ONE_STEP_MEAN: f64 = 0.20132;
/// Printed final weights for A1∩B1, A2∩B1, A3∩B1, A2∩B2, A3∩B2.
const TABLE_WEIGHTS: [f64; 5] = [0.15, 0.024, 0.029, 0.139, 0.17];
const TABLE_CELLS: [&str; 5] = ["1|1", "2|1", "3|1", "2|2", "3|2"];
const STABLE_MEAN: f64 = 0.21193;

fn declared() -> [DeclaredPartition; 2] {
    [
        DeclaredPartition::new("A", "A", &[&["1"], &["2"], &["3"]]),
        DeclaredPartition::new("B", "B", &[&["1"], &["2"]]),
    ]
}

/// The law of the example: cell probabilities, the partitions A and B, and
/// f = E[X | cell].
pub fn appendix_a_truth() -> (CellSpace<f64>, Vec<Partition>, FunctionOnCells<f64>) {
    let join = join_cells(&declared()).expect("static partitions");
    let prob: BTreeMap<String, f64> = [
        ("1|1", 0.2),
        ("2|1", 0.25),
        ("3|1", 0.1),
        ("1|2", 0.25),
        ("2|2", 0.1),
        ("3|2", 0.1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let means: BTreeMap<String, f64> = [
        ("1|1", 0.75),
        ("2|1", -0.5),
        ("3|1", 1.0),
        ("1|2", 0.5),
        ("2|2", 0.25),
        ("3|2", -0.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let space = join.cell_space(&prob).expect("static probabilities");
    let f = FunctionOnCells::from_map("X", &space, &means).expect("static values");
    (space, join.partitions().to_vec(), f)
}

/// The observed sample mapped onto the six joined cells.
pub fn appendix_a_loaded() -> Result<(CellJoin, WeightedSample<f64>)> {
    let join = join_cells(&declared())?;
    let loaded = read_sample(APPENDIX_A_CSV.as_bytes(), &SampleSchema::new("X", &["A", "B"]))?;
    let sample = join.assign(&loaded)?;
    Ok((join, sample))
}

/// Observed values X_i in file order.
pub fn appendix_a_values() -> Vec<f64> {
    appendix_a_loaded()
        .expect("embedded data")
        .1
        .observations()
        .iter()
        .map(|o| o.value)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: Vec<f64>,
    pub actual: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, expected: &[f64], actual: &[f64], tolerance: f64) -> Self {
        let pass = expected.len() == actual.len()
            && expected.iter().zip(actual).all(|(e, a)| (e - a).abs() <= tolerance);
        Check {
            name: name.to_string(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
            tolerance,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixAReport {
    pub margin_a: Vec<f64>,
    pub margin_b: Vec<f64>,
    pub plain_mean: f64,
    /// Individual weights in A1, A2, A3 after one step on A.
    pub one_step_weights: Vec<f64>,
    pub one_step_mean: f64,
    /// Stabilized individual weight per nonempty cell.
    pub stabilized_weights: BTreeMap<String, f64>,
    pub stabilized_mean: f64,
    pub converged: bool,
    pub cycles: usize,
    pub true_mean: f64,
    pub checks: Vec<Check>,
}

impl AppendixAReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn appendix_a_scenario() -> Result<AppendixAReport> {
    appendix_a_with_margins(APPENDIX_A_MARGIN_A, APPENDIX_A_MARGIN_B)
}

/// The worked example with user-chosen margins, checked against the
/// published numbers (so any other margins act as a negative control).
pub fn appendix_a_with_margins(margin_a: [f64; 3], margin_b: [f64; 2]) -> Result<AppendixAReport> {
    let (join, sample) = appendix_a_loaded()?;
    let parts = join.partitions();
    let seq_margins = vec![margin_a.to_vec(), margin_b.to_vec()];
    let measure = RakedMeasure::from_sample(sample);
    let cell = |id: &str| join.cells().iter().position(|c| c == id).expect("joined cell");

    let plain_mean = measure.mean_of_values().expect("observations attached");
    let one = measure.ratio_step(&parts[0], &margin_a)?;
    let one_step_weights: Vec<f64> = ["1|1", "2|1", "3|1"]
        .iter()
        .map(|id| one.individual_weight(cell(id)).expect("nonempty cell"))
        .collect();
    let one_step_mean = one.mean_of_values().expect("observations attached");

    let seq = crate::model::PartitionSequence::from_margins(parts.to_vec(), &seq_margins)?;
    let stable = measure.rake_to_stability(&seq, &seq_margins, 1e-13, 10_000)?;
    let stabilized_weights: BTreeMap<String, f64> = join
        .cells()
        .iter()
        .enumerate()
        .filter_map(|(c, id)| stable.measure.individual_weight(c).map(|w| (id.clone(), w)))
        .collect();
    let table: Vec<f64> = TABLE_CELLS.iter().map(|id| stabilized_weights[*id]).collect();
    let stabilized_mean = stable.measure.mean_of_values().expect("observations attached");

    let closer = (stabilized_mean - TRUE_MEAN).abs() < (plain_mean - TRUE_MEAN).abs();
    let checks = vec![
        Check::new("plain mean", &[PLAIN_MEAN], &[plain_mean], 1e-12),
        Check::new("one-step weights", &ONE_STEP_WEIGHTS, &one_step_weights, 1e-12),
        Check::new("one-step mean", &[ONE_STEP_MEAN], &[one_step_mean], 1e-9),
        Check::new("stabilized weights", &TABLE_WEIGHTS, &table, 5e-4),
        Check::new("stabilized mean", &[STABLE_MEAN], &[stabilized_mean], 1e-3),
        Check {
            name: "stabilized mean closer to P(X)".into(),
            expected: vec![TRUE_MEAN],
            actual: vec![stabilized_mean, plain_mean],
            tolerance: 0.0,
            pass: closer,
        },
    ];
    Ok(AppendixAReport {
        margin_a: margin_a.to_vec(),
        margin_b: margin_b.to_vec(),
        plain_mean,
        one_step_weights,
        one_step_mean,
        stabilized_weights,
        stabilized_mean,
        converged: stable.converged,
        cycles: stable.cycles,
        true_mean: TRUE_MEAN,
        checks,
    })
}
