#![allow(dead_code)]

use std::collections::BTreeMap;

use rakeflow::budget::{BudgetSpec, Regime};
use rakeflow::model::{join_cells, CellJoin, CellSpace, DeclaredPartition, FunctionOnCells, Partition};
use rand::Rng;

/// A product table over independent label columns, one partition per column
/// plus an optional two-block coarsening of the first column.
pub struct Table {
    pub join: CellJoin,
    pub space: CellSpace<f64>,
    pub partitions: Vec<Partition>,
}

fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

pub fn declared(dims: &[usize], coarsen_first: bool) -> Vec<DeclaredPartition> {
    let mut out: Vec<DeclaredPartition> = dims
        .iter()
        .enumerate()
        .map(|(c, &k)| DeclaredPartition {
            name: format!("P{c}"),
            column: format!("c{c}"),
            blocks: labels(k).into_iter().map(|l| vec![l]).collect(),
        })
        .collect();
    if coarsen_first && dims[0] >= 3 {
        let all = labels(dims[0]);
        out.push(DeclaredPartition {
            name: "P0coarse".into(),
            column: "c0".into(),
            blocks: vec![all[..1].to_vec(), all[1..].to_vec()],
        });
    }
    out
}

/// Cell identifiers in row-major order of the label indices.
pub fn cell_ids(dims: &[usize]) -> Vec<String> {
    let mut ids = vec![String::new()];
    for &k in dims {
        let mut next = Vec::new();
        for prefix in &ids {
            for l in 0..k {
                next.push(if prefix.is_empty() {
                    l.to_string()
                } else {
                    format!("{prefix}|{l}")
                });
            }
        }
        ids = next;
    }
    ids
}

pub fn table(dims: &[usize], prob: &[f64], coarsen_first: bool) -> Table {
    let join = join_cells(&declared(dims, coarsen_first)).unwrap();
    let map: BTreeMap<String, f64> = cell_ids(dims).into_iter().zip(prob.iter().cloned()).collect();
    let space = join.cell_space(&map).unwrap();
    let partitions = join.partitions().to_vec();
    Table {
        join,
        space,
        partitions,
    }
}

pub fn random_probs<R: Rng>(k: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// 2 or 3 columns with at most 12 cells.
pub fn random_dims<R: Rng>(rng: &mut R) -> Vec<usize> {
    loop {
        let cols = rng.random_range(2..=3);
        let dims: Vec<usize> = (0..cols).map(|_| rng.random_range(2..=4)).collect();
        if dims.iter().product::<usize>() <= 12 {
            return dims;
        }
    }
}

pub fn random_function<R: Rng>(name: &str, k: usize, rng: &mut R) -> FunctionOnCells<f64> {
    FunctionOnCells::new(name, (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// argmin Σ p log(p/q) over 3×3 tables with row sums `r` and column sums
/// `c`, by damped Newton on the four free entries p11, p12, p21, p22.
pub fn kl_projection_3x3(q: &[f64; 9], r: &[f64; 3], c: &[f64; 3]) -> [f64; 9] {
    let fill = |x: &[f64; 4]| -> [f64; 9] {
        let p13 = r[0] - x[0] - x[1];
        let p23 = r[1] - x[2] - x[3];
        let p31 = c[0] - x[0] - x[2];
        let p32 = c[1] - x[1] - x[3];
        let p33 = r[2] - p31 - p32;
        [x[0], x[1], p13, x[2], x[3], p23, p31, p32, p33]
    };
    let objective = |p: &[f64; 9]| -> f64 {
        if p.iter().any(|v| *v <= 0.0) {
            return f64::INFINITY;
        }
        p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
    };
    // d p / d x for each free coordinate: +1 on itself, −1 on its row and
    // column completions, +1 on the corner.
    let dirs: [[f64; 9]; 4] = [
        [1., 0., -1., 0., 0., 0., -1., 0., 1.],
        [0., 1., -1., 0., 0., 0., 0., -1., 1.],
        [0., 0., 0., 1., 0., -1., -1., 0., 1.],
        [0., 0., 0., 0., 1., -1., 0., -1., 1.],
    ];
    let mut x = [r[0] * c[0], r[0] * c[1], r[1] * c[0], r[1] * c[1]];
    for _ in 0..200 {
        let p = fill(&x);
        let mut g = [0.0; 4];
        let mut h = [[0.0; 4]; 4];
        for a in 0..4 {
            for k in 0..9 {
                g[a] += dirs[a][k] * ((p[k] / q[k]).ln() + 1.0);
            }
            for b in 0..4 {
                for k in 0..9 {
                    h[a][b] += dirs[a][k] * dirs[b][k] / p[k];
                }
            }
        }
        let step = solve4(h, g);
        let f0 = objective(&p);
        let mut t = 1.0;
        loop {
            let trial: [f64; 4] = std::array::from_fn(|i| x[i] - t * step[i]);
            if objective(&fill(&trial)) <= f0 || t < 1e-12 {
                x = trial;
                break;
            }
            t *= 0.5;
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-15 {
            break;
        }
    }
    fill(&x)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// v_n written out independently of the library.
pub fn oracle_vn(regime: Regime, n: u64) -> f64 {
    let x = n as f64;
    match regime {
        Regime::Vc { nu0 } => x.powf(-1.0 / (2.0 + 5.0 * nu0)) * x.ln().powf((4.0 + 5.0 * nu0) / (4.0 + 10.0 * nu0)),
        Regime::Br { r0 } => x.ln().powf(-(1.0 - r0) / (2.0 * r0)),
        Regime::Unit => 1.0,
    }
}

/// Largest n ≤ ⌊B/C⌋ whose balanced source count fits, by exhaustive scan.
pub fn oracle_rate_balanced(spec: &BudgetSpec) -> Option<(u64, u64)> {
    let top = (spec.total / spec.unit_cost).floor() as u64;
    let mut best = None;
    for n in 1..=top {
        let n0 = if n < 2 {
            1
        } else {
            let v = oracle_vn(spec.regime, n);
            ((n as f64 * (n as f64).ln() / (v * v)).ceil() as u64).max(1)
        };
        if spec.unit_cost * n as f64 + spec.source_cost * n0 as f64 <= spec.total {
            best = Some((n, n0));
        }
    }
    best
}
