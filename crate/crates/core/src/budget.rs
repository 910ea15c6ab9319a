//! Splitting a budget B between n primary observations at unit cost C and
//! n0 auxiliary-source observations at unit cost c0, subject to
//! C n + c0 n0 ≤ B.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entropy regime of the function class, fixing the rate v_n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Polynomial entropy: v_n = n^(−α0) (log n)^β0 with α0 = 1/(2+5ν0)
    /// and β0 = (4+5ν0)/(4+10ν0).
    Vc { nu0: f64 },
    /// Bracketing: v_n = (log n)^(−γ0) with γ0 = (1−r0)/(2r0).
    Br { r0: f64 },
    /// v_n ≡ 1, for testing.
    Unit,
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regime::Vc { nu0 } if !(nu0 > 0.0 && nu0.is_finite()) => {
                Err(Error::validation(format!("nu0 = {nu0} must be positive")))
            }
            Regime::Br { r0 } if !(r0 > 0.0 && r0 < 1.0) => {
                Err(Error::validation(format!("r0 = {r0} must lie in (0,1)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Vc { nu0 } => write!(f, "vc:{nu0}"),
            Regime::Br { r0 } => write!(f, "br:{r0}"),
            Regime::Unit => write!(f, "unit"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    /// `vc:<nu0>`, `br:<r0>` or `unit`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("regime '{s}' is not vc:<nu0>, br:<r0> or unit"));
        if s == "unit" {
            return Ok(Regime::Unit);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let regime = match kind {
            "vc" => Regime::Vc { nu0: value },
            "br" => Regime::Br { r0: value },
            _ => return Err(bad()),
        };
        regime.validate()?;
        Ok(regime)
    }
}

pub fn rate_vn(regime: Regime, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::validation("v_n needs n >= 2"));
    }
    regime.validate()?;
    let nf = n as f64;
    Ok(match regime {
        Regime::Vc { nu0 } => {
            let a0 = 1.0 / (2.0 + 5.0 * nu0);
            let b0 = (4.0 + 5.0 * nu0) / (4.0 + 10.0 * nu0);
            nf.powf(-a0) * nf.ln().powf(b0)
        }
        Regime::Br { r0 } => {
            let g0 = (1.0 - r0) / (2.0 * r0);
            nf.ln().powf(-g0)
        }
        Regime::Unit => 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Total budget B.
    pub total: f64,
    /// Cost C of one primary observation.
    pub unit_cost: f64,
    /// Cost c0 of one auxiliary-source observation.
    pub source_cost: f64,
    pub regime: Regime,
}

impl BudgetSpec {
    pub fn new(total: f64, unit_cost: f64, source_cost: f64, regime: Regime) -> Result<Self> {
        let spec = BudgetSpec {
            total,
            unit_cost,
            source_cost,
            regime,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.total, self.unit_cost, self.source_cost].iter().all(|v| v.is_finite());
        if !finite || !(self.total > 0.0) || !(self.source_cost > 0.0) {
            return Err(Error::validation("B, C and c0 must be positive and finite"));
        }
        if self.source_cost > self.unit_cost {
            return Err(Error::validation(format!(
                "c0 = {} exceeds C = {}",
                self.source_cost, self.unit_cost
            )));
        }
        self.regime.validate()
    }

    pub fn cost(&self, n: u64, n0: u64) -> f64 {
        self.unit_cost * n as f64 + self.source_cost * n0 as f64
    }

    fn affordable(&self, n: u64, n0: u64) -> bool {
        self.cost(n, n0) <= self.total
    }
}

/// ⌊(√(C² + 4 c0 B) − C) / (2 c0)⌋, the largest n with C n + c0 n² ≤ B.
pub fn n_min(spec: &BudgetSpec) -> u64 {
    let (b, c, c0) = (spec.total, spec.unit_cost, spec.source_cost);
    // rationalized to avoid cancellation when c0 B ≪ C²
    let root = 2.0 * b / ((c * c + 4.0 * c0 * b).sqrt() + c);
    let mut n = root.floor().max(0.0) as u64;
    let fits = |n: u64| c * n as f64 + c0 * (n as f64) * (n as f64) <= b;
    while n > 0 && !fits(n) {
        n -= 1;
    }
    while fits(n + 1) {
        n += 1;
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Largest n whose source requirement n0 = ⌈n log n / v_n²⌉ still fits.
    RateBalanced,
    /// n = n_min and the remainder spent on the sources.
    SpendAll,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate_balanced" | "rate-balanced" => Ok(Strategy::RateBalanced),
            "spend_all" | "spend-all" => Ok(Strategy::SpendAll),
            other => Err(Error::validation(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub strategy: Strategy,
    pub n: u64,
    pub n0: u64,
    pub feasible: bool,
    pub cost: f64,
    /// B − cost.
    pub residual: f64,
    pub n_min: u64,
    /// v_n at the chosen n (absent for n < 2).
    pub v_n: Option<f64>,
    /// √(n log n / n0) ≤ v_n.
    pub rate_dominated: bool,
    /// n0 / n.
    pub source_ratio: Option<f64>,
    /// Whether the cost was nondecreasing in n on the scanned range.
    pub monotone: bool,
}

/// Smallest n0 with √(n log n / n0) ≤ v_n, and at least one.
pub fn required_sources(regime: Regime, n: u64) -> Result<u64> {
    if n < 2 {
        return Ok(1);
    }
    let v = rate_vn(regime, n)?;
    let nf = n as f64;
    Ok(((nf * nf.ln() / (v * v)).ceil() as u64).max(1))
}

pub fn allocate(spec: &BudgetSpec, strategy: Strategy) -> Result<Allocation> {
    spec.validate()?;
    let floor_n = n_min(spec);
    let (n, n0, monotone) = if spec.total < spec.unit_cost + spec.source_cost {
        (0, 0, true)
    } else {
        match strategy {
            Strategy::SpendAll => {
                let n = floor_n;
                let mut n0 = ((spec.total - spec.unit_cost * n as f64) / spec.source_cost).floor() as u64;
                while n0 > 0 && !spec.affordable(n, n0) {
                    n0 -= 1;
                }
                (n, n0, true)
            }
            Strategy::RateBalanced => rate_balanced(spec, floor_n)?,
        }
    };
    let feasible = n >= 1 && n0 >= 1 && spec.affordable(n, n0);
    let v_n = if n >= 2 { Some(rate_vn(spec.regime, n)?) } else { None };
    let rate_dominated = match v_n {
        Some(v) => n0 > 0 && (n as f64 * (n as f64).ln() / n0 as f64).sqrt() <= v,
        None => n0 >= 1,
    };
    let cost = spec.cost(n, n0);
    Ok(Allocation {
        strategy,
        n,
        n0,
        feasible,
        cost,
        residual: spec.total - cost,
        n_min: floor_n,
        v_n,
        rate_dominated,
        source_ratio: (n > 0).then(|| n0 as f64 / n as f64),
        monotone,
    })
}

/// Scans upward from n_min while the balanced cost fits. When the rate is
/// too small for n_min to fit, scans downward instead.
fn rate_balanced(spec: &BudgetSpec, start: u64) -> Result<(u64, u64, bool)> {
    let cost_at = |n: u64| -> Result<(u64, f64)> {
        let n0 = required_sources(spec.regime, n)?;
        Ok((n0, spec.cost(n, n0)))
    };
    let mut n = start.max(1);
    let (mut n0, mut cost) = cost_at(n)?;
    let mut monotone = true;
    if cost > spec.total {
        while n > 1 {
            n -= 1;
            let (k, c) = cost_at(n)?;
            monotone &= c <= cost;
            n0 = k;
            cost = c;
            if cost <= spec.total {
                return Ok((n, n0, monotone));
            }
        }
        return Ok((0, 0, monotone));
    }
    loop {
        let (k, c) = cost_at(n + 1)?;
        monotone &= c >= cost;
        if c > spec.total {
            return Ok((n, n0, monotone));
        }
        n += 1;
        n0 = k;
        cost = c;
    }
}
