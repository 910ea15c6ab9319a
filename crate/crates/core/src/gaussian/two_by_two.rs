//! Two alternating two-block partitions {A, Aᶜ} and {B, Bᶜ}: closed forms
//! for σ_f^(1), σ_f^(2) and the stabilized variance σ_f^(∞), together with
//! every intermediate of the derivation of σ_f^(∞).
//!
//! Functions are given by their values on the four cells in the canonical
//! order [A∩B, A∩Bᶜ, Aᶜ∩B, Aᶜ∩Bᶜ].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellSpace, FunctionOnCells, Partition, PartitionSequence};
use crate::scalar::Scalar;

pub type Mat2<T> = [[T; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwoSpec<T> {
    p_a: T,
    p_b: T,
    p_ab: T,
}

/// Moments of f under a two-by-two law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub mean: T,
    pub variance: T,
    pub e_a: T,
    pub e_not_a: T,
    pub e_b: T,
    pub e_not_b: T,
    /// E[f|A] − E[f].
    pub delta_a: T,
    /// E[f|B] − E[f].
    pub delta_b: T,
}

/// Intermediates of the stabilized-limit derivation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixB<T> {
    /// Rows (P(A|B), P(Aᶜ|B)) and (P(A|Bᶜ), P(Aᶜ|Bᶜ)).
    pub p_a_given_b: Mat2<T>,
    /// Rows (P(B|A), P(Bᶜ|A)) and (P(B|Aᶜ), P(Bᶜ|Aᶜ)).
    pub p_b_given_a: Mat2<T>,
    /// Second eigenvalue of both products of the stochastic matrices.
    pub t: T,
    pub u1: Mat2<T>,
    pub u2: Mat2<T>,
    pub v1: [T; 2],
    pub v2: [T; 2],
    pub s1_even: [T; 2],
    pub s2_odd: [T; 2],
    pub c1_even: T,
    pub c2_odd: T,
    /// f + p_B C_{1,even} 1_A + p_A C_{2,odd} 1_B on the four cells; its
    /// stage-0 bridge has the law of G^(∞)(f).
    pub limit_function: [T; 4],
}

/// The two-by-two law as a cell space with its two partitions.
#[derive(Clone, Debug)]
pub struct TwoByTwoLayout<T> {
    pub space: CellSpace<T>,
    pub a: Partition,
    pub b: Partition,
    /// Cell-space index of each canonical cell.
    pub index: [usize; 4],
}

const CELL_IDS: [&str; 4] = ["A|B", "A|Bc", "Ac|B", "Ac|Bc"];

fn two<T: Scalar>() -> T {
    T::one() + T::one()
}

impl<T: Scalar> TwoByTwoSpec<T> {
    /// Requires a nondegenerate table: all four cells strictly positive
    /// and A, B not perfectly dependent.
    pub fn new(p_a: T, p_b: T, p_ab: T) -> Result<Self> {
        let zero = T::zero();
        let one = T::one();
        let lower = {
            let s = p_a.clone() + p_b.clone() - one.clone();
            if s > zero {
                s
            } else {
                zero.clone()
            }
        };
        let upper = if p_a < p_b { p_a.clone() } else { p_b.clone() };
        if !(p_a > zero && p_a < one && p_b > zero && p_b < one) {
            return Err(Error::Degenerate("p_A and p_B must lie in (0,1)".into()));
        }
        if !(p_ab > lower && p_ab < upper) {
            return Err(Error::Degenerate(format!(
                "p_AB = {p_ab:?} outside ({lower:?}, {upper:?})"
            )));
        }
        let spec = TwoByTwoSpec { p_a, p_b, p_ab };
        if spec.denominator() <= zero {
            return Err(Error::Degenerate("A and B are perfectly dependent".into()));
        }
        Ok(spec)
    }

    pub fn p_a(&self) -> &T {
        &self.p_a
    }

    pub fn p_b(&self) -> &T {
        &self.p_b
    }

    pub fn p_ab(&self) -> &T {
        &self.p_ab
    }

    fn p_not_a(&self) -> T {
        T::one() - self.p_a.clone()
    }

    fn p_not_b(&self) -> T {
        T::one() - self.p_b.clone()
    }

    fn cov_ab(&self) -> T {
        self.p_ab.clone() - self.p_a.clone() * self.p_b.clone()
    }

    /// p_A p_B p_Aᶜ p_Bᶜ − (p_AB − p_A p_B)².
    pub fn denominator(&self) -> T {
        let c = self.cov_ab();
        self.p_a.clone() * self.p_b.clone() * self.p_not_a() * self.p_not_b() - c.clone() * c
    }

    /// Probabilities of [A∩B, A∩Bᶜ, Aᶜ∩B, Aᶜ∩Bᶜ].
    pub fn cell_probs(&self) -> [T; 4] {
        let (a, b, ab) = (self.p_a.clone(), self.p_b.clone(), self.p_ab.clone());
        [
            ab.clone(),
            a.clone() - ab.clone(),
            b.clone() - ab.clone(),
            T::one() - a - b + ab,
        ]
    }

    pub fn layout(&self) -> Result<TwoByTwoLayout<T>> {
        let space = CellSpace::new(
            CELL_IDS.iter().map(|s| s.to_string()).collect(),
            self.cell_probs().to_vec(),
        )?;
        let a = Partition::from_cell_ids(1, "A", &space, &[vec!["A|B", "A|Bc"], vec!["Ac|B", "Ac|Bc"]])?;
        let b = Partition::from_cell_ids(2, "B", &space, &[vec!["A|B", "Ac|B"], vec!["A|Bc", "Ac|Bc"]])?;
        let index = CELL_IDS.map(|id| space.index_of(id).expect("known cell"));
        Ok(TwoByTwoLayout { space, a, b, index })
    }

    pub fn moments(&self, f: &[T; 4]) -> Moments<T> {
        let p = self.cell_probs();
        let mean = (0..4).fold(T::zero(), |acc, k| acc + p[k].clone() * f[k].clone());
        let variance = (0..4).fold(T::zero(), |acc, k| {
            let d = f[k].clone() - mean.clone();
            acc + p[k].clone() * d.clone() * d
        });
        let e_a = (p[0].clone() * f[0].clone() + p[1].clone() * f[1].clone()) / self.p_a.clone();
        let e_not_a = (p[2].clone() * f[2].clone() + p[3].clone() * f[3].clone()) / self.p_not_a();
        let e_b = (p[0].clone() * f[0].clone() + p[2].clone() * f[2].clone()) / self.p_b.clone();
        let e_not_b = (p[1].clone() * f[1].clone() + p[3].clone() * f[3].clone()) / self.p_not_b();
        Moments {
            delta_a: e_a.clone() - mean.clone(),
            delta_b: e_b.clone() - mean.clone(),
            mean,
            variance,
            e_a,
            e_not_a,
            e_b,
            e_not_b,
        }
    }

    /// σ_f^(1) = σ_f − p_A p_Aᶜ (E[f|A] − E[f|Aᶜ])².
    pub fn sigma1_closed(&self, f: &[T; 4]) -> T {
        let m = self.moments(f);
        let gap_a = m.e_a - m.e_not_a;
        m.variance - self.p_a.clone() * self.p_not_a() * gap_a.clone() * gap_a
    }

    /// σ_f^(2) after raking on A then B:
    /// σ_f − p_B p_Bᶜ g_B² − p_A p_Aᶜ (g_A − (p_AB − p_A p_B)/(p_A p_Aᶜ) g_B)²
    /// with g_A = E[f|A] − E[f|Aᶜ] and g_B = E[f|B] − E[f|Bᶜ]. The bracket
    /// is the contrast of E[f|𝒜] − P_{ℬ|𝒜} E[f|ℬ].
    pub fn sigma2_closed(&self, f: &[T; 4]) -> T {
        let m = self.moments(f);
        let gap_a = m.e_a - m.e_not_a;
        let gap_b = m.e_b - m.e_not_b;
        let var_a = self.p_a.clone() * self.p_not_a();
        let var_b = self.p_b.clone() * self.p_not_b();
        let residual = gap_a - self.cov_ab() / var_a.clone() * gap_b.clone();
        m.variance - var_b * gap_b.clone() * gap_b - var_a * residual.clone() * residual
    }

    /// σ_f^(∞), the variance of the stabilized limit.
    pub fn sigma_inf_closed(&self, f: &[T; 4]) -> T {
        let m = self.moments(f);
        let (pa, pb, pab) = (self.p_a.clone(), self.p_b.clone(), self.p_ab.clone());
        let (da, db) = (m.delta_a.clone(), m.delta_b.clone());
        let diff = da.clone() - db.clone();
        let numer = pa.clone() * da.clone() * da.clone() + pb.clone() * db.clone() * db.clone()
            - pa.clone() * pb.clone() * diff.clone() * diff
            - two::<T>() * pab * da * db;
        m.variance - pa * pb * numer / self.denominator()
    }

    pub fn appendix_b(&self, f: &[T; 4]) -> AppendixB<T> {
        let m = self.moments(f);
        let one = T::one();
        let (pa, pb, pab) = (self.p_a.clone(), self.p_b.clone(), self.p_ab.clone());
        let (pna, pnb) = (self.p_not_a(), self.p_not_b());

        let a_b = pab.clone() / pb.clone();
        let a_nb = (pa.clone() - pab.clone()) / pnb.clone();
        let p_a_given_b = [
            [a_b.clone(), one.clone() - a_b],
            [a_nb.clone(), one.clone() - a_nb],
        ];
        let b_a = pab.clone() / pa.clone();
        let b_na = (pb.clone() - pab.clone()) / pna.clone();
        let p_b_given_a = [
            [b_a.clone(), one.clone() - b_a],
            [b_na.clone(), one.clone() - b_na],
        ];
        let cov = self.cov_ab();
        let t = cov.clone() * cov / (pa.clone() * pna.clone() * pb.clone() * pnb.clone());

        let e_a_vec = [m.e_a.clone(), m.e_not_a.clone()];
        let e_b_vec = [m.e_b.clone(), m.e_not_b.clone()];
        let v1 = sub2(&e_a_vec, &mat_vec(&p_b_given_a, &e_b_vec));
        let v2 = sub2(&e_b_vec, &mat_vec(&p_a_given_b, &e_a_vec));

        let u1 = [
            [one.clone(), pna.clone() / pa.clone()],
            [one.clone(), -one.clone()],
        ];
        let u2 = [
            [one.clone(), pnb.clone() / pb.clone()],
            [one.clone(), -one.clone()],
        ];
        let s1_even = resolvent(&u1, &t, &v1);
        let s2_odd = resolvent(&u2, &t, &v2);

        let den = self.denominator();
        let c1_even = (m.e_b.clone() * self.cov_ab() - m.e_a.clone() * pa.clone() * pnb.clone()
            - m.mean.clone() * (pab.clone() - pa.clone()))
            / den.clone();
        let c2_odd = (m.e_a.clone() * self.cov_ab() - m.e_b.clone() * pna.clone() * pb.clone()
            - m.mean.clone() * (pab - pb.clone()))
            / den;

        let bump_a = pb * c1_even.clone();
        let bump_b = pa * c2_odd.clone();
        let limit_function = [
            f[0].clone() + bump_a.clone() + bump_b.clone(),
            f[1].clone() + bump_a,
            f[2].clone() + bump_b,
            f[3].clone(),
        ];
        AppendixB {
            p_a_given_b,
            p_b_given_a,
            t,
            u1,
            u2,
            v1,
            v2,
            s1_even,
            s2_odd,
            c1_even,
            c2_odd,
            limit_function,
        }
    }
}

impl<T: Scalar> TwoByTwoLayout<T> {
    /// A canonical-order function as a function on the cell space.
    pub fn function(&self, name: &str, f: &[T; 4]) -> FunctionOnCells<T> {
        let mut values = vec![T::zero(); 4];
        for k in 0..4 {
            values[self.index[k]] = f[k].clone();
        }
        FunctionOnCells::new(name, values).expect("finite values")
    }

    /// The alternating sequence A, B.
    pub fn sequence(&self) -> Result<PartitionSequence<T>> {
        PartitionSequence::new(&self.space, vec![self.a.clone(), self.b.clone()])
    }
}

fn mat_vec<T: Scalar>(m: &Mat2<T>, v: &[T; 2]) -> [T; 2] {
    [
        m[0][0].clone() * v[0].clone() + m[0][1].clone() * v[1].clone(),
        m[1][0].clone() * v[0].clone() + m[1][1].clone() * v[1].clone(),
    ]
}

fn sub2<T: Scalar>(a: &[T; 2], b: &[T; 2]) -> [T; 2] {
    [a[0].clone() - b[0].clone(), a[1].clone() - b[1].clone()]
}

/// U diag(0, 1/(1−T)) U⁻¹ v.
fn resolvent<T: Scalar>(u: &Mat2<T>, t: &T, v: &[T; 2]) -> [T; 2] {
    let det = u[0][0].clone() * u[1][1].clone() - u[0][1].clone() * u[1][0].clone();
    let inv = [
        [u[1][1].clone() / det.clone(), -u[0][1].clone() / det.clone()],
        [-u[1][0].clone() / det.clone(), u[0][0].clone() / det],
    ];
    let w = mat_vec(&inv, v);
    let scaled = [T::zero(), w[1].clone() / (T::one() - t.clone())];
    mat_vec(u, &scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CovarianceModel;
    use crate::Rational;

    fn q(s: &str) -> Rational {
        Rational::from_decimal(s).unwrap()
    }

    #[test]
    fn rejects_degenerate_tables() {
        assert!(TwoByTwoSpec::<f64>::new(0.5, 0.5, 0.5).is_err());
        assert!(TwoByTwoSpec::<f64>::new(0.5, 0.5, 0.0).is_err());
        assert!(TwoByTwoSpec::<f64>::new(0.7, 0.6, 0.25).is_err());
        assert!(TwoByTwoSpec::<f64>::new(1.0, 0.6, 0.6).is_err());
        assert!(TwoByTwoSpec::<f64>::new(0.5, 0.5, 0.25).is_ok());
    }

    #[test]
    fn closed_forms_are_exact_in_rationals() {
        let spec = TwoByTwoSpec::new(q("0.3"), q("0.6"), q("0.2")).unwrap();
        let f = [q("1.5"), q("-0.25"), q("0.75"), q("2")];
        let layout = spec.layout().unwrap();
        let g = layout.function("f", &f);
        let m0 = CovarianceModel::brownian_bridge(&layout.space);
        let m1 = m0.bridge_step(&layout.a).unwrap();
        let m2 = m1.bridge_step(&layout.b).unwrap();
        assert_eq!(m0.variance_of(&g), spec.moments(&f).variance);
        assert_eq!(m1.variance_of(&g), spec.sigma1_closed(&f));
        assert_eq!(m2.variance_of(&g), spec.sigma2_closed(&f));
        let b = spec.appendix_b(&f);
        let limit = layout.function("limit", &b.limit_function);
        assert_eq!(m0.variance_of(&limit), spec.sigma_inf_closed(&f));
    }

    #[test]
    fn equal_conditional_means_gain_nothing() {
        // E[f|A] = E[f|Aᶜ] = E[f|B] = E[f|Bᶜ] = 0 with independent A, B
        let spec = TwoByTwoSpec::<f64>::new(0.5, 0.5, 0.25).unwrap();
        let f = [1.0, -1.0, -1.0, 1.0];
        let m = spec.moments(&f);
        assert!(m.delta_a.abs() < 1e-15 && m.delta_b.abs() < 1e-15);
        assert!((spec.sigma1_closed(&f) - m.variance).abs() < 1e-15);
        assert!((spec.sigma_inf_closed(&f) - m.variance).abs() < 1e-15);
    }

    #[test]
    fn independent_sets() {
        let spec = TwoByTwoSpec::<f64>::new(0.3, 0.6, 0.18).unwrap();
        let f = [1.0, 0.2, -0.7, 0.4];
        let m = spec.moments(&f);
        let (pa, pb) = (0.3, 0.6);
        let gap_a = m.e_a - m.e_not_a;
        let gap_b = m.e_b - m.e_not_b;
        let s2 = m.variance - pb * (1.0 - pb) * gap_b * gap_b - pa * (1.0 - pa) * gap_a * gap_a;
        assert!((spec.sigma2_closed(&f) - s2).abs() < 1e-14);
        let sinf = m.variance
            - (pa / (1.0 - pa) * m.delta_a * m.delta_a + pb / (1.0 - pb) * m.delta_b * m.delta_b);
        assert!((spec.sigma_inf_closed(&f) - sinf).abs() < 1e-14);
        assert!(spec.appendix_b(&f).t.abs() < 1e-16);
    }

    #[test]
    fn appendix_b_structure() {
        let spec = TwoByTwoSpec::<f64>::new(0.4, 0.55, 0.3).unwrap();
        let f = [0.3, -1.0, 0.8, 0.1];
        let b = spec.appendix_b(&f);
        for m in [&b.p_a_given_b, &b.p_b_given_a] {
            for row in m.iter() {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-14);
            }
        }
        assert!(b.t > 0.0 && b.t < 1.0);
        // S_{1,even} = C_{1,even} (−p_Aᶜ p_B, p_A p_B), S_{2,odd} = C_{2,odd} (−p_A p_Bᶜ, p_A p_B)
        let (pa, pb) = (0.4, 0.55);
        assert!((b.s1_even[0] + b.c1_even * (1.0 - pa) * pb).abs() < 1e-12);
        assert!((b.s1_even[1] - b.c1_even * pa * pb).abs() < 1e-12);
        assert!((b.s2_odd[0] + b.c2_odd * pa * (1.0 - pb)).abs() < 1e-12);
        assert!((b.s2_odd[1] - b.c2_odd * pa * pb).abs() < 1e-12);
    }
}
