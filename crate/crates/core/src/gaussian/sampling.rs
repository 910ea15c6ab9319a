use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::covariance::{CovarianceModel, PSD_TOL};
use crate::error::{Error, Result};
use crate::model::FunctionOnCells;
use crate::scalar::Scalar;

/// Draws `draws` joint realizations of (G(f_1), …, G(f_k)) under `model`.
/// Row r of the result holds draw r.
pub fn sample_bridge<T: Scalar, R: Rng + ?Sized>(
    model: &CovarianceModel<T>,
    functions: &[FunctionOnCells<T>],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if draws == 0 {
        return Err(Error::validation("number of draws must be positive"));
    }
    if functions.is_empty() {
        return Err(Error::validation("no functions to sample"));
    }
    let k = functions.len();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        model.covariance_of(&functions[a], &functions[b]).to_f64_lossy()
    });
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut roots = DVector::zeros(k);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite(lambda));
        }
        roots[i] = lambda.max(0.0).sqrt();
    }
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        out.push((&factor * z).iter().copied().collect());
    }
    Ok(out)
}
