//! Reproducible random streams.
//!
//! Every Monte Carlo replicate draws from its own ChaCha8 stream: the key is
//! the master seed and the stream number is a hash of the replicate
//! coordinates. ChaCha is counter based, so streams are independent by
//! construction and results do not depend on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::model::CellSpace;
use crate::scalar::Scalar;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream identified by `master` and a coordinate tuple such as
/// `[tag, grid index, replicate]`.
pub fn stream(master: u64, key: &[u64]) -> StreamRng {
    let id = key
        .iter()
        .fold(0x243f_6a88_85a3_08d3u64, |acc, &k| splitmix64(acc ^ splitmix64(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}

/// Multinomial counts by the conditional (sequential binomial) method.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass_left: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if q <= 0.0 {
            0
        } else if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        counts[k] = draw;
        remaining -= draw;
        mass_left -= p;
    }
    counts
}

/// Cell counts of an i.i.d. sample of size `n` from the cell law.
pub fn draw_cell_counts<T: Scalar, R: Rng + ?Sized>(space: &CellSpace<T>, n: u64, rng: &mut R) -> Vec<u64> {
    let probs: Vec<f64> = space.prob().iter().map(|p| p.to_f64_lossy()).collect();
    multinomial(n, &probs, rng)
}
