//! Seeded random streams and circularly-symmetric complex Gaussian draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::tensor::{CMatrix, C64};

pub type Stream = ChaCha12Rng;

/// Named substreams so channel, noise and estimator draws never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Geometry = 1,
    Fading = 2,
    Noise = 3,
    InitTwoStage = 4,
    InitEAls = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `master` with an ordered list of coordinates into a child seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// One CN(0, 1) sample.
pub fn cn<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `rows × cols` matrix with i.i.d. CN(0, variance) entries, drawn column by column.
pub fn cn_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMatrix {
    let sd = variance.sqrt();
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        entries.push(cn(rng) * sd);
    }
    CMatrix::from_inner(nalgebra::DMatrix::from_vec(rows, cols, entries))
}
