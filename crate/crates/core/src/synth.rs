//! Synthetic scenes: exact low-rank cubes and piecewise subspace scenes,
//! used in place of measured data for tests, sweeps and benchmarks.

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::cube::{fold3, HsiCube, Matrix};
use crate::error::{Error, Result};
use crate::forward::SpectralResponse;

/// Uniform `[lo, hi)` entries.
pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    let mut r = Pcg64::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// `rank` smooth nonnegative spectra (Gaussian bumps on a small floor) as
/// the columns of a `bands x rank` matrix with peak value 1.
pub fn smooth_spectra(bands: usize, rank: usize, seed: u64) -> Matrix {
    let mut r = Pcg64::seed_from_u64(seed);
    let mut e = Matrix::zeros(bands, rank);
    for t in 0..rank {
        let centre = r.random_range(0.0..1.0) * (bands.max(2) - 1) as f64;
        let width = r.random_range(0.08..0.35) * bands as f64;
        let floor = r.random_range(0.0..0.15);
        for b in 0..bands {
            let d = (b as f64 - centre) / width;
            e[(b, t)] = floor + (-0.5 * d * d).exp();
        }
        let peak = e.column(t).max();
        e.column_mut(t).unscale_mut(peak);
    }
    e
}

/// `X = E W` with `E` from [`smooth_spectra`], nonnegative coefficients and
/// per-component weights; values stay in `[0, 1]`.
pub fn weighted_low_rank_scene(
    rows: usize,
    cols: usize,
    bands: usize,
    weights: &[f64],
    seed: u64,
) -> Result<HsiCube> {
    let rank = weights.len();
    if rank == 0 {
        return Err(Error::InvalidArgument("scene needs at least one component".into()));
    }
    let e = smooth_spectra(bands, rank, seed);
    let mut w = random_matrix(rank, rows * cols, 0.0, 1.0, seed ^ 0x5eed);
    let total: f64 = weights.iter().sum();
    for (t, &wt) in weights.iter().enumerate() {
        w.row_mut(t).scale_mut(wt / total);
    }
    fold3(&(e * w), rows, cols)
}

/// Equal-weight exact rank-`rank` scene.
pub fn low_rank_scene(rows: usize, cols: usize, bands: usize, rank: usize, seed: u64) -> Result<HsiCube> {
    weighted_low_rank_scene(rows, cols, bands, &vec![1.0; rank], seed)
}

/// Columns `[0, split)` are drawn from one rank-`rank` spectral subspace and
/// `[split, cols)` from an independent one.
pub fn two_subspace_scene(
    rows: usize,
    cols: usize,
    bands: usize,
    rank: usize,
    split: usize,
    seed: u64,
) -> Result<HsiCube> {
    weighted_two_subspace_scene(rows, cols, bands, &vec![1.0; rank], split, seed)
}

/// Like [`two_subspace_scene`], with per-component weights inside each half
/// (e.g. three strong components plus a weak tail).
pub fn weighted_two_subspace_scene(
    rows: usize,
    cols: usize,
    bands: usize,
    weights: &[f64],
    split: usize,
    seed: u64,
) -> Result<HsiCube> {
    if split == 0 || split >= cols {
        return Err(Error::InvalidArgument(format!("split column {split} must lie in (0, {cols})")));
    }
    let left = weighted_low_rank_scene(rows, split, bands, weights, seed)?;
    let right = weighted_low_rank_scene(rows, cols - split, bands, weights, seed.wrapping_add(0x9e37_79b9))?;
    HsiCube::from_fn(rows, cols, bands, |i, j, k| {
        if j < split {
            left.get(i, j, k)
        } else {
            right.get(i, j - split, k)
        }
    })
}

/// Dense nonnegative response with entries in `[0.05, 1)`; full column rank
/// with probability one.
pub fn random_response(bands: usize, channels: usize, seed: u64) -> Result<SpectralResponse> {
    SpectralResponse::new(random_matrix(bands, channels, 0.05, 1.0, seed))
}
