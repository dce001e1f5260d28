//! Band-averaged PSNR and SSIM, mean spectral angle, and singular spectra.

use rand::Rng;
use rand_pcg::Pcg32;

use crate::cube::{extract_patch, shape_mismatch, unfold3, HsiCube, PixelIndex};
use crate::error::{Error, Result};
use crate::numeric::singular_values;

/// PSNR reported for a band with zero error; also an upper clamp.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak value in the PSNR numerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Peak {
    Fixed(f64),
    /// Maximum of the reference band.
    ReferenceMax,
}

impl Default for Peak {
    fn default() -> Self {
        Peak::Fixed(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// dB.
    pub m_psnr: f64,
    pub m_ssim: f64,
    /// Degrees.
    pub msa: f64,
    pub psnr_per_band: Vec<f64>,
    pub ssim_per_band: Vec<f64>,
    /// Pixels left out of the MSA because a spectrum had zero norm.
    pub msa_skipped: usize,
}

fn same_shape(a: &HsiCube, b: &HsiCube) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(shape_mismatch(a, b))
    }
}

fn band_values(cube: &HsiCube, k: usize) -> impl Iterator<Item = f64> + '_ {
    (0..cube.pixels()).map(move |p| cube.spectrum(p)[k])
}

pub fn psnr_per_band(reference: &HsiCube, estimate: &HsiCube, peak: Peak) -> Result<Vec<f64>> {
    same_shape(reference, estimate)?;
    let n = reference.pixels() as f64;
    (0..reference.bands())
        .map(|k| {
            let peak = match peak {
                Peak::Fixed(v) => v,
                Peak::ReferenceMax => band_values(reference, k).fold(f64::NEG_INFINITY, f64::max),
            };
            if !(peak > 0.0) {
                return Err(Error::InvalidArgument(format!("PSNR peak {peak} must be positive (band {k})")));
            }
            let mse = band_values(reference, k)
                .zip(band_values(estimate, k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n;
            Ok(if mse == 0.0 { PSNR_CAP_DB } else { (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB) })
        })
        .collect()
}

/// Mean over bands of the per-band PSNR.
pub fn m_psnr(reference: &HsiCube, estimate: &HsiCube, peak: Peak) -> Result<f64> {
    Ok(mean(&psnr_per_band(reference, estimate, peak)?))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a row-major `rows x cols` image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (out_r, out_c) = (rows - w + 1, cols - w + 1);
    let mut horiz = vec![0.0; rows * out_c];
    for i in 0..rows {
        let row = &img[i * cols..(i + 1) * cols];
        for j in 0..out_c {
            horiz[i * out_c + j] = taps.iter().zip(&row[j..j + w]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; out_r * out_c];
    for i in 0..out_r {
        for (d, t) in taps.iter().enumerate() {
            let src = &horiz[(i + d) * out_c..(i + d + 1) * out_c];
            for (o, s) in out[i * out_c..(i + 1) * out_c].iter_mut().zip(src) {
                *o += t * s;
            }
        }
    }
    out
}

/// SSIM of two single-band images (row-major), using the 11x11 Gaussian
/// window with sigma 1.5 over all fully contained window positions.
pub fn ssim_plane(a: &[f64], b: &[f64], rows: usize, cols: usize, dynamic_range: f64) -> Result<f64> {
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {rows}x{cols} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, rows, cols, &taps);
    let mu_b = filter_valid(b, rows, cols, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), rows, cols, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), rows, cols, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), rows, cols, &taps);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

fn band_row_major(cube: &HsiCube, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cube.pixels());
    for i in 0..cube.rows() {
        for j in 0..cube.cols() {
            out.push(cube.get(i, j, k));
        }
    }
    out
}

pub fn ssim_per_band(reference: &HsiCube, estimate: &HsiCube, dynamic_range: f64) -> Result<Vec<f64>> {
    same_shape(reference, estimate)?;
    (0..reference.bands())
        .map(|k| {
            ssim_plane(
                &band_row_major(reference, k),
                &band_row_major(estimate, k),
                reference.rows(),
                reference.cols(),
                dynamic_range,
            )
        })
        .collect()
}

/// Mean over bands of the per-band SSIM, dynamic range 1.
pub fn m_ssim(reference: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    Ok(mean(&ssim_per_band(reference, estimate, 1.0)?))
}

/// Mean spectral angle in degrees and the number of skipped zero-norm pixels.
pub fn msa_with_skipped(reference: &HsiCube, estimate: &HsiCube) -> Result<(f64, usize)> {
    same_shape(reference, estimate)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for p in 0..reference.pixels() {
        let (x, y) = (reference.spectrum(p), estimate.spectrum(p));
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        // arccos of the normalized inner product, evaluated as
        // 2 atan2(|u - v|, |u + v|) on the unit spectra to stay exact near 0.
        let (mut d2, mut s2) = (0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (u, v) = (a / nx, b / ny);
            d2 += (u - v) * (u - v);
            s2 += (u + v) * (u + v);
        }
        sum += (2.0 * d2.sqrt().atan2(s2.sqrt())).to_degrees();
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument("every pixel has a zero-norm spectrum; MSA undefined".into()));
    }
    Ok((sum / used as f64, reference.pixels() - used))
}

pub fn msa(reference: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    msa_with_skipped(reference, estimate).map(|(v, _)| v)
}

/// All three metrics. SSIM uses the same fixed peak as PSNR, or 1 when the
/// PSNR peak follows the reference.
pub fn evaluate(reference: &HsiCube, estimate: &HsiCube, peak: Peak) -> Result<MetricReport> {
    let psnr = psnr_per_band(reference, estimate, peak)?;
    let range = match peak {
        Peak::Fixed(v) => v,
        Peak::ReferenceMax => 1.0,
    };
    let ssim = ssim_per_band(reference, estimate, range)?;
    let (msa, skipped) = msa_with_skipped(reference, estimate)?;
    Ok(MetricReport {
        m_psnr: mean(&psnr),
        m_ssim: mean(&ssim),
        msa,
        psnr_per_band: psnr,
        ssim_per_band: ssim,
        msa_skipped: skipped,
    })
}

/// Singular values of `unfold3(cube)`, descending.
pub fn singular_spectrum(cube: &HsiCube) -> Result<Vec<f64>> {
    singular_values(&unfold3(cube))
}

/// `log10` with zero mapped to the smallest positive double's logarithm.
pub fn log_spectrum(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| s.max(f64::MIN_POSITIVE).log10()).collect()
}

/// Element-wise mean of `log10` singular values over a list of patches.
pub fn mean_log_spectrum(patches: &[HsiCube]) -> Result<Vec<f64>> {
    let first = patches.first().ok_or_else(|| Error::InvalidArgument("no patches to analyse".into()))?;
    let len = first.bands().min(first.pixels());
    let mut acc = vec![0.0; len];
    for p in patches {
        let s = singular_spectrum(p)?;
        if s.len() != len {
            return Err(Error::Shape(format!("patch spectrum of length {} vs {len}", s.len())));
        }
        for (a, l) in acc.iter_mut().zip(log_spectrum(&s)) {
            *a += l;
        }
    }
    let n = patches.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// `count` patches at uniformly drawn origins (PCG-XSH-RR 32, row then
/// column per patch).
pub fn sample_patches(
    cube: &HsiCube,
    patch_rows: usize,
    patch_cols: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(PixelIndex, HsiCube)>> {
    if patch_rows == 0 || patch_cols == 0 || patch_rows > cube.rows() || patch_cols > cube.cols() {
        return Err(Error::InvalidArgument(format!(
            "patch {patch_rows}x{patch_cols} does not fit in {}x{}",
            cube.rows(),
            cube.cols()
        )));
    }
    let mut rng = Pcg32::new(seed, crate::forward::PCG_STREAM);
    let row_span = (cube.rows() - patch_rows + 1) as u64;
    let col_span = (cube.cols() - patch_cols + 1) as u64;
    (0..count)
        .map(|_| {
            let r = ((rng.next_u32() as u64 * row_span) >> 32) as usize;
            let c = ((rng.next_u32() as u64 * col_span) >> 32) as usize;
            let origin = PixelIndex::new(r, c);
            Ok((origin, extract_patch(cube, origin, patch_rows, patch_cols)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{low_rank_scene, random_matrix, two_subspace_scene};

    fn random_cube(rows: usize, cols: usize, bands: usize, seed: u64) -> HsiCube {
        let m = random_matrix(bands, rows * cols, 0.0, 1.0, seed);
        crate::cube::fold3(&m, rows, cols).unwrap()
    }

    #[test]
    fn psnr_cap_and_analytic_offset() {
        let x = random_cube(8, 8, 3, 1);
        assert_eq!(m_psnr(&x, &x, Peak::default()).unwrap(), PSNR_CAP_DB);
        let shifted = HsiCube::from_fn(8, 8, 3, |i, j, k| x.get(i, j, k) + 0.1).unwrap();
        let v = m_psnr(&x, &shifted, Peak::default()).unwrap();
        assert!((v - 20.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        let x = random_cube(7, 9, 4, 2);
        let y = random_cube(7, 9, 4, 3);
        let mut acc = 0.0;
        for k in 0..4 {
            let mut se = 0.0;
            for i in 0..7 {
                for j in 0..9 {
                    se += (x.get(i, j, k) - y.get(i, j, k)).powi(2);
                }
            }
            acc += 10.0 * (1.0 / (se / 63.0)).log10();
        }
        assert!((m_psnr(&x, &y, Peak::default()).unwrap() - acc / 4.0).abs() < 1e-10);
    }

    #[test]
    fn psnr_reference_peak_and_errors() {
        let x = HsiCube::from_fn(4, 4, 1, |i, _, _| 0.5 * i as f64 / 3.0).unwrap();
        let y = HsiCube::from_fn(4, 4, 1, |i, _, _| 0.5 * i as f64 / 3.0 + 0.05).unwrap();
        // peak 0.5, MSE 0.0025 -> 10 log10(100) = 20 dB.
        assert!((m_psnr(&x, &y, Peak::ReferenceMax).unwrap() - 20.0).abs() < 1e-10);
        assert!(m_psnr(&x, &random_cube(4, 4, 2, 1), Peak::default()).is_err());
        assert!(m_psnr(&x, &y, Peak::Fixed(0.0)).is_err());
    }

    /// Direct evaluation of the windowed SSIM formula, one window at a time.
    fn ssim_oracle(a: &HsiCube, b: &HsiCube, k: usize) -> f64 {
        let taps = gaussian_taps(11, 1.5);
        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for i0 in 0..=a.rows() - 11 {
            for j0 in 0..=a.cols() - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for di in 0..11 {
                    for dj in 0..11 {
                        let w = taps[di] * taps[dj];
                        ma += w * a.get(i0 + di, j0 + dj, k);
                        mb += w * b.get(i0 + di, j0 + dj, k);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for di in 0..11 {
                    for dj in 0..11 {
                        let w = taps[di] * taps[dj];
                        let (x, y) = (a.get(i0 + di, j0 + dj, k) - ma, b.get(i0 + di, j0 + dj, k) - mb);
                        va += w * x * x;
                        vb += w * y * y;
                        cov += w * x * y;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identity_and_constant() {
        let x = random_cube(16, 16, 2, 4);
        assert!((m_ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = HsiCube::from_fn(12, 12, 1, |_, _, _| 0.4).unwrap();
        assert!((m_ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(m_ssim(&random_cube(10, 20, 1, 1), &random_cube(10, 20, 1, 2)).is_err());
    }

    #[test]
    fn ssim_matches_direct_oracle() {
        let a = random_cube(32, 32, 1, 5);
        let b = HsiCube::from_fn(32, 32, 1, |i, j, _| 0.7 * a.get(i, j, 0) + 0.3 * ((i * j) % 5) as f64 / 5.0).unwrap();
        let oracle = ssim_oracle(&a, &b, 0);
        let got = m_ssim(&a, &b).unwrap();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn msa_cases() {
        let x = random_cube(5, 5, 6, 6);
        let scaled = HsiCube::from_fn(5, 5, 6, |i, j, k| 3.5 * x.get(i, j, k)).unwrap();
        assert!(msa(&x, &scaled).unwrap() < 1e-12);
        let e0 = HsiCube::from_fn(3, 3, 2, |_, _, k| if k == 0 { 1.0 } else { 0.0 }).unwrap();
        let e1 = HsiCube::from_fn(3, 3, 2, |_, _, k| if k == 1 { 2.0 } else { 0.0 }).unwrap();
        assert!((msa(&e0, &e1).unwrap() - 90.0).abs() < 1e-12);
        let zero = HsiCube::zeros(3, 3, 2).unwrap();
        assert!(msa(&zero, &e1).is_err());
    }

    #[test]
    fn msa_per_pixel_rescale_is_exactly_zero() {
        // Power-of-two scales keep the arithmetic exact.
        let x = random_cube(6, 6, 5, 7);
        let y = HsiCube::from_fn(6, 6, 5, |i, j, k| x.get(i, j, k) * 2f64.powi((i + 2 * j) as i32 % 4)).unwrap();
        assert_eq!(msa(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn msa_skips_zero_pixels() {
        let mut x = random_cube(4, 4, 3, 8);
        x.spectrum_mut(5).iter_mut().for_each(|v| *v = 0.0);
        let (v, skipped) = msa_with_skipped(&x, &x).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn msa_matches_loop_oracle() {
        let x = random_cube(6, 7, 5, 9);
        let y = random_cube(6, 7, 5, 10);
        let mut acc = 0.0;
        for i in 0..6 {
            for j in 0..7 {
                let (mut d, mut nx, mut ny) = (0.0, 0.0, 0.0);
                for k in 0..5 {
                    d += x.get(i, j, k) * y.get(i, j, k);
                    nx += x.get(i, j, k).powi(2);
                    ny += y.get(i, j, k).powi(2);
                }
                acc += (d / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI;
            }
        }
        assert!((msa(&x, &y).unwrap() - acc / 42.0).abs() < 1e-9);
    }

    #[test]
    fn report_is_consistent() {
        let x = random_cube(12, 12, 3, 11);
        let r = evaluate(&x, &x, Peak::default()).unwrap();
        assert_eq!(r.m_psnr, PSNR_CAP_DB);
        assert!((r.m_ssim - 1.0).abs() < 1e-12);
        assert_eq!(r.msa, 0.0);
        assert_eq!(r.psnr_per_band.len(), 3);
    }

    #[test]
    fn spectrum_cases() {
        let x = low_rank_scene(6, 6, 8, 3, 12).unwrap();
        let s = singular_spectrum(&x).unwrap();
        assert!(s[3..].iter().all(|&v| v < 1e-10 * s[0]));

        let px = HsiCube::from_fn(1, 1, 3, |_, _, k| [3.0, 0.0, 4.0][k]).unwrap();
        let s = singular_spectrum(&px).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn patch_spectrum_decays_faster_than_global() {
        let x = two_subspace_scene(40, 40, 10, 3, 20, 13).unwrap();
        let global = log_spectrum(&singular_spectrum(&x).unwrap());
        let patches: Vec<HsiCube> = sample_patches(&x, 10, 10, 30, 14).unwrap().into_iter().map(|(_, p)| p).collect();
        let local = mean_log_spectrum(&patches).unwrap();
        assert!(local[3] < global[3], "{} vs {}", local[3], global[3]);
    }

    #[test]
    fn sampled_patches_are_deterministic_and_in_bounds() {
        let x = random_cube(20, 15, 2, 15);
        let a = sample_patches(&x, 6, 4, 25, 3).unwrap();
        let b = sample_patches(&x, 6, 4, 25, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(o, _)| o.row <= 14 && o.col <= 11));
        assert!(sample_patches(&x, 21, 4, 1, 3).is_err());
        assert!(mean_log_spectrum(&[]).is_err());
    }
}
