//! Non-iterative low-rank fusion of a CASSI image and a multiband image.
//!
//! The scene is modelled as `X = E W` (`E`: `B x k` spectral basis, `W`:
//! `k x P` coefficients). `W` comes from the truncated SVD of the multiband
//! image; `E` from least squares against the coded image through the
//! structured operator `Phi^W`, whose row for pixel `p` is `W_p^T (x) C_p^T`.
//!
//! `vec(E)` is column-major (`E[b, t]` at `b + t * B`), which is the layout
//! for which `Phi^W vec(E) = vec(simulate_cassi(fold3(E W), C))`.

use rayon::prelude::*;

use crate::cube::{extract_patch, fold3, make_grid, unfold3, Aggregator, HsiCube, Matrix, PixelIndex};
use crate::error::{Error, Result};
use crate::forward::{CassiMeasurement, MaskCube, MultibandMeasurement, SpectralResponse};
use crate::numeric::{lstsq, truncated_svd};

/// Patches solved concurrently before their results are folded into the
/// aggregate. Fixed so the accumulation order never depends on thread count.
const PATCH_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub rank: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
    pub stride: usize,
    /// Stack the multiband rows into the basis solve (needs the response).
    pub improved: bool,
    /// Singular values at or below `rank_tolerance * sigma_1` are dropped.
    pub rank_tolerance: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { rank: 3, patch_rows: 100, patch_cols: 100, stride: 50, improved: false, rank_tolerance: 1e-10 }
    }
}

/// Spectral basis and coefficients of `X = E W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// `B x k`.
    pub basis: Matrix,
    /// `k x P`, orthonormal rows.
    pub coefficients: Matrix,
}

impl FactorPair {
    pub fn rank(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn product(&self) -> Matrix {
        &self.basis * &self.coefficients
    }

    pub fn to_cube(&self, rows: usize, cols: usize) -> Result<HsiCube> {
        fold3(&self.product(), rows, cols)
    }
}

#[derive(Debug, Clone)]
pub struct Coefficients {
    /// `effective_rank x P`, `W W^T = I`.
    pub w: Matrix,
    pub requested_rank: usize,
    pub effective_rank: usize,
    /// Leading singular values of `unfold3(Z)` (length `requested_rank`).
    pub singular_values: Vec<f64>,
}

/// `W = V_k^T` from the SVD of `unfold3(Z)`.
///
/// When `sigma_t <= tolerance * sigma_1` for some `t <= k` the rank is
/// reduced to the number of singular values above the threshold.
pub fn estimate_coefficients(z: &MultibandMeasurement, rank: usize, tolerance: f64) -> Result<Coefficients> {
    let c = z.channels();
    let pixels = z.cube().pixels();
    if rank == 0 || rank > c {
        return Err(Error::InvalidArgument(format!("rank {rank} must lie in [1, {c}] (channel count)")));
    }
    if rank > pixels {
        return Err(Error::InvalidArgument(format!("rank {rank} exceeds pixel count {pixels}")));
    }
    let svd = truncated_svd(&unfold3(z.cube()), rank)?;
    let sigma1 = svd.singular_values[0];
    if sigma1 == 0.0 {
        return Err(Error::ZeroRank);
    }
    let effective = svd.singular_values.iter().take_while(|&&s| s > tolerance * sigma1).count();
    let w = svd.v.columns(0, effective).transpose();
    Ok(Coefficients { w, requested_rank: rank, effective_rank: effective, singular_values: svd.singular_values })
}

/// Stacked structured operators for the basis solve.
#[derive(Debug, Clone)]
pub struct StructuredSensing {
    /// `P x kB`.
    pub phi_w: Matrix,
    /// `cP x kB`, row `p * c + t` for channel `t` of pixel `p`.
    pub phi_rgb: Option<Matrix>,
}

/// `Phi^W`: row `p` is `W_p^T (x) C_p^T`.
pub fn assemble_phi_w(mask: &MaskCube, w: &Matrix) -> Result<Matrix> {
    let c = mask.cube();
    let (pixels, bands, rank) = (c.pixels(), c.bands(), w.nrows());
    if w.ncols() != pixels {
        return Err(Error::Shape(format!("W has {} columns for {pixels} pixels", w.ncols())));
    }
    let mask_px = c.as_slice();
    let mut phi = Matrix::zeros(pixels, rank * bands);
    for (col, out) in phi.as_mut_slice().chunks_exact_mut(pixels).enumerate() {
        let (t, b) = (col / bands, col % bands);
        for (p, v) in out.iter_mut().enumerate() {
            *v = w[(t, p)] * mask_px[p * bands + b];
        }
    }
    Ok(phi)
}

/// `Phi^W_RGB`: row `p * c + t` is `W_p^T (x) A(:, t)^T`.
pub fn assemble_phi_rgb(response: &SpectralResponse, w: &Matrix) -> Matrix {
    let a = response.matrix();
    let (bands, channels) = a.shape();
    let (rank, pixels) = w.shape();
    let rows = pixels * channels;
    let mut phi = Matrix::zeros(rows, rank * bands);
    for (col, out) in phi.as_mut_slice().chunks_exact_mut(rows).enumerate() {
        let (t, b) = (col / bands, col % bands);
        for p in 0..pixels {
            let wt = w[(t, p)];
            for ch in 0..channels {
                out[p * channels + ch] = wt * a[(b, ch)];
            }
        }
    }
    phi
}

/// `vec(E)` to the `B x k` basis.
pub fn basis_from_vec(e: &[f64], bands: usize) -> Matrix {
    Matrix::from_column_slice(bands, e.len() / bands, e)
}

/// Multiband side information for the joint basis solve.
#[derive(Debug, Clone, Copy)]
pub struct JointTerms<'a> {
    pub multiband: &'a MultibandMeasurement,
    pub response: &'a SpectralResponse,
}

#[derive(Debug, Clone)]
pub struct BasisSolution {
    pub basis: Matrix,
    /// `||rhs - Phi e||` of the system that was solved.
    pub residual_norm: f64,
    /// `||Phi^T (rhs - Phi e)|| / ||Phi^T rhs||` (0 when the right-hand side
    /// is orthogonal to the range).
    pub normal_equation_ratio: f64,
}

fn normal_equation_ratio(phi: &Matrix, rhs: &[f64], e: &[f64]) -> f64 {
    let rhs = nalgebra::DVector::from_column_slice(rhs);
    let e = nalgebra::DVector::from_column_slice(e);
    let resid = &rhs - phi * e;
    let num = phi.tr_mul(&resid).norm();
    let den = phi.tr_mul(&rhs).norm();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Solves for `E` given `W`: `min ||vec(Y) - Phi^W e||`, or with `joint`
/// `min ||[vec(Y); vec(Z)] - [Phi^W; Phi^W_RGB] e||`.
pub fn solve_basis(
    y: &CassiMeasurement,
    mask: &MaskCube,
    w: &Matrix,
    joint: Option<JointTerms<'_>>,
) -> Result<BasisSolution> {
    let c = mask.cube();
    if (y.0.nrows(), y.0.ncols()) != (c.rows(), c.cols()) {
        return Err(Error::Shape(format!(
            "CASSI image {}x{} vs mask {}x{}",
            y.0.nrows(),
            y.0.ncols(),
            c.rows(),
            c.cols()
        )));
    }
    let bands = c.bands();
    let phi_w = assemble_phi_w(mask, w)?;
    let (phi, rhs) = match joint {
        None => (phi_w, y.as_slice().to_vec()),
        Some(JointTerms { multiband, response }) => {
            if multiband.cube().rows() != c.rows()
                || multiband.cube().cols() != c.cols()
                || multiband.channels() != response.channels()
                || response.bands() != bands
            {
                return Err(Error::Shape("multiband image, response and mask disagree".into()));
            }
            let phi_rgb = assemble_phi_rgb(response, w);
            let (p, q) = phi_w.shape();
            let extra = phi_rgb.nrows();
            let mut stacked = Matrix::zeros(p + extra, q);
            stacked.view_mut((0, 0), (p, q)).copy_from(&phi_w);
            stacked.view_mut((p, 0), (extra, q)).copy_from(&phi_rgb);
            let mut rhs = y.as_slice().to_vec();
            rhs.extend_from_slice(multiband.cube().as_slice());
            (stacked, rhs)
        }
    };
    let sol = lstsq(&phi, &rhs)?;
    let ratio = normal_equation_ratio(&phi, &rhs, &sol.solution);
    Ok(BasisSolution { basis: basis_from_vec(&sol.solution, bands), residual_norm: sol.residual_norm, normal_equation_ratio: ratio })
}

/// `||[vec(Y); vec(Z)] - [Phi^W; Phi^W_RGB] vec(E)||` for a given factor
/// pair: the objective of the joint basis solve.
pub fn joint_residual(
    y: &CassiMeasurement,
    mask: &MaskCube,
    joint: JointTerms<'_>,
    factors: &FactorPair,
) -> Result<f64> {
    let (rows, cols) = (mask.cube().rows(), mask.cube().cols());
    let x = factors.to_cube(rows, cols)?;
    let y_hat = crate::forward::simulate_cassi(&x, mask)?;
    let z_hat = crate::forward::simulate_multiband(&x, joint.response)?;
    let ry: f64 = y.as_slice().iter().zip(y_hat.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    let rz: f64 = joint
        .multiband
        .cube()
        .as_slice()
        .iter()
        .zip(z_hat.cube().as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ry + rz).sqrt())
}

/// Outcome of one (patch or global) fusion solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchReport {
    pub origin: PixelIndex,
    pub effective_rank: usize,
    pub residual_norm: f64,
    pub normal_equation_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub cube: HsiCube,
    /// One entry per solved patch, in grid order.
    pub patches: Vec<PatchReport>,
}

fn check_inputs(
    y: &CassiMeasurement,
    z: &MultibandMeasurement,
    mask: &MaskCube,
    config: &FusionConfig,
    response: Option<&SpectralResponse>,
) -> Result<()> {
    let (rows, cols, bands) = mask.cube().shape();
    if (y.0.nrows(), y.0.ncols()) != (rows, cols) || (z.cube().rows(), z.cube().cols()) != (rows, cols) {
        return Err(Error::Shape(format!(
            "CASSI {}x{}, multiband {}x{} and mask {rows}x{cols}x{bands} must share spatial size",
            y.0.nrows(),
            y.0.ncols(),
            z.cube().rows(),
            z.cube().cols()
        )));
    }
    if config.rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if config.rank > z.channels() {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds the {} multiband channels",
            config.rank,
            z.channels()
        )));
    }
    if config.improved {
        let r = response.ok_or_else(|| Error::InvalidArgument("the improved basis solve needs the spectral response".into()))?;
        if r.bands() != bands || r.channels() != z.channels() {
            return Err(Error::Shape(format!(
                "response {}x{} does not match {bands} bands and {} channels",
                r.bands(),
                r.channels(),
                z.channels()
            )));
        }
    }
    Ok(())
}

/// Steps A-C on one region: coefficients, basis, reconstruction.
fn solve_region(
    y: &CassiMeasurement,
    z: &MultibandMeasurement,
    mask: &MaskCube,
    config: &FusionConfig,
    response: Option<&SpectralResponse>,
    origin: PixelIndex,
) -> Result<(PatchReport, HsiCube)> {
    let (rows, cols, bands) = mask.cube().shape();
    let coeffs = match estimate_coefficients(z, config.rank, config.rank_tolerance) {
        Ok(c) => c,
        // Z = 0 carries no spectral content; with a full-rank response the
        // consistent scene is X = 0.
        Err(Error::ZeroRank) => {
            let report = PatchReport { origin, effective_rank: 0, residual_norm: y.0.norm(), normal_equation_ratio: 0.0 };
            return Ok((report, HsiCube::zeros(rows, cols, bands)?));
        }
        Err(e) => return Err(e),
    };
    let joint = if config.improved {
        response.map(|r| JointTerms { multiband: z, response: r })
    } else {
        None
    };
    let sol = solve_basis(y, mask, &coeffs.w, joint)?;
    let factors = FactorPair { basis: sol.basis, coefficients: coeffs.w };
    let report = PatchReport {
        origin,
        effective_rank: coeffs.effective_rank,
        residual_norm: sol.residual_norm,
        normal_equation_ratio: sol.normal_equation_ratio,
    };
    Ok((report, factors.to_cube(rows, cols)?))
}

/// Global fusion over the whole image.
///
/// Only `config.rank`, `config.improved` and `config.rank_tolerance` are
/// used. Requires `M N > k B`.
pub fn fuse(
    y: &CassiMeasurement,
    z: &MultibandMeasurement,
    mask: &MaskCube,
    config: &FusionConfig,
    response: Option<&SpectralResponse>,
) -> Result<Reconstruction> {
    check_inputs(y, z, mask, config, response)?;
    let (rows, cols, bands) = mask.cube().shape();
    check_area(rows * cols, config.rank * bands)?;
    let (report, cube) = solve_region(y, z, mask, config, response, PixelIndex::new(0, 0))?;
    Ok(Reconstruction { cube, patches: vec![report] })
}

fn check_area(area: usize, unknowns: usize) -> Result<()> {
    if area <= unknowns {
        return Err(Error::PatchConstraint { area, unknowns });
    }
    Ok(())
}

/// Patch-based fusion: solve every overlapping patch independently, then
/// average the overlaps.
///
/// Patches are solved in parallel on the current rayon pool; per-patch
/// results are accumulated in grid order, so the output is bit-identical for
/// any number of worker threads.
pub fn pfuse(
    y: &CassiMeasurement,
    z: &MultibandMeasurement,
    mask: &MaskCube,
    config: &FusionConfig,
    response: Option<&SpectralResponse>,
) -> Result<Reconstruction> {
    check_inputs(y, z, mask, config, response)?;
    let (rows, cols, bands) = mask.cube().shape();
    let (m, n) = (config.patch_rows, config.patch_cols);
    check_area(m * n, config.rank * bands)?;
    let grid = make_grid(rows, cols, m, n, config.stride)?;

    let solve_patch = |origin: PixelIndex| -> Result<(PatchReport, HsiCube)> {
        let y_p = CassiMeasurement(y.0.view((origin.row, origin.col), (m, n)).into_owned());
        let z_p = MultibandMeasurement(extract_patch(z.cube(), origin, m, n)?);
        let c_p = MaskCube::new(extract_patch(mask.cube(), origin, m, n)?);
        solve_region(&y_p, &z_p, &c_p, config, response, origin)
            .map_err(|e| Error::Patch { row: origin.row, col: origin.col, source: Box::new(e) })
    };

    let mut acc = Aggregator::new(rows, cols, bands)?;
    let mut reports = Vec::with_capacity(grid.len());
    for batch in grid.origins().chunks(PATCH_BATCH) {
        let solved: Vec<Result<(PatchReport, HsiCube)>> = batch.par_iter().map(|&o| solve_patch(o)).collect();
        for item in solved {
            let (report, patch) = item?;
            acc.add(report.origin, &patch)?;
            reports.push(report);
        }
    }
    Ok(Reconstruction { cube: acc.finish()?, patches: reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{gen_mask, gen_response, simulate_cassi, simulate_multiband, ResponseKind};
    use crate::synth::{low_rank_scene, random_matrix, random_response, two_subspace_scene};

    fn measure(x: &HsiCube, mask: &MaskCube, a: &SpectralResponse) -> (CassiMeasurement, MultibandMeasurement) {
        (simulate_cassi(x, mask).unwrap(), simulate_multiband(x, a).unwrap())
    }

    #[test]
    fn coefficients_rank_one() {
        let f = random_matrix(3, 1, 0.1, 1.0, 1);
        let w = random_matrix(1, 20, -1.0, 1.0, 2);
        let z = MultibandMeasurement(fold3(&(&f * &w), 4, 5).unwrap());
        let c = estimate_coefficients(&z, 1, 1e-10).unwrap();
        let cos = c.w.row(0).dot(&w.row(0)) / w.row(0).norm();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_are_orthonormal() {
        let z = MultibandMeasurement(fold3(&random_matrix(3, 30, 0.0, 1.0, 3), 5, 6).unwrap());
        let c = estimate_coefficients(&z, 3, 1e-10).unwrap();
        assert_eq!(c.effective_rank, 3);
        assert!((&c.w * c.w.transpose() - Matrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn coefficients_match_svd_oracle() {
        let zm = random_matrix(4, 25, 0.0, 1.0, 4);
        let z = MultibandMeasurement(fold3(&zm, 5, 5).unwrap());
        let c = estimate_coefficients(&z, 2, 1e-10).unwrap();
        let svd = zm.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut idx: Vec<usize> = (0..4).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut v2 = Matrix::zeros(2, 25);
        for t in 0..2 {
            v2.set_row(t, &vt.row(idx[t]));
        }
        let oracle = v2.transpose() * &v2;
        assert!((c.w.transpose() * &c.w - oracle).amax() < 1e-9);
    }

    #[test]
    fn coefficients_shrink_rank_and_errors() {
        let f = random_matrix(3, 1, 0.1, 1.0, 5);
        let w = random_matrix(1, 12, 0.0, 1.0, 6);
        let z = MultibandMeasurement(fold3(&(&f * &w), 3, 4).unwrap());
        let c = estimate_coefficients(&z, 3, 1e-10).unwrap();
        assert_eq!((c.requested_rank, c.effective_rank, c.w.nrows()), (3, 1, 1));
        assert!(matches!(estimate_coefficients(&z, 4, 1e-10), Err(Error::InvalidArgument(_))));
        let zero = MultibandMeasurement(HsiCube::zeros(3, 4, 3).unwrap());
        assert!(matches!(estimate_coefficients(&zero, 2, 1e-10), Err(Error::ZeroRank)));
    }

    #[test]
    fn phi_w_simple_rows() {
        let mask = gen_mask(3, 2, 4, 9, 0.5).unwrap();
        let phi = assemble_phi_w(&mask, &Matrix::from_element(1, 6, 1.0)).unwrap();
        for p in 0..6 {
            assert_eq!(phi.row(p).iter().copied().collect::<Vec<_>>(), mask.cube().spectrum(p));
        }
        let ones = gen_mask(3, 2, 4, 9, 1.0).unwrap();
        let w = random_matrix(2, 6, -1.0, 1.0, 7);
        let phi = assemble_phi_w(&ones, &w).unwrap();
        for p in 0..6 {
            for t in 0..2 {
                for b in 0..4 {
                    assert_eq!(phi[(p, t * 4 + b)], w[(t, p)]);
                }
            }
        }
        assert!(assemble_phi_w(&ones, &random_matrix(2, 5, 0.0, 1.0, 1)).is_err());
    }

    #[test]
    fn phi_w_operator_equivalence() {
        let (rows, cols, bands, k) = (6, 5, 4, 2);
        let e = random_matrix(bands, k, -1.0, 1.0, 10);
        let w = random_matrix(k, rows * cols, -1.0, 1.0, 11);
        let mask = gen_mask(rows, cols, bands, 12, 0.5).unwrap();
        let phi = assemble_phi_w(&mask, &w).unwrap();
        let lhs = &phi * nalgebra::DVector::from_column_slice(e.as_slice());
        let rhs = simulate_cassi(&fold3(&(&e * &w), rows, cols).unwrap(), &mask).unwrap();
        let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
        assert!((&lhs - &rhs).norm() < 1e-12 * rhs.norm());
    }

    #[test]
    fn phi_rgb_cases() {
        let ones = SpectralResponse::new(Matrix::from_element(5, 1, 1.0)).unwrap();
        let phi = assemble_phi_rgb(&ones, &Matrix::from_element(1, 4, 1.0));
        assert!(phi.iter().all(|&v| v == 1.0));
        assert_eq!(phi.shape(), (4, 5));

        let (rows, cols, bands, k) = (3, 4, 5, 2);
        let e = random_matrix(bands, k, -1.0, 1.0, 20);
        let w = random_matrix(k, rows * cols, -1.0, 1.0, 21);
        let id = SpectralResponse::new(Matrix::identity(bands, bands)).unwrap();
        let phi = assemble_phi_rgb(&id, &w);
        let x = nalgebra::DVector::from_column_slice((&e * &w).as_slice());
        let got = &phi * nalgebra::DVector::from_column_slice(e.as_slice());
        assert!((got - x).norm() < 1e-13);

        let a = random_response(bands, 3, 22).unwrap();
        let phi = assemble_phi_rgb(&a, &w);
        let got = &phi * nalgebra::DVector::from_column_slice(e.as_slice());
        let z = simulate_multiband(&fold3(&(&e * &w), rows, cols).unwrap(), &a).unwrap();
        let z = nalgebra::DVector::from_column_slice(z.cube().as_slice());
        assert!((got - &z).norm() < 1e-12 * z.norm());
    }

    #[test]
    fn solve_basis_recovers_product() {
        let (rows, cols, bands, k) = (8, 8, 6, 2);
        let e_star = random_matrix(bands, k, 0.0, 1.0, 30);
        let w = estimate_coefficients(
            &MultibandMeasurement(fold3(&random_matrix(k, rows * cols, 0.0, 1.0, 31), rows, cols).unwrap()),
            k,
            1e-10,
        )
        .unwrap()
        .w;
        let mask = gen_mask(rows, cols, bands, 32, 0.5).unwrap();
        let x = fold3(&(&e_star * &w), rows, cols).unwrap();
        let y = simulate_cassi(&x, &mask).unwrap();
        let sol = solve_basis(&y, &mask, &w, None).unwrap();
        let truth = &e_star * &w;
        assert!((&sol.basis * &w - &truth).norm() < 1e-8 * truth.norm());
        assert!(sol.normal_equation_ratio < 1e-8);

        let a = random_response(bands, 3, 33).unwrap();
        let z = simulate_multiband(&x, &a).unwrap();
        let joint = solve_basis(&y, &mask, &w, Some(JointTerms { multiband: &z, response: &a })).unwrap();
        assert!((&joint.basis * &w - &sol.basis * &w).norm() < 1e-8 * truth.norm());
    }

    #[test]
    fn joint_solve_never_worse_on_joint_objective() {
        let (rows, cols, bands) = (10, 10, 8);
        let x = low_rank_scene(rows, cols, bands, 3, 40).unwrap();
        let mask = gen_mask(rows, cols, bands, 41, 0.5).unwrap();
        let a = random_response(bands, 3, 42).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let y = crate::forward::add_noise(y, 0.02, 43).unwrap();
        let z = crate::forward::add_noise(z, 0.02, 44).unwrap();
        let w = estimate_coefficients(&z, 3, 1e-10).unwrap().w;
        let joint = JointTerms { multiband: &z, response: &a };
        let base = solve_basis(&y, &mask, &w, None).unwrap();
        let imp = solve_basis(&y, &mask, &w, Some(joint)).unwrap();
        let r_base = joint_residual(&y, &mask, joint, &FactorPair { basis: base.basis, coefficients: w.clone() }).unwrap();
        let r_imp = joint_residual(&y, &mask, joint, &FactorPair { basis: imp.basis, coefficients: w }).unwrap();
        assert!(r_imp <= r_base * (1.0 + 1e-12));
        assert!((r_imp - imp.residual_norm).abs() < 1e-10);
    }

    #[test]
    fn fuse_exact_recovery() {
        let (rows, cols, bands) = (16, 16, 10);
        let x = low_rank_scene(rows, cols, bands, 3, 50).unwrap();
        let mask = gen_mask(rows, cols, bands, 51, 0.5).unwrap();
        let a = random_response(bands, 3, 52).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let rec = fuse(&y, &z, &mask, &FusionConfig::default(), None).unwrap();
        assert!(rec.cube.relative_error(&x).unwrap() < 1e-8);
    }

    #[test]
    fn fuse_zero_scene() {
        let x = HsiCube::zeros(8, 8, 4).unwrap();
        let mask = gen_mask(8, 8, 4, 1, 0.5).unwrap();
        let a = gen_response(&ResponseKind::Average, 4, 3).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let rec = fuse(&y, &z, &mask, &FusionConfig::default(), None).unwrap();
        assert!(rec.cube.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(rec.patches[0].effective_rank, 0);
    }

    #[test]
    fn fuse_is_gauge_invariant() {
        let (rows, cols, bands) = (12, 12, 8);
        let x = low_rank_scene(rows, cols, bands, 3, 60).unwrap();
        let mask = gen_mask(rows, cols, bands, 61, 0.5).unwrap();
        let a = random_response(bands, 3, 62).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let w = estimate_coefficients(&z, 3, 1e-10).unwrap().w;
        let mut flipped = w.clone();
        flipped.row_mut(1).neg_mut();
        // A further rotation in the (0, 2) plane.
        let (s, c) = 0.3f64.sin_cos();
        let (r0, r2) = (flipped.row(0).clone_owned(), flipped.row(2).clone_owned());
        flipped.set_row(0, &(&r0 * c - &r2 * s));
        flipped.set_row(2, &(&r0 * s + &r2 * c));
        let e1 = solve_basis(&y, &mask, &w, None).unwrap().basis;
        let e2 = solve_basis(&y, &mask, &flipped, None).unwrap().basis;
        let x1 = &e1 * &w;
        let x2 = &e2 * &flipped;
        assert!((&x1 - &x2).norm() < 1e-10 * x1.norm());
    }

    #[test]
    fn fuse_rejects_bad_inputs() {
        let x = low_rank_scene(4, 4, 8, 3, 1).unwrap();
        let mask = gen_mask(4, 4, 8, 1, 0.5).unwrap();
        let a = random_response(8, 3, 1).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        // 16 pixels cannot support 3 * 8 unknowns.
        assert!(matches!(
            fuse(&y, &z, &mask, &FusionConfig::default(), None),
            Err(Error::PatchConstraint { area: 16, unknowns: 24 })
        ));
        let cfg = FusionConfig { rank: 4, ..FusionConfig::default() };
        assert!(fuse(&y, &z, &mask, &cfg, None).is_err());
        let cfg = FusionConfig { rank: 1, improved: true, ..FusionConfig::default() };
        assert!(fuse(&y, &z, &mask, &cfg, None).is_err());
    }

    #[test]
    fn pfuse_exact_tiling_matches_fuse_on_low_rank() {
        let (rows, cols, bands) = (20, 20, 6);
        let x = low_rank_scene(rows, cols, bands, 3, 70).unwrap();
        let mask = gen_mask(rows, cols, bands, 71, 0.5).unwrap();
        let a = random_response(bands, 3, 72).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let global = fuse(&y, &z, &mask, &FusionConfig::default(), None).unwrap();
        let cfg = FusionConfig { patch_rows: 10, patch_cols: 10, stride: 10, ..FusionConfig::default() };
        let patched = pfuse(&y, &z, &mask, &cfg, None).unwrap();
        assert_eq!(patched.patches.len(), 4);
        assert!(patched.cube.relative_error(&global.cube).unwrap() < 1e-8);
    }

    #[test]
    fn pfuse_whole_image_patch_is_fuse() {
        let (rows, cols, bands) = (12, 10, 5);
        let x = two_subspace_scene(rows, cols, bands, 3, 5, 80).unwrap();
        let mask = gen_mask(rows, cols, bands, 81, 0.5).unwrap();
        let a = random_response(bands, 3, 82).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let global = fuse(&y, &z, &mask, &FusionConfig::default(), None).unwrap();
        let cfg = FusionConfig { patch_rows: rows, patch_cols: cols, stride: cols, ..FusionConfig::default() };
        let patched = pfuse(&y, &z, &mask, &cfg, None).unwrap();
        assert_eq!(patched.cube, global.cube);
    }

    #[test]
    fn pfuse_beats_fuse_on_piecewise_scene() {
        let (rows, cols, bands) = (40, 40, 8);
        let x = two_subspace_scene(rows, cols, bands, 3, 20, 90).unwrap();
        let mask = gen_mask(rows, cols, bands, 91, 0.5).unwrap();
        let a = random_response(bands, 3, 92).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let global = fuse(&y, &z, &mask, &FusionConfig::default(), None).unwrap();
        let cfg = FusionConfig { patch_rows: 20, patch_cols: 20, stride: 20, ..FusionConfig::default() };
        let patched = pfuse(&y, &z, &mask, &cfg, None).unwrap();
        let e_patch = patched.cube.relative_error(&x).unwrap();
        let e_global = global.cube.relative_error(&x).unwrap();
        assert!(e_patch < 1e-6, "patch error {e_patch}");
        assert!(e_global > 1e-3, "global error {e_global}");
    }

    #[test]
    fn pfuse_constraint_and_patch_errors() {
        let (rows, cols, bands) = (12, 12, 10);
        let x = low_rank_scene(rows, cols, bands, 3, 1).unwrap();
        let mask = gen_mask(rows, cols, bands, 2, 0.5).unwrap();
        let a = random_response(bands, 3, 3).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let cfg = FusionConfig { patch_rows: 5, patch_cols: 6, stride: 3, ..FusionConfig::default() };
        assert!(matches!(pfuse(&y, &z, &mask, &cfg, None), Err(Error::PatchConstraint { area: 30, unknowns: 30 })));

        // A mask that is zero on the lower half turns those patches rank deficient.
        let mut dead = mask.clone().into_cube();
        for i in 6..12 {
            for j in 0..12 {
                for k in 0..bands {
                    dead.set(i, j, k, 0.0);
                }
            }
        }
        let dead = MaskCube::new(dead);
        let y = simulate_cassi(&x, &dead).unwrap();
        let cfg = FusionConfig { patch_rows: 6, patch_cols: 6, stride: 6, ..FusionConfig::default() };
        match pfuse(&y, &z, &dead, &cfg, None) {
            Err(Error::Patch { row: 6, col: 0, source }) => assert!(source.is_numerical()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pfuse_is_thread_count_invariant() {
        let (rows, cols, bands) = (30, 30, 6);
        let x = two_subspace_scene(rows, cols, bands, 3, 13, 5).unwrap();
        let mask = gen_mask(rows, cols, bands, 6, 0.5).unwrap();
        let a = random_response(bands, 3, 7).unwrap();
        let (y, z) = measure(&x, &mask, &a);
        let cfg = FusionConfig { patch_rows: 8, patch_cols: 8, stride: 3, ..FusionConfig::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| pfuse(&y, &z, &mask, &cfg, None).unwrap().cube)
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }
}
