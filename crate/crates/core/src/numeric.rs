//! Dense kernels: Householder QR, least squares and truncated SVD.
//!
//! Least squares never forms `Phi^T Phi`; it solves `R e = Q^T y` from the
//! Householder factorization, which keeps the conditioning of `Phi` itself.
//! The SVD reduces a tall matrix to its triangular factor first, so only a
//! `q x q` problem goes through the bidiagonal SVD.

use nalgebra::SVD;

use crate::cube::Matrix;
use crate::error::{Error, Result};

/// Relative threshold on `|R_jj| / max |R_ii|` below which a column is
/// considered dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Householder QR of an `r x q` matrix with `r >= q`.
///
/// Reflector `j` is `I - beta_j v_j v_j^T`, with `v_j` stored in column `j`
/// from row `j` down. The strict upper triangle holds `R`; its diagonal is kept
/// in `rdiag`.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    factors: Matrix,
    rdiag: Vec<f64>,
    beta: Vec<f64>,
}

impl HouseholderQr {
    pub fn new(mut a: Matrix) -> Result<Self> {
        let (r, q) = a.shape();
        if r < q {
            return Err(Error::Shape(format!("QR needs rows >= cols, got {r}x{q}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        let mut rdiag = vec![0.0; q];
        let mut beta = vec![0.0; q];
        let data = a.as_mut_slice();
        for j in 0..q {
            let (head, tail) = data.split_at_mut((j + 1) * r);
            let v = &mut head[j * r + j..];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let x0 = v[0];
            let alpha = if x0 > 0.0 { -norm } else { norm };
            v[0] = x0 - alpha;
            // v^T v = 2 norm (norm + |x0|)
            let b = 1.0 / (norm * (norm + x0.abs()));
            rdiag[j] = alpha;
            beta[j] = b;
            for col in tail.chunks_exact_mut(r) {
                let target = &mut col[j..];
                let s = b * dot(v, target);
                axpy(-s, v, target);
            }
        }
        Ok(Self { factors: a, rdiag, beta })
    }

    pub fn nrows(&self) -> usize {
        self.factors.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.factors.ncols()
    }

    pub fn rdiag(&self) -> &[f64] {
        &self.rdiag
    }

    /// Overwrites `y` (length `r`) with `Q^T y`.
    pub fn apply_qt(&self, y: &mut [f64]) {
        let r = self.nrows();
        for j in 0..self.ncols() {
            if self.beta[j] == 0.0 {
                continue;
            }
            let v = &self.factors.as_slice()[j * r + j..(j + 1) * r];
            let s = self.beta[j] * dot(v, &y[j..]);
            axpy(-s, v, &mut y[j..]);
        }
    }

    /// Overwrites `y` (length `r`) with `Q y`.
    pub fn apply_q(&self, y: &mut [f64]) {
        let r = self.nrows();
        for j in (0..self.ncols()).rev() {
            if self.beta[j] == 0.0 {
                continue;
            }
            let v = &self.factors.as_slice()[j * r + j..(j + 1) * r];
            let s = self.beta[j] * dot(v, &y[j..]);
            axpy(-s, v, &mut y[j..]);
        }
    }

    /// The `q x q` upper-triangular factor.
    pub fn r(&self) -> Matrix {
        let q = self.ncols();
        Matrix::from_fn(q, q, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => self.factors[(i, j)],
            std::cmp::Ordering::Equal => self.rdiag[i],
            std::cmp::Ordering::Greater => 0.0,
        })
    }

    /// Numerical rank check against [`RANK_TOLERANCE`].
    pub fn check_full_rank(&self) -> Result<()> {
        let q = self.ncols();
        let max = self.rdiag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let deficient: Vec<usize> =
            (0..q).filter(|&j| max == 0.0 || self.rdiag[j].abs() <= RANK_TOLERANCE * max).collect();
        match deficient.first() {
            None => Ok(()),
            Some(&column) => Err(Error::RankDeficient { rank: q - deficient.len(), cols: q, column }),
        }
    }

    /// Back substitution `R x = b` on the leading `q` entries of `b`.
    fn solve_r(&self, b: &[f64]) -> Vec<f64> {
        let q = self.ncols();
        let mut x = b[..q].to_vec();
        for i in (0..q).rev() {
            let mut s = x[i];
            for l in i + 1..q {
                s -= self.factors[(i, l)] * x[l];
            }
            x[i] = s / self.rdiag[i];
        }
        x
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Minimizer of `||y - Phi e||_2` and its residual norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub solution: Vec<f64>,
    pub residual_norm: f64,
}

/// Least-squares solve of an overdetermined full-column-rank system.
pub fn lstsq(phi: &Matrix, y: &[f64]) -> Result<LstsqSolution> {
    let (r, q) = phi.shape();
    if y.len() != r {
        return Err(Error::Shape(format!("right-hand side of length {} for {r} rows", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side"));
    }
    let qr = HouseholderQr::new(phi.clone())?;
    qr.check_full_rank()?;
    let mut rhs = y.to_vec();
    qr.apply_qt(&mut rhs);
    let residual_norm = rhs[q..].iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(LstsqSolution { solution: qr.solve_r(&rhs), residual_norm })
}

/// Leading singular triplets: `M ~ U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `rows x k`, orthonormal columns.
    pub u: Matrix,
    /// `cols x k`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `V V^T`, invariant under the sign/rotation freedom of the factors.
    pub fn right_projector(&self) -> Matrix {
        &self.v * self.v.transpose()
    }
}

/// Triangular factor of a tall matrix, plus the factorization when needed.
fn small_svd(tall: Matrix) -> Result<(HouseholderQr, SVD<f64, nalgebra::Dyn, nalgebra::Dyn>)> {
    let qr = HouseholderQr::new(tall)?;
    let svd = SVD::new(qr.r(), true, true);
    Ok((qr, svd))
}

fn descending(values: &nalgebra::DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// The `k` largest singular triplets of `mat`.
pub fn truncated_svd(mat: &Matrix, k: usize) -> Result<SvdResult> {
    let (rows, cols) = mat.shape();
    let full = rows.min(cols);
    if k == 0 || k > full {
        return Err(Error::InvalidArgument(format!("rank {k} outside [1, {full}] for a {rows}x{cols} matrix")));
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let transposed = rows < cols;
    let tall = if transposed { mat.transpose() } else { mat.clone() };
    let long = tall.nrows();
    let (qr, svd) = small_svd(tall)?;
    let u_r = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let order = descending(&svd.singular_values);

    let mut sigma = Vec::with_capacity(k);
    // Left vectors of the tall matrix: Q [U_R; 0].
    let mut long_side = Matrix::zeros(long, k);
    let mut short_side = Matrix::zeros(full, k);
    for (t, &src) in order.iter().take(k).enumerate() {
        sigma.push(svd.singular_values[src]);
        let col = long_side.column_mut(t);
        let buf = col.data.into_slice_mut();
        buf[..full].copy_from_slice(u_r.column(src).as_slice());
        qr.apply_q(buf);
        for i in 0..full {
            short_side[(i, t)] = v_t[(src, i)];
        }
    }
    let (u, v) = if transposed { (short_side, long_side) } else { (long_side, short_side) };
    Ok(SvdResult { singular_values: sigma, u, v })
}

/// All `min(rows, cols)` singular values, descending.
pub fn singular_values(mat: &Matrix) -> Result<Vec<f64>> {
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let tall = if mat.nrows() < mat.ncols() { mat.transpose() } else { mat.clone() };
    let qr = HouseholderQr::new(tall)?;
    let values = qr.r().singular_values();
    Ok(descending(&values).into_iter().map(|i| values[i]).collect())
}
