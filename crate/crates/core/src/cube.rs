//! Cube value type, mode-3 folding and overlapping patch tiling.
//!
//! Pixels are linearized column-major over rows, `p = i + j * rows`, and a
//! cube stores each pixel spectrum contiguously at `p * bands`. With that
//! layout [`unfold3`] is a reinterpretation of the buffer as a column-major
//! `bands x pixels` matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense column-major real matrix.
pub type Matrix = DMatrix<f64>;

/// Spatial position of a pixel together with its linear index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

impl PixelIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Linear index for an image with `rows` rows.
    #[inline]
    pub fn linear(self, rows: usize) -> usize {
        self.row + self.col * rows
    }

    #[inline]
    pub fn from_linear(p: usize, rows: usize) -> Self {
        Self { row: p % rows, col: p / rows }
    }
}

/// A spatial-spectral cube of `rows x cols x bands` finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<f64>,
}

impl HsiCube {
    pub fn zeros(rows: usize, cols: usize, bands: usize) -> Result<Self> {
        check_dims(rows, cols, bands)?;
        Ok(Self { rows, cols, bands, data: vec![0.0; rows * cols * bands] })
    }

    /// Builds a cube from `f(i, j, k)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut cube = Self::zeros(rows, cols, bands)?;
        for j in 0..cols {
            for i in 0..rows {
                let p = i + j * rows;
                for k in 0..bands {
                    cube.data[p * bands + k] = f(i, j, k);
                }
            }
        }
        cube.check_finite()?;
        Ok(cube)
    }

    /// Wraps a buffer laid out pixel by pixel (`(i + j * rows) * bands + k`).
    pub fn from_pixel_major(rows: usize, cols: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols, bands)?;
        if data.len() != rows * cols * bands {
            return Err(Error::Shape(format!(
                "buffer of {} values for a {rows}x{cols}x{bands} cube",
                data.len()
            )));
        }
        let cube = Self { rows, cols, bands, data };
        cube.check_finite()?;
        Ok(cube)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    /// Pixel-major buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i + j * self.rows) * self.bands + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[(i + j * self.rows) * self.bands + k] = value;
    }

    /// Spectrum at linear pixel index `p`.
    #[inline]
    pub fn spectrum(&self, p: usize) -> &[f64] {
        &self.data[p * self.bands..(p + 1) * self.bands]
    }

    #[inline]
    pub fn spectrum_mut(&mut self, p: usize) -> &mut [f64] {
        let b = self.bands;
        &mut self.data[p * b..(p + 1) * b]
    }

    /// Copies band `k` into a `rows x cols` matrix.
    pub fn band(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j, k))
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.shape() == other.shape()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other||_F / ||other||_F`, or the absolute difference when
    /// `other` is zero.
    pub fn relative_error(&self, other: &HsiCube) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(shape_mismatch(self, other));
        }
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = other.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("cube"))
        }
    }
}

pub(crate) fn shape_mismatch(a: &HsiCube, b: &HsiCube) -> Error {
    Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape()))
}

fn check_dims(rows: usize, cols: usize, bands: usize) -> Result<()> {
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(Error::Shape(format!("cube dimensions must be positive, got {rows}x{cols}x{bands}")));
    }
    Ok(())
}

/// Mode-3 unfolding: a `bands x (rows * cols)` matrix whose column `p` is
/// the spectrum of pixel `p`.
pub fn unfold3(cube: &HsiCube) -> Matrix {
    Matrix::from_column_slice(cube.bands, cube.pixels(), &cube.data)
}

/// Inverse of [`unfold3`].
pub fn fold3(mat: &Matrix, rows: usize, cols: usize) -> Result<HsiCube> {
    if mat.ncols() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot fold a {}x{} matrix into {rows}x{cols} pixels",
            mat.nrows(),
            mat.ncols()
        )));
    }
    HsiCube::from_pixel_major(rows, cols, mat.nrows(), mat.as_slice().to_vec())
}

/// Overlapping tiling of an image by `patch_rows x patch_cols` windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    patch_rows: usize,
    patch_cols: usize,
    stride: usize,
    origins: Vec<PixelIndex>,
}

impl PatchGrid {
    pub fn patch_rows(&self) -> usize {
        self.patch_rows
    }

    pub fn patch_cols(&self) -> usize {
        self.patch_cols
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Patch origins (top-left corners), sorted row-major.
    pub fn origins(&self) -> &[PixelIndex] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

fn axis_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut out: Vec<usize> = (0..).map(|a| a * stride).take_while(|&o| o < last).collect();
    // Clamp: the final window always ends exactly at the image edge.
    out.push(last);
    out
}

/// Builds the patch grid. Origins fall on multiples of `stride`; the last
/// origin along each axis is clamped so the window ends at the border.
///
/// The stride is capped at `min(patch_rows, patch_cols)`: larger strides
/// would leave gaps.
pub fn make_grid(rows: usize, cols: usize, patch_rows: usize, patch_cols: usize, stride: usize) -> Result<PatchGrid> {
    if patch_rows == 0 || patch_cols == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if patch_rows > rows || patch_cols > cols {
        return Err(Error::InvalidArgument(format!(
            "patch {patch_rows}x{patch_cols} does not fit in image {rows}x{cols}"
        )));
    }
    if stride == 0 || stride > patch_rows.min(patch_cols) {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} must lie in [1, {}]",
            patch_rows.min(patch_cols)
        )));
    }
    let row_origins = axis_origins(rows, patch_rows, stride);
    let col_origins = axis_origins(cols, patch_cols, stride);
    let origins = row_origins
        .iter()
        .flat_map(|&r| col_origins.iter().map(move |&c| PixelIndex::new(r, c)))
        .collect();
    Ok(PatchGrid { rows, cols, patch_rows, patch_cols, stride, origins })
}

/// Copies the `patch_rows x patch_cols x bands` window at `origin`.
pub fn extract_patch(cube: &HsiCube, origin: PixelIndex, patch_rows: usize, patch_cols: usize) -> Result<HsiCube> {
    if origin.row + patch_rows > cube.rows || origin.col + patch_cols > cube.cols {
        return Err(Error::Shape(format!(
            "patch {patch_rows}x{patch_cols} at ({}, {}) exceeds {}x{}",
            origin.row, origin.col, cube.rows, cube.cols
        )));
    }
    let b = cube.bands;
    let mut data = Vec::with_capacity(patch_rows * patch_cols * b);
    for j in 0..patch_cols {
        let start = (origin.row + (origin.col + j) * cube.rows) * b;
        data.extend_from_slice(&cube.data[start..start + patch_rows * b]);
    }
    HsiCube::from_pixel_major(patch_rows, patch_cols, b, data)
}

/// Running sum and coverage count for overlapping patches.
///
/// The output depends only on the order in which patches are added.
#[derive(Debug, Clone)]
pub struct Aggregator {
    sum: HsiCube,
    count: Vec<u32>,
}

impl Aggregator {
    pub fn new(rows: usize, cols: usize, bands: usize) -> Result<Self> {
        Ok(Self { sum: HsiCube::zeros(rows, cols, bands)?, count: vec![0; rows * cols] })
    }

    pub fn add(&mut self, origin: PixelIndex, patch: &HsiCube) -> Result<()> {
        let (rows, cols, bands) = self.sum.shape();
        if patch.bands != bands {
            return Err(Error::Shape(format!("patch with {} bands, expected {bands}", patch.bands)));
        }
        if origin.row + patch.rows > rows || origin.col + patch.cols > cols {
            return Err(Error::Shape(format!(
                "patch {}x{} at ({}, {}) exceeds {rows}x{cols}",
                patch.rows, patch.cols, origin.row, origin.col
            )));
        }
        for j in 0..patch.cols {
            let dst_start = (origin.row + (origin.col + j) * rows) * bands;
            let src_start = j * patch.rows * bands;
            let len = patch.rows * bands;
            for (d, s) in self.sum.data[dst_start..dst_start + len]
                .iter_mut()
                .zip(&patch.data[src_start..src_start + len])
            {
                *d += s;
            }
            let p0 = origin.row + (origin.col + j) * rows;
            self.count[p0..p0 + patch.rows].iter_mut().for_each(|c| *c += 1);
        }
        Ok(())
    }

    /// Divides by coverage; fails if any pixel was never covered.
    pub fn finish(mut self) -> Result<HsiCube> {
        let rows = self.sum.rows;
        for (p, &n) in self.count.iter().enumerate() {
            if n == 0 {
                let px = PixelIndex::from_linear(p, rows);
                return Err(Error::Uncovered { row: px.row, col: px.col });
            }
            let n = n as f64;
            self.sum.spectrum_mut(p).iter_mut().for_each(|v| *v /= n);
        }
        Ok(self.sum)
    }
}

/// Averages overlapping patches into a `rows x cols` cube, accumulating in
/// the order given.
pub fn aggregate<'a, I>(patches: I, rows: usize, cols: usize) -> Result<HsiCube>
where
    I: IntoIterator<Item = (PixelIndex, &'a HsiCube)>,
{
    let mut iter = patches.into_iter().peekable();
    let bands = match iter.peek() {
        Some((_, p)) => p.bands,
        None => return Err(Error::Uncovered { row: 0, col: 0 }),
    };
    let mut acc = Aggregator::new(rows, cols, bands)?;
    for (origin, patch) in iter {
        acc.add(origin, patch)?;
    }
    acc.finish()
}
