//! Acquisition models: coded-aperture (CASSI) and multiband (RGB) cameras.
//!
//! Random draws use PCG-XSH-RR 32 (`rand_pcg::Pcg32`) seeded with
//! `Pcg32::new(seed, PCG_STREAM)` and consumed in the order `i`, then `j`,
//! then `k` (row index outermost, band innermost). The draws are therefore
//! identical on every platform for the same seed and shape.

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use rand_pcg::Pcg32;

use crate::cube::{shape_mismatch, HsiCube, Matrix};
use crate::error::{Error, Result};

/// PCG stream selector used for every seeded draw.
pub const PCG_STREAM: u64 = 0x0a02_bdbf_7bb3_c0a7;

fn rng(seed: u64) -> Pcg32 {
    Pcg32::new(seed, PCG_STREAM)
}

/// Uniform in `[0, 1)` from one 32-bit output.
#[inline]
fn unit(r: &mut Pcg32) -> f64 {
    r.next_u32() as f64 / 4_294_967_296.0
}

/// The coded aperture: one modulation weight per pixel and band.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCube(HsiCube);

impl MaskCube {
    pub fn new(cube: HsiCube) -> Self {
        Self(cube)
    }

    pub fn cube(&self) -> &HsiCube {
        &self.0
    }

    pub fn into_cube(self) -> HsiCube {
        self.0
    }

    /// Number of pixels whose mask spectrum is identically zero. Such pixels
    /// carry no coded information.
    pub fn zero_pixels(&self) -> usize {
        (0..self.0.pixels()).filter(|&p| self.0.spectrum(p).iter().all(|&v| v == 0.0)).count()
    }
}

/// Bernoulli(`density`) binary mask.
///
/// Entry `(i, j, k)` is 1 when `u32 / 2^32 < density` for the next PCG draw.
pub fn gen_mask(rows: usize, cols: usize, bands: usize, seed: u64, density: f64) -> Result<MaskCube> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("mask density {density} outside (0, 1]")));
    }
    let mut cube = HsiCube::zeros(rows, cols, bands)?;
    let mut r = rng(seed);
    for i in 0..rows {
        for j in 0..cols {
            for k in 0..bands {
                if unit(&mut r) < density {
                    cube.set(i, j, k, 1.0);
                }
            }
        }
    }
    Ok(MaskCube(cube))
}

/// Maps a `B`-band spectrum onto `c` detector channels (`B x c`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse(Matrix);

impl SpectralResponse {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::InvalidArgument("spectral response needs at least one band and channel".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectral response"));
        }
        if matrix.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("spectral response entries must be nonnegative".into()));
        }
        if let Some(t) = (0..matrix.ncols()).find(|&t| matrix.column(t).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidArgument(format!("spectral response channel {t} is all zero")));
        }
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn channels(&self) -> usize {
        self.0.ncols()
    }

    /// Parses `B c` followed by `B` rows of `c` reals.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty response file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad response header {header:?}"))))
            .collect::<Result<_>>()?;
        let [bands, channels] = dims[..] else {
            return Err(Error::Format(format!("response header must be \"B c\", got {header:?}")));
        };
        let mut m = Matrix::zeros(bands, channels);
        for b in 0..bands {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("response file ends after {b} of {bands} rows")))?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Format(format!("bad value {t:?} in response row {b}"))))
                .collect::<Result<_>>()?;
            if values.len() != channels {
                return Err(Error::Format(format!("response row {b} has {} values, expected {channels}", values.len())));
            }
            for (t, v) in values.into_iter().enumerate() {
                m[(b, t)] = v;
            }
        }
        if lines.next().is_some() {
            return Err(Error::Format("trailing rows in response file".into()));
        }
        Self::new(m).map_err(|e| Error::Format(e.to_string()))
    }

    /// Text form understood by [`SpectralResponse::parse`]; values use the
    /// shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.bands(), self.channels());
        for b in 0..self.bands() {
            let row: Vec<String> = (0..self.channels()).map(|t| format!("{:?}", self.0[(b, t)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// How to build a spectral response.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseKind {
    /// Channel `t` averages its contiguous band group.
    Average,
    /// Channel `t` reads exactly band `indices[t]`.
    SingleBand(Vec<usize>),
    /// Verbatim contents of a response file.
    Text(String),
}

pub fn gen_response(kind: &ResponseKind, bands: usize, channels: usize) -> Result<SpectralResponse> {
    match kind {
        ResponseKind::Average => {
            if channels == 0 || channels > bands {
                return Err(Error::InvalidArgument(format!("average response needs 1 <= c <= B, got c={channels}, B={bands}")));
            }
            let mut m = Matrix::zeros(bands, channels);
            for t in 0..channels {
                let (lo, hi) = (t * bands / channels, (t + 1) * bands / channels);
                let w = 1.0 / (hi - lo) as f64;
                for b in lo..hi {
                    m[(b, t)] = w;
                }
            }
            SpectralResponse::new(m)
        }
        ResponseKind::SingleBand(indices) => {
            if indices.len() != channels {
                return Err(Error::InvalidArgument(format!("{} band indices for {channels} channels", indices.len())));
            }
            let mut seen = vec![false; bands];
            let mut m = Matrix::zeros(bands, channels);
            for (t, &b) in indices.iter().enumerate() {
                if b >= bands || std::mem::replace(&mut seen[b], true) {
                    return Err(Error::InvalidArgument(format!("band index {b} is out of range or repeated")));
                }
                m[(b, t)] = 1.0;
            }
            SpectralResponse::new(m)
        }
        ResponseKind::Text(text) => {
            let r = SpectralResponse::parse(text)?;
            if r.bands() != bands || r.channels() != channels {
                return Err(Error::Shape(format!(
                    "response file is {}x{}, expected {bands}x{channels}",
                    r.bands(),
                    r.channels()
                )));
            }
            Ok(r)
        }
    }
}

/// The coded image `Y` (`rows x cols`). `vec(Y)` follows the pixel
/// linearization, which is the column-major storage of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CassiMeasurement(pub Matrix);

impl CassiMeasurement {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// As a single-band cube.
    pub fn to_cube(&self) -> HsiCube {
        HsiCube::from_pixel_major(self.0.nrows(), self.0.ncols(), 1, self.0.as_slice().to_vec())
            .expect("measurement is finite and non-empty")
    }

    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        if cube.bands() != 1 {
            return Err(Error::Shape(format!("CASSI image must have one band, got {}", cube.bands())));
        }
        Ok(Self(Matrix::from_column_slice(cube.rows(), cube.cols(), cube.as_slice())))
    }
}

/// The multiband image `Z` (`rows x cols x c`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandMeasurement(pub HsiCube);

impl MultibandMeasurement {
    pub fn cube(&self) -> &HsiCube {
        &self.0
    }

    pub fn channels(&self) -> usize {
        self.0.bands()
    }
}

/// `Y(i, j) = sum_k X(i, j, k) C(i, j, k)`.
pub fn simulate_cassi(scene: &HsiCube, mask: &MaskCube) -> Result<CassiMeasurement> {
    if !scene.same_shape(&mask.0) {
        return Err(shape_mismatch(scene, &mask.0));
    }
    let y: Vec<f64> = (0..scene.pixels())
        .map(|p| scene.spectrum(p).iter().zip(mask.0.spectrum(p)).map(|(x, c)| x * c).sum())
        .collect();
    Ok(CassiMeasurement(Matrix::from_vec(scene.rows(), scene.cols(), y)))
}

/// `Z(i, j, :) = A^T X(i, j, :)`.
pub fn simulate_multiband(scene: &HsiCube, response: &SpectralResponse) -> Result<MultibandMeasurement> {
    if response.bands() != scene.bands() {
        return Err(Error::Shape(format!(
            "response has {} bands, scene has {}",
            response.bands(),
            scene.bands()
        )));
    }
    let a = response.matrix();
    let c = response.channels();
    let mut data = Vec::with_capacity(scene.pixels() * c);
    for p in 0..scene.pixels() {
        let x = scene.spectrum(p);
        for t in 0..c {
            data.push(a.column(t).iter().zip(x).map(|(w, v)| w * v).sum());
        }
    }
    Ok(MultibandMeasurement(HsiCube::from_pixel_major(scene.rows(), scene.cols(), c, data)?))
}

/// Measurements that can receive additive noise.
pub trait Measurement {
    /// `(rows, cols, channels)`.
    fn shape(&self) -> (usize, usize, usize);
    fn value_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64;
}

impl Measurement for CassiMeasurement {
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.nrows(), self.0.ncols(), 1)
    }

    fn value_mut(&mut self, i: usize, j: usize, _k: usize) -> &mut f64 {
        &mut self.0[(i, j)]
    }
}

impl Measurement for MultibandMeasurement {
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    fn value_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let (rows, _, bands) = self.0.shape();
        &mut self.0.as_mut_slice()[(i + j * rows) * bands + k]
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise, drawn in `(i, j, k)` order.
pub fn add_noise<T: Measurement>(mut meas: T, sigma: f64, seed: u64) -> Result<T> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(meas);
    }
    let (rows, cols, bands) = meas.shape();
    let mut r = rng(seed);
    for i in 0..rows {
        for j in 0..cols {
            for k in 0..bands {
                let n: f64 = r.sample(StandardNormal);
                *meas.value_mut(i, j, k) += sigma * n;
            }
        }
    }
    Ok(meas)
}
