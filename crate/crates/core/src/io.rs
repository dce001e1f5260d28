//! On-disk formats.
//!
//! Cube files (`HSC1`):
//!
//! | offset | size      | content                                   |
//! |--------|-----------|-------------------------------------------|
//! | 0      | 4         | magic `HSC1`                              |
//! | 4      | 12        | `M`, `N`, `B` as little-endian `u32`      |
//! | 16     | 4 M N B   | little-endian `f32`, band-sequential      |
//!
//! Within a band values are row-major: value `(i, j, k)` sits at payload
//! index `k M N + i N + j`. Values are stored in single precision; writing a
//! cube rounds each `f64` to the nearest `f32`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::forward::SpectralResponse;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 16;

pub fn encode_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    let (rows, cols, bands) = cube.shape();
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols * bands);
    out.extend_from_slice(CUBE_MAGIC);
    for d in [rows, cols, bands] {
        out.extend_from_slice(&dim(d)?.to_le_bytes());
    }
    for k in 0..bands {
        for i in 0..rows {
            for j in 0..cols {
                let v = cube.get(i, j, k) as f32;
                if !v.is_finite() {
                    return Err(Error::NonFinite("cube (after f32 rounding)"));
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("cube file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CUBE_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"HSC1\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols, bands) = (dim(4), dim(8), dim(12));
    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))?;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(Error::Format(format!("truncated payload: {} of {expected} bytes", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - expected)));
    }
    let mut cube = HsiCube::zeros(rows, cols, bands).map_err(|e| Error::Format(e.to_string()))?;
    let payload = &bytes[HEADER_LEN..];
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at payload index {idx}")));
        }
        let k = idx / (rows * cols);
        let rem = idx % (rows * cols);
        cube.set(rem / cols, rem % cols, k, v as f64);
    }
    Ok(cube)
}

pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cube(cube)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_response(path: impl AsRef<Path>) -> Result<SpectralResponse> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SpectralResponse::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_response(response: &SpectralResponse, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, response.to_text()).map_err(|e| Error::io(path, e))
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    }
}

pub const REPORT_HEADER: &str = "scene,method,k,m,s,m_psnr,m_ssim,msa,wall_seconds";

/// One evaluation. `m` and `s` are 0 for global reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scene: String,
    pub method: String,
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub m_psnr: f64,
    pub m_ssim: f64,
    pub msa: f64,
    pub wall_seconds: f64,
}

fn check_identifier(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c == ',' || c == '"' || c.is_whitespace()) {
        return Err(Error::InvalidArgument(format!("{s:?} is not a bare CSV identifier")));
    }
    Ok(())
}

pub fn format_report(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        check_identifier(&r.scene)?;
        check_identifier(&r.method)?;
        let f = |v: f64| format_significant(v, 6);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scene,
            r.method,
            r.k,
            r.m,
            r.s,
            f(r.m_psnr),
            f(r.m_ssim),
            f(r.msa),
            f(r.wall_seconds)
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_report(rows)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a report written by [`write_report`].
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Format("report header mismatch".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Format(format!("report row has {} fields: {line:?}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad integer {s:?}")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
            Ok(ReportRow {
                scene: f[0].to_string(),
                method: f[1].to_string(),
                k: int(f[2])?,
                m: int(f[3])?,
                s: int(f[4])?,
                m_psnr: real(f[5])?,
                m_ssim: real(f[6])?,
                msa: real(f[7])?,
                wall_seconds: real(f[8])?,
            })
        })
        .collect()
}

/// Ordered `key = value` configuration of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`, keeping first-insertion order.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Format(format!("manifest line {}: empty key", n + 1)));
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
