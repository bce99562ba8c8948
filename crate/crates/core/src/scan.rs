//! Organized single-view scans and the `BINSCAN` file format.
//!
//! A scan is a row-major `width × height` grid of points in scanner space
//! (millimeters). Pixels without a return are invalid; they carry a NaN
//! triple in memory and on disk.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

const MAGIC: &str = "BINSCAN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("malformed scan header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data after payload: {0} extra bytes")]
    TrailingData(usize),
    #[error("scan dimensions must be nonzero (got {width}x{height})")]
    ZeroDimensions { width: usize, height: usize },
    #[error("point buffer holds {found} points, expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Organized grid of 3D points with a validity mask.
#[derive(Debug, Clone)]
pub struct StructuredScan {
    width: usize,
    height: usize,
    points: Vec<[f32; 3]>,
    valid: Vec<bool>,
}

impl StructuredScan {
    /// Builds a scan from raw points. Any triple with a non-finite component
    /// becomes an invalid pixel.
    pub fn from_points(
        width: usize,
        height: usize,
        mut points: Vec<[f32; 3]>,
    ) -> Result<Self, ScanError> {
        if width == 0 || height == 0 {
            return Err(ScanError::ZeroDimensions { width, height });
        }
        let expected = width * height;
        if points.len() != expected {
            return Err(ScanError::SizeMismatch {
                expected,
                found: points.len(),
            });
        }
        let mut valid = Vec::with_capacity(expected);
        for p in points.iter_mut() {
            let ok = p.iter().all(|c| c.is_finite());
            if !ok {
                *p = [f32::NAN; 3];
            }
            valid.push(ok);
        }
        Ok(Self {
            width,
            height,
            points,
            valid,
        })
    }

    /// A scan where every pixel is invalid.
    pub fn empty(width: usize, height: usize) -> Result<Self, ScanError> {
        Self::from_points(width, height, vec![[f32::NAN; 3]; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn raw_points(&self) -> &[[f32; 3]] {
        &self.points
    }

    /// Point at a pixel index, or `None` for invalid pixels.
    #[inline]
    pub fn point(&self, idx: usize) -> Option<Vector3<f64>> {
        if self.valid[idx] {
            let p = self.points[idx];
            Some(Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Iterates `(pixel index, point)` over valid pixels only.
    pub fn valid_points(&self) -> impl Iterator<Item = (usize, Vector3<f64>)> + '_ {
        (0..self.points.len()).filter_map(move |i| self.point(i).map(|p| (i, p)))
    }

    /// Marks a pixel invalid.
    pub fn invalidate(&mut self, idx: usize) {
        self.valid[idx] = false;
        self.points[idx] = [f32::NAN; 3];
    }

    /// Keeps only the pixels for which `keep` returns true.
    pub fn retain<F>(&mut self, mut keep: F)
    where
        F: FnMut(usize, Vector3<f64>) -> bool,
    {
        for i in 0..self.points.len() {
            if let Some(p) = self.point(i) {
                if !keep(i, p) {
                    self.invalidate(i);
                }
            }
        }
    }

    /// Size in bytes of the serialized form.
    pub fn encoded_len(&self) -> usize {
        header(self.width, self.height).len() + self.points.len() * 12
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(header(self.width, self.height).as_bytes())?;
        let mut buf = Vec::with_capacity(self.points.len() * 12);
        for p in &self.points {
            for c in p {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ScanError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ScanError> {
        let nl = bytes
            .iter()
            .take(128)
            .position(|b| *b == b'\n')
            .ok_or_else(|| ScanError::MalformedHeader("missing header line".into()))?;
        let line = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| ScanError::MalformedHeader("header is not ASCII".into()))?;
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 4 || fields[0] != MAGIC {
            return Err(ScanError::MalformedHeader(format!(
                "unexpected header {line:?}"
            )));
        }
        let version: u32 = fields[1]
            .parse()
            .map_err(|_| ScanError::MalformedHeader(format!("bad version {:?}", fields[1])))?;
        if version != FORMAT_VERSION {
            return Err(ScanError::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let width: usize = fields[2]
            .parse()
            .map_err(|_| ScanError::MalformedHeader(format!("bad width {:?}", fields[2])))?;
        let height: usize = fields[3]
            .parse()
            .map_err(|_| ScanError::MalformedHeader(format!("bad height {:?}", fields[3])))?;
        if width == 0 || height == 0 {
            return Err(ScanError::ZeroDimensions { width, height });
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(12))
            .ok_or_else(|| ScanError::MalformedHeader("dimensions overflow".into()))?;
        let payload = &bytes[nl + 1..];
        if payload.len() < expected {
            return Err(ScanError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(ScanError::TrailingData(payload.len() - expected));
        }
        let points = payload
            .chunks_exact(12)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]);
                [f(0), f(4), f(8)]
            })
            .collect();
        Self::from_points(width, height, points)
    }
}

/// Bit-level equality: same shape, same mask, same float bits.
impl PartialEq for StructuredScan {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.valid == other.valid
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

fn header(width: usize, height: usize) -> String {
    format!("{MAGIC} {FORMAT_VERSION} {width} {height}\n")
}

pub fn load_scan(path: impl AsRef<Path>) -> Result<StructuredScan, ScanError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    StructuredScan::decode(&bytes)
}

pub fn save_scan(scan: &StructuredScan, path: impl AsRef<Path>) -> Result<(), ScanError> {
    let mut w = BufWriter::new(File::create(path)?);
    scan.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}
