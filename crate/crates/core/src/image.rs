//! 8-bit grayscale images: PGM I/O, LUT application, histograms and the
//! Michelson contrast ratio.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("not a P2/P5 graymap (magic {0:?})")]
    BadMagic(String),
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("pixel data truncated: expected {expected} samples, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("sample {value} at index {index} exceeds maxval {maxval}")]
    BadSample { index: usize, value: u32, maxval: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmVariant {
    P2,
    P5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(crate::error::invalid("image", "width and height must be at least 1"));
        }
        if data.len() != width * height {
            return Err(crate::error::invalid("image.data", "length must equal width*height"));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, code: u8) -> Result<Self> {
        Self::new(width, height, vec![code; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<u32, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::BadHeader(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::BadHeader(format!("{what} out of range")))
    }
}

pub fn read_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, PgmError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    let variant = match magic {
        b"P2" => PgmVariant::P2,
        b"P5" => PgmVariant::P5,
        _ => return Err(PgmError::BadMagic(String::from_utf8_lossy(magic).into_owned())),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PgmError::BadHeader("missing whitespace after magic".into()));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader("zero dimension".into()));
    }
    if maxval == 0 {
        return Err(PgmError::BadHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(PgmError::MaxvalTooLarge(maxval));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::BadHeader("dimensions overflow".into()))?;

    let data = match variant {
        PgmVariant::P5 => {
            // exactly one whitespace byte separates maxval from the raster
            if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
                return Err(PgmError::BadHeader("missing whitespace after maxval".into()));
            }
            let raster = &bytes[h.pos + 1..];
            if raster.len() < expected {
                return Err(PgmError::TruncatedData {
                    expected,
                    found: raster.len(),
                });
            }
            raster[..expected].to_vec()
        }
        PgmVariant::P2 => {
            let mut data = Vec::with_capacity(expected);
            for index in 0..expected {
                h.skip_space_and_comments();
                if h.pos >= bytes.len() {
                    return Err(PgmError::TruncatedData {
                        expected,
                        found: index,
                    });
                }
                let value = h.number("sample")?;
                data.push(value);
            }
            data.into_iter()
                .enumerate()
                .map(|(index, value)| {
                    u8::try_from(value)
                        .ok()
                        .filter(|v| u32::from(*v) <= maxval)
                        .ok_or(PgmError::BadSample { index, value, maxval })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
    };
    if let PgmVariant::P5 = variant {
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, v)| u32::from(**v) > maxval) {
            return Err(PgmError::BadSample {
                index,
                value: v.into(),
                maxval,
            });
        }
    }
    Ok(GrayImage { width, height, data })
}

pub fn write_pgm(image: &GrayImage, variant: PgmVariant) -> Vec<u8> {
    match variant {
        PgmVariant::P5 => {
            let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
            out.extend_from_slice(&image.data);
            out
        }
        PgmVariant::P2 => {
            let mut s = format!("P2\n{} {}\n255\n", image.width, image.height);
            for row in image.data.chunks(image.width) {
                let line: Vec<String> = row.iter().map(u8::to_string).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
            s.into_bytes()
        }
    }
}

pub fn apply_lut(image: &GrayImage, lut: &[u8; 256]) -> GrayImage {
    GrayImage {
        width: image.width,
        height: image.height,
        data: image.data.iter().map(|&p| lut[p as usize]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bins: [u64; 256],
    pub l_min: u8,
    pub l_max: u8,
}

pub fn histogram(image: &GrayImage) -> Histogram {
    let mut bins = [0u64; 256];
    for &p in &image.data {
        bins[p as usize] += 1;
    }
    // images are never empty, so at least one bin is occupied
    let l_min = bins.iter().position(|&c| c > 0).unwrap_or(0) as u8;
    let l_max = bins.iter().rposition(|&c| c > 0).unwrap_or(0) as u8;
    Histogram { bins, l_min, l_max }
}

/// Michelson contrast from the extreme occupied levels; 0 for an all-black image.
pub fn michelson_cr(image: &GrayImage) -> f64 {
    let h = histogram(image);
    cr_from_levels(h.l_min, h.l_max)
}

pub fn cr_from_levels(l_min: u8, l_max: u8) -> f64 {
    let (lo, hi) = (f64::from(l_min), f64::from(l_max));
    if hi + lo == 0.0 {
        0.0
    } else {
        (hi - lo) / (hi + lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastReport {
    pub cr_before: f64,
    pub cr_after: f64,
    pub improvement: f64,
    pub before_levels: (u8, u8),
    pub after_levels: (u8, u8),
}

pub fn enhancement_report(before: &GrayImage, after: &GrayImage) -> Result<ContrastReport> {
    if (before.width, before.height) != (after.width, after.height) {
        return Err(Error::DimensionMismatch(
            before.width,
            before.height,
            after.width,
            after.height,
        ));
    }
    let hb = histogram(before);
    let ha = histogram(after);
    let cr_before = cr_from_levels(hb.l_min, hb.l_max);
    let cr_after = cr_from_levels(ha.l_min, ha.l_max);
    if cr_before == 0.0 {
        return Err(Error::ZeroBaseContrast);
    }
    Ok(ContrastReport {
        cr_before,
        cr_after,
        improvement: cr_after / cr_before,
        before_levels: (hb.l_min, hb.l_max),
        after_levels: (ha.l_min, ha.l_max),
    })
}

/// Uniform codes in `[l_min, l_max]`; the first two pixels pin the range ends.
pub fn synth_low_contrast(width: usize, height: usize, l_min: u8, l_max: u8, seed: u64) -> Result<GrayImage> {
    if l_min > l_max {
        return Err(crate::error::invalid("l_min", "must not exceed l_max"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<u8> = (0..width * height)
        .map(|_| rng.random_range(l_min..=l_max))
        .collect();
    if let Some(p) = data.get_mut(0) {
        *p = l_min;
    }
    if let Some(p) = data.get_mut(1) {
        *p = l_max;
    }
    GrayImage::new(width, height, data)
}

pub fn histogram_json(h: &Histogram) -> String {
    let bins: Vec<String> = h.bins.iter().map(u64::to_string).collect();
    format!(
        "{{\"bins\":[{}],\"l_min\":{},\"l_max\":{},\"cr\":{:.6}}}\n",
        bins.join(","),
        h.l_min,
        h.l_max,
        cr_from_levels(h.l_min, h.l_max)
    )
}

pub fn report_json(r: &ContrastReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{{\"cr_before\":{:.6},\"cr_after\":{:.6},\"improvement\":{:.6}}}",
        r.cr_before, r.cr_after, r.improvement
    );
    s
}
