//! Seeded device-variation sampling and batch scoring.
//!
//! Every index draws from its own ChaCha stream, so rows do not depend on
//! evaluation order or the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::PixelConfig;
use crate::curve::{extract_curve, Extraction};
use crate::error::{invalid, Error, Result};
use crate::export::fmt_g;
use crate::image::{apply_lut, michelson_cr, GrayImage};

const MAX_REDRAWS: usize = 100;
const TRUNCATION: f64 = 3.0;

/// Gaussian spreads: relative fractions for the PTM entries, volts for `x2_vth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSpec {
    pub r_hrs: f64,
    pub r_lrs: f64,
    pub i_c_hlt: f64,
    pub x2_vth: f64,
}

impl Default for VariationSpec {
    fn default() -> Self {
        VariationSpec {
            r_hrs: 0.05,
            r_lrs: 0.05,
            i_c_hlt: 0.05,
            x2_vth: 0.03,
        }
    }
}

impl VariationSpec {
    pub fn zero() -> Self {
        VariationSpec {
            r_hrs: 0.0,
            r_lrs: 0.0,
            i_c_hlt: 0.0,
            x2_vth: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("monte_carlo.sigma.r_hrs", self.r_hrs),
            ("monte_carlo.sigma.r_lrs", self.r_lrs),
            ("monte_carlo.sigma.i_c_hlt", self.i_c_hlt),
            ("monte_carlo.sigma.x2_vth", self.x2_vth),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(name, "sigma must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Standard normal draw, redrawn until it lies within the truncation bound.
fn truncated(rng: &mut ChaCha8Rng, name: &'static str) -> Result<f64> {
    for _ in 0..=MAX_REDRAWS {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= TRUNCATION {
            return Ok(z);
        }
    }
    Err(Error::ResampleExhausted(name))
}

fn positive(
    rng: &mut ChaCha8Rng,
    name: &'static str,
    draw: impl Fn(f64) -> f64,
) -> Result<f64> {
    for _ in 0..=MAX_REDRAWS {
        let v = draw(truncated(rng, name)?);
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::ResampleExhausted(name))
}

pub fn sample_variant(nominal: &PixelConfig, variation: &VariationSpec, index: u64, seed: u64) -> Result<PixelConfig> {
    variation.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let mut out = *nominal;
    let p = nominal.ptm;
    let mut ordered = false;
    for _ in 0..=MAX_REDRAWS {
        out.ptm.r_hrs = positive(&mut rng, "r_hrs", |z| p.r_hrs * (1.0 + variation.r_hrs * z))?;
        out.ptm.r_lrs = positive(&mut rng, "r_lrs", |z| p.r_lrs * (1.0 + variation.r_lrs * z))?;
        if out.ptm.r_hrs > out.ptm.r_lrs {
            ordered = true;
            break;
        }
    }
    if !ordered {
        return Err(Error::ResampleExhausted("r_hrs"));
    }
    out.ptm.i_c_hlt = positive(&mut rng, "i_c_hlt", |z| p.i_c_hlt * (1.0 + variation.i_c_hlt * z))?;
    let vth = nominal.x2.vth;
    out.x2.vth = positive(&mut rng, "x2.vth", |z| vth + variation.x2_vth * z)?;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub index: u64,
    /// Sampled config; `None` when sampling itself failed.
    pub sample: Option<PixelConfig>,
    pub outcome: std::result::Result<f64, Error>,
}

impl McRow {
    pub fn cr(&self) -> Option<f64> {
        self.outcome.as_ref().ok().copied()
    }
}

fn score(config: &PixelConfig, image: &GrayImage, extraction: &Extraction) -> Result<f64> {
    let curve = extract_curve(config, extraction.points, extraction.norm)?;
    let lut = curve
        .lut256()
        .ok_or_else(|| invalid("curve_points", "image scoring needs a 256-point curve"))?;
    Ok(michelson_cr(&apply_lut(image, &lut)))
}

/// Rows in index order. Per-row failures are recorded, not propagated.
/// Runs on the current rayon pool; wrap in `ThreadPool::install` to pin the
/// worker count.
pub fn run_monte_carlo(
    nominal: &PixelConfig,
    variation: &VariationSpec,
    n: u64,
    seed: u64,
    image: &GrayImage,
    extraction: &Extraction,
) -> Result<Vec<McRow>> {
    variation.validate()?;
    nominal.validate()?;
    if extraction.points != 256 {
        return Err(invalid("curve_points", "image scoring needs a 256-point curve"));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|index| match sample_variant(nominal, variation, index, seed) {
            Ok(cfg) => McRow {
                index,
                sample: Some(cfg),
                outcome: score(&cfg, image, extraction),
            },
            Err(e) => McRow {
                index,
                sample: None,
                outcome: Err(e),
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    /// Number of successful rows.
    pub n: usize,
    pub cr_min: f64,
    pub cr_max: f64,
    pub cr_mean: f64,
    pub cr_std: f64,
}

pub fn mc_summary(rows: &[McRow]) -> Result<McSummary> {
    let crs: Vec<f64> = rows.iter().filter_map(McRow::cr).collect();
    if crs.is_empty() {
        return Err(Error::NoSuccessfulRows);
    }
    let n = crs.len();
    let cr_min = crs.iter().copied().fold(f64::INFINITY, f64::min);
    let cr_max = crs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = crs.iter().sum::<f64>() / n as f64;
    let var = crs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(McSummary {
        n,
        cr_min,
        cr_max,
        cr_mean: mean.clamp(cr_min, cr_max),
        cr_std: var.sqrt(),
    })
}

pub const MC_HEADER: &str = "index,r_hrs_ohm,r_lrs_ohm,ic_hlt_a,vth_x2_v,cr,status";

pub fn mc_csv(rows: &[McRow]) -> String {
    let mut s = String::new();
    s.push_str(MC_HEADER);
    s.push('\n');
    for row in rows {
        let params = match &row.sample {
            Some(c) => format!(
                "{},{},{},{}",
                fmt_g(c.ptm.r_hrs, 9),
                fmt_g(c.ptm.r_lrs, 9),
                fmt_g(c.ptm.i_c_hlt, 9),
                fmt_g(c.x2.vth, 9)
            ),
            None => ",,,".to_string(),
        };
        let (cr, status) = match &row.outcome {
            Ok(cr) => (format!("{cr:.6}"), "ok".to_string()),
            Err(e) => (String::new(), format!("error: {}", e.to_string().replace([',', '\n'], ";"))),
        };
        s.push_str(&format!("{},{},{},{}\n", row.index, params, cr, status));
    }
    s
}

pub fn summary_json(s: &McSummary) -> String {
    format!(
        "{{\"n\":{},\"cr_min\":{:.6},\"cr_max\":{:.6},\"cr_mean\":{:.6},\"cr_std\":{:.6}}}\n",
        s.n, s.cr_min, s.cr_max, s.cr_mean, s.cr_std
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_row(index: u64, cr: f64) -> McRow {
        McRow {
            index,
            sample: None,
            outcome: Ok(cr),
        }
    }

    #[test]
    fn zero_sigma_returns_nominal() {
        let nominal = PixelConfig::ref_a();
        for i in 0..20 {
            assert_eq!(sample_variant(&nominal, &VariationSpec::zero(), i, 3).unwrap(), nominal);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_index() {
        let nominal = PixelConfig::ref_a();
        let variation = VariationSpec::default();
        let a = sample_variant(&nominal, &variation, 17, 42).unwrap();
        assert_eq!(a, sample_variant(&nominal, &variation, 17, 42).unwrap());
        assert_ne!(a, sample_variant(&nominal, &variation, 18, 42).unwrap());
        assert_ne!(a, sample_variant(&nominal, &variation, 17, 43).unwrap());
    }

    #[test]
    fn truncation_bounds_hold_over_many_samples() {
        let nominal = PixelConfig::ref_a();
        let variation = VariationSpec::default();
        let r0 = nominal.ptm.r_hrs;
        let vth0 = nominal.x2.vth;
        for i in 0..10_000 {
            let c = sample_variant(&nominal, &variation, i, 1).unwrap();
            assert!((c.ptm.r_hrs - r0).abs() <= 0.15 * r0 * (1.0 + 1e-12), "index {i}");
            assert!((c.x2.vth - vth0).abs() <= 0.09 + 1e-12);
            assert!(c.ptm.r_hrs > c.ptm.r_lrs);
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let variation = VariationSpec {
            r_lrs: -0.1,
            ..VariationSpec::default()
        };
        assert!(sample_variant(&PixelConfig::ref_a(), &variation, 0, 0).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let s = mc_summary(&[ok_row(0, 0.5)]).unwrap();
        assert_eq!((s.n, s.cr_mean, s.cr_std), (1, 0.5, 0.0));
        let s = mc_summary(&[ok_row(0, 0.2), ok_row(1, 0.4)]).unwrap();
        assert!((s.cr_mean - 0.3).abs() < 1e-15);
        assert!((s.cr_std - 0.1).abs() < 1e-15);
        let failed = McRow {
            index: 2,
            sample: None,
            outcome: Err(Error::NoConvergence { iterations: 200 }),
        };
        assert_eq!(mc_summary(std::slice::from_ref(&failed)), Err(Error::NoSuccessfulRows));
        assert_eq!(mc_summary(&[ok_row(0, 0.2), failed]).unwrap().n, 1);
        assert_eq!(mc_summary(&[]), Err(Error::NoSuccessfulRows));
    }

    #[test]
    fn empty_batch() {
        let img = GrayImage::filled(2, 2, 140).unwrap();
        let rows = run_monte_carlo(&PixelConfig::ref_a(), &VariationSpec::default(), 0, 1, &img, &Extraction::default())
            .unwrap();
        assert!(rows.is_empty());
        assert_eq!(mc_csv(&rows), format!("{MC_HEADER}\n"));
    }

    #[test]
    fn failed_rows_keep_csv_shape() {
        let rows = [McRow {
            index: 0,
            sample: None,
            outcome: Err(Error::ResampleExhausted("r_hrs")),
        }];
        let csv = mc_csv(&rows);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 7);
        assert!(line.contains("error:"));
    }
}
