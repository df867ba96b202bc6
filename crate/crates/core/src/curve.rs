//! Transfer-curve extraction, 8-bit quantization, feature detection and the
//! customization sweeps built on top of them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{solve_stack_dc, PixelConfig};
use crate::device::PtmState;
use crate::error::{invalid, Error, Result};

/// Smallest single-code LUT step that counts as the abrupt transition.
pub const MIN_JUMP: u8 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizationMode {
    #[default]
    PerCurveMinMax,
    FixedRange { lo: f64, hi: f64 },
}

impl NormalizationMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NormalizationMode::PerCurveMinMax => Ok(()),
            NormalizationMode::FixedRange { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && hi > lo {
                    Ok(())
                } else {
                    Err(invalid("normalization.hi", "must exceed normalization.lo"))
                }
            }
        }
    }
}

/// Number of input codes and how raw output voltages become codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    pub points: usize,
    pub norm: NormalizationMode,
}

impl Default for Extraction {
    fn default() -> Self {
        Extraction {
            points: 256,
            norm: NormalizationMode::PerCurveMinMax,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    /// PD-node voltage drop per input code.
    pub v_drop: Vec<f64>,
    pub v_out_raw: Vec<f64>,
    /// Output code per input code.
    pub lut: Vec<u8>,
    pub state_seq: Vec<PtmState>,
}

impl TransferCurve {
    pub fn len(&self) -> usize {
        self.lut.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lut.is_empty()
    }

    /// The LUT as a 256-entry table, when the curve has 256 points.
    pub fn lut256(&self) -> Option<[u8; 256]> {
        self.lut.as_slice().try_into().ok()
    }

    /// Index of the first LRS code, if the PTM switched during the sweep.
    pub fn flip_index(&self) -> Option<usize> {
        self.state_seq.iter().position(|s| *s == PtmState::Lrs)
    }

    pub fn features(&self) -> Result<CurveFeatures> {
        curve_features(self)
    }
}

/// Sweeps the PD-node drop upward from zero, keeping the PTM state between
/// codes, and quantizes the output voltage.
pub fn extract_curve(config: &PixelConfig, n: usize, norm: NormalizationMode) -> Result<TransferCurve> {
    config.validate()?;
    norm.validate()?;
    if n < 2 {
        return Err(invalid("n", "need at least two points"));
    }

    let mut v_drop = Vec::with_capacity(n);
    let mut v_out_raw = Vec::with_capacity(n);
    let mut state_seq = Vec::with_capacity(n);
    let mut state = PtmState::Hrs;
    for k in 0..n {
        let drop = k as f64 / (n - 1) as f64 * config.vdd;
        let v_pd = (config.vdd - drop).clamp(0.0, config.vdd);
        let op = solve_stack_dc(config, v_pd, state)?;
        state = op.ptm_state;
        v_drop.push(drop);
        v_out_raw.push(op.v_out);
        state_seq.push(state);
    }
    let lut = normalize_curve(&v_out_raw, norm);
    Ok(TransferCurve {
        v_drop,
        v_out_raw,
        lut,
        state_seq,
    })
}

fn to_code(x: f64) -> u8 {
    (255.0 * x).round().clamp(0.0, 255.0) as u8
}

/// Maps raw voltages onto 0..=255, rounding half away from zero.
pub fn normalize_curve(v_out_raw: &[f64], norm: NormalizationMode) -> Vec<u8> {
    let (lo, hi) = match norm {
        NormalizationMode::PerCurveMinMax => {
            let lo = v_out_raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v_out_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
        NormalizationMode::FixedRange { lo, hi } => (lo, hi),
    };
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0; v_out_raw.len()];
    }
    let span = hi - lo;
    v_out_raw.iter().map(|&v| to_code((v - lo) / span)).collect()
}

/// Location and shape of the abrupt jump in a transfer curve.
///
/// `ay` is the code right before the jump and `by` the code it lands on;
/// both sit at the same input code because the switch is abrupt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveFeatures {
    pub threshold_code: usize,
    pub ax: usize,
    pub ay: u8,
    pub bx: usize,
    pub by: u8,
    pub max_step: u8,
    pub stage1_max: u8,
    pub stage2_span: (u8, u8),
}

pub fn curve_features(curve: &TransferCurve) -> Result<CurveFeatures> {
    lut_features(&curve.lut, Some(&curve.state_seq))
}

/// Feature detection on a bare LUT. `states`, when given and containing a
/// flip, decides which codes belong to stage 1.
pub fn lut_features(lut: &[u8], states: Option<&[PtmState]>) -> Result<CurveFeatures> {
    if lut.len() < 2 {
        return Err(invalid("lut", "need at least two codes"));
    }
    let mut threshold = 0;
    let mut best = i16::MIN;
    for (k, w) in lut.windows(2).enumerate() {
        let step = w[1] as i16 - w[0] as i16;
        if step > best {
            best = step;
            threshold = k;
        }
    }
    let max_step = best.max(0) as u8;
    if max_step < MIN_JUMP {
        return Err(Error::NoTransition {
            max_step,
            required: MIN_JUMP,
        });
    }

    let split = states
        .and_then(|s| s.iter().position(|st| *st == PtmState::Lrs))
        .filter(|&f| f > 0 && f < lut.len())
        .unwrap_or(threshold + 1);
    let (stage1, stage2) = lut.split_at(split);
    let stage1_max = stage1.iter().copied().max().unwrap_or(0);
    let stage2_span = (
        stage2.iter().copied().min().unwrap_or(lut[threshold + 1]),
        stage2.iter().copied().max().unwrap_or(lut[threshold + 1]),
    );

    Ok(CurveFeatures {
        threshold_code: threshold,
        ax: threshold,
        ay: lut[threshold],
        bx: threshold,
        by: lut[threshold + 1],
        max_step,
        stage1_max,
        stage2_span,
    })
}

/// PTM parameter varied in a design-phase sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    RLrs,
    RHrs,
    IcHlt,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::RLrs => "r_lrs",
            SweepParam::RHrs => "r_hrs",
            SweepParam::IcHlt => "ic_hlt",
        }
    }

    pub fn get(self, config: &PixelConfig) -> f64 {
        match self {
            SweepParam::RLrs => config.ptm.r_lrs,
            SweepParam::RHrs => config.ptm.r_hrs,
            SweepParam::IcHlt => config.ptm.i_c_hlt,
        }
    }

    /// Copy of `config` with this parameter set to `value`.
    pub fn apply(self, config: &PixelConfig, value: f64) -> Result<PixelConfig> {
        let mut out = *config;
        match self {
            SweepParam::RLrs => out.ptm.r_lrs = value,
            SweepParam::RHrs => out.ptm.r_hrs = value,
            SweepParam::IcHlt => out.ptm.i_c_hlt = value,
        }
        if !(value > 0.0 && value.is_finite()) || out.ptm.r_hrs <= out.ptm.r_lrs {
            return Err(Error::InvalidParamValue {
                param: self.name(),
                value,
            });
        }
        Ok(out)
    }
}

/// One extraction per value, everything else fixed. Output follows input order.
pub fn sweep_parameter(
    config: &PixelConfig,
    param: SweepParam,
    values: &[f64],
    extraction: &Extraction,
) -> Result<Vec<TransferCurve>> {
    let configs = values
        .iter()
        .map(|&v| param.apply(config, v))
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|c| extract_curve(c, extraction.points, extraction.norm))
        .collect()
}

/// One extraction per tuning-gate voltage.
pub fn vgt_family(
    config: &PixelConfig,
    vgt_values: &[f64],
    extraction: &Extraction,
) -> Result<Vec<TransferCurve>> {
    let tc = config.tc.ok_or(Error::TcDisabled)?;
    let configs = vgt_values
        .iter()
        .map(|&v_gt| {
            if !(0.0..=config.vdd).contains(&v_gt) {
                return Err(invalid("v_gt", "must lie in [0, vdd]"));
            }
            let mut c = *config;
            c.tc = Some(crate::circuit::TuningTransistor { v_gt, ..tc });
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|c| extract_curve(c, extraction.points, extraction.norm))
        .collect()
}

/// Free parameter for inverse design of the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignParam {
    IcHlt,
    RHrs,
}

impl From<DesignParam> for SweepParam {
    fn from(p: DesignParam) -> Self {
        match p {
            DesignParam::IcHlt => SweepParam::IcHlt,
            DesignParam::RHrs => SweepParam::RHrs,
        }
    }
}

/// Bracket multipliers around the nominal value searched by `design_threshold`.
pub const DESIGN_BRACKET: (f64, f64) = (0.1, 10.0);

enum Threshold {
    At(usize),
    /// No switching anywhere in the sweep: the threshold lies above the range.
    Above,
}

fn threshold_of(config: &PixelConfig, extraction: &Extraction) -> Result<Threshold> {
    let curve = extract_curve(config, extraction.points, extraction.norm)?;
    match curve.features() {
        Ok(f) => Ok(Threshold::At(f.threshold_code)),
        Err(Error::NoTransition { .. }) if curve.flip_index().is_none() => Ok(Threshold::Above),
        Err(e) => Err(e),
    }
}

/// Finds a value of `free` whose extracted threshold code is within one code
/// of `target`, by geometric bisection over `DESIGN_BRACKET` x nominal.
///
/// The threshold code is non-decreasing in both free parameters.
pub fn design_threshold(
    config: &PixelConfig,
    target_code: u8,
    free: DesignParam,
    extraction: &Extraction,
) -> Result<f64> {
    let param = SweepParam::from(free);
    let nominal = param.get(config);
    let mut lo = nominal * DESIGN_BRACKET.0;
    let mut hi = nominal * DESIGN_BRACKET.1;
    if free == DesignParam::RHrs {
        lo = lo.max(config.ptm.r_lrs * (1.0 + 1e-9));
    }
    let target = target_code as usize;
    let hit = |c: usize| c.abs_diff(target) <= 1;

    match threshold_of(&param.apply(config, lo)?, extraction)? {
        Threshold::At(c) if hit(c) => return Ok(lo),
        Threshold::At(c) if c > target => return Err(Error::Unreachable { target: target_code }),
        Threshold::Above => return Err(Error::Unreachable { target: target_code }),
        Threshold::At(_) => {}
    }
    match threshold_of(&param.apply(config, hi)?, extraction)? {
        Threshold::At(c) if hit(c) => return Ok(hi),
        Threshold::At(c) if c < target => return Err(Error::Unreachable { target: target_code }),
        _ => {}
    }

    for _ in 0..200 {
        if hi / lo - 1.0 < 1e-12 {
            break;
        }
        let mid = (lo * hi).sqrt();
        match threshold_of(&param.apply(config, mid)?, extraction)? {
            Threshold::At(c) if hit(c) => return Ok(mid),
            Threshold::At(c) if c < target => lo = mid,
            _ => hi = mid,
        }
    }
    Err(Error::Unreachable { target: target_code })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_curve(&[0.3; 5], NormalizationMode::PerCurveMinMax), vec![0; 5]);
        assert_eq!(
            normalize_curve(&[0.0, 0.06, 0.09], NormalizationMode::PerCurveMinMax),
            vec![0, 170, 255]
        );
        let fixed = NormalizationMode::FixedRange { lo: 0.0, hi: 1.2 };
        assert_eq!(normalize_curve(&[0.6], fixed), vec![128]);
        assert_eq!(normalize_curve(&[-0.1, 1.5], fixed), vec![0, 255]);
    }

    #[test]
    fn fixed_range_must_be_ordered() {
        assert!(NormalizationMode::FixedRange { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(NormalizationMode::FixedRange { lo: 0.0, hi: 1.0 }.validate().is_ok());
    }

    #[test]
    fn features_of_constructed_step() {
        let mut lut = vec![5u8; 165];
        lut.extend((0..91).map(|k| (200 + k * 55 / 90) as u8));
        assert_eq!(lut.len(), 256);
        let f = lut_features(&lut, None).unwrap();
        assert_eq!(f.threshold_code, 164);
        assert_eq!((f.ax, f.bx), (164, 164));
        assert_eq!((f.ay, f.by), (5, 200));
        assert_eq!(f.stage1_max, 5);
        assert_eq!(f.stage2_span, (200, 255));
    }

    #[test]
    fn linear_lut_has_no_transition() {
        let lut: Vec<u8> = (0..=255).collect();
        assert!(matches!(
            lut_features(&lut, None),
            Err(Error::NoTransition { max_step: 1, .. })
        ));
    }

    #[test]
    fn ties_resolve_to_smallest_code() {
        let lut = [0u8, 20, 20, 40, 40];
        assert_eq!(lut_features(&lut, None).unwrap().threshold_code, 0);
    }

    #[test]
    fn sweep_rejects_ordering_violation() {
        let cfg = PixelConfig::ref_a();
        let err = sweep_parameter(&cfg, SweepParam::RLrs, &[20e3, 90e3], &Extraction::default());
        assert!(matches!(err, Err(Error::InvalidParamValue { param: "r_lrs", .. })));
        let err = sweep_parameter(&cfg, SweepParam::IcHlt, &[-1e-6], &Extraction::default());
        assert!(err.is_err());
        assert!(sweep_parameter(&cfg, SweepParam::IcHlt, &[], &Extraction::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn vgt_family_needs_tc() {
        let err = vgt_family(&PixelConfig::ref_a(), &[0.1], &Extraction::default());
        assert_eq!(err, Err(Error::TcDisabled));
        let err = vgt_family(&PixelConfig::ref_a_tuned(), &[1.5], &Extraction::default());
        assert!(err.is_err());
    }

    #[test]
    fn design_zero_target_unreachable() {
        let r = design_threshold(&PixelConfig::ref_a(), 0, DesignParam::IcHlt, &Extraction::default());
        assert_eq!(r, Err(Error::Unreachable { target: 0 }));
    }
}
