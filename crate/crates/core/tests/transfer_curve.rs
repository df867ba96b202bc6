use ipfe_core::circuit::LoadModel;
use ipfe_core::curve::MIN_JUMP;
use ipfe_core::device::{MosfetParams, Polarity};
use ipfe_core::*;

fn ref_a_curve() -> TransferCurve {
    extract_curve(&PixelConfig::ref_a(), 256, NormalizationMode::PerCurveMinMax).unwrap()
}

/// X2 reduced to a near-ideal follower and a plain resistor load, so the HRS
/// branch current is (vdd - v_pd) / r_hrs until the divider limit.
fn divider_config(i_c_hlt: f64) -> PixelConfig {
    let mut c = PixelConfig::ref_a();
    c.x2 = MosfetParams {
        polarity: Polarity::P,
        vth: 0.0,
        kp: 1e6,
    };
    c.load = LoadModel::Resistor { r: 10e3 };
    c.ptm.i_c_hlt = i_c_hlt;
    c
}

#[test]
fn ref_a_shape() {
    let c = ref_a_curve();
    assert_eq!(c.len(), 256);
    assert!(c.lut.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!((c.lut[0], c.lut[255]), (0, 255));
    let flips = c.state_seq.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1);
    let f = c.features().unwrap();
    assert_eq!(f.ax, f.bx);
    assert!(f.stage1_max <= 40);
    assert!(f.max_step >= MIN_JUMP);
    assert_eq!(c.flip_index(), Some(f.threshold_code + 1));
    assert!(f.threshold_code > 131 && f.threshold_code < 176);
    assert!(c.lut[131] <= 40);
    assert_eq!(c.lut[176], 255);
}

#[test]
fn last_row_is_full_scale_lrs() {
    let c = ref_a_curve();
    assert_eq!(c.v_drop[255], 1.2);
    assert_eq!(c.state_seq[255], PtmState::Lrs);
    let max = c.v_out_raw.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(c.v_out_raw[255], max);
}

#[test]
fn threshold_matches_closed_form_divider() {
    for ic in [2.1e-6, 3.1e-6, 4.1e-6, 5.1e-6, 6.1e-6] {
        let cfg = divider_config(ic);
        let curve = extract_curve(&cfg, 256, NormalizationMode::PerCurveMinMax).unwrap();
        // first code whose drop pushes r_hrs current past i_c_hlt
        let drop_needed = ic * cfg.ptm.r_hrs;
        let flip = (0..256).find(|&k| k as f64 * 1.2 / 255.0 > drop_needed).unwrap();
        assert_eq!(curve.flip_index(), Some(flip), "ic {ic}");
        assert_eq!(curve.features().unwrap().threshold_code, flip - 1, "ic {ic}");

        let k = flip - 1;
        let i_hrs = curve.v_drop[k] / cfg.ptm.r_hrs;
        assert!((curve.v_out_raw[k] - i_hrs * 10e3).abs() < 1e-4, "ic {ic}");
    }
}

#[test]
fn fixed_range_uses_absolute_scale() {
    let c = extract_curve(
        &PixelConfig::ref_a(),
        256,
        NormalizationMode::FixedRange { lo: 0.0, hi: 1.2 },
    )
    .unwrap();
    for (raw, code) in c.v_out_raw.iter().zip(&c.lut) {
        assert_eq!(*code, (raw / 1.2 * 255.0).round() as u8);
    }
}

#[test]
fn coarse_curves_keep_the_jump() {
    let c = extract_curve(&PixelConfig::ref_a(), 64, NormalizationMode::PerCurveMinMax).unwrap();
    assert_eq!(c.len(), 64);
    assert!(c.features().is_ok());
    assert!(extract_curve(&PixelConfig::ref_a(), 1, NormalizationMode::PerCurveMinMax).is_err());
}

#[test]
fn extraction_is_deterministic() {
    assert_eq!(ref_a_curve(), ref_a_curve());
}

#[test]
fn threshold_matches_saturated_x2_closed_form() {
    // At the switching point X2 is saturated: (kp/2)(vdd - I*r_hrs - v_pd - vth)^2 = I with I = i_c_hlt.
    for ic in [3e-6, 3.5e-6, 4e-6, 4.5e-6, 5e-6] {
        let mut cfg = PixelConfig::ref_a();
        cfg.ptm.i_c_hlt = ic;
        let v_pd = cfg.vdd - ic * cfg.ptm.r_hrs - cfg.x2.vth - (2.0 * ic / cfg.x2.kp).sqrt();
        let drop = cfg.vdd - v_pd;
        let flip = (0..256).find(|&k| k as f64 * cfg.vdd / 255.0 > drop).unwrap();
        let curve = extract_curve(&cfg, 256, NormalizationMode::PerCurveMinMax).unwrap();
        assert_eq!(curve.flip_index(), Some(flip), "ic {ic}");
        assert_eq!(curve.features().unwrap().threshold_code, flip - 1, "ic {ic}");
    }
}
