//! Device evaluators: the two-state phase-transition resistor (PTM), a
//! level-1 square-law MOSFET and the photodiode current source.
//!
//! Everything here is a pure function of its arguments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Resistance state of the PTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PtmState {
    #[serde(rename = "HRS")]
    Hrs,
    #[serde(rename = "LRS")]
    Lrs,
}

impl PtmState {
    pub fn as_str(self) -> &'static str {
        match self {
            PtmState::Hrs => "HRS",
            PtmState::Lrs => "LRS",
        }
    }
}

impl fmt::Display for PtmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Electrical and geometric parameters of a phase-transition material.
///
/// `l_ptm` and `a_ptm` are carried for bookkeeping only; the ohmic model
/// takes the two resistances directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtmParams {
    pub r_hrs: f64,
    pub r_lrs: f64,
    pub i_c_hlt: f64,
    pub i_c_lht: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_ptm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_ptm: Option<f64>,
}

impl PtmParams {
    /// Pt/NbO2/Pt device (5 nm long, 27.5 x 27.5 nm^2 cross-section).
    pub fn nbo2() -> Self {
        PtmParams {
            r_hrs: 120.5e3,
            r_lrs: 6.5e3,
            i_c_hlt: 7.4e-6,
            i_c_lht: 100e-6,
            l_ptm: Some(5e-9),
            a_ptm: Some(27.5e-9 * 27.5e-9),
        }
    }

    /// Hypothetical device tuned for contrast-enhancement mode.
    pub fn contrast_enhancement() -> Self {
        PtmParams {
            r_hrs: 80e3,
            r_lrs: 40e3,
            i_c_hlt: 4e-6,
            i_c_lht: 6.8e-6,
            l_ptm: None,
            a_ptm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_lrs > 0.0 && self.r_lrs.is_finite()) {
            return Err(invalid("ptm.r_lrs", "must be positive"));
        }
        if !(self.r_hrs > self.r_lrs && self.r_hrs.is_finite()) {
            return Err(invalid("ptm.r_lrs", "ordering: r_hrs > r_lrs required"));
        }
        if !(self.i_c_hlt > 0.0 && self.i_c_hlt.is_finite()) {
            return Err(invalid("ptm.i_c_hlt", "must be positive"));
        }
        if !(self.i_c_lht > 0.0 && self.i_c_lht.is_finite()) {
            return Err(invalid("ptm.i_c_lht", "must be positive"));
        }
        Ok(())
    }

    /// Voltage across the device at the high-to-low transition.
    pub fn v_hlt(&self) -> f64 {
        self.i_c_hlt * self.r_hrs
    }

    /// Voltage across the device at the low-to-high transition.
    pub fn v_lht(&self) -> f64 {
        self.i_c_lht * self.r_lrs
    }
}

pub fn ptm_resistance(state: PtmState, params: &PtmParams) -> f64 {
    match state {
        PtmState::Hrs => params.r_hrs,
        PtmState::Lrs => params.r_lrs,
    }
}

/// Current-triggered transition rule. Latching policy is the caller's job.
pub fn ptm_transition(state: PtmState, params: &PtmParams, branch_current: f64) -> PtmState {
    match state {
        PtmState::Hrs if branch_current > params.i_c_hlt => PtmState::Lrs,
        PtmState::Lrs if branch_current < params.i_c_lht => PtmState::Hrs,
        s => s,
    }
}

/// One point of a quasi-static voltage sweep across a bare PTM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub voltage: f64,
    pub current: f64,
    pub state: PtmState,
}

/// Result of an up-then-down voltage sweep across a bare PTM.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisSweep {
    pub points: Vec<SweepPoint>,
    /// Applied voltage at which HRS -> LRS fired on the up sweep.
    pub v_hlt: Option<f64>,
    /// Applied voltage at which LRS -> HRS fired on the down sweep.
    pub v_lht: Option<f64>,
}

/// Sweeps the voltage across a lone PTM from 0 to `v_max` and back in
/// `steps` equal increments each way, starting in HRS.
pub fn ptm_voltage_sweep(params: &PtmParams, v_max: f64, steps: usize) -> HysteresisSweep {
    let steps = steps.max(1);
    let mut state = PtmState::Hrs;
    let mut points = Vec::with_capacity(2 * steps + 1);
    let mut v_hlt = None;
    let mut v_lht = None;

    let up = (0..=steps).map(|k| v_max * k as f64 / steps as f64);
    let down = (0..steps).rev().map(|k| v_max * k as f64 / steps as f64);
    for (voltage, rising) in up.map(|v| (v, true)).chain(down.map(|v| (v, false))) {
        let current = voltage / ptm_resistance(state, params);
        let next = ptm_transition(state, params, current);
        if next != state {
            match (next, rising) {
                (PtmState::Lrs, true) if v_hlt.is_none() => v_hlt = Some(voltage),
                (PtmState::Hrs, false) if v_lht.is_none() => v_lht = Some(voltage),
                _ => {}
            }
            state = next;
        }
        points.push(SweepPoint {
            voltage,
            current: voltage / ptm_resistance(state, params),
            state,
        });
    }

    HysteresisSweep {
        points,
        v_hlt,
        v_lht,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    N,
    P,
}

/// Level-1 square-law transistor. `kp` already folds in W/L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosfetParams {
    pub polarity: Polarity,
    /// Threshold voltage magnitude.
    pub vth: f64,
    pub kp: f64,
}

impl MosfetParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.vth >= 0.0 && self.vth.is_finite()) {
            return Err(invalid(&format!("{path}.vth"), "must be >= 0"));
        }
        if !(self.kp > 0.0 && self.kp.is_finite()) {
            return Err(invalid(&format!("{path}.kp"), "must be positive"));
        }
        Ok(())
    }

    /// Saturation current at overdrive `vov` (zero when cut off).
    pub fn saturation_current(&self, vov: f64) -> f64 {
        if vov <= 0.0 {
            0.0
        } else {
            0.5 * self.kp * vov * vov
        }
    }
}

/// Drain current for polarity-normalized `|V_GS|`, `|V_DS|`.
///
/// Hard cutoff below threshold, no channel-length modulation. A negative
/// `v_ds_eff` is treated as zero.
pub fn mosfet_drain_current(params: &MosfetParams, v_gs_eff: f64, v_ds_eff: f64) -> f64 {
    let vov = v_gs_eff - params.vth;
    if vov <= 0.0 {
        return 0.0;
    }
    let vds = v_ds_eff.max(0.0);
    if vds < vov {
        params.kp * (vov * vds - 0.5 * vds * vds)
    } else {
        0.5 * params.kp * vov * vov
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotodiodeParams {
    pub c_pd: f64,
    pub t_int: f64,
    /// Photocurrent at full illumination.
    pub i_pd_max: f64,
}

impl PhotodiodeParams {
    /// 10 fF node, 10 us integration, full scale at a 1.2 V swing.
    pub fn reference() -> Self {
        PhotodiodeParams {
            c_pd: 10e-15,
            t_int: 10e-6,
            i_pd_max: 1.2e-9,
        }
    }

    /// Full-scale current discharges the PD node by exactly `vdd` over `t_int`.
    pub fn full_scale(c_pd: f64, t_int: f64, vdd: f64) -> Self {
        PhotodiodeParams {
            c_pd,
            t_int,
            i_pd_max: c_pd * vdd / t_int,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [("c_pd", self.c_pd), ("t_int", self.t_int), ("i_pd_max", self.i_pd_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(&format!("{path}.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

pub fn photocurrent(illum: f64, pd: &PhotodiodeParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&illum) {
        return Err(Error::IllumOutOfRange(illum));
    }
    Ok(illum * pd.i_pd_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x2() -> MosfetParams {
        MosfetParams {
            polarity: Polarity::P,
            vth: 0.4,
            kp: 3e-3,
        }
    }

    #[test]
    fn resistance_by_state() {
        assert_eq!(ptm_resistance(PtmState::Hrs, &PtmParams::nbo2()), 120_500.0);
        assert_eq!(ptm_resistance(PtmState::Lrs, &PtmParams::nbo2()), 6_500.0);
        assert_eq!(
            ptm_resistance(PtmState::Hrs, &PtmParams::contrast_enhancement()),
            80_000.0
        );
    }

    #[test]
    fn transition_rule() {
        let p = PtmParams::nbo2();
        assert_eq!(ptm_transition(PtmState::Hrs, &p, 8.0e-6), PtmState::Lrs);
        assert_eq!(ptm_transition(PtmState::Lrs, &p, 50e-6), PtmState::Hrs);
        assert_eq!(ptm_transition(PtmState::Hrs, &p, 1e-6), PtmState::Hrs);
        assert_eq!(ptm_transition(PtmState::Lrs, &p, 150e-6), PtmState::Lrs);
    }

    #[test]
    fn drain_current_regions() {
        assert_eq!(mosfet_drain_current(&x2(), 0.1, 0.7), 0.0);
        assert!((mosfet_drain_current(&x2(), 0.6, 0.5) - 60e-6).abs() < 1e-15);
        assert!((mosfet_drain_current(&x2(), 0.6, 0.1) - 45e-6).abs() < 1e-15);
    }

    #[test]
    fn photocurrent_map() {
        let pd = PhotodiodeParams::full_scale(10e-15, 10e-6, 1.2);
        assert!((pd.i_pd_max - 1.2e-9).abs() < 1e-24);
        assert_eq!(photocurrent(0.0, &pd).unwrap(), 0.0);
        assert!((photocurrent(1.0, &pd).unwrap() - 1.2e-9).abs() < 1e-24);
        assert!((photocurrent(0.5, &pd).unwrap() - 0.6e-9).abs() < 1e-24);
        assert_eq!(photocurrent(1.5, &pd), Err(Error::IllumOutOfRange(1.5)));
        assert!(photocurrent(-0.1, &pd).is_err());
    }

    #[test]
    fn shipped_presets_have_ordered_corners() {
        for p in [PtmParams::nbo2(), PtmParams::contrast_enhancement()] {
            p.validate().unwrap();
            assert!(p.v_hlt() > p.v_lht(), "{p:?}");
        }
        let nb = PtmParams::nbo2();
        assert!((nb.v_hlt() - 0.8917).abs() < 1e-9);
        assert!((nb.v_lht() - 0.65).abs() < 1e-9);
    }

    #[test]
    fn ordering_violation_names_r_lrs() {
        let mut p = PtmParams::contrast_enhancement();
        p.r_lrs = 90e3;
        match p.validate() {
            Err(Error::InvalidParam { field, .. }) => assert_eq!(field, "ptm.r_lrs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn voltage_sweep_finds_both_corners() {
        let s = ptm_voltage_sweep(&PtmParams::nbo2(), 1.2, 12_000);
        assert!((s.v_hlt.unwrap() - 0.8917).abs() < 1e-3);
        assert!((s.v_lht.unwrap() - 0.65).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn transition_idempotent_outside_astable_window(
            i in 0.0f64..2e-4, lrs in any::<bool>(), ce in any::<bool>(),
        ) {
            let p = if ce { PtmParams::contrast_enhancement() } else { PtmParams::nbo2() };
            // currents in (i_c_hlt, i_c_lht) flip HRS and LRS into each other
            prop_assume!(!(i > p.i_c_hlt && i < p.i_c_lht));
            let s0 = if lrs { PtmState::Lrs } else { PtmState::Hrs };
            let once = ptm_transition(s0, &p, i);
            prop_assert_eq!(ptm_transition(once, &p, i), once);
        }

        #[test]
        fn hrs_stays_below_both_thresholds(
            r_lrs in 1e3f64..5e4, extra in 1e3f64..1e5,
            hlt in 1e-7f64..1e-4, lht in 1e-7f64..1e-4, frac in 0.0f64..1.0,
        ) {
            let p = PtmParams { r_hrs: r_lrs + extra, r_lrs, i_c_hlt: hlt, i_c_lht: lht, l_ptm: None, a_ptm: None };
            let i = frac * hlt.min(lht);
            prop_assert_eq!(ptm_transition(PtmState::Hrs, &p, i), PtmState::Hrs);
        }

        #[test]
        fn drain_current_monotone(vgs in 0.0f64..1.2, vds in 0.0f64..1.2, d in 0.0f64..0.2) {
            let m = x2();
            prop_assert!(mosfet_drain_current(&m, vgs + d, vds) >= mosfet_drain_current(&m, vgs, vds));
            prop_assert!(mosfet_drain_current(&m, vgs, vds + d) >= mosfet_drain_current(&m, vgs, vds));
        }

        #[test]
        fn drain_current_continuous_at_saturation_edge(vgs in 0.41f64..1.2) {
            let m = x2();
            let vov = vgs - m.vth;
            let below = mosfet_drain_current(&m, vgs, vov - 1e-12);
            let at = mosfet_drain_current(&m, vgs, vov);
            prop_assert!((below - at).abs() < 1e-12);
        }
    }
}
