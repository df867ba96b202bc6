//! DC operating point of the series pixel stack and the
//! reset / integrate / readout transient.
//!
//! The stack, top to bottom:
//!
//! ```text
//! vdd -> PTM -> [source] X2 (P, gate = v_pd) [drain]
//!     -> optional Tc (P, gate = v_gt) -> selector R_on -> v_out -> load -> gnd
//! ```
//!
//! The solver bisects on the branch current. For a trial current it computes
//! the highest drain voltage of X2 the upper half (PTM + X2) can deliver and
//! the lowest voltage the lower half (Tc + selector + load) needs at that same
//! node. Their difference falls monotonically with current, so the largest
//! current with a non-negative difference is the operating point. When the
//! difference stays positive right up to a device's saturation edge, the
//! saturated device takes up the excess voltage.

use serde::{Deserialize, Serialize};

use crate::device::{
    mosfet_drain_current, photocurrent, ptm_resistance, ptm_transition, MosfetParams,
    PhotodiodeParams, Polarity, PtmParams, PtmState,
};
use crate::error::{invalid, Error, Result};

/// Bisection stops once the current bracket is narrower than this.
///
/// Much tighter than 1 pA: the drain of X2 is taken from the lower half, so
/// any residual mismatch shows up as X2 current error scaled by its
/// output conductance.
pub const CURRENT_TOL: f64 = 1e-16;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatchMode {
    /// Once LRS within an integration phase, hold until the next reset.
    Latching,
    /// Apply both transition rules on every solve; reject configurations
    /// that flip straight back.
    BistableStrict,
}

/// Series tuning transistor between X2 and the selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningTransistor {
    pub params: MosfetParams,
    pub v_gt: f64,
}

/// Column load seen from the pixel output node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadModel {
    Resistor { r: f64 },
    /// N-type load with fixed gate bias, source at ground.
    Nmos { params: MosfetParams, v_bias: f64 },
}

impl LoadModel {
    /// Lowest output voltage at which the load sinks `current`, or `None`
    /// when the load cannot sink that much.
    fn voltage_for(&self, current: f64) -> Option<f64> {
        match *self {
            LoadModel::Resistor { r } => Some(current * r),
            LoadModel::Nmos { params, v_bias } => {
                if current <= 0.0 {
                    return Some(0.0);
                }
                let vov = v_bias - params.vth;
                if vov <= 0.0 || current > params.saturation_current(vov) {
                    return None;
                }
                Some(triode_drop(vov, current, params.kp))
            }
        }
    }

    /// Current sunk at output voltage `v_out`.
    pub fn current_at(&self, v_out: f64) -> f64 {
        match *self {
            LoadModel::Resistor { r } => v_out / r,
            LoadModel::Nmos { params, v_bias } => mosfet_drain_current(&params, v_bias, v_out),
        }
    }
}

/// Full description of the pixel stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelConfig {
    pub vdd: f64,
    pub ptm: PtmParams,
    pub x2: MosfetParams,
    pub tc: Option<TuningTransistor>,
    pub selector_r_on: f64,
    pub load: LoadModel,
    pub pd: PhotodiodeParams,
    pub latch_mode: LatchMode,
}

impl PixelConfig {
    /// Reference configuration: contrast-enhancement PTM, wide P-type X2 and
    /// an N-type current-sink load biased just above threshold.
    pub fn ref_a() -> Self {
        let vdd = 1.2;
        PixelConfig {
            vdd,
            ptm: PtmParams::contrast_enhancement(),
            x2: MosfetParams {
                polarity: Polarity::P,
                vth: 0.4,
                kp: 20e-3,
            },
            tc: None,
            selector_r_on: 500.0,
            load: LoadModel::Nmos {
                params: MosfetParams {
                    polarity: Polarity::N,
                    vth: 0.4,
                    kp: 1.1e-3,
                },
                v_bias: 0.5,
            },
            pd: PhotodiodeParams::reference(),
            latch_mode: LatchMode::Latching,
        }
    }

    /// `ref_a` with the tuning transistor enabled at `v_gt = 0`.
    pub fn ref_a_tuned() -> Self {
        PixelConfig {
            tc: Some(TuningTransistor {
                params: MosfetParams {
                    polarity: Polarity::P,
                    vth: 0.4,
                    kp: 20e-3,
                },
                v_gt: 0.0,
            }),
            ..Self::ref_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vdd > 0.0 && self.vdd.is_finite()) {
            return Err(invalid("vdd", "must be positive"));
        }
        self.ptm.validate()?;
        self.x2.validate("x2")?;
        if self.x2.polarity != Polarity::P {
            return Err(invalid("x2.polarity", "X2 must be P-type"));
        }
        if let Some(tc) = &self.tc {
            tc.params.validate("tc.params")?;
            if tc.params.polarity != Polarity::P {
                return Err(invalid("tc.params.polarity", "Tc must be P-type"));
            }
            if !(0.0..=self.vdd).contains(&tc.v_gt) {
                return Err(invalid("tc.v_gt", "must lie in [0, vdd]"));
            }
        }
        if !(self.selector_r_on >= 0.0 && self.selector_r_on.is_finite()) {
            return Err(invalid("selector_r_on", "must be >= 0"));
        }
        match &self.load {
            LoadModel::Resistor { r } => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(invalid("load.r", "must be positive"));
                }
            }
            LoadModel::Nmos { params, v_bias } => {
                params.validate("load.params")?;
                if params.polarity != Polarity::N {
                    return Err(invalid("load.params.polarity", "load must be N-type"));
                }
                if !(0.0..=self.vdd).contains(v_bias) {
                    return Err(invalid("load.v_bias", "must lie in [0, vdd]"));
                }
            }
        }
        self.pd.validate("pd")
    }
}

/// Node voltages of a solved stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackNodes {
    /// PTM lower terminal / X2 source.
    pub ptm_low: f64,
    /// X2 drain (Tc source when present).
    pub x2_drain: f64,
    /// Top of the selector (Tc drain, or X2 drain without Tc).
    pub selector_top: f64,
    pub v_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub branch_current: f64,
    pub v_out: f64,
    pub nodes: StackNodes,
    pub ptm_state: PtmState,
    pub transitioned: bool,
}

impl OperatingPoint {
    /// Gate-source magnitude of the composite HyperFET (PTM top to gate).
    pub fn v_gs_hyperfet(&self, vdd: f64, v_pd: f64) -> f64 {
        vdd - v_pd
    }
}

/// Drop of a conducting transistor carrying `current` below saturation,
/// clamped to the saturation edge.
fn triode_drop(vov: f64, current: f64, kp: f64) -> f64 {
    let disc = (vov * vov - 2.0 * current / kp).max(0.0);
    vov - disc.sqrt()
}

/// Highest X2 drain voltage the upper half can reach at `current`.
fn upper_drain(cfg: &PixelConfig, v_pd: f64, r_ptm: f64, current: f64) -> Option<f64> {
    let v_src = cfg.vdd - current * r_ptm;
    if current <= 0.0 {
        return Some(v_src);
    }
    let vov = v_src - v_pd - cfg.x2.vth;
    if vov <= 0.0 || current > cfg.x2.saturation_current(vov) {
        return None;
    }
    Some(v_src - triode_drop(vov, current, cfg.x2.kp))
}

/// Lowest X2 drain voltage the lower half needs at `current`, together with
/// the selector-top node voltage and the output voltage.
fn lower_drain(cfg: &PixelConfig, current: f64) -> Option<(f64, f64, f64)> {
    let v_out = cfg.load.voltage_for(current)?;
    let v_sel = v_out + current * cfg.selector_r_on;
    let v_drain = match &cfg.tc {
        None => v_sel,
        Some(_) if current <= 0.0 => v_sel,
        Some(tc) => {
            // invert the P-type device from its drain side
            let a = v_sel - tc.v_gt - tc.params.vth;
            if a <= 0.0 {
                tc.v_gt + tc.params.vth + (2.0 * current / tc.params.kp).sqrt()
            } else {
                v_sel - a + (a * a + 2.0 * current / tc.params.kp).sqrt()
            }
        }
    };
    Some((v_drain, v_sel, v_out))
}

fn mismatch(cfg: &PixelConfig, v_pd: f64, r_ptm: f64, current: f64) -> f64 {
    match (
        upper_drain(cfg, v_pd, r_ptm, current),
        lower_drain(cfg, current),
    ) {
        (Some(up), Some((low, _, _))) => up - low,
        _ => f64::NEG_INFINITY,
    }
}

/// Solves the stack with the PTM held in `state`; no transitions applied.
pub fn solve_stack_in_state(
    config: &PixelConfig,
    v_pd: f64,
    state: PtmState,
) -> Result<OperatingPoint> {
    let cfg = config;
    let r_ptm = ptm_resistance(state, &cfg.ptm);
    let mut lo = 0.0_f64;
    let mut hi = cfg.vdd / r_ptm;

    let mut iterations = 0;
    loop {
        if hi - lo <= CURRENT_TOL {
            break;
        }
        if iterations == MAX_ITERATIONS {
            return Err(Error::NoConvergence { iterations });
        }
        iterations += 1;
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = mismatch(cfg, v_pd, r_ptm, mid);
        if m.is_nan() {
            return Err(Error::NoConvergence { iterations });
        }
        if m >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let current = lo;
    let v_src = cfg.vdd - current * r_ptm;
    let upper = upper_drain(cfg, v_pd, r_ptm, current).unwrap_or(v_src);
    let upper_limited = upper_drain(cfg, v_pd, r_ptm, hi).is_none();
    let lower_limited = lower_drain(cfg, hi).is_none();

    let nodes = if lower_limited && !upper_limited {
        // load saturated: output rides up to whatever the upper half delivers
        let v_drain = upper;
        let selector_top = match &cfg.tc {
            Some(tc) if current > 0.0 => {
                let vov = v_drain - tc.v_gt - tc.params.vth;
                if vov > 0.0 {
                    v_drain - triode_drop(vov, current, tc.params.kp)
                } else {
                    v_drain
                }
            }
            _ => v_drain,
        };
        StackNodes {
            ptm_low: v_src,
            x2_drain: v_drain,
            selector_top,
            v_out: (selector_top - current * cfg.selector_r_on).max(0.0),
        }
    } else {
        let (v_drain, selector_top, v_out) = lower_drain(cfg, current)
            .expect("lower half is feasible at the accepted current");
        StackNodes {
            ptm_low: v_src,
            x2_drain: v_drain.min(v_src),
            selector_top: selector_top.min(v_src),
            v_out,
        }
    };

    Ok(OperatingPoint {
        branch_current: current,
        v_out: nodes.v_out,
        nodes,
        ptm_state: state,
        transitioned: false,
    })
}

/// DC operating point including the PTM transition check.
///
/// A transition flips the state and re-solves once. In `Latching` mode only
/// the HRS -> LRS rule is applied.
pub fn solve_stack_dc(config: &PixelConfig, v_pd: f64, state_in: PtmState) -> Result<OperatingPoint> {
    config.validate()?;
    if !(0.0..=config.vdd).contains(&v_pd) {
        return Err(invalid("v_pd", "must lie in [0, vdd]"));
    }
    let op = solve_stack_in_state(config, v_pd, state_in)?;
    let next = match config.latch_mode {
        LatchMode::Latching if state_in == PtmState::Lrs => PtmState::Lrs,
        _ => ptm_transition(state_in, &config.ptm, op.branch_current),
    };
    if next == state_in {
        return Ok(op);
    }
    let mut flipped = solve_stack_in_state(config, v_pd, next)?;
    flipped.transitioned = true;
    if config.latch_mode == LatchMode::BistableStrict
        && ptm_transition(next, &config.ptm, flipped.branch_current) != next
    {
        return Err(Error::AstableConfiguration { state: next });
    }
    Ok(flipped)
}

/// Linear discharge of the PD node, clamped at ground.
pub fn integrate_pd(v0: f64, i_pd: f64, c_pd: f64, dt: f64) -> f64 {
    (v0 - i_pd * dt / c_pd).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub time: f64,
    pub v_pd: f64,
    pub branch_current: f64,
    pub ptm_state: PtmState,
    pub v_out: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub samples: Vec<FrameSample>,
    pub readout_v_out: f64,
    /// State after the next cycle's reset.
    pub final_state: PtmState,
}

impl FrameTrace {
    pub fn hlt_count(&self) -> usize {
        self.samples
            .windows(2)
            .filter(|w| w[0].ptm_state == PtmState::Hrs && w[1].ptm_state == PtmState::Lrs)
            .count()
    }

    pub fn readout_state(&self) -> PtmState {
        self.samples.last().map_or(PtmState::Hrs, |s| s.ptm_state)
    }
}

/// One reset / integrate / readout cycle at illumination `illum`.
pub fn simulate_frame(config: &PixelConfig, illum: f64, n_steps: usize) -> Result<FrameTrace> {
    config.validate()?;
    if n_steps < 2 {
        return Err(invalid("n_steps", "must be >= 2"));
    }
    let i_pd = photocurrent(illum, &config.pd)?;
    let dt = config.pd.t_int / n_steps as f64;

    // reset: PD node at vdd, X2 off, LHT returns the PTM to HRS
    let mut v_pd = config.vdd;
    let reset = solve_stack_in_state(config, v_pd, PtmState::Lrs)?;
    let mut state = ptm_transition(PtmState::Lrs, &config.ptm, reset.branch_current);
    let op = solve_stack_in_state(config, v_pd, state)?;

    let mut samples = Vec::with_capacity(n_steps + 1);
    samples.push(FrameSample {
        time: 0.0,
        v_pd,
        branch_current: op.branch_current,
        ptm_state: state,
        v_out: op.v_out,
    });

    for k in 1..=n_steps {
        v_pd = integrate_pd(v_pd, i_pd, config.pd.c_pd, dt);
        let op = solve_stack_dc(config, v_pd, state)?;
        state = op.ptm_state;
        samples.push(FrameSample {
            time: config.pd.t_int * k as f64 / n_steps as f64,
            v_pd,
            branch_current: op.branch_current,
            ptm_state: state,
            v_out: op.v_out,
        });
    }

    let readout_v_out = samples.last().map_or(0.0, |s| s.v_out);
    let next_reset = solve_stack_in_state(config, config.vdd, state)?;
    let final_state = ptm_transition(state, &config.ptm, next_reset.branch_current);

    Ok(FrameTrace {
        samples,
        readout_v_out,
        final_state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    Soft,
    Hard,
}

/// Conventional three-transistor pixel used as the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeTConfig {
    pub vdd: f64,
    pub reset_mode: ResetMode,
    pub vth_x1: f64,
    pub sf: MosfetParams,
    pub pd: PhotodiodeParams,
}

impl ThreeTConfig {
    pub fn reference() -> Self {
        ThreeTConfig {
            vdd: 1.2,
            reset_mode: ResetMode::Soft,
            vth_x1: 0.4,
            sf: MosfetParams {
                polarity: Polarity::N,
                vth: 0.4,
                kp: 3e-3,
            },
            pd: PhotodiodeParams::reference(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vdd > 0.0 && self.vdd.is_finite()) {
            return Err(invalid("baseline_3t.vdd", "must be positive"));
        }
        if !(self.vth_x1 >= 0.0 && self.vth_x1 < self.vdd) {
            return Err(invalid("baseline_3t.vth_x1", "must satisfy 0 <= vth_x1 < vdd"));
        }
        self.sf.validate("baseline_3t.sf")?;
        self.pd.validate("baseline_3t.pd")
    }

    /// PD node voltage right after reset.
    pub fn reset_level(&self) -> f64 {
        match self.reset_mode {
            ResetMode::Soft => self.vdd - self.vth_x1,
            ResetMode::Hard => self.vdd,
        }
    }
}

/// Source-follower readout of a 3-T pixel after one integration period.
pub fn simulate_3t_frame(config: &ThreeTConfig, illum: f64) -> Result<f64> {
    config.validate()?;
    let i_pd = photocurrent(illum, &config.pd)?;
    let v_pd = integrate_pd(config.reset_level(), i_pd, config.pd.c_pd, config.pd.t_int);
    Ok((v_pd - config.sf.vth).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_stack() -> PixelConfig {
        PixelConfig {
            ptm: PtmParams::contrast_enhancement(),
            x2: MosfetParams {
                polarity: Polarity::P,
                vth: 0.0,
                kp: 1e6,
            },
            tc: None,
            selector_r_on: 500.0,
            load: LoadModel::Resistor { r: 3000.0 },
            ..PixelConfig::ref_a()
        }
    }

    #[test]
    fn reset_condition_is_cut_off() {
        let op = solve_stack_dc(&PixelConfig::ref_a(), 1.2, PtmState::Hrs).unwrap();
        assert_eq!(op.branch_current, 0.0);
        assert_eq!(op.v_out, 0.0);
        assert_eq!(op.ptm_state, PtmState::Hrs);
        assert!(!op.transitioned);
    }

    #[test]
    fn shorted_transistor_gives_resistor_divider() {
        let op = solve_stack_in_state(&short_stack(), 0.0, PtmState::Hrs).unwrap();
        let expected = 1.2 * 3000.0 / 83_500.0;
        assert!((op.v_out - expected).abs() < 1e-6, "{}", op.v_out);
        assert!((expected - 0.04311).abs() < 1e-5);
    }

    #[test]
    fn full_drop_switches_to_lrs() {
        let op = solve_stack_dc(&PixelConfig::ref_a(), 0.0, PtmState::Hrs).unwrap();
        assert_eq!(op.ptm_state, PtmState::Lrs);
        assert!(op.transitioned);
    }

    #[test]
    fn latching_holds_lrs() {
        let op = solve_stack_dc(&PixelConfig::ref_a(), 1.2, PtmState::Lrs).unwrap();
        assert_eq!(op.ptm_state, PtmState::Lrs);
        assert!(!op.transitioned);
    }

    #[test]
    fn strict_mode_flags_astable_ce_device() {
        // CE device: i_c_hlt (4 uA) < i_c_lht (6.8 uA), LRS current lands in between
        let mut cfg = PixelConfig::ref_a();
        cfg.latch_mode = LatchMode::BistableStrict;
        let err = solve_stack_dc(&cfg, 0.43, PtmState::Hrs);
        assert!(
            matches!(err, Err(Error::AstableConfiguration { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn strict_mode_reverts_when_current_is_tiny() {
        let mut cfg = PixelConfig::ref_a();
        cfg.latch_mode = LatchMode::BistableStrict;
        let op = solve_stack_dc(&cfg, 1.2, PtmState::Lrs).unwrap();
        assert_eq!(op.ptm_state, PtmState::Hrs);
        assert!(op.transitioned);
    }

    #[test]
    fn rejects_v_pd_out_of_range() {
        assert!(solve_stack_dc(&PixelConfig::ref_a(), 1.3, PtmState::Hrs).is_err());
        assert!(solve_stack_dc(&PixelConfig::ref_a(), -0.1, PtmState::Hrs).is_err());
    }

    #[test]
    fn integrate_pd_examples() {
        assert_eq!(integrate_pd(1.2, 0.0, 10e-15, 10e-6), 1.2);
        assert!((integrate_pd(1.2, 0.6e-9, 10e-15, 10e-6) - 0.6).abs() < 1e-12);
        assert!(integrate_pd(1.2, 1.2e-9, 10e-15, 10e-6).abs() < 1e-12);
        assert_eq!(integrate_pd(0.1, 1.2e-9, 10e-15, 10e-6), 0.0);
    }

    #[test]
    fn dark_frame_never_switches() {
        let t = simulate_frame(&PixelConfig::ref_a(), 0.0, 64).unwrap();
        assert!(t.samples.iter().all(|s| s.ptm_state == PtmState::Hrs));
        assert_eq!(t.readout_v_out, 0.0);
        assert_eq!(t.final_state, PtmState::Hrs);
    }

    #[test]
    fn bright_frame_switches_once_and_resets() {
        let t = simulate_frame(&PixelConfig::ref_a(), 1.0, 256).unwrap();
        assert_eq!(t.hlt_count(), 1);
        assert_eq!(t.readout_state(), PtmState::Lrs);
        assert_eq!(t.final_state, PtmState::Hrs);
        assert!(t.samples.windows(2).all(|w| w[1].time > w[0].time));
        assert!(t.samples.windows(2).all(|w| w[1].v_pd <= w[0].v_pd));
    }

    #[test]
    fn readout_independent_of_step_count() {
        let cfg = PixelConfig::ref_a();
        let a = simulate_frame(&cfg, 1.0, 64).unwrap().readout_v_out;
        let b = simulate_frame(&cfg, 1.0, 4096).unwrap().readout_v_out;
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn simulate_frame_rejects_bad_inputs() {
        let cfg = PixelConfig::ref_a();
        assert!(simulate_frame(&cfg, 0.5, 1).is_err());
        assert!(matches!(
            simulate_frame(&cfg, 1.5, 8),
            Err(Error::IllumOutOfRange(_))
        ));
    }

    #[test]
    fn three_t_reset_levels() {
        let mut cfg = ThreeTConfig::reference();
        assert!((cfg.reset_level() - 0.8).abs() < 1e-12);
        assert!((simulate_3t_frame(&cfg, 0.0).unwrap() - 0.4).abs() < 1e-12);
        cfg.reset_mode = ResetMode::Hard;
        assert!((simulate_3t_frame(&cfg, 0.0).unwrap() - 0.8).abs() < 1e-12);
        let lo = simulate_3t_frame(&cfg, 0.2).unwrap();
        let hi = simulate_3t_frame(&cfg, 0.7).unwrap();
        assert!(lo >= hi);
    }

    #[test]
    fn tuning_transistor_cut_off_blocks_stack() {
        let mut cfg = PixelConfig::ref_a_tuned();
        cfg.tc.as_mut().unwrap().v_gt = 0.85;
        for v_pd in [0.0, 0.3, 0.9] {
            let op = solve_stack_dc(&cfg, v_pd, PtmState::Hrs).unwrap();
            assert!(op.branch_current < 1e-15, "{op:?}");
            assert!(op.v_out < 1e-9);
        }
    }
}
