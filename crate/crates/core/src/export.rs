//! Plain-text writers for curve, trace and Monte-Carlo tables.

use crate::circuit::FrameTrace;
use crate::curve::TransferCurve;

/// Shortest `%.{sig}g`-style rendering: fixed notation for moderate
/// exponents, scientific otherwise, trailing zeros removed.
pub fn fmt_g(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g9(x: f64) -> String {
    fmt_g(x, 9)
}

pub const CURVE_HEADER: &str = "input_code,v_drop_v,v_out_raw_v,output_code,ptm_state";
pub const TRACE_HEADER: &str = "time_s,v_pd_v,i_branch_a,ptm_state,v_out_v";

pub fn curve_csv(curve: &TransferCurve) -> String {
    let mut s = String::with_capacity(64 * curve.len());
    s.push_str(CURVE_HEADER);
    s.push('\n');
    for k in 0..curve.len() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            g9(curve.v_drop[k]),
            g9(curve.v_out_raw[k]),
            curve.lut[k],
            curve.state_seq[k]
        ));
    }
    s
}

pub fn trace_csv(trace: &FrameTrace) -> String {
    let mut s = String::new();
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for p in &trace.samples {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            g9(p.time),
            g9(p.v_pd),
            g9(p.branch_current),
            p.ptm_state,
            g9(p.v_out)
        ));
    }
    s
}
