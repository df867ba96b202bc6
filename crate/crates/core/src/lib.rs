//! Device-to-image simulator for an in-pixel contrast enhancement circuit
//! built around a phase-transition material (PTM) in series with a MOSFET.

pub mod circuit;
pub mod curve;
pub mod device;
pub mod error;
pub mod export;
pub mod image;
pub mod montecarlo;

pub use circuit::{
    simulate_3t_frame, simulate_frame, solve_stack_dc, solve_stack_in_state, LatchMode, LoadModel,
    OperatingPoint, PixelConfig, ResetMode, ThreeTConfig, TuningTransistor,
};
pub use curve::{
    curve_features, design_threshold, extract_curve, normalize_curve, sweep_parameter, vgt_family,
    CurveFeatures, DesignParam, Extraction, NormalizationMode, SweepParam, TransferCurve,
};
pub use device::{
    mosfet_drain_current, photocurrent, ptm_resistance, ptm_transition, MosfetParams,
    PhotodiodeParams, Polarity, PtmParams, PtmState,
};
pub use error::{Error, Result};
pub use image::{
    apply_lut, enhancement_report, histogram, michelson_cr, read_pgm, synth_low_contrast,
    write_pgm, ContrastReport, GrayImage, Histogram, PgmError, PgmVariant,
};
pub use montecarlo::{mc_summary, run_monte_carlo, sample_variant, McRow, McSummary, VariationSpec};
