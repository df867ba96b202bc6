pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ipfe_core::circuit::simulate_3t_frame;
use ipfe_core::export::{curve_csv, fmt_g, trace_csv};
use ipfe_core::image::{histogram_json, report_json};
use ipfe_core::montecarlo::{mc_csv, summary_json};
use ipfe_core::{
    apply_lut, design_threshold, enhancement_report, extract_curve, histogram, mc_summary,
    normalize_curve, read_pgm, run_monte_carlo, simulate_frame, sweep_parameter,
    synth_low_contrast, vgt_family, write_pgm, CurveFeatures, DesignParam, GrayImage, PgmVariant,
    SweepParam, TransferCurve,
};
use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Pgm {
        path: PathBuf,
        source: ipfe_core::PgmError,
    },
    #[error(transparent)]
    Core(#[from] ipfe_core::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser, Debug)]
#[command(name = "ipfe", version, about = "In-pixel contrast enhancement simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ParamArg {
    #[value(name = "r_lrs")]
    RLrs,
    #[value(name = "r_hrs")]
    RHrs,
    #[value(name = "ic_hlt")]
    IcHlt,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::RLrs => SweepParam::RLrs,
            ParamArg::RHrs => SweepParam::RHrs,
            ParamArg::IcHlt => SweepParam::IcHlt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FreeArg {
    #[value(name = "ic_hlt")]
    IcHlt,
    #[value(name = "r_hrs")]
    RHrs,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum FormatArg {
    P2,
    #[default]
    P5,
}

impl From<FormatArg> for PgmVariant {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::P2 => PgmVariant::P2,
            FormatArg::P5 => PgmVariant::P5,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sweep the PD-node drop over every input code and write the transfer curve CSV.
    ExtractCurve {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print threshold code, jump endpoints and stage summaries as JSON.
    Features {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract one curve per value of a PTM parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma-separated parameter values in SI units.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        /// Long-format curve CSV (one block per value).
        #[arg(long)]
        out: PathBuf,
        /// Optional per-value feature CSV.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Extract one curve per tuning-gate voltage (needs `tc` in the config).
    VgtSweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated gate voltages in volts.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Find the free-parameter value that places the threshold at a target code.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target_code: u8,
        #[arg(long, value_enum)]
        free: FreeArg,
        /// Write the tuned configuration here.
        #[arg(long)]
        out_config: Option<PathBuf>,
    },
    /// Push an image through the pixel LUT and report the contrast change.
    Enhance {
        #[arg(long)]
        config: PathBuf,
        /// Input PGM (P2 or P5).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::P5)]
        format: FormatArg,
    },
    /// Histogram and contrast ratio of an image, as JSON.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded low-contrast test image.
    Synth {
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 131)]
        l_min: u8,
        #[arg(long, default_value_t = 176)]
        l_max: u8,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::P5)]
        format: FormatArg,
    },
    /// Time-domain reset / integrate / readout of one pixel.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Illumination in [0, 1].
        #[arg(long)]
        illum: f64,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 256)]
        steps: usize,
    },
    /// Transfer curve of the conventional 3-T pixel for comparison.
    #[command(name = "baseline-3t")]
    Baseline3t {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo device variation study scored on an image.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Number of samples (defaults to the config value).
        #[arg(long)]
        samples: Option<u64>,
        /// Seed (defaults to the config value).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Worker threads; defaults to all cores. Output does not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the configuration with all defaults filled in.
    Config {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    parse_config(&read(path)?).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn load_image(path: &Path) -> Result<GrayImage, CliError> {
    read_pgm(&read(path)?).map_err(|source| CliError::Pgm {
        path: path.to_path_buf(),
        source,
    })
}

fn extract(cfg: &RunConfig) -> Result<TransferCurve, CliError> {
    Ok(extract_curve(&cfg.pixel(), cfg.curve_points, cfg.normalization)?)
}

fn lut_of(cfg: &RunConfig) -> Result<[u8; 256], CliError> {
    extract(cfg)?
        .lut256()
        .ok_or_else(|| CliError::Usage("image processing needs curve_points = 256".into()))
}

pub fn features_json(f: &CurveFeatures) -> String {
    format!(
        "{{\"threshold_code\":{},\"ax\":{},\"ay\":{},\"bx\":{},\"by\":{},\"max_step\":{},\"stage1_max\":{},\"stage2_min\":{},\"stage2_max\":{}}}\n",
        f.threshold_code, f.ax, f.ay, f.bx, f.by, f.max_step, f.stage1_max, f.stage2_span.0, f.stage2_span.1
    )
}

fn family_csv(label: &str, values: &[f64], curves: &[TransferCurve]) -> String {
    let mut s = format!("{label},input_code,v_drop_v,v_out_raw_v,output_code,ptm_state\n");
    for (v, c) in values.iter().zip(curves) {
        let v = fmt_g(*v, 9);
        for line in curve_csv(c).lines().skip(1) {
            s.push_str(&v);
            s.push(',');
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

fn family_features_csv(label: &str, values: &[f64], curves: &[TransferCurve]) -> String {
    let mut s = format!("{label},threshold_code,ay,by,max_step,stage1_max\n");
    for (v, c) in values.iter().zip(curves) {
        let v = fmt_g(*v, 9);
        match c.features() {
            Ok(f) => s.push_str(&format!(
                "{v},{},{},{},{},{}\n",
                f.threshold_code, f.ay, f.by, f.max_step, f.stage1_max
            )),
            Err(_) => s.push_str(&format!("{v},,,,,\n")),
        }
    }
    s
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::ExtractCurve { config, out } => {
            let cfg = load_config(&config)?;
            write(&out, curve_csv(&extract(&cfg)?))
        }
        Command::Features { config, out } => {
            let cfg = load_config(&config)?;
            let f = extract(&cfg)?.features()?;
            emit(out.as_deref(), &features_json(&f))
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            features,
        } => {
            let cfg = load_config(&config)?;
            let param = SweepParam::from(param);
            let curves = sweep_parameter(&cfg.pixel(), param, &values, &cfg.extraction())?;
            write(&out, family_csv(param.name(), &values, &curves))?;
            if let Some(p) = features {
                write(&p, family_features_csv(param.name(), &values, &curves))?;
            }
            Ok(())
        }
        Command::VgtSweep {
            config,
            values,
            out,
            features,
        } => {
            let cfg = load_config(&config)?;
            let curves = vgt_family(&cfg.pixel(), &values, &cfg.extraction())?;
            write(&out, family_csv("v_gt_v", &values, &curves))?;
            if let Some(p) = features {
                write(&p, family_features_csv("v_gt_v", &values, &curves))?;
            }
            Ok(())
        }
        Command::Design {
            config,
            target_code,
            free,
            out_config,
        } => {
            let mut cfg = load_config(&config)?;
            let free = match free {
                FreeArg::IcHlt => DesignParam::IcHlt,
                FreeArg::RHrs => DesignParam::RHrs,
            };
            let value = design_threshold(&cfg.pixel(), target_code, free, &cfg.extraction())?;
            let param = SweepParam::from(free);
            let tuned = param.apply(&cfg.pixel(), value)?;
            cfg.set_pixel(&tuned);
            let achieved = extract(&cfg)?.features()?.threshold_code;
            println!(
                "{{\"free\":\"{}\",\"value\":{},\"target_code\":{},\"threshold_code\":{}}}",
                param.name(),
                fmt_g(value, 9),
                target_code,
                achieved
            );
            if let Some(p) = out_config {
                write(&p, cfg.to_json())?;
            }
            Ok(())
        }
        Command::Enhance {
            config,
            input,
            out_image,
            report,
            format,
        } => {
            let cfg = load_config(&config)?;
            let img = load_image(&input)?;
            let out = apply_lut(&img, &lut_of(&cfg)?);
            let rep = enhancement_report(&img, &out)?;
            write(&out_image, write_pgm(&out, format.into()))?;
            write(&report, report_json(&rep))
        }
        Command::Metrics { input, out } => {
            let img = load_image(&input)?;
            emit(out.as_deref(), &histogram_json(&histogram(&img)))
        }
        Command::Synth {
            width,
            height,
            l_min,
            l_max,
            seed,
            out,
            format,
        } => {
            let img = synth_low_contrast(width, height, l_min, l_max, seed)?;
            write(&out, write_pgm(&img, format.into()))
        }
        Command::Simulate {
            config,
            illum,
            trace,
            steps,
        } => {
            let cfg = load_config(&config)?;
            let t = simulate_frame(&cfg.pixel(), illum, steps)?;
            write(&trace, trace_csv(&t))
        }
        Command::Baseline3t { config, out } => {
            let cfg = load_config(&config)?;
            let n = cfg.curve_points;
            let illums: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
            let v_out = illums
                .iter()
                .map(|&x| simulate_3t_frame(&cfg.baseline_3t, x))
                .collect::<Result<Vec<_>, _>>()?;
            let codes = normalize_curve(&v_out, cfg.normalization);
            let mut s = String::from("input_code,illum,v_out_v,output_code\n");
            for k in 0..n {
                s.push_str(&format!("{k},{},{},{}\n", fmt_g(illums[k], 9), fmt_g(v_out[k], 9), codes[k]));
            }
            write(&out, s)
        }
        Command::Mc {
            config,
            samples,
            seed,
            image,
            out,
            summary,
            workers,
        } => {
            let cfg = load_config(&config)?;
            let img = load_image(&image)?;
            let n = samples.unwrap_or(cfg.monte_carlo.samples);
            let seed = seed.unwrap_or(cfg.monte_carlo.seed);
            let pixel = cfg.pixel();
            let rows = with_workers(workers, || {
                run_monte_carlo(&pixel, &cfg.monte_carlo.sigma, n, seed, &img, &cfg.extraction())
            })??;
            write(&out, mc_csv(&rows))?;
            write(&summary, summary_json(&mc_summary(&rows)?))
        }
        Command::Config { config } => {
            print!("{}", load_config(&config)?.to_json());
            Ok(())
        }
    }
}
