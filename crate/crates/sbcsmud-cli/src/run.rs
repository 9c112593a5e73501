//! Argument parsing, config resolution (file < flags), sweep execution, and
//! output emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::builder::ArgGroup;
use clap::Parser;
use serde::{Deserialize, Serialize};

use sbcsmud::seed::derive_seed;
use sbcsmud::simkit::{
    run_sweep, write_sweep_csv, write_sweep_json, RateEstimate, SimConfig, StopPolicy, SweepAxis,
    SweepResult,
};
use sbcsmud::Error;

use crate::plot::render_plot;
use crate::presets::{FigurePreset, PresetPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// CLI failure split by exit code: bad configuration vs filesystem trouble.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Io(msg) => f.write_str(msg),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn parse_preset(s: &str) -> Result<FigurePreset, String> {
    s.parse()
}

#[derive(Parser, Debug)]
#[command(
    name = "sbcsmud",
    version,
    about = "Link-level Monte Carlo sweeps for sequence-block multiuser detection",
    group(ArgGroup::new("source").required(true).args(["preset", "config"]))
)]
struct Args {
    /// Named experiment (fig4_der, fig4_ber_companion, fig5_pa, fig6_lambda).
    #[arg(long, value_parser = parse_preset)]
    preset: Option<FigurePreset>,

    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Trials per sweep point.
    #[arg(long)]
    trials: Option<usize>,

    /// Master seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,

    /// SNR in dB (base value; ignored as a base when SNR is the sweep axis).
    #[arg(long)]
    snr: Option<f64>,

    /// Sequence block size D. On a preset this restricts the D grid.
    #[arg(long)]
    block_size: Option<usize>,

    /// Activity probability p_a.
    #[arg(long)]
    activity: Option<f64>,

    /// Overloading factor lambda = N/M; sets the user count from the chips.
    #[arg(long)]
    overloading: Option<f64>,

    /// User count N.
    #[arg(long)]
    users: Option<usize>,

    /// Chips (sequence length) M.
    #[arg(long)]
    chips: Option<usize>,

    /// Detector stop rule.
    #[arg(long, value_parser = ["known-k", "threshold"])]
    stop: Option<String>,

    /// Margin in the noise-floor threshold gamma = (1+margin) M L sigma^2.
    #[arg(long)]
    gamma_margin: Option<f64>,

    /// Worker thread cap; output is identical for any value.
    #[arg(long)]
    jobs: Option<usize>,

    /// Output directory for CSV/JSON/SVG files.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also render an SVG plot of the sweep.
    #[arg(long)]
    plot: bool,
}

/// Flat key-value config file. Every key is optional; omitted keys keep the
/// baseline values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    users: Option<usize>,
    chips: Option<usize>,
    block_size: Option<usize>,
    activity: Option<f64>,
    snr_db: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    fading_block_length: Option<usize>,
    tap_count: Option<usize>,
    decay_constant: Option<f64>,
    max_iters: Option<usize>,
    stop: Option<String>,
    gamma_margin: Option<f64>,
    info_bits: Option<usize>,
    interleaver_seed: Option<u64>,
    overloading: Option<f64>,
    axis: Option<String>,
    values: Option<Vec<f64>>,
}

fn stop_policy_from_name(name: &str, margin: Option<f64>, base: &StopPolicy) -> Result<StopPolicy, CliError> {
    let carried = margin
        .or(match base {
            StopPolicy::ResidualThreshold { margin } | StopPolicy::Both { margin } => {
                Some(*margin)
            }
            StopPolicy::KnownK => None,
        })
        .unwrap_or(0.25);
    match name {
        "known-k" | "known_k" => Ok(StopPolicy::KnownK),
        "threshold" => Ok(StopPolicy::ResidualThreshold { margin: carried }),
        "both" => Ok(StopPolicy::Both { margin: carried }),
        other => Err(CliError::Config(format!(
            "unknown stop rule '{other}' (expected known-k, threshold, or both)"
        ))),
    }
}

/// A resolved run: shared axis and values, one config per block size.
struct RunPlan {
    name: String,
    focus: &'static str,
    axis: SweepAxis,
    values: Vec<f64>,
    block_sizes: Vec<usize>,
    base: SimConfig,
    trials_per_point: usize,
}

fn plan_from_preset(preset: FigurePreset) -> RunPlan {
    let PresetPlan {
        name,
        focus,
        axis,
        values,
        block_sizes,
        base,
    } = preset.plan();
    let trials = base.trials;
    RunPlan {
        name: name.to_string(),
        focus,
        axis,
        values,
        block_sizes,
        base,
        trials_per_point: trials,
    }
}

fn plan_from_config(path: &Path) -> Result<RunPlan, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;

    let mut cfg = SimConfig::baseline();
    if let Some(v) = file.users {
        cfg.n_users = v;
    }
    if let Some(v) = file.chips {
        cfg.chips = v;
    }
    if let Some(v) = file.block_size {
        cfg.block_size = v;
    }
    if let Some(v) = file.activity {
        cfg.activity = v;
    }
    if let Some(v) = file.snr_db {
        cfg.snr_db = v;
    }
    if let Some(v) = file.trials {
        cfg.trials = v;
    }
    if let Some(v) = file.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = file.fading_block_length {
        cfg.fading_block_length = v;
    }
    if let Some(v) = file.tap_count {
        cfg.tap_count = v;
    }
    if let Some(v) = file.decay_constant {
        cfg.decay_constant = v;
    }
    if let Some(v) = file.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = file.info_bits {
        cfg.codec.info_bits_per_frame = v;
    }
    if let Some(v) = file.interleaver_seed {
        cfg.codec.interleaver_seed = v;
    }
    if let Some(name) = &file.stop {
        cfg.stop = stop_policy_from_name(name, file.gamma_margin, &cfg.stop)?;
    } else if let Some(margin) = file.gamma_margin {
        cfg.stop = stop_policy_from_name("threshold", Some(margin), &cfg.stop)?;
    }
    if let Some(lambda) = file.overloading {
        cfg = cfg.with_overloading(lambda).map_err(CliError::from)?;
    }

    let (axis, values) = match (&file.axis, &file.values) {
        (Some(a), Some(v)) => (
            a.parse::<SweepAxis>().map_err(CliError::from)?,
            v.clone(),
        ),
        (Some(_), None) => {
            return Err(CliError::Config(
                "config sets an axis but no values".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(CliError::Config(
                "config sets values but no axis".into(),
            ))
        }
        // No sweep requested: a single point at the configured SNR.
        (None, None) => (SweepAxis::SnrDb, vec![cfg.snr_db]),
    };

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".to_string());
    let trials = cfg.trials;
    let block_sizes = vec![cfg.block_size];
    Ok(RunPlan {
        name: stem,
        focus: "der",
        axis,
        values,
        block_sizes,
        base: cfg,
        trials_per_point: trials,
    })
}

fn apply_flag_overrides(plan: &mut RunPlan, args: &Args) -> Result<(), CliError> {
    let cfg = &mut plan.base;
    if let Some(v) = args.users {
        cfg.n_users = v;
    }
    if let Some(v) = args.chips {
        cfg.chips = v;
    }
    if let Some(v) = args.activity {
        cfg.activity = v;
    }
    if let Some(v) = args.snr {
        cfg.snr_db = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(name) = &args.stop {
        cfg.stop = stop_policy_from_name(name, args.gamma_margin, &cfg.stop)?;
    } else if let Some(margin) = args.gamma_margin {
        match &mut cfg.stop {
            StopPolicy::ResidualThreshold { margin: m } | StopPolicy::Both { margin: m } => {
                *m = margin;
            }
            StopPolicy::KnownK => {
                return Err(CliError::Config(
                    "--gamma-margin needs a threshold stop rule (add --stop threshold)".into(),
                ))
            }
        }
    }
    if let Some(lambda) = args.overloading {
        *cfg = cfg.clone().with_overloading(lambda).map_err(CliError::from)?;
    }
    if let Some(v) = args.trials {
        plan.trials_per_point = v;
    }
    if let Some(d) = args.block_size {
        // On a preset this narrows the D grid; on a config it replaces D.
        plan.block_sizes = vec![d];
        plan.base.block_size = d;
    }
    Ok(())
}

fn format_rate(r: &RateEstimate) -> String {
    format!("{:.4e} [{:.4e},{:.4e}]", r.rate, r.ci_lo, r.ci_hi)
}

/// Status line to stdout, tolerating a closed pipe (e.g. `sbcsmud ... | head`).
fn status(line: std::fmt::Arguments) {
    use std::io::Write as _;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn print_summaries(sweep: &SweepResult, d: usize) {
    for p in &sweep.points {
        let ber = p
            .ber
            .as_ref()
            .map(format_rate)
            .unwrap_or_else(|| "NA".to_string());
        status(format_args!(
            "D={} {}={} der={} ber={} trials={} saturated={}",
            d,
            sweep.axis.name(),
            p.axis_value,
            format_rate(&p.der),
            ber,
            p.trials,
            p.saturated_count
        ));
    }
}

fn push_rate(line: &mut String, rate: Option<&RateEstimate>) {
    match rate {
        Some(r) => {
            let _ = write!(line, ",{:.10e},{:.10e},{:.10e}", r.rate, r.ci_lo, r.ci_hi);
        }
        None => line.push_str(",NA,NA,NA"),
    }
}

/// CSV for a multi-D run: the single-sweep schema with a leading block_size
/// column, one block of rows per D.
fn combined_csv(plan: &RunPlan, sweeps: &[(usize, SweepResult)]) -> String {
    let mut out = String::new();
    let combined_hash = derive_seed(
        &sweeps
            .iter()
            .map(|(_, s)| s.config_hash)
            .collect::<Vec<_>>(),
    );
    let _ = writeln!(out, "# preset={} focus={}", plan.name, plan.focus);
    let _ = writeln!(out, "# axis={}", plan.axis.name());
    let _ = writeln!(
        out,
        "# master_seed={} trials_per_point={} config_hash={combined_hash:#018x} code_version={}",
        plan.base.master_seed,
        plan.trials_per_point,
        env!("CARGO_PKG_VERSION"),
    );
    let _ = writeln!(
        out,
        "# config={}",
        serde_json::to_string(&plan.base).expect("config serializes")
    );
    let _ = writeln!(
        out,
        "# block_sizes={}",
        plan.block_sizes
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    out.push_str(
        "block_size,axis_value,der,der_ci_lo,der_ci_hi,ber,ber_ci_lo,ber_ci_hi,trials,saturated_count\n",
    );
    for (d, sweep) in sweeps {
        for p in &sweep.points {
            let mut line = format!("{},{}", d, p.axis_value);
            push_rate(&mut line, Some(&p.der));
            push_rate(&mut line, p.ber.as_ref());
            let _ = write!(line, ",{},{}", p.trials, p.saturated_count);
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

#[derive(Serialize)]
struct MultiSweepJson<'a> {
    name: &'a str,
    focus: &'a str,
    axis: &'a str,
    block_sizes: &'a [usize],
    sweeps: Vec<&'a SweepResult>,
}

fn write_outputs(
    plan: &RunPlan,
    sweeps: &[(usize, SweepResult)],
    out_dir: &Path,
    plot: bool,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let csv_path = out_dir.join(format!("{}.csv", plan.name));
    let json_path = out_dir.join(format!("{}.json", plan.name));

    let csv = if sweeps.len() == 1 {
        let mut buf = Vec::new();
        write_sweep_csv(&sweeps[0].1, &mut buf)
            .map_err(|e| CliError::Io(format!("CSV serialization: {e}")))?;
        String::from_utf8(buf).expect("CSV is UTF-8")
    } else {
        combined_csv(plan, sweeps)
    };
    std::fs::write(&csv_path, &csv)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", csv_path.display())))?;

    let json = if sweeps.len() == 1 {
        let mut buf = Vec::new();
        write_sweep_json(&sweeps[0].1, &mut buf).map_err(CliError::from)?;
        String::from_utf8(buf).expect("JSON is UTF-8")
    } else {
        let multi = MultiSweepJson {
            name: &plan.name,
            focus: plan.focus,
            axis: plan.axis.name(),
            block_sizes: &plan.block_sizes,
            sweeps: sweeps.iter().map(|(_, s)| s).collect(),
        };
        serde_json::to_string_pretty(&multi)
            .map_err(|e| CliError::Config(format!("JSON serialization: {e}")))?
    };
    std::fs::write(&json_path, &json)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", json_path.display())))?;

    status(format_args!("wrote {}", csv_path.display()));
    status(format_args!("wrote {}", json_path.display()));

    if plot {
        let svg_path = out_dir.join(format!("{}.svg", plan.name));
        render_plot(&csv_path, &svg_path)?;
        status(format_args!("wrote {}", svg_path.display()));
    }
    Ok(())
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut plan = match (&args.preset, &args.config) {
        (Some(p), None) => plan_from_preset(*p),
        (None, Some(path)) => plan_from_config(path)?,
        // clap's arg group enforces exactly one source.
        _ => unreachable!("clap enforces --preset xor --config"),
    };
    apply_flag_overrides(&mut plan, args)?;
    if plan.trials_per_point == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }

    let pool = match args.jobs {
        Some(jobs) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?,
        ),
        None => None,
    };

    let mut sweeps = Vec::with_capacity(plan.block_sizes.len());
    for &d in &plan.block_sizes {
        let mut cfg = plan.base.clone();
        cfg.block_size = d;
        cfg.validate().map_err(CliError::from)?;
        let run = || run_sweep(&cfg, plan.axis, &plan.values, plan.trials_per_point);
        let sweep = match &pool {
            Some(p) => p.install(run),
            None => run(),
        }
        .map_err(CliError::from)?;
        print_summaries(&sweep, d);
        sweeps.push((d, sweep));
    }

    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    write_outputs(&plan, &sweeps, &out_dir, args.plot)
}

/// Parse arguments, run, and return the process exit status (0 ok, 2 config
/// error, 3 I/O error).
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
