//! Monte Carlo experiment engine: end-to-end trials, DER/BER accounting,
//! and parameter sweeps with counter-based seeding.
//!
//! Every random draw in a trial comes from a stream derived as
//! hash(master_seed, axis, value, trial_index, purpose), so results are
//! reproducible bit-for-bit regardless of how trials are scheduled across
//! workers.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{decode_detected, sb_gomp, StopMode, StopRule};
use crate::error::{Error, Result};
use crate::modem::{dqpsk_modulate, encode_frame, CodecConfig};
use crate::phy::{assemble_observation, draw_activity, draw_channel, spread_frame};
use crate::seed::{derive_seed, tag};
use crate::seqdesign::{assign_blocks, block_columns, generate_sensing_matrix};

/// How the detector decides to stop, described independently of any one
/// trial (the genie count and the noise floor are only known per trial).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StopPolicy {
    /// Genie-aided: stop at the trial's realized active count.
    KnownK,
    /// Stop at the noise floor: gamma = (1 + margin) M L sigma^2.
    ResidualThreshold { margin: f64 },
    /// Whichever of the two fires first.
    Both { margin: f64 },
}

impl StopPolicy {
    fn margin(&self) -> Option<f64> {
        match self {
            StopPolicy::KnownK => None,
            StopPolicy::ResidualThreshold { margin } | StopPolicy::Both { margin } => {
                Some(*margin)
            }
        }
    }

    fn rule_for_trial(
        &self,
        true_k: usize,
        m: usize,
        l: usize,
        noise_variance: f64,
        max_iters: usize,
    ) -> Result<StopRule> {
        let rule = match self {
            StopPolicy::KnownK => StopRule {
                mode: StopMode::KnownK,
                k: Some(true_k),
                gamma: None,
                max_iters,
            },
            StopPolicy::ResidualThreshold { margin } => StopRule {
                mode: StopMode::ResidualThreshold,
                k: None,
                gamma: Some(StopRule::noise_floor_gamma(m, l, noise_variance, *margin)),
                max_iters,
            },
            StopPolicy::Both { margin } => StopRule {
                mode: StopMode::Both,
                k: Some(true_k),
                gamma: Some(StopRule::noise_floor_gamma(m, l, noise_variance, *margin)),
                max_iters,
            },
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl std::fmt::Display for StopPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopPolicy::KnownK => write!(f, "known_k"),
            StopPolicy::ResidualThreshold { margin } => write!(f, "threshold(margin={margin})"),
            StopPolicy::Both { margin } => write!(f, "both(margin={margin})"),
        }
    }
}

/// Full description of one simulated link configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    /// Users / sequences N.
    pub n_users: usize,
    /// Chips (subcarriers) per sequence M.
    pub chips: usize,
    /// Sequences per user block D.
    pub block_size: usize,
    /// Activity probability p_a.
    pub activity: f64,
    pub snr_db: f64,
    /// Default trial count for single runs.
    pub trials: usize,
    pub fading_block_length: usize,
    pub tap_count: usize,
    pub decay_constant: f64,
    pub codec: CodecConfig,
    pub stop: StopPolicy,
    /// Hard cap on detector iterations.
    pub max_iters: usize,
    pub master_seed: u64,
}

impl SimConfig {
    /// Reference uplink: M=20, N=60, p_a=0.1, SNR 10 dB, L_c=100 info bits,
    /// block fading over 10 symbols, 4 exponentially decaying taps, noise
    /// floor stopping with a 25% margin.
    pub fn baseline() -> Self {
        Self {
            n_users: 60,
            chips: 20,
            block_size: 4,
            activity: 0.1,
            snr_db: 10.0,
            trials: 1000,
            fading_block_length: 10,
            tap_count: 4,
            decay_constant: 2.0,
            codec: CodecConfig::standard(100, 0x5EED),
            stop: StopPolicy::ResidualThreshold { margin: 0.25 },
            max_iters: 20,
            master_seed: 1,
        }
    }

    /// Overloading factor lambda = N / M.
    pub fn overloading(&self) -> f64 {
        self.n_users as f64 / self.chips as f64
    }

    /// Set N from an overloading factor; lambda * M must land on an integer.
    pub fn with_overloading(mut self, lambda: f64) -> Result<Self> {
        let n = lambda * self.chips as f64;
        if !(n.is_finite() && n > 0.0 && (n - n.round()).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "overloading {lambda} with {} chips gives non-integer user count {n}",
                self.chips
            )));
        }
        self.n_users = n.round() as usize;
        Ok(self)
    }

    /// Modulated frame length for this block size: 1 + L_c + tail coded
    /// symbols, rounded up to a multiple of D.
    pub fn frame_len(&self) -> usize {
        let raw = 1 + self.codec.coded_len() / 2;
        raw.div_ceil(self.block_size) * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.chips == 0 || self.n_users < 2 || self.chips >= self.n_users {
            return Err(Error::Config(format!(
                "need 1 <= chips < users, got chips={} users={}",
                self.chips, self.n_users
            )));
        }
        if self.block_size == 0 || self.block_size > self.n_users {
            return Err(Error::Config(format!(
                "block size {} outside 1..={}",
                self.block_size, self.n_users
            )));
        }
        if !(self.activity > 0.0 && self.activity < 1.0) {
            return Err(Error::Config(format!(
                "activity must lie in (0,1), got {}",
                self.activity
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db must not be NaN".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.fading_block_length == 0 {
            return Err(Error::Config("fading_block_length must be >= 1".into()));
        }
        if self.tap_count == 0 || self.tap_count > self.chips {
            return Err(Error::Config(format!(
                "tap count {} outside 1..={}",
                self.tap_count, self.chips
            )));
        }
        if !(self.decay_constant > 0.0) {
            return Err(Error::Config(format!(
                "decay constant must be > 0, got {}",
                self.decay_constant
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if let Some(margin) = self.stop.margin() {
            if !(margin > -1.0 && margin.is_finite()) {
                return Err(Error::Config(format!(
                    "stop margin must be finite and > -1, got {margin}"
                )));
            }
        }
        self.codec.validate()
    }
}

/// Bookkeeping of one end-to-end trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialResult {
    pub n_users: usize,
    pub true_support: Vec<usize>,
    pub detected_support: Vec<usize>,
    /// Active users not detected.
    pub missed: usize,
    /// Detected users that were not active.
    pub false_alarms: usize,
    /// Bit errors over truly active users' frames (a missed user counts as a
    /// whole frame of errors; false-alarm decodes are ignored).
    pub bit_errors: usize,
    pub bits_total: usize,
    /// Detection aborted because the support would exceed the chip count.
    pub saturated: bool,
}

/// Run one trial: draw traffic, encode/modulate/spread the active users,
/// push through the fading channel and noise, detect, decode, tally.
pub fn run_trial(cfg: &SimConfig, trial_seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let (n, m, d) = (cfg.n_users, cfg.chips, cfg.block_size);
    let lc = cfg.codec.info_bits_per_frame;

    let matrix = generate_sensing_matrix(
        m,
        n,
        derive_seed(&[trial_seed, tag::MATRIX]),
    )?;
    let blocks = assign_blocks(&matrix, d)?;

    let mut activity_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(&[trial_seed, tag::ACTIVITY]));
    let activity = draw_activity(n, cfg.activity, &mut activity_rng)?;
    let active = activity.active_indices();
    let k = active.len();

    let mut signals = Vec::with_capacity(k);
    let mut sent = Vec::with_capacity(k);
    let mut frame_len = cfg.frame_len();
    for &u in &active {
        let mut bits_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[trial_seed, tag::BITS, u as u64]));
        let info: Vec<u8> = (0..lc).map(|_| bits_rng.random_range(0..2u8)).collect();
        let coded = encode_frame(&info, &cfg.codec)?;
        let frame = dqpsk_modulate(&coded, d)?;
        frame_len = frame.len();
        signals.push((u, spread_frame(&frame, &block_columns(&matrix, &blocks, u))?));
        sent.push((u, info));
    }

    let mut channel_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(&[trial_seed, tag::CHANNEL]));
    let channel = draw_channel(
        n,
        m,
        cfg.tap_count,
        cfg.decay_constant,
        cfg.fading_block_length,
        frame_len,
        &mut channel_rng,
    )?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[trial_seed, tag::NOISE]));
    let obs = assemble_observation(&signals, &activity, channel, cfg.snr_db, &mut noise_rng)?;

    let stop = cfg
        .stop
        .rule_for_trial(k, m, frame_len, obs.noise_variance(), cfg.max_iters)?;

    let detection = match sb_gomp(&obs, &blocks, &matrix, &stop) {
        Ok(res) => res,
        Err(Error::OverSaturated { .. }) => {
            // Flagged, not fatal: score the trial as if nothing was detected.
            return Ok(TrialResult {
                n_users: n,
                true_support: active.clone(),
                detected_support: Vec::new(),
                missed: k,
                false_alarms: 0,
                bit_errors: k * lc,
                bits_total: k * lc,
                saturated: true,
            });
        }
        Err(e) => return Err(e),
    };

    let missed = active
        .iter()
        .filter(|u| !detection.support.contains(u))
        .count();
    let false_alarms = detection
        .support
        .iter()
        .filter(|u| !active.contains(u))
        .count();

    let decoded = decode_detected(&detection, &cfg.codec)?;
    let mut bit_errors = 0usize;
    for (u, info) in &sent {
        match decoded.iter().find(|(du, _)| du == u) {
            Some((_, bits)) => {
                bit_errors += bits.iter().zip(info).filter(|(a, b)| a != b).count();
            }
            None => bit_errors += lc,
        }
    }

    Ok(TrialResult {
        n_users: n,
        true_support: active,
        detected_support: detection.support,
        missed,
        false_alarms,
        bit_errors,
        bits_total: k * lc,
        saturated: false,
    })
}

/// A rate with its Wilson 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub numerator: u64,
    pub denominator: u64,
}

const Z_95: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(errors: u64, total: u64) -> (f64, f64) {
    assert!(total > 0, "interval needs at least one observation");
    let n = total as f64;
    let p = errors as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // Clamp to [0,1] and absorb roundoff so the interval brackets p.
    let lo = (center - half).max(0.0).min(p);
    let hi = (center + half).min(1.0).max(p);
    (lo, hi)
}

fn rate_estimate(numerator: u64, denominator: u64) -> RateEstimate {
    let (ci_lo, ci_hi) = wilson_interval(numerator, denominator);
    RateEstimate {
        rate: numerator as f64 / denominator as f64,
        ci_lo,
        ci_hi,
        numerator,
        denominator,
    }
}

/// DER over a result set: wrong activity decisions (misses plus false
/// alarms) per user per trial.
pub fn estimate_der(results: &[TrialResult]) -> Result<RateEstimate> {
    if results.is_empty() {
        return Err(Error::Domain("DER of an empty result set".into()));
    }
    let errors: u64 = results.iter().map(|r| (r.missed + r.false_alarms) as u64).sum();
    let total: u64 = results.iter().map(|r| r.n_users as u64).sum();
    Ok(rate_estimate(errors, total))
}

/// Miss-only variant of the DER, for re-basing comparisons against results
/// that score false alarms differently. Reported alongside the symmetric
/// definition in JSON output; the CSV schema carries only the symmetric one.
pub fn estimate_miss_only_der(results: &[TrialResult]) -> Result<RateEstimate> {
    if results.is_empty() {
        return Err(Error::Domain("DER of an empty result set".into()));
    }
    let errors: u64 = results.iter().map(|r| r.missed as u64).sum();
    let total: u64 = results.iter().map(|r| r.n_users as u64).sum();
    Ok(rate_estimate(errors, total))
}

/// BER over truly active users' frames; `None` when no user was active in
/// any trial (the rate is undefined).
pub fn estimate_ber(results: &[TrialResult]) -> Result<Option<RateEstimate>> {
    if results.is_empty() {
        return Err(Error::Domain("BER of an empty result set".into()));
    }
    let errors: u64 = results.iter().map(|r| r.bit_errors as u64).sum();
    let total: u64 = results.iter().map(|r| r.bits_total as u64).sum();
    if total == 0 {
        return Ok(None);
    }
    Ok(Some(rate_estimate(errors, total)))
}

/// Which configuration parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAxis {
    SnrDb,
    BlockSize,
    Activity,
    Overloading,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::BlockSize => "block_size",
            SweepAxis::Activity => "activity",
            SweepAxis::Overloading => "overloading",
        }
    }

    /// Stable id mixed into per-trial seeds.
    fn id(&self) -> u64 {
        match self {
            SweepAxis::SnrDb => 1,
            SweepAxis::BlockSize => 2,
            SweepAxis::Activity => 3,
            SweepAxis::Overloading => 4,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_db" | "snr" => Ok(SweepAxis::SnrDb),
            "block_size" => Ok(SweepAxis::BlockSize),
            "activity" => Ok(SweepAxis::Activity),
            "overloading" => Ok(SweepAxis::Overloading),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected snr_db, block_size, activity, \
                 or overloading)"
            ))),
        }
    }
}

/// Return a copy of the config with the axis parameter set to `value`.
pub fn apply_axis(base: &SimConfig, axis: SweepAxis, value: f64) -> Result<SimConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::SnrDb => cfg.snr_db = value,
        SweepAxis::BlockSize => {
            if !(value.fract() == 0.0 && value >= 1.0 && value <= u32::MAX as f64) {
                return Err(Error::Config(format!(
                    "block size must be a positive integer, got {value}"
                )));
            }
            cfg.block_size = value as usize;
        }
        SweepAxis::Activity => cfg.activity = value,
        SweepAxis::Overloading => cfg = cfg.with_overloading(value)?,
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Aggregated statistics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub der: RateEstimate,
    pub der_miss_only: RateEstimate,
    pub ber: Option<RateEstimate>,
    pub trials: usize,
    pub saturated_count: usize,
}

/// A full sweep with the configuration it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub base_config: SimConfig,
    pub trials_per_point: usize,
    pub config_hash: u64,
    pub code_version: String,
}

fn fold_bytes(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h = crate::seed::splitmix64(h ^ b as u64);
    }
    h
}

/// Stable fingerprint of (config, axis, trial count) for output headers.
fn config_fingerprint(cfg: &SimConfig, axis: SweepAxis, trials_per_point: usize) -> u64 {
    let encoded = serde_json::to_string(cfg).expect("config serializes");
    let mut h = fold_bytes(0x5b_c5_0d_e5, encoded.as_bytes());
    h = fold_bytes(h, axis.name().as_bytes());
    fold_bytes(h, &trials_per_point.to_le_bytes())
}

/// Run `trials_per_point` independent trials at every axis value. Trials are
/// scheduled in parallel; per-trial seeds depend only on (master seed, axis,
/// value, index), so the aggregate is identical for any worker count.
pub fn run_sweep(
    base: &SimConfig,
    axis: SweepAxis,
    values: &[f64],
    trials_per_point: usize,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    if trials_per_point == 0 {
        return Err(Error::Config("trials_per_point must be >= 1".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let cfg = apply_axis(base, axis, value)?;
        let results: Vec<TrialResult> = (0..trials_per_point)
            .into_par_iter()
            .map(|t| {
                let trial_seed =
                    derive_seed(&[base.master_seed, axis.id(), value.to_bits(), t as u64]);
                run_trial(&cfg, trial_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let der = estimate_der(&results)?;
        let der_miss_only = estimate_miss_only_der(&results)?;
        let ber = estimate_ber(&results)?;
        let saturated_count = results.iter().filter(|r| r.saturated).count();
        points.push(SweepPoint {
            axis_value: value,
            der,
            der_miss_only,
            ber,
            trials: results.len(),
            saturated_count,
        });
    }
    Ok(SweepResult {
        axis,
        points,
        base_config: base.clone(),
        trials_per_point,
        config_hash: config_fingerprint(base, axis, trials_per_point),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

fn config_echo(cfg: &SimConfig) -> String {
    let mut s = String::new();
    let (g1, g2) = cfg.codec.generator_polynomials;
    let _ = write!(
        s,
        "n_users={} chips={} block_size={} activity={} snr_db={} \
         fading_block_length={} tap_count={} decay_constant={} stop={} max_iters={} \
         codec=k{}({:#o},{:#o}) interleaver_seed={} info_bits={}",
        cfg.n_users,
        cfg.chips,
        cfg.block_size,
        cfg.activity,
        cfg.snr_db,
        cfg.fading_block_length,
        cfg.tap_count,
        cfg.decay_constant,
        cfg.stop,
        cfg.max_iters,
        cfg.codec.constraint_length,
        g1,
        g2,
        cfg.codec.interleaver_seed,
        cfg.codec.info_bits_per_frame,
    );
    s
}

fn write_rate(line: &mut String, rate: Option<&RateEstimate>) {
    match rate {
        Some(r) => {
            let _ = write!(line, ",{:.10e},{:.10e},{:.10e}", r.rate, r.ci_lo, r.ci_hi);
        }
        None => line.push_str(",NA,NA,NA"),
    }
}

/// Emit a sweep as CSV: reproducibility header comments, a schema line, one
/// row per point.
pub fn write_sweep_csv<W: Write>(result: &SweepResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# axis={}", result.axis.name())?;
    writeln!(
        w,
        "# master_seed={} trials_per_point={} config_hash={:#018x} code_version={}",
        result.base_config.master_seed,
        result.trials_per_point,
        result.config_hash,
        result.code_version
    )?;
    writeln!(w, "# {}", config_echo(&result.base_config))?;
    writeln!(
        w,
        "axis_value,der,der_ci_lo,der_ci_hi,ber,ber_ci_lo,ber_ci_hi,trials,saturated_count"
    )?;
    for p in &result.points {
        let mut line = format!("{}", p.axis_value);
        write_rate(&mut line, Some(&p.der));
        write_rate(&mut line, p.ber.as_ref());
        let _ = write!(line, ",{},{}", p.trials, p.saturated_count);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Emit a sweep as JSON with the full config echo.
pub fn write_sweep_json<W: Write>(result: &SweepResult, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, result)
        .map_err(|e| Error::Domain(format!("JSON serialization: {e}")))
}
