//! Multiuser received-signal assembly: Bernoulli traffic, spreading over
//! sequence blocks, frequency-domain multipath block fading, and AWGN.
//!
//! The channel is modeled directly on the subcarriers as a per-user diagonal
//! gain vector: taps with an exponentially decaying power profile are drawn
//! per fading block and transformed to M frequency points. Time-domain OFDM
//! details (cyclic prefix, offsets) are out of scope.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::modem::SymbolFrame;
use crate::{C64, CMatrix};

/// Which of the N users transmit in this frame interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityVector {
    active: Vec<bool>,
    k: usize,
}

impl ActivityVector {
    pub fn from_flags(active: Vec<bool>) -> Self {
        let k = active.iter().filter(|&&a| a).count();
        Self { active, k }
    }

    pub fn from_active_set(n: usize, indices: &[usize]) -> Self {
        let mut active = vec![false; n];
        for &i in indices {
            active[i] = true;
        }
        Self::from_flags(active)
    }

    pub fn n(&self) -> usize {
        self.active.len()
    }

    /// Number of active users K.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_active(&self, user: usize) -> bool {
        self.active[user]
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&u| self.active[u]).collect()
    }
}

/// Draw i.i.d. Bernoulli(p_a) activity for n users.
pub fn draw_activity<R: Rng>(n: usize, p_a: f64, rng: &mut R) -> Result<ActivityVector> {
    if n == 0 {
        return Err(Error::Config("user count must be >= 1".into()));
    }
    if !(p_a > 0.0 && p_a < 1.0) {
        return Err(Error::Config(format!(
            "activity probability must lie in (0,1), got {p_a}"
        )));
    }
    let active: Vec<bool> = (0..n).map(|_| rng.random_bool(p_a)).collect();
    Ok(ActivityVector::from_flags(active))
}

/// Spread one frame over a user's sequence block: symbol l multiplies the
/// block's position-(l mod D) sequence, giving an M x L chip matrix.
pub fn spread_frame(frame: &SymbolFrame, block_cols: &CMatrix) -> Result<CMatrix> {
    let d = block_cols.ncols();
    let l = frame.len();
    if d == 0 {
        return Err(Error::Dimension("block has no columns".into()));
    }
    if l % d != 0 {
        return Err(Error::Domain(format!(
            "frame length {l} not divisible by block size {d}"
        )));
    }
    let m = block_cols.nrows();
    let mut out = CMatrix::zeros(m, l);
    for col in 0..l {
        let x = frame.symbols()[col];
        let seq = block_cols.column(col % d);
        for r in 0..m {
            out[(r, col)] = seq[r] * x;
        }
    }
    Ok(out)
}

/// Per-user frequency response, piecewise constant over fading blocks of
/// `fading_block_length` consecutive symbol columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// One N x M matrix per fading block; row n is user n's subcarrier gains.
    block_responses: Vec<CMatrix>,
    /// One N x tap_count matrix per fading block.
    taps: Vec<CMatrix>,
    fading_block_length: usize,
    n_symbol_columns: usize,
}

impl ChannelRealization {
    /// All-ones response (single tap, no fading): h_{n,m} = 1 everywhere.
    pub fn flat_unit(n_users: usize, m_subcarriers: usize, n_symbol_columns: usize) -> Self {
        let ones = CMatrix::from_element(n_users, m_subcarriers, C64::new(1.0, 0.0));
        let taps = CMatrix::from_element(n_users, 1, C64::new(1.0, 0.0));
        Self {
            block_responses: vec![ones],
            taps: vec![taps],
            fading_block_length: n_symbol_columns.max(1),
            n_symbol_columns,
        }
    }

    pub fn n_users(&self) -> usize {
        self.block_responses[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.block_responses[0].ncols()
    }

    pub fn n_symbol_columns(&self) -> usize {
        self.n_symbol_columns
    }

    pub fn fading_block_length(&self) -> usize {
        self.fading_block_length
    }

    pub fn n_fading_blocks(&self) -> usize {
        self.block_responses.len()
    }

    fn block_of(&self, symbol_col: usize) -> usize {
        symbol_col / self.fading_block_length
    }

    /// Subcarrier gain h_{user, chip} at a given symbol column.
    pub fn gain(&self, user: usize, chip: usize, symbol_col: usize) -> C64 {
        self.block_responses[self.block_of(symbol_col)][(user, chip)]
    }

    /// Tap vectors of a fading block (row per user).
    pub fn taps(&self, fading_block: usize) -> &CMatrix {
        &self.taps[fading_block]
    }
}

/// Draw a block-fading multipath channel. Per user and fading block,
/// tap_count complex Gaussian taps with powers p_t proportional to
/// exp(-decay_constant t), normalized to sum 1, are transformed to M
/// frequency points, so E[|h|^2] = 1 on every subcarrier.
#[allow(clippy::too_many_arguments)]
pub fn draw_channel<R: Rng>(
    n_users: usize,
    m_subcarriers: usize,
    tap_count: usize,
    decay_constant: f64,
    fading_block_length: usize,
    n_symbol_columns: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if n_users == 0 || m_subcarriers == 0 || n_symbol_columns == 0 {
        return Err(Error::Config("channel dimensions must be >= 1".into()));
    }
    if tap_count == 0 || tap_count > m_subcarriers {
        return Err(Error::Config(format!(
            "tap count must lie in 1..={m_subcarriers}, got {tap_count}"
        )));
    }
    if !(decay_constant > 0.0) {
        return Err(Error::Config(format!(
            "decay constant must be > 0, got {decay_constant}"
        )));
    }
    if fading_block_length == 0 {
        return Err(Error::Config("fading block length must be >= 1".into()));
    }

    let raw: Vec<f64> = (0..tap_count)
        .map(|t| (-decay_constant * t as f64).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    // Standard deviation per real dimension of each CN(0, p_t) tap.
    let tap_sigma: Vec<f64> = raw.iter().map(|p| (p / total / 2.0).sqrt()).collect();
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal is valid");

    let n_blocks = n_symbol_columns.div_ceil(fading_block_length);
    let mut block_responses = Vec::with_capacity(n_blocks);
    let mut block_taps = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let taps = CMatrix::from_fn(n_users, tap_count, |_, t| {
            C64::new(
                unit_normal.sample(rng) * tap_sigma[t],
                unit_normal.sample(rng) * tap_sigma[t],
            )
        });
        let response = CMatrix::from_fn(n_users, m_subcarriers, |u, m| {
            let mut h = C64::new(0.0, 0.0);
            for t in 0..tap_count {
                let phase = -std::f64::consts::TAU * (m * t) as f64 / m_subcarriers as f64;
                h += taps[(u, t)] * C64::from_polar(1.0, phase);
            }
            h
        });
        block_taps.push(taps);
        block_responses.push(response);
    }

    Ok(ChannelRealization {
        block_responses,
        taps: block_taps,
        fading_block_length,
        n_symbol_columns,
    })
}

/// Received M x L signal with its noise level and the channel that shaped it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    y: CMatrix,
    noise_variance: f64,
    snr_db: f64,
    channel: ChannelRealization,
}

impl Observation {
    pub fn y(&self) -> &CMatrix {
        &self.y
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn l(&self) -> usize {
        self.y.ncols()
    }

    /// Noise variance per complex entry, sigma^2 = 10^(-snr_db/10).
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.channel
    }
}

/// Superimpose the active users' spread frames through the channel and add
/// circular complex Gaussian noise of variance 10^(-snr_db/10) per entry.
/// `active_signals` pairs each active user with its M x L spread matrix and
/// must cover the activity vector exactly; inactive users contribute zero.
pub fn assemble_observation<R: Rng>(
    active_signals: &[(usize, CMatrix)],
    activity: &ActivityVector,
    channel: ChannelRealization,
    snr_db: f64,
    rng: &mut R,
) -> Result<Observation> {
    if snr_db.is_nan() {
        return Err(Error::Config("snr_db must not be NaN".into()));
    }
    if activity.n() != channel.n_users() {
        return Err(Error::Dimension(format!(
            "activity covers {} users, channel {}",
            activity.n(),
            channel.n_users()
        )));
    }
    let (m, l) = (channel.m(), channel.n_symbol_columns());
    let mut listed = vec![false; activity.n()];
    for (user, signal) in active_signals {
        if *user >= activity.n() || !activity.is_active(*user) {
            return Err(Error::Domain(format!(
                "signal listed for user {user}, which is not active"
            )));
        }
        if listed[*user] {
            return Err(Error::Domain(format!("user {user} listed twice")));
        }
        listed[*user] = true;
        if signal.shape() != (m, l) {
            return Err(Error::Dimension(format!(
                "user {user} signal is {:?}, expected ({m}, {l})",
                signal.shape()
            )));
        }
    }
    if active_signals.len() != activity.k() {
        return Err(Error::Domain(format!(
            "{} signals supplied for {} active users",
            active_signals.len(),
            activity.k()
        )));
    }

    let mut y = CMatrix::zeros(m, l);
    for (user, signal) in active_signals {
        for col in 0..l {
            for r in 0..m {
                y[(r, col)] += channel.gain(*user, r, col) * signal[(r, col)];
            }
        }
    }

    let noise_variance = 10f64.powf(-snr_db / 10.0);
    if noise_variance > 0.0 {
        let per_dim = Normal::new(0.0, (noise_variance / 2.0).sqrt())
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for col in 0..l {
            for r in 0..m {
                y[(r, col)] += C64::new(per_dim.sample(rng), per_dim.sample(rng));
            }
        }
    }

    Ok(Observation {
        y,
        noise_variance,
        snr_db,
        channel,
    })
}
