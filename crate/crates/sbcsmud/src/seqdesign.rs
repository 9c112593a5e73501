//! Sensing-matrix design and coherence diagnostics.
//!
//! Spreading sequences are drawn from the complex unit circle and stacked as
//! the columns of an overloaded (M < N) sensing matrix. Each user is assigned
//! an ordered block of D consecutive columns through a sliding window that
//! wraps modulo N, which keeps the sequences at any fixed block position
//! pairwise distinct across users.
//!
//! The diagnostics compare the classic mutual coherence `mu` (worst single
//! column pair) against the block coherence `mu_block` (worst per-user pair of
//! position-averaged correlations). All correlations use the conjugate
//! (Hermitian) inner product, matching what the matched-filter detector
//! actually computes; with a common inner product the averaging argument makes
//! `mu_block <= mu` unconditional.

use std::io::Write;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::{C64, CMatrix, CVector};

/// M x N matrix of unit-modulus spreading sequences, columns normalized to
/// unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    entries: CMatrix,
    column_scale: f64,
    seed: Option<u64>,
}

impl SensingMatrix {
    /// Chip count (rows).
    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    /// Sequence count (columns).
    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    /// Normalized entries; every column has unit norm.
    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    /// Column norm before normalization (sqrt(M) for unit-circle entries).
    pub fn column_scale(&self) -> f64 {
        self.column_scale
    }

    /// Seed used by [`generate_sensing_matrix`], if this matrix came from it.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// View of column `j` as a unit-norm sequence.
    pub fn column(&self, j: usize) -> nalgebra::DVectorView<'_, C64> {
        self.entries.column(j)
    }

    /// Wrap a matrix whose columns are already unit norm.
    ///
    /// Diagnostic entry point: unlike [`generate_sensing_matrix`] it does not
    /// require the overloaded regime (M < N), so orthonormal reference
    /// dictionaries can be inspected with the same coherence tooling.
    pub fn from_unit_columns(entries: CMatrix) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Config("sensing matrix must be non-empty".into()));
        }
        for j in 0..entries.ncols() {
            let norm = entries.column(j).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "column {j} has norm {norm}, expected 1"
                )));
            }
        }
        let column_scale = (entries.nrows() as f64).sqrt();
        Ok(Self {
            entries,
            column_scale,
            seed: None,
        })
    }

    /// Export as CSV: one row per chip, columns `re_k,im_k` per sequence,
    /// with the generation seed recorded in the header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.seed {
            Some(s) => writeln!(w, "# seed={s} m={} n={}", self.m(), self.n())?,
            None => writeln!(w, "# seed=none m={} n={}", self.m(), self.n())?,
        }
        let header: Vec<String> = (0..self.n())
            .flat_map(|k| [format!("re_{k}"), format!("im_{k}")])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.m() {
            let row: Vec<String> = (0..self.n())
                .flat_map(|c| {
                    let z = self.entries[(r, c)];
                    [format!("{:.17e}", z.re), format!("{:.17e}", z.im)]
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-user ordered lists of D column indices (the sequence blocks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAssignment {
    blocks: Vec<Vec<usize>>,
    d: usize,
}

impl BlockAssignment {
    /// Block size D.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of users (= number of sequences N).
    pub fn n_users(&self) -> usize {
        self.blocks.len()
    }

    /// Column indices of user `n`'s block, in position order.
    pub fn block(&self, n: usize) -> &[usize] {
        &self.blocks[n]
    }

    /// All blocks.
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Column index used by user `n` for symbol position `l`.
    pub fn column_for(&self, n: usize, l: usize) -> usize {
        self.blocks[n][l % self.d]
    }
}

/// Coherence diagnostics of a sensing matrix under a block assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    /// Maximum normalized correlation between distinct single columns.
    pub mu: f64,
    /// Column pair attaining `mu`.
    pub argmax_pair: (usize, usize),
    /// Maximum block correlation between distinct users.
    pub mu_block: f64,
    /// User pair attaining `mu_block`.
    pub block_argmax_pair: (usize, usize),
}

/// Generate an M x N sensing matrix of i.i.d. unit-circle entries
/// exp(j 2 pi nu), nu uniform on [0,1), with columns normalized to unit norm.
/// Deterministic for a given seed.
pub fn generate_sensing_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 {
        return Err(Error::Config("chip count m must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::Config("sequence count n must be >= 2".into()));
    }
    if m >= n {
        return Err(Error::Config(format!(
            "not overloaded: need m < n, got m={m}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let entries = CMatrix::from_fn(m, n, |_, _| {
        let nu: f64 = rng.random();
        Complex::from_polar(scale, std::f64::consts::TAU * nu)
    });
    Ok(SensingMatrix {
        entries,
        column_scale: (m as f64).sqrt(),
        seed: Some(seed),
    })
}

/// Assign sequence blocks by a sliding window of width `d` over the columns,
/// wrapping modulo N; user n gets columns (n, n+1, ..., n+d-1 mod N).
pub fn assign_blocks(a: &SensingMatrix, d: usize) -> Result<BlockAssignment> {
    let n = a.n();
    if d == 0 {
        return Err(Error::Config("block size d must be >= 1".into()));
    }
    if d > n {
        return Err(Error::Config(format!(
            "block size d={d} exceeds sequence count n={n}; wrap would repeat indices"
        )));
    }
    let blocks = (0..n)
        .map(|user| (0..d).map(|p| (user + p) % n).collect())
        .collect();
    Ok(BlockAssignment { blocks, d })
}

/// Normalized correlation of two columns under the conjugate inner product.
fn column_correlation(a: &SensingMatrix, i: usize, j: usize) -> f64 {
    let ci = a.column(i);
    let cj = a.column(j);
    // Columns are unit norm by construction; divide anyway.
    ci.dotc(&cj).norm() / (ci.norm() * cj.norm())
}

/// Block correlation including the self pair (which evaluates to 1).
fn block_correlation(a: &SensingMatrix, blk: &BlockAssignment, i: usize, j: usize) -> f64 {
    let (bi, bj) = (blk.block(i), blk.block(j));
    let sum: f64 = bi
        .iter()
        .zip(bj)
        .map(|(&ci, &cj)| column_correlation(a, ci, cj))
        .sum();
    sum / blk.d() as f64
}

/// Average over block positions of the normalized same-index column
/// correlations of users `i` and `j` (the block correlation).
pub fn pairwise_block_correlation(
    a: &SensingMatrix,
    blk: &BlockAssignment,
    i: usize,
    j: usize,
) -> Result<f64> {
    if i == j {
        return Err(Error::Domain(format!(
            "block correlation requires distinct users, got i=j={i}"
        )));
    }
    if i >= blk.n_users() || j >= blk.n_users() {
        return Err(Error::Domain(format!(
            "user index out of range: i={i}, j={j}, n={}",
            blk.n_users()
        )));
    }
    Ok(block_correlation(a, blk, i, j))
}

/// Compute `mu` (max over distinct column pairs) and `mu_block` (max over
/// distinct user pairs of the block correlation), with both argmax pairs.
pub fn coherence_report(a: &SensingMatrix, blk: &BlockAssignment) -> Result<CoherenceReport> {
    if blk.n_users() != a.n() {
        return Err(Error::Dimension(format!(
            "assignment covers {} users but matrix has {} columns",
            blk.n_users(),
            a.n()
        )));
    }
    let n = a.n();
    let mut mu = 0.0;
    let mut argmax_pair = (0, 1);
    let mut mu_block = 0.0;
    let mut block_argmax_pair = (0, 1);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = column_correlation(a, i, j);
            if c > mu {
                mu = c;
                argmax_pair = (i, j);
            }
            let b = block_correlation(a, blk, i, j);
            if b > mu_block {
                mu_block = b;
                block_argmax_pair = (i, j);
            }
        }
    }
    Ok(CoherenceReport {
        mu,
        argmax_pair,
        mu_block,
        block_argmax_pair,
    })
}

/// Diagnostic correlation contribution of each block in a composite signal
/// (the magnitude of the per-user accumulation (1/L) sum_l [sum_i x_i(l)
/// <B_j,B_i> + w_j(l)]). Not used by the detection path, which correlates
/// against residuals instead.
pub fn correlation_contribution(
    a: &SensingMatrix,
    blk: &BlockAssignment,
    symbols: &CMatrix,
    noise: Option<&CMatrix>,
) -> Result<Vec<f64>> {
    let n = blk.n_users();
    let l = symbols.ncols();
    if symbols.nrows() != n {
        return Err(Error::Dimension(format!(
            "symbols must have {} rows, got {}",
            n,
            symbols.nrows()
        )));
    }
    if l == 0 || l % blk.d() != 0 {
        return Err(Error::Dimension(format!(
            "symbol count {l} must be a positive multiple of d={}",
            blk.d()
        )));
    }
    if let Some(w) = noise {
        if w.shape() != symbols.shape() {
            return Err(Error::Dimension(format!(
                "noise shape {:?} differs from symbols shape {:?}",
                w.shape(),
                symbols.shape()
            )));
        }
    }
    // Block correlations are symbol-independent; precompute the N x N table.
    let corr = CMatrix::from_fn(n, n, |j, i| {
        C64::new(block_correlation(a, blk, j, i), 0.0)
    });
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for col in 0..l {
            for i in 0..n {
                acc += symbols[(i, col)] * corr[(j, i)];
            }
            if let Some(w) = noise {
                acc += w[(j, col)];
            }
        }
        out.push((acc / l as f64).norm());
    }
    Ok(out)
}

/// User `n`'s block as an M x D matrix with sequences in position order.
pub fn block_columns(a: &SensingMatrix, blk: &BlockAssignment, user: usize) -> CMatrix {
    let m = a.m();
    let d = blk.d();
    CMatrix::from_fn(m, d, |r, p| a.entries()[(r, blk.block(user)[p])])
}

/// Matched-filter despreading of a single user's noiseless frame: recovers
/// symbol `l` as the conjugate inner product of the position sequence with
/// the received column. Exposed for tests and diagnostics.
pub fn despread_column(block_col: &CVector, received_col: nalgebra::DVectorView<'_, C64>) -> C64 {
    block_col.dotc(&received_col)
}
