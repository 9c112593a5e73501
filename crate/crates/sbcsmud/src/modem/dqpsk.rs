//! DQPSK mapping between coded bits and unit-modulus symbol frames.
//!
//! Bit pairs Gray-code to quadrant increments; symbols accumulate increments
//! starting from the reference 1+0j. The accumulated quadrant is kept as an
//! integer so every emitted symbol is exactly one of {1, j, -1, -j}, and the
//! trailing pad (repeats of the last symbol, zero increment) only rounds the
//! frame length up to a multiple of the block size.

use crate::error::{Error, Result};
use crate::{C64, CVector};

const QUADRANT: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 1.0),
    C64::new(-1.0, 0.0),
    C64::new(0.0, -1.0),
];

/// Gray map: bit pair -> quarter-turn increment.
fn gray_increment(b0: u8, b1: u8) -> usize {
    match (b0, b1) {
        (0, 0) => 0,
        (0, 1) => 1,
        (1, 1) => 2,
        (1, 0) => 3,
        _ => unreachable!("bits validated earlier"),
    }
}

/// Inverse Gray map: quarter-turn increment -> bit pair.
fn gray_bits(q: usize) -> (u8, u8) {
    match q {
        0 => (0, 0),
        1 => (0, 1),
        2 => (1, 1),
        3 => (1, 0),
        _ => unreachable!("quadrant arithmetic is mod 4"),
    }
}

/// One user's modulated frame: reference symbol, payload, trailing pad.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    symbols: CVector,
    l_payload: usize,
    l_pad: usize,
}

impl SymbolFrame {
    /// Wrap an existing layout, checking unit modulus and length bookkeeping.
    pub fn new(symbols: CVector, l_payload: usize, l_pad: usize) -> Result<Self> {
        if symbols.len() != 1 + l_payload + l_pad {
            return Err(Error::Dimension(format!(
                "frame length {} != 1 + {l_payload} + {l_pad}",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if (s.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "symbol {i} has modulus {}, expected 1",
                    s.norm()
                )));
            }
        }
        Ok(Self {
            symbols,
            l_payload,
            l_pad,
        })
    }

    pub fn symbols(&self) -> &CVector {
        &self.symbols
    }

    /// Total frame length L = 1 + payload + pad.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn l_payload(&self) -> usize {
        self.l_payload
    }

    pub fn l_pad(&self) -> usize {
        self.l_pad
    }
}

/// Map coded bits to a DQPSK frame whose length is padded up to a multiple
/// of the block size `d` by repeating the last symbol.
pub fn dqpsk_modulate(coded_bits: &[u8], d: usize) -> Result<SymbolFrame> {
    if d == 0 {
        return Err(Error::Config("block size d must be >= 1".into()));
    }
    if coded_bits.len() % 2 != 0 {
        return Err(Error::Domain(format!(
            "DQPSK needs an even bit count, got {}",
            coded_bits.len()
        )));
    }
    if coded_bits.iter().any(|&b| b > 1) {
        return Err(Error::Domain("bit vectors must contain only 0 and 1".into()));
    }

    let l_payload = coded_bits.len() / 2;
    let raw_len = 1 + l_payload;
    let l_pad = (d - raw_len % d) % d;
    let mut symbols = Vec::with_capacity(raw_len + l_pad);
    let mut quadrant = 0usize;
    symbols.push(QUADRANT[quadrant]);
    for pair in coded_bits.chunks_exact(2) {
        quadrant = (quadrant + gray_increment(pair[0], pair[1])) % 4;
        symbols.push(QUADRANT[quadrant]);
    }
    let last = *symbols.last().expect("frame has at least the reference");
    symbols.extend(std::iter::repeat_n(last, l_pad));

    Ok(SymbolFrame {
        symbols: CVector::from_vec(symbols),
        l_payload,
        l_pad,
    })
}

/// Differentially demodulate symbol estimates with the given frame layout:
/// z_l = est_l conj(est_{l-1}) for the payload positions, nearest quadrant,
/// inverse Gray map. Pad positions are discarded.
pub fn dqpsk_demodulate(estimates: &[C64], l_payload: usize, l_pad: usize) -> Result<Vec<u8>> {
    let expected = 1 + l_payload + l_pad;
    if estimates.len() != expected {
        return Err(Error::Dimension(format!(
            "expected {expected} estimates (1 + {l_payload} + {l_pad}), got {}",
            estimates.len()
        )));
    }
    let mut bits = Vec::with_capacity(2 * l_payload);
    for l in 1..=l_payload {
        let z = estimates[l] * estimates[l - 1].conj();
        // Nearest quadrant by correlation; ties resolve to the lowest index.
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (q, point) in QUADRANT.iter().enumerate() {
            let score = (z * point.conj()).re;
            if score > best_score {
                best_score = score;
                best = q;
            }
        }
        let (b0, b1) = gray_bits(best);
        bits.push(b0);
        bits.push(b1);
    }
    Ok(bits)
}
