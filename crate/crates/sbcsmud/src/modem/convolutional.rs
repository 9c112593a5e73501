//! Rate-1/2 terminated convolutional code with a seeded random interleaver
//! and a hard-decision Viterbi decoder.
//!
//! Generator taps are kept as bitmasks whose most significant bit (bit
//! `constraint_length - 1`) multiplies the current input bit, so the octal
//! literals 0o133 and 0o171 read MSB-first as in the usual tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Rate-1/2 code plus interleaver parameters for one frame size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodecConfig {
    pub constraint_length: usize,
    /// Two generator taps, bitmask form (write them as octal literals).
    pub generator_polynomials: (u32, u32),
    pub interleaver_seed: u64,
    /// Info bits per frame (L_c).
    pub info_bits_per_frame: usize,
}

impl CodecConfig {
    /// The de-facto standard rate-1/2 code: K=7, generators (133, 171) octal.
    pub fn standard(info_bits_per_frame: usize, interleaver_seed: u64) -> Self {
        Self {
            constraint_length: 7,
            generator_polynomials: (0o133, 0o171),
            interleaver_seed,
            info_bits_per_frame,
        }
    }

    /// Coded bits per frame after termination: 2 (L_c + K - 1).
    pub fn coded_len(&self) -> usize {
        2 * (self.info_bits_per_frame + self.constraint_length - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.constraint_length;
        if !(2..=16).contains(&k) {
            return Err(Error::Config(format!(
                "constraint length {k} outside supported range 2..=16"
            )));
        }
        let (g1, g2) = self.generator_polynomials;
        for g in [g1, g2] {
            if g == 0 || g >= (1 << k) {
                return Err(Error::Config(format!(
                    "generator {g:#o} does not fit constraint length {k}"
                )));
            }
        }
        if self.info_bits_per_frame == 0 {
            return Err(Error::Config("info_bits_per_frame must be >= 1".into()));
        }
        Ok(())
    }
}

fn ensure_bits(bits: &[u8]) -> Result<()> {
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::Domain("bit vectors must contain only 0 and 1".into()));
    }
    Ok(())
}

fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Fisher-Yates permutation of 0..len, deterministic in the seed.
pub fn interleaver_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Encode one frame: append K-1 zero tail bits, run the rate-1/2 encoder
/// from the all-zero state, then interleave. Output length is
/// 2 (L_c + K - 1).
pub fn encode_frame(info_bits: &[u8], cfg: &CodecConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    if info_bits.len() != cfg.info_bits_per_frame {
        return Err(Error::Domain(format!(
            "expected {} info bits, got {}",
            cfg.info_bits_per_frame,
            info_bits.len()
        )));
    }
    ensure_bits(info_bits)?;

    let k = cfg.constraint_length;
    let (g1, g2) = cfg.generator_polynomials;
    let steps = info_bits.len() + k - 1;
    let mut coded = Vec::with_capacity(2 * steps);
    // `window` holds the current bit at bit k-1 and older bits below it.
    let mut window: u32 = 0;
    for t in 0..steps {
        let b = if t < info_bits.len() {
            info_bits[t] as u32
        } else {
            0
        };
        window = (window >> 1) | (b << (k - 1));
        coded.push(parity(window & g1));
        coded.push(parity(window & g2));
    }

    let perm = interleaver_permutation(coded.len(), cfg.interleaver_seed);
    Ok(perm.iter().map(|&p| coded[p]).collect())
}

/// Deinterleave and run terminated hard-decision Viterbi; returns the L_c
/// info bits. Input length must equal `cfg.coded_len()`.
pub fn viterbi_decode(coded_bits: &[u8], cfg: &CodecConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    if coded_bits.len() != cfg.coded_len() {
        return Err(Error::Domain(format!(
            "expected {} coded bits, got {}",
            cfg.coded_len(),
            coded_bits.len()
        )));
    }
    ensure_bits(coded_bits)?;

    let perm = interleaver_permutation(coded_bits.len(), cfg.interleaver_seed);
    let mut deint = vec![0u8; coded_bits.len()];
    for (i, &p) in perm.iter().enumerate() {
        deint[p] = coded_bits[i];
    }

    let k = cfg.constraint_length;
    let (g1, g2) = cfg.generator_polynomials;
    let n_states = 1usize << (k - 1);
    let state_mask = (n_states - 1) as u32;
    let steps = cfg.info_bits_per_frame + k - 1;

    const INF: u32 = u32::MAX / 2;
    let mut metric = vec![INF; n_states];
    metric[0] = 0; // encoder starts zeroed
    let mut next_metric = vec![INF; n_states];
    // Survivor windows: chosen k-bit input window per (step, next state).
    let mut survivors = vec![0u32; steps * n_states];

    for t in 0..steps {
        let (r1, r2) = (deint[2 * t] as u32, deint[2 * t + 1] as u32);
        next_metric.fill(INF);
        for ns in 0..n_states {
            let mut best = INF;
            let mut best_window = 0u32;
            for lost in 0..2u32 {
                let window = ((ns as u32) << 1) | lost;
                let prev = (window & state_mask) as usize;
                if metric[prev] >= INF {
                    continue;
                }
                let cost = (parity(window & g1) as u32 ^ r1)
                    + (parity(window & g2) as u32 ^ r2);
                let cand = metric[prev] + cost;
                if cand < best {
                    best = cand;
                    best_window = window;
                }
            }
            next_metric[ns] = best;
            survivors[t * n_states + ns] = best_window;
        }
        std::mem::swap(&mut metric, &mut next_metric);
    }

    // Terminated code: trace back from the all-zero state.
    let mut bits = vec![0u8; steps];
    let mut state = 0usize;
    for t in (0..steps).rev() {
        let window = survivors[t * n_states + state];
        bits[t] = (window >> (k - 1)) as u8;
        state = (window & state_mask) as usize;
    }
    bits.truncate(cfg.info_bits_per_frame);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(l_c: usize) -> CodecConfig {
        CodecConfig::standard(l_c, 0xC0DE)
    }

    fn deinterleaved(coded: &[u8], c: &CodecConfig) -> Vec<u8> {
        let perm = interleaver_permutation(coded.len(), c.interleaver_seed);
        let mut out = vec![0u8; coded.len()];
        for (i, &p) in perm.iter().enumerate() {
            out[p] = coded[i];
        }
        out
    }

    #[test]
    fn validates_config() {
        let mut c = cfg(8);
        c.constraint_length = 1;
        assert!(c.validate().is_err());
        let mut c = cfg(8);
        c.generator_polynomials = (0o400, 0o171); // needs 9 bits, K=7
        assert!(c.validate().is_err());
        let mut c = cfg(8);
        c.info_bits_per_frame = 0;
        assert!(c.validate().is_err());
        assert!(cfg(100).validate().is_ok());
    }

    #[test]
    fn coded_len_matches_termination() {
        assert_eq!(cfg(100).coded_len(), 212);
        assert_eq!(cfg(16).coded_len(), 44);
    }

    #[test]
    fn zero_frame_encodes_to_zero() {
        let c = cfg(100);
        let coded = encode_frame(&vec![0u8; 100], &c).unwrap();
        assert_eq!(coded.len(), 212);
        assert!(coded.iter().all(|&b| b == 0));
        let decoded = viterbi_decode(&coded, &c).unwrap();
        assert!(decoded.iter().all(|&b| b == 0));
    }

    #[test]
    fn impulse_response_matches_hand_computed_taps() {
        // MSB-first reading of 0o133 = 1011011 and 0o171 = 1111001 gives the
        // per-step output pairs for a single 1 followed by zeros.
        let expected_pairs: [(u8, u8); 7] =
            [(1, 1), (0, 1), (1, 1), (1, 1), (0, 0), (1, 0), (1, 1)];
        let c = cfg(16);
        let mut info = vec![0u8; 16];
        info[0] = 1;
        let coded = encode_frame(&info, &c).unwrap();
        let flat = deinterleaved(&coded, &c);
        for (t, &(e1, e2)) in expected_pairs.iter().enumerate() {
            assert_eq!(flat[2 * t], e1, "g1 output at step {t}");
            assert_eq!(flat[2 * t + 1], e2, "g2 output at step {t}");
        }
        // The 1 has left the register after K steps; all later outputs are 0.
        assert!(flat[14..].iter().all(|&b| b == 0));
    }

    #[test]
    fn interleaver_is_a_bijection_and_deterministic() {
        let perm = interleaver_permutation(212, 7);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..212).collect::<Vec<_>>());
        assert_eq!(perm, interleaver_permutation(212, 7));
        assert_ne!(perm, interleaver_permutation(212, 8));
    }

    #[test]
    fn interleaver_actually_scrambles() {
        let c = cfg(100);
        let mut info = vec![0u8; 100];
        info[0] = 1;
        let coded = encode_frame(&info, &c).unwrap();
        let flat = deinterleaved(&coded, &c);
        assert_ne!(coded, flat);
    }

    #[test]
    fn roundtrip_random_frames() {
        let c = cfg(100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let info: Vec<u8> = (0..100).map(|_| rng.random_range(0..2u8)).collect();
            let coded = encode_frame(&info, &c).unwrap();
            assert_eq!(viterbi_decode(&coded, &c).unwrap(), info);
        }
    }

    #[test]
    fn roundtrip_exhaustive_8_bit_frames() {
        let c = cfg(8);
        for word in 0u32..(1 << 8) {
            let info: Vec<u8> = (0..8).map(|i| ((word >> i) & 1) as u8).collect();
            let coded = encode_frame(&info, &c).unwrap();
            assert_eq!(viterbi_decode(&coded, &c).unwrap(), info, "word {word}");
        }
    }

    /// Maximum-likelihood reference: enumerate every candidate info frame and
    /// pick the codeword closest in Hamming distance.
    fn exhaustive_ml(coded: &[u8], c: &CodecConfig) -> Vec<u8> {
        let l = c.info_bits_per_frame;
        let mut best = (usize::MAX, Vec::new());
        for word in 0u32..(1u32 << l) {
            let info: Vec<u8> = (0..l).map(|i| ((word >> i) & 1) as u8).collect();
            let cand = encode_frame(&info, c).unwrap();
            let dist = cand
                .iter()
                .zip(coded)
                .filter(|(a, b)| a != b)
                .count();
            if dist < best.0 {
                best = (dist, info);
            }
        }
        best.1
    }

    #[test]
    fn single_bit_errors_match_exhaustive_trellis_search() {
        let c = cfg(12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let info: Vec<u8> = (0..12).map(|_| rng.random_range(0..2u8)).collect();
        let coded = encode_frame(&info, &c).unwrap();
        for flip in 0..coded.len() {
            let mut noisy = coded.clone();
            noisy[flip] ^= 1;
            let viterbi = viterbi_decode(&noisy, &c).unwrap();
            assert_eq!(viterbi, info, "flip at {flip} not corrected");
            assert_eq!(viterbi, exhaustive_ml(&noisy, &c), "flip at {flip}");
        }
    }

    #[test]
    fn triple_bit_errors_match_exhaustive_trellis_search() {
        // Beyond guaranteed correction: Viterbi must still return the ML frame.
        let c = cfg(10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let info: Vec<u8> = (0..10).map(|_| rng.random_range(0..2u8)).collect();
            let mut noisy = encode_frame(&info, &c).unwrap();
            for _ in 0..3 {
                let pos = rng.random_range(0..noisy.len());
                noisy[pos] ^= 1;
            }
            let ml = exhaustive_ml(&noisy, &c);
            let got = viterbi_decode(&noisy, &c).unwrap();
            let coded_ml = encode_frame(&ml, &c).unwrap();
            let coded_got = encode_frame(&got, &c).unwrap();
            let dist = |x: &[u8]| x.iter().zip(&noisy).filter(|(a, b)| a != b).count();
            assert_eq!(dist(&coded_got), dist(&coded_ml));
        }
    }

    #[test]
    fn rejects_bad_lengths_and_values() {
        let c = cfg(100);
        assert!(matches!(
            encode_frame(&vec![0u8; 99], &c),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            viterbi_decode(&vec![0u8; 211], &c),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            encode_frame(&vec![2u8; 100], &c),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn alternate_polynomials_still_roundtrip() {
        let c = CodecConfig {
            constraint_length: 3,
            generator_polynomials: (0o7, 0o5),
            interleaver_seed: 9,
            info_bits_per_frame: 40,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let info: Vec<u8> = (0..40).map(|_| rng.random_range(0..2u8)).collect();
            let coded = encode_frame(&info, &c).unwrap();
            assert_eq!(coded.len(), 2 * 42);
            assert_eq!(viterbi_decode(&coded, &c).unwrap(), info);
        }
    }
}
