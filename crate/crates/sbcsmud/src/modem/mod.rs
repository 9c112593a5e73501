//! Channel coding and modulation shared by transmitter and receiver.
//!
//! A frame of L_c info bits is convolutionally encoded (rate 1/2,
//! terminated), passed through a seeded random interleaver, and mapped to
//! DQPSK symbols behind a single reference symbol. The receiver inverts the
//! chain with differential demodulation and hard-decision Viterbi decoding.

mod convolutional;
mod dqpsk;

pub use convolutional::{encode_frame, interleaver_permutation, viterbi_decode, CodecConfig};
pub use dqpsk::{dqpsk_demodulate, dqpsk_modulate, SymbolFrame};
