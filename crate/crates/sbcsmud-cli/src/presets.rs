//! Named sweep presets reproducing the standard experiment grid: DER/BER vs
//! SNR, DER vs activity probability, and DER vs overloading factor, each for
//! block sizes 1 through 4 over the reference uplink (M=20, p_a=0.1, lambda=3
//! for the SNR sweeps; SNR = 10 dB for the activity and overloading sweeps).

use std::str::FromStr;

use sbcsmud::simkit::{SimConfig, SweepAxis};

/// The four canned experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigurePreset {
    /// DER vs SNR, 0..30 dB in 5 dB steps.
    Fig4Der,
    /// Same sweep as [`FigurePreset::Fig4Der`]; the plot highlights BER.
    Fig4BerCompanion,
    /// DER vs activity probability 0.10..0.16 at 10 dB.
    Fig5Pa,
    /// DER vs overloading factor 2..6 at 10 dB.
    Fig6Lambda,
}

pub const PRESET_NAMES: [&str; 4] = ["fig4_der", "fig4_ber_companion", "fig5_pa", "fig6_lambda"];

impl FromStr for FigurePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig4_der" => Ok(FigurePreset::Fig4Der),
            "fig4_ber_companion" => Ok(FigurePreset::Fig4BerCompanion),
            "fig5_pa" => Ok(FigurePreset::Fig5Pa),
            "fig6_lambda" => Ok(FigurePreset::Fig6Lambda),
            other => Err(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            )),
        }
    }
}

impl FigurePreset {
    pub fn name(&self) -> &'static str {
        match self {
            FigurePreset::Fig4Der => "fig4_der",
            FigurePreset::Fig4BerCompanion => "fig4_ber_companion",
            FigurePreset::Fig5Pa => "fig5_pa",
            FigurePreset::Fig6Lambda => "fig6_lambda",
        }
    }

    /// Which rate the corresponding figure reads off; both are always emitted.
    pub fn focus(&self) -> &'static str {
        match self {
            FigurePreset::Fig4BerCompanion => "ber",
            _ => "der",
        }
    }

    /// The frozen sweep: base config, axis, axis values, and block sizes.
    pub fn plan(&self) -> PresetPlan {
        let base = SimConfig::baseline();
        let (axis, values) = match self {
            FigurePreset::Fig4Der | FigurePreset::Fig4BerCompanion => (
                SweepAxis::SnrDb,
                vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            ),
            FigurePreset::Fig5Pa => (SweepAxis::Activity, vec![0.10, 0.12, 0.14, 0.16]),
            FigurePreset::Fig6Lambda => {
                (SweepAxis::Overloading, vec![2.0, 3.0, 4.0, 5.0, 6.0])
            }
        };
        PresetPlan {
            name: self.name(),
            focus: self.focus(),
            axis,
            values,
            block_sizes: vec![1, 2, 3, 4],
            base,
        }
    }
}

/// A fully resolved experiment: one sweep per block size over a shared axis.
#[derive(Debug, Clone)]
pub struct PresetPlan {
    pub name: &'static str,
    pub focus: &'static str,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub base: SimConfig,
}
