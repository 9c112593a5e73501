//! Command-line front end for the sbcsmud link simulator: named presets for
//! the standard experiment sweeps, flat-file configs with flag overrides,
//! CSV/JSON emission, and static SVG plots.
//!
//! The CLI is a thin shell over [`sbcsmud::simkit`]; every run it performs is
//! reachable through the library with identical results.

mod plot;
mod presets;
mod run;

pub use plot::render_plot;
pub use presets::FigurePreset;
pub use run::{run_cli, CliError, EXIT_CONFIG, EXIT_IO, EXIT_OK};
