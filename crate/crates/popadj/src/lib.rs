//! File formats, the analysis pipeline and the parallel simulation runner
//! around `popadj-core`.

pub mod analysis;
pub mod error;
pub mod io;
pub mod report;
pub mod simulate;

pub use analysis::{run_analysis, AnalysisConfig, AnalysisMethod, ResultDocument};
pub use error::{CliError, Result};
