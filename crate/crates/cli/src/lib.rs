//! IO, file formats, and the command-line pipeline around `tsa-core`:
//! case files, the binary dataset format, model checkpoints, parallel
//! dataset generation, credibility-gated online assessment, and CSV
//! reports.

pub mod assess;
pub mod case_file;
pub mod checkpoint;
pub mod cli;
pub mod dataset_file;
pub mod generate;
pub mod report;

pub use cli::{run, Cli};
