//! Gender-bias measurement for text-to-image models.

pub mod detectors;
pub mod gender;
pub mod generation;
pub mod imaging;
pub mod inference;
pub mod prompts;
pub mod groundtruth;
pub mod metrics;
pub mod reference;
pub mod report;
pub mod annoserve;
pub mod cli;
