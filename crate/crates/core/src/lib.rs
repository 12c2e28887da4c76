//! Retinal vessel segmentation with a dilated encoder-decoder network,
//! vessel width estimation from the predicted masks, and evaluation tooling.

pub mod cli;
pub mod dataio;
pub mod gradcore;
pub mod mask;
pub mod metrics;
pub mod morphometry;
pub mod preprocess;
pub mod vesselnet;
