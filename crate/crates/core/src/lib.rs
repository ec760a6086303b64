//! Salient region segmentation.
//!
//! Gaze prediction recast as segmentation: continuous saliency maps are
//! quantized into `K` ordered saliency levels, a small encoder-decoder network
//! is trained on them with median-frequency-balanced cross-entropy, and the
//! outputs are scored with the usual fixation-based saliency metrics.
//!
//! * [`maps`]: fixation, saliency and salient-region maps and the conversions between them
//! * [`io`]: PGM/PNG and fixation CSV files
//! * [`balancing`]: median frequency class weights
//! * [`net`]: tensors, layer kernels with exact backward passes, losses
//! * [`train`]: SGD with a step learning-rate policy, checkpoints, the convergence harness
//! * [`metrics`]: AUC-Judd, shuffled AUC, NSS, classification accuracy
//! * [`viz`]: receptive-field reconstruction for encoder neurons
//! * [`cli`]: the `salseg` command line

pub mod balancing;
pub mod cli;
pub mod error;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod net;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use maps::{FixationMap, SaliencyMap, SalientRegionMap};
