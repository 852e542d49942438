//! Temporal action detection with discretized boundary prediction.
//!
//! Each snippet of a multi-scale feature pyramid lays out `W` bins toward the
//! start and toward the end of a candidate action. A coarse head classifies
//! which bin holds each boundary, a refinement head regresses the residual from
//! the bin center, and a video-level classifier aggregated over the most
//! confident snippets gates which categories may be reported at all.
//!
//! The crate is organized bottom-up:
//!
//! * [`numkit`]: tensors, temporal convolution and reverse-mode gradients
//! * [`data`]: dataset manifests, prediction files and a synthetic generator
//! * [`msb`]: the multi-scale backbone and flat-index bookkeeping
//! * [`heads`]: the four prediction networks, assembled in [`model`]
//! * [`labels`]: ground-truth assignment
//! * [`losses`]: focal, smooth-L1 and cross-entropy objectives
//! * [`decode`]: inference, score fusion and NMS
//! * [`eval`]: tIoU, AP/mAP and category F1
//! * [`train`]: the deterministic training loop and checkpoints

pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod heads;
pub mod labels;
pub mod losses;
pub mod model;
pub mod msb;
pub mod numkit;
pub mod par;
pub mod train;

pub use error::{Error, Result};
