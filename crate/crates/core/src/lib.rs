//! Surround-view moving-object detection for quad-camera frames.
//!
//! Four fisheye views are tiled into one 2x2 frame and watched through 12
//! fixed regions of interest. Per frame pair the detector differences the
//! frames, extracts FAST corners on the changed pixels, tracks them with
//! pyramidal Lucas-Kanade and thresholds the per-ROI resultant motion vector.
//! A latch keeps ROIs occupied after their object stops moving, and a small
//! depthwise-separable CNN labels the occupied ROIs.

pub mod classify;
pub mod detect;
pub mod eval;
pub mod imgcore;
pub mod pipeline;
pub mod roi;
pub mod synth;
pub mod track;

pub use imgcore::{GrayImage, QuadFrame};
pub use pipeline::{FrameVerdict, Mode, Session, Settings};
pub use roi::{Region, RoiConfig};
