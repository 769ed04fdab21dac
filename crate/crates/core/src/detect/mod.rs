//! Per-frame moving-object detection: adjacent-frame differencing, masked
//! FAST keypoints, sparse pyramidal Lucas-Kanade and per-ROI resultant
//! thresholding.

mod brief;
mod diff;
mod fast;
mod lk;

pub use brief::{compute_brief, smooth_for_brief, Descriptor, BRIEF_BORDER, BRIEF_PATTERN_SEED};
pub use diff::{dilate_mask, frame_diff, mask_apply, MotionMask};
pub use fast::{detect_keypoints, orientation};
pub use lk::{lk_track, track_positions, PointTrack};

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{build_pyramid, to_float, Pyramid, QuadFrame};
use crate::roi::{RoiConfig, ROI_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("image size mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid detector parameter: {0}")]
    InvalidParams(&'static str),
    #[error("frames {prev} -> {cur} are not consecutive")]
    NonConsecutive { prev: u64, cur: u64 },
    #[error("roi config is for {config:?}, frame is {frame:?}")]
    ConfigMismatch {
        config: (usize, usize),
        frame: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub diff_threshold: u8,
    pub mask_dilation_radius: usize,
    pub fast_threshold: u8,
    pub max_features_per_roi: usize,
    pub lk_window: usize,
    pub lk_levels: usize,
    pub lk_max_iters: usize,
    pub lk_epsilon: f32,
    /// Minimum normalised eigenvalue of the gradient matrix.
    pub lk_min_eigen: f32,
    /// Mean absolute window error above which a track is lost.
    pub lk_max_residual: f32,
    pub motion_threshold: f64,
    pub min_features: usize,
    /// Threshold the mean displacement instead of the raw vector sum.
    pub motion_normalize: bool,
    /// Attach BRIEF descriptors to extracted keypoints.
    pub descriptors: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            diff_threshold: 25,
            mask_dilation_radius: 2,
            fast_threshold: 20,
            max_features_per_roi: 50,
            lk_window: 21,
            lk_levels: 3,
            lk_max_iters: 30,
            lk_epsilon: 0.01,
            lk_min_eigen: 1e-4,
            lk_max_residual: 20.0,
            motion_threshold: 6.0,
            min_features: 3,
            motion_normalize: false,
            descriptors: false,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.lk_window < 5 || self.lk_window % 2 == 0 {
            return Err(DetectError::InvalidParams("lk_window must be odd and >= 5"));
        }
        if self.lk_levels == 0 || self.lk_max_iters == 0 {
            return Err(DetectError::InvalidParams("lk_levels and lk_max_iters must be positive"));
        }
        if self.diff_threshold == 0 || self.fast_threshold == 0 {
            return Err(DetectError::InvalidParams("intensity thresholds must be positive"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lk_epsilon as f64)
            || !positive(self.lk_min_eigen as f64)
            || !positive(self.lk_max_residual as f64)
            || !positive(self.motion_threshold)
        {
            return Err(DetectError::InvalidParams("float thresholds must be finite and positive"));
        }
        if self.min_features == 0 || self.max_features_per_roi == 0 {
            return Err(DetectError::InvalidParams("feature counts must be positive"));
        }
        Ok(())
    }
}

/// Sub-pixel keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    pub x: f32,
    pub y: f32,
    pub score: f32,
    pub angle: f32,
    pub descriptor: Option<Descriptor>,
}

impl FeaturePoint {
    pub fn at(x: f32, y: f32) -> Self {
        Self {
            x,
            y,
            score: 0.0,
            angle: 0.0,
            descriptor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Converged,
    Lost,
    OutOfBounds,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Converged => "converged",
            TrackStatus::Lost => "lost",
            TrackStatus::OutOfBounds => "out_of_bounds",
        }
    }
}

/// One LK track. `tracked_*` is meaningful only when converged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub origin: FeaturePoint,
    pub tracked_x: f32,
    pub tracked_y: f32,
    pub status: TrackStatus,
    pub residual: f32,
}

impl TrackResult {
    pub fn displacement(&self) -> (f64, f64) {
        (
            self.tracked_x as f64 - self.origin.x as f64,
            self.tracked_y as f64 - self.origin.y as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiMotion {
    pub roi_index: usize,
    /// Vector sum of displacements of converged tracks originating in the ROI.
    pub resultant: [f64; 2],
    pub feature_count: usize,
    pub active: bool,
}

impl RoiMotion {
    pub fn magnitude(&self) -> f64 {
        self.resultant[0].hypot(self.resultant[1])
    }

    /// Re-evaluates the activation rule from this record's own fields.
    pub fn satisfies(&self, params: &DetectParams) -> bool {
        let mag = if params.motion_normalize && self.feature_count > 0 {
            self.magnitude() / self.feature_count as f64
        } else {
            self.magnitude()
        };
        self.feature_count >= params.min_features && mag >= params.motion_threshold
    }
}

/// Sums displacement vectors per ROI. Tracks are assigned by their origin;
/// the sum runs in ascending track order.
pub fn aggregate_roi(tracks: &[TrackResult], config: &RoiConfig, params: &DetectParams) -> Vec<RoiMotion> {
    let mut out: Vec<RoiMotion> = (0..ROI_COUNT)
        .map(|i| RoiMotion {
            roi_index: i,
            resultant: [0.0, 0.0],
            feature_count: 0,
            active: false,
        })
        .collect();
    for t in tracks.iter().filter(|t| t.status == TrackStatus::Converged) {
        if let Some(i) = config.locate(t.origin.x, t.origin.y) {
            let (dx, dy) = t.displacement();
            let m = &mut out[i];
            m.resultant[0] += dx;
            m.resultant[1] += dy;
            m.feature_count += 1;
        }
    }
    for m in &mut out {
        m.active = m.satisfies(params);
    }
    out
}

/// Wall-clock time of the four detection stages for one frame pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub diff: Duration,
    pub wise_multiply: Duration,
    pub features: Duration,
    pub optical_flow: Duration,
}

/// Everything the detector computes for one frame pair.
#[derive(Debug, Clone)]
pub struct PairAnalysis {
    pub motions: Vec<RoiMotion>,
    pub tracks: Vec<TrackResult>,
    pub mask: MotionMask,
    pub prev_pyramid: Pyramid,
    pub cur_pyramid: Pyramid,
    pub times: StageTimes,
}

/// Runs the detector on a frame pair, reusing `prev_pyramid` when given
/// (it must have been built from `prev` with the same parameters).
pub fn analyze_pair(
    prev: &QuadFrame,
    cur: &QuadFrame,
    prev_pyramid: Option<Pyramid>,
    config: &RoiConfig,
    params: &DetectParams,
) -> Result<PairAnalysis, DetectError> {
    params.validate()?;
    let (w, h) = (cur.image.width(), cur.image.height());
    if (config.frame_width(), config.frame_height()) != (w, h) {
        return Err(DetectError::ConfigMismatch {
            config: (config.frame_width(), config.frame_height()),
            frame: (w, h),
        });
    }
    let mut times = StageTimes::default();

    let t = Instant::now();
    let raw = frame_diff(&prev.image, &cur.image, params.diff_threshold)?;
    let mask = dilate_mask(&raw, params.mask_dilation_radius);
    times.diff = t.elapsed();

    let t = Instant::now();
    let masked = mask_apply(&prev.image, &mask)?;
    times.wise_multiply = t.elapsed();

    let t = Instant::now();
    let smoothed = params.descriptors.then(|| smooth_for_brief(&masked));
    let per_roi: Vec<Vec<FeaturePoint>> = config
        .rois()
        .par_iter()
        .map(|roi| {
            let mut kp = detect_keypoints(&masked, &mask, roi, params);
            if let Some(s) = &smoothed {
                for p in &mut kp {
                    p.descriptor = compute_brief(s, p);
                }
            }
            kp
        })
        .collect();
    let points: Vec<FeaturePoint> = per_roi.into_iter().flatten().collect();
    times.features = t.elapsed();

    let t = Instant::now();
    let prev_pyramid = match prev_pyramid {
        Some(p) => p,
        None => build_pyramid(&to_float(&prev.image), params.lk_levels),
    };
    let cur_pyramid = build_pyramid(&to_float(&cur.image), params.lk_levels);
    let tracks = lk_track(&prev_pyramid, &cur_pyramid, &points, params);
    let motions = aggregate_roi(&tracks, config, params);
    times.optical_flow = t.elapsed();

    Ok(PairAnalysis {
        motions,
        tracks,
        mask,
        prev_pyramid,
        cur_pyramid,
        times,
    })
}

/// Detector on two consecutive quad frames: per-ROI motion plus raw tracks.
pub fn detect_frame(
    prev: &QuadFrame,
    cur: &QuadFrame,
    config: &RoiConfig,
    params: &DetectParams,
) -> Result<(Vec<RoiMotion>, Vec<TrackResult>), DetectError> {
    if cur.frame_index != prev.frame_index + 1 {
        return Err(DetectError::NonConsecutive {
            prev: prev.frame_index,
            cur: cur.frame_index,
        });
    }
    let a = analyze_pair(prev, cur, None, config, params)?;
    Ok((a.motions, a.tracks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::default_config;
    use proptest::prelude::*;

    fn track(x: f32, y: f32, dx: f32, dy: f32, status: TrackStatus) -> TrackResult {
        TrackResult {
            origin: FeaturePoint::at(x, y),
            tracked_x: x + dx,
            tracked_y: y + dy,
            status,
            residual: 0.0,
        }
    }

    #[test]
    fn params_validation() {
        assert!(DetectParams::default().validate().is_ok());
        let bad = DetectParams { lk_window: 20, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DetectParams { lk_window: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DetectParams { motion_threshold: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn aggregate_empty() {
        let c = default_config(1280, 720).unwrap();
        let m = aggregate_roi(&[], &c, &DetectParams::default());
        assert_eq!(m.len(), 12);
        assert!(m.iter().all(|m| !m.active && m.resultant == [0.0, 0.0] && m.feature_count == 0));
    }

    #[test]
    fn aggregate_sums_in_roi_three() {
        let c = default_config(1280, 720).unwrap();
        let r = c.roi(3).rect();
        let tracks: Vec<_> = (0..5)
            .map(|i| track((r.x + 10 + 7 * i) as f32, (r.y + 20) as f32, 2.0, 0.0, TrackStatus::Converged))
            .collect();
        let m = aggregate_roi(&tracks, &c, &DetectParams::default());
        assert_eq!(m[3].resultant, [10.0, 0.0]);
        assert_eq!(m[3].feature_count, 5);
        assert!(m[3].active);
        assert!(m.iter().enumerate().all(|(i, m)| i == 3 || !m.active));
    }

    #[test]
    fn aggregate_cancellation_and_status_filter() {
        let c = default_config(1280, 720).unwrap();
        let r = c.roi(0).rect();
        let (x, y) = ((r.x + 50) as f32, (r.y + 50) as f32);
        let tracks = vec![
            track(x, y, 3.0, 0.0, TrackStatus::Converged),
            track(x + 1.0, y, -3.0, 0.0, TrackStatus::Converged),
            track(x + 2.0, y, 3.0, 0.0, TrackStatus::Converged),
            track(x + 3.0, y, -3.0, 0.0, TrackStatus::Converged),
            track(x + 4.0, y, 30.0, 0.0, TrackStatus::Lost),
        ];
        let m = aggregate_roi(&tracks, &c, &DetectParams::default());
        assert_eq!(m[0].resultant, [0.0, 0.0]);
        assert_eq!(m[0].feature_count, 4);
        assert!(!m[0].active);
    }

    #[test]
    fn aggregate_assigns_by_origin() {
        let c = default_config(1280, 720).unwrap();
        let r = c.roi(1).rect();
        // origins just inside roi 1's right edge, endpoints inside roi 2
        let tracks: Vec<_> = (0..4)
            .map(|i| track((r.x + r.w - 1) as f32, (r.y + 10 + i) as f32, 5.0, 0.0, TrackStatus::Converged))
            .collect();
        let m = aggregate_roi(&tracks, &c, &DetectParams::default());
        assert_eq!(m[1].feature_count, 4);
        assert_eq!(m[2].feature_count, 0);
    }

    #[test]
    fn normalized_threshold() {
        let c = default_config(1280, 720).unwrap();
        let r = c.roi(5).rect();
        let tracks: Vec<_> = (0..10)
            .map(|i| track((r.x + 10 + i) as f32, (r.y + 10) as f32, 1.0, 0.0, TrackStatus::Converged))
            .collect();
        let raw = aggregate_roi(&tracks, &c, &DetectParams::default());
        assert!(raw[5].active);
        let norm = aggregate_roi(&tracks, &c, &DetectParams { motion_normalize: true, ..Default::default() });
        assert!(!norm[5].active);
    }

    fn arb_tracks() -> impl Strategy<Value = Vec<TrackResult>> {
        proptest::collection::vec(
            (1.0f32..1279.0, 1.0f32..719.0, -9.0f32..9.0, -9.0f32..9.0, 0u8..4),
            0..80,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, dx, dy, s)| {
                    let status = if s == 0 { TrackStatus::Lost } else { TrackStatus::Converged };
                    track(x, y, dx, dy, status)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregate_additive_and_permutation_invariant(tracks in arb_tracks(), split in 0usize..80, rot in 0usize..80) {
            let c = default_config(1280, 720).unwrap();
            let p = DetectParams::default();
            let whole = aggregate_roi(&tracks, &c, &p);
            let k = split.min(tracks.len());
            let a = aggregate_roi(&tracks[..k], &c, &p);
            let b = aggregate_roi(&tracks[k..], &c, &p);
            for i in 0..12 {
                prop_assert_eq!(whole[i].resultant[0], a[i].resultant[0] + b[i].resultant[0]);
                prop_assert_eq!(whole[i].resultant[1], a[i].resultant[1] + b[i].resultant[1]);
                prop_assert_eq!(whole[i].feature_count, a[i].feature_count + b[i].feature_count);
                prop_assert_eq!(whole[i].active, whole[i].satisfies(&p));
            }
            let mut permuted = tracks.clone();
            if !permuted.is_empty() {
                let r = rot % permuted.len();
                permuted.rotate_left(r);
                permuted.reverse();
            }
            prop_assert_eq!(aggregate_roi(&permuted, &c, &p), whole);
        }
    }
}
