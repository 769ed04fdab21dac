//! Stopped-object latch. Feature points from the last positive detection
//! are kept per ROI; when the detector goes quiet they are re-tracked with a
//! forward-backward check, and the ROI stays occupied while they hold still.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{track_positions, DetectParams, FeaturePoint, RoiMotion, TrackResult, TrackStatus};
use crate::imgcore::Pyramid;
use crate::pipeline::{FrameVerdict, Occupancy};
use crate::roi::{RoiConfig, ROI_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("expected {ROI_COUNT} roi states and motions, got {states} and {motions}")]
    Length { states: usize, motions: usize },
    #[error("state/motion {position} is for roi {state_roi}/{motion_roi}")]
    Misaligned {
        position: usize,
        state_roi: usize,
        motion_roi: usize,
    },
    #[error("invalid tracker parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    Empty,
    Moving,
    StoppedLatched,
}

impl RoiMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoiMode::Empty => "empty",
            RoiMode::Moving => "moving",
            RoiMode::StoppedLatched => "latched",
        }
    }

    pub fn occupancy(self) -> Option<Occupancy> {
        match self {
            RoiMode::Empty => None,
            RoiMode::Moving => Some(Occupancy::Moving),
            RoiMode::StoppedLatched => Some(Occupancy::Latched),
        }
    }
}

impl fmt::Display for RoiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lifecycle of one ROI. Only [`update_tracking`] moves it between modes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiState {
    roi_index: usize,
    mode: RoiMode,
    stored_points: Vec<FeaturePoint>,
    last_positive_frame: Option<u64>,
}

impl RoiState {
    pub fn new(roi_index: usize) -> Self {
        Self {
            roi_index,
            mode: RoiMode::Empty,
            stored_points: Vec::new(),
            last_positive_frame: None,
        }
    }

    pub fn roi_index(&self) -> usize {
        self.roi_index
    }

    pub fn mode(&self) -> RoiMode {
        self.mode
    }

    pub fn stored_points(&self) -> &[FeaturePoint] {
        &self.stored_points
    }

    pub fn last_positive_frame(&self) -> Option<u64> {
        self.last_positive_frame
    }

    fn clear(&mut self) {
        self.mode = RoiMode::Empty;
        self.stored_points.clear();
    }
}

/// Twelve empty states.
pub fn initial_states() -> Vec<RoiState> {
    (0..ROI_COUNT).map(RoiState::new).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    /// Largest survivor resultant (px) still counted as stopped.
    pub latch_motion_max: f64,
    /// Minimum fraction of stored points that must survive re-tracking.
    pub latch_min_survivors: f64,
    /// Largest forward-backward round-trip error (px) of a survivor.
    pub fb_error_max: f32,
    /// Never re-verify a latch; it holds until the detector fires again.
    pub strict_latch: bool,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            latch_motion_max: 1.5,
            latch_min_survivors: 0.5,
            fb_error_max: 1.0,
            strict_latch: false,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.latch_motion_max.is_nan() || self.latch_motion_max < 0.0 {
            return Err(TrackError::InvalidParams("latch_motion_max must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.latch_min_survivors) {
            return Err(TrackError::InvalidParams("latch_min_survivors must be in [0, 1]"));
        }
        if self.fb_error_max.is_nan() || self.fb_error_max <= 0.0 {
            return Err(TrackError::InvalidParams("fb_error_max must be > 0"));
        }
        Ok(())
    }
}

/// A mode change of one ROI, for CSV logging.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub frame: u64,
    pub roi: usize,
    pub old_mode: RoiMode,
    pub new_mode: RoiMode,
    /// Survivors of the latch check, 0 when no check ran.
    pub survivors: usize,
    /// Survivor resultant magnitude, 0 when no check ran.
    pub resultant: f64,
}

pub const TRANSITION_CSV_HEADER: &str = "frame,roi,old_mode,new_mode,survivors,resultant";

impl Transition {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4}",
            self.frame, self.roi, self.old_mode, self.new_mode, self.survivors, self.resultant
        )
    }
}

struct LatchCheck {
    survivors: Vec<FeaturePoint>,
    resultant: f64,
    passed: bool,
}

/// Forward-backward re-tracking of stored points from `prev` to `cur`.
fn verify_latch(
    stored: &[FeaturePoint],
    prev: &Pyramid,
    cur: &Pyramid,
    params: &TrackParams,
    detect: &DetectParams,
) -> LatchCheck {
    let origins: Vec<(f32, f32)> = stored.iter().map(|p| (p.x, p.y)).collect();
    let forward = track_positions(prev, cur, &origins, detect);
    let ends: Vec<(f32, f32)> = forward.iter().map(|t| (t.x, t.y)).collect();
    let backward = track_positions(cur, prev, &ends, detect);
    let mut survivors = Vec::new();
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for ((p, f), b) in stored.iter().zip(&forward).zip(&backward) {
        if f.status != TrackStatus::Converged || b.status != TrackStatus::Converged {
            continue;
        }
        let fb = (b.x - p.x).hypot(b.y - p.y);
        if fb < params.fb_error_max {
            sx += f.x as f64 - p.x as f64;
            sy += f.y as f64 - p.y as f64;
            survivors.push(FeaturePoint {
                x: f.x,
                y: f.y,
                ..p.clone()
            });
        }
    }
    let resultant = sx.hypot(sy);
    let enough = !survivors.is_empty() && survivors.len() as f64 >= params.latch_min_survivors * stored.len() as f64;
    LatchCheck {
        passed: enough && resultant <= params.latch_motion_max,
        survivors,
        resultant,
    }
}

/// Advances every ROI by one frame pair and reports mode changes.
///
/// `tracks` and both pyramids come from the detector run on the same pair;
/// `frame` is the index of the later frame.
#[allow(clippy::too_many_arguments)]
pub fn update_tracking_logged(
    states: &[RoiState],
    motions: &[RoiMotion],
    tracks: &[TrackResult],
    config: &RoiConfig,
    prev: &Pyramid,
    cur: &Pyramid,
    params: &TrackParams,
    detect: &DetectParams,
    frame: u64,
) -> Result<(Vec<RoiState>, Vec<Transition>), TrackError> {
    params.validate()?;
    if states.len() != ROI_COUNT || motions.len() != ROI_COUNT {
        return Err(TrackError::Length {
            states: states.len(),
            motions: motions.len(),
        });
    }
    for (i, (s, m)) in states.iter().zip(motions).enumerate() {
        if s.roi_index != i || m.roi_index != i {
            return Err(TrackError::Misaligned {
                position: i,
                state_roi: s.roi_index,
                motion_roi: m.roi_index,
            });
        }
    }

    let mut fresh: Vec<Vec<FeaturePoint>> = vec![Vec::new(); ROI_COUNT];
    for t in tracks.iter().filter(|t| t.status == TrackStatus::Converged) {
        if let Some(i) = config.locate(t.origin.x, t.origin.y) {
            if motions[i].active {
                fresh[i].push(FeaturePoint {
                    x: t.tracked_x,
                    y: t.tracked_y,
                    ..t.origin.clone()
                });
            }
        }
    }

    let mut out = Vec::with_capacity(ROI_COUNT);
    let mut log = Vec::new();
    for ((state, motion), fresh) in states.iter().zip(motions).zip(fresh) {
        let mut next = state.clone();
        let (mut survivors, mut resultant) = (0, 0.0);
        if motion.active {
            next.mode = RoiMode::Moving;
            next.stored_points = fresh;
            next.last_positive_frame = Some(frame);
        } else {
            match state.mode {
                RoiMode::Empty => {}
                RoiMode::StoppedLatched if params.strict_latch => {}
                RoiMode::Moving | RoiMode::StoppedLatched => {
                    let check = verify_latch(&state.stored_points, prev, cur, params, detect);
                    survivors = check.survivors.len();
                    resultant = check.resultant;
                    if check.passed {
                        next.mode = RoiMode::StoppedLatched;
                        next.stored_points = check.survivors;
                    } else {
                        next.clear();
                    }
                }
            }
        }
        if next.stored_points.is_empty() {
            next.clear();
        }
        if next.mode != state.mode {
            log.push(Transition {
                frame,
                roi: state.roi_index,
                old_mode: state.mode,
                new_mode: next.mode,
                survivors,
                resultant,
            });
        }
        out.push(next);
    }
    Ok((out, log))
}

/// [`update_tracking_logged`] without the transition log.
#[allow(clippy::too_many_arguments)]
pub fn update_tracking(
    states: &[RoiState],
    motions: &[RoiMotion],
    tracks: &[TrackResult],
    config: &RoiConfig,
    prev: &Pyramid,
    cur: &Pyramid,
    params: &TrackParams,
    detect: &DetectParams,
    frame: u64,
) -> Result<Vec<RoiState>, TrackError> {
    update_tracking_logged(states, motions, tracks, config, prev, cur, params, detect, frame).map(|(s, _)| s)
}

/// Occupied ROIs of one frame: those in Moving or StoppedLatched mode.
pub fn roi_verdict(states: &[RoiState], frame_index: u64) -> FrameVerdict {
    let mut v = FrameVerdict::empty(frame_index);
    for s in states {
        if let Some(o) = s.mode.occupancy() {
            v.occupied.insert(s.roi_index, o);
        }
    }
    v
}

/// Verdict from detector output alone, for runs without tracking.
pub fn motion_verdict(motions: &[RoiMotion], frame_index: u64) -> FrameVerdict {
    let mut v = FrameVerdict::empty(frame_index);
    for m in motions.iter().filter(|m| m.active) {
        v.occupied.insert(m.roi_index, Occupancy::Moving);
    }
    v
}
