//! End-to-end orchestration: frame sources, per-mode wiring, sinks, the
//! wire format and benchmarking.

mod annotate;
mod bench;
mod sink;
mod source;
pub mod wire;

pub use annotate::{annotate_frame, RgbImage, GREEN, RED, YELLOW};
pub use bench::{benchmark, BenchReport, StageRow, STAGE_NAMES};
pub use sink::{CsvSink, FramesSink, Sink, SocketSink, CSV_HEADER};
pub use source::{load_frames, open_source, FrameSource};
pub use wire::{decode_message, encode_message, read_message, WireError};

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify_rois, ClassifyError, ToyNet};
use crate::detect::{analyze_pair, DetectError, DetectParams, MotionMask, RoiMotion, StageTimes, TrackResult};
use crate::imgcore::{ImageError, Pyramid, QuadFrame};
use crate::roi::{RoiConfig, ROI_COUNT};
use crate::track::{
    initial_states, motion_verdict, roi_verdict, update_tracking_logged, RoiState, TrackError, TrackParams, Transition,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// How an occupied ROI was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Moving,
    Latched,
}

impl Occupancy {
    pub fn as_str(self) -> &'static str {
        match self {
            Occupancy::Moving => "moving",
            Occupancy::Latched => "latched",
        }
    }
}

/// Classifier output for one ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub class_id: u8,
    pub confidence: f32,
}

/// Per-frame output: occupied ROIs and optional labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub frame_index: u64,
    pub occupied: BTreeMap<usize, Occupancy>,
    pub labels: BTreeMap<usize, Label>,
}

impl FrameVerdict {
    pub fn empty(frame_index: u64) -> Self {
        Self {
            frame_index,
            ..Default::default()
        }
    }

    pub fn is_occupied(&self, roi: usize) -> bool {
        self.occupied.contains_key(&roi)
    }
}

/// Which modules run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Detector only.
    DetectOnly,
    /// Detector plus stopped-object latch.
    DetectTrack,
    /// Classifier on all twelve ROIs every frame, no detector.
    ClassifyOnly,
    /// Detector, latch and classifier on the occupied ROIs.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::DetectOnly, Mode::DetectTrack, Mode::ClassifyOnly, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::DetectOnly => "detect",
            Mode::DetectTrack => "detect-track",
            Mode::ClassifyOnly => "classify",
            Mode::Full => "full",
        }
    }

    pub fn detects(self) -> bool {
        self != Mode::ClassifyOnly
    }

    pub fn classifies(self) -> bool {
        matches!(self, Mode::ClassifyOnly | Mode::Full)
    }

    /// Whether the latch runs unless overridden.
    pub fn default_tracking(self) -> bool {
        matches!(self, Mode::DetectTrack | Mode::Full)
    }
}

/// Everything that parameterises a run besides the ROI layout and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub mode: Mode,
    pub tracking: bool,
    pub detect: DetectParams,
    pub track: TrackParams,
}

impl Settings {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            tracking: mode.default_tracking(),
            detect: DetectParams::default(),
            track: TrackParams::default(),
        }
    }
}

/// Wall-clock time of every stage for one frame pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimes {
    pub detect: StageTimes,
    pub tracking: Duration,
    pub classification: Duration,
}

impl StepTimes {
    pub fn total(&self) -> Duration {
        let d = &self.detect;
        d.diff + d.wise_multiply + d.features + d.optical_flow + self.tracking + self.classification
    }
}

/// Output of one [`Session::step`].
#[derive(Debug, Clone)]
pub struct Step {
    pub verdict: FrameVerdict,
    pub motions: Vec<RoiMotion>,
    pub tracks: Vec<TrackResult>,
    pub mask: Option<MotionMask>,
    pub transitions: Vec<Transition>,
    pub times: StepTimes,
    pub forward_passes: usize,
}

/// Stateful frame-by-frame processor. Feed consecutive frames; every frame
/// after the first yields a verdict.
#[derive(Debug)]
pub struct Session {
    config: RoiConfig,
    settings: Settings,
    net: Option<ToyNet>,
    prev: Option<QuadFrame>,
    prev_pyramid: Option<Pyramid>,
    states: Vec<RoiState>,
    forward_passes: usize,
}

impl Session {
    pub fn new(config: RoiConfig, settings: Settings, net: Option<ToyNet>) -> Result<Self, PipelineError> {
        settings.detect.validate()?;
        settings.track.validate()?;
        if settings.mode.classifies() && net.is_none() {
            return Err(PipelineError::Config(format!(
                "mode {} needs classifier weights",
                settings.mode.name()
            )));
        }
        if let Some(n) = &net {
            if n.num_classes() > 256 {
                return Err(PipelineError::Config("class ids must fit in a byte".into()));
            }
        }
        Ok(Self {
            config,
            settings,
            net,
            prev: None,
            prev_pyramid: None,
            states: initial_states(),
            forward_passes: 0,
        })
    }

    pub fn config(&self) -> &RoiConfig {
        &self.config
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn states(&self) -> &[RoiState] {
        &self.states
    }

    /// Class names of the loaded classifier, empty without one.
    pub fn class_names(&self) -> Vec<String> {
        self.net.as_ref().map(|n| n.labels().to_vec()).unwrap_or_default()
    }

    /// Classifier forward passes so far.
    pub fn forward_passes(&self) -> usize {
        self.forward_passes
    }

    /// Processes one frame; returns the verdict for it, or `None` for the
    /// first frame of the session.
    pub fn push(&mut self, frame: QuadFrame) -> Result<Option<FrameVerdict>, PipelineError> {
        Ok(self.step(frame)?.map(|s| s.verdict))
    }

    /// Like [`Session::push`] with intermediate results and timings.
    pub fn step(&mut self, frame: QuadFrame) -> Result<Option<Step>, PipelineError> {
        let (w, h) = (frame.image.width(), frame.image.height());
        if (w, h) != (self.config.frame_width(), self.config.frame_height()) {
            return Err(DetectError::ConfigMismatch {
                config: (self.config.frame_width(), self.config.frame_height()),
                frame: (w, h),
            }
            .into());
        }
        let Some(prev) = self.prev.take() else {
            self.prev = Some(frame);
            return Ok(None);
        };
        if frame.frame_index != prev.frame_index + 1 {
            let err = DetectError::NonConsecutive {
                prev: prev.frame_index,
                cur: frame.frame_index,
            };
            self.prev = Some(prev);
            return Err(err.into());
        }
        let s = &self.settings;
        let mut times = StepTimes::default();
        let index = frame.frame_index;
        let (mut verdict, motions, tracks, mask, transitions) = if s.mode.detects() {
            let a = analyze_pair(&prev, &frame, self.prev_pyramid.take(), &self.config, &s.detect)?;
            times.detect = a.times;
            let t = Instant::now();
            let (verdict, transitions) = if s.tracking {
                let (states, log) = update_tracking_logged(
                    &self.states,
                    &a.motions,
                    &a.tracks,
                    &self.config,
                    &a.prev_pyramid,
                    &a.cur_pyramid,
                    &s.track,
                    &s.detect,
                    index,
                )?;
                self.states = states;
                (roi_verdict(&self.states, index), log)
            } else {
                (motion_verdict(&a.motions, index), Vec::new())
            };
            times.tracking = t.elapsed();
            self.prev_pyramid = Some(a.cur_pyramid);
            (verdict, a.motions, a.tracks, Some(a.mask), transitions)
        } else {
            (FrameVerdict::empty(index), Vec::new(), Vec::new(), None, Vec::new())
        };

        let mut forward_passes = 0;
        if let (true, Some(net)) = (s.mode.classifies(), &self.net) {
            let t = Instant::now();
            let selected: BTreeSet<usize> = if s.mode == Mode::ClassifyOnly {
                (0..ROI_COUNT).collect()
            } else {
                verdict.occupied.keys().copied().collect()
            };
            verdict.labels = classify_rois(net, &frame, &self.config, &selected)?;
            forward_passes = selected.len();
            if s.mode == Mode::ClassifyOnly {
                // occupancy from the classifier: anything but the empty class
                let empty = net.labels().iter().position(|n| n == "empty");
                for (&i, l) in &verdict.labels {
                    if Some(l.class_id as usize) != empty {
                        verdict.occupied.insert(i, Occupancy::Moving);
                    }
                }
            }
            times.classification = t.elapsed();
        }
        self.forward_passes += forward_passes;
        self.prev = Some(frame);
        Ok(Some(Step {
            verdict,
            motions,
            tracks,
            mask,
            transitions,
            times,
            forward_passes,
        }))
    }
}

/// Totals of a pipeline run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub verdicts: usize,
    pub forward_passes: usize,
    pub processing: Duration,
}

/// Streams frames through a session into the sinks. On a source or sink
/// error the sinks are flushed before the error is returned.
pub fn run_pipeline(
    source: impl IntoIterator<Item = Result<QuadFrame, ImageError>>,
    session: &mut Session,
    sinks: &mut [Box<dyn Sink>],
    mut on_step: impl FnMut(&QuadFrame, &Step) -> Result<(), PipelineError>,
) -> Result<RunSummary, PipelineError> {
    let mut summary = RunSummary::default();
    let result: Result<(), PipelineError> = (|| {
        for frame in source {
            let frame = frame?;
            summary.frames += 1;
            let keep = frame.clone();
            let t = Instant::now();
            let step = session.step(frame)?;
            summary.processing += t.elapsed();
            if let Some(step) = step {
                on_step(&keep, &step)?;
                for sink in sinks.iter_mut() {
                    sink.emit(&keep, &step.verdict)?;
                }
                summary.verdicts += 1;
                summary.forward_passes += step.forward_passes;
            }
        }
        Ok(())
    })();
    let flushed: Result<(), PipelineError> = sinks.iter_mut().try_for_each(|s| s.finish().map_err(Into::into));
    result?;
    flushed?;
    Ok(summary)
}

/// Runs `f` on a dedicated rayon pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
