//! Occupancy precision/recall over (frame, ROI) cells, class accuracy, and
//! per-mode experiment reports.

use std::fmt;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::classify::ToyNet;
use crate::imgcore::QuadFrame;
use crate::pipeline::{FrameVerdict, PipelineError, Session, Settings};
use crate::roi::{RoiConfig, ROI_COUNT};
use crate::synth::GroundTruth;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{verdicts} verdicts for {truth} truth frames")]
    FrameCount { verdicts: usize, truth: usize },
    #[error("verdict {position} is for frame {verdict}, truth for frame {truth}")]
    FrameMismatch { position: usize, verdict: u64, truth: u64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// tp / (tp + fp), `None` when nothing was predicted.
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// tp / (tp + fn), `None` when the truth has no occupied cells.
    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn merge(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn check_aligned(verdicts: &[FrameVerdict], truth: &GroundTruth) -> Result<(), EvalError> {
    if verdicts.len() != truth.frames.len() {
        return Err(EvalError::FrameCount {
            verdicts: verdicts.len(),
            truth: truth.frames.len(),
        });
    }
    for (i, (v, t)) in verdicts.iter().zip(&truth.frames).enumerate() {
        if v.frame_index != t.frame_index {
            return Err(EvalError::FrameMismatch {
                position: i,
                verdict: v.frame_index,
                truth: t.frame_index,
            });
        }
    }
    Ok(())
}

/// Cell-wise confusion counts. Verdicts and truth frames must pair up by
/// position and frame index.
pub fn score(verdicts: &[FrameVerdict], truth: &GroundTruth) -> Result<ConfusionCounts, EvalError> {
    check_aligned(verdicts, truth)?;
    let mut c = ConfusionCounts::default();
    for (v, t) in verdicts.iter().zip(&truth.frames) {
        for roi in 0..ROI_COUNT {
            match (v.is_occupied(roi), t.occupied(roi)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// Fraction of true-positive cells whose predicted class name matches the
/// truth. Unlabelled true positives count as wrong. `None` without any
/// true-positive cell.
pub fn class_accuracy(
    verdicts: &[FrameVerdict],
    truth: &GroundTruth,
    class_names: &[String],
) -> Result<Option<f64>, EvalError> {
    check_aligned(verdicts, truth)?;
    let (mut hits, mut cells) = (0u64, 0u64);
    for (v, t) in verdicts.iter().zip(&truth.frames) {
        for (roi, cell) in &t.cells {
            if !v.is_occupied(*roi) {
                continue;
            }
            cells += 1;
            let name = v.labels.get(roi).and_then(|l| class_names.get(l.class_id as usize));
            hits += (name == Some(&cell.class)) as u64;
        }
    }
    Ok((cells > 0).then(|| hits as f64 / cells as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: &'static str,
    pub frames: usize,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub class_accuracy: Option<f64>,
    pub forward_passes: usize,
    pub fps: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mode,frames,tp,fp,fn,tn,precision,recall,class_accuracy,forward_passes,fps";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.2}",
            self.mode,
            self.frames,
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.counts.tn,
            opt(self.precision),
            opt(self.recall),
            opt(self.class_accuracy),
            self.forward_passes,
            self.fps
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|v| format!("{:.2}%", v * 100.0)).unwrap_or_else(|| "n/a".into());
        write!(
            f,
            "{:<13} P {:>8}  R {:>8}  class {:>8}  tp {} fp {} fn {} tn {}  passes {}  {:.1} fps",
            self.mode,
            opt(self.precision),
            opt(self.recall),
            opt(self.class_accuracy),
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.counts.tn,
            self.forward_passes,
            self.fps
        )
    }
}

/// Runs one mode over an in-memory sequence and scores it against truth
/// for frames 1.. (frame 0 has no verdict).
pub fn run_experiment(
    frames: &[QuadFrame],
    truth: &GroundTruth,
    config: &RoiConfig,
    settings: &Settings,
    net: Option<&ToyNet>,
) -> Result<(EvalReport, Vec<FrameVerdict>), EvalError> {
    let net = if settings.mode.classifies() { net.cloned() } else { None };
    let names = net.as_ref().map(|n| n.labels().to_vec()).unwrap_or_default();
    let mut session = Session::new(config.clone(), settings.clone(), net)?;
    let mut verdicts = Vec::with_capacity(frames.len());
    let mut elapsed = Duration::ZERO;
    for f in frames {
        let t = std::time::Instant::now();
        let v = session.push(f.clone())?;
        elapsed += t.elapsed();
        verdicts.extend(v);
    }
    let truth = truth.skip(1);
    let counts = score(&verdicts, &truth)?;
    let class_accuracy = if settings.mode.classifies() {
        class_accuracy(&verdicts, &truth, &names)?
    } else {
        None
    };
    let report = EvalReport {
        mode: settings.mode.name(),
        frames: frames.len(),
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        class_accuracy,
        forward_passes: session.forward_passes(),
        fps: verdicts.len() as f64 / elapsed.as_secs_f64().max(1e-12),
    };
    Ok((report, verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Label, Mode, Occupancy};
    use crate::synth::{render, stop_and_hold_scenario, CellTruth, FrameTruth};
    use std::collections::BTreeMap;

    fn truth_with(cells: &[(u64, usize)]) -> GroundTruth {
        let n = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
        let mut frames: Vec<FrameTruth> = (0..n)
            .map(|i| FrameTruth {
                frame_index: i,
                cells: BTreeMap::new(),
            })
            .collect();
        for &(f, r) in cells {
            frames[f as usize].cells.insert(
                r,
                CellTruth {
                    class: "pedestrian".into(),
                    moving: true,
                },
            );
        }
        GroundTruth { frames }
    }

    fn verdicts_from(truth: &GroundTruth) -> Vec<FrameVerdict> {
        truth
            .frames
            .iter()
            .map(|f| FrameVerdict {
                frame_index: f.frame_index,
                occupied: f.cells.keys().map(|&r| (r, Occupancy::Moving)).collect(),
                labels: BTreeMap::new(),
            })
            .collect()
    }

    #[test]
    fn perfect_and_all_negative() {
        let truth = truth_with(&(0..40).map(|i| (i / 4, (i % 4) as usize)).collect::<Vec<_>>());
        let perfect = score(&verdicts_from(&truth), &truth).unwrap();
        assert_eq!((perfect.fp, perfect.fn_, perfect.tp), (0, 0, 40));
        assert_eq!((perfect.precision(), perfect.recall()), (Some(1.0), Some(1.0)));
        assert_eq!(perfect.total(), 12 * truth.frames.len() as u64);
        let none: Vec<_> = truth.frames.iter().map(|f| FrameVerdict::empty(f.frame_index)).collect();
        let c = score(&none, &truth).unwrap();
        assert_eq!((c.tp, c.fn_, c.recall(), c.precision()), (0, 40, Some(0.0), None));
    }

    #[test]
    fn formula_arithmetic() {
        let c = ConfusionCounts { tp: 8, fp: 2, fn_: 3, tn: 0 };
        assert_eq!(c.precision(), Some(0.8));
        assert_eq!(c.recall(), Some(8.0 / 11.0));
    }

    #[test]
    fn misaligned_frames_rejected() {
        let truth = truth_with(&[(2, 1)]);
        let v = verdicts_from(&truth);
        assert!(matches!(score(&v[1..], &truth), Err(EvalError::FrameCount { .. })));
        let mut shifted = v.clone();
        shifted[0].frame_index = 9;
        assert!(matches!(score(&shifted, &truth), Err(EvalError::FrameMismatch { position: 0, .. })));
    }

    #[test]
    fn reordering_is_harmless() {
        let truth = truth_with(&[(0, 1), (1, 2), (2, 3), (2, 4)]);
        let mut v = verdicts_from(&truth);
        v[1].occupied.insert(7, Occupancy::Latched);
        let base = score(&v, &truth).unwrap();
        let mut t2 = truth.clone();
        t2.frames.reverse();
        v.reverse();
        assert_eq!(score(&v, &t2).unwrap(), base);
    }

    #[test]
    fn class_accuracy_cases() {
        let names = vec!["pedestrian".to_string(), "vehicle".to_string()];
        let truth = truth_with(&(0..10).map(|i| (i, 0)).collect::<Vec<_>>());
        let mut v = verdicts_from(&truth);
        for (i, f) in v.iter_mut().enumerate() {
            f.labels.insert(0, Label { class_id: (i % 2) as u8, confidence: 0.9 });
        }
        assert_eq!(class_accuracy(&v, &truth, &names).unwrap(), Some(0.5));
        for f in &mut v {
            f.labels.insert(0, Label { class_id: 0, confidence: 0.9 });
        }
        assert_eq!(class_accuracy(&v, &truth, &names).unwrap(), Some(1.0));
        let none: Vec<_> = truth.frames.iter().map(|f| FrameVerdict::empty(f.frame_index)).collect();
        assert_eq!(class_accuracy(&none, &truth, &names).unwrap(), None);
    }

    #[test]
    fn tracking_does_not_lower_recall_on_stop_and_hold() {
        let spec = stop_and_hold_scenario(4);
        let (frames, truth) = render(&spec).unwrap();
        let config = spec.roi_config().unwrap();
        let (detect, _) = run_experiment(&frames, &truth, &config, &Settings::new(Mode::DetectOnly), None).unwrap();
        let (track, _) = run_experiment(&frames, &truth, &config, &Settings::new(Mode::DetectTrack), None).unwrap();
        assert!(track.recall.unwrap() >= detect.recall.unwrap());
        assert_eq!(detect.counts.total(), 59 * 12);
        assert!(detect.csv_row().starts_with("detect,60,"));
    }

    #[test]
    fn zero_actor_scene_has_no_false_positives() {
        let mut spec = stop_and_hold_scenario(4);
        spec.actors.clear();
        spec.frames = 6;
        let (frames, truth) = render(&spec).unwrap();
        let config = spec.roi_config().unwrap();
        let (r, _) = run_experiment(&frames, &truth, &config, &Settings::new(Mode::DetectTrack), None).unwrap();
        assert_eq!(r.counts.fp, 0);
        assert_eq!((r.precision, r.recall), (None, None));
    }
}
