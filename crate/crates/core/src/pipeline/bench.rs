//! Throughput measurement with a per-stage breakdown.

use std::fmt;
use std::time::Duration;

use super::{PipelineError, Session, StepTimes};
use crate::imgcore::QuadFrame;

/// Row names of the stage breakdown, in report order.
pub const STAGE_NAMES: [&str; 6] = [
    "Diff of two frames",
    "Wise multiple",
    "ORB Feature Extraction",
    "Sparse Optical flow cal.",
    "Stopped-object tracking",
    "Classification",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub name: &'static str,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub total: Duration,
    pub fps: f64,
    pub stages: Vec<StageRow>,
}

fn stage_values(t: &StepTimes) -> [Duration; 6] {
    [
        t.detect.diff,
        t.detect.wise_multiply,
        t.detect.features,
        t.detect.optical_flow,
        t.tracking,
        t.classification,
    ]
}

/// Runs preloaded frames through the session, timing only processing.
/// fps is (frames - 1) / total processing time.
pub fn benchmark(frames: &[QuadFrame], session: &mut Session) -> Result<BenchReport, PipelineError> {
    if frames.len() < 2 {
        return Err(PipelineError::Config("benchmark needs at least 2 frames".into()));
    }
    let mut samples: Vec<[Duration; 6]> = Vec::with_capacity(frames.len());
    let mut total = Duration::ZERO;
    for f in frames {
        let t = std::time::Instant::now();
        let step = session.step(f.clone())?;
        let elapsed = t.elapsed();
        if let Some(step) = step {
            total += elapsed;
            samples.push(stage_values(&step.times));
        }
    }
    let n = samples.len() as f64;
    let stages = STAGE_NAMES
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let ms: Vec<f64> = samples.iter().map(|s| s[k].as_secs_f64() * 1e3).collect();
            let mean = ms.iter().sum::<f64>() / n;
            let var = ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            StageRow {
                name,
                mean_ms: mean,
                std_ms: var.sqrt(),
            }
        })
        .collect();
    Ok(BenchReport {
        frames: frames.len(),
        total,
        fps: samples.len() as f64 / total.as_secs_f64().max(1e-12),
        stages,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>10} {:>10}", "stage", "mean ms", "std ms")?;
        for r in &self.stages {
            writeln!(f, "{:<28} {:>10.3} {:>10.3}", r.name, r.mean_ms, r.std_ms)?;
        }
        write!(
            f,
            "frames {}  total {:.3} s  fps {:.2}",
            self.frames,
            self.total.as_secs_f64(),
            self.fps
        )
    }
}
