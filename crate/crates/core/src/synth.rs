//! Deterministic synthetic quad-frame scenes with geometric ground truth.
//!
//! Geometry runs in Q8 fixed point (1/256 px) and all pixel arithmetic is
//! integer, so output is bit-identical everywhere. Ground truth comes from
//! actor boxes and ROI rects only: an ROI is occupied when an actor's box
//! overlaps it by at least a quarter of the actor's area.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{save_image, GrayImage, ImageError, QuadFrame};
use crate::roi::{default_config, Rect, RoiConfig, RoiError, ROI_COUNT};

const Q: i64 = 256;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("actor {actor}: trajectory leaves the frame at frame {frame}")]
    OutOfBounds { actor: usize, frame: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Roi(#[from] RoiError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("truth csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    /// Smooth value noise of the given amplitude around the base level.
    Textured { amplitude: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Disc,
    TexturedPatch,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Rect, Shape::Disc, Shape::TexturedPatch];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Rect => "rect",
            Shape::Disc => "disc",
            Shape::TexturedPatch => "textured_patch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// Straight move of the actor centre to `to` at `speed` px/frame.
    Move { to: [i32; 2], speed: f64 },
    /// Stay put for `frames` frames.
    Hold { frames: u32 },
}

impl Segment {
    pub fn speed(&self) -> f64 {
        match self {
            Segment::Move { speed, .. } => *speed,
            Segment::Hold { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub shape: Shape,
    /// Side of the bounding square in pixels.
    pub size: u32,
    /// Fill level for rect and disc actors.
    #[serde(default = "default_fill")]
    pub fill: u8,
    pub class: String,
    /// Initial centre.
    pub start: [i32; 2],
    #[serde(default)]
    pub segments: Vec<Segment>,
}

fn default_fill() -> u8 {
    200
}

fn default_base() -> u8 {
    70
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub background: Background,
    #[serde(default = "default_base")]
    pub base_level: u8,
    pub actors: Vec<Actor>,
    /// ROI layout used for ground truth; the default layout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiConfig>,
}

impl ScenarioSpec {
    pub fn roi_config(&self) -> Result<RoiConfig, RoiError> {
        match &self.roi {
            Some(c) => Ok(c.clone()),
            None => default_config(self.width, self.height),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        serde_json::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTruth {
    pub class: String,
    pub moving: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameTruth {
    pub frame_index: u64,
    pub cells: BTreeMap<usize, CellTruth>,
}

impl FrameTruth {
    pub fn occupied(&self, roi: usize) -> bool {
        self.cells.contains_key(&roi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

impl GroundTruth {
    pub fn occupied_cells(&self) -> usize {
        self.frames.iter().map(|f| f.cells.len()).sum()
    }

    /// Truth for frames `from..`, e.g. to align with verdicts that start at frame 1.
    pub fn skip(&self, from: usize) -> GroundTruth {
        GroundTruth {
            frames: self.frames.iter().skip(from).cloned().collect(),
        }
    }

    /// `frame,roi,class,moving`, one row per occupied cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["frame", "roi", "class", "moving"]).unwrap();
        for f in &self.frames {
            for (roi, c) in &f.cells {
                w.write_record([
                    f.frame_index.to_string(),
                    roi.to_string(),
                    c.class.clone(),
                    (c.moving as u8).to_string(),
                ])
                .unwrap();
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Parses truth CSV. The CSV lists occupied cells only, so the total
    /// frame count has to be supplied.
    pub fn from_csv(text: &str, frame_count: usize) -> Result<GroundTruth, SynthError> {
        let mut frames: Vec<FrameTruth> = (0..frame_count)
            .map(|i| FrameTruth {
                frame_index: i as u64,
                cells: BTreeMap::new(),
            })
            .collect();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| SynthError::Invalid(format!("truth row {:?}: bad {what}", rec.position().map(|p| p.line())));
            let frame: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("frame"))?;
            let roi: usize = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("roi"))?;
            let class = rec.get(2).ok_or_else(|| bad("class"))?.trim().to_string();
            let moving = match rec.get(3).map(str::trim) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(bad("moving")),
            };
            if roi >= ROI_COUNT {
                return Err(bad("roi"));
            }
            let f = frames.get_mut(frame).ok_or_else(|| bad("frame (beyond frame count)"))?;
            f.cells.insert(roi, CellTruth { class, moving });
        }
        Ok(GroundTruth { frames })
    }
}

/// Q8 centre positions of one actor for every frame.
fn trajectory(actor: &Actor, frames: usize) -> Result<Vec<(i64, i64)>, SynthError> {
    let mut pos = (actor.start[0] as i64 * Q, actor.start[1] as i64 * Q);
    let mut out = Vec::with_capacity(frames);
    out.push(pos);
    'segments: for seg in &actor.segments {
        match seg {
            Segment::Hold { frames: n } => {
                for _ in 0..*n {
                    if out.len() == frames {
                        break 'segments;
                    }
                    out.push(pos);
                }
            }
            Segment::Move { to, speed } => {
                if !(speed.is_finite() && *speed > 0.0) {
                    return Err(SynthError::Invalid(format!("move speed {speed} must be positive")));
                }
                let speed_q = ((speed * Q as f64).round() as i64).max(1);
                let target = (to[0] as i64 * Q, to[1] as i64 * Q);
                let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
                // smallest n with n * speed >= |d|, decided in integers
                let len2 = (dx as i128).pow(2) + (dy as i128).pow(2);
                let mut n: i64 = 0;
                while ((n * speed_q) as i128).pow(2) < len2 {
                    n += 1;
                }
                let start = pos;
                for k in 1..=n {
                    if out.len() == frames {
                        break 'segments;
                    }
                    let lerp = |a: i64, d: i64| a + (2 * d * k + n).div_euclid(2 * n);
                    pos = (lerp(start.0, dx), lerp(start.1, dy));
                    out.push(pos);
                }
                pos = target;
            }
        }
    }
    while out.len() < frames {
        out.push(pos);
    }
    out.truncate(frames);
    Ok(out)
}

/// Q8 bounding box [x0, x1) x [y0, y1).
fn bbox(center: (i64, i64), size: u32) -> (i64, i64, i64, i64) {
    let half = size as i64 * Q / 2;
    (center.0 - half, center.0 - half + size as i64 * Q, center.1 - half, center.1 - half + size as i64 * Q)
}

/// Random lattice bilinearly interpolated in Q8.
struct ValueNoise {
    cells_x: usize,
    spacing: i64,
    values: Vec<i64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, w: usize, h: usize, spacing: usize, lo: i64, hi: i64) -> Self {
        let cells_x = w / spacing + 3;
        let cells_y = h / spacing + 3;
        let values = (0..cells_x * cells_y).map(|_| rng.random_range(lo..=hi)).collect();
        Self {
            cells_x,
            spacing: spacing as i64,
            values,
        }
    }

    /// Value at Q8 coordinates, which must be non-negative and inside the lattice.
    #[inline]
    fn at(&self, xq: i64, yq: i64) -> i64 {
        let sq = self.spacing * Q;
        let (cx, cy) = ((xq / sq) as usize, (yq / sq) as usize);
        let (fx, fy) = (xq % sq, yq % sq);
        let v = |i: usize, j: usize| self.values[j * self.cells_x + i];
        let top = v(cx, cy) * (sq - fx) + v(cx + 1, cy) * fx;
        let bot = v(cx, cy + 1) * (sq - fx) + v(cx + 1, cy + 1) * fx;
        (top * (sq - fy) + bot * fy) / (sq * sq)
    }
}

const PATCH_SPACING: usize = 5;

/// Actor appearance, fixed at render start.
struct Appearance {
    texture: Option<ValueNoise>,
}

fn coverage_1d(p0: i64, a0: i64, a1: i64) -> i64 {
    (a1.min(p0 + Q) - a0.max(p0)).clamp(0, Q)
}

fn render_frame(
    spec: &ScenarioSpec,
    background: &GrayImage,
    actors: &[(usize, &Actor, &Appearance)],
    positions: &[Vec<(i64, i64)>],
    frame: usize,
) -> GrayImage {
    let mut img = background.clone();
    let (w, h) = (spec.width as i64, spec.height as i64);
    for &(ai, actor, look) in actors {
        let c = positions[ai][frame];
        let (x0, x1, y0, y1) = bbox(c, actor.size);
        let px0 = (x0.div_euclid(Q)).max(0);
        let px1 = ((x1 + Q - 1).div_euclid(Q)).min(w);
        let py0 = (y0.div_euclid(Q)).max(0);
        let py1 = ((y1 + Q - 1).div_euclid(Q)).min(h);
        let r = actor.size as i64 * Q / 2;
        for py in py0..py1 {
            for px in px0..px1 {
                let alpha = match actor.shape {
                    Shape::Rect | Shape::TexturedPatch => {
                        coverage_1d(px * Q, x0, x1) * coverage_1d(py * Q, y0, y1) / Q
                    }
                    Shape::Disc => {
                        let mut hits = 0;
                        for sy in 0..4 {
                            for sx in 0..4 {
                                let qx = px * Q + Q / 8 + sx * Q / 4 - c.0;
                                let qy = py * Q + Q / 8 + sy * Q / 4 - c.1;
                                hits += (qx * qx + qy * qy <= r * r) as i64;
                            }
                        }
                        hits * Q / 16
                    }
                };
                if alpha == 0 {
                    continue;
                }
                let value = match &look.texture {
                    Some(t) => {
                        let lx = (px * Q + Q / 2 - x0).clamp(0, actor.size as i64 * Q);
                        let ly = (py * Q + Q / 2 - y0).clamp(0, actor.size as i64 * Q);
                        t.at(lx, ly)
                    }
                    None => actor.fill as i64,
                };
                let bg = img.get(px as usize, py as usize) as i64;
                let v = (bg * (Q - alpha) + value * alpha + Q / 2) / Q;
                img.set(px as usize, py as usize, v.clamp(0, 255) as u8);
            }
        }
    }
    img
}

fn box_overlap_q(b: (i64, i64, i64, i64), r: &Rect) -> i128 {
    let (rx0, rx1) = (r.x as i64 * Q, (r.x + r.w) as i64 * Q);
    let (ry0, ry1) = (r.y as i64 * Q, (r.y + r.h) as i64 * Q);
    let ow = (b.1.min(rx1) - b.0.max(rx0)).max(0) as i128;
    let oh = (b.3.min(ry1) - b.2.max(ry0)).max(0) as i128;
    ow * oh
}

/// Rasterises every frame and derives ground truth from geometry alone.
pub fn render(spec: &ScenarioSpec) -> Result<(Vec<QuadFrame>, GroundTruth), SynthError> {
    if spec.frames < 2 {
        return Err(SynthError::Invalid("a scenario needs at least 2 frames".into()));
    }
    let config = spec.roi_config()?;
    if (config.frame_width(), config.frame_height()) != (spec.width, spec.height) {
        return Err(SynthError::Invalid("roi config does not match the frame size".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = match spec.background {
        Background::Flat => GrayImage::filled(w, h, spec.base_level),
        Background::Textured { amplitude } => {
            let a = amplitude as i64;
            let noise = ValueNoise::new(&mut rng, w, h, 8, -a, a);
            GrayImage::from_fn(w, h, |x, y| {
                (spec.base_level as i64 + noise.at(x as i64 * Q, y as i64 * Q)).clamp(0, 255) as u8
            })
        }
    };
    let mut positions = Vec::with_capacity(spec.actors.len());
    let mut looks = Vec::with_capacity(spec.actors.len());
    for (ai, actor) in spec.actors.iter().enumerate() {
        if actor.size < 2 {
            return Err(SynthError::Invalid(format!("actor {ai}: size must be at least 2")));
        }
        let traj = trajectory(actor, spec.frames)?;
        for (f, &c) in traj.iter().enumerate() {
            let (x0, x1, y0, y1) = bbox(c, actor.size);
            if x0 < 0 || y0 < 0 || x1 > w as i64 * Q || y1 > h as i64 * Q {
                return Err(SynthError::OutOfBounds { actor: ai, frame: f });
            }
        }
        positions.push(traj);
        let texture = (actor.shape == Shape::TexturedPatch).then(|| {
            let s = actor.size as usize;
            ValueNoise::new(&mut rng, s, s, PATCH_SPACING, 20, 235)
        });
        looks.push(Appearance { texture });
    }
    let draw: Vec<_> = spec.actors.iter().enumerate().map(|(i, a)| (i, a, &looks[i])).collect();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut truth = GroundTruth::default();
    for f in 0..spec.frames {
        let img = render_frame(spec, &background, &draw, &positions, f);
        frames.push(QuadFrame::new(img, f as u64, f as u64 * 1_000_000 / 30)?);

        let mut cells: BTreeMap<usize, (i128, CellTruth)> = BTreeMap::new();
        for (ai, actor) in spec.actors.iter().enumerate() {
            let b = bbox(positions[ai][f], actor.size);
            let area = (actor.size as i128 * Q as i128).pow(2);
            let moving = if f > 0 {
                positions[ai][f] != positions[ai][f - 1]
            } else {
                positions[ai][1] != positions[ai][0]
            };
            for roi in config.rois() {
                let ov = box_overlap_q(b, &roi.rect());
                if ov * 4 >= area && ov > 0 {
                    let entry = CellTruth {
                        class: actor.class.clone(),
                        moving,
                    };
                    match cells.get(&roi.index) {
                        Some((best, _)) if *best >= ov => {}
                        _ => {
                            cells.insert(roi.index, (ov, entry));
                        }
                    }
                }
            }
        }
        truth.frames.push(FrameTruth {
            frame_index: f as u64,
            cells: cells.into_iter().map(|(k, (_, c))| (k, c)).collect(),
        });
    }
    Ok((frames, truth))
}

/// Canonical stop-and-hold scene on a 1280x720 quad frame: a textured actor
/// inside ROI 1 moves for 20 frames, halts for 30, then leaves the monitored
/// band upwards over the remaining 9 frames (60 frames in total).
pub fn stop_and_hold_scenario(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        frames: 60,
        width: 1280,
        height: 720,
        background: Background::Flat,
        base_level: default_base(),
        actors: vec![Actor {
            shape: Shape::TexturedPatch,
            size: 40,
            fill: default_fill(),
            class: "pedestrian".into(),
            start: [250, 270],
            segments: vec![
                Segment::Move { to: [330, 270], speed: 4.0 },
                Segment::Hold { frames: 30 },
                Segment::Move { to: [330, 150], speed: 14.0 },
            ],
        }],
        roi: None,
    }
}

/// Class names used by [`random_scenario`].
pub const SCENE_CLASSES: [&str; 4] = ["pedestrian", "bicycle", "shopping_cart", "vehicle"];

/// Seeded 1280x720 scene with 1-3 textured actors, each in its own ROI. An
/// actor starts inside its ROI, moves, may hold, and may finally leave the
/// monitored band upwards.
pub fn random_scenario(seed: u64, frames: usize) -> ScenarioSpec {
    let (w, h) = (1280usize, 720usize);
    let config = default_config(w, h).expect("default layout");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4_E000);
    let background = if rng.random_bool(0.5) {
        Background::Flat
    } else {
        Background::Textured {
            amplitude: rng.random_range(6..=14),
        }
    };
    let n_actors = rng.random_range(1..=3);
    let mut rois: Vec<usize> = (0..ROI_COUNT).collect();
    let mut actors = Vec::new();
    for _ in 0..n_actors {
        let roi = rois.swap_remove(rng.random_range(0..rois.len()));
        let r = config.roi(roi).rect();
        let size = rng.random_range(32..=48u32);
        let half = size as i32 / 2 + 4;
        let (xmin, xmax) = (r.x as i32 + half, (r.x + r.w) as i32 - half);
        let (ymin, ymax) = (r.y as i32 + half, (r.y + r.h) as i32 - half);
        let start = [rng.random_range(xmin..=xmax), rng.random_range(ymin..=ymax)];
        let mut segments = Vec::new();
        let mut at = start;
        let legs = rng.random_range(1..=3);
        for _ in 0..legs {
            let to = [rng.random_range(xmin..=xmax), rng.random_range(ymin..=ymax)];
            let dist = (((to[0] - at[0]).pow(2) + (to[1] - at[1]).pow(2)) as f64).sqrt();
            if dist >= 24.0 {
                segments.push(Segment::Move {
                    to,
                    speed: rng.random_range(3..=6) as f64,
                });
                at = to;
            }
            if rng.random_bool(0.5) {
                segments.push(Segment::Hold {
                    frames: rng.random_range(5..=15),
                });
            }
        }
        if rng.random_bool(0.3) {
            // leave upwards into the unmonitored upper half of the tile
            let top = (r.y as i32 / (h as i32 / 2)) * (h as i32 / 2);
            segments.push(Segment::Move {
                to: [at[0], top + half],
                speed: rng.random_range(6..=10) as f64,
            });
        }
        actors.push(Actor {
            shape: Shape::TexturedPatch,
            size,
            fill: default_fill(),
            class: SCENE_CLASSES[rng.random_range(0..SCENE_CLASSES.len())].to_string(),
            start,
            segments,
        });
    }
    ScenarioSpec {
        seed,
        frames,
        width: w,
        height: h,
        background,
        base_level: rng.random_range(50..=110),
        actors,
        roi: None,
    }
}

/// Writes `frame_NNNNN.pgm` files plus `truth.csv` into `dir`.
pub fn write_scenario(dir: impl AsRef<Path>, frames: &[QuadFrame], truth: &GroundTruth) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for f in frames {
        save_image(&f.image, dir.join(format!("frame_{:05}.pgm", f.frame_index)))?;
    }
    std::fs::write(dir.join("truth.csv"), truth.to_csv())?;
    Ok(())
}

/// Class names of [`shape_dataset`].
pub const SHAPE_CLASSES: [&str; 3] = ["rect", "disc", "textured_patch"];

/// Labelled single-shape crops for classifier training: `per_class`
/// `side`x`side` images of each of rect, disc and textured patch, with
/// random size, position, contrast and background texture.
pub fn shape_dataset(seed: u64, per_class: usize, side: usize) -> Vec<(GrayImage, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 3);
    for i in 0..per_class * 3 {
        let class = i % 3;
        let shape = Shape::ALL[class];
        let size = rng.random_range(side as u32 * 2 / 5..=side as u32 * 4 / 5);
        let bg_level: u8 = rng.random_range(30..=200);
        let mut fill: u8 = rng.random_range(20..=235);
        if (fill as i32 - bg_level as i32).abs() < 50 {
            fill = if bg_level > 127 { bg_level - 60 } else { bg_level + 60 };
        }
        let slack = side as i32 * Q as i32 - size as i32 * Q as i32;
        let margin = (size as i32 * Q as i32) / 2;
        let cx = margin + rng.random_range(0..=slack.max(0));
        let cy = margin + rng.random_range(0..=slack.max(0));
        let spec = ScenarioSpec {
            seed: rng.random(),
            frames: 2,
            width: side.max(128),
            height: side.max(128),
            background: Background::Textured { amplitude: 8 },
            base_level: bg_level,
            actors: vec![],
            roi: None,
        };
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = ValueNoise::new(&mut r, side, side, 8, -8, 8);
        let background = GrayImage::from_fn(side, side, |x, y| {
            (bg_level as i64 + noise.at(x as i64 * Q, y as i64 * Q)).clamp(0, 255) as u8
        });
        let actor = Actor {
            shape,
            size,
            fill,
            class: SHAPE_CLASSES[class].into(),
            start: [0, 0],
            segments: vec![],
        };
        let look = Appearance {
            texture: (shape == Shape::TexturedPatch)
                .then(|| ValueNoise::new(&mut r, size as usize, size as usize, 4, 20, 235)),
        };
        let positions = vec![vec![(cx as i64, cy as i64)]];
        let small = ScenarioSpec {
            width: side,
            height: side,
            ..spec
        };
        let img = render_frame(&small, &background, &[(0, &actor, &look)], &positions, 0);
        out.push((img, class));
    }
    out
}
