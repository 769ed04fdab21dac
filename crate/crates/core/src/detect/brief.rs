//! Steered BRIEF: 256 intensity comparisons on a fixed pseudo-random pattern
//! rotated by the keypoint angle.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeaturePoint;
use crate::imgcore::{to_float, FloatImage, GrayImage};

/// Seed of the ChaCha8 stream that generates the comparison pattern.
pub const BRIEF_PATTERN_SEED: u64 = 0x0B21_EF5E_ED00_0256;
/// Pattern offsets stay inside this radius so any rotation fits a 16 px margin.
const PATTERN_RADIUS: i32 = 13;
pub const BRIEF_BORDER: usize = 16;

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

type Pair = [(i8, i8); 2];

fn pattern() -> &'static [Pair; 256] {
    static PATTERN: OnceLock<[Pair; 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BRIEF_PATTERN_SEED);
        let mut point = || loop {
            // isotropic Gaussian (sigma ~ patch/5) via Box-Muller, rejected outside the disc
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt() * 6.2;
            let (x, y) = (r * (std::f64::consts::TAU * u2).cos(), r * (std::f64::consts::TAU * u2).sin());
            let (xi, yi) = (x.round() as i32, y.round() as i32);
            if xi * xi + yi * yi <= PATTERN_RADIUS * PATTERN_RADIUS {
                return (xi as i8, yi as i8);
            }
        };
        let mut pairs = [[(0i8, 0i8); 2]; 256];
        for p in pairs.iter_mut() {
            loop {
                let a = point();
                let b = point();
                if a != b {
                    *p = [a, b];
                    break;
                }
            }
        }
        pairs
    })
}

/// 5x5 box smoothing applied before descriptor sampling.
pub fn smooth_for_brief(img: &GrayImage) -> FloatImage {
    to_float(img).box_blur(2)
}

/// Descriptor at `pt`, or `None` when the point is within 16 px of a border.
pub fn compute_brief(img: &FloatImage, pt: &FeaturePoint) -> Option<Descriptor> {
    let cx = pt.x.round() as isize;
    let cy = pt.y.round() as isize;
    let b = BRIEF_BORDER as isize;
    if cx < b || cy < b || cx >= img.width() as isize - b || cy >= img.height() as isize - b {
        return None;
    }
    let (s, c) = (pt.angle as f64).sin_cos();
    let w = img.width() as isize;
    let data = img.data();
    let sample = |(dx, dy): (i8, i8)| {
        let (dx, dy) = (dx as f64, dy as f64);
        let rx = (c * dx - s * dy).round() as isize;
        let ry = (s * dx + c * dy).round() as isize;
        data[((cy + ry) * w + cx + rx) as usize]
    };
    let mut bits = [0u64; 4];
    for (i, [p, q]) in pattern().iter().enumerate() {
        if sample(*p) < sample(*q) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    Some(Descriptor(bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<u8> = (0..16 * 16).map(|_| rng.random_range(20..235)).collect();
        GrayImage::from_fn(64, 64, |x, y| blocks[(y / 4) * 16 + x / 4])
    }

    fn pt(x: f32, y: f32, angle: f32) -> FeaturePoint {
        FeaturePoint {
            x,
            y,
            score: 1.0,
            angle,
            descriptor: None,
        }
    }

    #[test]
    fn pattern_is_fixed_and_inside_disc() {
        let p = pattern();
        for [a, b] in p.iter() {
            for (x, y) in [a, b] {
                assert!((*x as i32).pow(2) + (*y as i32).pow(2) <= PATTERN_RADIUS * PATTERN_RADIUS);
            }
        }
        assert_eq!(p, pattern());
    }

    #[test]
    fn deterministic() {
        let img = smooth_for_brief(&patch(1));
        let a = compute_brief(&img, &pt(30.0, 31.0, 0.4)).unwrap();
        let b = compute_brief(&img, &pt(30.0, 31.0, 0.4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn border_points_are_rejected() {
        let img = smooth_for_brief(&patch(1));
        assert!(compute_brief(&img, &pt(15.0, 30.0, 0.0)).is_none());
        assert!(compute_brief(&img, &pt(30.0, 48.0, 0.0)).is_none());
        assert!(compute_brief(&img, &pt(16.0, 47.0, 0.0)).is_some());
    }

    #[test]
    fn inversion_flips_all_untied_bits() {
        let g = patch(5);
        let inv = GrayImage::from_vec(64, 64, g.data().iter().map(|&v| 255 - v).collect()).unwrap();
        let (a, b) = (smooth_for_brief(&g), smooth_for_brief(&inv));
        let p = pt(32.0, 32.0, 1.1);
        let da = compute_brief(&a, &p).unwrap();
        let db = compute_brief(&b, &p).unwrap();
        // recompute each comparison directly to find ties
        let (s, c) = (1.1f64).sin_cos();
        let at = |img: &FloatImage, (dx, dy): (i8, i8)| {
            let rx = (c * dx as f64 - s * dy as f64).round() as isize;
            let ry = (s * dx as f64 + c * dy as f64).round() as isize;
            img.get((32 + rx) as usize, (32 + ry) as usize)
        };
        for (i, [p, q]) in pattern().iter().enumerate() {
            if at(&a, *p) == at(&a, *q) {
                assert!(!da.bit(i) && !db.bit(i));
            } else {
                assert_ne!(da.bit(i), db.bit(i), "bit {i}");
            }
        }
    }

    #[test]
    fn steered_pattern_survives_quarter_turn() {
        // rotated(x', y') = original(y', 63 - x'): a +90 degree turn of offsets
        // about the image centre (31.5, 31.5).
        let mut worst = 0;
        for seed in 0..20 {
            let g = patch(100 + seed);
            let rot = GrayImage::from_fn(64, 64, |x, y| g.get(y, 63 - x));
            let (a, b) = (smooth_for_brief(&g), smooth_for_brief(&rot));
            let angle = 0.3 + seed as f32 * 0.1;
            // original point (29, 33) maps to (63 - 33, 29)
            let da = compute_brief(&a, &pt(29.0, 33.0, angle)).unwrap();
            let db = compute_brief(&b, &pt(30.0, 29.0, angle + std::f32::consts::FRAC_PI_2)).unwrap();
            worst = worst.max(da.hamming(&db));
        }
        assert!(worst <= 64, "hamming {worst}");
    }
}
