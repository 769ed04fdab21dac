//! Sparse pyramidal Lucas-Kanade, forward-additive with template gradients.
//!
//! Pyramid levels are 2x2 box averages, so a level-0 coordinate `u` sits at
//! `(u + 0.5) / 2^L - 0.5` on level `L`; displacements scale by plain `2^-L`.

use super::{DetectParams, FeaturePoint, TrackResult, TrackStatus};
use crate::imgcore::{FloatImage, Pyramid};

/// Gradient matrices are normalised by window area and 255^2 before the
/// eigenvalue test.
const INTENSITY_SCALE: f32 = 255.0 * 255.0;

/// Samples a `(2 half + 1)^2` window centred at (cx, cy) into `out`.
fn sample_window(img: &FloatImage, cx: f32, cy: f32, half: usize, out: &mut [f32]) {
    let side = 2 * half + 1;
    let (w, h) = (img.width(), img.height());
    let x0f = cx - half as f32;
    let y0f = cy - half as f32;
    let data = img.data();
    if x0f >= 0.0 && y0f >= 0.0 && x0f + (side as f32) < (w - 1) as f32 && y0f + (side as f32) < (h - 1) as f32 {
        let x0 = x0f.floor();
        let y0 = y0f.floor();
        let fx = x0f - x0;
        let fy = y0f - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for j in 0..side {
            let r0 = &data[(y0 + j) * w + x0..];
            let r1 = &data[(y0 + j + 1) * w + x0..];
            let o = &mut out[j * side..(j + 1) * side];
            for i in 0..side {
                o[i] = w00 * r0[i] + w10 * r0[i + 1] + w01 * r1[i] + w11 * r1[i + 1];
            }
        }
    } else {
        for j in 0..side {
            for i in 0..side {
                out[j * side + i] = crate::imgcore::sample_bilinear(img, x0f + i as f32, y0f + j as f32);
            }
        }
    }
}

#[inline]
fn to_level(u: f32, level: usize) -> f32 {
    let s = (1u32 << level) as f32;
    (u + 0.5) / s - 0.5
}

fn window_inside(img: &FloatImage, x: f32, y: f32, half: usize) -> bool {
    let h = half as f32;
    x - h >= 0.0 && y - h >= 0.0 && x + h <= (img.width() - 1) as f32 && y + h <= (img.height() - 1) as f32
}

/// Scratch buffers reused across points.
struct Scratch {
    ext: Vec<f32>,
    tmpl: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
    warped: Vec<f32>,
}

impl Scratch {
    fn new(half: usize) -> Self {
        let side = 2 * half + 1;
        let ext = side + 2;
        Self {
            ext: vec![0.0; ext * ext],
            tmpl: vec![0.0; side * side],
            gx: vec![0.0; side * side],
            gy: vec![0.0; side * side],
            warped: vec![0.0; side * side],
        }
    }
}

/// Outcome of tracking a single position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTrack {
    pub x: f32,
    pub y: f32,
    pub status: TrackStatus,
    pub residual: f32,
}

fn track_one(prev: &Pyramid, cur: &Pyramid, x: f32, y: f32, params: &DetectParams, s: &mut Scratch) -> PointTrack {
    let half = params.lk_window / 2;
    let side = 2 * half + 1;
    let n = (side * side) as f32;
    let levels = prev.len().min(cur.len()).min(params.lk_levels.max(1));
    let base = prev.base();
    let lost = |residual| PointTrack {
        x,
        y,
        status: TrackStatus::Lost,
        residual,
    };
    if !window_inside(base, x, y, half) {
        return PointTrack {
            x,
            y,
            status: TrackStatus::OutOfBounds,
            residual: f32::NAN,
        };
    }
    let (mut gx_, mut gy_) = (0.0f32, 0.0f32);
    for level in (0..levels).rev() {
        let pi = &prev.levels[level];
        let ci = &cur.levels[level];
        let px = to_level(x, level);
        let py = to_level(y, level);
        sample_window(pi, px, py, half + 1, &mut s.ext);
        let es = side + 2;
        let (mut a11, mut a12, mut a22) = (0.0f32, 0.0f32, 0.0f32);
        for j in 0..side {
            for i in 0..side {
                let e = (j + 1) * es + i + 1;
                let gx = 0.5 * (s.ext[e + 1] - s.ext[e - 1]);
                let gy = 0.5 * (s.ext[e + es] - s.ext[e - es]);
                let k = j * side + i;
                s.tmpl[k] = s.ext[e];
                s.gx[k] = gx;
                s.gy[k] = gy;
                a11 += gx * gx;
                a12 += gx * gy;
                a22 += gy * gy;
            }
        }
        let det = a11 * a22 - a12 * a12;
        let min_eig = 0.5 * (a11 + a22 - ((a11 - a22).powi(2) + 4.0 * a12 * a12).sqrt());
        if min_eig / (n * INTENSITY_SCALE) < params.lk_min_eigen || det <= f32::EPSILON {
            if level == 0 {
                return lost(f32::NAN);
            }
            gx_ *= 2.0;
            gy_ *= 2.0;
            continue;
        }
        let (mut dx, mut dy) = (0.0f32, 0.0f32);
        for _ in 0..params.lk_max_iters {
            sample_window(ci, px + gx_ + dx, py + gy_ + dy, half, &mut s.warped);
            let (mut b1, mut b2) = (0.0f32, 0.0f32);
            for k in 0..side * side {
                let diff = s.tmpl[k] - s.warped[k];
                b1 += diff * s.gx[k];
                b2 += diff * s.gy[k];
            }
            let sx = (a22 * b1 - a12 * b2) / det;
            let sy = (a11 * b2 - a12 * b1) / det;
            if !sx.is_finite() || !sy.is_finite() {
                return lost(f32::NAN);
            }
            dx += sx;
            dy += sy;
            if (sx * sx + sy * sy).sqrt() < params.lk_epsilon {
                break;
            }
        }
        gx_ += dx;
        gy_ += dy;
        if level > 0 {
            gx_ *= 2.0;
            gy_ *= 2.0;
        }
    }
    let (tx, ty) = (x + gx_, y + gy_);
    let cur0 = cur.base();
    if !tx.is_finite() || !ty.is_finite() || !window_inside(cur0, tx, ty, half) {
        return PointTrack {
            x: tx,
            y: ty,
            status: TrackStatus::OutOfBounds,
            residual: f32::NAN,
        };
    }
    sample_window(base, x, y, half, &mut s.tmpl);
    sample_window(cur0, tx, ty, half, &mut s.warped);
    let residual = s.tmpl.iter().zip(&s.warped).map(|(a, b)| (a - b).abs()).sum::<f32>() / n;
    if residual > params.lk_max_residual {
        return PointTrack {
            x: tx,
            y: ty,
            status: TrackStatus::Lost,
            residual,
        };
    }
    PointTrack {
        x: tx,
        y: ty,
        status: TrackStatus::Converged,
        residual,
    }
}

/// Tracks raw positions from `prev` into `cur`. Results keep input order
/// regardless of how the work is scheduled.
pub fn track_positions(prev: &Pyramid, cur: &Pyramid, points: &[(f32, f32)], params: &DetectParams) -> Vec<PointTrack> {
    use rayon::prelude::*;
    const CHUNK: usize = 16;
    points
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut s = Scratch::new(params.lk_window / 2);
            chunk
                .iter()
                .map(|&(x, y)| track_one(prev, cur, x, y, params, &mut s))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn lk_track(prev: &Pyramid, cur: &Pyramid, points: &[FeaturePoint], params: &DetectParams) -> Vec<TrackResult> {
    let pos: Vec<_> = points.iter().map(|p| (p.x, p.y)).collect();
    track_positions(prev, cur, &pos, params)
        .into_iter()
        .zip(points)
        .map(|(t, p)| TrackResult {
            origin: p.clone(),
            tracked_x: t.x,
            tracked_y: t.y,
            status: t.status,
            residual: t.residual,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{build_pyramid, to_float, GrayImage};

    fn blobs(w: usize, h: usize, seed: u64, tx: f32, ty: f32) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spots: Vec<(f32, f32, f32, f32)> = (0..w * h / 40)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f32),
                    rng.random_range(0.0..h as f32),
                    rng.random_range(2.0..5.0),
                    rng.random_range(-120.0..120.0),
                )
            })
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f32 - tx, y as f32 - ty);
            let mut v = 128.0;
            for &(cx, cy, s, a) in &spots {
                let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            v.clamp(0.0, 255.0).round() as u8
        })
    }

    fn pyr(img: &GrayImage) -> Pyramid {
        build_pyramid(&to_float(img), 3)
    }

    #[test]
    fn identical_frames_give_zero_motion() {
        let img = blobs(120, 100, 3, 0.0, 0.0);
        let p = pyr(&img);
        let params = DetectParams::default();
        let pts: Vec<_> = (0..5).flat_map(|i| (0..4).map(move |j| (30.0 + 15.0 * i as f32, 25.0 + 15.0 * j as f32))).collect();
        for t in track_positions(&p, &p, &pts, &params) {
            if t.status == TrackStatus::Converged {
                assert!(t.residual < 1e-3);
            }
        }
        let tracks = track_positions(&p, &p, &pts, &params);
        let converged = tracks.iter().zip(&pts).filter(|(t, _)| t.status == TrackStatus::Converged);
        let mut n = 0;
        for (t, &(x, y)) in converged {
            assert!((t.x - x).abs() < 1e-3 && (t.y - y).abs() < 1e-3);
            n += 1;
        }
        assert!(n >= 15);
    }

    #[test]
    fn recovers_integer_translation() {
        let a = blobs(160, 120, 11, 0.0, 0.0);
        let b = blobs(160, 120, 11, 3.0, 2.0);
        let params = DetectParams::default();
        let pts: Vec<_> = (0..8).flat_map(|i| (0..5).map(move |j| (25.0 + 15.0 * i as f32, 25.0 + 15.0 * j as f32))).collect();
        let tracks = track_positions(&pyr(&a), &pyr(&b), &pts, &params);
        let good = tracks
            .iter()
            .zip(&pts)
            .filter(|(t, &(x, y))| {
                t.status == TrackStatus::Converged && ((t.x - x - 3.0).powi(2) + (t.y - y - 2.0).powi(2)).sqrt() < 0.25
            })
            .count();
        assert!(good as f32 >= 0.9 * pts.len() as f32, "{good}/{}", pts.len());
    }

    #[test]
    fn flat_region_is_lost() {
        let img = GrayImage::filled(80, 80, 90);
        let p = pyr(&img);
        let t = track_positions(&p, &p, &[(40.0, 40.0)], &DetectParams::default());
        assert_eq!(t[0].status, TrackStatus::Lost);
    }

    #[test]
    fn border_points_are_out_of_bounds() {
        let img = blobs(80, 80, 2, 0.0, 0.0);
        let p = pyr(&img);
        let t = track_positions(&p, &p, &[(5.0, 40.0), (40.0, 75.0)], &DetectParams::default());
        assert!(t.iter().all(|t| t.status == TrackStatus::OutOfBounds));
    }

    #[test]
    fn level_mapping_round_trips() {
        for u in [0.0f32, 3.5, 17.25, 100.0] {
            for l in 0..4 {
                let s = (1u32 << l) as f32;
                assert!(((to_level(u, l) + 0.5) * s - 0.5 - u).abs() < 1e-5);
            }
        }
    }
}
