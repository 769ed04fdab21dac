//! FAST-9 segment-test corners with intensity-centroid orientation.

use super::{DetectParams, FeaturePoint, MotionMask};
use crate::imgcore::GrayImage;
use crate::roi::Roi;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC: u32 = 9;
const ORIENTATION_RADIUS: isize = 15;

#[inline]
fn has_arc(bits: u32) -> bool {
    let mut m = bits | (bits << 16);
    for _ in 1..ARC {
        m &= m >> 1;
    }
    m != 0
}

/// Segment-test score at (x, y), or 0 when the pixel is not a corner. The
/// caller guarantees a 3 px margin.
#[inline]
pub(crate) fn fast_score(img: &GrayImage, x: usize, y: usize, threshold: u8) -> u32 {
    let w = img.width() as isize;
    let data = img.data();
    let base = y as isize * w + x as isize;
    let c = data[base as usize] as i32;
    let t = threshold as i32;
    let px = |k: usize| {
        let (dx, dy) = CIRCLE[k];
        data[(base + dy * w + dx) as usize] as i32
    };
    // Any 9-arc covers at least two of the four compass points.
    let compass = [px(0), px(4), px(8), px(12)];
    let nb = compass.iter().filter(|&&p| p > c + t).count();
    let nd = compass.iter().filter(|&&p| p < c - t).count();
    if nb < 2 && nd < 2 {
        return 0;
    }
    let (mut bright, mut dark) = (0u32, 0u32);
    let (mut sb, mut sd) = (0u32, 0u32);
    for k in 0..16 {
        let p = px(k);
        if p > c + t {
            bright |= 1 << k;
            sb += (p - c - t) as u32;
        } else if p < c - t {
            dark |= 1 << k;
            sd += (c - t - p) as u32;
        }
    }
    let mut score = 0;
    if has_arc(bright) {
        score = sb;
    }
    if has_arc(dark) {
        score = score.max(sd);
    }
    score
}

/// Intensity-centroid angle over a radius-15 disc clipped to the image.
pub fn orientation(img: &GrayImage, x: usize, y: usize) -> f32 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (cx, cy) = (x as isize, y as isize);
    let (mut m10, mut m01) = (0i64, 0i64);
    let r = ORIENTATION_RADIUS;
    for dy in -r..=r {
        let yy = cy + dy;
        if yy < 0 || yy >= h {
            continue;
        }
        let row = img.row(yy as usize);
        for dx in -r..=r {
            let xx = cx + dx;
            if xx < 0 || xx >= w || dx * dx + dy * dy > r * r {
                continue;
            }
            let v = row[xx as usize] as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64) as f32
}

/// FAST-9 corners on masked pixels inside `roi`, 3x3 non-maximum suppressed,
/// strongest `max_features_per_roi` kept.
pub fn detect_keypoints(img: &GrayImage, mask: &MotionMask, roi: &Roi, params: &DetectParams) -> Vec<FeaturePoint> {
    let (w, h) = (img.width(), img.height());
    let x0 = roi.x.max(3);
    let y0 = roi.y.max(3);
    let x1 = (roi.x + roi.w).min(w.saturating_sub(3));
    let y1 = (roi.y + roi.h).min(h.saturating_sub(3));
    if x0 >= x1 || y0 >= y1 || params.max_features_per_roi == 0 {
        return Vec::new();
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let mut scores = vec![0u32; rw * rh];
    let mut any = false;
    for y in y0..y1 {
        for x in x0..x1 {
            if mask.get(x, y) {
                let s = fast_score(img, x, y, params.fast_threshold);
                if s > 0 {
                    scores[(y - y0) * rw + (x - x0)] = s;
                    any = true;
                }
            }
        }
    }
    if !any {
        return Vec::new();
    }
    let mut kept: Vec<(u32, usize, usize)> = Vec::new();
    for ly in 0..rh {
        for lx in 0..rw {
            let s = scores[ly * rw + lx];
            if s == 0 {
                continue;
            }
            let mut keep = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (lx as isize + dx, ly as isize + dy);
                    if nx < 0 || ny < 0 || nx >= rw as isize || ny >= rh as isize {
                        continue;
                    }
                    let n = scores[ny as usize * rw + nx as usize];
                    // ties go to the neighbour that comes first in raster order
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > s || (earlier && n == s) {
                        keep = false;
                        break 'nms;
                    }
                }
            }
            if keep {
                kept.push((s, lx + x0, ly + y0));
            }
        }
    }
    kept.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    kept.truncate(params.max_features_per_roi);
    kept.into_iter()
        .map(|(s, x, y)| FeaturePoint {
            x: x as f32,
            y: y as f32,
            score: s as f32,
            angle: orientation(img, x, y),
            descriptor: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Camera;
    use crate::roi::Region;

    fn whole(w: usize, h: usize) -> Roi {
        Roi {
            index: 0,
            x: 0,
            y: 0,
            w,
            h,
            camera: Camera::Front,
            region: Region::FrontLeft,
        }
    }

    #[test]
    fn arc_detection() {
        assert!(has_arc(0b1_1111_1111));
        assert!(!has_arc(0b1111_1111));
        // wrap-around arc: 5 at the top end, 4 at the bottom
        assert!(has_arc(0b1111_1000_0000_0000 | 0b1111 | (1 << 11)));
        assert!(!has_arc(0b0101_0101_0101_0101));
    }

    #[test]
    fn constant_image_has_no_corners() {
        let img = GrayImage::filled(40, 40, 90);
        let kp = detect_keypoints(&img, &MotionMask::full(40, 40), &whole(40, 40), &DetectParams::default());
        assert!(kp.is_empty());
    }

    #[test]
    fn square_corners_found_and_gated_by_mask() {
        // white 20x20 square at (20,20)..(40,40); corners at the four vertices
        let img = GrayImage::from_fn(60, 60, |x, y| if (20..40).contains(&x) && (20..40).contains(&y) { 255 } else { 0 });
        let params = DetectParams::default();
        let kp = detect_keypoints(&img, &MotionMask::full(60, 60), &whole(60, 60), &params);
        assert!(kp.len() >= 4, "{kp:?}");
        let corners = [(20.0, 20.0), (39.0, 20.0), (20.0, 39.0), (39.0, 39.0)];
        for p in &kp {
            let near = corners.iter().any(|&(cx, cy): &(f32, f32)| (p.x - cx).abs() <= 2.0 && (p.y - cy).abs() <= 2.0);
            assert!(near, "keypoint {p:?} is not at a square corner");
        }
        for c in corners {
            assert!(kp.iter().any(|p| (p.x - c.0).abs() <= 2.0 && (p.y - c.1).abs() <= 2.0), "missing corner {c:?}");
        }
        assert!(detect_keypoints(&img, &MotionMask::empty(60, 60), &whole(60, 60), &params).is_empty());
    }

    #[test]
    fn budget_and_roi_restriction() {
        let img = GrayImage::from_fn(100, 100, |x, y| if (x / 5 + y / 5) % 2 == 0 { 230 } else { 20 });
        let mut params = DetectParams::default();
        params.max_features_per_roi = 7;
        let roi = Roi { x: 30, y: 40, w: 30, h: 20, ..whole(1, 1) };
        let kp = detect_keypoints(&img, &MotionMask::full(100, 100), &roi, &params);
        assert_eq!(kp.len(), 7);
        for p in &kp {
            assert!(roi.rect().contains(p.x, p.y));
        }
        for pair in kp.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn orientation_points_at_bright_side() {
        let img = GrayImage::from_fn(41, 41, |x, _| if x > 20 { 200 } else { 0 });
        assert!(orientation(&img, 20, 20).abs() < 1e-6);
        let img = GrayImage::from_fn(41, 41, |_, y| if y > 20 { 200 } else { 0 });
        assert!((orientation(&img, 20, 20) - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
    }
}
