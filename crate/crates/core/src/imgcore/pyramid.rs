use super::GrayImage;

/// Smallest width or height a pyramid level may have.
pub const MIN_LEVEL_DIM: usize = 8;

/// Single-precision raster used for pyramids and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "buffer length does not match dimensions");
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Separable box blur with half-width `radius`, borders clamped.
    pub fn box_blur(&self, radius: usize) -> FloatImage {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let norm = 1.0 / (2 * radius + 1) as f32;
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let xi = (x + k).saturating_sub(radius).min(w - 1);
                    acc += row[xi];
                }
                tmp[y * w + x] = acc * norm;
            }
        }
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..=2 * radius {
                    let yi = (y + k).saturating_sub(radius).min(h - 1);
                    acc += tmp[yi * w + x];
                }
                out[y * w + x] = acc * norm;
            }
        }
        FloatImage::new(w, h, out)
    }
}

pub fn to_float(img: &GrayImage) -> FloatImage {
    FloatImage::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| v as f32).collect(),
    )
}

/// Image pyramid; level 0 is full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<FloatImage>,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn base(&self) -> &FloatImage {
        &self.levels[0]
    }
}

fn downsample(src: &FloatImage) -> FloatImage {
    let (w, h) = (src.width / 2, src.height / 2);
    let sw = src.width;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let r0 = &src.data[2 * y * sw..];
        let r1 = &src.data[(2 * y + 1) * sw..];
        for x in 0..w {
            out.push(0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]));
        }
    }
    FloatImage::new(w, h, out)
}

/// Builds up to `max_levels` levels by 2x2 box averaging. A level is only
/// added when both of its dimensions are at least [`MIN_LEVEL_DIM`].
pub fn build_pyramid(img: &FloatImage, max_levels: usize) -> Pyramid {
    assert!(max_levels >= 1, "max_levels must be at least 1");
    let mut levels = vec![img.clone()];
    while levels.len() < max_levels {
        let last = levels.last().unwrap();
        if last.width / 2 < MIN_LEVEL_DIM || last.height / 2 < MIN_LEVEL_DIM {
            break;
        }
        let next = downsample(last);
        levels.push(next);
    }
    Pyramid { levels }
}

/// Bilinear interpolation; coordinates are clamped into the image.
#[inline]
pub fn sample_bilinear(img: &FloatImage, x: f32, y: f32) -> f32 {
    let maxx = (img.width - 1) as f32;
    let maxy = (img.height - 1) as f32;
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, maxx) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, maxy) };
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let w = img.width;
    let a = img.data[y0 * w + x0];
    let b = img.data[y0 * w + x1];
    let c = img.data[y1 * w + x0];
    let d = img.data[y1 * w + x1];
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn to_float_is_exact() {
        let img = GrayImage::from_vec(2, 1, vec![0, 255]).unwrap();
        assert_eq!(to_float(&img).data(), &[0.0, 255.0]);
        let img = GrayImage::from_fn(13, 7, |x, y| (x * 19 + y * 3) as u8);
        let f = to_float(&img);
        let back: Vec<u8> = f.data().iter().map(|&v| v as u8).collect();
        assert_eq!(back, img.data());
        let int_mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64;
        let f_mean = f.data().iter().map(|&v| v as f64).sum::<f64>() / f.data().len() as f64;
        assert!((int_mean - f_mean).abs() < 1e-6);
    }

    #[test]
    fn constant_pyramid_stays_constant() {
        let img = FloatImage::new(100, 60, vec![37.0; 6000]);
        let p = build_pyramid(&img, 6);
        for lvl in &p.levels {
            assert!(lvl.data().iter().all(|&v| (v - 37.0).abs() < 1e-6));
        }
    }

    #[test]
    fn level_rule() {
        let p = build_pyramid(&FloatImage::zeros(16, 16), 3);
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(16, 16), (8, 8)]);
        for l in &p.levels {
            assert!(l.width() >= MIN_LEVEL_DIM && l.height() >= MIN_LEVEL_DIM);
        }
        assert_eq!(build_pyramid(&FloatImage::zeros(1280, 720), 3).len(), 3);
        assert_eq!(build_pyramid(&FloatImage::zeros(4, 4), 3).len(), 1);
        let p = build_pyramid(&FloatImage::zeros(33, 17), 9);
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(33, 17), (16, 8)]);
    }

    #[test]
    fn ramp_downsample_matches_block_average() {
        let (w, h) = (20usize, 16usize);
        let data: Vec<f32> = (0..w * h).map(|i| ((i % w) * 3 + (i / w) * 5) as f32).collect();
        let img = FloatImage::new(w, h, data.clone());
        let p = build_pyramid(&img, 2);
        let l1 = &p.levels[1];
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += data[(2 * y + dy) * w + 2 * x + dx];
                    }
                }
                assert!((l1.get(x, y) - s / 4.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn bilinear_examples() {
        let img = FloatImage::new(2, 2, vec![0.0, 0.0, 0.0, 100.0]);
        assert_eq!(sample_bilinear(&img, 0.5, 0.5), 25.0);
        assert_eq!(sample_bilinear(&img, 1.0, 1.0), 100.0);
        assert_eq!(sample_bilinear(&img, 0.0, 1.0), 0.0);
        // out-of-range clamps instead of faulting
        assert_eq!(sample_bilinear(&img, 5.0, -3.0), 0.0);
        assert_eq!(sample_bilinear(&img, 9.0, 9.0), 100.0);
        let c = FloatImage::new(3, 3, vec![4.5; 9]);
        assert_eq!(sample_bilinear(&c, 1.3, 0.7), 4.5);
    }

    proptest! {
        #[test]
        fn bilinear_closed_form(a in 0f32..255.0, b in 0f32..255.0, c in 0f32..255.0, d in 0f32..255.0,
                                fx in 0f32..1.0, fy in 0f32..1.0) {
            let img = FloatImage::new(2, 2, vec![a, b, c, d]);
            let want = a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy;
            prop_assert!((sample_bilinear(&img, fx, fy) - want).abs() < 1e-3);
            // lattice exactness
            prop_assert_eq!(sample_bilinear(&img, 1.0, 0.0), b);
            prop_assert_eq!(sample_bilinear(&img, 0.0, 1.0), c);
        }
    }
}
