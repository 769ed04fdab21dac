//! Adjacent-frame differencing and mask morphology.

use super::DetectError;
use crate::imgcore::GrayImage;

/// Binary per-pixel motion flags (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MotionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Mask as a black/white image for dumping.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_vec(self.width, self.height, self.data.iter().map(|&v| v * 255).collect())
            .expect("mask dimensions are valid")
    }
}

fn check_size(a: (usize, usize), b: (usize, usize)) -> Result<(), DetectError> {
    if a != b {
        return Err(DetectError::DimensionMismatch {
            left: a,
            right: b,
        });
    }
    Ok(())
}

/// Sets a pixel iff `|cur - prev| > threshold`.
pub fn frame_diff(prev: &GrayImage, cur: &GrayImage, threshold: u8) -> Result<MotionMask, DetectError> {
    check_size((prev.width(), prev.height()), (cur.width(), cur.height()))?;
    let data = prev
        .data()
        .iter()
        .zip(cur.data())
        .map(|(&a, &b)| (a.abs_diff(b) > threshold) as u8)
        .collect();
    Ok(MotionMask {
        width: cur.width(),
        height: cur.height(),
        data,
    })
}

/// 1-D running max of a binary line with half-width `r`, via prefix counts.
fn dilate_line(src: &[u8], dst: &mut [u8], r: usize, prefix: &mut Vec<u32>) {
    let n = src.len();
    prefix.clear();
    prefix.push(0);
    let mut acc = 0u32;
    for &v in src {
        acc += v as u32;
        prefix.push(acc);
    }
    for (i, d) in dst.iter_mut().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(n);
        *d = (prefix[hi] > prefix[lo]) as u8;
    }
}

/// Binary dilation with a (2r+1)x(2r+1) square, clipped at the borders.
pub fn dilate_mask(mask: &MotionMask, radius: usize) -> MotionMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let mut prefix = Vec::with_capacity(w.max(h) + 1);
    let mut horiz = vec![0u8; w * h];
    for y in 0..h {
        dilate_line(&mask.data[y * w..(y + 1) * w], &mut horiz[y * w..(y + 1) * w], radius, &mut prefix);
    }
    let mut out = vec![0u8; w * h];
    let mut col = vec![0u8; h];
    let mut col_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = horiz[y * w + x];
        }
        dilate_line(&col, &mut col_out, radius, &mut prefix);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    MotionMask {
        width: w,
        height: h,
        data: out,
    }
}

/// Element-wise product of image and mask.
pub fn mask_apply(img: &GrayImage, mask: &MotionMask) -> Result<GrayImage, DetectError> {
    check_size((img.width(), img.height()), (mask.width, mask.height))?;
    let data = img.data().iter().zip(&mask.data).map(|(&p, &m)| p * m).collect();
    Ok(GrayImage::from_vec(img.width(), img.height(), data).expect("same dimensions"))
}
