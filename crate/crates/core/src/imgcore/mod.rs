//! Image substrate: 8-bit and float rasters, PNM / Y4M ingestion, quad-view
//! merging, box-filter pyramids and bilinear sampling.

mod pnm;
mod pyramid;
mod y4m;

pub use pnm::{decode_pnm, encode_pgm, encode_ppm, load_image, save_image, save_ppm};
pub use pyramid::{build_pyramid, sample_bilinear, to_float, FloatImage, Pyramid, MIN_LEVEL_DIM};
pub use y4m::{write_y4m, Y4mReader};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dimensions {width}x{height}: {reason}")]
    Dimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("{camera} image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    CameraMismatch {
        camera: Camera,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

impl ImageError {
    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        ImageError::Parse {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImageError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Single-channel 8-bit raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions {
                width,
                height,
                reason: "width and height must be at least 1",
            });
        }
        if data.len() != width * height {
            return Err(ImageError::Dimensions {
                width,
                height,
                reason: "buffer length does not match width x height",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with `value`. Panics on a zero dimension.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut img = Self::filled(width, height, 0);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy of the `w`x`h` window at (`x0`, `y0`). The window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }

    fn blit(&mut self, src: &GrayImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            let dst = (y0 + y) * self.width + x0;
            self.data[dst..dst + src.width].copy_from_slice(src.row(y));
        }
    }
}

/// Camera feeding one tile of the quad view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    Front,
    Back,
    Left,
    Right,
}

impl Camera {
    pub const ALL: [Camera; 4] = [Camera::Front, Camera::Back, Camera::Left, Camera::Right];

    /// Tile position (column, row) in the 2x2 layout: front top-left,
    /// back top-right, left bottom-left, right bottom-right.
    pub fn tile(self) -> (usize, usize) {
        match self {
            Camera::Front => (0, 0),
            Camera::Back => (1, 0),
            Camera::Left => (0, 1),
            Camera::Right => (1, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Camera::Front => "front",
            Camera::Back => "back",
            Camera::Left => "left",
            Camera::Right => "right",
        }
    }
}

impl fmt::Display for Camera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The merged 2x2 four-camera frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadFrame {
    pub image: GrayImage,
    pub frame_index: u64,
    pub timestamp_us: u64,
}

impl QuadFrame {
    pub fn new(image: GrayImage, frame_index: u64, timestamp_us: u64) -> Result<Self, ImageError> {
        if image.width % 2 != 0 || image.height % 2 != 0 {
            return Err(ImageError::Dimensions {
                width: image.width,
                height: image.height,
                reason: "quad frame dimensions must be even",
            });
        }
        Ok(Self {
            image,
            frame_index,
            timestamp_us,
        })
    }

    pub fn tile_width(&self) -> usize {
        self.image.width / 2
    }

    pub fn tile_height(&self) -> usize {
        self.image.height / 2
    }

    /// Extracts one camera's tile.
    pub fn quadrant(&self, camera: Camera) -> GrayImage {
        let (tw, th) = (self.tile_width(), self.tile_height());
        let (cx, cy) = camera.tile();
        self.image.crop(cx * tw, cy * th, tw, th)
    }
}

/// Tiles four equally-sized camera images into one quad frame (index 0).
pub fn merge_quad(
    front: &GrayImage,
    back: &GrayImage,
    left: &GrayImage,
    right: &GrayImage,
) -> Result<QuadFrame, ImageError> {
    let (w, h) = (front.width, front.height);
    for (camera, img) in [(Camera::Back, back), (Camera::Left, left), (Camera::Right, right)] {
        if img.width != w || img.height != h {
            return Err(ImageError::CameraMismatch {
                camera,
                got_w: img.width,
                got_h: img.height,
                want_w: w,
                want_h: h,
            });
        }
    }
    let mut out = GrayImage::filled(2 * w, 2 * h, 0);
    for (camera, img) in [
        (Camera::Front, front),
        (Camera::Back, back),
        (Camera::Left, left),
        (Camera::Right, right),
    ] {
        let (cx, cy) = camera.tile();
        out.blit(img, cx * w, cy * h);
    }
    QuadFrame::new(out, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_smallest_case() {
        let t = |v| GrayImage::filled(1, 1, v);
        let q = merge_quad(&t(1), &t(2), &t(3), &t(4)).unwrap();
        assert_eq!(q.image.data(), &[1, 2, 3, 4]);
    }

    #[test]
    fn merge_720p_tiles() {
        let tile = GrayImage::from_fn(640, 360, |x, y| ((x + y) % 251) as u8);
        let q = merge_quad(&tile, &tile, &tile, &tile).unwrap();
        assert_eq!((q.image.width(), q.image.height()), (1280, 720));
        for cam in Camera::ALL {
            assert_eq!(q.quadrant(cam), tile);
        }
    }

    #[test]
    fn merge_rejects_mismatch_naming_camera() {
        let a = GrayImage::filled(4, 4, 0);
        let b = GrayImage::filled(4, 5, 0);
        let err = merge_quad(&a, &a, &b, &a).unwrap_err();
        assert!(err.to_string().starts_with("left image"), "{err}");
    }

    #[test]
    fn quadrants_round_trip() {
        let mk = |s: u8| GrayImage::from_fn(5, 3, move |x, y| s.wrapping_mul(31).wrapping_add((x * 7 + y) as u8));
        let (f, b, l, r) = (mk(1), mk(2), mk(3), mk(4));
        let q = merge_quad(&f, &b, &l, &r).unwrap();
        assert_eq!(q.quadrant(Camera::Front), f);
        assert_eq!(q.quadrant(Camera::Back), b);
        assert_eq!(q.quadrant(Camera::Left), l);
        assert_eq!(q.quadrant(Camera::Right), r);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::from_vec(0, 3, vec![]).is_err());
        assert!(GrayImage::from_vec(2, 2, vec![0; 3]).is_err());
        assert!(QuadFrame::new(GrayImage::filled(3, 2, 0), 0, 0).is_err());
    }
}
