//! ROI overlays for visual inspection: green = empty, red = moving,
//! yellow = latched, with the label drawn in a 5x7 bitmap font.

use super::{FrameVerdict, Occupancy};
use crate::imgcore::{encode_ppm, QuadFrame};
use crate::roi::{Rect, RoiConfig};

pub const GREEN: [u8; 3] = [0, 200, 0];
pub const RED: [u8; 3] = [220, 0, 0];
pub const YELLOW: [u8; 3] = [230, 210, 0];
const TEXT: [u8; 3] = [255, 255, 255];
const TEXT_BG: [u8; 3] = [0, 0, 0];

const BORDER: usize = 2;
const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        encode_ppm(self.width, self.height, &self.data)
    }
}

fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

/// Draws `text` with its top-left corner at (x, y) on a dark backing box,
/// clipped to `clip`.
fn draw_text(img: &mut RgbImage, x: usize, y: usize, text: &str, clip: &Rect) {
    let n = text.chars().count();
    let box_w = (n * (GLYPH_W + 1) + 1).min((clip.x + clip.w).saturating_sub(x));
    let box_h = (GLYPH_H + 2).min((clip.y + clip.h).saturating_sub(y));
    img.fill(x, y, box_w, box_h, TEXT_BG);
    for (k, c) in text.chars().enumerate() {
        let gx = x + 1 + k * (GLYPH_W + 1);
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                let (px, py) = (gx + col, y + 1 + row);
                if bits & (0x10 >> col) != 0 && px < x + box_w && py < y + box_h {
                    img.put(px, py, TEXT);
                }
            }
        }
    }
}

/// Colour overlay of a verdict. `class_names` resolves label ids; unknown
/// ids print as their number.
pub fn annotate_frame(frame: &QuadFrame, verdict: &FrameVerdict, config: &RoiConfig, class_names: &[String]) -> RgbImage {
    let (w, h) = (frame.image.width(), frame.image.height());
    let mut img = RgbImage {
        width: w,
        height: h,
        data: frame.image.data().iter().flat_map(|&v| [v, v, v]).collect(),
    };
    for roi in config.rois() {
        let r = roi.rect();
        let color = match verdict.occupied.get(&roi.index) {
            None => GREEN,
            Some(Occupancy::Moving) => RED,
            Some(Occupancy::Latched) => YELLOW,
        };
        let b = BORDER.min(r.w / 2).min(r.h / 2);
        img.fill(r.x, r.y, r.w, b, color);
        img.fill(r.x, r.y + r.h - b, r.w, b, color);
        img.fill(r.x, r.y, b, r.h, color);
        img.fill(r.x + r.w - b, r.y, b, r.h, color);
        if let Some(label) = verdict.labels.get(&roi.index) {
            let name = class_names
                .get(label.class_id as usize)
                .cloned()
                .unwrap_or_else(|| label.class_id.to_string());
            let text = format!("{name} {:.2}", label.confidence);
            draw_text(&mut img, r.x + b + 1, r.y + b + 1, &text, &r);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::GrayImage;
    use crate::pipeline::Label;
    use crate::roi::default_config;

    fn frame() -> QuadFrame {
        QuadFrame::new(GrayImage::filled(256, 256, 90), 1, 0).unwrap()
    }

    #[test]
    fn empty_verdict_all_green() {
        let config = default_config(256, 256).unwrap();
        let img = annotate_frame(&frame(), &FrameVerdict::empty(1), &config, &[]);
        for roi in config.rois() {
            let r = roi.rect();
            assert_eq!(img.pixel(r.x, r.y), GREEN);
            assert_eq!(img.pixel(r.x + r.w - 1, r.y + r.h - 1), GREEN);
            assert_eq!(img.pixel(r.x + r.w / 2, r.y + r.h / 2), [90, 90, 90]);
        }
    }

    #[test]
    fn modes_pick_colours_and_labels_draw_text() {
        let config = default_config(256, 256).unwrap();
        let mut v = FrameVerdict::empty(1);
        v.occupied.insert(3, Occupancy::Moving);
        v.occupied.insert(4, Occupancy::Latched);
        v.labels.insert(3, Label { class_id: 0, confidence: 0.5 });
        let img = annotate_frame(&frame(), &v, &config, &["vehicle".into()]);
        for roi in config.rois() {
            let want = match roi.index {
                3 => RED,
                4 => YELLOW,
                _ => GREEN,
            };
            assert_eq!(img.pixel(roi.x, roi.y + roi.h / 2), want, "roi {}", roi.index);
        }
        let r = config.roi(3).rect();
        let text_px = (r.y..r.y + 14)
            .flat_map(|y| (r.x..r.x + r.w).map(move |x| (x, y)))
            .filter(|&(x, y)| img.pixel(x, y) == TEXT)
            .count();
        assert!(text_px > 20);
        assert_eq!(img.to_ppm().len(), 15 + 256 * 256 * 3);
    }
}
