//! The 12 fixed regions of interest and their mapping to the 8 zones around
//! the vehicle.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::Camera;

pub const ROI_COUNT: usize = 12;
/// Smallest ROI side that still leaves room for corner features.
pub const MIN_ROI_SIDE: usize = 16;

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("roi config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("roi config schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("expected 12 rois, got {0}")]
    Count(usize),
    #[error("roi {index}: {rule}")]
    Rule { index: usize, rule: &'static str },
    #[error("region {0} is not covered by any roi")]
    UncoveredRegion(Region),
    #[error("frame {width}x{height}: {reason}")]
    FrameSize {
        width: usize,
        height: usize,
        reason: &'static str,
    },
}

/// Zone around the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    FrontLeft,
    FrontCenter,
    FrontRight,
    BackLeft,
    BackCenter,
    BackRight,
    LeftSide,
    RightSide,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::FrontLeft,
        Region::FrontCenter,
        Region::FrontRight,
        Region::BackLeft,
        Region::BackCenter,
        Region::BackRight,
        Region::LeftSide,
        Region::RightSide,
    ];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Axis-aligned rectangle in quad-frame pixels; membership is half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    #[inline]
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x as f32 && x < (self.x + self.w) as f32 && y >= self.y as f32 && y < (self.y + self.h) as f32
    }

    #[inline]
    pub fn contains_px(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub camera: Camera,
    pub region: Region,
}

impl Roi {
    pub fn rect(&self) -> Rect {
        Rect {
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
        }
    }
}

/// A validated set of exactly 12 ROIs, stored in index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct RoiConfig {
    frame_width: usize,
    frame_height: usize,
    rois: Vec<Roi>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    frame_width: usize,
    frame_height: usize,
    rois: Vec<Roi>,
}

impl TryFrom<RawConfig> for RoiConfig {
    type Error = RoiError;

    fn try_from(raw: RawConfig) -> Result<Self, RoiError> {
        RoiConfig::new(raw.frame_width, raw.frame_height, raw.rois)
    }
}

impl From<RoiConfig> for RawConfig {
    fn from(c: RoiConfig) -> Self {
        RawConfig {
            frame_width: c.frame_width,
            frame_height: c.frame_height,
            rois: c.rois,
        }
    }
}

impl RoiConfig {
    /// Validates and builds a config. Errors name the offending ROI and rule.
    pub fn new(frame_width: usize, frame_height: usize, mut rois: Vec<Roi>) -> Result<Self, RoiError> {
        if frame_width < 2 || frame_height < 2 || frame_width % 2 != 0 || frame_height % 2 != 0 {
            return Err(RoiError::FrameSize {
                width: frame_width,
                height: frame_height,
                reason: "quad frame dimensions must be even and non-zero",
            });
        }
        if rois.len() != ROI_COUNT {
            return Err(RoiError::Count(rois.len()));
        }
        let mut seen = [false; ROI_COUNT];
        for r in &rois {
            if r.index >= ROI_COUNT {
                return Err(RoiError::Rule {
                    index: r.index,
                    rule: "index must be in 0..=11",
                });
            }
            if std::mem::replace(&mut seen[r.index], true) {
                return Err(RoiError::Rule {
                    index: r.index,
                    rule: "duplicate index",
                });
            }
        }
        let (tw, th) = (frame_width / 2, frame_height / 2);
        for r in &rois {
            if r.w < MIN_ROI_SIDE || r.h < MIN_ROI_SIDE {
                return Err(RoiError::Rule {
                    index: r.index,
                    rule: "width and height must be at least 16",
                });
            }
            let (cx, cy) = r.camera.tile();
            let (qx, qy) = (cx * tw, cy * th);
            if r.x < qx || r.y < qy || r.x + r.w > qx + tw || r.y + r.h > qy + th {
                return Err(RoiError::Rule {
                    index: r.index,
                    rule: "rect must lie inside its camera's quadrant",
                });
            }
        }
        for region in Region::ALL {
            if !rois.iter().any(|r| r.region == region) {
                return Err(RoiError::UncoveredRegion(region));
            }
        }
        rois.sort_by_key(|r| r.index);
        Ok(Self {
            frame_width,
            frame_height,
            rois,
        })
    }

    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn frame_height(&self) -> usize {
        self.frame_height
    }

    pub fn rois(&self) -> &[Roi] {
        &self.rois
    }

    pub fn roi(&self, index: usize) -> &Roi {
        &self.rois[index]
    }

    /// Index of the ROI containing the point, if any. The default layout has
    /// disjoint ROIs; for hand-written overlapping configs the lowest index wins.
    pub fn locate(&self, x: f32, y: f32) -> Option<usize> {
        self.rois.iter().position(|r| r.rect().contains(x, y))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RoiError> {
        // Unwrap the validation error rather than leaving it stringified inside serde's.
        let raw: RawConfig = serde_json::from_str(text)?;
        RoiConfig::try_from(raw)
    }
}

pub fn load_roi_config(path: impl AsRef<Path>) -> Result<RoiConfig, RoiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RoiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RoiConfig::from_json(&text)
}

/// Membership predicate for one ROI.
pub fn roi_mask(config: &RoiConfig, index: usize) -> impl Fn(usize, usize) -> bool {
    let rect = config.roi(index).rect();
    move |x, y| rect.contains_px(x, y)
}

/// Image-left, centre and image-right thirds of each camera mapped to zones.
/// The back camera faces rearwards, so its image-left is the vehicle's right;
/// side cameras see the rear corner on one end and the front corner on the other.
const REGION_LAYOUT: [(Camera, [Region; 3]); 4] = [
    (Camera::Front, [Region::FrontLeft, Region::FrontCenter, Region::FrontRight]),
    (Camera::Back, [Region::BackRight, Region::BackCenter, Region::BackLeft]),
    (Camera::Left, [Region::BackLeft, Region::LeftSide, Region::FrontLeft]),
    (Camera::Right, [Region::FrontRight, Region::RightSide, Region::BackRight]),
];

/// Three ROIs per camera tile: the left, centre and right thirds of the
/// lower half of the tile. Indices run front 0-2, back 3-5, left 6-8, right 9-11.
pub fn default_config(frame_width: usize, frame_height: usize) -> Result<RoiConfig, RoiError> {
    if frame_width < 128 || frame_height < 128 || frame_width % 2 != 0 || frame_height % 2 != 0 {
        return Err(RoiError::FrameSize {
            width: frame_width,
            height: frame_height,
            reason: "default layout needs even dimensions of at least 128x128",
        });
    }
    let (tw, th) = (frame_width / 2, frame_height / 2);
    let band_y = th / 2;
    let band_h = th - band_y;
    let mut rois = Vec::with_capacity(ROI_COUNT);
    for (ci, (camera, regions)) in REGION_LAYOUT.iter().enumerate() {
        let (cx, cy) = camera.tile();
        for (k, region) in regions.iter().enumerate() {
            let x0 = k * tw / 3;
            let x1 = (k + 1) * tw / 3;
            rois.push(Roi {
                index: ci * 3 + k,
                x: cx * tw + x0,
                y: cy * th + band_y,
                w: x1 - x0,
                h: band_h,
                camera: *camera,
                region: *region,
            });
        }
    }
    RoiConfig::new(frame_width, frame_height, rois)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_1280x720_layout() {
        let c = default_config(1280, 720).unwrap();
        assert_eq!(c.rois().len(), 12);
        // layout oracle: thirds of a 640 px tile are [0,213), [213,426), [426,640)
        let widths: Vec<_> = c.rois().iter().map(|r| r.w).collect();
        assert_eq!(widths, [213, 213, 214].repeat(4));
        for r in c.rois() {
            assert!(r.w == 213 || r.w == 214);
            assert_eq!(r.h, 180);
        }
        assert_eq!(c.roi(0).rect(), Rect { x: 0, y: 180, w: 213, h: 180 });
        assert_eq!(c.roi(11).rect(), Rect { x: 640 + 426, y: 540, w: 214, h: 180 });
    }

    #[test]
    fn default_covers_every_region_and_round_trips() {
        for (w, h) in [(128, 128), (1280, 720), (640, 480), (202, 330)] {
            let c = default_config(w, h).unwrap();
            for region in Region::ALL {
                assert!(c.rois().iter().any(|r| r.region == region));
            }
            assert_eq!(RoiConfig::from_json(&c.to_json()).unwrap(), c);
        }
        assert!(default_config(126, 128).is_err());
        assert!(default_config(129, 128).is_err());
    }

    #[test]
    fn default_rois_partition_disjointly() {
        let c = default_config(256, 192).unwrap();
        for y in 0..192 {
            for x in 0..256 {
                let hits = (0..12).filter(|&i| roi_mask(&c, i)(x, y)).count();
                assert!(hits <= 1);
            }
        }
    }

    #[test]
    fn half_open_membership() {
        let c = default_config(1280, 720).unwrap();
        let r = c.roi(4).rect();
        let m = roi_mask(&c, 4);
        assert!(m(r.x, r.y));
        assert!(!m(r.x + r.w, r.y));
        assert!(!m(r.x, r.y + r.h));
        assert!(m(r.x + r.w - 1, r.y + r.h - 1));
    }

    #[test]
    fn mask_matches_rect_arithmetic_exhaustively() {
        let c = default_config(128, 128).unwrap();
        for i in 0..12 {
            let r = c.roi(i);
            let m = roi_mask(&c, i);
            for y in 0..64 {
                for x in 0..64 {
                    let inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
                    assert_eq!(m(x, y), inside);
                }
            }
        }
    }

    fn json_with(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(&default_config(1280, 720).unwrap().to_json()).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn load_rejects_quadrant_crossing() {
        let text = json_with(|v| v["rois"][2]["x"] = 500.into());
        match RoiConfig::from_json(&text) {
            Err(RoiError::Rule { index: 2, rule }) => assert!(rule.contains("quadrant")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_rejects_eleven() {
        let text = json_with(|v| {
            v["rois"].as_array_mut().unwrap().pop();
        });
        let err = RoiConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("expected 12"), "{err}");
    }

    #[test]
    fn load_rejects_duplicates_small_and_uncovered() {
        let text = json_with(|v| v["rois"][5]["index"] = 4.into());
        assert!(matches!(RoiConfig::from_json(&text), Err(RoiError::Rule { index: 4, rule: "duplicate index" })));
        let text = json_with(|v| v["rois"][7]["w"] = 15.into());
        assert!(matches!(RoiConfig::from_json(&text), Err(RoiError::Rule { index: 7, .. })));
        let text = json_with(|v| v["rois"][7]["region"] = "left_side".into());
        // left_side is still covered by roi 7 itself; break right_side instead
        assert!(RoiConfig::from_json(&text).is_ok());
        let text = json_with(|v| v["rois"][10]["region"] = "front_right".into());
        assert!(matches!(RoiConfig::from_json(&text), Err(RoiError::UncoveredRegion(Region::RightSide))));
        let text = json_with(|v| v["rois"][0]["camera"] = "roof".into());
        assert!(matches!(RoiConfig::from_json(&text), Err(RoiError::Schema(_))));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roi.json");
        let c = default_config(1280, 720).unwrap();
        std::fs::write(&p, c.to_json()).unwrap();
        assert_eq!(load_roi_config(&p).unwrap(), c);
        assert!(matches!(load_roi_config(dir.path().join("missing.json")), Err(RoiError::Io { .. })));
    }
}
