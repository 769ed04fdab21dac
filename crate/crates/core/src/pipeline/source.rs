//! Frame sources: a directory of PGM/PPM files (sorted by name) or a Y4M file.

use std::path::{Path, PathBuf};

use crate::imgcore::{load_image, ImageError, QuadFrame, Y4mReader};

pub type FrameSource = Box<dyn Iterator<Item = Result<QuadFrame, ImageError>> + Send>;

const FRAME_PERIOD_US: u64 = 1_000_000 / 30;

fn io_err(path: &Path, e: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Opens a frame directory or `.y4m` file. Directory frames are numbered
/// from 0 in file-name order and stamped at 30 fps.
pub fn open_source(path: impl AsRef<Path>) -> Result<FrameSource, ImageError> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("pgm" | "ppm")
                )
            })
            .collect();
        files.sort();
        Ok(Box::new(files.into_iter().enumerate().map(|(i, p)| {
            QuadFrame::new(load_image(&p)?, i as u64, i as u64 * FRAME_PERIOD_US)
        })))
    } else {
        Ok(Box::new(Y4mReader::open(path)?))
    }
}

/// Reads a whole source into memory.
pub fn load_frames(path: impl AsRef<Path>) -> Result<Vec<QuadFrame>, ImageError> {
    open_source(path)?.collect()
}
