//! Byte-exact check of the annotated frame renderer. Regenerate the golden
//! file with `QUADWATCH_BLESS=1 cargo test --test annotate_golden`.

use std::path::PathBuf;

use quadwatch::classify::ToyNet;
use quadwatch::imgcore::{GrayImage, QuadFrame};
use quadwatch::pipeline::{annotate_frame, FrameVerdict, Label, Occupancy, GREEN, RED, YELLOW};
use quadwatch::roi::default_config;

fn fixture() -> (QuadFrame, FrameVerdict) {
    let img = GrayImage::from_fn(128, 128, |x, y| ((x * 2 + y) % 256) as u8);
    let frame = QuadFrame::new(img, 42, 0).unwrap();
    let mut v = FrameVerdict::empty(42);
    v.occupied.insert(0, Occupancy::Moving);
    v.occupied.insert(4, Occupancy::Latched);
    v.labels.insert(0, Label { class_id: 1, confidence: 0.875 });
    v.labels.insert(4, Label { class_id: 3, confidence: 0.5 });
    (frame, v)
}

#[test]
fn annotated_frame_matches_golden() {
    let (frame, v) = fixture();
    let config = default_config(128, 128).unwrap();
    let img = annotate_frame(&frame, &v, &config, &ToyNet::default_labels());
    let bytes = img.to_ppm();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/annotate_golden.ppm");
    if std::env::var_os("QUADWATCH_BLESS").is_some() {
        std::fs::write(&golden, &bytes).unwrap();
    }
    let want = std::fs::read(&golden).expect("golden file; run with QUADWATCH_BLESS=1 to create it");
    assert!(bytes == want, "annotated frame differs from {}", golden.display());

    // spot checks independent of the golden bytes
    let corner = |i: usize| {
        let r = config.roi(i).rect();
        img.pixel(r.x, r.y)
    };
    assert_eq!(corner(0), RED);
    assert_eq!(corner(4), YELLOW);
    assert_eq!(corner(7), GREEN);
}
