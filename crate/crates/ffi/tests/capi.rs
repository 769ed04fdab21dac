use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use quadwatch::classify::{save_weights, NetConfig, ToyNet};
use quadwatch::pipeline::{encode_message, FrameVerdict, Occupancy};
use quadwatch::synth::{render, stop_and_hold_scenario};
use quadwatch::{Mode, Session, Settings};
use quadwatch_ffi::*;

fn last_error() -> String {
    let p = qw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn new_session(w: usize, h: usize, mode: QwMode, weights: Option<&CString>) -> (QwStatus, *mut QwSession) {
    let mut s = ptr::null_mut();
    let wp = weights.map_or(ptr::null(), |c| c.as_ptr());
    let st = qw_session_new(w, h, mode, ptr::null(), wp, ptr::null(), ptr::null(), &mut s);
    (st, s)
}

#[test]
fn session_matches_rust_pipeline() {
    let spec = stop_and_hold_scenario(0);
    let (frames, _) = render(&spec).unwrap();
    let config = spec.roi_config().unwrap();
    let mut rust = Session::new(config, Settings::new(Mode::DetectTrack), None).unwrap();

    unsafe {
        let (st, s) = new_session(spec.width, spec.height, QwMode::DetectTrack, None);
        assert_eq!(st, QwStatus::Ok);
        let mut latched = 0;
        for f in &frames {
            let want = rust.push(f.clone()).unwrap();
            let mut out = QwVerdict::default();
            let mut has = true;
            let st = qw_session_push(
                s,
                f.image.data().as_ptr(),
                f.image.width(),
                f.image.height(),
                f.image.width(),
                f.frame_index,
                f.timestamp_us,
                &mut out,
                &mut has,
            );
            assert_eq!(st, QwStatus::Ok);
            assert_eq!(has, want.is_some());
            if let Some(v) = want {
                assert_eq!(out.frame_index, v.frame_index);
                for (roi, occ) in &v.occupied {
                    assert_eq!(out.occupied >> roi & 1, 1);
                    assert_eq!(out.latched >> roi & 1 == 1, *occ == Occupancy::Latched);
                }
                assert_eq!(out.occupied.count_ones() as usize, v.occupied.len());
                latched += (out.latched != 0) as usize;
            }
        }
        assert!(latched > 20, "{latched} latched frames");
        qw_session_free(s);
    }
}

#[test]
fn padded_stride_is_honoured() {
    let (w, h) = (256usize, 256usize);
    let stride = w + 13;
    let img = |shift: usize| {
        let mut buf = vec![0xEEu8; stride * h];
        for y in 0..h {
            for x in 0..w {
                buf[y * stride + x] = (((x + shift) * 7 + y * 3) % 200) as u8;
            }
        }
        buf
    };
    unsafe {
        let (st, s) = new_session(w, h, QwMode::Detect, None);
        assert_eq!(st, QwStatus::Ok);
        let mut out = QwVerdict::default();
        let mut has = false;
        for (i, buf) in [img(0), img(0)].iter().enumerate() {
            assert_eq!(qw_session_push(s, buf.as_ptr(), w, h, stride, i as u64, 0, &mut out, &mut has), QwStatus::Ok);
        }
        assert!(has);
        assert_eq!(out.occupied, 0);
        assert_eq!(
            qw_session_push(s, img(0).as_ptr(), w, h, w - 1, 2, 0, &mut out, &mut has),
            QwStatus::InvalidArgument
        );
        qw_session_free(s);
    }
}

#[test]
fn creation_errors_set_status_and_message() {
    unsafe {
        let (st, s) = new_session(1280, 720, QwMode::Full, None);
        assert_eq!(st, QwStatus::Config);
        assert!(s.is_null());
        assert!(last_error().contains("weights"));

        let (st, _) = new_session(100, 720, QwMode::Detect, None);
        assert_eq!(st, QwStatus::Config);

        let bad = CString::new("{\"diff_threshold\": \"many\"}").unwrap();
        let mut s = ptr::null_mut();
        let st = qw_session_new(256, 256, QwMode::Detect, ptr::null(), ptr::null(), bad.as_ptr(), ptr::null(), &mut s);
        assert_eq!(st, QwStatus::Config);

        let missing = CString::new("/nonexistent/net.tnw").unwrap();
        let (st, _) = new_session(256, 256, QwMode::Classify, Some(&missing));
        assert_eq!(st, QwStatus::Io);

        let st = qw_session_new(256, 256, QwMode::Detect, ptr::null(), ptr::null(), ptr::null(), ptr::null(), ptr::null_mut());
        assert_eq!(st, QwStatus::NullPointer);
    }
}

#[test]
fn parameter_overrides_are_applied() {
    let loose = CString::new("{\"diff_threshold\": 255}").unwrap();
    let (w, h) = (256usize, 256usize);
    let a = vec![0u8; w * h];
    let b = vec![200u8; w * h];
    unsafe {
        let mut s = ptr::null_mut();
        let st = qw_session_new(w, h, QwMode::Detect, ptr::null(), ptr::null(), loose.as_ptr(), ptr::null(), &mut s);
        assert_eq!(st, QwStatus::Ok);
        let mut out = QwVerdict::default();
        let mut has = false;
        qw_session_push(s, a.as_ptr(), w, h, w, 0, 0, &mut out, &mut has);
        assert_eq!(qw_session_push(s, b.as_ptr(), w, h, w, 1, 0, &mut out, &mut has), QwStatus::Ok);
        assert!(has);
        assert_eq!(out.occupied, 0);
        qw_session_free(s);
    }
}

#[test]
fn classifier_session_exposes_class_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.tnw");
    let net = ToyNet::new(NetConfig::default(), ToyNet::default_labels(), 4).unwrap();
    save_weights(&net, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let (st, s) = new_session(256, 256, QwMode::Classify, Some(&cpath));
        assert_eq!(st, QwStatus::Ok);
        assert_eq!(qw_session_class_count(s), net.num_classes());
        for (i, name) in net.labels().iter().enumerate() {
            assert_eq!(CStr::from_ptr(qw_session_class_name(s, i)).to_str().unwrap(), name);
        }
        assert!(qw_session_class_name(s, 99).is_null());

        let img: Vec<u8> = (0..256 * 256).map(|i| (i % 251) as u8).collect();
        let mut out = QwVerdict::default();
        let mut has = false;
        for k in 0..2 {
            assert_eq!(qw_session_push(s, img.as_ptr(), 256, 256, 256, k, 0, &mut out, &mut has), QwStatus::Ok);
        }
        assert_eq!(out.label_count, 12);
        assert!(out.labels[..12].windows(2).all(|p| p[0].roi < p[1].roi));
        qw_session_free(s);
    }
    assert_eq!(unsafe { qw_session_class_count(ptr::null()) }, 0);
}

#[test]
fn wire_roundtrip_and_errors() {
    let mut v = QwVerdict {
        frame_index: 77,
        occupied: 0b1000_0000_0101,
        latched: 0b100,
        label_count: 2,
        ..QwVerdict::default()
    };
    v.labels[0] = QwLabel { roi: 0, class_id: 3, confidence: 0.25 };
    v.labels[1] = QwLabel { roi: 11, class_id: 1, confidence: 1.0 };
    unsafe {
        let mut need = 0usize;
        assert_eq!(qw_wire_encode(&v, ptr::null_mut(), 0, &mut need), QwStatus::BufferTooSmall);
        assert_eq!(need, 18 + 2 * 6);
        let mut buf = vec![0u8; need];
        let mut written = 0usize;
        assert_eq!(qw_wire_encode(&v, buf.as_mut_ptr(), buf.len(), &mut written), QwStatus::Ok);
        assert_eq!(written, need);

        let mut rust = FrameVerdict::empty(77);
        rust.occupied.insert(0, Occupancy::Moving);
        rust.occupied.insert(2, Occupancy::Latched);
        rust.occupied.insert(11, Occupancy::Moving);
        rust.labels.insert(0, quadwatch::pipeline::Label { class_id: 3, confidence: 0.25 });
        rust.labels.insert(11, quadwatch::pipeline::Label { class_id: 1, confidence: 1.0 });
        assert_eq!(buf, encode_message(&rust).unwrap());

        let mut back = QwVerdict::default();
        assert_eq!(qw_wire_decode(buf.as_ptr(), buf.len(), &mut back), QwStatus::Ok);
        assert_eq!(back, v);

        buf[0] = b'X';
        assert_eq!(qw_wire_decode(buf.as_ptr(), buf.len(), &mut back), QwStatus::Wire);
        assert!(last_error().to_lowercase().contains("magic"));
        assert_eq!(qw_wire_decode(buf.as_ptr(), 5, &mut back), QwStatus::Wire);

        let mut bad = v;
        bad.latched = 0b10;
        assert_eq!(qw_wire_encode(&bad, buf.as_mut_ptr(), buf.len(), &mut written), QwStatus::InvalidArgument);
        let mut bad = v;
        bad.label_count = 13;
        assert_eq!(qw_wire_encode(&bad, buf.as_mut_ptr(), buf.len(), &mut written), QwStatus::InvalidArgument);
    }
}

#[test]
fn flop_counts() {
    assert_eq!(qw_flops_standard(3, 32, 64, 16), 9 * 32 * 64 * 256);
    assert_eq!(qw_flops_separable(3, 32, 64, 16), 9 * 32 * 256 + 32 * 64 * 256);
    let v = unsafe { CStr::from_ptr(qw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/quadwatch.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["qw_session_new", "qw_session_push", "qw_session_free", "qw_wire_encode", "qw_wire_decode", "QW_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"quadwatch.h\"\nint main(void) { QwVerdict v = {0}; QwSession *s = 0;\n\
         return (int)qw_session_new(256, 256, QW_MODE_DETECT, 0, 0, 0, 0, &s) + (int)v.label_count; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler; syntax check skipped"),
    }
}
