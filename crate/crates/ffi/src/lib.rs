//! C ABI over the quadwatch pipeline.
//!
//! Sessions are opaque handles. Every fallible call returns a [`QwStatus`];
//! on failure a message is kept per thread and read back with
//! [`qw_last_error`]. Verdicts cross the boundary as the fixed-size
//! [`QwVerdict`] struct or as QWD1 wire bytes.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use quadwatch::classify::{flops_separable, flops_standard, load_weights, ClassifyError, ConvSpec};
use quadwatch::imgcore::{GrayImage, ImageError};
use quadwatch::pipeline::{decode_message, encode_message, FrameVerdict, Label, Occupancy, PipelineError, WireError};
use quadwatch::roi::{default_config, RoiConfig, RoiError, ROI_COUNT};
use quadwatch::{Mode, QuadFrame, Session, Settings};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Image = 3,
    Config = 4,
    Pipeline = 5,
    Classify = 6,
    Wire = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QwMode {
    Detect = 0,
    DetectTrack = 1,
    Classify = 2,
    Full = 3,
}

impl From<QwMode> for Mode {
    fn from(m: QwMode) -> Mode {
        match m {
            QwMode::Detect => Mode::DetectOnly,
            QwMode::DetectTrack => Mode::DetectTrack,
            QwMode::Classify => Mode::ClassifyOnly,
            QwMode::Full => Mode::Full,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QwLabel {
    pub roi: u8,
    pub class_id: u8,
    pub confidence: f32,
}

/// One frame's verdict. Bit `i` of `occupied` is ROI `i`; `latched` is a
/// subset of `occupied`. The first `label_count` entries of `labels` are
/// valid, in ascending ROI order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QwVerdict {
    pub frame_index: u64,
    pub occupied: u16,
    pub latched: u16,
    pub label_count: u8,
    pub labels: [QwLabel; 12],
}

/// Opaque pipeline session.
pub struct QwSession {
    inner: Session,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(QwStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(QwStatus::InvalidArgument, msg.into())
    }
}

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Image(_) => QwStatus::Image,
            PipelineError::Classify(_) => QwStatus::Classify,
            PipelineError::Wire(_) => QwStatus::Wire,
            PipelineError::Io(_) => QwStatus::Io,
            PipelineError::Config(_) => QwStatus::Config,
            _ => QwStatus::Pipeline,
        };
        Fail(status, e.to_string())
    }
}

impl From<ImageError> for Fail {
    fn from(e: ImageError) -> Self {
        Fail(QwStatus::Image, e.to_string())
    }
}

impl From<RoiError> for Fail {
    fn from(e: RoiError) -> Self {
        Fail(QwStatus::Config, e.to_string())
    }
}

impl From<ClassifyError> for Fail {
    fn from(e: ClassifyError) -> Self {
        let status = if matches!(e, ClassifyError::Io { .. }) { QwStatus::Io } else { QwStatus::Classify };
        Fail(status, e.to_string())
    }
}

impl From<WireError> for Fail {
    fn from(e: WireError) -> Self {
        Fail(QwStatus::Wire, e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QwStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QwStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Fail::arg(format!("{what} is not valid UTF-8")))
}

fn to_c(v: &FrameVerdict) -> Result<QwVerdict, Fail> {
    let mut out = QwVerdict {
        frame_index: v.frame_index,
        ..QwVerdict::default()
    };
    for (&roi, &occ) in &v.occupied {
        if roi >= ROI_COUNT {
            return Err(Fail(QwStatus::Pipeline, format!("roi {roi} out of range")));
        }
        out.occupied |= 1 << roi;
        if occ == Occupancy::Latched {
            out.latched |= 1 << roi;
        }
    }
    for (i, (&roi, l)) in v.labels.iter().enumerate() {
        if i >= out.labels.len() || roi >= ROI_COUNT {
            return Err(Fail(QwStatus::Pipeline, "too many labels".into()));
        }
        out.labels[i] = QwLabel {
            roi: roi as u8,
            class_id: l.class_id,
            confidence: l.confidence,
        };
        out.label_count += 1;
    }
    Ok(out)
}

fn from_c(v: &QwVerdict) -> Result<FrameVerdict, Fail> {
    if v.occupied >> ROI_COUNT != 0 || v.latched >> ROI_COUNT != 0 {
        return Err(Fail::arg("bits above ROI 11 set"));
    }
    if v.latched & !v.occupied != 0 {
        return Err(Fail::arg("latched ROI not occupied"));
    }
    let count = v.label_count as usize;
    if count > v.labels.len() {
        return Err(Fail::arg("label_count exceeds 12"));
    }
    let occupied = (0..ROI_COUNT)
        .filter(|i| v.occupied >> i & 1 == 1)
        .map(|i| (i, if v.latched >> i & 1 == 1 { Occupancy::Latched } else { Occupancy::Moving }))
        .collect();
    let mut labels = BTreeMap::new();
    for l in &v.labels[..count] {
        let label = Label {
            class_id: l.class_id,
            confidence: l.confidence,
        };
        if labels.insert(l.roi as usize, label).is_some() {
            return Err(Fail::arg(format!("duplicate label for roi {}", l.roi)));
        }
    }
    Ok(FrameVerdict {
        frame_index: v.frame_index,
        occupied,
        labels,
    })
}

/// Last error message on this thread, or NULL. Valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn qw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a session for `width` x `height` quad frames.
///
/// `roi_json`, `weights_path`, `detect_json` and `track_json` may be NULL.
/// Without `roi_json` the built-in layout is used. The JSON parameter
/// objects override individual fields of the defaults.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qw_session_new(
    width: usize,
    height: usize,
    mode: QwMode,
    roi_json: *const c_char,
    weights_path: *const c_char,
    detect_json: *const c_char,
    track_json: *const c_char,
    out: *mut *mut QwSession,
) -> QwStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(QwStatus::NullPointer, "out is NULL".into()));
        }
        *out = ptr::null_mut();
        let config = match opt_str(roi_json, "roi_json")? {
            Some(j) => RoiConfig::from_json(j)?,
            None => default_config(width, height)?,
        };
        if (config.frame_width(), config.frame_height()) != (width, height) {
            return Err(Fail(QwStatus::Config, "roi layout does not match frame size".into()));
        }
        let mut settings = Settings::new(mode.into());
        if let Some(j) = opt_str(detect_json, "detect_json")? {
            settings.detect = serde_json::from_str(j).map_err(|e| Fail(QwStatus::Config, e.to_string()))?;
        }
        if let Some(j) = opt_str(track_json, "track_json")? {
            settings.track = serde_json::from_str(j).map_err(|e| Fail(QwStatus::Config, e.to_string()))?;
        }
        let net = match opt_str(weights_path, "weights_path")? {
            Some(p) if Mode::from(mode).classifies() => Some(load_weights(p)?),
            _ => None,
        };
        let inner = Session::new(config, settings, net)?;
        let names = inner
            .class_names()
            .into_iter()
            .map(|n| CString::new(n).map_err(|_| Fail(QwStatus::Classify, "class name contains NUL".into())))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(QwSession { inner, names }));
        Ok(())
    })
}

/// Frees a session. NULL is ignored.
///
/// # Safety
/// `session` must come from [`qw_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qw_session_free(session: *mut QwSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Pushes one 8-bit grayscale frame (`stride` bytes per row). The first
/// frame of a session produces no verdict; `has_verdict` reports whether
/// `out` was written.
///
/// # Safety
/// `pixels` must hold `stride * height` bytes; `out` and `has_verdict`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn qw_session_push(
    session: *mut QwSession,
    pixels: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    frame_index: u64,
    timestamp_us: u64,
    out: *mut QwVerdict,
    has_verdict: *mut bool,
) -> QwStatus {
    guard(|| {
        if session.is_null() || pixels.is_null() || out.is_null() || has_verdict.is_null() {
            return Err(Fail(QwStatus::NullPointer, "NULL argument".into()));
        }
        *has_verdict = false;
        if stride < width {
            return Err(Fail::arg("stride smaller than width"));
        }
        let len = stride.checked_mul(height).ok_or_else(|| Fail::arg("frame size overflows"))?;
        let src = std::slice::from_raw_parts(pixels, len);
        let mut data = Vec::with_capacity(width * height);
        for row in src.chunks_exact(stride.max(1)).take(height) {
            data.extend_from_slice(&row[..width]);
        }
        let frame = QuadFrame::new(GrayImage::from_vec(width, height, data)?, frame_index, timestamp_us)?;
        let s = &mut *session;
        if let Some(v) = s.inner.push(frame)? {
            *out = to_c(&v)?;
            *has_verdict = true;
        }
        Ok(())
    })
}

/// Number of classifier classes (0 without a classifier).
///
/// # Safety
/// `session` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qw_session_class_count(session: *const QwSession) -> usize {
    session.as_ref().map_or(0, |s| s.names.len())
}

/// Name of class `class_id`, or NULL. Owned by the session.
///
/// # Safety
/// `session` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qw_session_class_name(session: *const QwSession, class_id: usize) -> *const c_char {
    session
        .as_ref()
        .and_then(|s| s.names.get(class_id))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Encodes a verdict as a QWD1 message. `written` receives the message
/// length; when `cap` is too small nothing is written to `buf`, the status
/// is `BufferTooSmall` and `written` holds the required size.
///
/// # Safety
/// `verdict` and `written` must be valid; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn qw_wire_encode(
    verdict: *const QwVerdict,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> QwStatus {
    guard(|| {
        if verdict.is_null() || written.is_null() {
            return Err(Fail(QwStatus::NullPointer, "NULL argument".into()));
        }
        let bytes = encode_message(&from_c(&*verdict)?)?;
        *written = bytes.len();
        if bytes.len() > cap || buf.is_null() {
            return Err(Fail(QwStatus::BufferTooSmall, format!("need {} bytes", bytes.len())));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Decodes one complete QWD1 message.
///
/// # Safety
/// `buf` must hold `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qw_wire_decode(buf: *const u8, len: usize, out: *mut QwVerdict) -> QwStatus {
    guard(|| {
        if buf.is_null() || out.is_null() {
            return Err(Fail(QwStatus::NullPointer, "NULL argument".into()));
        }
        let v = decode_message(std::slice::from_raw_parts(buf, len))?;
        *out = to_c(&v)?;
        Ok(())
    })
}

/// Multiply-accumulates of a standard `d_k` x `d_k` convolution producing
/// `n_out` maps of side `d_f` from `n_in` channels.
#[no_mangle]
pub extern "C" fn qw_flops_standard(d_k: usize, n_in: usize, n_out: usize, d_f: usize) -> u64 {
    flops_standard(&spec(d_k, n_in, n_out, d_f))
}

/// Multiply-accumulates of the depthwise plus pointwise factorisation.
#[no_mangle]
pub extern "C" fn qw_flops_separable(d_k: usize, n_in: usize, n_out: usize, d_f: usize) -> u64 {
    flops_separable(&spec(d_k, n_in, n_out, d_f))
}

fn spec(d_k: usize, n_in: usize, n_out: usize, d_f: usize) -> ConvSpec {
    ConvSpec {
        d_k,
        n_in,
        n_out,
        d_f,
        stride: 1,
        padding: d_k / 2,
    }
}
