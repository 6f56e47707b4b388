//! C interface to the tracker and the overlap metrics.
//!
//! Every function returns a [`ThnStatus`]. On failure the message for the
//! calling thread is available from [`thn_last_error`] until the next call
//! that fails. Tracker handles are opaque; create them with
//! [`thn_tracker_open`] and release them with [`thn_tracker_free`].
//!
//! Boxes cross the boundary as top-left corner plus size, in pixels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use thn_core::config::RunConfig;
use thn_core::data::image::RgbImage;
use thn_core::eval::evaluate;
use thn_core::model::Network;
use thn_core::tracker::{SiameseTracker, Tracker};
use thn_core::trainer::load_params;
use thn_core::{BBox, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Checkpoint = 4,
    Io = 5,
    Dimension = 6,
    Domain = 7,
    Usage = 8,
    Eval = 9,
    Internal = 10,
}

impl From<&Error> for ThnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => ThnStatus::Config,
            Error::Checkpoint(_) => ThnStatus::Checkpoint,
            Error::Io { .. } | Error::Ingestion { .. } => ThnStatus::Io,
            Error::Dimension { .. } => ThnStatus::Dimension,
            Error::Domain(_) => ThnStatus::Domain,
            Error::Usage(_) => ThnStatus::Usage,
            Error::Eval(_) | Error::Training(_) => ThnStatus::Eval,
        }
    }
}

/// Axis-aligned box: top-left corner `(x, y)` and size `(w, h)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ThnBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<ThnBox> for BBox {
    fn from(b: ThnBox) -> Self {
        BBox::from_corner(b.x, b.y, b.w, b.h)
    }
}

impl From<BBox> for ThnBox {
    fn from(b: BBox) -> Self {
        let [x, y, w, h] = b.corner();
        ThnBox { x, y, w, h }
    }
}

/// Opaque tracker handle.
pub struct ThnTracker {
    inner: SiameseTracker<Network>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(ThnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ThnStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(ThnStatus::NullArgument, format!("`{what}` is null"))
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ThnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ThnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ThnStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ThnStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn image_arg(rgb: *const u8, width: usize, height: usize) -> Result<RgbImage, Failure> {
    if rgb.is_null() {
        return Err(null("rgb"));
    }
    if width == 0 || height == 0 {
        return Err(Failure(ThnStatus::InvalidArgument, format!("empty {width}x{height} frame")));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Failure(ThnStatus::InvalidArgument, "image size overflows".into()))?;
    let data = std::slice::from_raw_parts(rgb, len).to_vec();
    Ok(RgbImage::from_raw(width, height, data)?)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn thn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn thn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a network from `checkpoint` under the config file at `config`
/// (null selects the built-in defaults) and stores a new handle in `*out`.
///
/// # Safety
/// `config` is null or a NUL-terminated string; `checkpoint` is a
/// NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thn_tracker_open(
    config: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut ThnTracker,
) -> ThnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = if config.is_null() {
            RunConfig::default()
        } else {
            let path = path_arg(config, "config")?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::parse(&text)?
        };
        cfg.validate()?;
        let params = load_params(path_arg(checkpoint, "checkpoint")?, &cfg)?;
        let net = Network::new(cfg.model(), params)?;
        let inner = SiameseTracker::new(net, cfg.data.sizes.clone())?;
        *out = Box::into_raw(Box::new(ThnTracker { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `tracker` is null or came from [`thn_tracker_open`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn thn_tracker_free(tracker: *mut ThnTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Starts tracking `target` in an interleaved RGB frame of `width * height * 3` bytes.
///
/// # Safety
/// `tracker` is a live handle; `rgb` points to `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn thn_tracker_init(
    tracker: *mut ThnTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    target: ThnBox,
) -> ThnStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        let frame = image_arg(rgb, width, height)?;
        let target = BBox::from(target);
        target.validate()?;
        t.inner.init(&frame, &target)?;
        Ok(())
    })
}

/// Tracks into the next frame; writes the box and its confidence.
///
/// # Safety
/// As for [`thn_tracker_init`]; `out_box` is valid; `out_confidence` is
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn thn_tracker_update(
    tracker: *mut ThnTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    out_box: *mut ThnBox,
    out_confidence: *mut f64,
) -> ThnStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        if out_box.is_null() {
            return Err(null("out_box"));
        }
        let frame = image_arg(rgb, width, height)?;
        let (b, conf) = t.inner.update(&frame)?;
        *out_box = b.into();
        if let Some(c) = out_confidence.as_mut() {
            *c = conf;
        }
        Ok(())
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thn_iou(a: ThnBox, b: ThnBox, out: *mut f64) -> ThnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = thn_core::losses::iou(&a.into(), &b.into())?;
        Ok(())
    })
}

/// Success-plot AUC and precision at 20 px for `n` predicted and
/// ground-truth boxes.
///
/// # Safety
/// `pred` and `gt` point to `n` boxes each; the outputs are valid or null.
#[no_mangle]
pub unsafe extern "C" fn thn_success_auc(
    pred: *const ThnBox,
    gt: *const ThnBox,
    n: usize,
    out_auc: *mut f64,
    out_precision_20: *mut f64,
) -> ThnStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() {
            return Err(null(if pred.is_null() { "pred" } else { "gt" }));
        }
        if n == 0 {
            return Err(Failure(ThnStatus::InvalidArgument, "no boxes".into()));
        }
        let conv = |p: *const ThnBox| -> Vec<BBox> {
            std::slice::from_raw_parts(p, n).iter().map(|&b| b.into()).collect()
        };
        let (p, g) = (conv(pred), conv(gt));
        let curves = evaluate([(p.as_slice(), g.as_slice())])?;
        if let Some(a) = out_auc.as_mut() {
            *a = curves.auc;
        }
        if let Some(a) = out_precision_20.as_mut() {
            *a = curves.precision_at_20;
        }
        Ok(())
    })
}
