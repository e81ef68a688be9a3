//! C ABI for the brushwork toolkit.
//!
//! Conventions:
//! - Opaque handles: callers see pointers, never struct layouts.
//! - Every fallible function returns an `int32_t` status: `BW_OK` (0) on
//!   success, `BW_EXCLUDED` (1) where a value is legitimately absent, and
//!   negative codes on error. `bw_last_error()` returns a thread-local
//!   message for the most recent failure on the calling thread.
//! - Results come back through out-parameters.
//! - Buffers follow the two-call pattern: query the count, then fill.
//!
//! The generated header lives at `include/brushwork.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use brushwork::baseline::lbp_features;
use brushwork::checkpoint::Checkpoint;
use brushwork::entropy::{conditional_entropy, mann_whitney_u, ClassPosterior, EntropyOutcome};
use brushwork::error::Error;
use brushwork::model::{softmax3, Network};
use brushwork::pipeline::{grid_coords, Author, GrayImage};
use brushwork::tensor::Tensor;

pub const BW_OK: i32 = 0;
/// The conditional-entropy content gate excluded the patch.
pub const BW_EXCLUDED: i32 = 1;
pub const BW_ERR_NULL_ARGUMENT: i32 = -1;
pub const BW_ERR_USAGE: i32 = -2;
pub const BW_ERR_IO: i32 = -3;
pub const BW_ERR_FORMAT: i32 = -4;
pub const BW_ERR_NUMERIC: i32 = -5;
pub const BW_ERR_BUFFER_TOO_SMALL: i32 = -6;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn error_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => BW_ERR_IO,
        Error::Format { .. } => BW_ERR_FORMAT,
        Error::Numeric(_) | Error::Divergence { .. } => BW_ERR_NUMERIC,
        _ => BW_ERR_USAGE,
    }
}

fn fail(err: &Error) -> i32 {
    set_error(&err.to_string());
    error_code(err)
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bw_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Conditional human-robot entropy of a (blank, human, robot) posterior.
/// Writes the entropy in bits to `out_entropy` and returns `BW_OK`, or
/// returns `BW_EXCLUDED` when `p_human + p_robot <= tau`.
///
/// # Safety
/// `out_entropy` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn bw_conditional_entropy(
    p_blank: f64,
    p_human: f64,
    p_robot: f64,
    tau: f64,
    out_entropy: *mut f64,
) -> i32 {
    if out_entropy.is_null() {
        set_error("out_entropy is null");
        return BW_ERR_NULL_ARGUMENT;
    }
    let posterior = match ClassPosterior::new(p_blank, p_human, p_robot) {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    match conditional_entropy(&posterior, tau) {
        Ok(EntropyOutcome::Included(h)) => {
            *out_entropy = h;
            BW_OK
        }
        Ok(EntropyOutcome::Excluded) => BW_EXCLUDED,
        Err(e) => fail(&e),
    }
}

/// Mann-Whitney U test over two samples. Writes `min(U_a, U_b)` and the
/// two-sided p-value (exact for pooled sizes up to 12, a tie- and
/// continuity-corrected normal approximation beyond).
///
/// # Safety
/// `a` and `b` must point to `a_len` / `b_len` readable doubles; `out_u`
/// and `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bw_mann_whitney_u(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out_u: *mut f64,
    out_p: *mut f64,
) -> i32 {
    if a.is_null() || b.is_null() || out_u.is_null() || out_p.is_null() {
        set_error("null argument to bw_mann_whitney_u");
        return BW_ERR_NULL_ARGUMENT;
    }
    let sample_a = std::slice::from_raw_parts(a, a_len);
    let sample_b = std::slice::from_raw_parts(b, b_len);
    match mann_whitney_u(sample_a, sample_b) {
        Ok(result) => {
            *out_u = result.u;
            *out_p = result.p;
            BW_OK
        }
        Err(e) => fail(&e),
    }
}

/// 256-bin LBP histogram (L1-normalized) of a grayscale patch with
/// intensities in [0,1].
///
/// # Safety
/// `pixels` must point to `width * height` readable floats and
/// `out_histogram` to 256 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bw_lbp_features(
    pixels: *const f32,
    width: usize,
    height: usize,
    out_histogram: *mut f64,
) -> i32 {
    if pixels.is_null() || out_histogram.is_null() {
        set_error("null argument to bw_lbp_features");
        return BW_ERR_NULL_ARGUMENT;
    }
    let data = std::slice::from_raw_parts(pixels, width * height);
    match lbp_features(data, width, height) {
        Ok(hist) => {
            let out = std::slice::from_raw_parts_mut(out_histogram, 256);
            out.copy_from_slice(&hist.normalized);
            BW_OK
        }
        Err(e) => fail(&e),
    }
}

/// Number of extraction-grid patches for an image of the given size.
///
/// # Safety
/// `out_count` must point to a writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn bw_grid_patch_count(
    width: usize,
    height: usize,
    patch_size: usize,
    stride: usize,
    out_count: *mut usize,
) -> i32 {
    if out_count.is_null() {
        set_error("out_count is null");
        return BW_ERR_NULL_ARGUMENT;
    }
    match grid_coords(width, height, patch_size, stride) {
        Ok(coords) => {
            *out_count = coords.len();
            BW_OK
        }
        Err(e) => fail(&e),
    }
}

/// A loaded classifier checkpoint. Opaque to C.
pub struct BwModel {
    network: Network,
    input_size: usize,
}

/// Loads a checkpoint from disk into an opaque handle. Free it with
/// `bw_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bw_model_load(path: *const c_char, out_model: *mut *mut BwModel) -> i32 {
    if path.is_null() || out_model.is_null() {
        set_error("null argument to bw_model_load");
        return BW_ERR_NULL_ARGUMENT;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => Path::new(s),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return BW_ERR_USAGE;
        }
    };
    let checkpoint = match Checkpoint::load(path) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let network = match checkpoint.to_network() {
        Ok(n) => n,
        Err(e) => return fail(&e),
    };
    let model = Box::new(BwModel {
        input_size: network.config().input_size,
        network,
    });
    *out_model = Box::into_raw(model);
    BW_OK
}

/// Releases a model handle. Passing NULL is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by `bw_model_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bw_model_free(model: *mut BwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The square input edge length the model expects after patch resizing.
///
/// # Safety
/// `model` must be a live handle; `out_size` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bw_model_input_size(
    model: *const BwModel,
    out_size: *mut usize,
) -> i32 {
    if model.is_null() || out_size.is_null() {
        set_error("null argument to bw_model_input_size");
        return BW_ERR_NULL_ARGUMENT;
    }
    *out_size = (*model).input_size;
    BW_OK
}

/// One scored patch: grid position, argmax class (0 blank, 1 human,
/// 2 robot) and the softmax posterior.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct BwPatchScore {
    pub x: u32,
    pub y: u32,
    pub predicted_class: i32,
    pub p_blank: f64,
    pub p_human: f64,
    pub p_robot: f64,
}

/// Scores every extraction-grid patch of an image file with a loaded
/// model. Call with `capacity = 0` to query the patch count through
/// `out_count`, then call again with a buffer at least that large.
///
/// # Safety
/// `model` must be a live handle, `image_path` a NUL-terminated string,
/// `out_scores` writable for `capacity` entries (or NULL when `capacity`
/// is 0), and `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn bw_classify_image(
    model: *const BwModel,
    image_path: *const c_char,
    patch_size: usize,
    stride: usize,
    out_scores: *mut BwPatchScore,
    capacity: usize,
    out_count: *mut usize,
) -> i32 {
    if model.is_null() || image_path.is_null() || out_count.is_null() {
        set_error("null argument to bw_classify_image");
        return BW_ERR_NULL_ARGUMENT;
    }
    let path = match CStr::from_ptr(image_path).to_str() {
        Ok(s) => Path::new(s),
        Err(_) => {
            set_error("image_path is not valid UTF-8");
            return BW_ERR_USAGE;
        }
    };
    let model = &*model;

    let image = match GrayImage::load(path, "ffi".into(), Author::Human) {
        Ok(img) => img,
        Err(e) => return fail(&e),
    };
    let coords = match grid_coords(image.width(), image.height(), patch_size, stride) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    *out_count = coords.len();
    if capacity == 0 {
        return BW_OK;
    }
    if out_scores.is_null() {
        set_error("out_scores is null with nonzero capacity");
        return BW_ERR_NULL_ARGUMENT;
    }
    if capacity < coords.len() {
        set_error(&format!(
            "buffer holds {capacity} entries, need {}",
            coords.len()
        ));
        return BW_ERR_BUFFER_TOO_SMALL;
    }

    let out = std::slice::from_raw_parts_mut(out_scores, coords.len());
    let input = model.input_size;
    for (slot, &(x, y)) in out.iter_mut().zip(&coords) {
        let pixels = match image.crop(x, y, patch_size) {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let resized = if patch_size == input {
            pixels
        } else {
            brushwork::pipeline::resize_bilinear(&pixels, patch_size, patch_size, input, input)
        };
        let data: Vec<f64> = resized.iter().map(|&v| v as f64).collect();
        let batch = match Tensor::new(vec![1, 1, input, input], data) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let logits = match model.network.predict(&batch) {
            Ok(l) => l,
            Err(e) => return fail(&e),
        };
        let p = softmax3(&logits);
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        *slot = BwPatchScore {
            x: x as u32,
            y: y as u32,
            predicted_class: best as i32,
            p_blank: p[0],
            p_human: p[1],
            p_robot: p[2],
        };
    }
    BW_OK
}
