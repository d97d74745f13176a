//! C interface to `marf-core`.
//!
//! Every function returns a [`MarfStatus`]; results come back through out
//! pointers. Objects are opaque handles released with their `_free`
//! function. After a failure, [`marf_last_error`] describes it on the
//! calling thread until the next call that fails.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use marf::camera::{Aabb, Intrinsics, Pose, Vec3};
use marf::field::RadianceField;
use marf::filters::{laplacian_variance, perceptual_hash, PerceptualHash};
use marf::image::{load_image, save_image, ImageBuffer};
use marf::render::{render_view, RenderOptions};
use marf::train::{load_checkpoint, psnr};
use marf::uncertainty::{uncertainty_map, ReplicaStack};
use marf::Error;

/// Call outcome. Nonzero values are failures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Checkpoint = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// A trained radiance field.
pub struct MarfField(RadianceField<f32>);

/// A float image with 1 or 3 interleaved channels in `[0, 1]`.
pub struct MarfImage(ImageBuffer);

/// Pinhole camera: focal lengths and principal point in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MarfIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Camera-to-world transform: row-major rotation and camera centre. The
/// camera looks along its `+z` axis.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MarfPose {
    pub rotation: [f64; 9],
    pub center: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MarfRenderOptions {
    pub samples: u32,
    pub background: [f64; 3],
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MarfStatus {
    match e {
        Error::Io { .. } | Error::Network(_) => MarfStatus::Io,
        Error::Decode { .. } | Error::Format(_) => MarfStatus::Format,
        Error::Numerical(_) => MarfStatus::Numerical,
        Error::Checkpoint(_) => MarfStatus::Checkpoint,
        _ => MarfStatus::InvalidArgument,
    }
}

struct Failure(MarfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MarfStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MarfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MarfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {message}"));
            MarfStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MarfStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn marf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn marf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the field stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marf_field_load(path: *const c_char, out_field: *mut *mut MarfField) -> MarfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let slot = out(out_field, "out_field")?;
        *slot = boxed(MarfField(load_checkpoint(path)?.field));
        Ok(())
    })
}

/// # Safety
/// `field` must come from [`marf_field_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn marf_field_free(field: *mut MarfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Decodes a PNG or JPEG file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_image` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn marf_image_load(path: *const c_char, out_image: *mut *mut MarfImage) -> MarfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let slot = out(out_image, "out_image")?;
        *slot = boxed(MarfImage(load_image(path)?));
        Ok(())
    })
}

/// Copies `width * height * channels` interleaved floats into a new image.
///
/// # Safety
/// `data` must point to that many readable floats.
#[no_mangle]
pub unsafe extern "C" fn marf_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f32,
    out_image: *mut *mut MarfImage,
) -> MarfStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let slot = out(out_image, "out_image")?;
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Failure(MarfStatus::InvalidArgument, "image dimensions overflow".into()))?;
        let pixels = std::slice::from_raw_parts(data, len).to_vec();
        *slot = boxed(MarfImage(ImageBuffer::new(width, height, channels, pixels)?));
        Ok(())
    })
}

/// Writes an 8-bit PNG.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn marf_image_save(image: *const MarfImage, path: *const c_char) -> MarfStatus {
    guard(|| {
        let img = deref(image, "image")?;
        save_image(&img.0, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Width, height and channel count; any out pointer may be null.
///
/// # Safety
/// `image` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn marf_image_shape(
    image: *const MarfImage,
    width: *mut usize,
    height: *mut usize,
    channels: *mut usize,
) -> MarfStatus {
    guard(|| {
        let img = &deref(image, "image")?.0;
        for (p, v) in [(width, img.width()), (height, img.height()), (channels, img.channels())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Borrowed pointer to the interleaved pixels, valid while `image` lives.
///
/// # Safety
/// `image` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn marf_image_data(image: *const MarfImage) -> *const f32 {
    image.as_ref().map_or(std::ptr::null(), |i| i.0.data().as_ptr())
}

/// # Safety
/// `image` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn marf_image_free(image: *mut MarfImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Renders `field` from one camera.
///
/// # Safety
/// All pointers must be valid; `field` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn marf_render(
    field: *const MarfField,
    intrinsics: *const MarfIntrinsics,
    pose: *const MarfPose,
    options: *const MarfRenderOptions,
    out_image: *mut *mut MarfImage,
) -> MarfStatus {
    guard(|| {
        let field = &deref(field, "field")?.0;
        let k = deref(intrinsics, "intrinsics")?;
        let p = deref(pose, "pose")?;
        let o = deref(options, "options")?;
        let slot = out(out_image, "out_image")?;
        let k = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?;
        let rotation = nalgebra::Matrix3::from_row_slice(&p.rotation);
        let pose = Pose::new(rotation, Vec3::from(p.center))?;
        let aabb = Aabb {
            min: o.aabb_min,
            max: o.aabb_max,
        };
        aabb.validate()?;
        let opts = RenderOptions {
            samples: o.samples as usize,
            background: o.background,
            ..RenderOptions::default()
        };
        *slot = boxed(MarfImage(render_view(field, &k, &pose, &aabb, &opts)?.image));
        Ok(())
    })
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
///
/// # Safety
/// Both images must be live handles and `out_db` valid.
#[no_mangle]
pub unsafe extern "C" fn marf_psnr(a: *const MarfImage, b: *const MarfImage, out_db: *mut f64) -> MarfStatus {
    guard(|| {
        let v = psnr(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        *out(out_db, "out_db")? = v;
        Ok(())
    })
}

/// Variance of the Laplacian of the luma image, in `[0, 1]` intensity units.
///
/// # Safety
/// `image` must be a live handle and `out_variance` valid.
#[no_mangle]
pub unsafe extern "C" fn marf_laplacian_variance(image: *const MarfImage, out_variance: *mut f64) -> MarfStatus {
    guard(|| {
        let v = laplacian_variance(&deref(image, "image")?.0)?;
        *out(out_variance, "out_variance")? = v;
        Ok(())
    })
}

/// 64-bit perceptual hash.
///
/// # Safety
/// `image` must be a live handle and `out_hash` valid.
#[no_mangle]
pub unsafe extern "C" fn marf_perceptual_hash(image: *const MarfImage, out_hash: *mut u64) -> MarfStatus {
    guard(|| {
        let h = perceptual_hash(&deref(image, "image")?.0);
        *out(out_hash, "out_hash")? = h.0;
        Ok(())
    })
}

/// Hamming distance between two perceptual hashes.
#[no_mangle]
pub extern "C" fn marf_hash_distance(a: u64, b: u64) -> u32 {
    PerceptualHash(a).distance(PerceptualHash(b))
}

/// Pixel-wise mean and population standard deviation over `count`
/// single-channel renders of one viewpoint.
///
/// # Safety
/// `replicas` must point to `count` live image handles; out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn marf_uncertainty(
    replicas: *const *const MarfImage,
    count: usize,
    out_mean: *mut *mut MarfImage,
    out_sigma: *mut *mut MarfImage,
) -> MarfStatus {
    guard(|| {
        if replicas.is_null() {
            return Err(null("replicas"));
        }
        let slices = std::slice::from_raw_parts(replicas, count)
            .iter()
            .map(|&p| deref(p, "replica").map(|i| i.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_slot = out(out_mean, "out_mean")?;
        let sigma_slot = out(out_sigma, "out_sigma")?;
        let map = uncertainty_map(&ReplicaStack::new(slices)?);
        *mean_slot = boxed(MarfImage(map.mean));
        *sigma_slot = boxed(MarfImage(map.sigma));
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_set_the_message() {
        let mut v = 0.0;
        let s = unsafe { marf_psnr(std::ptr::null(), std::ptr::null(), &mut v) };
        assert_eq!(s, MarfStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(marf_last_error()) }.to_str().unwrap();
        assert!(msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(marf_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
