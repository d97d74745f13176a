use std::ffi::{CStr, CString};
use std::ptr;

use marf::camera::Aabb;
use marf::field::{FieldConfig, RadianceField};
use marf::hashgrid::HashGridConfig;
use marf::synthetic::Orbit;
use marf::train::{save_checkpoint, Checkpoint, TrainConfig};
use marf_ffi::*;

fn image(w: usize, h: usize, c: usize, data: &[f32]) -> *mut MarfImage {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { marf_image_new(w, h, c, data.as_ptr(), &mut out) }, MarfStatus::Ok);
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(marf_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn psnr_through_handles() {
    let a = image(2, 2, 1, &[0.0; 4]);
    let b = image(2, 2, 1, &[0.1; 4]);
    let mut db = 0.0;
    assert_eq!(unsafe { marf_psnr(a, b, &mut db) }, MarfStatus::Ok);
    assert!((db - 20.0).abs() < 1e-5, "{db}");
    assert_eq!(unsafe { marf_psnr(a, a, &mut db) }, MarfStatus::Ok);
    assert!(db.is_infinite());
    let c = image(1, 4, 1, &[0.0; 4]);
    assert_eq!(unsafe { marf_psnr(a, c, &mut db) }, MarfStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    unsafe {
        marf_image_free(a);
        marf_image_free(b);
        marf_image_free(c);
    }
}

#[test]
fn image_constructor_validates() {
    let mut out = ptr::null_mut();
    let data = [2.0f32; 4];
    assert_eq!(
        unsafe { marf_image_new(2, 2, 1, data.as_ptr(), &mut out) },
        MarfStatus::InvalidArgument
    );
    assert!(out.is_null());
    assert_eq!(
        unsafe { marf_image_new(2, 2, 1, ptr::null(), &mut out) },
        MarfStatus::NullPointer
    );
    unsafe { marf_image_free(ptr::null_mut()) };
}

#[test]
fn filters_and_hashes() {
    let flat = image(8, 8, 1, &[0.5; 64]);
    let mut var = -1.0;
    assert_eq!(unsafe { marf_laplacian_variance(flat, &mut var) }, MarfStatus::Ok);
    assert_eq!(var, 0.0);
    let checker: Vec<f32> = (0..64).map(|i| ((i % 8 + i / 8) % 2) as f32).collect();
    let sharp = image(8, 8, 1, &checker);
    assert_eq!(unsafe { marf_laplacian_variance(sharp, &mut var) }, MarfStatus::Ok);
    assert!(var > 1.0);
    let (mut h1, mut h2) = (0u64, 0u64);
    assert_eq!(unsafe { marf_perceptual_hash(sharp, &mut h1) }, MarfStatus::Ok);
    assert_eq!(unsafe { marf_perceptual_hash(sharp, &mut h2) }, MarfStatus::Ok);
    assert_eq!(marf_hash_distance(h1, h2), 0);
    assert_eq!(marf_hash_distance(0, u64::MAX), 64);
    unsafe {
        marf_image_free(flat);
        marf_image_free(sharp);
    }
}

#[test]
fn uncertainty_of_replica_renders() {
    let a = image(2, 1, 1, &[0.2, 0.5]);
    let b = image(2, 1, 1, &[0.4, 0.5]);
    let replicas = [a as *const MarfImage, b as *const MarfImage];
    let (mut mean, mut sigma) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { marf_uncertainty(replicas.as_ptr(), 2, &mut mean, &mut sigma) },
        MarfStatus::Ok
    );
    let m = unsafe { std::slice::from_raw_parts(marf_image_data(mean), 2) };
    let s = unsafe { std::slice::from_raw_parts(marf_image_data(sigma), 2) };
    assert!((m[0] - 0.3).abs() < 1e-6 && m[1] == 0.5);
    assert!((s[0] - 0.1).abs() < 1e-6 && s[1] == 0.0);
    assert_eq!(
        unsafe { marf_uncertainty(replicas.as_ptr(), 0, &mut mean, &mut sigma) },
        MarfStatus::InvalidArgument
    );
    unsafe {
        for p in [a, b, mean, sigma] {
            marf_image_free(p);
        }
    }
}

#[test]
fn checkpoint_renders_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.marf");
    let mut config = TrainConfig::default();
    config.field = FieldConfig {
        grid: HashGridConfig {
            levels: 2,
            table_size: 64,
            ..HashGridConfig::default()
        },
        ..FieldConfig::default()
    };
    let field = RadianceField::<f32>::new(config.field, 3).unwrap();
    let ckpt = Checkpoint {
        config,
        step: 0,
        psnr: f64::NAN,
        field: field.clone(),
    };
    save_checkpoint(&ckpt, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { marf_field_load(c_path.as_ptr(), &mut handle) }, MarfStatus::Ok);

    let orbit = Orbit::default();
    let k = orbit.intrinsics.resized(16, 16);
    let pose = orbit.pose(0.3);
    let mut rotation = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            rotation[3 * r + c] = pose.rotation[(r, c)];
        }
    }
    let c_pose = MarfPose {
        rotation,
        center: [pose.translation.x, pose.translation.y, pose.translation.z],
    };
    let c_k = MarfIntrinsics {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
    };
    let aabb = Aabb::unit();
    let opts = MarfRenderOptions {
        samples: 32,
        background: [0.0; 3],
        aabb_min: aabb.min,
        aabb_max: aabb.max,
    };
    let mut img = ptr::null_mut();
    assert_eq!(unsafe { marf_render(handle, &c_k, &c_pose, &opts, &mut img) }, MarfStatus::Ok);
    let (mut w, mut h, mut ch) = (0, 0, 0);
    assert_eq!(unsafe { marf_image_shape(img, &mut w, &mut h, &mut ch) }, MarfStatus::Ok);
    assert_eq!((w, h, ch), (16, 16, 3));

    let expected = marf::render::render_view(
        &field,
        &k,
        &pose,
        &aabb,
        &marf::render::RenderOptions {
            samples: 32,
            ..Default::default()
        },
    )
    .unwrap()
    .image;
    let got = unsafe { std::slice::from_raw_parts(marf_image_data(img), w * h * ch) };
    assert_eq!(got, expected.data());

    let missing = CString::new(dir.path().join("none.marf").to_str().unwrap()).unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { marf_field_load(missing.as_ptr(), &mut other) }, MarfStatus::Io);
    assert!(last_error().contains("none.marf"));
    unsafe {
        marf_image_free(img);
        marf_field_free(handle);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/marf.h")).unwrap();
    for name in [
        "marf_last_error",
        "marf_field_load",
        "marf_render",
        "marf_psnr",
        "marf_laplacian_variance",
        "marf_perceptual_hash",
        "marf_uncertainty",
        "MARF_STATUS_NULL_POINTER",
        "typedef struct MarfField MarfField",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"marf.h\"\nint main(void) { MarfImage *img = 0; return marf_image_free(img), MARF_STATUS_OK; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(status.success());
}
