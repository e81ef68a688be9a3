//! Exercises the C ABI surface exactly as a foreign caller would: through
//! raw pointers, status codes and the two-call buffer pattern.

use std::ffi::{CStr, CString};
use std::ptr;

use brushwork::checkpoint::Checkpoint;
use brushwork::model::{build, ModelConfig};
use brushwork_ffi::*;

#[test]
fn version_is_a_c_string() {
    let version = unsafe { CStr::from_ptr(bw_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn entropy_codes_and_values() {
    let mut h = 0.0f64;
    let rc = unsafe { bw_conditional_entropy(0.1, 0.45, 0.45, 0.2, &mut h) };
    assert_eq!(rc, BW_OK);
    assert!((h - 1.0).abs() < 1e-12);

    let rc = unsafe { bw_conditional_entropy(0.9, 0.05, 0.05, 0.2, &mut h) };
    assert_eq!(rc, BW_EXCLUDED);

    let rc = unsafe { bw_conditional_entropy(0.9, 0.4, 0.4, 0.2, &mut h) };
    assert_eq!(rc, BW_ERR_USAGE);
    let msg = unsafe { CStr::from_ptr(bw_last_error()) };
    assert!(msg.to_str().unwrap().contains("sum to 1"));
}

#[test]
fn mwu_matches_library_result() {
    let a = [1.0, 2.0, 3.0];
    let b = [4.0, 5.0, 6.0];
    let (mut u, mut p) = (0.0f64, 0.0f64);
    let rc = unsafe { bw_mann_whitney_u(a.as_ptr(), 3, b.as_ptr(), 3, &mut u, &mut p) };
    assert_eq!(rc, BW_OK);
    assert_eq!(u, 0.0);
    assert!((p - 0.1).abs() < 1e-12);

    let rc = unsafe { bw_mann_whitney_u(a.as_ptr(), 0, b.as_ptr(), 3, &mut u, &mut p) };
    assert_eq!(rc, BW_ERR_USAGE);
}

#[test]
fn lbp_histogram_through_ffi() {
    let pixels = vec![0.5f32; 25];
    let mut hist = vec![0.0f64; 256];
    let rc = unsafe { bw_lbp_features(pixels.as_ptr(), 5, 5, hist.as_mut_ptr()) };
    assert_eq!(rc, BW_OK);
    assert!((hist[255] - 1.0).abs() < 1e-12);
}

#[test]
fn grid_count_matches_formula() {
    let mut count = 0usize;
    let rc = unsafe { bw_grid_patch_count(900, 900, 300, 150, &mut count) };
    assert_eq!(rc, BW_OK);
    assert_eq!(count, 25);
}

#[test]
fn model_load_and_classify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("model.bwck");
    let config = ModelConfig::tiny();
    let net = build(&config, 33).unwrap();
    Checkpoint::from_network(&net, 1, 0.5, 0)
        .save(&ckpt_path)
        .unwrap();

    let image_path = dir.path().join("scan.png");
    image::GrayImage::from_pixel(450, 300, image::Luma([240u8]))
        .save(&image_path)
        .unwrap();

    let c_ckpt = CString::new(ckpt_path.to_str().unwrap()).unwrap();
    let mut model: *mut BwModel = ptr::null_mut();
    let rc = unsafe { bw_model_load(c_ckpt.as_ptr(), &mut model) };
    assert_eq!(rc, BW_OK);

    let mut input = 0usize;
    let rc = unsafe { bw_model_input_size(model, &mut input) };
    assert_eq!(rc, BW_OK);
    assert_eq!(input, 32);

    let c_img = CString::new(image_path.to_str().unwrap()).unwrap();
    let mut count = 0usize;
    let rc = unsafe {
        bw_classify_image(model, c_img.as_ptr(), 300, 150, ptr::null_mut(), 0, &mut count)
    };
    assert_eq!(rc, BW_OK);
    assert_eq!(count, 2); // 450x300 at 300/150 -> two grid patches

    let mut scores = vec![
        BwPatchScore {
            x: 0,
            y: 0,
            predicted_class: -1,
            p_blank: 0.0,
            p_human: 0.0,
            p_robot: 0.0,
        };
        count
    ];
    let rc = unsafe {
        bw_classify_image(
            model,
            c_img.as_ptr(),
            300,
            150,
            scores.as_mut_ptr(),
            count,
            &mut count,
        )
    };
    assert_eq!(rc, BW_OK);
    for score in &scores {
        let total = score.p_blank + score.p_human + score.p_robot;
        assert!((total - 1.0).abs() < 1e-9);
        assert!((0..3).contains(&score.predicted_class));
    }

    let mut one = scores[0];
    let rc =
        unsafe { bw_classify_image(model, c_img.as_ptr(), 300, 150, &mut one, 1, &mut count) };
    assert_eq!(rc, BW_ERR_BUFFER_TOO_SMALL);

    let rc = unsafe { bw_model_load(c_img.as_ptr(), &mut model) };
    assert_eq!(rc, BW_ERR_FORMAT); // a PNG is not a checkpoint

    unsafe { bw_model_free(model) };
}

#[test]
fn null_arguments_are_rejected() {
    let rc = unsafe { bw_conditional_entropy(0.1, 0.5, 0.4, 0.2, ptr::null_mut()) };
    assert_eq!(rc, BW_ERR_NULL_ARGUMENT);
    let mut model: *mut BwModel = ptr::null_mut();
    let rc = unsafe { bw_model_load(ptr::null(), &mut model) };
    assert_eq!(rc, BW_ERR_NULL_ARGUMENT);
    unsafe { bw_model_free(ptr::null_mut()) }; // documented no-op
}
