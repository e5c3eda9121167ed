use std::ffi::{CStr, CString};
use std::ptr;

use fastem_ffi::*;

fn last_error() -> String {
    let p = fastem_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Two well separated blobs in 3 dimensions with a few holes.
fn sample() -> (Vec<f64>, usize, usize) {
    let (n, d) = (60, 3);
    let mut v = Vec::with_capacity(n * d);
    for i in 0..n {
        let centre = if i % 2 == 0 { -4.0 } else { 4.0 };
        for c in 0..d {
            let jitter = ((i * 7 + c * 13) % 11) as f64 / 11.0 - 0.5;
            v.push(centre + jitter + 0.3 * c as f64);
        }
    }
    for i in (0..n).step_by(5) {
        v[i * d + (i / 5) % d] = f64::NAN;
    }
    (v, n, d)
}

unsafe fn dataset(v: &[f64], n: usize, d: usize) -> *mut FastemDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(fastem_dataset_new(v.as_ptr(), n, d, &mut ds), FastemStatus::Ok);
    ds
}

#[test]
fn fit_impute_and_round_trip() {
    let (v, n, d) = sample();
    unsafe {
        let ds = dataset(&v, n, d);
        let config = CString::new(r#"{"components": 2, "seed": 3}"#).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(fastem_fit(ds, config.as_ptr(), &mut model), FastemStatus::Ok);
        assert!(fastem_last_error().is_null());

        let (mut dim, mut comps) = (0, 0);
        assert_eq!(fastem_model_shape(model, &mut dim, &mut comps), FastemStatus::Ok);
        assert_eq!((dim, comps), (3, 2));

        let mut filled = vec![0.0; n * d];
        assert_eq!(fastem_impute(model, ds, filled.as_mut_ptr()), FastemStatus::Ok);
        for (a, b) in v.iter().zip(&filled) {
            assert!(b.is_finite());
            if !a.is_nan() {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // A hole in a row of the positive blob is filled near that blob.
        assert!(filled[5 * d] > 0.0);

        let mut json = ptr::null_mut();
        assert_eq!(fastem_model_to_json(model, &mut json), FastemStatus::Ok);
        let mut copy = ptr::null_mut();
        assert_eq!(fastem_model_from_json(json, &mut copy), FastemStatus::Ok);
        let (mut ll_a, mut ll_b) = (0.0, 0.0);
        assert_eq!(fastem_log_likelihood(model, ds, &mut ll_a), FastemStatus::Ok);
        assert_eq!(fastem_log_likelihood(copy, ds, &mut ll_b), FastemStatus::Ok);
        assert!(ll_a.is_finite());
        assert!((ll_a - ll_b).abs() <= 1e-12 * ll_a.abs());

        fastem_string_free(json);
        fastem_model_free(copy);
        fastem_model_free(model);
        fastem_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let (v, n, d) = sample();
    unsafe {
        let ds = dataset(&v, n, d);
        let mut model = ptr::null_mut();

        let bad = CString::new(r#"{"components": 0}"#).unwrap();
        assert_eq!(fastem_fit(ds, bad.as_ptr(), &mut model), FastemStatus::Config);
        assert!(model.is_null());
        assert!(last_error().contains("components"));

        let garbled = CString::new("{").unwrap();
        assert_eq!(fastem_fit(ds, garbled.as_ptr(), &mut model), FastemStatus::Config);

        assert_eq!(fastem_fit(ptr::null(), ptr::null(), &mut model), FastemStatus::NullArgument);
        assert_eq!(fastem_fit(ds, ptr::null(), ptr::null_mut()), FastemStatus::NullArgument);

        let not_json = CString::new("[1, 2]").unwrap();
        assert_eq!(fastem_model_from_json(not_json.as_ptr(), &mut model), FastemStatus::Data);

        assert_eq!(fastem_fit(ds, ptr::null(), &mut model), FastemStatus::Ok);
        let other = dataset(&[1.0, 2.0], 1, 2);
        let mut out = [0.0; 2];
        assert_eq!(fastem_impute(model, other, out.as_mut_ptr()), FastemStatus::Data);
        assert!(last_error().contains("dimension"));

        let mut empty = ptr::null_mut();
        assert_eq!(fastem_dataset_new(ptr::null(), 2, 2, &mut empty), FastemStatus::NullArgument);
        assert!(empty.is_null());

        fastem_dataset_free(other);
        fastem_model_free(model);
        fastem_dataset_free(ds);
        fastem_dataset_free(ptr::null_mut());
        fastem_model_free(ptr::null_mut());
        fastem_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fastem.h")).unwrap();
    for name in [
        "fastem_last_error",
        "fastem_dataset_new",
        "fastem_dataset_free",
        "fastem_fit",
        "fastem_model_free",
        "fastem_model_shape",
        "fastem_model_to_json",
        "fastem_model_from_json",
        "fastem_string_free",
        "fastem_impute",
        "fastem_log_likelihood",
        "FASTEM_STATUS_NUMERICAL",
        "typedef struct FastemModel FastemModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
