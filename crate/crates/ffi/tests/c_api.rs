use std::ffi::CString;
use std::ptr;

use vibshape_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { vs_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn design_matches_core() {
    let (mut a, mut t) = ([0.0; 3], [0.0; 3]);
    assert_eq!(unsafe { vs_design_zvd(5.0, 0.1, a.as_mut_ptr(), t.as_mut_ptr()) }, VsStatus::Ok);
    assert!((a[0] - 0.334_414_907_891_490_77).abs() < 1e-15);
    assert!((t[2] - 0.201_007_563_051_842_4).abs() < 1e-15);

    let mut v = 1.0;
    assert_eq!(unsafe { vs_residual_ratio(5.0, 0.1, 5.0, 0.1, &mut v) }, VsStatus::Ok);
    assert!(v < 1e-12);
}

#[test]
fn errors_are_reported() {
    let (mut a, mut t) = ([0.0; 3], [0.0; 3]);
    assert_eq!(unsafe { vs_design_zvd(-1.0, 0.1, a.as_mut_ptr(), t.as_mut_ptr()) }, VsStatus::InvalidArgument);
    assert!(last_error().contains("natural frequency"), "{}", last_error());
    assert_eq!(unsafe { vs_design_zvd(1.0, 0.1, ptr::null_mut(), t.as_mut_ptr()) }, VsStatus::NullPointer);

    let mut cfg = ptr::null_mut();
    let text = CString::new("split = 2\n").unwrap();
    assert_eq!(unsafe { vs_config_parse(text.as_ptr(), &mut cfg) }, VsStatus::InvalidArgument);
    assert!(cfg.is_null());

    let mut data = ptr::null_mut();
    let missing = CString::new("/nonexistent/data.csv").unwrap();
    assert_eq!(unsafe { vs_dataset_load(missing.as_ptr(), &mut data) }, VsStatus::IoError);
    assert_eq!(unsafe { vs_dataset_len(ptr::null()) }, 0);
    unsafe {
        vs_config_free(ptr::null_mut());
        vs_dataset_free(ptr::null_mut());
        vs_result_free(ptr::null_mut());
    }
}

#[test]
fn full_run_through_handles() {
    let text = CString::new("gen.samples = 30\ntrain.max_rounds = 3\ntrain.hidden_width = 8\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { vs_config_parse(text.as_ptr(), &mut cfg) }, VsStatus::Ok);
    assert_eq!(unsafe { vs_config_set_seed(cfg, 3) }, VsStatus::Ok);

    let mut data = ptr::null_mut();
    assert_eq!(unsafe { vs_dataset_generate(cfg, 3, &mut data) }, VsStatus::Ok);
    assert_eq!(unsafe { vs_dataset_len(data) }, 30);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vs_dataset_save(data, path.as_ptr()) }, VsStatus::Ok);
    let mut reloaded = ptr::null_mut();
    assert_eq!(unsafe { vs_dataset_load(path.as_ptr(), &mut reloaded) }, VsStatus::Ok);
    assert_eq!(unsafe { vs_dataset_len(reloaded) }, 30);

    let mut res = ptr::null_mut();
    assert_eq!(unsafe { vs_run(cfg, data, &mut res) }, VsStatus::Ok);
    let (mut w, mut z) = (0.0, 0.0);
    assert_eq!(unsafe { vs_result_ekf(res, &mut w, &mut z) }, VsStatus::Ok);
    assert!(w > 4.0 && w < 7.0 && z > 0.0 && z < 0.3);
    assert_eq!(unsafe { vs_result_corrected(res, &mut w, &mut z) }, VsStatus::Ok);
    let mut m = VsMetrics::default();
    assert_eq!(unsafe { vs_result_metrics(res, VS_MODEL_ZVD, &mut m) }, VsStatus::Ok);
    assert_eq!(m.n, 3);
    assert!(m.rmse <= m.max_err && m.mean_err <= m.rmse);
    assert_eq!(unsafe { vs_result_metrics(res, 7, &mut m) }, VsStatus::InvalidArgument);

    unsafe {
        vs_result_free(res);
        vs_dataset_free(reloaded);
        vs_dataset_free(data);
        vs_config_free(cfg);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/vibshape.h")).unwrap();
    for name in ["vs_design_zvd", "vs_run", "vs_result_metrics", "vs_last_error", "VsMetrics", "VS_STATUS_OK"] {
        assert!(header.contains(name), "missing {name}");
    }
    let version = unsafe { std::ffi::CStr::from_ptr(vs_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
