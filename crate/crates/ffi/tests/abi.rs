use std::ffi::{CStr, CString};
use std::ptr;

use fe_lab_ffi::*;

fn last_error() -> String {
    let p = fe_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bundle(seed: u64) -> *mut FeBundle {
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { fe_bundle_generate(seed, FeSystemKind::Nonlinear, 120, 80, -1.0, &mut b) }, FeStatus::Ok);
    b
}

#[test]
fn train_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(5);
    let (mut ni, mut no, mut nt, mut ne) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(fe_bundle_shape(b, &mut ni, &mut no, &mut nt, &mut ne), FeStatus::Ok);
        assert_eq!((ni, no, nt, ne), (5, 48, 120, 80));

        let mut t = ptr::null_mut();
        assert_eq!(fe_trainer_new(b, FeModelKind::Fe, 4, 0.0, 1, 1e-3, &mut t), FeStatus::Ok);
        assert_eq!(fe_trainer_levels(t), 4);
        assert_eq!(fe_trainer_train(t, b, 5, 20), FeStatus::Ok);
        assert_eq!(fe_trainer_iteration(t), 5);

        let mut re = [0.0; 4];
        let mut len = 0;
        assert_eq!(fe_trainer_recon_errors(t, b, re.as_mut_ptr(), re.len(), &mut len), FeStatus::Ok);
        assert_eq!(len, 4);
        assert!(re.iter().all(|v| v.is_finite() && *v > 0.0));

        let path = CString::new(dir.path().join("m.fec").to_str().unwrap()).unwrap();
        assert_eq!(fe_trainer_save(t, path.as_ptr()), FeStatus::Ok);
        let mut u = ptr::null_mut();
        assert_eq!(fe_trainer_load(path.as_ptr(), &mut u), FeStatus::Ok);
        let mut re2 = [0.0; 4];
        assert_eq!(fe_trainer_recon_errors(u, b, re2.as_mut_ptr(), 4, ptr::null_mut()), FeStatus::Ok);
        assert_eq!(re, re2);

        let mut mean = 0.0;
        assert_eq!(fe_stability(t, u, b, &mut mean), FeStatus::Ok);
        assert!((mean - 1.0).abs() < 1e-12);

        fe_trainer_free(t);
        fe_trainer_free(u);
        fe_bundle_free(b);
    }
}

#[test]
fn bundle_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let b = bundle(2);
    unsafe {
        assert_eq!(fe_bundle_save(b, path.as_ptr()), FeStatus::Ok);
        let mut c = ptr::null_mut();
        assert_eq!(fe_bundle_load(path.as_ptr(), &mut c), FeStatus::Ok);
        let mut n = 0;
        assert_eq!(fe_bundle_shape(c, ptr::null_mut(), ptr::null_mut(), &mut n, ptr::null_mut()), FeStatus::Ok);
        assert_eq!(n, 120);
        fe_bundle_free(b);
        fe_bundle_free(c);
    }
}

#[test]
fn encode_reports_required_length() {
    let b = bundle(3);
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(fe_trainer_new(b, FeModelKind::Vae, 3, 0.0, 0, 1e-3, &mut t), FeStatus::Ok);
        let x = vec![0.1; 2 * 48];
        let mut out = [0.0; 4];
        let mut len = 0;
        let s = fe_trainer_encode(t, x.as_ptr(), 2, 48, out.as_mut_ptr(), out.len(), &mut len);
        assert_eq!((s, len), (FeStatus::BufferTooSmall, 6));
        let mut out = [0.0; 6];
        assert_eq!(fe_trainer_encode(t, x.as_ptr(), 2, 48, out.as_mut_ptr(), 6, &mut len), FeStatus::Ok);
        assert_eq!(&out[..3], &out[3..]);
        // wrong width
        assert_eq!(fe_trainer_encode(t, x.as_ptr(), 3, 32, out.as_mut_ptr(), 6, &mut len), FeStatus::Invalid);
        fe_trainer_free(t);
        fe_bundle_free(b);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(fe_bundle_generate(0, FeSystemKind::Linear, 10, 10, -1.0, ptr::null_mut()), FeStatus::NullPointer);
        assert!(last_error().contains("out"));

        let missing = CString::new("/nonexistent/fe-lab-bundle").unwrap();
        assert_eq!(fe_bundle_load(missing.as_ptr(), &mut b), FeStatus::Io);
        assert!(b.is_null());

        let b = bundle(1);
        let mut t = ptr::null_mut();
        // median dim must exceed the latent count
        assert_eq!(fe_trainer_new(b, FeModelKind::Fe, 60, 0.0, 0, 1e-3, &mut t), FeStatus::Invalid);
        assert!(last_error().contains("median_dim"));
        assert_eq!(fe_trainer_new(b, FeModelKind::Fe, 2, 0.0, 0, 1e-3, &mut t), FeStatus::Ok);
        assert_eq!(fe_trainer_train(t, b, 1, 1000), FeStatus::Invalid);
        // a successful call clears the message
        assert_eq!(fe_trainer_train(t, b, 1, 10), FeStatus::Ok);
        assert!(fe_last_error().is_null());

        assert_eq!(fe_trainer_levels(ptr::null()), 0);
        fe_trainer_free(ptr::null_mut());
        fe_bundle_free(ptr::null_mut());
        fe_trainer_free(t);
        fe_bundle_free(b);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/fe_lab.h");
    assert!(std::path::Path::new(header).exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ FeBundle *b = 0; return fe_bundle_save(b, 0) == FE_STATUS_NULL_POINTER ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler found, header syntax not checked"),
    }
}
