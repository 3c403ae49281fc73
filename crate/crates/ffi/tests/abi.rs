//! Calls through the C ABI from Rust, plus a C program built against the
//! generated header and static library when a C compiler is available.

use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use nonauto_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(na_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn new_op(entries: &[f64], dim: usize) -> *mut NaOperator {
    let mut out = ptr::null_mut();
    let s = unsafe { na_operator_new(entries.as_ptr(), dim, NA_NORM_INDUCED2, &mut out) };
    assert_eq!(s, NaStatus::Ok, "{}", last_error());
    out
}

fn entries(op: *const NaOperator) -> Vec<f64> {
    let n = unsafe { na_operator_dim(op) };
    let mut buf = vec![0.0; n * n];
    assert_eq!(
        unsafe { na_operator_entries(op, buf.as_mut_ptr(), buf.len()) },
        NaStatus::Ok
    );
    buf
}

#[test]
fn operator_round_trip_and_norm() {
    let a = new_op(&[3.0, 0.0, 0.0, -4.0], 2);
    assert_eq!(unsafe { na_operator_dim(a) }, 2);
    assert_eq!(entries(a), vec![3.0, 0.0, 0.0, -4.0]);
    let mut n = 0.0;
    assert_eq!(unsafe { na_op_norm(a, &mut n) }, NaStatus::Ok);
    assert!((n - 4.0).abs() < 1e-12);
    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { na_operator_entries(a, small.as_mut_ptr(), 3) },
        NaStatus::DimensionMismatch
    );
    assert!(last_error().contains("need 4"));
    unsafe { na_operator_free(a) };
}

#[test]
fn parse_text_matrix() {
    let mut out = ptr::null_mut();
    let text = c"dim 2\n1 2\n3 4\n";
    assert_eq!(
        unsafe { na_operator_parse(text.as_ptr(), NA_NORM_INDUCED1, &mut out) },
        NaStatus::Ok
    );
    assert_eq!(entries(out), vec![1.0, 2.0, 3.0, 4.0]);
    unsafe { na_operator_free(out) };
    let bad = c"dim 2\n1 2\n";
    assert_eq!(
        unsafe { na_operator_parse(bad.as_ptr(), NA_NORM_INDUCED1, &mut out) },
        NaStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
}

#[test]
fn null_and_invalid_arguments() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { na_operator_new(ptr::null(), 2, NA_NORM_INDUCED2, &mut out) },
        NaStatus::NullPointer
    );
    let e = [1.0];
    assert_eq!(
        unsafe { na_operator_new(e.as_ptr(), 1, 9, &mut out) },
        NaStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { na_operator_new(e.as_ptr(), 1, NA_NORM_INDUCED2, ptr::null_mut()) },
        NaStatus::NullPointer
    );
    let nan = [f64::NAN];
    assert_eq!(
        unsafe { na_operator_new(nan.as_ptr(), 1, NA_NORM_INDUCED2, &mut out) },
        NaStatus::InvalidArgument
    );
    let mut v = 0.0;
    assert_eq!(unsafe { na_op_norm(ptr::null(), &mut v) }, NaStatus::NullPointer);
    assert_eq!(unsafe { na_operator_dim(ptr::null()) }, 0);
    unsafe {
        na_operator_free(ptr::null_mut());
        na_family_free(ptr::null_mut());
        na_evolution_free(ptr::null_mut());
    }
}

#[test]
fn resolvent_and_exponential() {
    let a = new_op(&[-1.0, 0.0, 0.0, -2.0], 2);
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { na_resolvent(a, 1.0, &mut r) }, NaStatus::Ok);
    let re = entries(r);
    assert!((re[0] - 0.5).abs() < 1e-14 && (re[3] - 1.0 / 3.0).abs() < 1e-14);
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { na_expm(a, 1.0, &mut e) }, NaStatus::Ok);
    assert!((entries(e)[0] - (-1f64).exp()).abs() < 1e-14);

    let sing = new_op(&[1.0, 0.0, 0.0, 2.0], 2);
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { na_resolvent(sing, 1.0, &mut bad) }, NaStatus::Singular);
    assert!(bad.is_null());
    unsafe {
        na_operator_free(a);
        na_operator_free(r);
        na_operator_free(e);
        na_operator_free(sing);
    }
}

#[test]
fn norms_and_distances() {
    let a = new_op(&[-1.0, 0.0, 0.0, -2.0], 2);
    let c = new_op(&[0.1, 0.2, 0.0, 0.1], 2);
    let (mut m, mut w) = (0.0, 0.0);
    assert_eq!(unsafe { na_fit_growth_bound(a, 5.0, &mut m, &mut w) }, NaStatus::Ok);
    assert!((m - 1.0).abs() < 1e-5 && (w + 1.0).abs() < 1e-12);
    let mut an = 0.0;
    assert_eq!(unsafe { na_a_norm(c, a, 1.0, 0.0, &mut an) }, NaStatus::Ok);
    let mut cn = 0.0;
    assert_eq!(unsafe { na_op_norm(c, &mut cn) }, NaStatus::Ok);
    assert!((an - cn).abs() < 1e-9 * cn);
    assert_eq!(unsafe { na_a_norm(c, a, 0.5, 0.0, &mut an) }, NaStatus::InvalidArgument);

    let b = new_op(&[-0.9, 0.2, 0.0, -1.9], 2);
    let mut d = 0.0;
    assert_eq!(unsafe { na_yosida_distance(a, b, &mut d) }, NaStatus::Ok);
    assert!((d - cn).abs() < 1e-4 * cn);
    unsafe {
        na_operator_free(a);
        na_operator_free(b);
        na_operator_free(c);
    }
}

#[test]
fn evolution_and_dichotomy() {
    let a = new_op(&[-1.0, 0.0, 0.0, 1.0], 2);
    let b0 = new_op(&[0.0, 0.01, 0.01, 0.0], 2);
    let mut fam = ptr::null_mut();
    assert_eq!(
        unsafe { na_family_sinusoid(b0, 1.0, 0.0, 0.0, 2.0, &mut fam) },
        NaStatus::Ok
    );
    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { na_euler_polygon(a, fam, 8, &mut ev) }, NaStatus::Ok);
    assert_eq!(unsafe { na_evolution_level(ev) }, 8);
    let mut u = ptr::null_mut();
    assert_eq!(unsafe { na_evolution_evaluate(ev, 2.0, 1.0, &mut u) }, NaStatus::Ok);
    let mut rep = NaDichotomyReport::default();
    assert_eq!(unsafe { na_check_hyperbolic(u, &mut rep) }, NaStatus::Ok);
    assert!(rep.hyperbolic);
    assert_eq!(rep.stable_rank, 1);
    let mut outside = ptr::null_mut();
    assert_eq!(
        unsafe { na_evolution_evaluate(ev, 3.0, 1.0, &mut outside) },
        NaStatus::InvalidArgument
    );

    let mut refined = ptr::null_mut();
    let (mut n_final, mut delta) = (0u32, 0.0);
    let s = unsafe { na_refine_to_tolerance(a, fam, 1e-4, 18, &mut refined, &mut n_final, &mut delta) };
    assert_eq!(s, NaStatus::Ok, "{}", last_error());
    assert!(delta <= 1e-4);
    let mut coarse = ptr::null_mut();
    assert_eq!(
        unsafe { na_refine_to_tolerance(a, fam, 1e-14, 2, &mut coarse, ptr::null_mut(), ptr::null_mut()) },
        NaStatus::NotConverged
    );

    let rot = new_op(&[0.0, -1.0, 1.0, 0.0], 2);
    assert_eq!(unsafe { na_check_hyperbolic(rot, &mut rep) }, NaStatus::Ok);
    assert!(!rep.hyperbolic);
    unsafe {
        na_operator_free(rot);
        na_operator_free(u);
        na_evolution_free(refined);
        na_evolution_free(ev);
        na_family_free(fam);
        na_operator_free(b0);
        na_operator_free(a);
    }
}

#[test]
fn family_dimension_mismatch() {
    let a = new_op(&[-1.0], 1);
    let b0 = new_op(&[0.0, 1.0, 1.0, 0.0], 2);
    let mut fam = ptr::null_mut();
    assert_eq!(unsafe { na_family_constant(b0, 0.0, 1.0, &mut fam) }, NaStatus::Ok);
    let mut ev = ptr::null_mut();
    assert_eq!(
        unsafe { na_euler_polygon(a, fam, 2, &mut ev) },
        NaStatus::DimensionMismatch
    );
    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { na_family_constant(b0, 1.0, 0.0, &mut bad) },
        NaStatus::InvalidArgument
    );
    unsafe {
        na_family_free(fam);
        na_operator_free(b0);
        na_operator_free(a);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(na_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn static_lib() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libnonauto_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_c_program_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/nonauto.h");
    assert!(header.exists(), "header is generated by the build script");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "na_operator_new",
        "na_euler_polygon",
        "na_check_hyperbolic",
        "NA_STATUS_SINGULAR",
        "NaDichotomyReport",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping the C build");
        return;
    }
    let Some(lib) = static_lib() else {
        eprintln!("static library not found; skipping the C build");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
