use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mimo_detect::models::{save_params, IidParams, ModelParams};
use mimo_detect_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { mimo_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
}

fn identity_channel(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; 2 * n * n];
    for i in 0..n {
        h[2 * (i * n + i)] = 1.0;
    }
    h
}

fn constellation() -> *mut MimoConstellation {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { mimo_constellation_new(4, &mut c) }, MimoStatus::Ok);
    c
}

/// Received vector for symbols `s` through the identity channel.
fn received(c: *const MimoConstellation, s: &[u32]) -> Vec<f64> {
    let mut y = Vec::new();
    for &k in s {
        let mut p = [0.0; 2];
        assert_eq!(unsafe { mimo_constellation_point(c, k, p.as_mut_ptr()) }, MimoStatus::Ok);
        y.extend_from_slice(&p);
    }
    y
}

#[test]
fn classical_detectors_recover_noiseless_symbols() {
    let c = constellation();
    let h = identity_channel(3);
    let truth = [0u32, 3, 1];
    let y = received(c, &truth);
    for name in ["zf", "mmse", "vblast", "amp", "oamp", "ml"] {
        let mut d = ptr::null_mut();
        let n = CString::new(name).unwrap();
        let st = unsafe { mimo_detector_new(n.as_ptr(), h.as_ptr(), 3, 3, 1e-3, c, &mut d) };
        assert_eq!(st, MimoStatus::Ok, "{name}: {}", last_error());
        let mut s = [9u32; 3];
        let mut soft = [0.0; 6];
        assert_eq!(unsafe { mimo_detector_detect(d, y.as_ptr(), s.as_mut_ptr(), soft.as_mut_ptr()) }, MimoStatus::Ok);
        assert_eq!(s, truth, "{name}");
        unsafe { mimo_detector_free(d) };
    }
    unsafe { mimo_constellation_free(c) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { mimo_constellation_new(8, &mut c) }, MimoStatus::InvalidArgument);
    assert!(last_error().contains("8"));
    let c = constellation();
    let h = identity_channel(2);
    let mut d = ptr::null_mut();
    let bad = CString::new("nope").unwrap();
    assert_eq!(unsafe { mimo_detector_new(bad.as_ptr(), h.as_ptr(), 2, 2, 0.1, c, &mut d) }, MimoStatus::InvalidArgument);
    assert_eq!(unsafe { mimo_detector_new(ptr::null(), h.as_ptr(), 2, 2, 0.1, c, &mut d) }, MimoStatus::NullPointer);
    let zeros = vec![0.0; 8];
    let zf = CString::new("zf").unwrap();
    assert_eq!(unsafe { mimo_detector_new(zf.as_ptr(), zeros.as_ptr(), 2, 2, 0.1, c, &mut d) }, MimoStatus::Singular);
    let missing = CString::new("/nonexistent/m.mparm").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mimo_model_load(missing.as_ptr(), &mut m) }, MimoStatus::Io);
    assert_eq!(unsafe { mimo_model_layers(ptr::null()) }, 0);
    unsafe { mimo_constellation_free(c) };
}

#[test]
fn learned_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mparm");
    save_params(&ModelParams::Iid(IidParams::new(4)), &path).unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mimo_model_load(p.as_ptr(), &mut m) }, MimoStatus::Ok);
    assert_eq!(unsafe { mimo_model_layers(m) }, 4);
    let c = constellation();
    let h = identity_channel(2);
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { mimo_detector_new_learned(m, h.as_ptr(), 2, 2, 0.01, c, &mut d) }, MimoStatus::Ok);
    let truth = [2u32, 1];
    let y = received(c, &truth);
    let mut s = [0u32; 2];
    assert_eq!(unsafe { mimo_detector_detect(d, y.as_ptr(), s.as_mut_ptr(), ptr::null_mut()) }, MimoStatus::Ok);
    assert_eq!(s, truth);
    let out = CString::new(dir.path().join("copy.mparm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mimo_model_save(m, out.as_ptr()) }, MimoStatus::Ok);
    unsafe {
        mimo_detector_free(d);
        mimo_model_free(m);
        mimo_constellation_free(c);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mimo_detect.h")).unwrap();
    for sym in [
        "mimo_constellation_new",
        "mimo_detector_new",
        "mimo_detector_new_learned",
        "mimo_detector_detect",
        "mimo_model_load",
        "mimo_last_error_message",
        "MIMO_STATUS_SINGULAR",
    ] {
        assert!(h.contains(sym), "{sym}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "mimo_detect.h"

int main(void) {
    MimoConstellation *c = NULL;
    if (mimo_constellation_new(16, &c) != MIMO_STATUS_OK) return 1;
    double h[2 * 2 * 2] = {1, 0, 0, 0, 0, 0, 1, 0};
    double y[4];
    uint32_t truth[2] = {5, 12};
    for (int k = 0; k < 2; k++)
        if (mimo_constellation_point(c, truth[k], y + 2 * k) != MIMO_STATUS_OK) return 2;
    MimoDetector *d = NULL;
    if (mimo_detector_new("mmse", h, 2, 2, 1e-4, c, &d) != MIMO_STATUS_OK) return 3;
    uint32_t s[2];
    if (mimo_detector_detect(d, y, s, NULL) != MIMO_STATUS_OK) return 4;
    if (s[0] != truth[0] || s[1] != truth[1]) return 5;
    if (mimo_detector_new("bogus", h, 2, 2, 1e-4, c, &d) != MIMO_STATUS_INVALID_ARGUMENT) return 6;
    char msg[128];
    if (mimo_last_error_message(msg, sizeof msg) == 0 || strlen(msg) == 0) return 7;
    mimo_detector_free(d);
    mimo_constellation_free(c);
    printf("ok %s\n", mimo_version());
    return 0;
}
"#;

/// Compiles a C program against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libmimo_detect_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/include"));
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
