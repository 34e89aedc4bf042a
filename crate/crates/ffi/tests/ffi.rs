use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fieldforge::neuralfield::{write_checkpoint, FinalActivation, SirenConfig, SirenNet};
use fieldforge::voxvol::{write_vgrid, GridKind, GridMeta, VoxelGrid};
use fieldforge_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ff_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn ball(n: usize, r: f64) -> Vec<u8> {
    let c = n as f64 / 2.0;
    (0..n * n * n)
        .map(|i| {
            let (x, y, z) = (
                (i % n) as f64 + 0.5 - c,
                ((i / n) % n) as f64 + 0.5 - c,
                (i / (n * n)) as f64 + 0.5 - c,
            );
            ((x * x + y * y + z * z).sqrt() <= r) as u8
        })
        .collect()
}

fn new_grid(n: usize, data: &[u8]) -> *mut FfGrid {
    let dims = [n; 3];
    let vs = [1.0; 3];
    let mut g = ptr::null_mut();
    let s = unsafe {
        ff_grid_new_occupancy(
            dims.as_ptr(),
            vs.as_ptr(),
            data.as_ptr(),
            data.len(),
            &mut g,
        )
    };
    assert_eq!(s, FfStatus::Ok);
    g
}

#[test]
fn grid_round_trip_and_queries() {
    let dir = tempfile::tempdir().unwrap();
    let data = ball(16, 5.0);
    let g = new_grid(16, &data);
    let path = cpath(&dir.path().join("b.vgrid"));
    unsafe {
        assert_eq!(ff_grid_write(g, path.as_ptr()), FfStatus::Ok);
        let mut h = ptr::null_mut();
        assert_eq!(ff_grid_read(path.as_ptr(), &mut h), FfStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(ff_grid_dims(h, dims.as_mut_ptr()), FfStatus::Ok);
        assert_eq!(dims, [16, 16, 16]);
        let mut kind = FfGridKind::Sdf;
        assert_eq!(ff_grid_kind(h, &mut kind), FfStatus::Ok);
        assert_eq!(kind, FfGridKind::Occupancy);
        let mut vals = vec![0.0; 4096];
        assert_eq!(
            ff_grid_values(h, vals.as_mut_ptr(), vals.len()),
            FfStatus::Ok
        );
        assert!(vals.iter().zip(&data).all(|(&v, &d)| v == d as f64));
        assert_eq!(
            ff_grid_values(h, vals.as_mut_ptr(), 10),
            FfStatus::ShapeMismatch
        );

        let mut grams = 0.0;
        assert_eq!(ff_digital_weight(h, 1.25, &mut grams), FfStatus::Ok);
        let count = data.iter().filter(|&&v| v == 1).count() as f64;
        assert!((grams - 1.25 * count / 1000.0).abs() < 1e-12);
        assert_eq!(
            ff_digital_weight(h, -1.0, &mut grams),
            FfStatus::InvalidArgument
        );

        let (mut mean, mut std, mut l1) = (0.0, 0.0, 1.0);
        assert_eq!(ff_ssim_volume(g, h, &mut mean, &mut std), FfStatus::Ok);
        assert_eq!((mean, std), (1.0, 0.0));
        assert_eq!(ff_l1_norm(g, h, &mut l1), FfStatus::Ok);
        assert_eq!(l1, 0.0);
        ff_grid_free(h);
        ff_grid_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(ff_grid_read(ptr::null(), &mut g), FfStatus::NullPointer);
        assert!(last_error().contains("null"));
        let missing = CString::new("/nonexistent/x.vgrid").unwrap();
        assert_eq!(ff_grid_read(missing.as_ptr(), &mut g), FfStatus::Io);
        assert!(g.is_null());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.vgrid");
        std::fs::write(&bad, b"NOPE0000").unwrap();
        assert_eq!(ff_grid_read(cpath(&bad).as_ptr(), &mut g), FfStatus::Format);
        assert!(last_error().contains("header"), "{}", last_error());

        let dims = [2usize; 3];
        let vs = [1.0; 3];
        let data = [0u8, 1, 2, 0, 0, 0, 0, 0];
        assert_eq!(
            ff_grid_new_occupancy(dims.as_ptr(), vs.as_ptr(), data.as_ptr(), 8, &mut g),
            FfStatus::InvalidArgument
        );
        let a = new_grid(4, &[0; 64]);
        let b = new_grid(2, &[0; 8]);
        let mut l1 = 0.0;
        assert_eq!(ff_l1_norm(a, b, &mut l1), FfStatus::ShapeMismatch);
        ff_grid_free(a);
        ff_grid_free(b);
        ff_grid_free(ptr::null_mut());
        ff_net_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(ff_version()) }
        .to_bytes()
        .is_empty());
}

#[test]
fn net_forward_matches_rust() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SirenConfig::new(2, 8, 30.0, FinalActivation::Sigmoid);
    let net = SirenNet::<f32>::new(cfg, 3).unwrap();
    let path = dir.path().join("n.srnc");
    write_checkpoint(&net, &path).unwrap();
    let pts: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin()).collect();
    let expected = net
        .forward(ndarray::ArrayView2::from_shape((5, 4), &pts).unwrap())
        .unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(ff_net_read(cpath(&path).as_ptr(), &mut h), FfStatus::Ok);
        let mut out = [0f32; 5];
        assert_eq!(
            ff_net_forward(h, pts.as_ptr(), 5, out.as_mut_ptr()),
            FfStatus::Ok
        );
        assert_eq!(out.to_vec(), expected.to_vec());

        let bounds = FfBounds {
            spatial_min: [0.0; 3],
            spatial_max: [10.0; 3],
            phi_min: 45.0,
            phi_max: 280.0,
        };
        let dims = [6usize, 5, 4];
        let mut g = ptr::null_mut();
        assert_eq!(
            ff_reconstruct(h, &bounds, 100.0, dims.as_ptr(), &mut g),
            FfStatus::Ok
        );
        let mut got = [0usize; 3];
        ff_grid_dims(g, got.as_mut_ptr());
        assert_eq!(got, dims);
        let bad = FfBounds {
            phi_max: 0.0,
            ..bounds
        };
        let mut g2 = ptr::null_mut();
        assert_eq!(
            ff_reconstruct(h, &bad, 100.0, dims.as_ptr(), &mut g2),
            FfStatus::InvalidArgument
        );
        ff_grid_free(g);
        ff_net_free(h);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fieldforge.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "ff_last_error",
        "ff_version",
        "ff_grid_read",
        "ff_grid_write",
        "ff_grid_new_occupancy",
        "ff_grid_free",
        "ff_grid_dims",
        "ff_grid_kind",
        "ff_grid_values",
        "ff_digital_weight",
        "ff_ssim_volume",
        "ff_l1_norm",
        "ff_net_read",
        "ff_net_free",
        "ff_net_forward",
        "ff_reconstruct",
        "typedef struct FfGrid FfGrid",
        "typedef struct FfNet FfNet",
        "FF_STATUS_OK = 0",
        "FF_STATUS_PANIC",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    // test binaries link the rlib; the archive comes from a regular library build
    let target = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let built = Command::new(env!("CARGO"))
        .args(["build", "-p", "fieldforge-ffi", "--lib", "--target-dir"])
        .arg(target.parent().unwrap())
        .status()
        .unwrap();
    assert!(built.success());
    let lib = target.join("libfieldforge_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let vgrid = dir.path().join("s.vgrid");
    let meta = GridMeta::new([4, 4, 4], [1.0; 3], GridKind::Occupancy).unwrap();
    write_vgrid(
        &VoxelGrid::occupancy(meta, (0..64).map(|i| (i % 2) as u8).collect()).unwrap(),
        &vgrid,
    )
    .unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "fieldforge.h"
int main(int argc, char **argv) {
    FfGrid *g = NULL;
    if (ff_grid_read(argv[1], &g) != FF_STATUS_OK) { fprintf(stderr, "%s\n", ff_last_error()); return 1; }
    double grams = 0.0;
    if (ff_digital_weight(g, 1.0, &grams) != FF_STATUS_OK) return 2;
    ff_grid_free(g);
    if (ff_grid_read(NULL, &g) != FF_STATUS_NULL_POINTER) return 3;
    printf("%.6f\n", grams);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(&vgrid).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.032000");
}
