//! C ABI over the fieldforge volume, metric and neural-field APIs.
//!
//! Every function returns an [`FfStatus`]. On failure the message is kept per
//! thread and can be read with [`ff_last_error`]. Handles are opaque and must be
//! released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fieldforge::fidelity::{l1_norm, ssim_volume, SsimParams};
use fieldforge::neuralfield::{read_checkpoint, SirenNet, IN_DIM};
use fieldforge::recon::{reconstruct, ReconRequest};
use fieldforge::sampler::DomainBounds;
use fieldforge::voxvol::{
    digital_weight, read_vgrid, write_vgrid, GridKind, GridMeta, VoxelGrid, WeightParams,
};
use fieldforge::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    ShapeMismatch = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfGridKind {
    Occupancy = 0,
    Sdf = 1,
}

/// Normalization box of a trained field.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfBounds {
    pub spatial_min: [f64; 3],
    pub spatial_max: [f64; 3],
    pub phi_min: f64,
    pub phi_max: f64,
}

/// Opaque voxel grid.
pub struct FfGrid(VoxelGrid);

/// Opaque 32-bit SIREN.
pub struct FfNet(SirenNet<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(FfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => FfStatus::Io,
            Error::CorruptHeader(_)
            | Error::PayloadMismatch { .. }
            | Error::UnknownDtype(_)
            | Error::Json(_)
            | Error::Csv(_) => FfStatus::Format,
            Error::ShapeMismatch(_) => FfStatus::ShapeMismatch,
            Error::Degenerate(_) | Error::NonFiniteGradient { .. } | Error::Diverged { .. } => {
                FfStatus::Numeric
            }
            Error::Invariant(_) | Error::InvalidInput(_) | Error::OutOfBounds(_) => {
                FfStatus::InvalidArgument
            }
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FfStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FfStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn grid_ref<'a>(g: *const FfGrid, what: &str) -> Result<&'a VoxelGrid, Fail> {
    g.as_ref().map(|g| &g.0).ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a VGRID file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_read(path: *const c_char, out: *mut *mut FfGrid) -> FfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let g = read_vgrid(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FfGrid(g)));
        Ok(())
    })
}

/// Writes a VGRID file.
///
/// # Safety
/// `grid` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_write(grid: *const FfGrid, path: *const c_char) -> FfStatus {
    guard(|| Ok(write_vgrid(grid_ref(grid, "grid")?, path_arg(path)?)?))
}

/// Builds an occupancy grid from `nx·ny·nz` bytes (x fastest, values 0 or 1).
///
/// # Safety
/// `dims` and `voxel_size` point to 3 values; `data` holds `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_new_occupancy(
    dims: *const usize,
    voxel_size: *const f64,
    data: *const u8,
    len: usize,
    out: *mut *mut FfGrid,
) -> FfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if dims.is_null() || voxel_size.is_null() || data.is_null() {
            return Err(null("dims, voxel_size or data"));
        }
        let d = std::slice::from_raw_parts(dims, 3);
        let v = std::slice::from_raw_parts(voxel_size, 3);
        let meta = GridMeta::new([d[0], d[1], d[2]], [v[0], v[1], v[2]], GridKind::Occupancy)?;
        let bytes = std::slice::from_raw_parts(data, len).to_vec();
        *out = Box::into_raw(Box::new(FfGrid(VoxelGrid::occupancy(meta, bytes)?)));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_free(grid: *mut FfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `out_dims` points to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_dims(grid: *const FfGrid, out_dims: *mut usize) -> FfStatus {
    guard(|| {
        let g = grid_ref(grid, "grid")?;
        if out_dims.is_null() {
            return Err(null("out_dims"));
        }
        std::slice::from_raw_parts_mut(out_dims, 3).copy_from_slice(&g.dims());
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_kind(grid: *const FfGrid, out: *mut FfGridKind) -> FfStatus {
    guard(|| {
        let g = grid_ref(grid, "grid")?;
        *out_ref(out, "out")? = match g.kind() {
            GridKind::Occupancy => FfGridKind::Occupancy,
            GridKind::Sdf => FfGridKind::Sdf,
        };
        Ok(())
    })
}

/// Copies every voxel value as f64; `len` must equal the voxel count.
///
/// # Safety
/// `out` holds `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn ff_grid_values(
    grid: *const FfGrid,
    out: *mut f64,
    len: usize,
) -> FfStatus {
    guard(|| {
        let g = grid_ref(grid, "grid")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != g.len() {
            return Err(Fail(
                FfStatus::ShapeMismatch,
                format!("buffer holds {len} values, grid has {}", g.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = g.value(i);
        }
        Ok(())
    })
}

/// Occupied voxels × voxel volume × density, in grams.
///
/// # Safety
/// `out_grams` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ff_digital_weight(
    grid: *const FfGrid,
    density_g_per_cm3: f64,
    out_grams: *mut f64,
) -> FfStatus {
    guard(|| {
        let g = grid_ref(grid, "grid")?;
        *out_ref(out_grams, "out_grams")? =
            digital_weight(g, WeightParams::new(density_g_per_cm3)?)?;
        Ok(())
    })
}

/// Mean and population std of per-slice SSIM with the default Gaussian window.
///
/// # Safety
/// Both grids come from this library; outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn ff_ssim_volume(
    a: *const FfGrid,
    b: *const FfGrid,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> FfStatus {
    guard(|| {
        let s = ssim_volume(grid_ref(a, "a")?, grid_ref(b, "b")?, &SsimParams::default())?;
        *out_ref(out_mean, "out_mean")? = s.mean;
        *out_ref(out_std, "out_std")? = s.std;
        Ok(())
    })
}

/// Mean absolute voxel difference.
///
/// # Safety
/// Both grids come from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ff_l1_norm(a: *const FfGrid, b: *const FfGrid, out: *mut f64) -> FfStatus {
    guard(|| {
        *out_ref(out, "out")? = l1_norm(grid_ref(a, "a")?, grid_ref(b, "b")?)?;
        Ok(())
    })
}

/// Loads a checkpoint as a 32-bit network.
///
/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ff_net_read(path: *const c_char, out: *mut *mut FfNet) -> FfStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let net = read_checkpoint::<f32>(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(FfNet(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ff_net_free(net: *mut FfNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Evaluates `n` normalized `(x, y, z, φ)` rows stored row-major in `points`.
///
/// # Safety
/// `points` holds `4·n` values and `out` holds `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn ff_net_forward(
    net: *const FfNet,
    points: *const f32,
    n: usize,
    out: *mut f32,
) -> FfStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if points.is_null() || out.is_null() {
            return Err(null("points or out"));
        }
        let pts = ndarray::ArrayView2::from_shape(
            (n, IN_DIM),
            std::slice::from_raw_parts(points, n * IN_DIM),
        )
        .map_err(|e| Fail(FfStatus::InvalidArgument, e.to_string()))?;
        let v = net.0.forward(pts)?;
        std::slice::from_raw_parts_mut(out, n)
            .copy_from_slice(v.as_slice().expect("forward output is contiguous"));
        Ok(())
    })
}

/// Thresholded reconstruction at flow rate `phi` on a `dims` lattice spanning
/// `bounds`.
///
/// # Safety
/// `bounds` and `out` are valid; `dims` points to 3 values.
#[no_mangle]
pub unsafe extern "C" fn ff_reconstruct(
    net: *const FfNet,
    bounds: *const FfBounds,
    phi: f64,
    dims: *const usize,
    out: *mut *mut FfGrid,
) -> FfStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let b = bounds.as_ref().ok_or_else(|| null("bounds"))?;
        let out = out_ref(out, "out")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = std::slice::from_raw_parts(dims, 3);
        let spatial = std::array::from_fn(|a| [b.spatial_min[a], b.spatial_max[a]]);
        let db = DomainBounds::new(spatial, [b.phi_min, b.phi_max])?;
        let r = reconstruct(&net.0, &ReconRequest::new(phi, [d[0], d[1], d[2]], db))?;
        *out = Box::into_raw(Box::new(FfGrid(r.occupancy)));
        Ok(())
    })
}
