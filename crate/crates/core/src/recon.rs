//! Manifold reconstruction: dense evaluation of a field at a fixed flow rate.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralfield::{FinalActivation, Real, SirenNet, IN_DIM};
use crate::sampler::DomainBounds;
use crate::voxvol::{
    digital_weight, threshold, GridKind, GridMeta, Image, VoxelGrid, WeightParams,
};

/// Anything that maps normalized `(x, y, z, φ)` rows to field values.
pub trait ScalarField: Sync {
    fn eval(&self, points: ArrayView2<f32>) -> Result<Array1<f32>>;

    /// Occupancy fields are thresholded with `≥ iso`, SDF fields with `≤ iso`.
    fn kind(&self) -> GridKind;

    fn default_iso(&self) -> f64 {
        match self.kind() {
            GridKind::Occupancy => 0.5,
            GridKind::Sdf => 0.0,
        }
    }
}

impl<T: Real> ScalarField for SirenNet<T> {
    fn eval(&self, points: ArrayView2<f32>) -> Result<Array1<f32>> {
        let pts = points.mapv(|v| T::from_f32(v).unwrap());
        Ok(self.forward(pts.view())?.mapv(|v| v.to_f32().unwrap()))
    }

    fn kind(&self) -> GridKind {
        match self.config().final_activation {
            FinalActivation::Sigmoid => GridKind::Occupancy,
            FinalActivation::Linear => GridKind::Sdf,
        }
    }
}

/// Field given by a closure over normalized coordinates; handy for rigged
/// fields in tests and for analytic references.
pub struct FnField<F> {
    pub f: F,
    pub kind: GridKind,
}

impl<F: Fn([f64; 4]) -> f64 + Sync> ScalarField for FnField<F> {
    fn eval(&self, points: ArrayView2<f32>) -> Result<Array1<f32>> {
        Ok(points
            .rows()
            .into_iter()
            .map(|r| (self.f)([r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64]) as f32)
            .collect())
    }

    fn kind(&self) -> GridKind {
        self.kind
    }
}

pub const DEFAULT_SLAB_LAYERS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconRequest {
    pub phi_percent: f64,
    pub dims: [usize; 3],
    pub bounds: DomainBounds,
    /// Defaults to the field's own convention (0.5 occupancy, 0 SDF).
    pub iso: Option<f64>,
    /// z layers evaluated per slab.
    pub slab_layers: usize,
}

impl ReconRequest {
    pub fn new(phi_percent: f64, dims: [usize; 3], bounds: DomainBounds) -> Self {
        Self {
            phi_percent,
            dims,
            bounds,
            iso: None,
            slab_layers: DEFAULT_SLAB_LAYERS,
        }
    }

    /// Grid whose voxel centers are spaced evenly from the minimum to the
    /// maximum of the spatial bounds, inclusive.
    pub fn meta(&self, kind: GridKind) -> Result<GridMeta> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(format!(
                "reconstruction dims must be >= 2, got {:?}",
                self.dims
            )));
        }
        let b = &self.bounds.spatial;
        let size: [f64; 3] =
            std::array::from_fn(|a| (b[a][1] - b[a][0]) / (self.dims[a] - 1) as f64);
        let origin: [f64; 3] = std::array::from_fn(|a| b[a][0] - 0.5 * size[a]);
        Ok(GridMeta::new(self.dims, size, kind)?
            .with_origin(origin)
            .with_flow_rate(Some(self.phi_percent)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// Raw field values (f32).
    pub field: VoxelGrid,
    /// Thresholded binary occupancy.
    pub occupancy: VoxelGrid,
}

#[inline]
fn lattice(i: usize, n: usize) -> f32 {
    (-1.0 + 2.0 * i as f64 / (n - 1) as f64) as f32
}

fn warn_extrapolation(phi: f64, bounds: &DomainBounds) {
    let [lo, hi] = bounds.phi_range;
    if phi < lo || phi > hi {
        log::warn!("flow rate {phi}% lies outside the trained range [{lo}, {hi}]; extrapolating");
    }
}

/// Normalized coordinates of layers `k0..k1` at flow rate `phi`.
fn slab_points(dims: [usize; 3], k0: usize, k1: usize, phi_n: f32) -> Array2<f32> {
    let [nx, ny, nz] = dims;
    let mut pts = Array2::zeros(((k1 - k0) * nx * ny, IN_DIM));
    let mut r = 0;
    for k in k0..k1 {
        for j in 0..ny {
            for i in 0..nx {
                pts[[r, 0]] = lattice(i, nx);
                pts[[r, 1]] = lattice(j, ny);
                pts[[r, 2]] = lattice(k, nz);
                pts[[r, 3]] = phi_n;
                r += 1;
            }
        }
    }
    pts
}

/// Evaluates `field` at every voxel center of the requested grid.
pub fn reconstruct(field: &dyn ScalarField, req: &ReconRequest) -> Result<Reconstruction> {
    req.bounds.validate()?;
    if req.slab_layers == 0 {
        return Err(Error::InvalidInput("slab_layers must be at least 1".into()));
    }
    let kind = field.kind();
    let meta = req.meta(kind)?;
    warn_extrapolation(req.phi_percent, &req.bounds);
    let phi_n = req.bounds.normalize_phi(req.phi_percent) as f32;
    let nz = req.dims[2];
    let mut values = Vec::with_capacity(meta.len());
    let mut k0 = 0;
    while k0 < nz {
        let k1 = (k0 + req.slab_layers).min(nz);
        let pts = slab_points(req.dims, k0, k1, phi_n);
        values.extend(field.eval(pts.view())?);
        k0 = k1;
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "field produced a non-finite value at voxel {i}"
        )));
    }
    let grid = match kind {
        GridKind::Occupancy => VoxelGrid::field(meta, values)?,
        GridKind::Sdf => VoxelGrid::sdf(meta, values)?,
    };
    let occupancy = threshold(&grid, req.iso.unwrap_or_else(|| field.default_iso()));
    Ok(Reconstruction {
        field: grid,
        occupancy,
    })
}

/// Raw field values of the single layer `k` (of `dims[2]`) as an `nx × ny` image.
pub fn evaluate_layer(
    field: &dyn ScalarField,
    phi_percent: f64,
    k: usize,
    dims: [usize; 3],
    bounds: &DomainBounds,
) -> Result<Image> {
    if k >= dims[2] {
        return Err(Error::OutOfBounds(format!(
            "layer {k} outside 0..{}",
            dims[2]
        )));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidInput(format!(
            "dims must be >= 2, got {dims:?}"
        )));
    }
    let pts = slab_points(dims, k, k + 1, bounds.normalize_phi(phi_percent) as f32);
    let v = field.eval(pts.view())?;
    Image::new(dims[0], dims[1], v.iter().map(|&x| x as f64).collect())
}

/// The `nx × ny` plane at layer `k`.
pub fn slice_z(grid: &VoxelGrid, k: usize) -> Result<Image> {
    let [nx, ny, nz] = grid.dims();
    if k >= nz {
        return Err(Error::OutOfBounds(format!("layer {k} outside 0..{nz}")));
    }
    let start = k * nx * ny;
    Image::new(
        nx,
        ny,
        (start..start + nx * ny).map(|i| grid.value(i)).collect(),
    )
}

/// Inverse of slicing every layer: rebuilds a grid with `meta` from its z slices.
pub fn stack_slices(slices: &[Image], meta: GridMeta) -> Result<VoxelGrid> {
    let [nx, ny, nz] = meta.dims;
    if slices.len() != nz || slices.iter().any(|s| s.width != nx || s.height != ny) {
        return Err(Error::ShapeMismatch(format!(
            "{} slices do not fit grid {:?}",
            slices.len(),
            meta.dims
        )));
    }
    let values = slices.iter().flat_map(|s| s.data.iter().copied());
    match meta.kind {
        GridKind::Occupancy
            if slices
                .iter()
                .all(|s| s.data.iter().all(|&v| v == 0.0 || v == 1.0)) =>
        {
            VoxelGrid::occupancy(meta, values.map(|v| v as u8).collect())
        }
        GridKind::Occupancy => VoxelGrid::field(meta, values.map(|v| v as f32).collect()),
        GridKind::Sdf => VoxelGrid::sdf(meta, values.map(|v| v as f32).collect()),
    }
}

/// Binary PGM (P5, maxval 255); values are clipped to [0, 1] and scaled.
pub fn write_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out)?;
    Ok(())
}

/// 0, 5, …, 300.
pub fn default_weight_phis() -> Vec<f64> {
    (0..=60).map(|i| 5.0 * i as f64).collect()
}

/// Digital weight of the thresholded reconstruction at every flow rate.
pub fn weight_curve(
    field: &dyn ScalarField,
    bounds: &DomainBounds,
    dims: [usize; 3],
    phis: &[f64],
    params: WeightParams,
) -> Result<Vec<(f64, f64)>> {
    if phis.is_empty() {
        return Err(Error::InvalidInput(
            "weight curve needs at least one flow rate".into(),
        ));
    }
    phis.iter()
        .map(|&phi| {
            let r = reconstruct(field, &ReconRequest::new(phi, dims, *bounds))?;
            Ok((phi, digital_weight(&r.occupancy, params)?))
        })
        .collect()
}

pub fn write_weight_curve_csv(curve: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["phi_percent", "weight_g"])?;
    for (phi, g) in curve {
        w.write_record([phi.to_string(), g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> DomainBounds {
        DomainBounds::new([[0.5, 7.5]; 3], [45.0, 280.0]).unwrap()
    }

    fn constant(v: f64) -> FnField<impl Fn([f64; 4]) -> f64 + Sync> {
        FnField {
            f: move |_| v,
            kind: GridKind::Occupancy,
        }
    }

    #[test]
    fn constant_field_fills_the_grid() {
        let r = reconstruct(
            &constant(0.8),
            &ReconRequest::new(100.0, [8, 8, 8], bounds()),
        )
        .unwrap();
        assert_eq!(r.occupancy.occupied_count(), 512);
        let empty = reconstruct(
            &constant(0.1),
            &ReconRequest::new(100.0, [8, 8, 8], bounds()),
        )
        .unwrap();
        assert_eq!(empty.occupancy.occupied_count(), 0);
    }

    #[test]
    fn reconstruction_grid_matches_bounds() {
        let req = ReconRequest::new(100.0, [8, 8, 8], bounds());
        let m = req.meta(GridKind::Occupancy).unwrap();
        assert_eq!(m.voxel_center(0, 0, 0), [0.5; 3]);
        assert_eq!(m.voxel_center(7, 7, 7), [7.5; 3]);
        assert_eq!(m.voxel_size, [1.0; 3]);
    }

    #[test]
    fn slab_size_does_not_change_result() {
        let f = FnField {
            f: |p: [f64; 4]| 0.5 + 0.4 * (3.0 * p[0] + p[2]).sin() * p[3],
            kind: GridKind::Occupancy,
        };
        let mut req = ReconRequest::new(170.0, [9, 7, 11], bounds());
        let a = reconstruct(&f, &req).unwrap();
        req.slab_layers = 1;
        let b = reconstruct(&f, &req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, reconstruct(&f, &req).unwrap());
    }

    #[test]
    fn sdf_fields_threshold_below_iso() {
        let f = FnField {
            f: |p: [f64; 4]| p[0],
            kind: GridKind::Sdf,
        };
        let r = reconstruct(&f, &ReconRequest::new(100.0, [4, 2, 2], bounds())).unwrap();
        assert_eq!(
            r.occupancy.as_u8().unwrap(),
            &[1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0]
        );
    }

    #[test]
    fn slices_restack() {
        let m = GridMeta::new([4, 3, 8], [1.0; 3], GridKind::Occupancy).unwrap();
        let data: Vec<u8> = (0..m.len())
            .map(|i| ((i / 12) >= 3 && (i / 12) <= 5) as u8)
            .collect();
        let g = VoxelGrid::occupancy(m.clone(), data).unwrap();
        assert!(slice_z(&g, 4).unwrap().data.iter().all(|&v| v == 1.0));
        assert!(slice_z(&g, 0).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(slice_z(&g, 8).is_err());
        let slices: Vec<_> = (0..8).map(|k| slice_z(&g, k).unwrap()).collect();
        assert_eq!(stack_slices(&slices, m).unwrap(), g);
    }

    #[test]
    fn weight_curve_of_empty_field() {
        let curve = weight_curve(
            &constant(0.0),
            &bounds(),
            [8, 8, 8],
            &default_weight_phis(),
            WeightParams::default(),
        )
        .unwrap();
        assert_eq!(curve.len(), 61);
        assert!(curve.iter().all(|&(_, g)| g == 0.0));
        assert_eq!(curve[60].0, 300.0);
        let one = weight_curve(
            &constant(1.0),
            &bounds(),
            [8, 8, 8],
            &[100.0],
            WeightParams::default(),
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].1 - 512.0 * 1e-3 * 1.25).abs() < 1e-12);
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        write_pgm(&Image::new(2, 1, vec![0.0, 1.0]).unwrap(), &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }
}
