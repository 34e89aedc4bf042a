//! Leveling of scanned volumes against their bottom surface and rigid
//! registration between samples.

mod cpd;

pub use cpd::{cpd_rigid_z, CpdConfig, CpdResult};

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxvol::{GridData, GridMeta, VoxelGrid};

/// First occupied z index per (i, j) column; `None` for empty columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<usize>>,
}

impl DepthMap {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.values[i + self.nx * j]
    }

    /// Bottom-surface points in physical millimeters: column centers in x/y, the
    /// lower face of the first occupied voxel in z.
    pub fn points(&self, meta: &GridMeta) -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                if let Some(k) = self.get(i, j) {
                    let c = meta.voxel_center(i, j, k);
                    pts.push([c[0], c[1], meta.origin[2] + k as f64 * meta.voxel_size[2]]);
                }
            }
        }
        pts
    }
}

pub fn extract_depth_map(grid: &VoxelGrid) -> DepthMap {
    let [nx, ny, nz] = grid.dims();
    let mut values = vec![None; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            values[i + nx * j] = (0..nz).find(|&k| grid.get(i, j, k) >= 0.5);
        }
    }
    DepthMap { nx, ny, values }
}

/// Plane `normal · p = offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub normal: [f64; 3],
    pub offset: f64,
    pub rms_residual: f64,
}

impl PlaneFit {
    pub fn horizontal(z: f64) -> Self {
        Self {
            normal: [0.0, 0.0, 1.0],
            offset: z,
            rms_residual: 0.0,
        }
    }

    /// Angle between the plane normal and +z, radians.
    pub fn tilt(&self) -> f64 {
        self.normal[2].clamp(-1.0, 1.0).acos()
    }
}

/// Plane through the depth-map points. Columns whose first hit lies more than
/// one voxel off the fitted plane (side walls, overhangs) are dropped and the
/// plane refitted, up to three times.
pub fn fit_plane(depth: &DepthMap, meta: &GridMeta) -> Result<PlaneFit> {
    let mut pts = depth.points(meta);
    let cutoff = meta.voxel_size.iter().copied().fold(0.0, f64::max);
    let mut fit = fit_plane_points(&pts)?;
    for _ in 0..3 {
        let kept: Vec<[f64; 3]> = pts
            .iter()
            .copied()
            .filter(|p| {
                (fit.normal[0] * p[0] + fit.normal[1] * p[1] + fit.normal[2] * p[2] - fit.offset)
                    .abs()
                    <= cutoff
            })
            .collect();
        if kept.len() == pts.len() || kept.len() < 3 {
            break;
        }
        pts = kept;
        fit = fit_plane_points(&pts)?;
    }
    Ok(fit)
}

/// Least-squares plane through `points`, fitted as the height field
/// `z = a·x + b·y + c`. The residual is the RMS orthogonal distance.
pub fn fit_plane_points(points: &[[f64; 3]]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = [0, 1, 2].map(|a| points.iter().map(|p| p[a]).sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (x, y, z) = (p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx * syy).max(f64::MIN_POSITIVE);
    if det.abs() <= 1e-12 * scale || sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("plane fit points are collinear".into()));
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let c = mean[2] - a * mean[0] - b * mean[1];
    let len = (a * a + b * b + 1.0).sqrt();
    let normal = [-a / len, -b / len, 1.0 / len];
    let offset = c / len;
    let ss: f64 = points
        .iter()
        .map(|p| (normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] - offset).powi(2))
        .sum();
    Ok(PlaneFit {
        normal,
        offset,
        rms_residual: (ss / n).sqrt(),
    })
}

type Mat3 = [[f64; 3]; 3];

/// Rotation taking unit vector `n` onto +z about the axis `n × ẑ`.
fn rotation_to_z(n: [f64; 3]) -> Mat3 {
    let axis = [n[1], -n[0], 0.0];
    let s = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    let c = n[2];
    if s < 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [axis[0] / s, axis[1] / s, 0.0];
    let t = 1.0 - c;
    // Rodrigues
    [
        [
            c + k[0] * k[0] * t,
            k[0] * k[1] * t - k[2] * s,
            k[0] * k[2] * t + k[1] * s,
        ],
        [
            k[1] * k[0] * t + k[2] * s,
            c + k[1] * k[1] * t,
            k[1] * k[2] * t - k[0] * s,
        ],
        [
            k[2] * k[0] * t - k[1] * s,
            k[2] * k[1] * t + k[0] * s,
            c + k[2] * k[2] * t,
        ],
    ]
}

fn mat_t_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| m[0][c] * v[0] + m[1][c] * v[1] + m[2][c] * v[2])
}

/// Rotates the volume so `plane.normal` points along +z and translates the plane
/// onto the bottom face of the grid, pivoting about the plane point below the grid
/// center. Resampling is nearest-neighbor; samples mapped from outside the grid
/// become 0.
pub fn level_volume(grid: &VoxelGrid, plane: &PlaneFit) -> VoxelGrid {
    let meta = grid.meta();
    let rot = rotation_to_z(plane.normal);
    let center = meta.box_center();
    let n = plane.normal;
    let dist = n[0] * center[0] + n[1] * center[1] + n[2] * center[2] - plane.offset;
    let pivot = [
        center[0] - dist * n[0],
        center[1] - dist * n[1],
        center[2] - dist * n[2],
    ];
    let target = [pivot[0], pivot[1], meta.origin[2]];
    let [nx, ny, nz] = meta.dims;

    let source_index = |i: usize, j: usize, k: usize| -> Option<usize> {
        let q = meta.voxel_center(i, j, k);
        let local = mat_t_vec(&rot, [q[0] - target[0], q[1] - target[1], q[2] - target[2]]);
        let p = [
            local[0] + pivot[0],
            local[1] + pivot[1],
            local[2] + pivot[2],
        ];
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - meta.origin[a]) / meta.voxel_size[a] - 0.5).round();
            if f < 0.0 || f >= meta.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(meta.index(idx[0], idx[1], idx[2]))
    };

    let mut map = Vec::with_capacity(meta.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                map.push(source_index(i, j, k));
            }
        }
    }
    let data = match grid.data() {
        GridData::U8(v) => GridData::U8(map.iter().map(|s| s.map_or(0, |s| v[s])).collect()),
        GridData::F32(v) => GridData::F32(map.iter().map(|s| s.map_or(0.0, |s| v[s])).collect()),
    };
    VoxelGrid::new(meta.clone(), data).expect("resampling preserves grid invariants")
}

/// Rigid transform restricted to xy translation and rotation about z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2p5D {
    #[serde(rename = "tx_mm")]
    pub tx: f64,
    #[serde(rename = "ty_mm")]
    pub ty: f64,
    #[serde(rename = "theta_z_rad")]
    pub theta_z: f64,
}

impl RigidTransform2p5D {
    pub fn new(tx: f64, ty: f64, theta_z: f64) -> Self {
        Self {
            tx,
            ty,
            theta_z: wrap_angle(theta_z),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.theta_z.sin_cos();
        [
            c * p[0] - s * p[1] + self.tx,
            s * p[0] + c * p[1] + self.ty,
            p[2],
        ]
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Occupied voxels with at least one empty (or out-of-grid) face neighbour, as
/// physical points, uniformly subsampled to at most `max_points`.
pub fn surface_points(grid: &VoxelGrid, max_points: usize, seed: u64) -> Vec<[f64; 3]> {
    let meta = grid.meta();
    let [nx, ny, nz] = meta.dims;
    let occupied = |i: isize, j: isize, k: isize| {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < nx
            && (j as usize) < ny
            && (k as usize) < nz
            && grid.get(i as usize, j as usize, k as usize) >= 0.5
    };
    let mut pts = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c) = (i as isize, j as isize, k as isize);
                if !occupied(a, b, c) {
                    continue;
                }
                let boundary = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ]
                .iter()
                .any(|&(di, dj, dk)| !occupied(a + di, b + dj, c + dk));
                if boundary {
                    pts.push(meta.voxel_center(i, j, k));
                }
            }
        }
    }
    if pts.len() <= max_points {
        return pts;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, pts.len(), max_points).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pts[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxvol::GridKind;

    fn meta(dims: [usize; 3]) -> GridMeta {
        GridMeta::new(dims, [1.0; 3], GridKind::Occupancy).unwrap()
    }

    fn from_fn(dims: [usize; 3], f: impl Fn([f64; 3]) -> bool) -> VoxelGrid {
        let m = meta(dims);
        let mut data = vec![0u8; m.len()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data[m.index(i, j, k)] = f(m.voxel_center(i, j, k)) as u8;
                }
            }
        }
        VoxelGrid::occupancy(m, data).unwrap()
    }

    /// 16 × 32 × 10 mm box at the center of a 0.5 mm grid, rotated by `deg`
    /// about the x axis.
    fn tilted_box(deg: f64) -> VoxelGrid {
        let t = deg.to_radians();
        let m = GridMeta::new([48, 80, 48], [0.5; 3], GridKind::Occupancy).unwrap();
        let mut data = vec![0u8; m.len()];
        for k in 0..48 {
            for j in 0..80 {
                for i in 0..48 {
                    let p = m.voxel_center(i, j, k);
                    let (y, z) = (p[1] - 20.0, p[2] - 12.0);
                    let yr = t.cos() * y + t.sin() * z;
                    let zr = -t.sin() * y + t.cos() * z;
                    data[m.index(i, j, k)] =
                        ((p[0] - 12.0).abs() <= 8.0 && yr.abs() <= 16.0 && zr.abs() <= 5.0) as u8;
                }
            }
        }
        VoxelGrid::occupancy(m, data).unwrap()
    }

    #[test]
    fn depth_map_of_empty_and_slab() {
        let empty = from_fn([4, 4, 6], |_| false);
        assert!(extract_depth_map(&empty).values.iter().all(Option::is_none));
        let slab = from_fn([4, 4, 8], |p| (3.0..6.0).contains(&p[2]));
        assert!(extract_depth_map(&slab)
            .values
            .iter()
            .all(|&v| v == Some(3)));
    }

    #[test]
    fn tilted_slab_depth_matches_analytic_plane() {
        let t = 5f64.to_radians().tan();
        let g = from_fn([24, 24, 16], move |p| p[2] >= 2.0 + p[1] * t);
        let d = extract_depth_map(&g);
        for j in 0..24 {
            for i in 0..24 {
                // first k whose center satisfies k + 0.5 >= 2 + y tan
                let y = j as f64 + 0.5;
                let expected = (2.0 + y * t - 0.5).ceil() as usize;
                assert_eq!(d.get(i, j), Some(expected));
            }
        }
    }

    #[test]
    fn flat_plane_fit() {
        let pts: Vec<_> = (0..5)
            .flat_map(|i| (0..5).map(move |j| [i as f64, j as f64, 2.0]))
            .collect();
        let fit = fit_plane_points(&pts).unwrap();
        assert_eq!(fit.normal, [0.0, 0.0, 1.0]);
        assert!((fit.offset - 2.0).abs() < 1e-12);
        assert!(fit.rms_residual <= 1e-9);

        let slab = from_fn([6, 6, 6], |p| p[2] >= 2.0);
        let fit = fit_plane(&extract_depth_map(&slab), slab.meta()).unwrap();
        assert!((fit.offset - 2.0).abs() < 1e-12 && fit.rms_residual <= 1e-9);
    }

    #[test]
    fn tilted_plane_normal_is_recovered() {
        let t = 5f64.to_radians();
        let pts: Vec<_> = (0..10)
            .flat_map(|i| {
                (0..10).map(move |j| {
                    [
                        i as f64 * 1.3,
                        j as f64 * 0.7,
                        i as f64 * 1.3 * t.tan() + 1.0,
                    ]
                })
            })
            .collect();
        let fit = fit_plane_points(&pts).unwrap();
        let analytic = [-t.sin(), 0.0, t.cos()];
        for a in 0..3 {
            assert!((fit.normal[a] - analytic[a]).abs() < 1e-6);
        }
        assert!(fit.rms_residual <= 1e-9);
    }

    #[test]
    fn degenerate_plane_inputs() {
        assert!(fit_plane_points(&[[0.0; 3], [1.0, 0.0, 0.0]]).is_err());
        let line: Vec<_> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 1.0]).collect();
        assert!(matches!(fit_plane_points(&line), Err(Error::Degenerate(_))));
    }

    #[test]
    fn identity_leveling_is_a_no_op() {
        let g = tilted_box(0.0);
        assert_eq!(level_volume(&g, &PlaneFit::horizontal(0.0)), g);
    }

    #[test]
    fn leveling_removes_tilt_and_keeps_volume() {
        let g = tilted_box(5.0);
        let fit = fit_plane(&extract_depth_map(&g), g.meta()).unwrap();
        assert!(
            (fit.tilt().to_degrees() - 5.0).abs() < 0.5,
            "fitted tilt {} rms {}",
            fit.tilt().to_degrees(),
            fit.rms_residual
        );
        let leveled = level_volume(&g, &fit);
        let refit = fit_plane(&extract_depth_map(&leveled), leveled.meta()).unwrap();
        assert!(
            refit.tilt().to_degrees() <= 0.5,
            "residual tilt {}",
            refit.tilt().to_degrees()
        );
        let before = g.occupied_count() as f64;
        let after = leveled.occupied_count() as f64;
        assert!((after - before).abs() / before <= 0.02);

        let again = level_volume(&leveled, &refit);
        let third = fit_plane(&extract_depth_map(&again), again.meta()).unwrap();
        assert!(third.tilt().to_degrees() <= 0.5);
        assert!(third.offset.abs() < 0.5);
    }

    #[test]
    fn transform_wraps_angle() {
        let t = RigidTransform2p5D::new(0.0, 0.0, 3.0 * PI);
        assert!((t.theta_z - PI).abs() < 1e-12);
        let t = RigidTransform2p5D::new(0.0, 0.0, -PI);
        assert!((t.theta_z - PI).abs() < 1e-12);
        let json = serde_json::to_string(&RigidTransform2p5D::new(1.0, 2.0, 0.5)).unwrap();
        assert_eq!(json, r#"{"tx_mm":1.0,"ty_mm":2.0,"theta_z_rad":0.5}"#);
    }

    #[test]
    fn surface_points_are_subsampled_deterministically() {
        let g = tilted_box(0.0);
        let all = surface_points(&g, usize::MAX, 0);
        let a = surface_points(&g, 500, 7);
        let b = surface_points(&g, 500, 7);
        assert!(all.len() > 500);
        assert_eq!(a.len(), 500);
        assert_eq!(a, b);
    }
}
