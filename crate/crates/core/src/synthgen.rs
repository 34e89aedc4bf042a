//! Analytic stand-in for printed and scanned parts.
//!
//! Each [`ShapeSpec`] has a closed-form signed distance in a local frame whose
//! origin is the center of the shape's bounding box. The [`MorphologyModel`]
//! turns a flow rate into a geometric change: linear dilation around the
//! calibrated 100% setting, plus sinusoidal hatch voids when under-extruding.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxvol::{read_vgrid, write_vgrid, GridKind, GridMeta, VoxelGrid};

/// The nine flow rates each reference geometry was produced at.
pub const DEFAULT_FLOW_RATES: [f64; 9] =
    [45.0, 50.0, 60.0, 80.0, 100.0, 130.0, 170.0, 220.0, 280.0];

/// Margin, in voxels, a shape must keep from every grid face.
pub const GRID_MARGIN_VOXELS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        r_mm: f64,
    },
    Cylinder {
        r_mm: f64,
        h_mm: f64,
    },
    HexBolt {
        head_r_mm: f64,
        head_h_mm: f64,
        shaft_r_mm: f64,
        shaft_h_mm: f64,
    },
    GearDisk {
        r_mm: f64,
        h_mm: f64,
        n_teeth: u32,
        tooth_depth_mm: f64,
    },
    BunnyProxy {
        body_r_mm: f64,
        ear_r_mm: f64,
        ear_h_mm: f64,
    },
}

impl Default for ShapeSpec {
    fn default() -> Self {
        ShapeSpec::Sphere { r_mm: 8.0 }
    }
}

impl ShapeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeSpec::Sphere { .. } => "sphere",
            ShapeSpec::Cylinder { .. } => "cylinder",
            ShapeSpec::HexBolt { .. } => "hex_bolt",
            ShapeSpec::GearDisk { .. } => "gear_disk",
            ShapeSpec::BunnyProxy { .. } => "bunny_proxy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match *self {
            ShapeSpec::Sphere { r_mm } => vec![r_mm],
            ShapeSpec::Cylinder { r_mm, h_mm } => vec![r_mm, h_mm],
            ShapeSpec::HexBolt {
                head_r_mm,
                head_h_mm,
                shaft_r_mm,
                shaft_h_mm,
            } => vec![head_r_mm, head_h_mm, shaft_r_mm, shaft_h_mm],
            ShapeSpec::GearDisk {
                r_mm,
                h_mm,
                n_teeth,
                tooth_depth_mm,
            } => {
                if n_teeth < 3 {
                    return Err(Error::InvalidInput("gear needs at least 3 teeth".into()));
                }
                if tooth_depth_mm >= r_mm {
                    return Err(Error::InvalidInput(
                        "tooth depth must be smaller than the gear radius".into(),
                    ));
                }
                vec![r_mm, h_mm, tooth_depth_mm]
            }
            ShapeSpec::BunnyProxy {
                body_r_mm,
                ear_r_mm,
                ear_h_mm,
            } => vec![body_r_mm, ear_r_mm, ear_h_mm],
        };
        if dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "all shape dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Half extents (mm) of the undilated shape's bounding box.
    pub fn half_extents(&self) -> [f64; 3] {
        match *self {
            ShapeSpec::Sphere { r_mm } => [r_mm; 3],
            ShapeSpec::Cylinder { r_mm, h_mm } => [r_mm, r_mm, h_mm / 2.0],
            ShapeSpec::HexBolt {
                head_r_mm,
                head_h_mm,
                shaft_r_mm,
                shaft_h_mm,
            } => {
                let apothem = head_r_mm * (PI / 6.0).cos();
                [
                    head_r_mm.max(shaft_r_mm),
                    apothem.max(shaft_r_mm),
                    (head_h_mm + shaft_h_mm) / 2.0,
                ]
            }
            ShapeSpec::GearDisk { r_mm, h_mm, .. } => [r_mm, r_mm, h_mm / 2.0],
            ShapeSpec::BunnyProxy {
                body_r_mm,
                ear_r_mm,
                ear_h_mm,
            } => {
                let b = BunnyLayout::new(body_r_mm, ear_r_mm, ear_h_mm);
                [b.half_x, body_r_mm.max(ear_r_mm), b.half_z]
            }
        }
    }

    /// Signed distance (mm) of the undilated base shape; negative inside.
    pub fn base_sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            ShapeSpec::Sphere { r_mm } => norm3(p) - r_mm,
            ShapeSpec::Cylinder { r_mm, h_mm } => capped_cylinder(p, r_mm, h_mm / 2.0),
            ShapeSpec::HexBolt {
                head_r_mm,
                head_h_mm,
                shaft_r_mm,
                shaft_h_mm,
            } => {
                let total = head_h_mm + shaft_h_mm;
                let shaft_z = -total / 2.0 + shaft_h_mm / 2.0;
                let head_z = total / 2.0 - head_h_mm / 2.0;
                let shaft =
                    capped_cylinder([p[0], p[1], p[2] - shaft_z], shaft_r_mm, shaft_h_mm / 2.0);
                let head = hex_prism(
                    [p[0], p[1], p[2] - head_z],
                    head_r_mm * (PI / 6.0).cos(),
                    head_h_mm / 2.0,
                );
                shaft.min(head)
            }
            ShapeSpec::GearDisk {
                r_mm,
                h_mm,
                n_teeth,
                tooth_depth_mm,
            } => {
                let d2 = gear_profile([p[0], p[1]], r_mm, n_teeth, tooth_depth_mm);
                extrude(d2, p[2], h_mm / 2.0)
            }
            ShapeSpec::BunnyProxy {
                body_r_mm,
                ear_r_mm,
                ear_h_mm,
            } => {
                let b = BunnyLayout::new(body_r_mm, ear_r_mm, ear_h_mm);
                let body = norm3([p[0], p[1], p[2] - b.body_z]) - body_r_mm;
                let ear = |x: f64| {
                    capsule_z(
                        [p[0] - x, p[1], p[2]],
                        b.ear_base_z,
                        b.ear_base_z + ear_h_mm,
                        ear_r_mm,
                    )
                };
                body.min(ear(b.ear_x)).min(ear(-b.ear_x))
            }
        }
    }
}

struct BunnyLayout {
    body_z: f64,
    ear_base_z: f64,
    ear_x: f64,
    half_x: f64,
    half_z: f64,
}

impl BunnyLayout {
    fn new(body_r: f64, ear_r: f64, ear_h: f64) -> Self {
        let ear_x = 0.45 * body_r;
        let total = 1.6 * body_r + ear_h + ear_r;
        let body_z = body_r - total / 2.0;
        Self {
            body_z,
            ear_base_z: body_z + 0.6 * body_r,
            ear_x,
            half_x: body_r.max(ear_x + ear_r),
            half_z: total / 2.0,
        }
    }
}

#[inline]
fn norm3(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[inline]
fn extrude(d2: f64, z: f64, half_h: f64) -> f64 {
    let dz = z.abs() - half_h;
    let outside = (d2.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
    d2.max(dz).min(0.0) + outside
}

fn capped_cylinder(p: [f64; 3], r: f64, half_h: f64) -> f64 {
    extrude((p[0] * p[0] + p[1] * p[1]).sqrt() - r, p[2], half_h)
}

/// Hexagonal prism along z with the given apothem (flats at y = ±apothem).
fn hex_prism(p: [f64; 3], apothem: f64, half_h: f64) -> f64 {
    const K: [f64; 3] = [-0.866_025_403_784_438_6, 0.5, 0.577_350_269_189_625_8];
    let mut x = p[0].abs();
    let mut y = p[1].abs();
    let dot = (K[0] * x + K[1] * y).min(0.0);
    x -= 2.0 * dot * K[0];
    y -= 2.0 * dot * K[1];
    let cx = x.clamp(-K[2] * apothem, K[2] * apothem);
    let d2 = ((x - cx).powi(2) + (y - apothem).powi(2)).sqrt() * (y - apothem).signum();
    extrude(d2, p[2], half_h)
}

fn box2(p: [f64; 2], half: [f64; 2]) -> f64 {
    let dx = p[0].abs() - half[0];
    let dy = p[1].abs() - half[1];
    (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt() + dx.max(dy).min(0.0)
}

fn gear_profile(p: [f64; 2], r: f64, n_teeth: u32, depth: f64) -> f64 {
    let root = r - depth;
    let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let sector = 2.0 * PI / n_teeth as f64;
    let theta = p[1].atan2(p[0]);
    let folded = (theta + sector / 2.0).rem_euclid(sector) - sector / 2.0;
    let q = [rho * folded.cos(), rho * folded.sin()];
    let tooth_half_width = sector * root / 4.0;
    // tooth box reaches half a depth into the root disk so the union is seamless
    let tooth = box2(
        [q[0] - (r - 0.75 * depth), q[1]],
        [0.75 * depth, tooth_half_width],
    );
    (rho - root).min(tooth)
}

fn capsule_z(p: [f64; 3], z0: f64, z1: f64, r: f64) -> f64 {
    let z = p[2].clamp(z0, z1);
    norm3([p[0], p[1], p[2] - z]) - r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphologyModel {
    /// Dilation (mm) per unit of fractional over-extrusion.
    pub alpha_mm: f64,
    /// Flow rate below which hatch voids appear.
    pub void_threshold_percent: f64,
    pub void_period_mm: f64,
    pub void_gain_mm: f64,
}

impl Default for MorphologyModel {
    fn default() -> Self {
        Self {
            alpha_mm: 0.6,
            void_threshold_percent: 60.0,
            void_period_mm: 3.0,
            void_gain_mm: 1.5,
        }
    }
}

impl MorphologyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.void_period_mm > 0.0) {
            return Err(Error::InvalidInput("void period must be positive".into()));
        }
        if !(self.alpha_mm >= 0.0) || !(self.void_gain_mm >= 0.0) {
            return Err(Error::InvalidInput(
                "alpha and void gain must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Outward offset (mm) applied at flow rate `phi`.
    pub fn dilation_mm(&self, phi: f64) -> f64 {
        self.alpha_mm * (phi - 100.0) / 100.0
    }
}

fn hatch(model: &MorphologyModel, p: [f64; 3]) -> f64 {
    let w = 2.0 * PI / model.void_period_mm;
    (model.void_period_mm / (2.0 * PI)) * (1.0 + (w * p[0]).sin() * (w * p[1]).sin()) / 2.0
}

/// Signed distance (mm) of the geometry produced at flow rate `phi`, evaluated at a
/// point in the shape's local frame.
pub fn oracle_sdf(spec: &ShapeSpec, model: &MorphologyModel, p: [f64; 3], phi: f64) -> f64 {
    let d = spec.base_sdf(p) - model.dilation_mm(phi);
    if phi < model.void_threshold_percent {
        let carve =
            model.void_gain_mm * (model.void_threshold_percent - phi) / 100.0 - hatch(model, p);
        d.max(carve)
    } else {
        d
    }
}

/// Checks that the shape, dilated for `phi`, keeps the required margin inside `meta`.
pub fn check_fits(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
    phi: f64,
) -> Result<()> {
    let half = spec.half_extents();
    let grow = model.dilation_mm(phi).max(0.0);
    for a in 0..3 {
        let room = 0.5 * meta.dims[a] as f64 * meta.voxel_size[a]
            - GRID_MARGIN_VOXELS * meta.voxel_size[a];
        if half[a] + grow > room + 1e-9 {
            return Err(Error::OutOfBounds(format!(
                "{} at phi {phi}: half extent {:.3} mm on axis {a} exceeds {:.3} mm",
                spec.name(),
                half[a] + grow,
                room
            )));
        }
    }
    Ok(())
}

/// Voxelizes the produced geometry: a voxel is occupied iff the oracle distance at
/// its center is ≤ 0.
pub fn generate_volume(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
    phi: f64,
) -> Result<VoxelGrid> {
    if meta.kind != GridKind::Occupancy {
        return Err(Error::InvalidInput(
            "generate_volume needs an occupancy grid meta".into(),
        ));
    }
    if !(phi >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "flow rate must be >= 0, got {phi}"
        )));
    }
    spec.validate()?;
    model.validate()?;
    meta.validate()?;
    check_fits(spec, model, meta, phi)?;

    let center = meta.box_center();
    let [nx, ny, _] = meta.dims;
    let mut data = vec![0u8; meta.len()];
    data.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let c = meta.voxel_center(i, j, k);
                    let p = [c[0] - center[0], c[1] - center[1], c[2] - center[2]];
                    slab[i + nx * j] = (oracle_sdf(spec, model, p, phi) <= 0.0) as u8;
                }
            }
        });
    VoxelGrid::occupancy(meta.clone().with_flow_rate(Some(phi)), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub flow_rate_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub shape: String,
    pub volumes: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn volume_file_name(shape: &str, phi: f64) -> String {
    format!("{shape}_phi{phi}.vgrid")
}

/// Writes one VGRID per flow rate plus `manifest.json` into `out_dir`. Paths in the
/// manifest are relative to the manifest's directory.
pub fn generate_dataset(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
    phis: &[f64],
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    if phis.is_empty() {
        return Err(Error::InvalidInput("need at least one flow rate".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut volumes = Vec::with_capacity(phis.len());
    for &phi in phis {
        let grid = generate_volume(spec, model, meta, phi)?;
        let name = volume_file_name(spec.name(), phi);
        write_vgrid(&grid, out_dir.join(&name))?;
        volumes.push(ManifestEntry {
            path: name,
            flow_rate_percent: phi,
        });
    }
    let manifest = Manifest {
        shape: spec.name().to_string(),
        volumes,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every volume listed in a manifest, tagging each with its flow rate.
pub fn load_manifest_volumes(path: impl AsRef<Path>) -> Result<(Manifest, Vec<VoxelGrid>)> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let grids = manifest
        .volumes
        .iter()
        .map(|e| {
            let g = read_vgrid(base.join(&e.path))?;
            Ok(g.with_flow_rate(Some(e.flow_rate_percent)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, grids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta32() -> GridMeta {
        GridMeta::new([32, 32, 32], [1.0; 3], GridKind::Occupancy).unwrap()
    }

    #[test]
    fn sphere_center_is_minus_radius() {
        let spec = ShapeSpec::Sphere { r_mm: 8.0 };
        let model = MorphologyModel {
            alpha_mm: 0.0,
            ..Default::default()
        };
        for phi in [60.0, 100.0, 250.0] {
            assert_eq!(oracle_sdf(&spec, &model, [0.0; 3], phi), -8.0);
        }
    }

    #[test]
    fn dilation_at_double_flow() {
        let spec = ShapeSpec::Sphere { r_mm: 8.0 };
        let model = MorphologyModel {
            alpha_mm: 0.8,
            ..Default::default()
        };
        let d = oracle_sdf(&spec, &model, [8.0, 0.0, 0.0], 200.0);
        assert!((d + 0.8).abs() < 1e-12);
    }

    #[test]
    fn nominal_flow_reproduces_base_shape() {
        let model = MorphologyModel::default();
        let shapes = [
            ShapeSpec::Sphere { r_mm: 5.0 },
            ShapeSpec::HexBolt {
                head_r_mm: 4.0,
                head_h_mm: 2.0,
                shaft_r_mm: 1.5,
                shaft_h_mm: 5.0,
            },
            ShapeSpec::GearDisk {
                r_mm: 6.0,
                h_mm: 3.0,
                n_teeth: 10,
                tooth_depth_mm: 1.0,
            },
        ];
        for s in &shapes {
            for p in [[0.3, -1.2, 0.7], [4.0, 2.0, -1.0], [-7.0, 0.0, 2.0]] {
                assert_eq!(oracle_sdf(s, &model, p, 100.0), s.base_sdf(p));
            }
        }
    }

    #[test]
    fn base_shapes_have_expected_signs() {
        let cyl = ShapeSpec::Cylinder {
            r_mm: 3.0,
            h_mm: 4.0,
        };
        assert!((cyl.base_sdf([0.0, 0.0, 0.0]) + 2.0).abs() < 1e-12);
        assert!((cyl.base_sdf([5.0, 0.0, 0.0]) - 2.0).abs() < 1e-12);
        assert!((cyl.base_sdf([0.0, 0.0, 3.0]) - 1.0).abs() < 1e-12);

        let bolt = ShapeSpec::HexBolt {
            head_r_mm: 4.0,
            head_h_mm: 2.0,
            shaft_r_mm: 1.5,
            shaft_h_mm: 5.0,
        };
        // head top at +3.5, shaft bottom at -3.5
        assert!(bolt.base_sdf([0.0, 0.0, 3.0]) < 0.0);
        assert!(bolt.base_sdf([3.0, 0.0, 3.0]) < 0.0);
        assert!(bolt.base_sdf([3.0, 0.0, -2.0]) > 0.0);
        assert!(bolt.base_sdf([0.0, 0.0, -3.0]) < 0.0);
        // flats at the apothem
        let apothem = 4.0 * (PI / 6.0).cos();
        assert!((bolt.base_sdf([0.0, apothem + 0.5, 2.5]) - 0.5).abs() < 1e-9);

        let gear = ShapeSpec::GearDisk {
            r_mm: 6.0,
            h_mm: 2.0,
            n_teeth: 8,
            tooth_depth_mm: 1.0,
        };
        assert!(gear.base_sdf([5.5, 0.0, 0.0]) < 0.0, "tooth tip region");
        let gap = PI / 8.0;
        assert!(
            gear.base_sdf([5.5 * gap.cos(), 5.5 * gap.sin(), 0.0]) > 0.0,
            "gap between teeth"
        );

        let bunny = ShapeSpec::BunnyProxy {
            body_r_mm: 4.0,
            ear_r_mm: 1.0,
            ear_h_mm: 3.0,
        };
        let half = bunny.half_extents();
        assert!(bunny.base_sdf([0.0, 0.0, -half[2] + 0.1]) < 0.0);
        assert!(bunny.base_sdf([1.8, 0.0, half[2] - 0.1]) < 0.0, "ear tip");
        assert!(
            bunny.base_sdf([0.0, 0.0, half[2] - 0.1]) > 0.0,
            "between ears"
        );
    }

    #[test]
    fn sphere_volume_matches_brute_force_count() {
        let spec = ShapeSpec::Sphere { r_mm: 8.0 };
        let grid = generate_volume(&spec, &MorphologyModel::default(), &meta32(), 100.0).unwrap();
        let mut expected = 0;
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    let d2 = [i, j, k]
                        .iter()
                        .map(|&c| (c as f64 + 0.5 - 16.0).powi(2))
                        .sum::<f64>();
                    if d2 <= 64.0 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(grid.occupied_count(), expected);
        assert_eq!(grid.meta().flow_rate_percent, Some(100.0));
    }

    #[test]
    fn dilation_is_monotone_above_void_threshold() {
        let spec = ShapeSpec::Sphere { r_mm: 8.0 };
        let model = MorphologyModel::default();
        let lo = generate_volume(&spec, &model, &meta32(), 80.0).unwrap();
        let hi = generate_volume(&spec, &model, &meta32(), 220.0).unwrap();
        let (lo, hi) = (lo.as_u8().unwrap(), hi.as_u8().unwrap());
        assert!(lo.iter().zip(hi).all(|(&a, &b)| a <= b));
    }

    #[test]
    fn voids_remove_material() {
        let spec = ShapeSpec::Sphere { r_mm: 8.0 };
        let model = MorphologyModel::default();
        let under = generate_volume(&spec, &model, &meta32(), 45.0).unwrap();
        let nominal = generate_volume(&spec, &model, &meta32(), 100.0).unwrap();
        let no_voids = MorphologyModel {
            void_gain_mm: 0.0,
            ..model
        };
        let shrunk_only = generate_volume(&spec, &no_voids, &meta32(), 45.0).unwrap();
        assert!(under.occupied_count() < nominal.occupied_count());
        assert!(under.occupied_count() < shrunk_only.occupied_count());
    }

    #[test]
    fn oversize_shape_is_rejected() {
        let spec = ShapeSpec::Sphere { r_mm: 14.5 };
        assert!(matches!(
            generate_volume(&spec, &MorphologyModel::default(), &meta32(), 100.0),
            Err(Error::OutOfBounds(_))
        ));
        let ok = ShapeSpec::Sphere { r_mm: 13.0 };
        assert!(generate_volume(&ok, &MorphologyModel::default(), &meta32(), 280.0).is_err());
        assert!(generate_volume(&ok, &MorphologyModel::default(), &meta32(), 100.0).is_ok());
    }

    #[test]
    fn dataset_writes_one_file_per_flow_rate() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ShapeSpec::Sphere { r_mm: 6.0 };
        let meta = GridMeta::new([24, 24, 24], [1.0; 3], GridKind::Occupancy).unwrap();
        let m = generate_dataset(
            &spec,
            &MorphologyModel::default(),
            &meta,
            &DEFAULT_FLOW_RATES,
            dir.path(),
        )
        .unwrap();
        assert_eq!(m.volumes.len(), 9);
        let (loaded, grids) = load_manifest_volumes(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(grids.len(), 9);
        assert_eq!(grids[4].meta().flow_rate_percent, Some(100.0));

        let single = tempfile::tempdir().unwrap();
        let m1 = generate_dataset(
            &spec,
            &MorphologyModel::default(),
            &meta,
            &[100.0],
            single.path(),
        )
        .unwrap();
        assert_eq!(m1.volumes.len(), 1);
        assert!(generate_dataset(
            &spec,
            &MorphologyModel::default(),
            &meta,
            &[],
            single.path()
        )
        .is_err());
    }

    #[test]
    fn dataset_is_byte_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = ShapeSpec::Sphere { r_mm: 5.0 };
        let meta = GridMeta::new([16, 16, 16], [1.0; 3], GridKind::Occupancy).unwrap();
        let phis = [50.0, 112.5];
        generate_dataset(&spec, &MorphologyModel::default(), &meta, &phis, a.path()).unwrap();
        generate_dataset(&spec, &MorphologyModel::default(), &meta, &phis, b.path()).unwrap();
        for name in [
            "manifest.json",
            "sphere_phi50.vgrid",
            "sphere_phi112.5.vgrid",
        ] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }
}
