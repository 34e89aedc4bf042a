//! Per-layer flow-rate search against expected cross-sections.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::{evaluate_layer, ScalarField};
use crate::sampler::DomainBounds;
use crate::synthgen::{check_fits, oracle_sdf, MorphologyModel, ShapeSpec};
use crate::voxvol::{GridKind, GridMeta, Image};

/// Flow rate assigned to layers with nothing to print, and the tie-break anchor.
pub const BASELINE_PHI: f64 = 100.0;

/// 45, 46, …, 280.
pub fn default_candidates() -> Vec<f64> {
    (45..=280).map(f64::from).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedLayerImage {
    pub z_index: usize,
    pub image: Image,
}

fn render_layer(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
    k: usize,
    phi: f64,
) -> Result<Image> {
    let center = meta.box_center();
    let [nx, ny, _] = meta.dims;
    let mut data = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = meta.voxel_center(i, j, k);
            let p = [c[0] - center[0], c[1] - center[1], c[2] - center[2]];
            data[i + nx * j] = if oracle_sdf(spec, model, p, phi) <= 0.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    Image::new(nx, ny, data)
}

/// Cross-sections of the geometry printed at the calibrated baseline flow rate.
pub fn expected_layers(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
) -> Result<Vec<ExpectedLayerImage>> {
    expected_layers_profile(spec, model, meta, |_| BASELINE_PHI)
}

/// Cross-sections where layer `k` is rendered at flow rate `profile(k)`.
pub fn expected_layers_profile(
    spec: &ShapeSpec,
    model: &MorphologyModel,
    meta: &GridMeta,
    profile: impl Fn(usize) -> f64 + Sync,
) -> Result<Vec<ExpectedLayerImage>> {
    spec.validate()?;
    model.validate()?;
    meta.validate()?;
    let nz = meta.dims[2];
    let phis: Vec<f64> = (0..nz).map(&profile).collect();
    for &phi in &phis {
        check_fits(spec, model, meta, phi)?;
    }
    (0..nz)
        .into_par_iter()
        .map(|k| {
            Ok(ExpectedLayerImage {
                z_index: k,
                image: render_layer(spec, model, meta, k, phis[k])?,
            })
        })
        .collect()
}

/// Mean absolute difference between the thresholded slice of `field` at
/// `(z_index, phi)` and the expected image.
pub fn fitness(
    field: &dyn ScalarField,
    z_index: usize,
    phi: f64,
    expected: &ExpectedLayerImage,
    bounds: &DomainBounds,
    dims: [usize; 3],
) -> Result<f64> {
    let exp = &expected.image;
    if exp.width != dims[0] || exp.height != dims[1] {
        return Err(Error::ShapeMismatch(format!(
            "expected layer {}x{} vs reconstruction {}x{}",
            exp.width, exp.height, dims[0], dims[1]
        )));
    }
    let slice = evaluate_layer(field, phi, z_index, dims, bounds)?;
    let iso = field.default_iso();
    let inside = |v: f64| match field.kind() {
        GridKind::Occupancy => v >= iso,
        GridKind::Sdf => v <= iso,
    };
    let diff: f64 = slice
        .data
        .iter()
        .zip(&exp.data)
        .map(|(&v, &e)| ((inside(v) as u8 as f64) - e).abs())
        .sum();
    Ok(diff / exp.data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessGrid {
    pub layers: Vec<usize>,
    pub candidates: Vec<f64>,
    /// `values[row][col]`, one row per entry of `layers`.
    pub values: Vec<Vec<f64>>,
}

impl FitnessGrid {
    /// Matrix CSV: a `layer` column followed by one column per candidate.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["layer".to_string()];
        header.extend(self.candidates.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (layer, row) in self.layers.iter().zip(&self.values) {
            let mut rec = vec![layer.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub layer: usize,
    pub z_mm: f64,
    pub phi_percent: f64,
    pub fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub candidate_range: [f64; 2],
}

/// Orders `(phi, fitness)` pairs: lower fitness, then closer to 100, then smaller φ.
fn prefer(a: (f64, f64), b: (f64, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then(
            (a.0 - BASELINE_PHI)
                .abs()
                .total_cmp(&(b.0 - BASELINE_PHI).abs()),
        )
        .then(a.0.total_cmp(&b.0))
}

/// Exhaustive search over `expected.len() × candidates.len()`.
pub fn optimize_schedule(
    field: &dyn ScalarField,
    expected: &[ExpectedLayerImage],
    candidates: &[f64],
    bounds: &DomainBounds,
    dims: [usize; 3],
) -> Result<(FlowSchedule, FitnessGrid)> {
    if expected.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one layer and one candidate".into(),
        ));
    }
    if let Some(c) = candidates.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite candidate flow rate {c}"
        )));
    }
    bounds.validate()?;
    let rows = expected
        .par_iter()
        .map(|e| {
            if e.image.is_blank() {
                return Ok(vec![0.0; candidates.len()]);
            }
            candidates
                .iter()
                .map(|&phi| fitness(field, e.z_index, phi, e, bounds, dims))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let [z0, z1] = bounds.spatial[2];
    let step = (z1 - z0) / (dims[2] - 1) as f64;
    let entries = expected
        .iter()
        .zip(&rows)
        .map(|(e, row)| {
            let (phi, fit) = if e.image.is_blank() {
                (BASELINE_PHI, 0.0)
            } else {
                candidates
                    .iter()
                    .copied()
                    .zip(row.iter().copied())
                    .min_by(|&a, &b| prefer(a, b))
                    .expect("candidates are non-empty")
            };
            ScheduleEntry {
                layer: e.z_index,
                z_mm: z0 + e.z_index as f64 * step,
                phi_percent: phi,
                fitness: fit,
            }
        })
        .collect();
    let lo = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = FitnessGrid {
        layers: expected.iter().map(|e| e.z_index).collect(),
        candidates: candidates.to_vec(),
        values: rows,
    };
    Ok((
        FlowSchedule {
            entries,
            candidate_range: [lo, hi],
        },
        grid,
    ))
}

/// Writes the schedule CSV and a command file with one `M221 S<phi>` line per layer.
pub fn export_schedule(
    schedule: &FlowSchedule,
    csv_path: impl AsRef<Path>,
    commands_path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["layer", "z_mm", "phi_percent", "fitness"])?;
    for e in &schedule.entries {
        w.write_record([
            e.layer.to_string(),
            e.z_mm.to_string(),
            e.phi_percent.to_string(),
            e.fitness.to_string(),
        ])?;
    }
    w.flush()?;
    let commands: String = schedule
        .entries
        .iter()
        .map(|e| format!("M221 S{}\n", e.phi_percent))
        .collect();
    fs::write(commands_path, commands)?;
    Ok(())
}

pub fn read_schedule_csv(path: impl AsRef<Path>) -> Result<Vec<ScheduleEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<ScheduleEntry>, _>>()?)
}
