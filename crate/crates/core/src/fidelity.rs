//! Per-slice SSIM and volumetric L1 comparison metrics.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::slice_z;
use crate::voxvol::{Image, VoxelGrid};

/// Scale of the display column next to the literal L1 value.
pub const L1_DISPLAY_SCALE: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub data_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            data_range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Normalized 1D Gaussian; the 2D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0
            || !(self.sigma > 0.0)
            || !(self.data_range > 0.0)
            || !(self.k1 > 0.0)
            || !(self.k2 > 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "invalid SSIM parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Separable "valid" filtering of a `w × h` image.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                s += kv * data[x + t + w * y];
            }
            rows[x + ow * y] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                s += kv * rows[x + ow * (y + t)];
            }
            out[x + ow * y] = s;
        }
    }
    out
}

/// Mean SSIM over every fully contained Gaussian window.
pub fn ssim_2d(x: &Image, y: &Image, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if x.width != y.width || x.height != y.height {
        return Err(Error::ShapeMismatch(format!(
            "images {}x{} and {}x{}",
            x.width, x.height, y.width, y.height
        )));
    }
    let (w, h) = (x.width, x.height);
    if w < params.window || h < params.window {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} smaller than the {} pixel window",
            params.window
        )));
    }
    let k = params.kernel();
    let xx: Vec<f64> = x.data.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a * b).collect();
    let mx = filter_valid(&x.data, w, h, &k);
    let my = filter_valid(&y.data, w, h, &k);
    let exx = filter_valid(&xx, w, h, &k);
    let eyy = filter_valid(&yy, w, h, &k);
    let exy = filter_valid(&xy, w, h, &k);
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let vx = exx[i] - a * a;
        let vy = eyy[i] - b * b;
        let cov = exy[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimVolume {
    pub mean: f64,
    /// Population standard deviation across slices.
    pub std: f64,
    pub per_slice: Vec<f64>,
}

fn check_same_dims(a: &VoxelGrid, b: &VoxelGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "volumes {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn clipped(img: Image) -> Image {
    Image {
        data: img.data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        ..img
    }
}

/// SSIM of every z slice, with values clipped to [0, 1].
pub fn ssim_volume(a: &VoxelGrid, b: &VoxelGrid, params: &SsimParams) -> Result<SsimVolume> {
    check_same_dims(a, b)?;
    let nz = a.dims()[2];
    let per_slice = (0..nz)
        .into_par_iter()
        .map(|k| ssim_2d(&clipped(slice_z(a, k)?), &clipped(slice_z(b, k)?), params))
        .collect::<Result<Vec<f64>>>()?;
    let n = per_slice.len() as f64;
    let mean = per_slice.iter().sum::<f64>() / n;
    let std = (per_slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SsimVolume {
        mean,
        std,
        per_slice,
    })
}

/// Mean absolute voxel difference.
pub fn l1_norm(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    check_same_dims(a, b)?;
    let s: f64 = (0..a.len()).map(|i| (a.value(i) - b.value(i)).abs()).sum();
    Ok(s / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub volume_a: String,
    pub volume_b: String,
    pub l1: f64,
    /// `l1 × 1000`, for side-by-side reading with published tables.
    pub l1_display: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub per_slice_ssim: Vec<f64>,
}

pub fn compare(
    a: &VoxelGrid,
    b: &VoxelGrid,
    names: (&str, &str),
    params: &SsimParams,
) -> Result<MetricReport> {
    let l1 = l1_norm(a, b)?;
    let s = ssim_volume(a, b, params)?;
    Ok(MetricReport {
        volume_a: names.0.to_string(),
        volume_b: names.1.to_string(),
        l1,
        l1_display: l1 * L1_DISPLAY_SCALE,
        ssim_mean: s.mean,
        ssim_std: s.std,
        per_slice_ssim: s.per_slice,
    })
}

impl MetricReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }
}

/// One row per report: `volume_a,volume_b,l1,ssim_mean,ssim_std,l1_x1000`.
pub fn write_reports_csv(reports: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "volume_a",
        "volume_b",
        "l1",
        "ssim_mean",
        "ssim_std",
        "l1_x1000",
    ])?;
    for r in reports {
        w.write_record([
            r.volume_a.clone(),
            r.volume_b.clone(),
            r.l1.to_string(),
            r.ssim_mean.to_string(),
            r.ssim_std.to_string(),
            r.l1_display.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
