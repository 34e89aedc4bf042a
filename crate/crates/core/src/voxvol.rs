//! Volumetric data model, the VGRID binary format and elementary volume math.
//!
//! Samples are stored densely in x-fastest, then y, then z order. A grid's
//! [`GridKind`] describes what the samples mean and its storage describes how
//! they are encoded:
//!
//! | kind        | storage | contents                                   |
//! |-------------|---------|--------------------------------------------|
//! | `Occupancy` | `u8`    | binary material state, only 0 or 1         |
//! | `Occupancy` | `f32`   | raw field samples (e.g. network output)    |
//! | `Sdf`       | `f32`   | signed distance, negative inside           |

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VGRID_MAGIC: &[u8; 4] = b"VGRD";
pub const VGRID_VERSION: u32 = 1;

/// Density of PLA in g/cm³.
pub const PLA_DENSITY_G_PER_CM3: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Occupancy,
    Sdf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub kind: GridKind,
    pub flow_rate_percent: Option<f64>,
    /// Minimum corner of the grid box in millimeters.
    pub origin: [f64; 3],
}

impl GridMeta {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], kind: GridKind) -> Result<Self> {
        let meta = Self {
            dims,
            voxel_size,
            kind,
            flow_rate_percent: None,
            origin: [0.0; 3],
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_flow_rate(mut self, phi: Option<f64>) -> Self {
        self.flow_rate_percent = phi;
        self
    }

    pub fn with_kind(mut self, kind: GridKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Invariant(format!(
                "grid dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.voxel_size.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant(format!(
                "voxel size must be strictly positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("origin must be finite".into()));
        }
        if let Some(phi) = self.flow_rate_percent {
            if !(phi >= 0.0 && phi.is_finite()) {
                return Err(Error::Invariant(format!(
                    "flow rate must be a finite percentage >= 0, got {phi}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Physical position (mm) of the center of voxel `(i, j, k)`.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.voxel_size[0],
            self.origin[1] + (j as f64 + 0.5) * self.voxel_size[1],
            self.origin[2] + (k as f64 + 0.5) * self.voxel_size[2],
        ]
    }

    /// Physical center of the whole grid box.
    pub fn box_center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.origin[a] + 0.5 * self.dims[a] as f64 * self.voxel_size[a];
        }
        c
    }

    /// Voxel volume in cm³.
    pub fn voxel_volume_cm3(&self) -> f64 {
        self.voxel_size.iter().product::<f64>() / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl GridData {
    pub fn len(&self) -> usize {
        match self {
            GridData::U8(v) => v.len(),
            GridData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            GridData::U8(_) => "u8",
            GridData::F32(_) => "f32",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    meta: GridMeta,
    data: GridData,
}

impl VoxelGrid {
    /// Builds a grid, checking every invariant of the meta/data combination.
    pub fn new(meta: GridMeta, data: GridData) -> Result<Self> {
        meta.validate()?;
        if meta.len() != data.len() {
            return Err(Error::PayloadMismatch {
                expected: meta.len(),
                actual: data.len(),
            });
        }
        match (&meta.kind, &data) {
            (GridKind::Occupancy, GridData::U8(v)) => {
                if let Some(pos) = v.iter().position(|&x| x > 1) {
                    return Err(Error::Invariant(format!(
                        "occupancy grid holds value {} at sample {pos}; only 0 or 1 allowed",
                        v[pos]
                    )));
                }
            }
            (GridKind::Sdf, GridData::U8(_)) => {
                return Err(Error::Invariant("sdf grids must be stored as f32".into()));
            }
            (_, GridData::F32(v)) => {
                if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Invariant(format!(
                        "non-finite sample at index {pos}"
                    )));
                }
            }
        }
        Ok(Self { meta, data })
    }

    pub fn occupancy(meta: GridMeta, data: Vec<u8>) -> Result<Self> {
        Self::new(meta.with_kind(GridKind::Occupancy), GridData::U8(data))
    }

    pub fn sdf(meta: GridMeta, data: Vec<f32>) -> Result<Self> {
        Self::new(meta.with_kind(GridKind::Sdf), GridData::F32(data))
    }

    /// Raw real-valued field samples with occupancy semantics (inside where value ≥ iso).
    pub fn field(meta: GridMeta, data: Vec<f32>) -> Result<Self> {
        Self::new(meta.with_kind(GridKind::Occupancy), GridData::F32(data))
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &GridData {
        &self.data
    }

    pub fn kind(&self) -> GridKind {
        self.meta.kind
    }

    pub fn dims(&self) -> [usize; 3] {
        self.meta.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for binary (u8) occupancy grids.
    pub fn is_binary(&self) -> bool {
        matches!(self.data, GridData::U8(_))
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            GridData::U8(v) => Some(v),
            GridData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            GridData::F32(v) => Some(v),
            GridData::U8(_) => None,
        }
    }

    #[inline]
    pub fn value(&self, index: usize) -> f64 {
        match &self.data {
            GridData::U8(v) => v[index] as f64,
            GridData::F32(v) => v[index] as f64,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.value(self.meta.index(i, j, k))
    }

    pub fn values_f64(&self) -> Vec<f64> {
        match &self.data {
            GridData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            GridData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn occupied_count(&self) -> usize {
        match &self.data {
            GridData::U8(v) => v.iter().filter(|&&x| x == 1).count(),
            GridData::F32(_) => 0,
        }
    }

    pub fn with_flow_rate(mut self, phi: Option<f64>) -> Self {
        self.meta.flow_rate_percent = phi;
        self
    }

    pub fn into_parts(self) -> (GridMeta, GridData) {
        (self.meta, self.data)
    }

    /// Serializes to the VGRID byte layout.
    pub fn to_vgrid_bytes(&self) -> Result<Vec<u8>> {
        let header = VgridHeader {
            dims: self.meta.dims,
            voxel_size_mm: self.meta.voxel_size,
            origin_mm: self.meta.origin,
            dtype: self.data.dtype().to_string(),
            kind: self.meta.kind,
            flow_rate_percent: self.meta.flow_rate_percent,
        };
        let json = serde_json::to_vec(&header)?;
        let sample_bytes = match &self.data {
            GridData::U8(v) => v.len(),
            GridData::F32(v) => 4 * v.len(),
        };
        let mut out = Vec::with_capacity(12 + json.len() + sample_bytes);
        out.extend_from_slice(VGRID_MAGIC);
        out.extend_from_slice(&VGRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        match &self.data {
            GridData::U8(v) => out.extend_from_slice(v),
            GridData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_vgrid_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::CorruptHeader(
                "file shorter than fixed header".into(),
            ));
        }
        if &bytes[0..4] != VGRID_MAGIC {
            return Err(Error::CorruptHeader("bad magic, expected VGRD".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VGRID_VERSION {
            return Err(Error::CorruptHeader(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload_start = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::CorruptHeader("header length exceeds file size".into()))?;
        let header: VgridHeader = serde_json::from_slice(&bytes[12..payload_start])
            .map_err(|e| Error::CorruptHeader(format!("invalid JSON header: {e}")))?;
        let meta = GridMeta {
            dims: header.dims,
            voxel_size: header.voxel_size_mm,
            kind: header.kind,
            flow_rate_percent: header.flow_rate_percent,
            origin: header.origin_mm,
        };
        meta.validate()
            .map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let payload = &bytes[payload_start..];
        let expected = meta.len();
        let data = match header.dtype.as_str() {
            "u8" => {
                if payload.len() != expected {
                    return Err(Error::PayloadMismatch {
                        expected,
                        actual: payload.len(),
                    });
                }
                GridData::U8(payload.to_vec())
            }
            "f32" => {
                if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
                    return Err(Error::PayloadMismatch {
                        expected,
                        actual: payload.len() / 4,
                    });
                }
                GridData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => return Err(Error::UnknownDtype(other.to_string())),
        };
        Self::new(meta, data)
    }
}

#[derive(Serialize, Deserialize)]
struct VgridHeader {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: String,
    kind: GridKind,
    flow_rate_percent: Option<f64>,
}

pub fn read_vgrid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let bytes = fs::read(path)?;
    VoxelGrid::from_vgrid_bytes(&bytes)
}

pub fn write_vgrid(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let bytes = grid.to_vgrid_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Binarizes a grid. Occupancy-kind samples are inside when `value >= iso`;
/// SDF samples are inside when `value <= iso`, so surface samples count as inside.
pub fn threshold(grid: &VoxelGrid, iso: f64) -> VoxelGrid {
    let sdf = grid.kind() == GridKind::Sdf;
    let data: Vec<u8> = (0..grid.len())
        .map(|i| {
            let v = grid.value(i);
            let inside = if sdf { v <= iso } else { v >= iso };
            inside as u8
        })
        .collect();
    let meta = grid.meta().clone().with_kind(GridKind::Occupancy);
    VoxelGrid {
        meta,
        data: GridData::U8(data),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub density_g_per_cm3: f64,
}

impl WeightParams {
    pub fn new(density_g_per_cm3: f64) -> Result<Self> {
        if !(density_g_per_cm3 > 0.0 && density_g_per_cm3.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "density must be positive, got {density_g_per_cm3}"
            )));
        }
        Ok(Self { density_g_per_cm3 })
    }
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            density_g_per_cm3: PLA_DENSITY_G_PER_CM3,
        }
    }
}

/// Digital weight in grams: occupied voxels × voxel volume × density.
pub fn digital_weight(grid: &VoxelGrid, params: WeightParams) -> Result<f64> {
    if grid.kind() != GridKind::Occupancy || !grid.is_binary() {
        return Err(Error::InvalidInput(
            "digital weight requires a binary occupancy grid".into(),
        ));
    }
    Ok(grid.occupied_count() as f64 * grid.meta().voxel_volume_cm3() * params.density_g_per_cm3)
}

/// A 2D single-channel image, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "image {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.width * y]
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Fraction of pixels that are non-zero.
    pub fn fill_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v != 0.0).count() as f64 / self.data.len() as f64
    }
}
