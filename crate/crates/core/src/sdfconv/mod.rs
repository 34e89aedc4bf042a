//! Occupancy → signed distance conversion.
//!
//! The surface of an occupancy volume is taken to be its marching-cubes
//! iso-surface at 0.5; each voxel's SDF value is the Euclidean distance from its
//! center to that surface, in voxel units, negated inside the material.

mod distance;
mod marching_cubes;
mod tables;

pub use distance::{DistanceMode, EXACT_MODE_MAX_VOXELS};
pub use marching_cubes::{marching_cubes, TriangleSoup};

use crate::error::{Error, Result};
use crate::voxvol::{GridKind, VoxelGrid};

/// Signed distance grid (voxel units) of a binary occupancy grid.
pub fn occupancy_to_sdf(grid: &VoxelGrid, mode: DistanceMode) -> Result<VoxelGrid> {
    let occ = match (grid.kind(), grid.as_u8()) {
        (GridKind::Occupancy, Some(v)) => v,
        _ => {
            return Err(Error::InvalidInput(
                "occupancy_to_sdf needs a binary occupancy grid".into(),
            ))
        }
    };
    let ones = occ.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == occ.len() {
        return Err(Error::Degenerate(
            "grid must contain both occupied and empty voxels".into(),
        ));
    }
    if grid.dims().iter().any(|&d| d < 2) {
        return Err(Error::Degenerate(
            "every axis needs at least 2 voxels".into(),
        ));
    }
    let soup = marching_cubes::extract_index_space(grid, 0.5);
    let unsigned = distance::unsigned_distances(grid.dims(), &soup, mode);
    let data: Vec<f32> = unsigned
        .iter()
        .zip(occ)
        .map(|(&d, &o)| if o == 1 { -(d as f32) } else { d as f32 })
        .collect();
    VoxelGrid::sdf(grid.meta().clone(), data)
}

/// Rescales negative values by `|min|` and positive values by `max`, mapping the
/// grid onto [-1, 1] per sign. Single-signed grids are rejected unless
/// `allow_single_sign` is set, in which case the present sign is scaled alone.
pub fn normalize_sdf(grid: &VoxelGrid, allow_single_sign: bool) -> Result<VoxelGrid> {
    let values = match (grid.kind(), grid.as_f32()) {
        (GridKind::Sdf, Some(v)) => v,
        _ => {
            return Err(Error::InvalidInput(
                "normalize_sdf needs an sdf grid".into(),
            ))
        }
    };
    let min = values.iter().copied().fold(0.0f32, f32::min);
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if (min >= 0.0 || max <= 0.0) && !allow_single_sign {
        return Err(Error::Degenerate(
            "sdf grid is single-signed; pass the override flag to normalize anyway".into(),
        ));
    }
    let data = values
        .iter()
        .map(|&v| {
            if v < 0.0 {
                v / -min
            } else if v > 0.0 {
                v / max
            } else {
                v
            }
        })
        .collect();
    VoxelGrid::sdf(grid.meta().clone(), data)
}
