//! Flattening of volume sets into normalized `(x, y, z, φ, S)` tuples,
//! mini-batching, and Latin hypercube proxy points.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralfield::{Real, IN_DIM};
use crate::voxvol::{GridKind, GridMeta, VoxelGrid};

/// Flow-rate range covered by the default training set.
pub const DEFAULT_PHI_RANGE: [f64; 2] = [45.0, 280.0];

/// Physical box and flow-rate range mapped onto `[-1, 1]⁴`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBounds {
    /// `[min, max]` per spatial axis, millimeters.
    pub spatial: [[f64; 2]; 3],
    pub phi_range: [f64; 2],
}

impl DomainBounds {
    pub fn new(spatial: [[f64; 2]; 3], phi_range: [f64; 2]) -> Result<Self> {
        let b = Self { spatial, phi_range };
        b.validate()?;
        Ok(b)
    }

    /// Bounds spanning the voxel centers of `meta`, so the outermost centers map
    /// to exactly ±1.
    pub fn from_meta(meta: &GridMeta, phi_range: [f64; 2]) -> Result<Self> {
        let lo = meta.voxel_center(0, 0, 0);
        let [nx, ny, nz] = meta.dims;
        let hi = meta.voxel_center(nx - 1, ny - 1, nz - 1);
        Self::new([[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]], phi_range)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if !self.spatial.iter().all(ok) || !ok(&self.phi_range) {
            return Err(Error::InvalidInput(format!(
                "domain bounds need max > min on every axis: {self:?}"
            )));
        }
        Ok(())
    }

    fn range(&self, axis: usize) -> [f64; 2] {
        if axis < 3 {
            self.spatial[axis]
        } else {
            self.phi_range
        }
    }

    /// Min-max maps `(x, y, z, φ)` onto `[-1, 1]`.
    pub fn normalize(&self, p: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|a| {
            let [lo, hi] = self.range(a);
            2.0 * (p[a] - lo) / (hi - lo) - 1.0
        })
    }

    pub fn denormalize(&self, q: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|a| {
            let [lo, hi] = self.range(a);
            lo + (q[a] + 1.0) * 0.5 * (hi - lo)
        })
    }

    pub fn normalize_phi(&self, phi: f64) -> f64 {
        self.normalize([
            self.spatial[0][0],
            self.spatial[1][0],
            self.spatial[2][0],
            phi,
        ])[3]
    }
}

/// Flattened training tuples. Coordinates are normalized; targets are the raw
/// voxel values (occupancy 0/1 or SDF).
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet5D {
    pub coords: Array2<f32>,
    pub targets: Array1<f32>,
    pub bounds: DomainBounds,
    pub kind: GridKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointBatch {
    pub coords: Array2<f32>,
    pub targets: Array1<f32>,
}

impl PointSet5D {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> PointBatch {
        let mut coords = Array2::zeros((indices.len(), IN_DIM));
        let mut targets = Array1::zeros(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            coords.row_mut(r).assign(&self.coords.row(i));
            targets[r] = self.targets[i];
        }
        PointBatch { coords, targets }
    }

    /// Seeded random subset holding `fraction` of the points (at least one).
    pub fn subsample(&self, fraction: f64, seed: u64) -> PointSet5D {
        let keep = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len().max(1));
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(keep);
        order.sort_unstable();
        let b = self.gather(&order);
        PointSet5D {
            coords: b.coords,
            targets: b.targets,
            bounds: self.bounds,
            kind: self.kind,
        }
    }
}

/// Stacks every voxel center of every volume, with its flow rate, into
/// normalized coordinates.
pub fn flatten(volumes: &[VoxelGrid], bounds: &DomainBounds) -> Result<PointSet5D> {
    bounds.validate()?;
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidInput("flatten needs at least one volume".into()))?;
    let dims = first.dims();
    let kind = first.kind();
    let total: usize = volumes.iter().map(|v| v.len()).sum();
    let mut coords = Array2::zeros((total, IN_DIM));
    let mut targets = Array1::zeros(total);
    let mut row = 0;
    for (vi, v) in volumes.iter().enumerate() {
        if v.dims() != dims
            || v.meta().voxel_size != first.meta().voxel_size
            || v.meta().origin != first.meta().origin
        {
            return Err(Error::ShapeMismatch(format!(
                "volume {vi} has a different grid than volume 0"
            )));
        }
        if v.kind() != kind {
            return Err(Error::InvalidInput(format!(
                "volume {vi} mixes occupancy and sdf kinds"
            )));
        }
        let phi = v
            .meta()
            .flow_rate_percent
            .ok_or_else(|| Error::InvalidInput(format!("volume {vi} has no flow-rate tag")))?;
        let meta = v.meta();
        for idx in 0..v.len() {
            let [i, j, k] = meta.coords(idx);
            let c = meta.voxel_center(i, j, k);
            let q = bounds.normalize([c[0], c[1], c[2], phi]);
            for a in 0..IN_DIM {
                coords[[row, a]] = q[a] as f32;
            }
            targets[row] = v.value(idx) as f32;
            row += 1;
        }
    }
    Ok(PointSet5D {
        coords,
        targets,
        bounds: *bounds,
        kind,
    })
}

/// Seeded permutation of `0..n` cut into consecutive chunks of `batch_size`;
/// the last chunk may be shorter.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of shuffled mini-batches.
pub fn batches(
    ps: &PointSet5D,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = PointBatch> + '_> {
    let idx = batch_indices(ps.len(), batch_size, seed)?;
    Ok(idx.into_iter().map(move |b| ps.gather(&b)))
}

/// Latin hypercube sample of `m` points in `[-1, 1]⁴`: every axis is cut into
/// `m` equal strata and each stratum holds exactly one point.
pub fn lhs_proxies<T: Real>(m: usize, seed: u64) -> Result<Array2<T>> {
    if m == 0 {
        return Err(Error::InvalidInput("lhs needs at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((m, IN_DIM));
    let mut perm: Vec<usize> = (0..m).collect();
    for a in 0..IN_DIM {
        perm.shuffle(&mut rng);
        for (r, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            let v = -1.0 + 2.0 * (stratum as f64 + u) / m as f64;
            // keep the value inside its stratum after rounding to T
            let lo = -1.0 + 2.0 * stratum as f64 / m as f64;
            let hi = -1.0 + 2.0 * (stratum + 1) as f64 / m as f64;
            let mut t = T::from_f64(v).unwrap();
            let tf = t.to_f64().unwrap();
            if tf < lo || tf >= hi {
                t = T::from_f64((lo + hi) / 2.0).unwrap();
            }
            out[[r, a]] = t;
        }
    }
    Ok(out)
}

/// Stratum index of `v ∈ [-1, 1]` among `m` equal strata.
pub fn stratum(v: f64, m: usize) -> usize {
    (((v + 1.0) / 2.0 * m as f64).floor() as usize).min(m - 1)
}

/// SplitMix64 mix of a root seed and a stream id.
pub fn mix_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for a named consumer of randomness (FNV-1a of the name, then mixed).
pub fn named_seed(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix_seed(root, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxvol::GridKind;

    fn meta(n: usize) -> GridMeta {
        GridMeta::new([n; 3], [1.0; 3], GridKind::Occupancy).unwrap()
    }

    fn vol(n: usize, phi: f64) -> VoxelGrid {
        let m = meta(n).with_flow_rate(Some(phi));
        let data = (0..m.len()).map(|i| (i % 3 == 0) as u8).collect();
        VoxelGrid::occupancy(m, data).unwrap()
    }

    #[test]
    fn corners_and_midpoint_normalize_exactly() {
        let b = DomainBounds::from_meta(&meta(8), [45.0, 280.0]).unwrap();
        assert_eq!(b.normalize([0.5, 0.5, 0.5, 45.0]), [-1.0; 4]);
        assert_eq!(b.normalize([7.5, 7.5, 7.5, 280.0]), [1.0; 4]);
        assert_eq!(b.normalize([4.0, 4.0, 4.0, 162.5]), [0.0; 4]);
    }

    #[test]
    fn flatten_counts_and_tags() {
        let vols: Vec<_> = [45.0, 100.0, 280.0].iter().map(|&p| vol(4, p)).collect();
        let b = DomainBounds::from_meta(vols[0].meta(), [45.0, 280.0]).unwrap();
        let ps = flatten(&vols, &b).unwrap();
        assert_eq!(ps.len(), 3 * 64);
        assert_eq!(ps.coords.row(0).to_vec(), vec![-1.0, -1.0, -1.0, -1.0]);
        assert_eq!(ps.coords[[3 * 64 - 1, 3]], 1.0);
        assert!(ps.coords.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(ps.targets[0], 1.0);
        assert_eq!(ps.targets[1], 0.0);

        let untagged = VoxelGrid::occupancy(meta(4), vec![0; 64]).unwrap();
        assert!(flatten(&[untagged], &b).is_err());
        assert!(matches!(
            flatten(&[vol(4, 50.0), vol(5, 60.0)], &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn nine_volumes_of_32_cubed() {
        let vols: Vec<_> = crate::synthgen::DEFAULT_FLOW_RATES
            .iter()
            .map(|&p| vol(32, p))
            .collect();
        let b = DomainBounds::from_meta(vols[0].meta(), DEFAULT_PHI_RANGE).unwrap();
        assert_eq!(flatten(&vols, &b).unwrap().len(), 294_912);
    }

    #[test]
    fn batches_partition_the_epoch() {
        let idx = batch_indices(10, 4, 3).unwrap();
        assert_eq!(idx.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = idx.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(idx, batch_indices(10, 4, 3).unwrap());
        assert!(batch_indices(10, 0, 3).is_err());
    }

    #[test]
    fn lhs_two_points_split_the_axis() {
        let p = lhs_proxies::<f64>(2, 1).unwrap();
        for a in 0..4 {
            let mut col: Vec<f64> = p.column(a).to_vec();
            col.sort_by(f64::total_cmp);
            assert!((-1.0..0.0).contains(&col[0]));
            assert!((0.0..=1.0).contains(&col[1]));
        }
        assert!(lhs_proxies::<f64>(0, 1).is_err());
        assert_eq!(
            lhs_proxies::<f32>(50, 9).unwrap(),
            lhs_proxies::<f32>(50, 9).unwrap()
        );
    }

    #[test]
    fn seeds_are_distinct() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(named_seed(7, "train"), named_seed(7, "proxies"));
        assert_eq!(named_seed(7, "train"), named_seed(7, "train"));
    }
}
