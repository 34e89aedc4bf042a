use rayon::prelude::*;

use super::marching_cubes::TriangleSoup;

/// Largest grid (in voxels) that `Auto` resolves to exact distances.
pub const EXACT_MODE_MAX_VOXELS: usize = 64 * 64 * 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// Exact for grids up to 64³, approximate above.
    #[default]
    Auto,
    /// Exact point-to-triangle distance for every voxel.
    Exact,
    /// Exact in a one-voxel band around the surface, then two raster passes of
    /// nearest-point propagation.
    Approximate,
}

pub(crate) fn unsigned_distances(
    dims: [usize; 3],
    soup: &TriangleSoup,
    mode: DistanceMode,
) -> Vec<f64> {
    let n = dims[0] * dims[1] * dims[2];
    let exact = match mode {
        DistanceMode::Exact => true,
        DistanceMode::Approximate => false,
        DistanceMode::Auto => n <= EXACT_MODE_MAX_VOXELS,
    };
    if exact {
        exact_distances(dims, soup)
    } else {
        propagated_distances(dims, soup)
    }
}

/// Closest point on triangle `t` to `p` (Ericson, Real-Time Collision Detection §5.1.5).
pub(crate) fn closest_point_on_triangle(p: [f64; 3], t: [[f64; 3]; 3]) -> [f64; 3] {
    let [a, b, c] = t;
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

/// Uniform bucket grid over triangle bounding boxes.
struct Buckets {
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(grid_dims: [usize; 3], soup: &TriangleSoup, cell: f64) -> Self {
        let dims = grid_dims.map(|d| ((d as f64) / cell).ceil().max(1.0) as usize);
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for t in 0..soup.triangles.len() {
            let tri = soup.triangle(t);
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..3 {
                let mn = tri.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min);
                let mx = tri.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max);
                lo[a] = Self::clamp_cell(mn / cell, dims[a]);
                hi[a] = Self::clamp_cell(mx / cell, dims[a]);
            }
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells[x + dims[0] * (y + dims[1] * z)].push(t as u32);
                    }
                }
            }
        }
        Self { cell, dims, cells }
    }

    fn clamp_cell(v: f64, n: usize) -> usize {
        (v.floor().max(0.0) as usize).min(n - 1)
    }

    fn nearest(&self, p: [f64; 3], soup: &TriangleSoup) -> (f64, [f64; 3]) {
        let home = [0, 1, 2].map(|a| Self::clamp_cell(p[a] / self.cell, self.dims[a]));
        let max_ring = *self.dims.iter().max().unwrap();
        let mut best = f64::INFINITY;
        let mut best_point = p;
        for ring in 0..=max_ring {
            let lo = home.map(|h| h as isize - ring as isize);
            let hi = home.map(|h| h as isize + ring as isize);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let on_shell = x == lo[0]
                            || x == hi[0]
                            || y == lo[1]
                            || y == hi[1]
                            || z == lo[2]
                            || z == hi[2];
                        if !on_shell
                            || x < 0
                            || y < 0
                            || z < 0
                            || x >= self.dims[0] as isize
                            || y >= self.dims[1] as isize
                            || z >= self.dims[2] as isize
                        {
                            continue;
                        }
                        let c =
                            x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize);
                        for &t in &self.cells[c] {
                            let q = closest_point_on_triangle(p, soup.triangle(t as usize));
                            let d = norm(sub(p, q));
                            if d < best {
                                best = d;
                                best_point = q;
                            }
                        }
                    }
                }
            }
            // Every unvisited cell lies at least `ring * cell` away.
            if best <= ring as f64 * self.cell {
                break;
            }
        }
        (best, best_point)
    }
}

fn exact_distances(dims: [usize; 3], soup: &TriangleSoup) -> Vec<f64> {
    let buckets = Buckets::new(dims, soup, 4.0);
    let n = dims[0] * dims[1] * dims[2];
    (0..n)
        .into_par_iter()
        .map(|idx| {
            let p = index_point(dims, idx);
            buckets.nearest(p, soup).0
        })
        .collect()
}

fn propagated_distances(dims: [usize; 3], soup: &TriangleSoup) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let n = nx * ny * nz;
    let mut nearest: Vec<Option<[f64; 3]>> = vec![None; n];
    let mut dist = vec![f64::INFINITY; n];

    // seed: exact distances for lattice points around each triangle
    for t in 0..soup.triangles.len() {
        let tri = soup.triangle(t);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let mn = tri.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min);
            let mx = tri.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max);
            lo[a] = (mn.floor() - 1.0).max(0.0) as usize;
            hi[a] = ((mx.ceil() + 1.0) as usize).min(dims[a] - 1);
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let idx = x + nx * (y + ny * z);
                    let p = [x as f64, y as f64, z as f64];
                    let q = closest_point_on_triangle(p, tri);
                    let d = norm(sub(p, q));
                    if d < dist[idx] {
                        dist[idx] = d;
                        nearest[idx] = Some(q);
                    }
                }
            }
        }
    }

    let mut offsets = Vec::with_capacity(13);
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let lin = dx + 3 * (dy + 3 * dz);
                if lin < 0 {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }

    let mut relax = |x: usize, y: usize, z: usize, sign: isize| {
        let idx = x + nx * (y + ny * z);
        let p = [x as f64, y as f64, z as f64];
        for off in &offsets {
            let (qx, qy, qz) = (
                x as isize + sign * off[0],
                y as isize + sign * off[1],
                z as isize + sign * off[2],
            );
            if qx < 0
                || qy < 0
                || qz < 0
                || qx >= nx as isize
                || qy >= ny as isize
                || qz >= nz as isize
            {
                continue;
            }
            let q = qx as usize + nx * (qy as usize + ny * qz as usize);
            if let Some(s) = nearest[q] {
                let d = norm(sub(p, s));
                if d < dist[idx] {
                    dist[idx] = d;
                    nearest[idx] = Some(s);
                }
            }
        }
    };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                relax(x, y, z, 1);
            }
        }
    }
    for z in (0..nz).rev() {
        for y in (0..ny).rev() {
            for x in (0..nx).rev() {
                relax(x, y, z, -1);
            }
        }
    }
    dist
}

#[inline]
fn index_point(dims: [usize; 3], idx: usize) -> [f64; 3] {
    [
        (idx % dims[0]) as f64,
        ((idx / dims[0]) % dims[1]) as f64,
        (idx / (dims[0] * dims[1])) as f64,
    ]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closest_point_regions() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let q = closest_point_on_triangle([0.2, 0.2, 3.0], t);
        assert!((q[0] - 0.2).abs() < 1e-12 && (q[1] - 0.2).abs() < 1e-12 && q[2] == 0.0);
        assert_eq!(
            closest_point_on_triangle([-1.0, -1.0, 0.0], t),
            [0.0, 0.0, 0.0]
        );
        assert_eq!(
            closest_point_on_triangle([2.0, -0.5, 0.0], t),
            [1.0, 0.0, 0.0]
        );
        let q = closest_point_on_triangle([1.0, 1.0, 0.0], t);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bucket_search_matches_brute_force() {
        let soup = TriangleSoup {
            vertices: vec![
                [1.0, 1.0, 1.0],
                [9.0, 2.0, 1.5],
                [3.0, 8.5, 2.0],
                [6.0, 6.0, 9.0],
            ],
            triangles: vec![[0, 1, 2], [1, 2, 3], [0, 2, 3]],
        };
        let dims = [11, 11, 11];
        let fast = exact_distances(dims, &soup);
        for (idx, &d) in fast.iter().enumerate() {
            let p = index_point(dims, idx);
            let brute = (0..soup.triangles.len())
                .map(|t| norm(sub(p, closest_point_on_triangle(p, soup.triangle(t)))))
                .fold(f64::INFINITY, f64::min);
            assert!((d - brute).abs() < 1e-12);
        }
    }
}
