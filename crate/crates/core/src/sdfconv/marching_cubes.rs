use std::collections::HashMap;

use super::tables::TRI_TABLE;
use crate::voxvol::{GridKind, VoxelGrid};

/// Cube corner offsets in the standard corner numbering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each of the 12 cube edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleSoup {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleSoup {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// V − E + F over the shared-vertex mesh.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }
}

/// Extracts the iso-surface of `grid` with vertices in physical millimeters
/// (voxel centers are the lattice points). An empty soup means the grid never
/// crosses `iso`.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriangleSoup {
    let mut soup = extract_index_space(grid, iso);
    let m = grid.meta();
    for v in &mut soup.vertices {
        for a in 0..3 {
            v[a] = m.origin[a] + (v[a] + 0.5) * m.voxel_size[a];
        }
    }
    soup
}

/// Same as [`marching_cubes`] but with vertices in voxel index coordinates.
pub(crate) fn extract_index_space(grid: &VoxelGrid, iso: f64) -> TriangleSoup {
    let [nx, ny, nz] = grid.dims();
    let mut soup = TriangleSoup::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return soup;
    }
    let sdf = grid.kind() == GridKind::Sdf;
    let inside = |v: f64| if sdf { v <= iso } else { v >= iso };
    let meta = grid.meta();
    let mut vertex_ids: HashMap<(usize, usize), u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut values = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = grid.get(i + off[0], j + off[1], k + off[2]);
                    if inside(values[c]) {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut e = 0;
                while e < 16 && row[e] >= 0 {
                    let mut ids = [0u32; 3];
                    for (slot, &edge) in row[e..e + 3].iter().enumerate() {
                        let [c0, c1] = EDGES[edge as usize];
                        let (o0, o1) = (CORNERS[c0], CORNERS[c1]);
                        let axis = (0..3).find(|&a| o0[a] != o1[a]).unwrap();
                        let lower = meta.index(i + o0[0], j + o0[1], k + o0[2]);
                        let key = (lower, axis);
                        let id = *vertex_ids.entry(key).or_insert_with(|| {
                            let t = (iso - values[c0]) / (values[c1] - values[c0]);
                            let p0 = [(i + o0[0]) as f64, (j + o0[1]) as f64, (k + o0[2]) as f64];
                            let mut p = p0;
                            p[axis] += t;
                            soup.vertices.push(p);
                            (soup.vertices.len() - 1) as u32
                        });
                        ids[slot] = id;
                    }
                    e += 3;
                    if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                        continue;
                    }
                    let tri = [
                        soup.vertices[ids[0] as usize],
                        soup.vertices[ids[1] as usize],
                        soup.vertices[ids[2] as usize],
                    ];
                    if area(tri) > 1e-12 {
                        soup.triangles.push(ids);
                    }
                }
            }
        }
    }
    soup
}

fn area(t: [[f64; 3]; 3]) -> f64 {
    let u = sub(t[1], t[0]);
    let v = sub(t[2], t[0]);
    let c = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
