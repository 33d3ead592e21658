//! Iso-surface extraction from binary components and mesh utilities.

use std::collections::HashMap;
use std::io::Write;

use super::tables::{triangle_table, CORNERS, EDGES};
use crate::error::{Error, Result};

/// Iso-level used on binary masks.
pub const ISO_LEVEL: f64 = 0.5;

/// Triangle mesh with vertices in millimetres.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    /// Write the mesh in ASCII OFF format.
    pub fn write_off(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "OFF")?;
        writeln!(out, "{} {} 0", self.vertices.len(), self.triangles.len())?;
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v[0], v[1], v[2])?;
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn translate(&mut self, by: [f64; 3]) {
        for v in &mut self.vertices {
            for a in 0..3 {
                v[a] += by[a];
            }
        }
    }

    /// Every undirected edge is shared by exactly two triangles which use it
    /// in opposite directions (closed and consistently oriented).
    pub fn is_closed_and_oriented(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Smallest triangle area in the mesh.
    pub fn min_triangle_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| triangle_area(self, t))
            .fold(f64::INFINITY, f64::min)
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn triangle_area(mesh: &SurfaceMesh, t: &[u32; 3]) -> f64 {
    let [p, q, r] = t.map(|i| mesh.vertices[i as usize]);
    0.5 * norm(cross(sub(q, p), sub(r, p)))
}

/// Total area as the sum of `½‖(q−p)×(r−p)‖` over triangles.
pub fn mesh_area(mesh: &SurfaceMesh) -> f64 {
    mesh.triangles.iter().map(|t| triangle_area(mesh, t)).sum()
}

/// Marching cubes at iso-level 0.5 over a one-voxel zero-padded copy of the
/// voxels. Vertices are placed by linear interpolation (edge midpoints on
/// binary data) and scaled by `spacing`; voxel `(i, j, k)` has its centre at
/// `(i·sx, j·sy, k·sz)`.
pub fn marching_cubes(voxels: &[[usize; 3]], spacing: [f64; 3]) -> Result<SurfaceMesh> {
    if voxels.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for v in voxels {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    // Padded local grid: local index p corresponds to voxel lo + p - 1.
    let dims = [0, 1, 2].map(|a| hi[a] - lo[a] + 3);
    let at = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let mut grid = vec![0.0f64; dims.iter().product()];
    for v in voxels {
        grid[at(v[0] - lo[0] + 1, v[1] - lo[1] + 1, v[2] - lo[2] + 1)] = 1.0;
    }

    let table = triangle_table();
    let mut mesh = SurfaceMesh::default();
    let mut vertex_of_edge: HashMap<(usize, u8), u32> = HashMap::new();

    for z in 0..dims[2] - 1 {
        for y in 0..dims[1] - 1 {
            for x in 0..dims[0] - 1 {
                let mut values = [0.0f64; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    values[c] = grid[at(x + off[0], y + off[1], z + off[2])];
                    if values[c] > ISO_LEVEL {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let mut ids = [0u32; 3];
                    for (slot, &edge) in tri.iter().enumerate() {
                        let [ca, cb] = EDGES[edge as usize];
                        let (pa, pb) = (CORNERS[ca], CORNERS[cb]);
                        let axis = (0..3).find(|&a| pa[a] != pb[a]).unwrap() as u8;
                        let lower = if pa[axis as usize] < pb[axis as usize] { pa } else { pb };
                        let key = (at(x + lower[0], y + lower[1], z + lower[2]), axis);
                        ids[slot] = *vertex_of_edge.entry(key).or_insert_with(|| {
                            let (va, vb) = (values[ca], values[cb]);
                            let t = (ISO_LEVEL - va) / (vb - va);
                            let cell = [x, y, z];
                            let mut pos = [0.0; 3];
                            for a in 0..3 {
                                let local =
                                    (cell[a] + pa[a]) as f64 + t * (pb[a] as f64 - pa[a] as f64);
                                pos[a] = (local + lo[a] as f64 - 1.0) * spacing[a];
                            }
                            mesh.vertices.push(pos);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

/// The iso-surface of a lone voxel: an octahedron with vertices half a voxel
/// from the centre along each axis. Identical to what [`marching_cubes`]
/// produces for a single voxel, without the grid walk.
pub fn single_voxel_mesh(voxel: [usize; 3], spacing: [f64; 3]) -> SurfaceMesh {
    let c = [0, 1, 2].map(|a| voxel[a] as f64 * spacing[a]);
    let mut vertices = Vec::with_capacity(6);
    for a in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut v = c;
            v[a] += sign * 0.5 * spacing[a];
            vertices.push(v);
        }
    }
    // vertex 2a is -axis a, 2a+1 is +axis a
    let mut triangles = Vec::with_capacity(8);
    for sx in 0..2u32 {
        for sy in 0..2u32 {
            for sz in 0..2u32 {
                let (vx, vy, vz) = (sx, 2 + sy, 4 + sz);
                // Outward winding flips with each negative octant axis.
                if (sx + sy + sz) % 2 == 1 {
                    triangles.push([vx, vy, vz]);
                } else {
                    triangles.push([vx, vz, vy]);
                }
            }
        }
    }
    SurfaceMesh {
        vertices,
        triangles,
    }
}
