//! Quickhull in three dimensions, used only for its enclosed volume.

use std::collections::HashMap;

use super::mesh::cross;
use crate::error::{Error, Result};

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

struct Face {
    v: [usize; 3],
    normal: [f64; 3],
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

/// A convex polytope as outward-oriented triangles over the input points.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl ConvexHull {
    /// Volume by summing signed tetrahedra against an interior reference point.
    pub fn volume(&self) -> f64 {
        let n = self.triangles.len().max(1) as f64;
        let mut c = [0.0; 3];
        for t in &self.triangles {
            for &i in t {
                for a in 0..3 {
                    c[a] += self.points[i][a] / (3.0 * n);
                }
            }
        }
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, d] = t.map(|i| sub(self.points[i], c));
                dot(a, cross(b, d)) / 6.0
            })
            .sum()
    }
}

struct Builder<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    faces: Vec<Face>,
    /// Directed edge → face owning it.
    edges: HashMap<(usize, usize), usize>,
}

impl Builder<'_> {
    fn add_face(&mut self, v: [usize; 3]) -> usize {
        let [a, b, c] = v.map(|i| self.points[i]);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        let normal = n.map(|x| x / len);
        let id = self.faces.len();
        self.faces.push(Face {
            v,
            normal,
            offset: dot(normal, a),
            outside: Vec::new(),
            alive: true,
        });
        for k in 0..3 {
            self.edges.insert((v[k], v[(k + 1) % 3]), id);
        }
        id
    }

    fn neighbour(&self, face: usize, k: usize) -> usize {
        let v = self.faces[face].v;
        self.edges[&(v[(k + 1) % 3], v[k])]
    }

    fn assign(&mut self, candidates: impl IntoIterator<Item = usize>, faces: &[usize]) {
        for p in candidates {
            let point = self.points[p];
            if let Some(&f) = faces
                .iter()
                .find(|&&f| self.faces[f].distance(point) > self.eps)
            {
                self.faces[f].outside.push(p);
            }
        }
    }
}

/// Convex hull of a point cloud.
///
/// Fails with [`Error::DegenerateHull`] when the points do not span three
/// dimensions.
pub fn convex_hull(points: &[[f64; 3]]) -> Result<ConvexHull> {
    if points.len() < 4 {
        return Err(Error::DegenerateHull);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegenerateHull);
    }
    let eps = 1e-10 * extent.max(1.0);

    // Initial tetrahedron from extreme points.
    let mut extremes = Vec::new();
    for a in 0..3 {
        let min = (0..points.len()).min_by(|&i, &j| points[i][a].total_cmp(&points[j][a])).unwrap();
        let max = (0..points.len()).max_by(|&i, &j| points[i][a].total_cmp(&points[j][a])).unwrap();
        extremes.push(min);
        extremes.push(max);
    }
    let mut best = (0.0, 0, 0);
    for &i in &extremes {
        for &j in &extremes {
            let d = norm(sub(points[i], points[j]));
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (p0, p1) = (best.1, best.2);
    let axis = sub(points[p1], points[p0]);
    let p2 = (0..points.len())
        .max_by(|&i, &j| {
            let di = norm(cross(axis, sub(points[i], points[p0])));
            let dj = norm(cross(axis, sub(points[j], points[p0])));
            di.total_cmp(&dj)
        })
        .unwrap();
    let base_normal = cross(axis, sub(points[p2], points[p0]));
    if norm(base_normal) / norm(axis) <= eps {
        return Err(Error::DegenerateHull);
    }
    let unit = base_normal.map(|x| x / norm(base_normal));
    let p3 = (0..points.len())
        .max_by(|&i, &j| {
            let di = dot(unit, sub(points[i], points[p0])).abs();
            let dj = dot(unit, sub(points[j], points[p0])).abs();
            di.total_cmp(&dj)
        })
        .unwrap();
    let height = dot(unit, sub(points[p3], points[p0]));
    if height.abs() <= eps {
        return Err(Error::DegenerateHull);
    }

    let mut b = Builder {
        points,
        eps,
        faces: Vec::new(),
        edges: HashMap::new(),
    };
    // Orient the base so that p3 lies behind it.
    let (q1, q2) = if height > 0.0 { (p2, p1) } else { (p1, p2) };
    let initial = [
        b.add_face([p0, q1, q2]),
        b.add_face([p0, q2, p3]),
        b.add_face([q2, q1, p3]),
        b.add_face([q1, p0, p3]),
    ];
    let simplex = [p0, p1, p2, p3];
    b.assign((0..points.len()).filter(|i| !simplex.contains(i)), &initial);

    let mut stack: Vec<usize> = initial.to_vec();
    while let Some(f) = stack.pop() {
        if !b.faces[f].alive || b.faces[f].outside.is_empty() {
            continue;
        }
        let apex = *b.faces[f]
            .outside
            .iter()
            .max_by(|&&i, &&j| {
                let face = &b.faces[f];
                face.distance(points[i]).total_cmp(&face.distance(points[j]))
            })
            .unwrap();
        let eye = points[apex];

        // Visible region by flood fill from f.
        let mut visible = vec![f];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(f, true)]);
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut cursor = 0;
        while cursor < visible.len() {
            let face = visible[cursor];
            cursor += 1;
            for k in 0..3 {
                let nb = b.neighbour(face, k);
                let seen = *is_visible
                    .entry(nb)
                    .or_insert_with(|| b.faces[nb].distance(eye) > eps);
                if seen {
                    if !visible.contains(&nb) {
                        visible.push(nb);
                    }
                } else {
                    let v = b.faces[face].v;
                    horizon.push((v[k], v[(k + 1) % 3]));
                }
            }
        }

        let mut orphans = Vec::new();
        for &face in &visible {
            b.faces[face].alive = false;
            orphans.append(&mut b.faces[face].outside);
            let v = b.faces[face].v;
            for k in 0..3 {
                b.edges.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        let new_faces: Vec<usize> = horizon
            .iter()
            .map(|&(u, w)| b.add_face([u, w, apex]))
            .collect();
        b.assign(orphans.into_iter().filter(|&p| p != apex), &new_faces);
        stack.extend(new_faces);
    }

    let triangles = b.faces.iter().filter(|f| f.alive).map(|f| f.v).collect();
    Ok(ConvexHull {
        points: points.to_vec(),
        triangles,
    })
}

/// Volume of the convex hull of `points`.
pub fn convex_hull_volume(points: &[[f64; 3]]) -> Result<f64> {
    convex_hull(points).map(|h| h.volume())
}
