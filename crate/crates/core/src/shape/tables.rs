//! The 256-case marching-cubes polygon table.
//!
//! Rather than shipping a hand-typed triangle table, every case is derived
//! from the cube topology: on each face the iso-contour segments are traced
//! around the face boundary, and the segments are chained into closed loops.
//! Faces with two diagonally opposite inside corners always separate the
//! inside corners. Because that decision depends only on the four corner
//! values of a face, the two cubes sharing a face always agree and the
//! resulting surface is closed.
//!
//! Corner and edge numbering follows the usual convention:
//!
//! ```text
//!        7 ------ 6          edges: 0:(0,1) 1:(1,2) 2:(2,3)  3:(3,0)
//!       /|       /|                 4:(4,5) 5:(5,6) 6:(6,7)  7:(7,4)
//!      4 ------ 5 |                 8:(0,4) 9:(1,5) 10:(2,6) 11:(3,7)
//!      | 3 -----|-2
//!      |/       |/           z up, y into the page, x to the right
//!      0 ------ 1
//! ```

use std::sync::OnceLock;

pub(crate) const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

pub(crate) const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Face corners in counter-clockwise order seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

/// Triangles (as cube-edge triples) for every corner configuration. Bit `c`
/// of the case index is set when corner `c` lies above the iso-level.
/// Triangles wind counter-clockwise when viewed from the outside (below the
/// iso-level) side.
pub(crate) fn triangle_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|case| triangulate(&polygons(case as u8))))
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&[p, q]| (p == a && q == b) || (p == b && q == a))
        .expect("corners share an edge")
}

/// Closed loops of crossed edges for one configuration.
pub(crate) fn polygons(case: u8) -> Vec<Vec<u8>> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next: [Option<usize>; 12] = [None; 12];
    for face in FACES {
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if inside(a) || !inside(b) {
                continue;
            }
            // Entering an inside run along a→b; find where the run exits.
            let entry = edge_between(a, b);
            let mut j = (k + 1) % 4;
            while inside(face[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            let exit = edge_between(face[j], face[(j + 1) % 4]);
            debug_assert!(next[entry].is_none());
            next[entry] = Some(exit);
        }
    }
    let mut visited = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if visited[start] || next[start].is_none() {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            poly.push(e as u8);
            e = next[e].expect("contour loops are closed");
        }
        loops.push(poly);
    }
    loops
}

/// Cube face indices (into `FACES`) touched by an edge.
fn faces_of_edge(e: u8) -> impl Iterator<Item = usize> {
    let [a, b] = EDGES[e as usize];
    (0..6).filter(move |&f| FACES[f].contains(&a) && FACES[f].contains(&b))
}

/// True when two non-adjacent loop vertices lie on a common cube face, so a
/// diagonal between them would run through that face.
fn diagonal_in_face(a: u8, b: u8) -> bool {
    faces_of_edge(a).any(|f| faces_of_edge(b).any(|g| g == f))
}

/// Fan triangulation from the first loop position whose diagonals all pass
/// through the cube interior.
fn triangulate(polys: &[Vec<u8>]) -> Vec<[u8; 3]> {
    let mut tris = Vec::new();
    for poly in polys {
        let n = poly.len();
        let start = (0..n)
            .find(|&s| (2..n - 1).all(|k| !diagonal_in_face(poly[s], poly[(s + k) % n])))
            .unwrap_or(0);
        for k in 1..n - 1 {
            tris.push([poly[start], poly[(start + k) % n], poly[(start + k + 1) % n]]);
        }
    }
    tris
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases_are_empty() {
        let t = triangle_table();
        assert!(t[0].is_empty());
        assert!(t[255].is_empty());
    }

    #[test]
    fn single_corner_gives_one_triangle() {
        let t = triangle_table();
        for c in 0..8 {
            assert_eq!(t[1 << c].len(), 1);
            assert_eq!(t[255 ^ (1 << c)].len(), 1);
        }
    }

    #[test]
    fn every_crossed_edge_is_used_exactly_once_per_loop_set() {
        for case in 0u16..256 {
            let case = case as u8;
            let crossed: Vec<usize> = (0..12)
                .filter(|&e| {
                    let [a, b] = EDGES[e];
                    (case >> a & 1) != (case >> b & 1)
                })
                .collect();
            let mut used: Vec<usize> = polygons(case)
                .iter()
                .flatten()
                .map(|&e| e as usize)
                .collect();
            used.sort_unstable();
            assert_eq!(used, crossed, "case {case}");
        }
    }

    #[test]
    fn no_diagonal_runs_along_a_face() {
        for case in 0u16..256 {
            for poly in polygons(case as u8) {
                let n = poly.len();
                let ok = (0..n)
                    .any(|s| (2..n - 1).all(|k| !diagonal_in_face(poly[s], poly[(s + k) % n])));
                assert!(ok, "case {case} loop {poly:?}");
            }
        }
    }

    #[test]
    fn table_size_matches_classic_counts() {
        // Every loop of k crossed edges triangulates into k - 2 triangles, and
        // no configuration needs more than 5 triangles with the separating rule
        // except the few with 4 separate corners.
        let t = triangle_table();
        let max = t.iter().map(Vec::len).max().unwrap();
        assert!(max <= 5, "max triangles per cube {max}");
    }
}
