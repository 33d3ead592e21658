//! 26-connected component labelling and lesion spread classification.

use serde::{Deserialize, Serialize};

use crate::volume::{unravel, BinaryMask};

/// `f_core` at or above which a multi-component mask counts as a dominant
/// core with satellites.
pub const CORE_FRACTION_THRESHOLD: f64 = 0.7;

/// Connected components of a binary mask.
///
/// Components are numbered `1..=n_components` by decreasing voxel count, ties
/// broken by the lowest linear index of any member voxel, so the core is
/// always component 1 (index 0 in the per-component vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Per-voxel component number; 0 is background.
    pub component_id: Vec<u32>,
    pub component_voxels: Vec<usize>,
    /// Linear index of the first voxel of each component.
    pub first_voxel: Vec<usize>,
}

impl ComponentLabeling {
    pub fn n_components(&self) -> usize {
        self.component_voxels.len()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Component volumes in mm³.
    pub fn component_volumes(&self) -> Vec<f64> {
        let dv = self.voxel_volume();
        self.component_voxels.iter().map(|&n| n as f64 * dv).collect()
    }

    pub fn total_voxels(&self) -> usize {
        self.component_voxels.iter().sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.total_voxels() as f64 * self.voxel_volume()
    }

    /// Index of the largest component, `None` for an empty mask.
    pub fn core_index(&self) -> Option<usize> {
        (!self.component_voxels.is_empty()).then_some(0)
    }

    /// Share of the total volume held by the core, `None` for an empty mask.
    pub fn core_fraction(&self) -> Option<f64> {
        self.core_index()
            .map(|i| self.component_voxels[i] as f64 / self.total_voxels() as f64)
    }

    /// Binary mask of a single component (0-based index).
    pub fn component_mask(&self, index: usize) -> BinaryMask {
        let id = index as u32 + 1;
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.component_id.iter().map(|&c| c == id).collect(),
        }
    }

    /// Voxel coordinates of every component, in one pass over the grid.
    pub fn component_voxel_lists(&self) -> Vec<Vec<[usize; 3]>> {
        let mut lists: Vec<Vec<[usize; 3]>> = self
            .component_voxels
            .iter()
            .map(|&n| Vec::with_capacity(n))
            .collect();
        for (i, &c) in self.component_id.iter().enumerate() {
            if c != 0 {
                lists[c as usize - 1].push(unravel(self.dims, i));
            }
        }
        lists
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// The 13 neighbours already visited in a raster scan (x fastest).
const BACKWARD_NEIGHBOURS: [[i64; 3]; 13] = [
    [-1, 0, 0],
    [-1, -1, 0],
    [0, -1, 0],
    [1, -1, 0],
    [-1, -1, -1],
    [0, -1, -1],
    [1, -1, -1],
    [-1, 0, -1],
    [0, 0, -1],
    [1, 0, -1],
    [-1, 1, -1],
    [0, 1, -1],
    [1, 1, -1],
];

/// Label the 26-connected components of `mask`. An empty mask yields zero
/// components.
pub fn connected_components(mask: &BinaryMask) -> ComponentLabeling {
    let [nx, ny, nz] = mask.dims;
    let mut provisional = vec![u32::MAX; mask.data.len()];
    let mut sets = DisjointSet::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.index(x, y, z);
                if !mask.data[i] {
                    continue;
                }
                let mut label = u32::MAX;
                for [dx, dy, dz] in BACKWARD_NEIGHBOURS {
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 {
                        continue;
                    }
                    let j = mask.index(qx as usize, qy as usize, qz as usize);
                    let other = provisional[j];
                    if other == u32::MAX {
                        continue;
                    }
                    if label == u32::MAX {
                        label = other;
                    } else {
                        sets.union(label, other);
                    }
                }
                provisional[i] = if label == u32::MAX { sets.make() } else { label };
            }
        }
    }

    // Resolve roots, then order components by (size desc, first voxel asc).
    let n_provisional = sets.parent.len();
    let mut root_slot = vec![u32::MAX; n_provisional];
    let mut sizes: Vec<usize> = Vec::new();
    let mut firsts: Vec<usize> = Vec::new();
    let mut slot_of_voxel = vec![u32::MAX; mask.data.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == u32::MAX {
            continue;
        }
        let root = sets.find(p) as usize;
        if root_slot[root] == u32::MAX {
            root_slot[root] = sizes.len() as u32;
            sizes.push(0);
            firsts.push(i);
        }
        let slot = root_slot[root];
        sizes[slot as usize] += 1;
        slot_of_voxel[i] = slot;
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(firsts[a].cmp(&firsts[b])));
    let mut rank = vec![0u32; sizes.len()];
    for (r, &slot) in order.iter().enumerate() {
        rank[slot] = r as u32 + 1;
    }
    let component_id = slot_of_voxel
        .iter()
        .map(|&s| if s == u32::MAX { 0 } else { rank[s as usize] })
        .collect();

    ComponentLabeling {
        dims: mask.dims,
        spacing: mask.spacing,
        component_id,
        component_voxels: order.iter().map(|&s| sizes[s]).collect(),
        first_voxel: order.iter().map(|&s| firsts[s]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpreadCategory {
    #[serde(rename = "single lesion")]
    SingleLesion,
    #[serde(rename = "core with satellite lesions")]
    CoreWithSatelliteLesions,
    #[serde(rename = "scattered lesions")]
    ScatteredLesions,
}

impl SpreadCategory {
    pub const ALL: [SpreadCategory; 3] = [
        SpreadCategory::SingleLesion,
        SpreadCategory::CoreWithSatelliteLesions,
        SpreadCategory::ScatteredLesions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpreadCategory::SingleLesion => "single lesion",
            SpreadCategory::CoreWithSatelliteLesions => "core with satellite lesions",
            SpreadCategory::ScatteredLesions => "scattered lesions",
        }
    }
}

impl std::fmt::Display for SpreadCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadDescriptor {
    /// `None` when the mask is empty (rendered as N/A).
    #[serde(with = "crate::na")]
    pub category: Option<SpreadCategory>,
    pub core_fraction: f64,
    pub n_components: usize,
}

/// The three-case spread rule on `(N_c, f_core)`.
pub fn classify_spread(n_components: usize, core_fraction: f64) -> Option<SpreadCategory> {
    match n_components {
        0 => None,
        1 => Some(SpreadCategory::SingleLesion),
        _ if core_fraction >= CORE_FRACTION_THRESHOLD => {
            Some(SpreadCategory::CoreWithSatelliteLesions)
        }
        _ => Some(SpreadCategory::ScatteredLesions),
    }
}

pub fn spread_classify(labeling: &ComponentLabeling) -> SpreadDescriptor {
    let core_fraction = labeling.core_fraction().unwrap_or(0.0);
    SpreadDescriptor {
        category: classify_spread(labeling.n_components(), core_fraction),
        core_fraction,
        n_components: labeling.n_components(),
    }
}
