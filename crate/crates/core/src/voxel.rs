//! Disjoint voxel partition of a scene.

use std::collections::BTreeMap;

use crate::data::PointCloud;
use crate::error::{Error, Result};

/// Default voxel edge at desk scale (meters).
pub const DEFAULT_VOXEL_SIZE: f64 = 0.04;

pub type VoxelKey = [i64; 3];

/// Voxels are stored in ascending key order; the position of a voxel in that
/// order is its id. Point lists inside a voxel are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    voxel_size: f64,
    origin: [f64; 3],
    keys: Vec<VoxelKey>,
    cells: Vec<Vec<usize>>,
    point_voxel: Vec<usize>,
}

/// Half-open quantisation: a point on a boundary belongs to the upper cell.
pub fn quantize(p: &[f64; 3], origin: &[f64; 3], voxel_size: f64) -> VoxelKey {
    [
        ((p[0] - origin[0]) / voxel_size).floor() as i64,
        ((p[1] - origin[1]) / voxel_size).floor() as i64,
        ((p[2] - origin[2]) / voxel_size).floor() as i64,
    ]
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(Error::invalid(format!(
            "voxel_size must be positive, got {voxel_size}"
        )));
    }
    let (origin, _) = cloud.bounds();
    let mut map: BTreeMap<VoxelKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        map.entry(quantize(p, &origin, voxel_size)).or_default().push(i);
    }
    let mut point_voxel = vec![0usize; cloud.len()];
    let mut keys = Vec::with_capacity(map.len());
    let mut cells = Vec::with_capacity(map.len());
    for (v, (key, pts)) in map.into_iter().enumerate() {
        for &i in &pts {
            point_voxel[i] = v;
        }
        keys.push(key);
        cells.push(pts);
    }
    Ok(VoxelGrid {
        voxel_size,
        origin,
        keys,
        cells,
        point_voxel,
    })
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.point_voxel.len()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell(&self, voxel: usize) -> &[usize] {
        &self.cells[voxel]
    }

    /// Voxel id of a point.
    pub fn voxel_of(&self, point: usize) -> usize {
        self.point_voxel[point]
    }

    /// Sorted multiset of cell sizes.
    pub fn cardinalities(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.cells.iter().map(Vec::len).collect();
        c.sort_unstable();
        c
    }
}
