//! Label-aware downsampling and its ablation variants.
//!
//! Downsampling is two-level: a point-level rule picks one representative per
//! voxel, then a voxel-level rule picks `K` voxels. Each level is either
//! random (`R`) or label-first (`L`); the strategy tag names the point level
//! first, so `LR` is label-aware downsampling proper.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::annotate::SparseLabels;
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::voxel::{voxelize, VoxelGrid};

const POINT_STREAM: u64 = 0x1AD5_01;
const VOXEL_STREAM: u64 = 0x1AD5_02;

/// Fraction of voxels kept when `K` is not given.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Random point per voxel, random voxels.
    Rr,
    /// Random point per voxel, labelled voxels first.
    Rl,
    /// Labelled point per voxel, labelled voxels first.
    Ll,
    /// Labelled point per voxel, random voxels.
    Lr,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Rr, Strategy::Rl, Strategy::Ll, Strategy::Lr];

    fn point_label_first(self) -> bool {
        matches!(self, Strategy::Ll | Strategy::Lr)
    }

    fn voxel_label_first(self) -> bool {
        matches!(self, Strategy::Rl | Strategy::Ll)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Rr => "rr",
            Strategy::Rl => "rl",
            Strategy::Ll => "ll",
            Strategy::Lr => "lr",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(Strategy::Rr),
            "rl" => Ok(Strategy::Rl),
            "ll" => Ok(Strategy::Ll),
            "lr" => Ok(Strategy::Lr),
            other => Err(Error::invalid(format!(
                "unknown downsampling strategy {other:?} (expected rr, rl, ll or lr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownsampleResult {
    /// Selected points, one per selected voxel, in ascending voxel order.
    pub point_indices: Vec<usize>,
    pub labeled_mask: Vec<bool>,
    /// Selected voxel ids, ascending.
    pub voxels: Vec<usize>,
    pub strategy: Strategy,
}

impl DownsampleResult {
    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&l| l).count()
    }
}

/// `⌈0.25·|V|⌉`.
pub fn default_k(grid: &VoxelGrid) -> usize {
    ((DEFAULT_KEEP_FRACTION * grid.len() as f64).ceil() as usize).max(1)
}

/// Number of voxels holding at least one labelled point.
pub fn labeled_voxel_count(grid: &VoxelGrid, labeled: &[bool]) -> usize {
    grid.cells()
        .iter()
        .filter(|c| c.iter().any(|&i| labeled[i]))
        .count()
}

/// Point-level label-first selection: one representative per voxel, drawn
/// uniformly from the voxel's labelled points when it has any, otherwise
/// from all of its points. Output is indexed by voxel id.
pub fn sampling_l(grid: &VoxelGrid, labeled: &[bool], rng: &mut Rng) -> Vec<usize> {
    let mut scratch = Vec::new();
    grid.cells()
        .iter()
        .map(|cell| {
            scratch.clear();
            scratch.extend(cell.iter().copied().filter(|&i| labeled[i]));
            if scratch.is_empty() {
                cell[rng.random_range(0..cell.len())]
            } else {
                scratch[rng.random_range(0..scratch.len())]
            }
        })
        .collect()
}

/// Uniform representative per voxel, ignoring labels.
pub fn sampling_point_random(grid: &VoxelGrid, rng: &mut Rng) -> Vec<usize> {
    grid.cells()
        .iter()
        .map(|cell| cell[rng.random_range(0..cell.len())])
        .collect()
}

/// `min(K, |candidates|)` candidates uniformly without replacement, kept in
/// their original relative order.
pub fn sampling_r(candidates: &[usize], k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if k >= candidates.len() {
        return Ok(candidates.to_vec());
    }
    let mut pos = index::sample(rng, candidates.len(), k).into_vec();
    pos.sort_unstable();
    Ok(pos.into_iter().map(|p| candidates[p]).collect())
}

/// Voxel-level label-first selection: every labelled voxel (a uniform
/// `K`-subset when there are more than `K`), then a uniform fill from the
/// unlabelled voxels.
pub fn sampling_voxel_label_first(
    grid: &VoxelGrid,
    labeled: &[bool],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let (with, without): (Vec<usize>, Vec<usize>) =
        (0..grid.len()).partition(|&v| grid.cell(v).iter().any(|&i| labeled[i]));
    let mut out = sampling_r(&with, k, rng)?;
    if out.len() < k && !without.is_empty() {
        out.extend(sampling_r(&without, k - out.len(), rng)?);
    }
    out.sort_unstable();
    Ok(out)
}

/// Runs one strategy on a prebuilt grid. The point and voxel levels use
/// independent streams, so strategies that share a voxel-level rule select
/// the same voxels for the same seed.
pub fn downsample_on_grid(
    grid: &VoxelGrid,
    labeled: &[bool],
    k: usize,
    seed: u64,
    strategy: Strategy,
) -> Result<DownsampleResult> {
    if labeled.len() != grid.num_points() {
        return Err(Error::Shape("label mask length != grid point count".into()));
    }
    let mut point_rng = seed::rng_at(seed, &[POINT_STREAM]);
    let mut voxel_rng = seed::rng_at(seed, &[VOXEL_STREAM]);
    let reps = if strategy.point_label_first() {
        sampling_l(grid, labeled, &mut point_rng)
    } else {
        sampling_point_random(grid, &mut point_rng)
    };
    let voxels = if strategy.voxel_label_first() {
        sampling_voxel_label_first(grid, labeled, k, &mut voxel_rng)?
    } else {
        let all: Vec<usize> = (0..grid.len()).collect();
        sampling_r(&all, k, &mut voxel_rng)?
    };
    let point_indices: Vec<usize> = voxels.iter().map(|&v| reps[v]).collect();
    let labeled_mask = point_indices.iter().map(|&i| labeled[i]).collect();
    Ok(DownsampleResult {
        point_indices,
        labeled_mask,
        voxels,
        strategy,
    })
}

pub fn downsample_variant(
    cloud: &PointCloud,
    sparse: &SparseLabels,
    voxel_size: f64,
    k: usize,
    seed: u64,
    strategy: Strategy,
) -> Result<DownsampleResult> {
    sparse.validate(cloud)?;
    let grid = voxelize(cloud, voxel_size)?;
    downsample_on_grid(&grid, &sparse.mask(cloud.len()), k, seed, strategy)
}

/// Label-aware downsampling: `Sampling_R({Sampling_L(v, 1) | v ∈ V}, K)`.
pub fn lads(
    cloud: &PointCloud,
    sparse: &SparseLabels,
    voxel_size: f64,
    k: usize,
    seed: u64,
) -> Result<DownsampleResult> {
    downsample_variant(cloud, sparse, voxel_size, k, seed, Strategy::Lr)
}
