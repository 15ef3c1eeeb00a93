//! Browser bindings: one synthetic scene held in memory, three operations on
//! it. Indices cross the boundary as `u32`, coordinates as `f64`.

use sparseseg::annotate::{corner_decay_weights, normalize_weights, sample_clustered, sample_uniform, SparseLabels};
use sparseseg::data::{generate_scene, PointCloud, SceneSpec};
use sparseseg::gradlab::{Calibration, GradLab, GradSampler};
use sparseseg::lads::{default_k, downsample_on_grid, Strategy};
use sparseseg::nn::{Architecture, ModelParams};
use sparseseg::voxel::voxelize;
use wasm_bindgen::prelude::*;

fn js(e: sparseseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Lab {
    cloud: PointCloud,
    sparse: Option<SparseLabels>,
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(points: usize, seed: u64) -> Result<Lab, JsError> {
        let cloud = generate_scene(&SceneSpec {
            num_points: points,
            seed,
            ..SceneSpec::default()
        })
        .map_err(js)?;
        Ok(Lab { cloud, sparse: None })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.cloud.num_classes()
    }

    /// Interleaved `x, y` (top-down view).
    pub fn xy(&self) -> Vec<f64> {
        self.cloud.positions().iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn classes(&self) -> Vec<u32> {
        self.cloud.gt_labels().map(<[u32]>::to_vec).unwrap_or_default()
    }

    /// Labels `rate·N` points in `clusters` feature-space clusters (0 means
    /// uniform). Returns the labelled indices and keeps them for `downsample`.
    pub fn annotate(&mut self, rate: f64, clusters: usize, seed: u64) -> Result<Vec<u32>, JsError> {
        let sparse = if clusters == 0 {
            sample_uniform(&self.cloud, rate, seed)
        } else {
            sample_clustered(&self.cloud, rate, clusters, seed)
        }
        .map_err(js)?;
        let out = sparse.indices().iter().map(|&i| i as u32).collect();
        self.sparse = Some(sparse);
        Ok(out)
    }

    /// Keeps one point in each of `⌈|V|/4⌉` voxels. Returns the kept indices.
    pub fn downsample(&self, strategy: &str, voxel_size: f64, seed: u64) -> Result<Vec<u32>, JsError> {
        let strategy: Strategy = strategy.parse().map_err(js)?;
        let grid = voxelize(&self.cloud, voxel_size).map_err(js)?;
        let mask = match &self.sparse {
            Some(s) => s.mask(self.cloud.len()),
            None => vec![false; self.cloud.len()],
        };
        let k = default_k(&grid);
        let res = downsample_on_grid(&grid, &mask, k, seed, strategy).map_err(js)?;
        Ok(res.point_indices.iter().map(|&i| i as u32).collect())
    }

    /// Repeats `repeats` draws of `m` points and returns, per parameter
    /// component, `(mean deviation, se, analytic bias)` interleaved.
    /// `corner_decay = 0` draws uniformly.
    pub fn clt(
        &self,
        corner_decay: f64,
        calibration: &str,
        m: usize,
        repeats: usize,
        seed: u64,
    ) -> Result<Vec<f64>, JsError> {
        let calibration: Calibration = calibration.parse().map_err(js)?;
        let params = ModelParams::init(
            Architecture {
                feature_dim: self.cloud.feature_dim(),
                hidden: 8,
                classes: self.cloud.num_classes(),
                k_nn: 8,
            },
            seed,
        );
        let sampler = if corner_decay > 0.0 {
            let w = corner_decay_weights(&self.cloud, corner_decay);
            GradSampler::DensityBiased(normalize_weights(&w, self.cloud.len()).map_err(js)?)
        } else {
            GradSampler::Uniform
        };
        let mut lab = GradLab::new(&params, &self.cloud).map_err(js)?;
        let report = lab
            .clt_experiment(&sampler, m, repeats, seed, calibration)
            .map_err(js)?;
        Ok(report
            .mean_deviation
            .iter()
            .zip(&report.se)
            .zip(&report.analytic_delta)
            .flat_map(|((&d, &s), &a)| [d, s, a])
            .collect())
    }
}
