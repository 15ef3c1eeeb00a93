//! Sparse annotation simulators.
//!
//! Three samplers cover the annotation regimes of interest:
//! - [`sample_uniform`]: `M` points uniformly without replacement;
//! - [`sample_clustered`]: `G` random centres each claim their `⌊M/G⌋`
//!   nearest unclaimed points in feature space (`G = 1` is the most
//!   concentrated, `G = M` reduces to uniform sampling);
//! - [`sample_density_biased`]: i.i.d. draws from a known density `p′`, the
//!   analysable regime used by the gradient experiments.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use serde::Serialize;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::knn::Neighborhood;
use crate::seed;

/// Stream id shared by the uniform and clustered samplers so that
/// `sample_clustered(G = M)` picks exactly the points `sample_uniform` picks.
const SELECT_STREAM: u64 = 0xA7_01;
const DENSITY_STREAM: u64 = 0xA7_02;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabels {
    indices: Vec<usize>,
    classes: Vec<u32>,
    density: Option<Vec<f64>>,
    draws: Option<Vec<usize>>,
}

impl SparseLabels {
    /// Labels the given points with their ground-truth classes. Indices are
    /// sorted and must be distinct.
    pub fn from_indices(cloud: &PointCloud, mut indices: Vec<usize>) -> Result<Self> {
        let labels = cloud.require_labels()?;
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate annotated index"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
            return Err(Error::invalid(format!("annotated index {bad} >= N")));
        }
        if indices.is_empty() {
            return Err(Error::invalid("at least one annotated point is required"));
        }
        let classes = indices.iter().map(|&i| labels[i]).collect();
        Ok(Self {
            indices,
            classes,
            density: None,
            draws: None,
        })
    }

    pub fn with_density(mut self, density: Vec<f64>) -> Self {
        self.density = Some(density);
        self
    }

    pub fn with_draws(mut self, draws: Vec<usize>) -> Self {
        self.draws = Some(draws);
        self
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Per-draw sampling probability `p′`, when known.
    pub fn density(&self) -> Option<&[f64]> {
        self.density.as_deref()
    }

    /// Raw i.i.d. draw list (with repeats), for density-biased sampling.
    pub fn draws(&self) -> Option<&[usize]> {
        self.draws.as_deref()
    }

    pub fn contains(&self, point: usize) -> bool {
        self.indices.binary_search(&point).is_ok()
    }

    /// Boolean mask of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }

    pub fn validate(&self, cloud: &PointCloud) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::invalid("sparse labels are empty"));
        }
        if self.indices.len() != self.classes.len() {
            return Err(Error::Shape("indices/classes length mismatch".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("indices must be strictly increasing"));
        }
        if *self.indices.last().expect("non-empty") >= cloud.len() {
            return Err(Error::invalid("annotated index out of range"));
        }
        if let Some(gt) = cloud.gt_labels() {
            for (&i, &c) in self.indices.iter().zip(&self.classes) {
                if gt[i] != c {
                    return Err(Error::invalid(format!(
                        "class of point {i} is {c}, ground truth says {}",
                        gt[i]
                    )));
                }
            }
        }
        if self.classes.iter().any(|&c| c as usize >= cloud.num_classes()) {
            return Err(Error::invalid("annotated class out of range"));
        }
        if let Some(d) = &self.density {
            if d.len() != cloud.len() {
                return Err(Error::Shape("density length != N".into()));
            }
            if d.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::invalid("density must be finite and non-negative"));
            }
            let s: f64 = d.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("density sums to {s}, not 1")));
            }
        }
        Ok(())
    }
}

/// `M = max(1, round(rate·N))`.
pub fn annotation_budget(n: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("label rate must be in (0, 1], got {rate}")));
    }
    Ok(((rate * n as f64).round() as usize).clamp(1, n))
}

pub fn sample_uniform(cloud: &PointCloud, rate: f64, seed: u64) -> Result<SparseLabels> {
    cloud.require_labels()?;
    let n = cloud.len();
    let m = annotation_budget(n, rate)?;
    let mut rng = seed::rng_at(seed, &[SELECT_STREAM]);
    let picked = index::sample(&mut rng, n, m).into_vec();
    Ok(SparseLabels::from_indices(cloud, picked)?.with_density(vec![1.0 / n as f64; n]))
}

/// Cluster growth is greedy in centre order: each centre claims its
/// `⌊M/G⌋` nearest points (squared Euclidean distance over the full feature
/// vector) that no earlier cluster claimed. Ties prefer the centre itself,
/// then the lower index.
pub fn sample_clustered(
    cloud: &PointCloud,
    rate: f64,
    clusters: usize,
    seed: u64,
) -> Result<SparseLabels> {
    cloud.require_labels()?;
    let n = cloud.len();
    let m = annotation_budget(n, rate)?;
    if clusters == 0 || clusters > m {
        return Err(Error::invalid(format!(
            "cluster count G = {clusters} must be in [1, M = {m}]"
        )));
    }
    let per_cluster = m / clusters;
    let mut rng = seed::rng_at(seed, &[SELECT_STREAM]);
    let centers = index::sample(&mut rng, n, clusters).into_vec();

    let mut claimed = vec![false; n];
    let mut picked = Vec::with_capacity(clusters * per_cluster);
    let mut cand: Vec<(f64, bool, usize)> = Vec::with_capacity(n);
    for &c in &centers {
        let fc = cloud.feature(c);
        cand.clear();
        cand.extend((0..n).filter(|&i| !claimed[i]).map(|i| {
            let d: f64 = cloud
                .feature(i)
                .iter()
                .zip(fc)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i != c, i)
        }));
        let take = per_cluster.min(cand.len());
        let cmp = |a: &(f64, bool, usize), b: &(f64, bool, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if take < cand.len() {
            cand.select_nth_unstable_by(take, cmp);
        }
        for &(_, _, i) in &cand[..take] {
            claimed[i] = true;
            picked.push(i);
        }
    }
    SparseLabels::from_indices(cloud, picked)
}

/// Draws `M` indices i.i.d. with replacement from `p′ = w / Σw`. The label
/// mask is the deduplicated draw set; the raw draws and `p′` are kept.
pub fn sample_density_biased(
    cloud: &PointCloud,
    rate: f64,
    weights: &[f64],
    seed: u64,
) -> Result<SparseLabels> {
    cloud.require_labels()?;
    let n = cloud.len();
    let m = annotation_budget(n, rate)?;
    let density = normalize_weights(weights, n)?;
    let draws = draw_iid(&density, m, seed)?;
    let mut unique = draws.clone();
    unique.sort_unstable();
    unique.dedup();
    Ok(SparseLabels::from_indices(cloud, unique)?
        .with_density(density)
        .with_draws(draws))
}

/// Normalises non-negative weights to a probability vector.
pub fn normalize_weights(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    if weights.len() != n {
        return Err(Error::Shape(format!(
            "weights length {} != N = {n}",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weights are all zero"));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `count` i.i.d. draws from a probability vector.
pub fn draw_iid(density: &[f64], count: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(density).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng_at(seed, &[DENSITY_STREAM]);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// Weights `exp(−decay · d / d_max)` where `d` is the distance of each point
/// to the bounding-box minimum corner.
pub fn corner_decay_weights(cloud: &PointCloud, decay: f64) -> Vec<f64> {
    let (lo, _) = cloud.bounds();
    let dist: Vec<f64> = cloud
        .positions()
        .iter()
        .map(|p| {
            ((p[0] - lo[0]).powi(2) + (p[1] - lo[1]).powi(2) + (p[2] - lo[2]).powi(2)).sqrt()
        })
        .collect();
    let dmax = dist.iter().cloned().fold(0.0, f64::max).max(1e-12);
    dist.iter().map(|d| (-decay * d / dmax).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InhomogeneityStats {
    pub labeled_classes: usize,
    /// Mean distance (meters) from each labelled point to its nearest
    /// labelled neighbour; absent with a single labelled point.
    pub mean_nn_distance: Option<f64>,
    pub class_histogram: Vec<usize>,
}

pub fn inhomogeneity_stats(cloud: &PointCloud, sparse: &SparseLabels) -> Result<InhomogeneityStats> {
    sparse.validate(cloud)?;
    let mut class_histogram = vec![0usize; cloud.num_classes()];
    for &c in sparse.classes() {
        class_histogram[c as usize] += 1;
    }
    let labeled_classes = class_histogram.iter().filter(|&&c| c > 0).count();
    let pts: Vec<[f64; 3]> = sparse
        .indices()
        .iter()
        .map(|&i| cloud.positions()[i])
        .collect();
    let mean_nn_distance = (pts.len() >= 2).then(|| {
        let nb = Neighborhood::build(&pts, 1);
        let total: f64 = (0..pts.len())
            .map(|i| {
                let j = nb.neighbors(i)[0];
                let (a, b) = (pts[i], pts[j]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            })
            .sum();
        total / pts.len() as f64
    });
    Ok(InhomogeneityStats {
        labeled_classes,
        mean_nn_distance,
        class_histogram,
    })
}

// ---------------------------------------------------------------------------
// Sidecar format
// ---------------------------------------------------------------------------

/// Header `M C`, then `index class` per line. Optional blocks follow:
/// `density N` with one probability per line and `draws D` with one index
/// per line. Floats use shortest round-trip formatting.
pub fn labels_to_text(sparse: &SparseLabels, num_classes: usize) -> String {
    let mut out = String::new();
    writeln!(out, "{} {}", sparse.len(), num_classes).unwrap();
    for (&i, &c) in sparse.indices().iter().zip(sparse.classes()) {
        writeln!(out, "{i} {c}").unwrap();
    }
    if let Some(d) = sparse.density() {
        writeln!(out, "density {}", d.len()).unwrap();
        for p in d {
            writeln!(out, "{p:e}").unwrap();
        }
    }
    if let Some(d) = sparse.draws() {
        writeln!(out, "draws {}", d.len()).unwrap();
        for i in d {
            writeln!(out, "{i}").unwrap();
        }
    }
    out
}

pub fn labels_from_text(text: &str, path: &Path) -> Result<(SparseLabels, usize)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| err(1, "empty file".into()))?;
    let (m, c) = header
        .split_once(' ')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| err(1, "expected header `M C`".into()))?;
    if lines.len() < 1 + m {
        return Err(err(lines.len(), format!("expected {m} label lines")));
    }
    let mut indices = Vec::with_capacity(m);
    let mut classes = Vec::with_capacity(m);
    for (k, line) in lines[1..=m].iter().enumerate() {
        let (i, cl) = line
            .split_once(' ')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<u32>().ok()?)))
            .ok_or_else(|| err(k + 2, format!("expected `index class`, got {line:?}")))?;
        if cl as usize >= c {
            return Err(err(k + 2, format!("class {cl} outside [0, {c})")));
        }
        indices.push(i);
        classes.push(cl);
    }
    let mut sparse = SparseLabels {
        indices,
        classes,
        density: None,
        draws: None,
    };
    let mut pos = 1 + m;
    while pos < lines.len() {
        let line = lines[pos];
        let (tag, count) = line
            .split_once(' ')
            .and_then(|(a, b)| Some((a, b.parse::<usize>().ok()?)))
            .ok_or_else(|| err(pos + 1, format!("expected block header, got {line:?}")))?;
        let body = lines
            .get(pos + 1..pos + 1 + count)
            .ok_or_else(|| err(lines.len(), format!("truncated {tag} block")))?;
        match tag {
            "density" => {
                let mut d = Vec::with_capacity(count);
                for (k, v) in body.iter().enumerate() {
                    d.push(v.parse::<f64>().map_err(|_| {
                        err(pos + 2 + k, format!("cannot parse probability {v:?}"))
                    })?);
                }
                sparse.density = Some(d);
            }
            "draws" => {
                let mut d = Vec::with_capacity(count);
                for (k, v) in body.iter().enumerate() {
                    d.push(
                        v.parse::<usize>()
                            .map_err(|_| err(pos + 2 + k, format!("cannot parse index {v:?}")))?,
                    );
                }
                sparse.draws = Some(d);
            }
            other => return Err(err(pos + 1, format!("unknown block {other:?}"))),
        }
        pos += 1 + count;
    }
    Ok((sparse, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneSpec};

    fn scene(n: usize, seed: u64) -> PointCloud {
        generate_scene(&SceneSpec {
            num_points: n,
            seed,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn uniform_budget_and_density() {
        let cloud = scene(1000, 1);
        let s = sample_uniform(&cloud, 0.01, 3).unwrap();
        assert_eq!(s.len(), 10);
        s.validate(&cloud).unwrap();
        assert!(s.density().unwrap().iter().all(|&p| p == 1e-3));
    }

    #[test]
    fn full_rate_labels_everything() {
        let cloud = scene(300, 1);
        let s = sample_uniform(&cloud, 1.0, 9).unwrap();
        assert_eq!(s.indices(), (0..300).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cloud = scene(300, 1);
        assert!(sample_uniform(&cloud, 0.0, 1).is_err());
        assert!(sample_uniform(&cloud, 1.5, 1).is_err());
        assert!(sample_clustered(&cloud, 0.01, 4, 1).is_err()); // M = 3
        assert!(sample_clustered(&cloud, 0.01, 0, 1).is_err());
        assert!(sample_density_biased(&cloud, 0.1, &vec![0.0; 300], 1).is_err());
        let unlabeled = cloud.subset(&[0, 1]).unwrap();
        let unlabeled = PointCloud::new(
            unlabeled.positions().to_vec(),
            unlabeled.features().to_vec(),
            unlabeled.feature_dim(),
            None,
            6,
        )
        .unwrap();
        assert!(sample_uniform(&unlabeled, 0.5, 1).is_err());
    }

    #[test]
    fn clustered_with_g_equal_m_is_uniform() {
        let cloud = scene(2000, 4);
        for seed in 0..20 {
            let u = sample_uniform(&cloud, 0.02, seed).unwrap();
            let c = sample_clustered(&cloud, 0.02, 40, seed).unwrap();
            assert_eq!(u.indices(), c.indices());
        }
    }

    #[test]
    fn clustered_count_is_exact() {
        let cloud = scene(10_000, 2);
        for g in [1, 3, 7, 10, 20, 100] {
            let s = sample_clustered(&cloud, 0.01, g, 5).unwrap();
            assert_eq!(s.len(), g * (100 / g));
            s.validate(&cloud).unwrap();
        }
    }

    #[test]
    fn single_cluster_is_feature_knn_of_center() {
        let cloud = scene(10_000, 6);
        let s = sample_clustered(&cloud, 0.01, 1, 17).unwrap();
        let mut rng = seed::rng_at(17, &[SELECT_STREAM]);
        let center = index::sample(&mut rng, cloud.len(), 1).index(0);
        // brute-force kNN: full sort by (distance, index)
        let fc = cloud.feature(center).to_vec();
        let mut all: Vec<(f64, usize)> = (0..cloud.len())
            .map(|i| {
                let d = cloud.feature(i).iter().zip(&fc).map(|(a, b)| (a - b).powi(2)).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(all[0].1, center);
        let mut expected: Vec<usize> = all[..100].iter().map(|x| x.1).collect();
        expected.sort_unstable();
        assert_eq!(s.indices(), expected.as_slice());
        assert!(s.contains(center));
    }

    #[test]
    fn benchmark_cluster_grid_is_accepted() {
        let cloud = scene(10_000, 8);
        let m = annotation_budget(cloud.len(), 0.01).unwrap();
        for g in [1, 10, 20, m] {
            assert!(sample_clustered(&cloud, 0.01, g, 1).is_ok());
        }
    }

    #[test]
    fn density_point_mass_and_uniform() {
        let cloud = scene(200, 3);
        let mut w = vec![0.0; 200];
        w[42] = 3.0;
        let s = sample_density_biased(&cloud, 0.1, &w, 1).unwrap();
        assert!(s.draws().unwrap().iter().all(|&d| d == 42));
        assert_eq!(s.indices(), &[42]);

        let s = sample_density_biased(&cloud, 0.1, &[2.0; 200], 1).unwrap();
        assert!(s.density().unwrap().iter().all(|&p| (p - 0.005).abs() < 1e-18));
        assert_eq!(s.draws().unwrap().len(), 20);
        s.validate(&cloud).unwrap();
    }

    #[test]
    fn stats_full_and_single() {
        let cloud = scene(500, 3);
        let full = sample_uniform(&cloud, 1.0, 0).unwrap();
        let st = inhomogeneity_stats(&cloud, &full).unwrap();
        assert_eq!(st.labeled_classes, 6);
        assert_eq!(st.class_histogram, cloud.class_counts().unwrap());

        let one = SparseLabels::from_indices(&cloud, vec![7]).unwrap();
        assert_eq!(inhomogeneity_stats(&cloud, &one).unwrap().mean_nn_distance, None);
    }

    #[test]
    fn samplers_are_deterministic() {
        let cloud = scene(3000, 3);
        let w = corner_decay_weights(&cloud, 3.0);
        assert_eq!(
            sample_clustered(&cloud, 0.05, 10, 4).unwrap(),
            sample_clustered(&cloud, 0.05, 10, 4).unwrap()
        );
        assert_eq!(
            sample_density_biased(&cloud, 0.05, &w, 4).unwrap(),
            sample_density_biased(&cloud, 0.05, &w, 4).unwrap()
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let cloud = scene(400, 3);
        let w = corner_decay_weights(&cloud, 3.0);
        let s = sample_density_biased(&cloud, 0.05, &w, 2).unwrap();
        let text = labels_to_text(&s, 6);
        let (back, c) = labels_from_text(&text, Path::new("l.txt")).unwrap();
        assert_eq!(c, 6);
        assert_eq!(back, s);
        back.validate(&cloud).unwrap();
        assert!(text.starts_with(&format!("{} 6\n", s.len())));
    }

    #[test]
    fn sidecar_reports_line() {
        let err = labels_from_text("2 3\n0 1\n4 9\n", Path::new("l.txt")).unwrap_err();
        assert!(err.to_string().contains("l.txt:3"), "{err}");
    }
}
