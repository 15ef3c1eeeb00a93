//! Monte Carlo study of the sparse-label gradient as an `M`-sample estimate
//! of the fully supervised gradient.
//!
//! With frozen parameters every point has a fixed gradient `g_i`. The full
//! gradient is their plain mean; a sparse-label gradient is the mean over
//! `M` i.i.d. draws. Under uniform draws the deviation is centred on zero
//! with variance shrinking as `1/M`. Under a density `p′` it is centred on
//! `Δ = Σ_i (p′_i − 1/N) g_i`, unless a calibration weight cancels it.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::knn::local_counts;
use crate::nn::{
    backward_input, entropy, forward_input, normalize_mean_one, per_point_grads,
    per_point_grads_weighted, LossSpec, ModelInput, ModelParams, PointGradients, Targets,
};
use crate::seed;
use crate::voxel::DEFAULT_VOXEL_SIZE;

const DRAW_STREAM: u64 = 0xC17_0;

/// `fixed_w` radius when none is given: twice the default voxel edge.
pub const DEFAULT_FIXED_RADIUS: f64 = 2.0 * DEFAULT_VOXEL_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    DensityBiased,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::DensityBiased => "density_biased",
        })
    }
}

/// Where the i.i.d. draws come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GradSampler {
    Uniform,
    /// Probability vector `p′` over the points.
    DensityBiased(Vec<f64>),
}

impl GradSampler {
    pub fn kind(&self) -> SamplerKind {
        match self {
            GradSampler::Uniform => SamplerKind::Uniform,
            GradSampler::DensityBiased(_) => SamplerKind::DensityBiased,
        }
    }

    fn density(&self) -> Option<&[f64]> {
        match self {
            GradSampler::Uniform => None,
            GradSampler::DensityBiased(d) => Some(d),
        }
    }
}

/// Per-point weight applied to the drawn gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Calibration {
    None,
    /// `φ_i = p_i / p′_i` with `p_i = 1/N`.
    Ideal,
    /// `φ_i = Ent(ŷ_i)`, detached, rescaled to mean 1 over the draw.
    Mde,
    /// `φ_i ∝ 1 / (points within radius)`, rescaled to mean 1 over the draw.
    FixedW { radius: f64 },
    /// Gradient of `ℓ_i + Ent(ŷ_i)` with the entropy term differentiated.
    Ade,
}

impl Calibration {
    pub fn name(&self) -> &'static str {
        match self {
            Calibration::None => "none",
            Calibration::Ideal => "ideal",
            Calibration::Mde => "mde",
            Calibration::FixedW { .. } => "fixed_w",
            Calibration::Ade => "ade",
        }
    }
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Calibration::None),
            "ideal" => Ok(Calibration::Ideal),
            "mde" => Ok(Calibration::Mde),
            "fixed_w" | "fixedw" => Ok(Calibration::FixedW {
                radius: DEFAULT_FIXED_RADIUS,
            }),
            "ade" => Ok(Calibration::Ade),
            other => Err(Error::invalid(format!(
                "unknown calibration {other:?} (none, ideal, mde, fixed_w, ade)"
            ))),
        }
    }
}

/// Frozen-parameter view of one labelled cloud: per-point gradients plus the
/// per-point quantities the calibrations need. Auxiliary tables are built on
/// first use.
pub struct GradLab<'a> {
    params: &'a ModelParams,
    cloud: &'a PointCloud,
    input: ModelInput,
    labels: Vec<u32>,
    grads: PointGradients,
    full: Vec<f64>,
    entropy: Vec<f64>,
    ade_grads: Option<PointGradients>,
    counts: Option<(f64, Vec<usize>)>,
}

impl<'a> GradLab<'a> {
    pub fn new(params: &'a ModelParams, cloud: &'a PointCloud) -> Result<Self> {
        let labels = cloud.require_labels()?.to_vec();
        if cloud.feature_dim() != params.arch().feature_dim {
            return Err(Error::Shape("cloud/model feature dimension mismatch".into()));
        }
        let input = ModelInput::prepare(cloud, params.arch().k_nn);
        let grads = per_point_grads(params, &input, &labels)?;
        let full = mean_rows(&grads, 0..cloud.len());
        let entropy = entropy(&forward_input(params, &input)?);
        Ok(Self {
            params,
            cloud,
            input,
            labels,
            grads,
            full,
            entropy,
            ade_grads: None,
            counts: None,
        })
    }

    pub fn num_points(&self) -> usize {
        self.labels.len()
    }

    pub fn num_params(&self) -> usize {
        self.full.len()
    }

    /// `∇L = (1/N) Σ_i g_i`.
    pub fn gradient_full(&self) -> &[f64] {
        &self.full
    }

    pub fn point_gradients(&self) -> &PointGradients {
        &self.grads
    }

    /// Detached per-point entropies of the frozen model.
    pub fn entropies(&self) -> &[f64] {
        &self.entropy
    }

    /// Partial-CE gradient over a draw (repeats count), computed by a
    /// reverse-mode pass over the drawn points.
    pub fn gradient_partial(&self, draw: &[usize]) -> Result<Vec<f64>> {
        if draw.is_empty() {
            return Err(Error::invalid("empty draw"));
        }
        let targets = Targets::draws(draw, &self.labels);
        Ok(backward_input(self.params, &self.input, &targets, &LossSpec::cross_entropy())?.1)
    }

    /// `Δ = Σ_i (p′_i − 1/N) g_i`.
    pub fn analytic_delta(&self, density: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_points();
        check_density(density, n)?;
        let mut delta = vec![0.0; self.num_params()];
        let p = 1.0 / n as f64;
        for (i, &pd) in density.iter().enumerate() {
            let w = pd - p;
            if w != 0.0 {
                for (d, g) in delta.iter_mut().zip(self.grads.row(i)) {
                    *d += w * g;
                }
            }
        }
        Ok(delta)
    }

    fn ensure_aux(&mut self, calibration: Calibration) {
        match calibration {
            Calibration::Ade if self.ade_grads.is_none() => {
                self.ade_grads = Some(
                    per_point_grads_weighted(self.params, &self.input, &self.labels, 1.0, 1.0)
                        .expect("shapes checked in new"),
                );
            }
            Calibration::FixedW { radius } => {
                if self.counts.as_ref().is_none_or(|(r, _)| *r != radius) {
                    self.counts = Some((radius, local_counts(self.cloud.positions(), radius)));
                }
            }
            _ => {}
        }
    }

    /// Calibrated sparse gradient over a draw. `density` is required for the
    /// ideal calibration.
    pub fn calibrated_gradient(
        &mut self,
        draw: &[usize],
        calibration: Calibration,
        density: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        self.ensure_aux(calibration);
        self.calibrated_gradient_ready(draw, calibration, density)
    }

    fn calibrated_gradient_ready(
        &self,
        draw: &[usize],
        calibration: Calibration,
        density: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        if draw.is_empty() {
            return Err(Error::invalid("empty draw"));
        }
        let n = self.num_points();
        if draw.iter().any(|&i| i >= n) {
            return Err(Error::invalid("draw index out of range"));
        }
        let rows = match calibration {
            Calibration::Ade => self.ade_grads.as_ref().expect("prepared"),
            _ => &self.grads,
        };
        let weights: Vec<f64> = match calibration {
            Calibration::None | Calibration::Ade => vec![1.0; draw.len()],
            Calibration::Ideal => {
                let d = density.ok_or_else(|| {
                    Error::invalid("ideal calibration requires a known sampling density")
                })?;
                check_density(d, n)?;
                let p = 1.0 / n as f64;
                draw.iter()
                    .map(|&i| {
                        if d[i] > 0.0 {
                            Ok(p / d[i])
                        } else {
                            Err(Error::invalid(format!("p′ is zero at drawn point {i}")))
                        }
                    })
                    .collect::<Result<_>>()?
            }
            Calibration::Mde => {
                let mut w: Vec<f64> = draw.iter().map(|&i| self.entropy[i]).collect();
                normalize_mean_one(&mut w);
                w
            }
            Calibration::FixedW { .. } => {
                let (_, counts) = self.counts.as_ref().expect("prepared");
                let mut w: Vec<f64> = draw.iter().map(|&i| 1.0 / counts[i] as f64).collect();
                normalize_mean_one(&mut w);
                w
            }
        };
        let mut out = vec![0.0; self.num_params()];
        let inv = 1.0 / draw.len() as f64;
        for (&i, w) in draw.iter().zip(&weights) {
            let s = w * inv;
            for (o, g) in out.iter_mut().zip(rows.row(i)) {
                *o += s * g;
            }
        }
        Ok(out)
    }

    /// Runs `repeats` independent draws of `sample_size` i.i.d. points and
    /// summarises the deviation of the calibrated sparse gradient from `∇L`.
    /// Draw `r` uses its own stream derived from `(seed, r)`.
    pub fn clt_experiment(
        &mut self,
        sampler: &GradSampler,
        sample_size: usize,
        repeats: usize,
        seed: u64,
        calibration: Calibration,
    ) -> Result<CltReport> {
        if sample_size < 2 {
            return Err(Error::invalid("sample size M must be at least 2"));
        }
        if repeats < 30 {
            return Err(Error::invalid("repeats R must be at least 30"));
        }
        let n = self.num_points();
        let density = sampler.density();
        if let Some(d) = density {
            check_density(d, n)?;
        }
        let uniform = vec![1.0 / n as f64; n];
        let cal_density = density.unwrap_or(&uniform);
        let weighted = match density {
            Some(d) => Some(WeightedIndex::new(d).map_err(|e| Error::invalid(e.to_string()))?),
            None => None,
        };
        self.ensure_aux(calibration);

        let one_draw = |r: usize| -> Result<Vec<f64>> {
            let mut rng = seed::rng_at(seed, &[DRAW_STREAM, r as u64]);
            let draw: Vec<usize> = match &weighted {
                Some(w) => (0..sample_size).map(|_| w.sample(&mut rng)).collect(),
                None => (0..sample_size).map(|_| rng.random_range(0..n)).collect(),
            };
            let mut g = self.calibrated_gradient_ready(&draw, calibration, Some(cal_density))?;
            for (x, f) in g.iter_mut().zip(&self.full) {
                *x -= f;
            }
            Ok(g)
        };

        #[cfg(feature = "parallel")]
        let deviations: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            (0..repeats).into_par_iter().map(one_draw).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let deviations: Vec<Vec<f64>> = (0..repeats).map(one_draw).collect::<Result<_>>()?;

        // Welford, in draw order.
        let p = self.num_params();
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        for (k, dev) in deviations.iter().enumerate() {
            let cnt = (k + 1) as f64;
            for j in 0..p {
                let d = dev[j] - mean[j];
                mean[j] += d / cnt;
                m2[j] += d * (dev[j] - mean[j]);
            }
        }
        let empirical_variance: Vec<f64> = m2.iter().map(|v| v / (repeats - 1) as f64).collect();
        let se = empirical_variance
            .iter()
            .map(|v| (v / repeats as f64).sqrt())
            .collect();
        let analytic_delta = match density {
            Some(d) => self.analytic_delta(d)?,
            None => vec![0.0; p],
        };
        Ok(CltReport {
            repeats,
            sample_size,
            seed,
            sampler_kind: sampler.kind(),
            calibration,
            mean_deviation: mean,
            se,
            empirical_variance,
            analytic_delta,
        })
    }
}

fn check_density(density: &[f64], n: usize) -> Result<()> {
    if density.len() != n {
        return Err(Error::Shape(format!(
            "density length {} != N = {n}",
            density.len()
        )));
    }
    if density.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return Err(Error::invalid("density must be finite and non-negative"));
    }
    let s: f64 = density.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("density sums to {s}")));
    }
    Ok(())
}

fn mean_rows(g: &PointGradients, rows: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = vec![0.0; g.params];
    let count = rows.len() as f64;
    for i in rows {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// `p′ ∝ 1 / Ent(ŷ_i)`: points the frozen model is unsure about are rarely
/// annotated. Under this density the entropy calibration is proportional to
/// the ideal one.
pub fn inverse_entropy_density(entropies: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = entropies.iter().map(|e| 1.0 / e.max(1e-12)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub repeats: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub sampler_kind: SamplerKind,
    pub calibration: Calibration,
    /// Mean over draws of `∇L_p − ∇L`, per parameter component.
    pub mean_deviation: Vec<f64>,
    /// `sqrt(variance / R)`.
    pub se: Vec<f64>,
    /// Unbiased variance of the deviation over draws.
    pub empirical_variance: Vec<f64>,
    /// Analytic bias `Δ`; zero for the uniform sampler.
    pub analytic_delta: Vec<f64>,
}

impl CltReport {
    /// Fraction of components with `|mean − target| ≤ k·se` (plus a
    /// round-off allowance for components whose spread is zero).
    pub fn fraction_within(&self, target: &[f64], k: f64) -> f64 {
        let scale = self
            .mean_deviation
            .iter()
            .chain(target)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let ok = self
            .mean_deviation
            .iter()
            .zip(target)
            .zip(&self.se)
            .filter(|((m, t), s)| (*m - *t).abs() <= k * *s + 1e-12 * scale)
            .count();
        ok as f64 / self.mean_deviation.len() as f64
    }

    pub fn fraction_unbiased(&self, k: f64) -> f64 {
        self.fraction_within(&vec![0.0; self.mean_deviation.len()], k)
    }

    pub fn fraction_matching_delta(&self, k: f64) -> f64 {
        self.fraction_within(&self.analytic_delta, k)
    }

    pub fn mean_deviation_norm(&self) -> f64 {
        self.mean_deviation.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Header of `#` metadata lines, then
    /// `component_id,mean_dev,se,variance,analytic_delta`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# repeats={}", self.repeats).unwrap();
        writeln!(out, "# sample_size={}", self.sample_size).unwrap();
        writeln!(out, "# seed={}", self.seed).unwrap();
        writeln!(out, "# sampler={}", self.sampler_kind).unwrap();
        writeln!(out, "# calibration={}", self.calibration.name()).unwrap();
        if let Calibration::FixedW { radius } = self.calibration {
            writeln!(out, "# radius={radius}").unwrap();
        }
        writeln!(out, "component_id,mean_dev,se,variance,analytic_delta").unwrap();
        for j in 0..self.mean_deviation.len() {
            writeln!(
                out,
                "{j},{:e},{:e},{:e},{:e}",
                self.mean_deviation[j], self.se[j], self.empirical_variance[j], self.analytic_delta[j]
            )
            .unwrap();
        }
        out
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Median over components of `numerator / denominator`, skipping components
/// where the denominator is zero.
pub fn median_ratio(numerator: &[f64], denominator: &[f64]) -> f64 {
    let mut r: Vec<f64> = numerator
        .iter()
        .zip(denominator)
        .filter(|(_, d)| **d > 0.0)
        .map(|(n, d)| n / d)
        .collect();
    if r.is_empty() {
        return f64::NAN;
    }
    r.sort_by(f64::total_cmp);
    let m = r.len();
    if m % 2 == 1 {
        r[m / 2]
    } else {
        0.5 * (r[m / 2 - 1] + r[m / 2])
    }
}

// Free-function forms.

pub fn gradient_full(params: &ModelParams, cloud: &PointCloud) -> Result<Vec<f64>> {
    Ok(GradLab::new(params, cloud)?.gradient_full().to_vec())
}

pub fn gradient_partial(params: &ModelParams, cloud: &PointCloud, draw: &[usize]) -> Result<Vec<f64>> {
    GradLab::new(params, cloud)?.gradient_partial(draw)
}

pub fn analytic_delta(params: &ModelParams, cloud: &PointCloud, density: &[f64]) -> Result<Vec<f64>> {
    GradLab::new(params, cloud)?.analytic_delta(density)
}

pub fn calibrated_gradient(
    params: &ModelParams,
    cloud: &PointCloud,
    draw: &[usize],
    calibration: Calibration,
    density: Option<&[f64]>,
) -> Result<Vec<f64>> {
    GradLab::new(params, cloud)?.calibrated_gradient(draw, calibration, density)
}

pub fn clt_experiment(
    params: &ModelParams,
    cloud: &PointCloud,
    sampler: &GradSampler,
    sample_size: usize,
    repeats: usize,
    seed: u64,
    calibration: Calibration,
) -> Result<CltReport> {
    GradLab::new(params, cloud)?.clt_experiment(sampler, sample_size, repeats, seed, calibration)
}
