//! A small per-point classifier with exact reverse-mode gradients.
//!
//! Architecture: each point's feature vector is concatenated with the mean
//! feature of its `k_nn` nearest spatial neighbours, then passed through
//! `affine → softplus → affine → softplus → affine → softmax`.
//!
//! Parameters live in one flat `Vec<f64>` (see [`ModelParams`] for the
//! layout), and every gradient in the crate uses the same layout.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotate::SparseLabels;
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::knn::Neighborhood;
use crate::seed;

/// Spatial neighbours averaged into the input.
pub const DEFAULT_K_NN: usize = 8;
/// Probabilities are clamped here before taking the log in the CE loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub k_nn: usize,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        2 * self.feature_dim
    }

    pub fn param_count(&self) -> usize {
        let (i, h, c) = (self.input_dim(), self.hidden, self.classes);
        h * i + h + h * h + h + c * h + c
    }

    fn offsets(&self) -> Offsets {
        let (i, h, c) = (self.input_dim(), self.hidden, self.classes);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + c * h;
        debug_assert_eq!(b3 + c, self.param_count());
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

/// Flat layout: `W1 (H × 2F)`, `b1 (H)`, `W2 (H × H)`, `b2 (H)`, `W3 (C × H)`,
/// `b3 (C)`, matrices row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    /// Glorot-normal weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = seed::rng_at(seed, &[0x1E_17]);
        let o = arch.offsets();
        let (i, h, c) = (arch.input_dim(), arch.hidden, arch.classes);
        for (start, fan_in, fan_out) in [(o.w1, i, h), (o.w2, h, h), (o.w3, h, c)] {
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("positive sigma");
            for v in &mut p.values[start..start + fan_in * fan_out] {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{} parameter values for an architecture with {}",
                values.len(),
                arch.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat index of the final-layer bias for `class`.
    pub fn output_bias_index(&self, class: usize) -> usize {
        self.arch.offsets().b3 + class
    }

    /// `θ ← θ − lr · g`.
    pub fn descend(&mut self, grad: &[f64], learning_rate: f64) {
        for (p, g) in self.values.iter_mut().zip(grad) {
            *p -= learning_rate * g;
        }
    }
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

/// Network input for one cloud: `N × 2F`, each row the point's features
/// followed by the mean features of its spatial neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    labels: Option<Vec<u32>>,
}

impl ModelInput {
    pub fn prepare(cloud: &PointCloud, k_nn: usize) -> Self {
        let nb = Neighborhood::build(cloud.positions(), k_nn);
        Self::with_neighborhood(cloud, &nb)
    }

    pub fn with_neighborhood(cloud: &PointCloud, nb: &Neighborhood) -> Self {
        let f = cloud.feature_dim();
        let n = cloud.len();
        let mut data = Vec::with_capacity(n * 2 * f);
        let mut mean = vec![0.0; f];
        for i in 0..n {
            data.extend_from_slice(cloud.feature(i));
            mean.iter_mut().for_each(|m| *m = 0.0);
            let nbrs: &[usize] = if nb.k() == 0 { &[] } else { nb.neighbors(i) };
            if nbrs.is_empty() {
                mean.copy_from_slice(cloud.feature(i));
            } else {
                for &j in nbrs {
                    for (m, v) in mean.iter_mut().zip(cloud.feature(j)) {
                        *m += v;
                    }
                }
                let inv = 1.0 / nbrs.len() as f64;
                mean.iter_mut().for_each(|m| *m *= inv);
            }
            data.extend_from_slice(&mean);
        }
        Self {
            rows: n,
            dim: 2 * f,
            data,
            labels: cloud.gt_labels().map(<[u32]>::to_vec),
        }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        if self.dim != arch.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but the model expects {} (F = {})",
                self.dim,
                arch.input_dim(),
                arch.feature_dim
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    classes: usize,
    probs: Vec<f64>,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn logits(&self, i: usize) -> &[f64] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn log_probs(&self, i: usize) -> &[f64] {
        &self.log_probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Predicted class, lowest index on ties.
    pub fn argmax(&self, i: usize) -> u32 {
        let row = self.probs(i);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        best as u32
    }

    /// Builds a prediction directly from logits (row-major `N × C`).
    pub fn from_logits(classes: usize, logits: Vec<f64>) -> Self {
        let mut probs = vec![0.0; logits.len()];
        let mut log_probs = vec![0.0; logits.len()];
        for ((z, p), lp) in logits
            .chunks(classes)
            .zip(probs.chunks_mut(classes))
            .zip(log_probs.chunks_mut(classes))
        {
            log_softmax(z, lp);
            for (pc, lc) in p.iter_mut().zip(lp.iter()) {
                *pc = lc.exp();
            }
        }
        Self {
            classes,
            probs,
            logits,
            log_probs,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax(z: &[f64], out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// `out = W x + b` with `W` row-major `rows × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n..(r + 1) * n];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Activations of one point, kept for the backward pass.
struct Trace {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    z: Vec<f64>,
}

impl Trace {
    fn new(arch: &Architecture) -> Self {
        Self {
            a1: vec![0.0; arch.hidden],
            h1: vec![0.0; arch.hidden],
            a2: vec![0.0; arch.hidden],
            h2: vec![0.0; arch.hidden],
            z: vec![0.0; arch.classes],
        }
    }
}

fn forward_point(params: &ModelParams, x: &[f64], t: &mut Trace) {
    let arch = params.arch;
    let o = arch.offsets();
    let v = &params.values;
    let (i, h, c) = (arch.input_dim(), arch.hidden, arch.classes);
    affine(&v[o.w1..o.w1 + h * i], &v[o.b1..o.b1 + h], x, &mut t.a1);
    for (hv, av) in t.h1.iter_mut().zip(&t.a1) {
        *hv = softplus(*av);
    }
    affine(&v[o.w2..o.w2 + h * h], &v[o.b2..o.b2 + h], &t.h1, &mut t.a2);
    for (hv, av) in t.h2.iter_mut().zip(&t.a2) {
        *hv = softplus(*av);
    }
    affine(&v[o.w3..o.w3 + c * h], &v[o.b3..o.b3 + c], &t.h2, &mut t.z);
}

/// Accumulates `∂(dz · z)/∂θ` into `grad` for one point.
fn backward_point(params: &ModelParams, x: &[f64], t: &Trace, dz: &[f64], grad: &mut [f64]) {
    let arch = params.arch;
    let o = arch.offsets();
    let v = &params.values;
    let (ni, h, c) = (arch.input_dim(), arch.hidden, arch.classes);

    let mut dh2 = vec![0.0; h];
    for r in 0..c {
        let d = dz[r];
        if d == 0.0 {
            continue;
        }
        grad[o.b3 + r] += d;
        let gw = &mut grad[o.w3 + r * h..o.w3 + (r + 1) * h];
        for (g, hv) in gw.iter_mut().zip(&t.h2) {
            *g += d * hv;
        }
        let w = &v[o.w3 + r * h..o.w3 + (r + 1) * h];
        for (dh, wv) in dh2.iter_mut().zip(w) {
            *dh += d * wv;
        }
    }
    let da2: Vec<f64> = dh2.iter().zip(&t.a2).map(|(d, a)| d * sigmoid(*a)).collect();
    let mut dh1 = vec![0.0; h];
    for r in 0..h {
        let d = da2[r];
        grad[o.b2 + r] += d;
        let gw = &mut grad[o.w2 + r * h..o.w2 + (r + 1) * h];
        for (g, hv) in gw.iter_mut().zip(&t.h1) {
            *g += d * hv;
        }
        let w = &v[o.w2 + r * h..o.w2 + (r + 1) * h];
        for (dh, wv) in dh1.iter_mut().zip(w) {
            *dh += d * wv;
        }
    }
    for r in 0..h {
        let d = dh1[r] * sigmoid(t.a1[r]);
        grad[o.b1 + r] += d;
        let gw = &mut grad[o.w1 + r * ni..o.w1 + (r + 1) * ni];
        for (g, xv) in gw.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

pub fn forward_input(params: &ModelParams, input: &ModelInput) -> Result<Prediction> {
    input.check(&params.arch)?;
    let c = params.arch.classes;
    let mut logits = Vec::with_capacity(input.len() * c);
    let mut t = Trace::new(&params.arch);
    for i in 0..input.len() {
        forward_point(params, input.row(i), &mut t);
        logits.extend_from_slice(&t.z);
    }
    Ok(Prediction::from_logits(c, logits))
}

pub fn forward(params: &ModelParams, cloud: &PointCloud) -> Result<Prediction> {
    if cloud.feature_dim() != params.arch.feature_dim {
        return Err(Error::Shape(format!(
            "cloud has F = {}, model expects {}",
            cloud.feature_dim(),
            params.arch.feature_dim
        )));
    }
    forward_input(params, &ModelInput::prepare(cloud, params.arch.k_nn))
}

// ---------------------------------------------------------------------------
// Losses on predictions
// ---------------------------------------------------------------------------

/// `ℓ = −log max(ŷ_y, 1e-12)`.
pub fn point_cross_entropy(log_probs: &[f64], class: u32) -> f64 {
    -log_probs[class as usize].max(PROB_CLAMP.ln())
}

/// Shannon entropy of a probability row given its log-probabilities.
pub fn point_entropy(log_probs: &[f64]) -> f64 {
    let c = log_probs.len() as f64;
    let h: f64 = -log_probs
        .iter()
        .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
        .sum::<f64>();
    h.clamp(0.0, c.ln())
}

/// Mean cross-entropy over all points against dense labels.
pub fn cross_entropy(pred: &Prediction, labels: &[u32]) -> Result<f64> {
    if labels.len() != pred.len() {
        return Err(Error::Shape("labels length != prediction rows".into()));
    }
    if labels.iter().any(|&l| l as usize >= pred.num_classes()) {
        return Err(Error::invalid("label out of range"));
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| point_cross_entropy(pred.log_probs(i), l))
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy over the annotated points only.
pub fn partial_cross_entropy(pred: &Prediction, sparse: &SparseLabels) -> Result<f64> {
    if sparse.is_empty() {
        return Err(Error::invalid("no annotated points"));
    }
    if sparse.indices().iter().any(|&i| i >= pred.len()) {
        return Err(Error::invalid("annotated index beyond prediction rows"));
    }
    let total: f64 = sparse
        .indices()
        .iter()
        .zip(sparse.classes())
        .map(|(&i, &c)| point_cross_entropy(pred.log_probs(i), c))
        .sum();
    Ok(total / sparse.len() as f64)
}

/// Per-point entropy `−Σ_c ŷ_c log ŷ_c`, in `[0, ln C]`.
pub fn entropy(pred: &Prediction) -> Vec<f64> {
    (0..pred.len()).map(|i| point_entropy(pred.log_probs(i))).collect()
}

// ---------------------------------------------------------------------------
// Loss specifications and gradients
// ---------------------------------------------------------------------------

/// The points a loss is averaged over, with their classes. Repeats are
/// allowed and count with multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub points: Vec<usize>,
    pub classes: Vec<u32>,
}

impl Targets {
    pub fn dense(labels: &[u32]) -> Self {
        Self {
            points: (0..labels.len()).collect(),
            classes: labels.to_vec(),
        }
    }

    pub fn sparse(sparse: &SparseLabels) -> Self {
        Self {
            points: sparse.indices().to_vec(),
            classes: sparse.classes().to_vec(),
        }
    }

    /// Targets for a list of draws against dense labels.
    pub fn draws(draws: &[usize], labels: &[u32]) -> Self {
        Self {
            points: draws.to_vec(),
            classes: draws.iter().map(|&i| labels[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// How the per-point cross-entropy terms are weighted.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    Uniform,
    /// `φ_i = Ent(ŷ_i)`, treated as a constant. With `normalize` the weights
    /// are rescaled to mean 1 over the targets (uniform if they are all 0).
    Entropy { normalize: bool },
    /// Fixed per-target weights, aligned with [`Targets::points`].
    Fixed(Vec<f64>),
}

/// `L = (1/M) Σ_i [ w_i ℓ_i + λ Ent(ŷ_i) ]` over the targets, where the
/// entropy term is differentiated and the weights are not.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub weighting: Weighting,
    pub entropy_lambda: f64,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        Self {
            weighting: Weighting::Uniform,
            entropy_lambda: 0.0,
        }
    }

    pub fn entropy_weighted(normalize: bool) -> Self {
        Self {
            weighting: Weighting::Entropy { normalize },
            entropy_lambda: 0.0,
        }
    }

    pub fn entropy_regularized(lambda: f64) -> Self {
        Self {
            weighting: Weighting::Uniform,
            entropy_lambda: lambda,
        }
    }

    pub fn fixed(weights: Vec<f64>) -> Self {
        Self {
            weighting: Weighting::Fixed(weights),
            entropy_lambda: 0.0,
        }
    }
}

/// Resolves the per-target CE weights for a prediction.
pub fn resolve_weights(spec: &LossSpec, pred: &Prediction, targets: &Targets) -> Result<Vec<f64>> {
    let m = targets.len();
    match &spec.weighting {
        Weighting::Uniform => Ok(vec![1.0; m]),
        Weighting::Fixed(w) => {
            if w.len() != m {
                return Err(Error::Shape(format!(
                    "{} fixed weights for {m} targets",
                    w.len()
                )));
            }
            Ok(w.clone())
        }
        Weighting::Entropy { normalize } => {
            let mut w: Vec<f64> = targets
                .points
                .iter()
                .map(|&i| point_entropy(pred.log_probs(i)))
                .collect();
            if *normalize {
                normalize_mean_one(&mut w);
            }
            Ok(w)
        }
    }
}

/// Rescales to mean 1; an all-zero vector becomes all ones.
pub fn normalize_mean_one(w: &mut [f64]) {
    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
    if mean > 0.0 {
        w.iter_mut().for_each(|x| *x /= mean);
    } else {
        w.iter_mut().for_each(|x| *x = 1.0);
    }
}

/// `∂L/∂z` for one point: `w (ŷ − e_y) + λ ∂Ent/∂z`, where
/// `∂Ent/∂z_j = −ŷ_j (log ŷ_j + Ent)`. The CE part vanishes where the
/// probability clamp is active.
fn logit_grad(log_probs: &[f64], class: u32, ce_w: f64, ent_w: f64, out: &mut [f64]) {
    let ent = point_entropy(log_probs);
    let clamped = log_probs[class as usize] <= PROB_CLAMP.ln();
    for (j, (o, &lp)) in out.iter_mut().zip(log_probs).enumerate() {
        let p = lp.exp();
        let mut g = 0.0;
        if ce_w != 0.0 && !clamped {
            g += ce_w * (p - if j == class as usize { 1.0 } else { 0.0 });
        }
        if ent_w != 0.0 && p > 0.0 {
            g += ent_w * (-p * (lp + ent));
        }
        *o = g;
    }
}

fn check_targets(input: &ModelInput, targets: &Targets, classes: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid("loss over zero points"));
    }
    if targets.points.len() != targets.classes.len() {
        return Err(Error::Shape("targets points/classes mismatch".into()));
    }
    if targets.points.iter().any(|&i| i >= input.len()) {
        return Err(Error::invalid("target index beyond input rows"));
    }
    if targets.classes.iter().any(|&c| c as usize >= classes) {
        return Err(Error::invalid("target class out of range"));
    }
    Ok(())
}

/// Loss value and exact gradient for `spec` over `targets`.
pub fn backward_input(
    params: &ModelParams,
    input: &ModelInput,
    targets: &Targets,
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    input.check(&params.arch)?;
    check_targets(input, targets, params.arch.classes)?;
    let c = params.arch.classes;
    let m = targets.len() as f64;

    // Forward over the distinct target rows first so entropy weights can be
    // resolved before any gradient is accumulated.
    let mut t = Trace::new(&params.arch);
    let mut logits = Vec::with_capacity(targets.len() * c);
    for &i in &targets.points {
        forward_point(params, input.row(i), &mut t);
        logits.extend_from_slice(&t.z);
    }
    let local = Prediction::from_logits(c, logits);
    let local_targets = Targets {
        points: (0..targets.len()).collect(),
        classes: targets.classes.clone(),
    };
    let weights = resolve_weights(spec, &local, &local_targets)?;

    let mut grad = vec![0.0; params.len()];
    let mut dz = vec![0.0; c];
    let mut value = 0.0;
    for (k, (&i, &cls)) in targets.points.iter().zip(&targets.classes).enumerate() {
        let lp = local.log_probs(k);
        value += weights[k] * point_cross_entropy(lp, cls) + spec.entropy_lambda * point_entropy(lp);
        logit_grad(lp, cls, weights[k] / m, spec.entropy_lambda / m, &mut dz);
        forward_point(params, input.row(i), &mut t);
        backward_point(params, input.row(i), &t, &dz, &mut grad);
    }
    Ok((value / m, grad))
}

/// Loss value on an existing prediction (same semantics as
/// [`backward_input`]).
pub fn loss_on_prediction(pred: &Prediction, targets: &Targets, spec: &LossSpec) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("loss over zero points"));
    }
    if targets.points.iter().any(|&i| i >= pred.len()) {
        return Err(Error::invalid("target index beyond prediction rows"));
    }
    let weights = resolve_weights(spec, pred, targets)?;
    let total: f64 = targets
        .points
        .iter()
        .zip(&targets.classes)
        .zip(&weights)
        .map(|((&i, &c), w)| {
            let lp = pred.log_probs(i);
            w * point_cross_entropy(lp, c) + spec.entropy_lambda * point_entropy(lp)
        })
        .sum();
    Ok(total / targets.len() as f64)
}

/// Loss value only (same semantics as [`backward_input`]).
pub fn loss_input(
    params: &ModelParams,
    input: &ModelInput,
    targets: &Targets,
    spec: &LossSpec,
) -> Result<f64> {
    input.check(&params.arch)?;
    check_targets(input, targets, params.arch.classes)?;
    loss_on_prediction(&forward_input(params, input)?, targets, spec)
}

pub fn backward(
    params: &ModelParams,
    cloud: &PointCloud,
    targets: &Targets,
    spec: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    backward_input(params, &ModelInput::prepare(cloud, params.arch.k_nn), targets, spec)
}

/// Row-major `N × P` matrix of per-point gradients
/// `ce_weight · ∇ℓ(y_i, ŷ_i) + ent_weight · ∇Ent(ŷ_i)` for every point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGradients {
    pub points: usize,
    pub params: usize,
    pub data: Vec<f64>,
}

impl PointGradients {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.params..(i + 1) * self.params]
    }
}

pub fn per_point_grads_weighted(
    params: &ModelParams,
    input: &ModelInput,
    labels: &[u32],
    ce_weight: f64,
    ent_weight: f64,
) -> Result<PointGradients> {
    input.check(&params.arch)?;
    if labels.len() != input.len() {
        return Err(Error::Shape("labels length != input rows".into()));
    }
    let p = params.len();
    let c = params.arch.classes;
    let mut data = vec![0.0; input.len() * p];
    let compute = |i: usize, row: &mut [f64]| {
        let mut t = Trace::new(&params.arch);
        let mut lp = vec![0.0; c];
        let mut dz = vec![0.0; c];
        forward_point(params, input.row(i), &mut t);
        log_softmax(&t.z, &mut lp);
        logit_grad(&lp, labels[i], ce_weight, ent_weight, &mut dz);
        backward_point(params, input.row(i), &t, &dz, row);
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, row)| compute(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    for (i, row) in data.chunks_mut(p).enumerate() {
        compute(i, row);
    }
    Ok(PointGradients {
        points: input.len(),
        params: p,
        data,
    })
}

/// `g(ŷ_i) = ∇ℓ(y_i, ŷ_i)` for every point.
pub fn per_point_grads(
    params: &ModelParams,
    input: &ModelInput,
    labels: &[u32],
) -> Result<PointGradients> {
    per_point_grads_weighted(params, input, labels, 1.0, 0.0)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"SSEGCKPT";
const CKPT_VERSION: u32 = 1;

/// Magic, u32 version, u32 F, u32 H, u32 C, u32 k_nn, u64 P, then `P`
/// little-endian f64 values.
pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    let a = params.arch;
    let mut out = Vec::with_capacity(36 + 8 * params.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    for v in [a.feature_dim, a.hidden, a.classes, a.k_nn] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn params_from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let bad = |m: String| Error::Format {
        path: path.to_owned(),
        message: m,
    };
    if bytes.len() < 36 || &bytes[..8] != CKPT_MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(8) != CKPT_VERSION as usize {
        return Err(bad(format!("unsupported checkpoint version {}", u32_at(8))));
    }
    let arch = Architecture {
        feature_dim: u32_at(12),
        hidden: u32_at(16),
        classes: u32_at(20),
        k_nn: u32_at(24),
    };
    let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
    if count != arch.param_count() || bytes.len() != 36 + 8 * count {
        return Err(bad("checkpoint length does not match its header".into()));
    }
    let values = bytes[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_values(arch, values)
}
