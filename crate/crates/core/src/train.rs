//! Training loop with asynchronous entropy calibration, the ablation
//! variants, and segmentation metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotate::SparseLabels;
use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::knn::local_counts;
use crate::lads::{default_k, downsample_on_grid, Strategy};
use crate::nn::{
    backward_input, entropy, forward_input, loss_on_prediction, normalize_mean_one,
    Architecture, LossSpec, ModelInput, ModelParams, Prediction, Targets, DEFAULT_K_NN,
};
use crate::seed;
use crate::voxel::{voxelize, DEFAULT_VOXEL_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Before the asynchronous schedule starts: plain partial CE.
    Warmup,
    /// Partial CE plus `λ·Ent`, entropy differentiated.
    EntropyPhase,
    /// Entropy-weighted partial CE, weights detached.
    CalibratedPhase,
    /// Variants without a schedule use one loss throughout.
    Constant,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::EntropyPhase => "entropy",
            Phase::CalibratedPhase => "calibrated",
            Phase::Constant => "constant",
        })
    }
}

/// Phase of epoch `k`: warm-up before `start_epoch`, then blocks of `τ`
/// entropy epochs alternating with `τ` calibrated epochs, counted from
/// `start_epoch`.
pub fn schedule(epoch: usize, tau: usize, start_epoch: usize) -> Phase {
    if epoch < start_epoch {
        return Phase::Warmup;
    }
    let tau = tau.max(1);
    if (epoch - start_epoch) % (2 * tau) < tau {
        Phase::EntropyPhase
    } else {
        Phase::CalibratedPhase
    }
}

/// Loss for an asynchronous-training phase.
pub fn aad_loss_spec(phase: Phase, lambda: f64) -> LossSpec {
    match phase {
        Phase::Warmup | Phase::Constant => LossSpec::cross_entropy(),
        Phase::EntropyPhase => LossSpec::entropy_regularized(lambda),
        Phase::CalibratedPhase => LossSpec::entropy_weighted(true),
    }
}

/// Value of the asynchronous loss over the annotated points of `pred`.
pub fn loss_aad(pred: &Prediction, sparse: &SparseLabels, phase: Phase, lambda: f64) -> Result<f64> {
    if sparse.is_empty() {
        return Err(Error::invalid("asynchronous loss needs at least one annotated point"));
    }
    loss_on_prediction(pred, &Targets::sparse(sparse), &aad_loss_spec(phase, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain partial CE.
    Baseline,
    /// Partial CE weighted by inverse local point density, every epoch.
    FixedW,
    /// `ℓ + λ·Ent` with the entropy differentiated, every epoch.
    Ade,
    /// `φ·ℓ + λ·Ent` in the same epoch, every epoch.
    MdeSt,
    /// Alternating entropy / calibrated blocks after a warm-up.
    MdeAt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::FixedW,
        Variant::Ade,
        Variant::MdeSt,
        Variant::MdeAt,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::FixedW => "fixed_w",
            Variant::Ade => "ade",
            Variant::MdeSt => "mde_st",
            Variant::MdeAt => "mde_at",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Entropy-loss weight.
    pub lambda: f64,
    /// Asynchronous block length in epochs.
    pub tau: usize,
    pub start_epoch: usize,
    pub variant: Variant,
    pub downsample: Strategy,
    /// Voxels kept per scene and epoch; `None` means `⌈0.25·|V|⌉`.
    pub k: Option<usize>,
    pub voxel_size: f64,
    pub seed: u64,
    pub hidden: usize,
    pub k_nn: usize,
    /// Radius for the inverse-local-density weights of `fixed_w`.
    pub fixed_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.1,
            lambda: 0.01,
            tau: 5,
            start_epoch: 50,
            variant: Variant::MdeAt,
            downsample: Strategy::Lr,
            k: None,
            voxel_size: DEFAULT_VOXEL_SIZE,
            seed: 0,
            hidden: 32,
            k_nn: DEFAULT_K_NN,
            fixed_radius: 2.0 * DEFAULT_VOXEL_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("K must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }

    pub fn phase(&self, epoch: usize) -> Phase {
        match self.variant {
            Variant::MdeAt => schedule(epoch, self.tau, self.start_epoch),
            _ => Phase::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Plain partial CE over the labelled points of the epoch's batches,
    /// averaged over scenes, before the update.
    pub pce: f64,
    /// Mean entropy over the same points.
    pub ent: f64,
    /// Labelled points that survived downsampling this epoch.
    pub labeled: usize,
    /// mIoU on the evaluation cloud after the epoch's updates.
    pub miou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,phase,pce,ent,miou`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,pce,ent,miou\n");
        for r in &self.records {
            writeln!(out, "{},{},{:e},{:e},{:e}", r.epoch, r.phase, r.pce, r.ent, r.miou).unwrap();
        }
        out
    }
}

/// Per-scene state reused across epochs.
struct SceneState<'a> {
    cloud: &'a PointCloud,
    grid: crate::voxel::VoxelGrid,
    mask: Vec<bool>,
    classes: Vec<u32>,
    k: usize,
    density_weight: Option<Vec<f64>>,
}

/// Trains on `(cloud, sparse)` pairs and evaluates on a densely labelled
/// cloud after every epoch. Each epoch visits the scenes in order; every
/// scene is downsampled with a fresh seed, forwarded, and contributes one
/// gradient-descent step.
pub fn train(
    clouds: &[PointCloud],
    sparse: &[SparseLabels],
    eval: &PointCloud,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if clouds.is_empty() || clouds.len() != sparse.len() {
        return Err(Error::invalid(
            "need a non-empty training set with one label set per cloud",
        ));
    }
    let first = &clouds[0];
    let arch = Architecture {
        feature_dim: first.feature_dim(),
        hidden: config.hidden,
        classes: first.num_classes(),
        k_nn: config.k_nn,
    };
    for (c, s) in clouds.iter().zip(sparse) {
        if c.feature_dim() != arch.feature_dim || c.num_classes() != arch.classes {
            return Err(Error::Shape("training clouds disagree on F or C".into()));
        }
        s.validate(c)?;
    }
    if eval.feature_dim() != arch.feature_dim || eval.num_classes() != arch.classes {
        return Err(Error::Shape("evaluation cloud disagrees on F or C".into()));
    }
    eval.require_labels()?;

    let mut params = ModelParams::init(arch, seed::derive(config.seed, &[0x7A_11]));
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((params, history));
    }

    let mut scenes = Vec::with_capacity(clouds.len());
    for (cloud, labels) in clouds.iter().zip(sparse) {
        let grid = voxelize(cloud, config.voxel_size)?;
        let k = config.k.unwrap_or_else(|| default_k(&grid));
        let density_weight = (config.variant == Variant::FixedW).then(|| {
            local_counts(cloud.positions(), config.fixed_radius)
                .into_iter()
                .map(|c| 1.0 / c as f64)
                .collect()
        });
        scenes.push(SceneState {
            cloud,
            grid,
            mask: labels.mask(cloud.len()),
            classes: cloud.require_labels()?.to_vec(),
            k,
            density_weight,
        });
    }
    let eval_input = ModelInput::prepare(eval, config.k_nn);

    for epoch in 0..config.epochs {
        let phase = config.phase(epoch);
        let mut pce_sum = 0.0;
        let mut ent_sum = 0.0;
        let mut labeled = 0;
        let mut contributing = 0;
        for (s, scene) in scenes.iter().enumerate() {
            let ds_seed = seed::derive(config.seed, &[0xE0_C4, epoch as u64, s as u64]);
            let ds = downsample_on_grid(&scene.grid, &scene.mask, scene.k, ds_seed, config.downsample)?;
            let local: Vec<usize> = (0..ds.point_indices.len())
                .filter(|&j| ds.labeled_mask[j])
                .collect();
            if local.is_empty() {
                continue;
            }
            let sub = scene.cloud.subset(&ds.point_indices)?;
            let input = ModelInput::prepare(&sub, config.k_nn);
            let targets = Targets {
                classes: local
                    .iter()
                    .map(|&j| scene.classes[ds.point_indices[j]])
                    .collect(),
                points: local.clone(),
            };
            let spec = match config.variant {
                Variant::Baseline => LossSpec::cross_entropy(),
                Variant::FixedW => {
                    let dw = scene.density_weight.as_ref().expect("built for fixed_w");
                    let mut w: Vec<f64> = local.iter().map(|&j| dw[ds.point_indices[j]]).collect();
                    normalize_mean_one(&mut w);
                    LossSpec::fixed(w)
                }
                Variant::Ade => LossSpec::entropy_regularized(config.lambda),
                Variant::MdeSt => LossSpec {
                    entropy_lambda: config.lambda,
                    ..LossSpec::entropy_weighted(true)
                },
                Variant::MdeAt => aad_loss_spec(phase, config.lambda),
            };

            let pred = forward_input(&params, &input)?;
            let plain = loss_on_prediction(&pred, &targets, &LossSpec::cross_entropy())?;
            let ents = entropy(&pred);
            let (value, grad) = backward_input(&params, &input, &targets, &spec)?;
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, scene {s} ({} variant)",
                    config.variant
                )));
            }
            params.descend(&grad, config.learning_rate);
            if params.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after epoch {epoch}, scene {s}"
                )));
            }
            pce_sum += plain;
            ent_sum += local.iter().map(|&j| ents[j]).sum::<f64>() / local.len() as f64;
            labeled += local.len();
            contributing += 1;
        }
        let report = evaluate_input(&params, &eval_input)?;
        let denom = contributing.max(1) as f64;
        history.records.push(EpochRecord {
            epoch,
            phase,
            pce: if contributing == 0 { f64::NAN } else { pce_sum / denom },
            ent: if contributing == 0 { f64::NAN } else { ent_sum / denom },
            labeled,
            miou: report.miou,
        });
    }
    Ok((params, history))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// `None` for classes absent from both labels and predictions.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub mean_entropy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub point_entropy: Vec<f64>,
}

impl EvalReport {
    /// `class,iou` rows (empty IoU for excluded classes), then a `miou` and a
    /// `mean_entropy` row.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => writeln!(out, "{c},{v:e}").unwrap(),
                None => writeln!(out, "{c},").unwrap(),
            }
        }
        writeln!(out, "miou,{:e}", self.miou).unwrap();
        writeln!(out, "mean_entropy,{:e}", self.mean_entropy).unwrap();
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    /// `index,entropy`.
    pub fn entropy_csv(&self) -> String {
        let mut out = String::from("index,entropy\n");
        for (i, e) in self.point_entropy.iter().enumerate() {
            writeln!(out, "{i},{e:e}").unwrap();
        }
        out
    }
}

pub fn confusion_matrix(truth: &[u32], predicted: &[u32], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t as usize][p as usize] += 1;
    }
    m
}

/// `IoU_c = TP / (TP + FP + FN)`, with `0/0` classes excluded from the mean.
pub fn iou_from_confusion(confusion: &[Vec<u64>]) -> (Vec<Option<f64>>, f64) {
    let c = confusion.len();
    let mut ious = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion[k][k];
        let fn_: u64 = confusion[k].iter().sum::<u64>() - tp;
        let fp: u64 = (0..c).map(|r| confusion[r][k]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        ious.push((denom > 0).then(|| tp as f64 / denom as f64));
    }
    let included: Vec<f64> = ious.iter().flatten().copied().collect();
    let miou = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    (ious, miou)
}

pub fn evaluate_prediction(pred: &Prediction, truth: &[u32]) -> Result<EvalReport> {
    if truth.len() != pred.len() {
        return Err(Error::Shape("labels length != prediction rows".into()));
    }
    let classes = pred.num_classes();
    if truth.iter().any(|&t| t as usize >= classes) {
        return Err(Error::invalid("label out of range"));
    }
    let predicted: Vec<u32> = (0..pred.len()).map(|i| pred.argmax(i)).collect();
    let confusion = confusion_matrix(truth, &predicted, classes);
    let (per_class_iou, miou) = iou_from_confusion(&confusion);
    let point_entropy = entropy(pred);
    let mean_entropy = point_entropy.iter().sum::<f64>() / point_entropy.len().max(1) as f64;
    Ok(EvalReport {
        per_class_iou,
        miou,
        mean_entropy,
        confusion,
        point_entropy,
    })
}

pub fn evaluate_input(params: &ModelParams, input: &ModelInput) -> Result<EvalReport> {
    let truth = input
        .labels()
        .ok_or_else(|| Error::invalid("evaluation needs dense labels"))?;
    evaluate_prediction(&forward_input(params, input)?, truth)
}

pub fn evaluate(params: &ModelParams, cloud: &PointCloud) -> Result<EvalReport> {
    cloud.require_labels()?;
    if cloud.feature_dim() != params.arch().feature_dim {
        return Err(Error::Shape("cloud/model feature dimension mismatch".into()));
    }
    evaluate_input(params, &ModelInput::prepare(cloud, params.arch().k_nn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::sample_uniform;
    use crate::data::{generate_scene, SceneSpec};

    #[test]
    fn schedule_examples() {
        assert_eq!(schedule(3, 5, 50), Phase::Warmup);
        assert_eq!(schedule(52, 5, 50), Phase::EntropyPhase);
        assert_eq!(schedule(57, 5, 50), Phase::CalibratedPhase);
        assert_eq!(schedule(60, 5, 50), Phase::EntropyPhase);
    }

    #[test]
    fn perfect_and_constant_predictions() {
        let truth = [0u32, 1, 1, 0];
        let conf = confusion_matrix(&truth, &truth, 2);
        assert_eq!(conf, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(iou_from_confusion(&conf).1, 1.0);

        let conf = confusion_matrix(&truth, &[0, 0, 0, 0], 2);
        let (ious, miou) = iou_from_confusion(&conf);
        assert_eq!(ious, vec![Some(0.5), Some(0.0)]);
        assert_eq!(miou, 0.25);
    }

    #[test]
    fn absent_class_is_excluded() {
        let conf = confusion_matrix(&[0, 1], &[0, 1], 3);
        let (ious, miou) = iou_from_confusion(&conf);
        assert_eq!(ious[2], None);
        assert_eq!(miou, 1.0);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let cloud = generate_scene(&SceneSpec {
            num_points: 400,
            ..SceneSpec::default()
        })
        .unwrap();
        let sparse = sample_uniform(&cloud, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (p, h) = train(&[cloud.clone()], &[sparse], &cloud, &cfg).unwrap();
        let arch = p.arch();
        assert_eq!(p, ModelParams::init(arch, seed::derive(cfg.seed, &[0x7A_11])));
        assert!(h.records.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let cloud = generate_scene(&SceneSpec {
            num_points: 600,
            ..SceneSpec::default()
        })
        .unwrap();
        let sparse = sample_uniform(&cloud, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e200,
            variant: Variant::Baseline,
            ..TrainConfig::default()
        };
        let err = train(&[cloud.clone()], &[sparse], &cloud, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }
}
