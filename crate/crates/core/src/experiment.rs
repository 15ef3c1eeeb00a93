//! Paired ablation runs over annotation settings: the same scenes and the
//! same sparse labels feed every variant being compared.

use std::fmt::Write as _;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{annotation_budget, sample_clustered, sample_uniform, SparseLabels};
use crate::data::{generate_scene, PointCloud, SceneSpec};
use crate::error::{Error, Result};
use crate::lads::Strategy;
use crate::seed;
use crate::train::{evaluate, train, TrainConfig, Variant};

/// Number of annotation clusters; `All` means `G = M` (uniform labelling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clusters {
    Count(usize),
    All,
}

impl Clusters {
    /// Effective `G` for a budget of `m` labels. Requests above `m` are
    /// clamped, since a cluster needs at least one point.
    pub fn resolve(self, m: usize) -> usize {
        match self {
            Clusters::Count(g) => g.clamp(1, m),
            Clusters::All => m,
        }
    }

    fn key(self) -> u64 {
        match self {
            Clusters::Count(g) => g as u64,
            Clusters::All => u64::MAX,
        }
    }
}

impl std::fmt::Display for Clusters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Clusters::Count(g) => write!(f, "{g}"),
            Clusters::All => f.write_str("M"),
        }
    }
}

impl std::str::FromStr for Clusters {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("m") || s == "all" {
            return Ok(Clusters::All);
        }
        match s.parse::<usize>() {
            Ok(g) if g > 0 => Ok(Clusters::Count(g)),
            _ => Err(Error::invalid(format!("cluster count must be a positive integer or M, got {s:?}"))),
        }
    }
}

/// A model configuration under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub variant: Variant,
    pub downsample: Strategy,
}

impl Arm {
    pub const BASELINE: Arm = Arm {
        variant: Variant::Baseline,
        downsample: Strategy::Rr,
    };
    pub const MDE_AT: Arm = Arm {
        variant: Variant::MdeAt,
        downsample: Strategy::Lr,
    };
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}", self.variant, self.downsample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Template for every generated scene; its seed is replaced per scene.
    pub scene: SceneSpec,
    pub train_scenes: usize,
    /// Training hyper-parameters; variant, downsampler and seed are set per
    /// run.
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec {
                num_points: 4000,
                ..SceneSpec::default()
            },
            train_scenes: 4,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub miou: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub rate: f64,
    pub clusters: Clusters,
    /// Labels per training scene.
    pub budget: usize,
    pub effective_clusters: usize,
    pub arms: Vec<ArmOutcome>,
}

impl TrialOutcome {
    pub fn arm(&self, arm: Arm) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Training scenes, their annotations and a held-out scene for one trial.
pub struct TrialData {
    pub train: Vec<PointCloud>,
    pub labels: Vec<SparseLabels>,
    pub eval: PointCloud,
    pub budget: usize,
    pub effective_clusters: usize,
}

pub fn trial_data(config: &AblationConfig, rate: f64, clusters: Clusters, seed: u64) -> Result<TrialData> {
    if config.train_scenes == 0 {
        return Err(Error::invalid("need at least one training scene"));
    }
    let scene = |tag: u64, i: u64| {
        generate_scene(&SceneSpec {
            seed: seed::derive(seed, &[tag, i]),
            ..config.scene.clone()
        })
    };
    let budget = annotation_budget(config.scene.num_points, rate)?;
    let g = clusters.resolve(budget);
    let mut train = Vec::with_capacity(config.train_scenes);
    let mut labels = Vec::with_capacity(config.train_scenes);
    for i in 0..config.train_scenes as u64 {
        let cloud = scene(0x5CE4, i)?;
        let label_seed = seed::derive(seed, &[0x1AB, i]);
        let sparse = if g == budget {
            sample_uniform(&cloud, rate, label_seed)?
        } else {
            sample_clustered(&cloud, rate, g, label_seed)?
        };
        train.push(cloud);
        labels.push(sparse);
    }
    Ok(TrialData {
        train,
        labels,
        eval: scene(0xE7A1, 0)?,
        budget,
        effective_clusters: g,
    })
}

/// Trains every arm on the same trial data and evaluates on the held-out
/// scene.
pub fn run_trial(
    config: &AblationConfig,
    rate: f64,
    clusters: Clusters,
    seed: u64,
    arms: &[Arm],
) -> Result<TrialOutcome> {
    let data = trial_data(config, rate, clusters, seed)?;
    let run = |arm: &Arm| -> Result<ArmOutcome> {
        let cfg = TrainConfig {
            variant: arm.variant,
            downsample: arm.downsample,
            seed: seed::derive(seed, &[0x7EA1]),
            ..config.train.clone()
        };
        let (params, _) = train(&data.train, &data.labels, &data.eval, &cfg)?;
        let report = evaluate(&params, &data.eval)?;
        Ok(ArmOutcome {
            arm: *arm,
            miou: report.miou,
            mean_entropy: report.mean_entropy,
        })
    };
    #[cfg(feature = "parallel")]
    let arms_out: Result<Vec<_>> = arms.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let arms_out: Result<Vec<_>> = arms.iter().map(run).collect();
    Ok(TrialOutcome {
        seed,
        rate,
        clusters,
        budget: data.budget,
        effective_clusters: data.effective_clusters,
        arms: arms_out?,
    })
}

/// Mean of `mde_at` minus `baseline` over trials, for mIoU and entropy.
pub fn mean_advantage(trials: &[TrialOutcome]) -> Option<(f64, f64)> {
    if trials.is_empty() {
        return None;
    }
    let mut miou = 0.0;
    let mut ent = 0.0;
    for t in trials {
        let b = t.arm(Arm::BASELINE)?;
        let m = t.arm(Arm::MDE_AT)?;
        miou += m.miou - b.miou;
        ent += m.mean_entropy - b.mean_entropy;
    }
    let n = trials.len() as f64;
    Some((miou / n, ent / n))
}

// ---------------------------------------------------------------------------
// Rate × G sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub rates: Vec<f64>,
    pub clusters: Vec<Clusters>,
    pub seed: u64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            rates: vec![0.0001, 0.001, 0.01, 0.1],
            clusters: vec![
                Clusters::Count(1),
                Clusters::Count(10),
                Clusters::Count(20),
                Clusters::All,
            ],
            seed: 0,
        }
    }
}

impl BenchGrid {
    /// Seed of one cell, a hash of the base seed, the rate and `G`.
    pub fn cell_seed(&self, rate: f64, clusters: Clusters) -> u64 {
        seed::derive(self.seed, &[rate.to_bits(), clusters.key()])
    }
}

/// One paired `baseline+rr` / `mde_at+lr` trial per `(rate, G)` cell, in
/// row-major order over rates then cluster counts.
pub fn run_bench(config: &AblationConfig, grid: &BenchGrid) -> Result<Vec<TrialOutcome>> {
    let cells: Vec<(f64, Clusters)> = grid
        .rates
        .iter()
        .flat_map(|&r| grid.clusters.iter().map(move |&g| (r, g)))
        .collect();
    let arms = [Arm::BASELINE, Arm::MDE_AT];
    let run = |&(rate, g): &(f64, Clusters)| run_trial(config, rate, g, grid.cell_seed(rate, g), &arms);
    #[cfg(feature = "parallel")]
    let out = cells.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let out = cells.iter().map(run).collect();
    out
}

/// `rate,G,M,G_effective,seed,baseline_miou,mde_at_miou,baseline_entropy,mde_at_entropy`.
pub fn bench_csv(trials: &[TrialOutcome]) -> String {
    let mut out = String::from(
        "rate,G,M,G_effective,seed,baseline_miou,mde_at_miou,baseline_entropy,mde_at_entropy\n",
    );
    for t in trials {
        let b = t.arm(Arm::BASELINE);
        let m = t.arm(Arm::MDE_AT);
        let f = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.rate,
            t.clusters,
            t.budget,
            t.effective_clusters,
            t.seed,
            f(b.map(|a| a.miou)),
            f(m.map(|a| a.miou)),
            f(b.map(|a| a.mean_entropy)),
            f(m.map(|a| a.mean_entropy)),
        )
        .unwrap();
    }
    out
}
