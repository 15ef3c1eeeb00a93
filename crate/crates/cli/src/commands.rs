use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sparseseg::annotate::{
    corner_decay_weights, labels_from_text, labels_to_text, normalize_weights, sample_clustered,
    sample_density_biased, sample_uniform, SparseLabels,
};
use sparseseg::data::{cloud_to_bytes, cloud_to_text, load_cloud, CloudFormat, PointCloud, SceneSpec, TextSchema};
use sparseseg::experiment::{bench_csv, run_bench, AblationConfig, BenchGrid, Clusters};
use sparseseg::gradlab::{Calibration, GradLab, GradSampler, DEFAULT_FIXED_RADIUS};
use sparseseg::lads::{default_k, downsample_on_grid, Strategy};
use sparseseg::nn::{params_from_bytes, params_to_bytes, Architecture, ModelParams, DEFAULT_K_NN};
use sparseseg::train::{evaluate, train, TrainConfig, Variant};
use sparseseg::voxel::{voxelize, DEFAULT_VOXEL_SIZE};
use sparseseg::{data, Error, Result};

use crate::manifest::Outputs;

fn to_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Column layout for header-less text clouds.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SchemaArgs {
    /// Feature columns in a header-less text cloud.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Class count of a header-less text cloud; implies a trailing label
    /// column.
    #[arg(long)]
    pub num_classes: Option<usize>,
}

impl SchemaArgs {
    fn load(&self, path: &Path) -> Result<PointCloud> {
        let schema = self.feature_dim.map(|f| TextSchema {
            feature_dim: f,
            has_labels: self.num_classes.is_some(),
            num_classes: self.num_classes,
        });
        load_cloud(path, CloudFormat::from_path(path)?, schema)
    }
}

fn load_labels(path: &Path, cloud: &PointCloud) -> Result<SparseLabels> {
    let (sparse, classes) = labels_from_text(&read_text(path)?, path)?;
    if classes != cloud.num_classes() {
        return Err(Error::Format {
            path: path.to_owned(),
            message: format!("label file has C={classes}, cloud has C={}", cloud.num_classes()),
        });
    }
    sparse.validate(cloud)?;
    Ok(sparse)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Txt,
    Bin,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10_000)]
    pub points: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Room size in meters, `x,y,z`.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 0.6])]
    pub extent: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub objects_per_class: usize,
    #[arg(long, default_value_t = 0.002)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FileFormat::Txt)]
    pub format: FileFormat,
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

pub fn gen(args: &GenArgs, out: &Path) -> Result<()> {
    if args.count == 0 {
        return Err(Error::InvalidArgument("--count must be positive".into()));
    }
    let mut outputs = Outputs::new();
    for i in 0..args.count {
        let spec = SceneSpec {
            num_points: args.points,
            num_classes: args.classes,
            room_extent: [args.extent[0], args.extent[1], args.extent[2]],
            objects_per_class: args.objects_per_class,
            noise_sigma: args.noise,
            seed: args.seed.wrapping_add(i as u64),
        };
        let cloud = data::generate_scene(&spec)?;
        let stem = if args.count == 1 {
            "scene".to_owned()
        } else {
            format!("scene_{i}")
        };
        match args.format {
            FileFormat::Txt => outputs.add(&format!("{stem}.txt"), cloud_to_text(&cloud)),
            FileFormat::Bin => outputs.add(&format!("{stem}.bin"), cloud_to_bytes(&cloud)),
        }
    }
    outputs.write(out, "gen", to_value(args), Some(args.seed), vec![])
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Label rate `M/N` in (0, 1].
    #[arg(long)]
    pub rate: f64,
    /// Cluster count `G`, or `M` for uniform labelling.
    #[arg(long = "G", conflicts_with_all = ["weights", "corner_decay"])]
    pub clusters: Option<String>,
    /// File of N non-negative sampling weights, one per line.
    #[arg(long, conflicts_with = "corner_decay")]
    pub weights: Option<PathBuf>,
    /// Sampling weights `exp(−decay·d/d_max)` from the scene's min corner.
    #[arg(long)]
    pub corner_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(default)]
    pub schema: SchemaArgs,
}

fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut w = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: format!("not a number: {line:?}"),
        })?;
        w.push(v);
    }
    Ok(w)
}

pub fn annotate(args: &AnnotateArgs, out: &Path) -> Result<()> {
    let cloud = args.schema.load(&args.cloud)?;
    let mut inputs = vec![args.cloud.clone()];
    let sparse = if let Some(path) = &args.weights {
        inputs.push(path.clone());
        sample_density_biased(&cloud, args.rate, &read_weights(path)?, args.seed)?
    } else if let Some(decay) = args.corner_decay {
        sample_density_biased(&cloud, args.rate, &corner_decay_weights(&cloud, decay), args.seed)?
    } else {
        match args.clusters.as_deref().map(str::parse::<Clusters>).transpose()? {
            None | Some(Clusters::All) => sample_uniform(&cloud, args.rate, args.seed)?,
            Some(Clusters::Count(g)) => sample_clustered(&cloud, args.rate, g, args.seed)?,
        }
    };
    let mut outputs = Outputs::new();
    outputs.add("labels.txt", labels_to_text(&sparse, cloud.num_classes()));
    outputs.write(out, "annotate", to_value(args), Some(args.seed), inputs)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = Strategy::Lr)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = DEFAULT_VOXEL_SIZE)]
    pub voxel_size: f64,
    /// Voxels to keep; defaults to a quarter of the occupied voxels.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(default)]
    pub schema: SchemaArgs,
}

pub fn downsample(args: &DownsampleArgs, out: &Path) -> Result<()> {
    let cloud = args.schema.load(&args.cloud)?;
    let sparse = load_labels(&args.labels, &cloud)?;
    let grid = voxelize(&cloud, args.voxel_size)?;
    let k = args.k.unwrap_or_else(|| default_k(&grid));
    let res = downsample_on_grid(&grid, &sparse.mask(cloud.len()), k, args.seed, args.strategy)?;
    let mut text = format!(
        "# strategy={} K={} voxels={} labeled={}\n",
        res.strategy,
        k,
        grid.len(),
        res.labeled_count()
    );
    for &i in &res.point_indices {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    let mut outputs = Outputs::new();
    outputs.add("indices.txt", text);
    outputs.write(
        out,
        "downsample",
        to_value(args),
        Some(args.seed),
        vec![args.cloud.clone(), args.labels.clone()],
    )
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SamplerArg {
    Uniform,
    DensityBiased,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradlabArgs {
    /// Densely labelled cloud.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Frozen parameters; without it a fresh initialisation is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplerArg::Uniform)]
    pub sampler: SamplerArg,
    /// Decay of the corner density used by the biased sampler.
    #[arg(long, default_value_t = 3.0)]
    pub corner_decay: f64,
    /// Weight file for the biased sampler, overriding the corner density.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Draw size.
    #[arg(long = "M", default_value_t = 64)]
    pub sample_size: usize,
    /// Number of repeated draws.
    #[arg(long = "R", default_value_t = 1000)]
    pub repeats: usize,
    /// none, ideal, mde, fixed_w or ade.
    #[arg(long, default_value = "none")]
    pub calibration: String,
    #[arg(long, default_value_t = DEFAULT_FIXED_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initialisation seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    pub params_seed: u64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_K_NN)]
    pub k_nn: usize,
    #[command(flatten)]
    #[serde(default)]
    pub schema: SchemaArgs,
}

fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    params_from_bytes(&bytes, path)
}

pub fn gradlab(args: &GradlabArgs, out: &Path) -> Result<()> {
    let cloud = args.schema.load(&args.cloud)?;
    let mut inputs = vec![args.cloud.clone()];
    let params = match &args.checkpoint {
        Some(p) => {
            inputs.push(p.clone());
            read_checkpoint(p)?
        }
        None => ModelParams::init(
            Architecture {
                feature_dim: cloud.feature_dim(),
                hidden: args.hidden,
                classes: cloud.num_classes(),
                k_nn: args.k_nn,
            },
            args.params_seed,
        ),
    };
    let mut calibration: Calibration = args.calibration.parse()?;
    if let Calibration::FixedW { radius } = &mut calibration {
        *radius = args.radius;
    }
    let sampler = match args.sampler {
        SamplerArg::Uniform => GradSampler::Uniform,
        SamplerArg::DensityBiased => {
            let w = match &args.weights {
                Some(p) => {
                    inputs.push(p.clone());
                    read_weights(p)?
                }
                None => corner_decay_weights(&cloud, args.corner_decay),
            };
            GradSampler::DensityBiased(normalize_weights(&w, cloud.len())?)
        }
    };
    let mut lab = GradLab::new(&params, &cloud)?;
    let report = lab.clt_experiment(&sampler, args.sample_size, args.repeats, args.seed, calibration)?;
    let mut outputs = Outputs::new();
    outputs.add("clt.csv", report.to_csv());
    outputs.write(out, "gradlab", to_value(args), Some(args.seed), inputs)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training cloud; repeat for several scenes.
    #[arg(long, required = true)]
    pub cloud: Vec<PathBuf>,
    /// Label sidecar for each `--cloud`, in the same order.
    #[arg(long, required = true)]
    pub labels: Vec<PathBuf>,
    /// Densely labelled evaluation cloud.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, default_value_t = Variant::MdeAt)]
    pub variant: Variant,
    #[arg(long, default_value_t = Strategy::Lr)]
    pub downsample: Strategy,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub tau: usize,
    #[arg(long, default_value_t = 50)]
    pub start_epoch: usize,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_VOXEL_SIZE)]
    pub voxel_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_K_NN)]
    pub k_nn: usize,
    #[command(flatten)]
    #[serde(default)]
    pub schema: SchemaArgs,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            lambda: self.lambda,
            tau: self.tau,
            start_epoch: self.start_epoch,
            variant: self.variant,
            downsample: self.downsample,
            k: self.k,
            voxel_size: self.voxel_size,
            seed: self.seed,
            hidden: self.hidden,
            k_nn: self.k_nn,
            ..TrainConfig::default()
        }
    }
}

pub fn train_cmd(args: &TrainArgs, out: &Path) -> Result<()> {
    if args.cloud.len() != args.labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} --cloud but {} --labels",
            args.cloud.len(),
            args.labels.len()
        )));
    }
    let mut clouds = Vec::new();
    let mut sparse = Vec::new();
    for (c, l) in args.cloud.iter().zip(&args.labels) {
        let cloud = args.schema.load(c)?;
        sparse.push(load_labels(l, &cloud)?);
        clouds.push(cloud);
    }
    let eval = args.schema.load(&args.eval)?;
    let (params, history) = train(&clouds, &sparse, &eval, &args.config())?;
    let mut outputs = Outputs::new();
    outputs.add("model.ckpt", params_to_bytes(&params));
    outputs.add("history.csv", history.to_csv());
    let mut inputs = args.cloud.clone();
    inputs.extend(args.labels.iter().cloned());
    inputs.push(args.eval.clone());
    outputs.write(out, "train", to_value(args), Some(args.seed), inputs)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Densely labelled cloud.
    #[arg(long)]
    pub cloud: PathBuf,
    #[command(flatten)]
    #[serde(default)]
    pub schema: SchemaArgs,
}

pub fn eval(args: &EvalArgs, out: &Path) -> Result<()> {
    let params = read_checkpoint(&args.checkpoint)?;
    let cloud = args.schema.load(&args.cloud)?;
    let report = evaluate(&params, &cloud)?;
    let mut outputs = Outputs::new();
    outputs.add("metrics.csv", report.metrics_csv());
    outputs.add("confusion.csv", report.confusion_csv());
    outputs.add("entropy.csv", report.entropy_csv());
    outputs.write(
        out,
        "eval",
        to_value(args),
        None,
        vec![args.checkpoint.clone(), args.cloud.clone()],
    )
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// `RATES:G` lists, e.g. `0.01,0.1:1,10,M`.
    #[arg(long, default_value = "0.0001,0.001,0.01,0.1:1,10,20,M")]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per generated scene.
    #[arg(long, default_value_t = 4000)]
    pub points: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 4)]
    pub scenes: usize,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 50)]
    pub start_epoch: usize,
}

fn parse_grid(spec: &str, seed: u64) -> Result<BenchGrid> {
    let (rates, gs) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("--grid must be RATES:G, got {spec:?}")))?;
    let rates = rates
        .split(',')
        .map(|r| {
            r.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad rate {r:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = gs
        .split(',')
        .map(|g| g.trim().parse::<Clusters>())
        .collect::<Result<Vec<_>>>()?;
    if rates.is_empty() || clusters.is_empty() {
        return Err(Error::InvalidArgument("empty --grid".into()));
    }
    Ok(BenchGrid {
        rates,
        clusters,
        seed,
    })
}

pub fn bench(args: &BenchArgs, out: &Path) -> Result<()> {
    let grid = parse_grid(&args.grid, args.seed)?;
    let config = AblationConfig {
        scene: SceneSpec {
            num_points: args.points,
            num_classes: args.classes,
            ..SceneSpec::default()
        },
        train_scenes: args.scenes,
        train: TrainConfig {
            epochs: args.epochs,
            learning_rate: args.lr,
            hidden: args.hidden,
            start_epoch: args.start_epoch,
            ..TrainConfig::default()
        },
    };
    let trials = run_bench(&config, &grid)?;
    let mut outputs = Outputs::new();
    outputs.add("bench.csv", bench_csv(&trials));
    outputs.write(out, "bench", to_value(args), Some(args.seed), vec![])
}
