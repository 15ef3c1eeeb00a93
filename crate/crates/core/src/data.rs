//! Scene representation, deterministic synthetic scenes and cloud file I/O.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotate::SparseLabels;
use crate::error::{Error, Result};
use crate::seed;

/// Number of synthetic colour channels appended after the xyz copy.
pub const COLOR_CHANNELS: usize = 3;
/// Feature dimension of generated scenes: xyz copy plus colour.
pub const SCENE_FEATURE_DIM: usize = 3 + COLOR_CHANNELS;
/// Ratio between the largest and the smallest class in a generated scene.
pub const CLASS_IMBALANCE: f64 = 4.0;
/// Standard deviation of the per-point colour noise.
pub const COLOR_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Vec<f64>,
    feature_dim: usize,
    gt_labels: Option<Vec<u32>>,
    num_classes: usize,
}

impl PointCloud {
    /// Builds a cloud, checking every invariant. `features` is row-major
    /// `N × feature_dim`.
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Vec<f64>,
        feature_dim: usize,
        gt_labels: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if features.len() != n * feature_dim {
            return Err(Error::Shape(format!(
                "features length {} != N·F = {}·{}",
                features.len(),
                n,
                feature_dim
            )));
        }
        if let Some(labels) = &gt_labels {
            if labels.len() != n {
                return Err(Error::Shape(format!(
                    "gt_labels length {} != N = {n}",
                    labels.len()
                )));
            }
            if let Some((i, l)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| l as usize >= num_classes)
            {
                return Err(Error::invalid(format!(
                    "label {l} of point {i} outside [0, {num_classes})"
                )));
            }
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature"));
        }
        Ok(Self {
            positions,
            features,
            feature_dim,
            gt_labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn gt_labels(&self) -> Option<&[u32]> {
        self.gt_labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn require_labels(&self) -> Result<&[u32]> {
        self.gt_labels()
            .ok_or_else(|| Error::invalid("operation requires dense ground-truth labels"))
    }

    /// Copies the listed points (in the given order) into a new cloud.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        let n = self.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("subset index {bad} >= N = {n}")));
        }
        let positions = indices.iter().map(|&i| self.positions[i]).collect();
        let features = indices
            .iter()
            .flat_map(|&i| self.feature(i).iter().copied())
            .collect();
        let gt_labels = self
            .gt_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        PointCloud::new(
            positions,
            features,
            self.feature_dim,
            gt_labels,
            self.num_classes,
        )
    }

    /// Points per class (requires labels).
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        let mut counts = vec![0usize; self.num_classes];
        for &l in labels {
            counts[l as usize] += 1;
        }
        Ok(counts)
    }

    /// Componentwise minimum and maximum of the positions.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_points: usize,
    pub num_classes: usize,
    pub room_extent: [f64; 3],
    pub objects_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_points: 10_000,
            num_classes: 6,
            room_extent: [1.0, 1.0, 0.6],
            objects_per_class: 2,
            noise_sigma: 0.002,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.num_points < self.num_classes {
            return Err(Error::invalid(format!(
                "num_points {} < num_classes {}: cannot cover every class",
                self.num_points, self.num_classes
            )));
        }
        if self.room_extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::invalid("room_extent must be finite and positive"));
        }
        if self.objects_per_class == 0 && self.num_classes > 2 {
            return Err(Error::invalid(
                "objects_per_class must be positive when there are object classes",
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-class point budget: every class gets one point, the remaining
/// `N − C` are split in proportion to `r^c` with `r = 4^(−1/(C−1))`
/// (floored), and the leftover from flooring is dealt one point at a time
/// starting at class 0.
pub fn class_point_counts(num_points: usize, num_classes: usize) -> Vec<usize> {
    let c = num_classes;
    let ratio = CLASS_IMBALANCE.powf(-1.0 / (c as f64 - 1.0).max(1.0));
    let weights: Vec<f64> = (0..c).map(|k| ratio.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let rest = num_points - c;
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (rest as f64 * w / total).floor() as usize)
        .collect();
    let mut leftover = num_points - counts.iter().sum::<usize>();
    let mut k = 0;
    while leftover > 0 {
        counts[k % c] += 1;
        leftover -= 1;
        k += 1;
    }
    counts
}

/// Base colour of a class. The first six are hand-picked, later classes
/// walk the hue circle.
pub fn class_palette(class: usize) -> [f64; 3] {
    const BASE: [[f64; 3]; 6] = [
        [0.55, 0.45, 0.35], // floor
        [0.80, 0.80, 0.75], // wall
        [0.30, 0.30, 0.60],
        [0.65, 0.35, 0.30],
        [0.35, 0.60, 0.35],
        [0.60, 0.55, 0.25],
    ];
    if class < BASE.len() {
        return BASE[class];
    }
    let h = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.2 + 0.6 * r, 0.2 + 0.6 * g, 0.2 + 0.6 * b]
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Axis-aligned box resting on the floor: centre (x, y), half sizes, height.
    Box {
        cx: f64,
        cy: f64,
        hx: f64,
        hy: f64,
        h: f64,
    },
    /// Sphere resting on the floor.
    Sphere { cx: f64, cy: f64, r: f64 },
}

impl Primitive {
    fn sample(&self, rng: &mut seed::Rng) -> [f64; 3] {
        match *self {
            Primitive::Box { cx, cy, hx, hy, h } => {
                // faces: top, ±x sides, ±y sides, sampled by area
                let top = 4.0 * hx * hy;
                let side_x = 2.0 * hy * h;
                let side_y = 2.0 * hx * h;
                let total = top + 2.0 * side_x + 2.0 * side_y;
                let t = rng.random::<f64>() * total;
                let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
                if t < top {
                    [cx + hx * (2.0 * u - 1.0), cy + hy * (2.0 * v - 1.0), h]
                } else if t < top + 2.0 * side_x {
                    let sx = if t < top + side_x { -hx } else { hx };
                    [cx + sx, cy + hy * (2.0 * u - 1.0), h * v]
                } else {
                    let sy = if t < top + 2.0 * side_x + side_y { -hy } else { hy };
                    [cx + hx * (2.0 * u - 1.0), cy + sy, h * v]
                }
            }
            Primitive::Sphere { cx, cy, r } => {
                let mut d = [0.0f64; 3];
                let norm = loop {
                    for x in d.iter_mut() {
                        *x = StandardNormal.sample(rng);
                    }
                    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    if n > 1e-12 {
                        break n;
                    }
                };
                [cx + r * d[0] / norm, cy + r * d[1] / norm, r + r * d[2] / norm]
            }
        }
    }
}

/// Generates a desk-scale room.
///
/// Layout rules:
/// - class budgets come from [`class_point_counts`];
/// - class 0 is the floor plane `z = 0`, class 1 the wall plane `x = 0`;
/// - every class `c ≥ 2` owns `objects_per_class` primitives (boxes for even
///   `c`, spheres for odd `c`) placed on the floor with centres uniform in
///   the inner 70% of the room; the j-th point of a class goes to object
///   `j mod objects_per_class`;
/// - positions receive isotropic Gaussian noise of `noise_sigma`;
/// - features are `[x, y, z, r, g, b]` with the colour drawn around
///   [`class_palette`] with [`COLOR_NOISE`];
/// - finally the points are shuffled so index order carries no class
///   information.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = seed::rng_at(spec.seed, &[0x5CE_4E]);
    let [ex, ey, ez] = spec.room_extent;
    let counts = class_point_counts(spec.num_points, spec.num_classes);
    let scale = ex.min(ey);

    let mut objects: Vec<Vec<Primitive>> = vec![Vec::new(); spec.num_classes];
    for (c, objs) in objects.iter_mut().enumerate().skip(2) {
        for _ in 0..spec.objects_per_class {
            let cx = ex * (0.15 + 0.7 * rng.random::<f64>());
            let cy = ey * (0.15 + 0.7 * rng.random::<f64>());
            let size = scale * (0.06 + 0.09 * rng.random::<f64>());
            objs.push(if c % 2 == 0 {
                let h = (size * (1.0 + rng.random::<f64>())).min(ez);
                Primitive::Box {
                    cx,
                    cy,
                    hx: size,
                    hy: size * (0.6 + 0.8 * rng.random::<f64>()),
                    h,
                }
            } else {
                Primitive::Sphere {
                    cx,
                    cy,
                    r: size.min(0.5 * ez),
                }
            });
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let color_noise = Normal::new(0.0, COLOR_NOISE).expect("constant sigma");
    let mut points: Vec<([f64; 3], [f64; 3], u32)> = Vec::with_capacity(spec.num_points);
    for (c, &count) in counts.iter().enumerate() {
        let base = class_palette(c);
        for j in 0..count {
            let mut p = match c {
                0 => [ex * rng.random::<f64>(), ey * rng.random::<f64>(), 0.0],
                1 => [0.0, ey * rng.random::<f64>(), ez * rng.random::<f64>()],
                _ => objects[c][j % objects[c].len()].sample(&mut rng),
            };
            if spec.noise_sigma > 0.0 {
                for x in p.iter_mut() {
                    *x += noise.sample(&mut rng);
                }
            }
            let mut rgb = base;
            for x in rgb.iter_mut() {
                *x += color_noise.sample(&mut rng);
            }
            points.push((p, rgb, c as u32));
        }
    }

    // Fisher–Yates with the scene stream.
    for i in (1..points.len()).rev() {
        let j = rng.random_range(0..=i);
        points.swap(i, j);
    }

    let mut positions = Vec::with_capacity(points.len());
    let mut features = Vec::with_capacity(points.len() * SCENE_FEATURE_DIM);
    let mut labels = Vec::with_capacity(points.len());
    for (p, rgb, c) in points {
        positions.push(p);
        features.extend_from_slice(&p);
        features.extend_from_slice(&rgb);
        labels.push(c);
    }
    PointCloud::new(
        positions,
        features,
        SCENE_FEATURE_DIM,
        Some(labels),
        spec.num_classes,
    )
}

/// Fraction of annotated points, `M / N`.
pub fn label_rate(cloud: &PointCloud, sparse: &SparseLabels) -> Result<f64> {
    sparse.validate(cloud)?;
    Ok(sparse.len() as f64 / cloud.len() as f64)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloudFormat {
    /// One point per line: `x y z f_1 … f_F [label]`.
    Text,
    /// Little-endian binary with a shape header.
    Binary,
}

impl CloudFormat {
    /// `.txt` → text, `.bin` → binary.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => Ok(CloudFormat::Text),
            Some("bin") => Ok(CloudFormat::Binary),
            _ => Err(Error::Format {
                path: path.to_owned(),
                message: "unknown cloud extension (expected .txt or .bin)".into(),
            }),
        }
    }
}

/// Column layout of a header-less text cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextSchema {
    pub feature_dim: usize,
    pub has_labels: bool,
    /// Defaults to `max label + 1` (or 1 without labels).
    pub num_classes: Option<usize>,
}

const TEXT_HEADER_PREFIX: &str = "# sparseseg-cloud";
const BINARY_MAGIC: &[u8; 8] = b"SSEGPC\0\0";
const BINARY_VERSION: u32 = 1;

fn fmt_f64(v: f64) -> String {
    // nine significant digits
    format!("{v:.8e}")
}

/// Renders the text format. The first line is a `#` header carrying the
/// schema so the file loads without an explicit [`TextSchema`].
pub fn cloud_to_text(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 16 * (4 + cloud.feature_dim()));
    out.push_str(&format!(
        "{TEXT_HEADER_PREFIX} F={} C={} labels={}\n",
        cloud.feature_dim(),
        cloud.num_classes(),
        u8::from(cloud.gt_labels().is_some())
    ));
    for i in 0..cloud.len() {
        let mut cols: Vec<String> = cloud.positions()[i].iter().map(|&v| fmt_f64(v)).collect();
        cols.extend(cloud.feature(i).iter().map(|&v| fmt_f64(v)));
        if let Some(l) = cloud.gt_labels() {
            cols.push(l[i].to_string());
        }
        out.push_str(&cols.join(" "));
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Option<TextSchema> {
    let rest = line.strip_prefix(TEXT_HEADER_PREFIX)?;
    let mut schema = TextSchema {
        feature_dim: 0,
        has_labels: false,
        num_classes: None,
    };
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "F" => schema.feature_dim = v.parse().ok()?,
            "C" => schema.num_classes = Some(v.parse().ok()?),
            "labels" => schema.has_labels = v == "1",
            _ => return None,
        }
    }
    Some(schema)
}

/// Parses the text format. A leading schema header takes precedence over
/// `schema`; without either the call fails.
pub fn cloud_from_text(text: &str, schema: Option<TextSchema>, path: &Path) -> Result<PointCloud> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().peekable();
    let mut schema = schema;
    if let Some((_, first)) = lines.peek() {
        if first.starts_with(TEXT_HEADER_PREFIX) {
            schema = Some(
                parse_header(first).ok_or_else(|| parse_err(1, "malformed header".into()))?,
            );
            lines.next();
        }
    }
    let schema = schema.ok_or_else(|| Error::Format {
        path: path.to_owned(),
        message: "text cloud has no header and no schema was given".into(),
    })?;
    let columns = 3 + schema.feature_dim + usize::from(schema.has_labels);

    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != columns {
            return Err(parse_err(
                lineno,
                format!("expected {columns} columns, found {}", toks.len()),
            ));
        }
        let mut vals = Vec::with_capacity(3 + schema.feature_dim);
        for t in &toks[..3 + schema.feature_dim] {
            let v: f64 = t
                .parse()
                .map_err(|_| parse_err(lineno, format!("cannot parse number {t:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value {t:?}")));
            }
            vals.push(v);
        }
        positions.push([vals[0], vals[1], vals[2]]);
        features.extend_from_slice(&vals[3..]);
        if schema.has_labels {
            let t = toks[columns - 1];
            let l: u32 = t
                .parse()
                .map_err(|_| parse_err(lineno, format!("cannot parse label {t:?}")))?;
            if let Some(c) = schema.num_classes {
                if l as usize >= c {
                    return Err(parse_err(lineno, format!("label {l} outside [0, {c})")));
                }
            }
            labels.push(l);
        }
    }
    if positions.is_empty() {
        return Err(Error::Format {
            path: path.to_owned(),
            message: "no points".into(),
        });
    }
    let num_classes = schema.num_classes.unwrap_or_else(|| {
        labels.iter().max().map_or(1, |&m| m as usize + 1)
    });
    PointCloud::new(
        positions,
        features,
        schema.feature_dim,
        schema.has_labels.then_some(labels),
        num_classes,
    )
}

/// Binary layout (little endian): magic `SSEGPC\0\0`, u32 version, u64 N,
/// u32 F, u32 C, u8 has_labels, then `3N` f64 positions, `N·F` f64
/// features and, when present, `N` u32 labels.
pub fn cloud_to_bytes(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(29 + n * 8 * (3 + cloud.feature_dim()) + n * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.feature_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.num_classes() as u32).to_le_bytes());
    out.push(u8::from(cloud.gt_labels().is_some()));
    for v in cloud.positions().iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in cloud.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = cloud.gt_labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn cloud_from_bytes(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let bad = |message: &str| Error::Format {
        path: path.to_owned(),
        message: message.to_owned(),
    };
    let mut cur = ByteReader { bytes, pos: 0 };
    if cur.take(8).ok_or_else(|| bad("truncated header"))? != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != BINARY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = cur.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let f = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let c = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let has_labels = cur.take(1).ok_or_else(|| bad("truncated header"))?[0] == 1;
    let expected = n * 8 * (3 + f) + if has_labels { n * 4 } else { 0 };
    if bytes.len() - cur.pos != expected {
        return Err(bad(&format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len() - cur.pos
        )));
    }
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        positions.push([cur.f64(), cur.f64(), cur.f64()].map(|v| v.expect("length checked")));
    }
    let features = (0..n * f).map(|_| cur.f64().expect("length checked")).collect();
    let labels =
        has_labels.then(|| (0..n).map(|_| cur.u32().expect("length checked")).collect());
    PointCloud::new(positions, features, f, labels, c)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, k: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + k)?;
        self.pos += k;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::Text => cloud_to_text(cloud).into_bytes(),
        CloudFormat::Binary => cloud_to_bytes(cloud),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(
    path: &Path,
    format: CloudFormat,
    schema: Option<TextSchema>,
) -> Result<PointCloud> {
    match format {
        CloudFormat::Text => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cloud_from_text(&text, schema, path)
        }
        CloudFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            cloud_from_bytes(&bytes, path)
        }
    }
}
