//! Exact spatial neighbour queries on a uniform hash grid.
//!
//! Results are ordered by `(squared distance, index)`, so ties are broken by
//! the lower point index and the output does not depend on hashing order.

use std::collections::HashMap;

type Cell = [i64; 3];

pub struct SpatialGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    origin: [f64; 3],
    buckets: HashMap<Cell, Vec<usize>>,
    max_ring: i64,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl<'a> SpatialGrid<'a> {
    /// Grid with cells of side `cell` (must be positive).
    pub fn with_cell(points: &'a [[f64; 3]], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut origin = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                origin[d] = origin[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if points.is_empty() {
            origin = [0.0; 3];
            hi = [0.0; 3];
        }
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(origin, cell, p)).or_default().push(i);
        }
        let max_ring = (0..3)
            .map(|d| ((hi[d] - origin[d]) / cell).floor() as i64 + 1)
            .max()
            .unwrap_or(1);
        Self {
            points,
            cell,
            origin,
            buckets,
            max_ring,
        }
    }

    /// Grid whose cell size targets roughly `per_cell` points per occupied cell.
    pub fn auto(points: &'a [[f64; 3]], per_cell: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let ext: Vec<f64> = (0..3).map(|d| (hi[d] - lo[d]).max(0.0)).collect();
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        let cell = if points.len() < 2 || max_ext <= 0.0 {
            1.0
        } else {
            // Thin extents are clamped so planar scenes do not collapse the volume.
            let vol: f64 = ext.iter().map(|e| e.max(0.05 * max_ext)).product();
            (vol * per_cell.max(1) as f64 / points.len() as f64).cbrt()
        };
        Self::with_cell(points, cell)
    }

    fn key(origin: [f64; 3], cell: f64, p: &[f64; 3]) -> Cell {
        [
            ((p[0] - origin[0]) / cell).floor() as i64,
            ((p[1] - origin[1]) / cell).floor() as i64,
            ((p[2] - origin[2]) / cell).floor() as i64,
        ]
    }

    fn visit_ring(&self, center: Cell, r: i64, mut f: impl FnMut(usize)) {
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                        continue;
                    }
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(b) = self.buckets.get(&key) {
                        b.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// The `k` nearest points to `points[query]`, excluding the query itself.
    pub fn knn_excluding(&self, query: usize, k: usize) -> Vec<usize> {
        let q = self.points[query];
        let center = Self::key(self.origin, self.cell, &q);
        let k = k.min(self.points.len().saturating_sub(1));
        if k == 0 {
            return Vec::new();
        }
        let mut cand: Vec<(f64, usize)> = Vec::new();
        let mut r = 0;
        loop {
            self.visit_ring(center, r, |i| {
                if i != query {
                    cand.push((dist2(&q, &self.points[i]), i));
                }
            });
            if cand.len() >= k {
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // Unvisited points lie at distance >= r·cell.
                let bound = r as f64 * self.cell;
                if cand[k - 1].0 < bound * bound || r > self.max_ring {
                    break;
                }
                cand.truncate(k.max(cand.len().min(4 * k)));
            }
            if r > self.max_ring + 1 {
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                break;
            }
            r += 1;
        }
        cand.truncate(k);
        cand.into_iter().map(|(_, i)| i).collect()
    }

    /// Number of points within Euclidean distance `radius` of `points[query]`,
    /// the query included.
    pub fn count_within(&self, query: usize, radius: f64) -> usize {
        let q = self.points[query];
        let center = Self::key(self.origin, self.cell, &q);
        let rings = (radius / self.cell).ceil() as i64;
        let r2 = radius * radius;
        let mut count = 0;
        for r in 0..=rings {
            self.visit_ring(center, r, |i| {
                if dist2(&q, &self.points[i]) <= r2 {
                    count += 1;
                }
            });
        }
        count
    }
}

/// Fixed-size neighbour table: row `i` holds the `k` nearest other points of
/// point `i`. For a single-point cloud `k` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    k: usize,
    indices: Vec<usize>,
}

impl Neighborhood {
    pub fn build(points: &[[f64; 3]], k: usize) -> Self {
        let k = k.min(points.len().saturating_sub(1));
        if k == 0 {
            return Self {
                k: 0,
                indices: Vec::new(),
            };
        }
        let grid = SpatialGrid::auto(points, 2 * k);
        let mut indices = Vec::with_capacity(points.len() * k);
        for i in 0..points.len() {
            indices.extend(grid.knn_excluding(i, k));
        }
        Self { k, indices }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Per-point neighbour counts within `radius` (self included).
pub fn local_counts(points: &[[f64; 3]], radius: f64) -> Vec<usize> {
    let grid = SpatialGrid::with_cell(points, radius.max(1e-9));
    (0..points.len()).map(|i| grid.count_within(i, radius)).collect()
}
