use sparseseg::annotate::{
    corner_decay_weights, draw_iid, inhomogeneity_stats, normalize_weights, sample_clustered,
    sample_uniform,
};
use sparseseg::data::{generate_scene, label_rate, PointCloud, SceneSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn scene(n: usize, seed: u64) -> PointCloud {
    generate_scene(&SceneSpec {
        num_points: n,
        seed,
        ..SceneSpec::default()
    })
    .unwrap()
}

fn octant(cloud: &PointCloud, i: usize) -> usize {
    let (lo, hi) = cloud.bounds();
    let p = cloud.positions()[i];
    (0..3)
        .map(|a| usize::from(p[a] >= 0.5 * (lo[a] + hi[a])) << a)
        .sum()
}

#[test]
fn uniform_selection_is_uniform_over_octants() {
    let cloud = scene(1000, 2);
    let mut points = [0usize; 8];
    for i in 0..cloud.len() {
        points[octant(&cloud, i)] += 1;
    }
    let mut picked = [0usize; 8];
    for seed in 0..1000 {
        for &i in sample_uniform(&cloud, 0.01, seed).unwrap().indices() {
            picked[octant(&cloud, i)] += 1;
        }
    }
    let total: usize = picked.iter().sum();
    let mut stat = 0.0;
    let mut df = 0;
    for o in 0..8 {
        if points[o] == 0 {
            assert_eq!(picked[o], 0);
            continue;
        }
        let expected = total as f64 * points[o] as f64 / cloud.len() as f64;
        stat += (picked[o] as f64 - expected).powi(2) / expected;
        df += 1;
    }
    let critical = ChiSquared::new((df - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(a: &mut [usize], b: &mut [usize]) -> f64 {
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn clustered_with_one_point_per_cluster_matches_uniform_in_distribution() {
    let cloud = scene(800, 4);
    let m = 8;
    let mut uniform = Vec::new();
    let mut clustered = Vec::new();
    for seed in 0..1000u64 {
        uniform.extend_from_slice(sample_uniform(&cloud, 0.01, seed).unwrap().indices());
        // disjoint seeds so the two samples are independent
        clustered.extend_from_slice(
            sample_clustered(&cloud, 0.01, m, seed + 10_000)
                .unwrap()
                .indices(),
        );
    }
    let (n, k) = (uniform.len() as f64, clustered.len() as f64);
    let d = ks_statistic(&mut uniform, &mut clustered);
    let critical = (-(0.001f64 / 2.0).ln() / 2.0).sqrt() * ((n + k) / (n * k)).sqrt();
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn biased_draw_frequencies_match_density() {
    let cloud = scene(2000, 6);
    let density = normalize_weights(&corner_decay_weights(&cloud, 3.0), cloud.len()).unwrap();
    let draws = draw_iid(&density, 100_000, 21).unwrap();

    // Twenty buckets of consecutive indices.
    let buckets = 20;
    let width = cloud.len() / buckets;
    let mut counts = vec![0usize; buckets];
    for &d in &draws {
        counts[(d / width).min(buckets - 1)] += 1;
    }
    let n = draws.len() as f64;
    for b in 0..buckets {
        let p: f64 = density[b * width..((b + 1) * width).min(cloud.len())].iter().sum();
        let se = (n * p * (1.0 - p)).sqrt();
        assert!(
            (counts[b] as f64 - n * p).abs() <= 3.0 * se,
            "bucket {b}: {} vs {}",
            counts[b],
            n * p
        );
    }
}

#[test]
fn concentration_falls_as_clusters_grow() {
    let grid = [1usize, 10, 20, 100];
    let mut mean_nn = vec![0.0; grid.len()];
    let mut classes_g1 = 0.0;
    for seed in 0..20u64 {
        let cloud = scene(10_000, seed);
        for (k, &g) in grid.iter().enumerate() {
            let sparse = sample_clustered(&cloud, 0.01, g, seed).unwrap();
            let stats = inhomogeneity_stats(&cloud, &sparse).unwrap();
            mean_nn[k] += stats.mean_nn_distance.unwrap() / 20.0;
            if g == 1 {
                classes_g1 += stats.labeled_classes as f64 / 20.0;
            }
        }
    }
    for w in mean_nn.windows(2) {
        assert!(w[0] <= w[1], "mean nn distance not monotone: {mean_nn:?}");
    }
    assert!(classes_g1 < 6.0, "G=1 covers {classes_g1} classes on average");
}

#[test]
fn clustered_rate_is_within_one_point_of_request() {
    // M = 100 splits evenly; M = round(10.5) = 11 leaves one point over.
    for (n, seed) in [(10_000, 0u64), (1050, 1)] {
        let cloud = scene(n, seed);
        let sparse = sample_clustered(&cloud, 0.01, 10, seed).unwrap();
        let got = label_rate(&cloud, &sparse).unwrap() * n as f64;
        assert!((got - 0.01 * n as f64).abs() <= 1.0, "N={n}: {got} labels");
    }
}
