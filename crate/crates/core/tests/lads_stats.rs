use std::collections::HashSet;

use sparseseg::annotate::sample_uniform;
use sparseseg::data::{generate_scene, PointCloud, SceneSpec};
use sparseseg::lads::{downsample_on_grid, labeled_voxel_count, sampling_l, sampling_r, Strategy};
use sparseseg::seed;
use sparseseg::voxel::{voxelize, VoxelGrid};

fn within_3se(hits: usize, trials: usize, p: f64) -> bool {
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    (hits as f64 / trials as f64 - p).abs() <= 3.0 * se
}

fn scene_with_labels(n: usize, rate: f64, seed: u64) -> (PointCloud, VoxelGrid, Vec<bool>) {
    let cloud = generate_scene(&SceneSpec {
        num_points: n,
        seed,
        ..SceneSpec::default()
    })
    .unwrap();
    let grid = voxelize(&cloud, 0.04).unwrap();
    let mask = sample_uniform(&cloud, rate, seed).unwrap().mask(n);
    (cloud, grid, mask)
}

#[test]
fn labelled_representative_is_uniform_among_labelled_points() {
    // Points 3 and 7 share the first voxel; every other point is alone.
    let mut positions: Vec<[f64; 3]> = (0..8).map(|i| [10.0 * i as f64, 0.0, 0.0]).collect();
    positions[3] = [0.1, 0.1, 0.1];
    positions[7] = [0.2, 0.2, 0.2];
    positions[0] = [0.0, 5.0, 0.0];
    let features = positions.iter().flatten().copied().collect();
    let cloud = PointCloud::new(positions, features, 3, Some(vec![0; 8]), 1).unwrap();
    let grid = voxelize(&cloud, 1.0).unwrap();
    let shared = grid.voxel_of(3);
    assert_eq!(grid.cell(shared), &[3, 7]);
    let mut mask = vec![false; 8];
    mask[3] = true;
    mask[7] = true;

    let trials = 10_000;
    let hits = (0..trials)
        .filter(|&s| sampling_l(&grid, &mask, &mut seed::rng(s as u64))[shared] == 3)
        .count();
    assert!(within_3se(hits, trials, 0.5), "{hits}/{trials}");
}

#[test]
fn single_pick_from_two_is_fair() {
    let trials = 10_000;
    let hits = (0..trials)
        .filter(|&s| sampling_r(&[4, 9], 1, &mut seed::rng(s as u64)).unwrap() == [4])
        .count();
    assert!(within_3se(hits, trials, 0.5), "{hits}/{trials}");
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn lads_labelled_fraction_matches_hypergeometric_mean() {
    let (_, grid, mask) = scene_with_labels(3000, 0.02, 1);
    let v = grid.len();
    let labeled = labeled_voxel_count(&grid, &mask);
    let k = v / 4;
    let expected = labeled as f64 * k.min(v) as f64 / v as f64 / k as f64;
    let fractions: Vec<f64> = (0..1000u64)
        .map(|s| {
            let r = downsample_on_grid(&grid, &mask, k, s, Strategy::Lr).unwrap();
            r.labeled_count() as f64 / r.point_indices.len() as f64
        })
        .collect();
    let (mean, se) = mean_and_se(&fractions);
    assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected} (se {se})");
}

#[test]
fn random_downsampling_keeps_labels_at_the_simulated_rate() {
    let (_, grid, mask) = scene_with_labels(3000, 0.05, 2);
    let v = grid.len();
    let k = v / 4;
    // Each voxel is kept with probability K/|V| and then contributes a
    // labelled point with probability (labelled in voxel)/|voxel|.
    let expected: f64 = grid
        .cells()
        .iter()
        .map(|cell| {
            let l = cell.iter().filter(|&&i| mask[i]).count();
            k as f64 / v as f64 * l as f64 / cell.len() as f64
        })
        .sum();
    let kept: Vec<f64> = (0..1000u64)
        .map(|s| downsample_on_grid(&grid, &mask, k, s, Strategy::Rr).unwrap().labeled_count() as f64)
        .collect();
    let (mean, se) = mean_and_se(&kept);
    assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected} (se {se})");
}

#[test]
fn repeated_lads_draws_cover_every_voxel() {
    let (_, grid, mask) = scene_with_labels(2000, 0.01, 3);
    let k = grid.len() / 2;
    let mut seen = HashSet::new();
    for s in 0..200u64 {
        seen.extend(downsample_on_grid(&grid, &mask, k, s, Strategy::Lr).unwrap().voxels);
    }
    assert_eq!(seen.len(), grid.len());
}

#[test]
fn label_first_candidates_count_labelled_voxels() {
    for trial in 0..10u64 {
        let (_, grid, mask) = scene_with_labels(1500, 0.03, 100 + trial);
        let cand = sampling_l(&grid, &mask, &mut seed::rng(trial));
        let labelled = cand.iter().filter(|&&i| mask[i]).count();
        assert_eq!(labelled, labeled_voxel_count(&grid, &mask));
        for (v, &i) in cand.iter().enumerate() {
            assert_eq!(grid.voxel_of(i), v);
        }
    }
}
