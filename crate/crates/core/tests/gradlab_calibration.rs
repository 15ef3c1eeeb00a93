use sparseseg::annotate::{corner_decay_weights, normalize_weights};
use sparseseg::data::{generate_scene, PointCloud, SceneSpec};
use sparseseg::gradlab::{inverse_entropy_density, Calibration, GradLab, GradSampler};
use sparseseg::nn::{per_point_grads, Architecture, ModelInput, ModelParams};

fn setup(n: usize, seed: u64) -> (PointCloud, ModelParams) {
    let cloud = generate_scene(&SceneSpec {
        num_points: n,
        seed,
        ..SceneSpec::default()
    })
    .unwrap();
    let params = ModelParams::init(
        Architecture {
            feature_dim: cloud.feature_dim(),
            hidden: 8,
            classes: cloud.num_classes(),
            k_nn: 8,
        },
        seed + 1,
    );
    (cloud, params)
}

#[test]
fn delta_equals_direct_weighted_sum() {
    let (cloud, params) = setup(3000, 0);
    let density = normalize_weights(&corner_decay_weights(&cloud, 3.0), cloud.len()).unwrap();
    let lab = GradLab::new(&params, &cloud).unwrap();
    let delta = lab.analytic_delta(&density).unwrap();

    let input = ModelInput::prepare(&cloud, 8);
    let g = per_point_grads(&params, &input, cloud.gt_labels().unwrap()).unwrap();
    let n = cloud.len() as f64;
    for j in 0..params.len() {
        let direct: f64 = (0..cloud.len()).map(|i| (density[i] - 1.0 / n) * g.row(i)[j]).sum();
        assert!((direct - delta[j]).abs() < 1e-12, "component {j}");
    }
}

#[test]
fn entropy_calibration_shrinks_bias_when_annotation_avoids_uncertain_points() {
    // Points are drawn with p′ ∝ 1/Ent, so Ent-weighting is proportional to
    // the ideal correction.
    let mut better = 0;
    for seed in 0..10u64 {
        let (cloud, params) = setup(1500, 100 + seed);
        let mut lab = GradLab::new(&params, &cloud).unwrap();
        let density = inverse_entropy_density(lab.entropies());
        let sampler = GradSampler::DensityBiased(density);
        let plain = lab.clt_experiment(&sampler, 64, 200, seed, Calibration::None).unwrap();
        let mde = lab.clt_experiment(&sampler, 64, 200, seed, Calibration::Mde).unwrap();
        if mde.mean_deviation_norm() < plain.mean_deviation_norm() {
            better += 1;
        }
    }
    assert!(better >= 8, "entropy calibration helped in {better}/10 seeds");
}
