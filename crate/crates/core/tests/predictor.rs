use facestab::geometry::{sample_random_rigid, RigidTransform, VertexBlock};
use facestab::model::Region;
use facestab::predictor::{decode_output, pose_loss, Checkpoint, Network, PredictorConfig, Trainer, TrainingSet, OUTPUT_DIM};
use facestab::synthesis::TrainingSample;
use nalgebra::Point3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg(seed: u64) -> PredictorConfig {
    PredictorConfig {
        extractor: vec![10, 8],
        latent: 6,
        regressor: vec![8],
        learning_rate: 1e-3,
        iterations: 20,
        batch_size: 4,
        log_every: 5,
        seed,
        ..Default::default()
    }
}

fn pairs(n: usize, points: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet::new(points);
    for _ in 0..n {
        let gt = sample_random_rigid(0.05, 2.0, &mut rng);
        let src: VertexBlock = (0..points)
            .map(|_| Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-60.0..60.0), rng.random_range(0.0..40.0)))
            .collect();
        let tgt = gt.apply(&src);
        set.push(&TrainingSample { source: src.round_f32(), target: tgt.round_f32(), gt, seed: 0 }).unwrap();
    }
    set
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pose_loss_gradient_matches_finite_differences(raw in prop::array::uniform9(-2.0f64..2.0), seed in any::<u64>(), alpha in 0.0f64..3.0) {
        let c1 = nalgebra::Vector3::new(raw[0], raw[1], raw[2]);
        let c2 = nalgebra::Vector3::new(raw[3], raw[4], raw[5]);
        prop_assume!(c1.norm() > 0.3 && c1.cross(&c2).norm() > 0.3 * c1.norm() * c2.norm());
        let gt = sample_random_rigid(1.0, 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let (_, grad) = pose_loss(&raw, &gt, alpha).unwrap();
        let h = 1e-6;
        for k in 0..OUTPUT_DIM {
            let (mut p, mut m) = (raw, raw);
            p[k] += h;
            m[k] -= h;
            let fd = (pose_loss(&p, &gt, alpha).unwrap().0.total - pose_loss(&m, &gt, alpha).unwrap().0.total) / (2.0 * h);
            prop_assert!((fd - grad[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "k {} fd {} analytic {}", k, fd, grad[k]);
        }
    }

    #[test]
    fn loss_vanishes_at_the_ground_truth(seed in any::<u64>()) {
        let gt = sample_random_rigid(1.0, 5.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = gt.rotation();
        let t = gt.translation();
        let raw = [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)], t.x, t.y, t.z];
        prop_assert!(decode_output(&raw).unwrap().max_abs_diff(&gt) < 1e-12);
        prop_assert!(pose_loss(&raw, &gt, 1.0).unwrap().0.total < 1e-12);
    }

    #[test]
    fn batched_outputs_do_not_mix_pairs(seed in any::<u64>(), batch in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::<f64>::new(&small_cfg(seed), 6, &mut rng);
        let xs: Vec<f64> = (0..batch * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt: Vec<f64> = (0..batch * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let all = net.predict(&xs, &xt, batch).unwrap();
        for b in 0..batch {
            let one = net.predict(&xs[b * 6..(b + 1) * 6], &xt[b * 6..(b + 1) * 6], 1).unwrap();
            prop_assert!(one[0].max_abs_diff(&all[b]) < 1e-12);
        }
    }
}

#[test]
fn checkpoints_resume_bit_exactly_through_files() {
    let set = pairs(12, 8, 1);
    let cfg = small_cfg(3);
    let mut straight = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    for _ in 0..9 {
        straight.step().unwrap();
    }
    let mut first = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    for _ in 0..4 {
        first.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    first.checkpoint(serde_json::json!({})).save(&path).unwrap();
    let c = Checkpoint::load_for(&path, 8).unwrap();
    let mut resumed = Trainer::resume(c.predictor, c.adam, c.iteration, &set, None).unwrap();
    for _ in 0..5 {
        resumed.step().unwrap();
    }
    assert_eq!(resumed.predictor(), straight.predictor());
}

#[test]
fn invalid_configurations_are_rejected() {
    let set = pairs(4, 8, 2);
    for cfg in [
        PredictorConfig { batch_size: 0, ..small_cfg(0) },
        PredictorConfig { learning_rate: 0.0, ..small_cfg(0) },
        PredictorConfig { latent: 0, ..small_cfg(0) },
        PredictorConfig { alpha_t: f64::NAN, ..small_cfg(0) },
    ] {
        assert!(Trainer::new(&cfg, Region::Frontal, &set, None).is_err());
    }
    assert!(Trainer::new(&small_cfg(0), Region::Frontal, &TrainingSet::new(8), None).is_err());
}

#[test]
fn predictions_are_rigid() {
    let set = pairs(8, 8, 4);
    let mut t = Trainer::new(&small_cfg(5), Region::Frontal, &set, None).unwrap();
    for _ in 0..5 {
        t.step().unwrap();
    }
    for s in t.predictor().predict_set(&set).unwrap() {
        assert!(RigidTransform::new(*s.rotation(), *s.translation()).is_ok());
    }
}
