use super::*;
use crate::geometry::sample_random_rigid;
use crate::model::synth_model;
use crate::synthesis::{
    synth_expression_library, synth_identity_set, IdentityDistribution, LibraryConfig, SynthesisConfig, Synthesizer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg() -> PredictorConfig {
    PredictorConfig {
        extractor: vec![16, 12],
        latent: 8,
        regressor: vec![12],
        learning_rate: 1e-3,
        iterations: 40,
        batch_size: 4,
        log_every: 10,
        ..Default::default()
    }
}

fn random_set(n: usize, points: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet::new(points);
    for _ in 0..n {
        let gt = sample_random_rigid(0.05, 2.0, &mut rng);
        let src: crate::geometry::VertexBlock = (0..points)
            .map(|_| nalgebra::Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..40.0)))
            .collect();
        let tgt = gt.apply(&src);
        set.push(&crate::synthesis::TrainingSample {
            source: src.round_f32(),
            target: tgt.round_f32(),
            gt,
            seed: 0,
        })
        .unwrap();
    }
    set
}

#[test]
fn network_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = tiny_cfg();
    let net = Network::<f64>::new(&cfg, 9, &mut rng);
    let batch = 3;
    let xs: Vec<f64> = (0..batch * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xt: Vec<f64> = (0..batch * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gts: Vec<RigidTransform> = (0..batch).map(|_| sample_random_rigid(0.5, 1.0, &mut rng)).collect();
    let mut grads = net.zeros_like();
    net.loss_and_grad(&xs, &xt, &gts, 0.7, &mut grads).unwrap();
    let analytic: Vec<f64> = grads.params().copied().collect();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let mut p = net.clone();
        *p.params_mut().nth(k).unwrap() += h;
        let mut m = net.clone();
        *m.params_mut().nth(k).unwrap() -= h;
        let lp = p.loss(&xs, &xt, &gts, 0.7).unwrap().total;
        let lm = m.loss(&xs, &xt, &gts, 0.7).unwrap().total;
        numeric.push((lp - lm) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-5, "relative error {}", diff / scale);
}

#[test]
fn one_step_changes_weights() {
    let set = random_set(8, 10, 1);
    let cfg = tiny_cfg();
    let mut t = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    let before = t.net.clone();
    t.step().unwrap();
    assert_ne!(before, t.net);
    assert_eq!(t.iteration, 1);
}

#[test]
fn resume_equals_uninterrupted_run() {
    let set = random_set(10, 10, 2);
    let cfg = tiny_cfg();
    let mut full = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    for _ in 0..12 {
        full.step().unwrap();
    }

    let mut first = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    for _ in 0..5 {
        first.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    first.checkpoint(serde_json::json!({"note": "mid"})).save(&path).unwrap();
    let c = Checkpoint::load(&path).unwrap();
    assert_eq!(c, first.checkpoint(serde_json::json!({"note": "mid"})));
    let mut second = Trainer::resume(c.predictor, c.adam, c.iteration, &set, None).unwrap();
    for _ in 0..7 {
        second.step().unwrap();
    }
    assert_eq!(second.net, full.net);
    assert_eq!(second.adam, full.adam);
}

#[test]
fn checkpoint_rejects_other_point_counts() {
    let set = random_set(4, 10, 3);
    let t = Trainer::new(&tiny_cfg(), Region::Frontal, &set, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    t.checkpoint(serde_json::Value::Null).save(&path).unwrap();
    assert!(Checkpoint::load_for(&path, 10).is_ok());
    assert!(matches!(Checkpoint::load_for(&path, 11), Err(Error::Incompatible(_))));
    let other = random_set(4, 11, 3);
    let c = Checkpoint::load(&path).unwrap();
    assert!(Trainer::resume(c.predictor, c.adam, c.iteration, &other, None).is_err());
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let set = random_set(64, 12, 4);
    let val = random_set(16, 12, 5);
    let cfg = PredictorConfig {
        iterations: 300,
        log_every: 100,
        ..tiny_cfg()
    };
    let run = || {
        let mut t = Trainer::new(&cfg, Region::Frontal, &set, Some(&val)).unwrap();
        let mut log = Vec::new();
        t.run(|r, _| {
            log.push(r.clone());
            Ok(())
        })
        .unwrap();
        log
    };
    let a = run();
    assert_eq!(a.len(), 3);
    assert!(a[2].loss < a[0].loss);
    assert_eq!(a, run());
}

#[test]
fn divergence_is_reported_without_touching_weights() {
    let mut set = random_set(4, 10, 6);
    set.sources[0] = f32::NAN;
    let cfg = PredictorConfig {
        batch_size: 4,
        ..tiny_cfg()
    };
    let mut t = Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    let before = t.net.clone();
    assert!(matches!(t.step(), Err(Error::Diverged { .. })));
    assert_eq!(t.net, before);
    assert_eq!(t.iteration, 0);
}

#[test]
fn stabilize_pair_is_frame_equivariant() {
    let psi = synth_model(8, 642, 4, 16).unwrap();
    let dist = IdentityDistribution::fit(&synth_identity_set(2, 20, 4)).unwrap();
    let lib = synth_expression_library(&LibraryConfig::default(), 16).unwrap();
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let samples: Vec<_> = (0..8).map(|i| syn.sample(i).unwrap()).collect();
    let set = TrainingSet::from_samples(&samples).unwrap();
    let t = Trainer::new(&tiny_cfg(), Region::Frontal, &set, None).unwrap();
    let predictor = t.predictor();

    let full = syn.sample_full(99).unwrap();
    let (s, moved) = predictor.stabilize_pair(&full.source_mesh, &full.target_mesh, &psi).unwrap();
    assert!(moved.frobenius_distance(&s.apply(&full.source_mesh)) < 1e-9);

    let z = sample_random_rigid(0.4, 30.0, &mut ChaCha8Rng::seed_from_u64(1));
    let (sz, moved_z) = predictor
        .stabilize_pair(&z.apply(&full.source_mesh), &z.apply(&full.target_mesh), &psi)
        .unwrap();
    let conj = z.compose(&s).compose(&z.inverse());
    assert!(sz.max_abs_diff(&conj) < 1e-6);
    assert!(moved_z.frobenius_distance(&z.apply(&moved)) < 1e-4);

    assert!(predictor.stabilize_pair(&full.source_mesh, &full.source_mesh.select(&[0, 1, 2]), &psi).is_err());
}

#[test]
fn feature_dimension_follows_config() {
    let set = random_set(4, 10, 7);
    let t = Trainer::new(&tiny_cfg(), Region::Frontal, &set, None).unwrap();
    let p = t.predictor();
    let block = crate::geometry::VertexBlock::from_flat(&set.source(0).iter().map(|&x| x as f64).collect::<Vec<_>>());
    let z = p.feature_extract(&block).unwrap();
    assert_eq!(z.len(), 8);
    assert_eq!(z, p.feature_extract(&block).unwrap());
}

#[test]
fn cosine_schedule_runs_from_initial_to_final_rate() {
    let cfg = PredictorConfig { learning_rate: 2e-4, final_lr_fraction: 0.05, iterations: 100, ..Default::default() };
    assert_eq!(cfg.learning_rate_at(0), 2e-4);
    assert!((cfg.learning_rate_at(100) - 1e-5).abs() < 1e-18);
    assert!((cfg.learning_rate_at(50) - 2e-4 * 0.525).abs() < 1e-15);
    assert!((1..=100).all(|t| cfg.learning_rate_at(t) < cfg.learning_rate_at(t - 1)));
    let constant = PredictorConfig { final_lr_fraction: 1.0, ..cfg };
    assert!((0..=120).all(|t| constant.learning_rate_at(t) == 2e-4));
    assert!(PredictorConfig { final_lr_fraction: 1.5, ..Default::default() }.validate().is_err());
}
