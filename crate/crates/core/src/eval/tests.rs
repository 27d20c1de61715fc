use super::*;
use crate::geometry::sample_random_rigid;
use crate::model::synth_model;
use crate::synthesis::{
    synth_expression_library, synth_identity_set, IdentityDistribution, LibraryConfig, LibraryKind, SynthesisConfig,
};

fn fixture(kind: LibraryKind) -> (ModelData, IdentityDistribution, crate::synthesis::ExpressionLibrary) {
    let psi = synth_model(3, 642, 4, 16).unwrap();
    let dist = IdentityDistribution::fit(&synth_identity_set(2, 20, 4)).unwrap();
    let lib = synth_expression_library(&LibraryConfig { kind, ..Default::default() }, 16).unwrap();
    (psi, dist, lib)
}

#[test]
fn oracle_is_perfect_and_identity_is_not() {
    let (psi, dist, lib) = fixture(LibraryKind::Standard);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let test = generate_test_set(&syn, 6).unwrap();
    let cfg = EvalConfig::default();
    let r = evaluate_method(&Oracle, &test, &psi, &cfg).unwrap();
    assert_eq!(r.rows.len(), 3);
    for row in &r.rows {
        assert!(row.md < 1e-9 && row.mx < 1e-9);
        assert_eq!(row.auc, 100.0);
    }
    assert!(r.skull_median <= 1e-6);
    let id = evaluate_method(&Identity, &test, &psi, &cfg).unwrap();
    for row in &id.rows {
        assert!(row.mx >= row.md && row.md > 0.0 && row.auc < 100.0);
        assert!(row.pck.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn region_filtering_commutes_with_metrics() {
    let (psi, dist, lib) = fixture(LibraryKind::Standard);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let test = generate_test_set(&syn, 4).unwrap();
    let method = Procrustes(Region::Head);
    let report = evaluate_method(&method, &test, &psi, &EvalConfig::default()).unwrap();
    let transforms = stabilize_all(&method, &test, &psi).unwrap();
    for row in &report.rows {
        let mask = psi.mask(row.region);
        let pred: Vec<VertexBlock> = test.iter().zip(&transforms).map(|(s, t)| t.apply(&s.source_mesh.select(mask))).collect();
        let gt: Vec<VertexBlock> = test.iter().map(|s| s.sample.gt.apply(&s.source_mesh.select(mask))).collect();
        assert_eq!(mean_vertex_distance(&pred, &gt).unwrap(), (row.md, row.md_std));
        assert_eq!(max_vertex_distance(&pred, &gt).unwrap(), row.mx);
        assert_eq!(pck_auc(&pred, &gt, (0.0, 5.0), 100).unwrap().auc, row.auc);
    }
}

#[test]
fn upper_procrustes_beats_head_on_jaw_heavy_pairs() {
    let (psi, dist, lib) = fixture(LibraryKind::JawHeavy);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let test = generate_test_set(&syn, 20).unwrap();
    let cfg = EvalConfig::default();
    let upper = evaluate_method(&Procrustes(Region::Upper), &test, &psi, &cfg).unwrap();
    let head = evaluate_method(&Procrustes(Region::Head), &test, &psi, &cfg).unwrap();
    assert!(upper.row(Region::Face).unwrap().auc > head.row(Region::Face).unwrap().auc);
}

#[test]
fn unpose_with_exact_parameters_aligns_skulls() {
    let (psi, dist, lib) = fixture(LibraryKind::Standard);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let test = generate_test_set(&syn, 5).unwrap();
    let exact = evaluate_method(&Unpose { noise: 0.0 }, &test, &psi, &EvalConfig::default()).unwrap();
    assert!(exact.skull_median <= 1e-6);
    let noisy = evaluate_method(&Unpose { noise: 2.0 }, &test, &psi, &EvalConfig::default()).unwrap();
    assert!(noisy.skull_median > 0.1);
}

#[test]
fn skull_energy_is_minimal_at_ground_truth() {
    let (psi, dist, lib) = fixture(LibraryKind::Standard);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let s = syn.sample_full(7).unwrap();
    let base = skull_energy(&s.sample.gt, &s.source_skull, &s.target_skull).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let d = sample_random_rigid(0.01, 0.5, &mut rng);
        assert!(skull_energy(&s.sample.gt.compose(&d), &s.source_skull, &s.target_skull).unwrap() >= base);
    }
}

#[test]
fn report_round_trips_and_renders() {
    let (psi, dist, lib) = fixture(LibraryKind::Standard);
    let syn = Synthesizer::new(&SynthesisConfig::default(), &psi, &dist, &lib).unwrap();
    let test = generate_test_set(&syn, 3).unwrap();
    let cfg = EvalConfig::default();
    let methods = vec![
        evaluate_method(&Oracle, &test, &psi, &cfg).unwrap(),
        evaluate_method(&Procrustes(Region::Face), &test, &psi, &cfg).unwrap(),
    ];
    let report = EvalReport::new(3, thresholds(0.0, 5.0, 100).unwrap(), methods, serde_json::json!({"seed": 1}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    report.save(&path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), report);
    assert_eq!(report.to_csv().lines().count(), 1 + 2 * 3);
    let table = report.to_table();
    assert!(table.contains("proc_face") && table.contains("upper"));
}

#[test]
fn learned_method_checks_point_count() {
    let (psi, ..) = fixture(LibraryKind::Standard);
    let set = crate::predictor::TrainingSet {
        n_points: 7,
        sources: vec![0.0; 21],
        targets: vec![0.0; 21],
        gts: vec![RigidTransform::identity()],
    };
    let cfg = crate::predictor::PredictorConfig {
        extractor: vec![4],
        latent: 4,
        regressor: vec![4],
        ..Default::default()
    };
    let t = crate::predictor::Trainer::new(&cfg, Region::Frontal, &set, None).unwrap();
    assert!(matches!(Learned::new(t.predictor(), &psi), Err(Error::Incompatible(_))));
}
