use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use facestab::baselines::{cmap_select, cmap_train, CmapVariant, ConfidenceMap};
use facestab::container::{sha256_hex, write_atomic};
use facestab::eval::{
    evaluate_method, generate_test_set, thresholds, Cmap, EvalReport, Identity, Learned, Oracle, PairContext,
    Procrustes, Stabilizer, Unpose,
};
use facestab::geometry::{RigidTransform, VertexBlock};
use facestab::model::{synth_model, ModelData, Region};
use facestab::obj::Mesh;
use facestab::predictor::{Checkpoint, Trainer, TrainingSet};
use facestab::synthesis::{generate_dataset, Dataset, FullSample, LibraryKind, Synthesizer};
use facestab::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::{BaselineArgs, DataGenArgs, EvalArgs, ModelSynthArgs, StabilizeArgs, TrainArgs};

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn load_model(path: &Path) -> Result<ModelData> {
    ModelData::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_dataset(path: &Path, psi: Option<&ModelData>) -> Result<Dataset> {
    let ds = Dataset::read(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if let Some(psi) = psi {
        ds.check_model(psi).with_context(|| format!("dataset {}", path.display()))?;
    }
    Ok(ds)
}

fn parse_library(s: &str) -> LibraryKind {
    match s {
        "jaw_heavy" => LibraryKind::JawHeavy,
        _ => LibraryKind::Standard,
    }
}

pub fn model_synth(mut cfg: RunConfig, a: ModelSynthArgs) -> Result<()> {
    let m = &mut cfg.model;
    m.seed = a.seed.unwrap_or(m.seed);
    m.vertices = a.vertices.unwrap_or(m.vertices);
    m.identity = a.identity.unwrap_or(m.identity);
    m.expression = a.expression.unwrap_or(m.expression);
    let out = a.out.unwrap_or(cfg.paths.model);
    let psi = synth_model(m.seed, m.vertices, m.identity, m.expression)?;
    psi.save(&out)?;
    if let Some(obj) = a.obj {
        Mesh {
            vertices: psi.template.clone(),
            faces: psi.faces.clone(),
        }
        .save(&obj)?;
    }
    println!(
        "model {}: {} vertices, {} faces, {} joints, {} identity and {} expression bases, {} skull points",
        out.display(),
        psi.n_vertices(),
        psi.faces.len(),
        psi.n_joints(),
        psi.n_identity(),
        psi.n_expression(),
        psi.skull.len()
    );
    for r in Region::ALL {
        println!("  mask {:14} {:6}", r.as_str(), psi.mask(r).len());
    }
    println!("  sha256 {}", file_hash(&out)?);
    Ok(())
}

pub fn data_gen(cfg: RunConfig, a: DataGenArgs) -> Result<()> {
    let model_path = a.model.unwrap_or(cfg.paths.model.clone());
    let psi = load_model(&model_path)?;
    let mut syn = if a.validation {
        cfg.validation_synthesis()
    } else {
        cfg.synthesis.clone()
    };
    syn.count = a.count.unwrap_or(syn.count);
    syn.master_seed = a.seed.unwrap_or(syn.master_seed);
    syn.eps_expr = a.eps_expr.or(syn.eps_expr);
    syn.eps_r = a.eps_r_deg.map_or(syn.eps_r, f64::to_radians);
    syn.eps_t = a.eps_t.unwrap_or(syn.eps_t);
    if let Some(mask) = a.mask {
        syn.mask = mask.parse()?;
    }
    let kind = a.library.as_deref().map_or(cfg.library.kind, parse_library);
    let out = a.out.unwrap_or(if a.validation {
        cfg.paths.validation.clone()
    } else {
        cfg.paths.dataset.clone()
    });
    let dist = cfg.identity_distribution(&psi)?;
    let library = cfg.expression_library(&psi, kind)?;
    let ds = generate_dataset(&syn, &psi, &dist, &library)?;
    ds.write(&out)?;
    println!(
        "dataset {}: {} pairs of {} points (mask {}), master seed {}, sha256 {}",
        out.display(),
        ds.len(),
        ds.header.n_points,
        ds.header.mask,
        syn.master_seed,
        file_hash(&out)?
    );
    Ok(())
}

fn append_line(path: &Path, line: &str) -> facestab::Result<()> {
    let write = || -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{line}")
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let data_path = a.data.unwrap_or(cfg.paths.dataset.clone());
    let data = load_dataset(&data_path, None)?;
    let mut set = TrainingSet::from_samples(&data.samples)?;
    if let Some(n) = a.limit {
        set = set.truncated(n);
    }
    let val_path = a.val.or_else(|| cfg.paths.validation.exists().then(|| cfg.paths.validation.clone()));
    let val = match &val_path {
        Some(p) => Some(TrainingSet::from_samples(&load_dataset(p, None)?.samples)?),
        None => None,
    };
    if let Some(v) = &val {
        if v.n_points != set.n_points {
            bail!("validation pairs have {} points, training pairs {}", v.n_points, set.n_points);
        }
    }

    let p = &mut cfg.predictor;
    p.iterations = a.iterations.unwrap_or(p.iterations);
    p.learning_rate = a.lr.unwrap_or(p.learning_rate);
    p.batch_size = a.batch_size.unwrap_or(p.batch_size);
    p.seed = a.seed.unwrap_or(p.seed);
    p.log_every = a.log_every.unwrap_or(p.log_every);
    let checkpoint_dir = a.checkpoint_dir.unwrap_or(cfg.paths.checkpoint_dir.clone());
    let checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    let out = a.out.unwrap_or(cfg.paths.predictor.clone());
    let log = a.log.unwrap_or(cfg.paths.log.clone());

    let mut trainer = match &a.resume {
        Some(path) => {
            let c = Checkpoint::load_for(path, set.n_points)?;
            let mut t = Trainer::resume(c.predictor, c.adam, c.iteration, &set, val.as_ref())?;
            t.cfg.iterations = cfg.predictor.iterations;
            t.cfg.log_every = cfg.predictor.log_every;
            t
        }
        None => {
            if log.exists() {
                std::fs::remove_file(&log)?;
            }
            Trainer::new(&cfg.predictor, data.header.mask, &set, val.as_ref())?
        }
    };
    let info = json!({
        "predictor": trainer.cfg,
        "train_pairs": set.len(),
        "train_hash": file_hash(&data_path)?,
        "validation_hash": val_path.as_deref().map(file_hash).transpose()?,
        "model_hash": data.header.model_hash,
        "resumed_from": a.resume.as_deref().map(file_hash).transpose()?,
    });
    println!(
        "training on {} pairs of {} points from iteration {} to {}",
        set.len(),
        set.n_points,
        trainer.iteration,
        trainer.cfg.iterations
    );

    let mut last_saved = trainer.iteration;
    let result = trainer.run(|record, t| {
        append_line(&log, &serde_json::to_string(record).expect("record serializes"))?;
        println!(
            "iter {:>7} loss {:.5} (rot {:.5}, trans {:.5}){}",
            record.iteration,
            record.loss,
            record.rotation,
            record.translation,
            record.val_md.map(|m| format!(" val m_d {m:.4} mm")).unwrap_or_default()
        );
        // log records are the only stopping points, so save once a multiple is passed
        if checkpoint_every > 0 && t.iteration / checkpoint_every > last_saved / checkpoint_every {
            let c = t.checkpoint(info.clone());
            c.save(&checkpoint_dir.join(format!("ckpt-{:08}.bin", t.iteration)))?;
            c.save(&checkpoint_dir.join("last.bin"))?;
            last_saved = t.iteration;
        }
        Ok(())
    });
    if let Err(e) = result {
        if let Error::Diverged { iteration, loss } = e {
            let path = checkpoint_dir.join("last-good.bin");
            trainer.checkpoint(info).save(&path)?;
            bail!("training diverged at iteration {iteration} (loss {loss}); last good state saved to {}", path.display());
        }
        return Err(e.into());
    }
    trainer.checkpoint(info).save(&out)?;
    println!("predictor {} sha256 {}", out.display(), file_hash(&out)?);
    Ok(())
}

/// Re-derives the full-mesh pairs behind dataset records.
fn full_pairs(ds: &Dataset, psi: &ModelData, n: usize) -> Result<Vec<FullSample>> {
    let h = &ds.header;
    let syn = Synthesizer::new(&h.config, psi, &h.identity, &h.library)?;
    ds.samples
        .par_iter()
        .take(n)
        .map(|s| syn.sample_full(s.seed).map_err(anyhow::Error::from))
        .collect()
}

pub fn baseline(mut cfg: RunConfig, a: BaselineArgs) -> Result<()> {
    let psi = load_model(&a.model.unwrap_or(cfg.paths.model.clone()))?;
    let data_path = a.data.unwrap_or(cfg.paths.dataset.clone());
    let val_path = a.val.unwrap_or(cfg.paths.validation.clone());
    let out = a.out.unwrap_or(cfg.paths.cmap.clone());
    let c = &mut cfg.cmap;
    if let Some(v) = &a.variant {
        c.variant = v.parse::<CmapVariant>()?;
    }
    c.alpha_data = a.alpha_data.unwrap_or(c.alpha_data);
    c.alpha_reg = a.alpha_reg.unwrap_or(c.alpha_reg);
    c.alpha_sigma = a.alpha_sigma.unwrap_or(c.alpha_sigma);
    c.alpha_n = a.alpha_n.unwrap_or(c.alpha_n);
    c.rho = a.rho.unwrap_or(c.rho);
    c.k = a.k.unwrap_or(c.k);
    c.steps = a.steps.unwrap_or(c.steps);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.seed = a.seed.unwrap_or(c.seed);
    let n = a.pairs.unwrap_or(cfg.cmap_train_pairs);

    let train = load_dataset(&data_path, Some(&psi))?;
    let pairs: Vec<(VertexBlock, VertexBlock)> = full_pairs(&train, &psi, n)?
        .into_iter()
        .map(|f| (f.source_mesh, f.target_mesh))
        .collect();
    let (map, step, val_md) = match a.step_size {
        Some(step) => {
            cfg.cmap.step_size = step;
            (cmap_train(&pairs, &psi, &cfg.cmap)?, step, None)
        }
        None => {
            let val = load_dataset(&val_path, Some(&psi))?;
            let triples: Vec<_> = full_pairs(&val, &psi, val.len())?
                .into_iter()
                .map(|f| (f.source_mesh, f.target_mesh, f.sample.gt))
                .collect();
            let (map, step, md) = cmap_select(&pairs, &triples, &psi, &cfg.cmap)?;
            (map, step, Some(md))
        }
    };
    let map = map.rounded();
    let info = json!({
        "cmap": cfg.cmap,
        "chosen_step_size": step,
        "validation_md": val_md,
        "pairs": pairs.len(),
        "train_hash": file_hash(&data_path)?,
        "model_hash": psi.content_hash(),
    });
    map.save(&out, info)?;
    println!(
        "confidence map {} ({}, {} weights): step {step}, std {:.4}{}",
        out.display(),
        map.variant.as_str(),
        map.weights.len(),
        map.std(),
        val_md.map(|m| format!(", validation m_d {m:.4} mm")).unwrap_or_default()
    );
    Ok(())
}

fn build_method(name: &str, cfg: &RunConfig, psi: &ModelData, predictor: Option<&Path>, cmap: Option<&Path>) -> Result<Box<dyn Stabilizer>> {
    Ok(match name {
        "oracle" => Box::new(Oracle),
        "identity" => Box::new(Identity),
        "unpose" => Box::new(Unpose { noise: 0.0 }),
        "unpose_noisy" => Box::new(Unpose {
            noise: cfg.test.unpose_noise,
        }),
        "ours" => {
            let path = predictor.map_or(cfg.paths.predictor.clone(), Path::to_path_buf);
            let c = Checkpoint::load(&path).with_context(|| format!("loading predictor {}", path.display()))?;
            Box::new(Learned::new(c.predictor, psi)?)
        }
        "cmap" => {
            let path = cmap.map_or(cfg.paths.cmap.clone(), Path::to_path_buf);
            Box::new(Cmap(ConfidenceMap::load(&path).with_context(|| format!("loading confidence map {}", path.display()))?))
        }
        other => match other.strip_prefix("proc_") {
            Some(region) => Box::new(Procrustes(region.parse()?)),
            None => bail!("unknown method `{other}`"),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    source: PathBuf,
    target: PathBuf,
    out_mesh: PathBuf,
    out_transform: PathBuf,
}

fn stabilize_one(e: &ManifestEntry, method: &dyn Stabilizer, psi: &ModelData, echo: &serde_json::Value) -> Result<RigidTransform> {
    let source = Mesh::load(&e.source)?;
    let target = Mesh::load(&e.target)?;
    for (m, p) in [(&source, &e.source), (&target, &e.target)] {
        if m.vertices.len() != psi.n_vertices() {
            bail!("{} has {} vertices, the model has {}", p.display(), m.vertices.len(), psi.n_vertices());
        }
    }
    let s = method.stabilize(&PairContext::meshes(&source.vertices, &target.vertices), psi)?;
    let moved = Mesh {
        vertices: s.apply(&source.vertices),
        faces: if source.faces.is_empty() { psi.faces.clone() } else { source.faces.clone() },
    };
    let m = s.to_row_major();
    let record = json!({
        "method": method.name(),
        "matrix": m.chunks(4).collect::<Vec<_>>(),
        "source_hash": file_hash(&e.source)?,
        "target_hash": file_hash(&e.target)?,
        "config": echo,
    });
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    moved.save(&e.out_mesh)?;
    if let Err(err) = write_atomic(&e.out_transform, text.as_bytes()) {
        let _ = std::fs::remove_file(&e.out_mesh);
        return Err(err.into());
    }
    Ok(s)
}

pub fn stabilize(cfg: RunConfig, a: StabilizeArgs) -> Result<()> {
    let model_path = a.model.clone().unwrap_or(cfg.paths.model.clone());
    let psi = load_model(&model_path)?;
    let method = build_method(&a.method, &cfg, &psi, a.predictor.as_deref(), a.cmap.as_deref())?;
    let mut echo = json!({ "model_hash": file_hash(&model_path)?, "method": a.method });
    match a.method.as_str() {
        "ours" => echo["predictor_hash"] = json!(file_hash(a.predictor.as_deref().unwrap_or(&cfg.paths.predictor))?),
        "cmap" => echo["cmap_hash"] = json!(file_hash(a.cmap.as_deref().unwrap_or(&cfg.paths.cmap))?),
        _ => {}
    }
    let entries: Vec<ManifestEntry> = match (&a.manifest, &a.source) {
        (Some(m), _) => {
            let text = std::fs::read_to_string(m).with_context(|| format!("reading manifest {}", m.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", m.display()))?
        }
        (None, Some(source)) => vec![ManifestEntry {
            source: source.clone(),
            target: a.target.clone().ok_or_else(|| anyhow!("--target is required"))?,
            out_mesh: a.out_mesh.clone().ok_or_else(|| anyhow!("--out-mesh is required"))?,
            out_transform: a.out_transform.clone().ok_or_else(|| anyhow!("--out-transform is required"))?,
        }],
        (None, None) => bail!("give --source/--target or --manifest"),
    };
    let results: Vec<Result<RigidTransform>> = entries
        .par_iter()
        .map(|e| stabilize_one(e, method.as_ref(), &psi, &echo).with_context(|| format!("pair {}", e.source.display())))
        .collect();
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(s) => println!("{} -> {} (rotation {:.4} deg)", e.source.display(), e.out_mesh.display(), s.angle().to_degrees()),
            Err(err) => {
                eprintln!("error: {err:#}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} pairs failed", entries.len());
    }
    Ok(())
}

pub fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let model_path = a.model.clone().unwrap_or(cfg.paths.model.clone());
    let psi = load_model(&model_path)?;
    let t = &mut cfg.test;
    t.count = a.count.unwrap_or(t.count);
    t.master_seed = a.seed.unwrap_or(t.master_seed);
    t.library = a.library.as_deref().map_or(t.library, parse_library);
    t.head_pose_deg = a.head_pose_deg.unwrap_or(t.head_pose_deg);
    t.unpose_noise = a.unpose_noise.unwrap_or(t.unpose_noise);
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    let out = a.out.unwrap_or(cfg.paths.report.clone());

    let dist = cfg.identity_distribution(&psi)?;
    let library = cfg.expression_library(&psi, cfg.test.library)?;
    let syn = Synthesizer::new(&cfg.test_synthesis(), &psi, &dist, &library)?;
    let test = generate_test_set(&syn, cfg.test.count)?;

    let mut hashes = json!({ "model": file_hash(&model_path)? });
    let mut reports = Vec::new();
    for name in &cfg.methods {
        let method = build_method(name, &cfg, &psi, a.predictor.as_deref(), a.cmap.as_deref())?;
        match name.as_str() {
            "ours" => hashes["predictor"] = json!(file_hash(a.predictor.as_deref().unwrap_or(&cfg.paths.predictor))?),
            "cmap" => hashes["cmap"] = json!(file_hash(a.cmap.as_deref().unwrap_or(&cfg.paths.cmap))?),
            _ => {}
        }
        reports.push(evaluate_method(method.as_ref(), &test, &psi, &cfg.eval)?);
    }
    let echo = json!({
        "test": cfg.test,
        "synthesis": cfg.test_synthesis(),
        "identity": cfg.identity,
        "library": cfg.library,
        "eval": cfg.eval,
        "methods": cfg.methods,
        "hashes": hashes,
    });
    let grid = thresholds(cfg.eval.pck_range_mm.0, cfg.eval.pck_range_mm.1, cfg.eval.pck_resolution)?;
    let report = EvalReport::new(test.len(), grid, reports, echo);
    report.save(&out)?;
    if let Some(csv) = a.csv {
        write_atomic(&csv, report.to_csv().as_bytes())?;
    }
    print!("{}", report.to_table());
    println!("report {} sha256 {}", out.display(), file_hash(&out)?);
    Ok(())
}
