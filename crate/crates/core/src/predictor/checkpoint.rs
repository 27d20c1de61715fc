use std::path::Path;

use serde_json::json;

use super::mlp::{Dense, Mlp};
use super::train::Adam;
use super::{Network, Normalization, Predictor, PredictorConfig};
use crate::container::{TensorData, TensorFile};
use crate::error::{Error, Result};
use crate::model::Region;

pub const CHECKPOINT_KIND: &str = "facestab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A predictor together with the optimizer state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub predictor: Predictor,
    pub adam: Adam,
    pub iteration: u64,
    /// Free-form provenance (input hashes and the like).
    pub info: serde_json::Value,
}

fn push_mlp(f: &mut TensorFile, prefix: &str, mlp: &Mlp<f32>) {
    for (i, l) in mlp.layers.iter().enumerate() {
        f.push(
            &format!("{prefix}.{i}.w"),
            vec![l.n_out, l.n_in],
            TensorData::F64(l.w.iter().map(|&x| x as f64).collect()),
        );
        f.push(&format!("{prefix}.{i}.b"), vec![l.n_out], TensorData::F64(l.b.iter().map(|&x| x as f64).collect()));
    }
}

fn read_mlp(f: &TensorFile, prefix: &str, sizes: &[usize], path: &Path) -> Result<Mlp<f32>> {
    let mut layers = Vec::new();
    for (i, s) in sizes.windows(2).enumerate() {
        let (shape, w) = f.f64s(&format!("{prefix}.{i}.w"), path)?;
        if shape != [s[1], s[0]] {
            return Err(Error::Incompatible(format!(
                "{}: layer {prefix}.{i} has shape {shape:?}, expected [{}, {}]",
                path.display(),
                s[1],
                s[0]
            )));
        }
        let (_, b) = f.f64s(&format!("{prefix}.{i}.b"), path)?;
        if b.len() != s[1] {
            return Err(Error::format(path, format!("bias {prefix}.{i} length")));
        }
        layers.push(Dense {
            n_in: s[0],
            n_out: s[1],
            w: w.iter().map(|&x| x as f32).collect(),
            b: b.iter().map(|&x| x as f32).collect(),
        });
    }
    Ok(Mlp { layers })
}

fn sizes(cfg: &PredictorConfig, n_in: usize) -> (Vec<usize>, Vec<usize>) {
    let mut fs = vec![n_in];
    fs.extend(&cfg.extractor);
    fs.push(cfg.latent);
    let mut rs = vec![2 * cfg.latent];
    rs.extend(&cfg.regressor);
    rs.push(super::OUTPUT_DIM);
    (fs, rs)
}

impl Checkpoint {
    pub fn to_file(&self) -> TensorFile {
        let p = &self.predictor;
        let meta = json!({
            "config": p.cfg,
            "mask": p.mask,
            "n_points": p.n_points,
            "iteration": self.iteration,
            "seed": p.cfg.seed,
            "norm_scale": p.norm.scale,
            "adam": {
                "beta1": self.adam.beta1,
                "beta2": self.adam.beta2,
                "eps": self.adam.eps,
                "steps": self.adam.steps,
            },
            "info": self.info,
        });
        let mut f = TensorFile::new(CHECKPOINT_KIND, CHECKPOINT_VERSION, meta);
        f.push("norm.mean", vec![p.norm.mean.len()], TensorData::F64(p.norm.mean.clone()));
        for (prefix, net) in [("net", &p.net), ("adam_m", &self.adam.m), ("adam_v", &self.adam.v)] {
            push_mlp(&mut f, &format!("{prefix}.extractor"), &net.extractor);
            push_mlp(&mut f, &format!("{prefix}.regressor"), &net.regressor);
        }
        f
    }

    pub fn from_file(f: &TensorFile, path: &Path) -> Result<Self> {
        f.expect_kind(CHECKPOINT_KIND, CHECKPOINT_VERSION, path)?;
        let meta = &f.meta;
        let field = |name: &str| Error::format(path, format!("bad {name}"));
        let cfg: PredictorConfig = serde_json::from_value(meta["config"].clone()).map_err(|_| field("config"))?;
        let mask: Region = serde_json::from_value(meta["mask"].clone()).map_err(|_| field("mask"))?;
        let n_points = meta["n_points"].as_u64().ok_or_else(|| field("n_points"))? as usize;
        let iteration = meta["iteration"].as_u64().ok_or_else(|| field("iteration"))?;
        let scale = meta["norm_scale"].as_f64().ok_or_else(|| field("norm_scale"))?;
        let adam_meta = &meta["adam"];
        let num = |k: &str| adam_meta[k].as_f64().ok_or_else(|| field(k));
        let (_, mean) = f.f64s("norm.mean", path)?;
        if mean.len() != 3 * n_points {
            return Err(field("norm.mean"));
        }
        let (fs, rs) = sizes(&cfg, 3 * n_points);
        let net = |prefix: &str| -> Result<Network<f32>> {
            Ok(Network {
                extractor: read_mlp(f, &format!("{prefix}.extractor"), &fs, path)?,
                regressor: read_mlp(f, &format!("{prefix}.regressor"), &rs, path)?,
            })
        };
        Ok(Self {
            predictor: Predictor {
                cfg: cfg.clone(),
                mask,
                n_points,
                norm: Normalization {
                    mean: mean.to_vec(),
                    scale,
                },
                net: net("net")?,
            },
            adam: Adam {
                beta1: num("beta1")?,
                beta2: num("beta2")?,
                eps: num("eps")?,
                steps: adam_meta["steps"].as_u64().ok_or_else(|| field("steps"))?,
                m: net("adam_m")?,
                v: net("adam_v")?,
            },
            iteration,
            info: meta["info"].clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::read(path)?, path)
    }

    /// Loads a checkpoint and checks it accepts `n_points` input points.
    pub fn load_for(path: &Path, n_points: usize) -> Result<Self> {
        let c = Self::load(path)?;
        if c.predictor.n_points != n_points {
            return Err(Error::Incompatible(format!(
                "{}: checkpoint expects {} input points, got {n_points}",
                path.display(),
                c.predictor.n_points
            )));
        }
        Ok(c)
    }
}
