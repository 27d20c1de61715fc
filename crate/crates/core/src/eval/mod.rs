//! Error metrics over head regions and the stabilizer harness that
//! produces comparison reports.

mod metrics;
mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cmap_stabilize, perturb_pose, proc_baseline, unpose_baseline, ConfidenceMap};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, VertexBlock};
use crate::model::{ModelData, ModelParams, Region};
use crate::predictor::Predictor;
use crate::synthesis::{neutral_template, sample_seed, FullSample, Synthesizer};

pub use metrics::{
    max_vertex_distance, mean_std, mean_vertex_distance, median, pck_auc, pck_from_errors, skull_energy, thresholds,
    vertex_errors, Pck,
};
pub use report::{EvalReport, MethodReport, RegionRow, REPORT_KIND, REPORT_VERSION};

/// What a stabilizer may look at for one pair. Meshes are in model
/// topology; parameters and ground truth exist only for synthetic data.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub source: &'a VertexBlock,
    pub target: &'a VertexBlock,
    pub source_params: Option<&'a ModelParams>,
    pub target_params: Option<&'a ModelParams>,
    pub gt: Option<&'a RigidTransform>,
    pub seed: u64,
}

impl<'a> PairContext<'a> {
    pub fn meshes(source: &'a VertexBlock, target: &'a VertexBlock) -> Self {
        Self {
            source,
            target,
            source_params: None,
            target_params: None,
            gt: None,
            seed: 0,
        }
    }

    pub fn from_sample(s: &'a FullSample) -> Self {
        Self {
            source: &s.source_mesh,
            target: &s.target_mesh,
            source_params: Some(&s.source_params),
            target_params: Some(&s.target_params),
            gt: Some(&s.sample.gt),
            seed: s.sample.seed,
        }
    }
}

/// Anything that maps a source/target pair to the transform moving the
/// source onto the target.
pub trait Stabilizer: Sync {
    fn name(&self) -> String;
    fn stabilize(&self, pair: &PairContext, psi: &ModelData) -> Result<RigidTransform>;
}

/// Returns the known ground truth.
pub struct Oracle;

impl Stabilizer for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn stabilize(&self, pair: &PairContext, _: &ModelData) -> Result<RigidTransform> {
        pair.gt.copied().ok_or(Error::Empty("ground-truth transform"))
    }
}

/// Leaves the source where it is.
pub struct Identity;

impl Stabilizer for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn stabilize(&self, _: &PairContext, _: &ModelData) -> Result<RigidTransform> {
        Ok(RigidTransform::identity())
    }
}

pub struct Procrustes(pub Region);

impl Stabilizer for Procrustes {
    fn name(&self) -> String {
        format!("proc_{}", self.0)
    }

    fn stabilize(&self, pair: &PairContext, psi: &ModelData) -> Result<RigidTransform> {
        proc_baseline(pair.source, pair.target, psi, self.0)
    }
}

/// Model unposing from the generating parameters, optionally corrupted by
/// pose noise of the given level (degrees and millimeters).
pub struct Unpose {
    pub noise: f64,
}

impl Stabilizer for Unpose {
    fn name(&self) -> String {
        if self.noise == 0.0 {
            "unpose".into()
        } else {
            format!("unpose_noise{}", self.noise)
        }
    }

    fn stabilize(&self, pair: &PairContext, psi: &ModelData) -> Result<RigidTransform> {
        let (Some(ps), Some(pt)) = (pair.source_params, pair.target_params) else {
            return Err(Error::Empty("model parameters"));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(pair.seed, 0x756e_706f_7365));
        let ps = perturb_pose(ps, self.noise, &mut rng);
        let pt = perturb_pose(pt, self.noise, &mut rng);
        unpose_baseline(&ps, &pt, psi)
    }
}

/// The trained predictor with its pre-alignment template cached.
pub struct Learned {
    pub predictor: Predictor,
    mask: Vec<usize>,
    template_hat: VertexBlock,
}

impl Learned {
    pub fn new(predictor: Predictor, psi: &ModelData) -> Result<Self> {
        let mask = psi.mask(predictor.mask).to_vec();
        if mask.len() != predictor.n_points {
            return Err(Error::Incompatible(format!(
                "predictor expects {} points, the model's {} mask has {}",
                predictor.n_points,
                predictor.mask,
                mask.len()
            )));
        }
        let template_hat = neutral_template(psi, &mask)?;
        Ok(Self {
            predictor,
            mask,
            template_hat,
        })
    }
}

impl Stabilizer for Learned {
    fn name(&self) -> String {
        "ours".into()
    }

    fn stabilize(&self, pair: &PairContext, _: &ModelData) -> Result<RigidTransform> {
        let (a_s, a_t) = crate::synthesis::prealignment(pair.source, pair.target, &self.mask, &self.template_hat)?;
        let s = self
            .predictor
            .predict(&a_s.apply(&pair.source.select(&self.mask)), &a_t.apply(&pair.target.select(&self.mask)))?;
        Ok(a_t.inverse().compose(&s).compose(&a_s))
    }
}

pub struct Cmap(pub ConfidenceMap);

impl Stabilizer for Cmap {
    fn name(&self) -> String {
        format!("cmap_{}", self.0.variant.as_str())
    }

    fn stabilize(&self, pair: &PairContext, psi: &ModelData) -> Result<RigidTransform> {
        cmap_stabilize(&self.0, pair.source, pair.target, psi)
    }
}

/// Regions and PCK sampling used by [`evaluate_method`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub regions: Vec<Region>,
    pub pck_range_mm: (f64, f64),
    pub pck_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            regions: Region::EVALUATION.to_vec(),
            pck_range_mm: (0.0, 5.0),
            pck_resolution: 100,
        }
    }
}

/// Full synthetic test pairs `0..count` of the synthesizer's master seed.
pub fn generate_test_set(synth: &Synthesizer, count: usize) -> Result<Vec<FullSample>> {
    let master = synth.config().master_seed;
    (0..count as u64)
        .into_par_iter()
        .map(|i| synth.sample_full(sample_seed(master, i)))
        .collect()
}

/// Transforms a method assigns to every test pair, in order.
pub fn stabilize_all(method: &dyn Stabilizer, samples: &[FullSample], psi: &ModelData) -> Result<Vec<RigidTransform>> {
    samples
        .par_iter()
        .map(|s| method.stabilize(&PairContext::from_sample(s), psi))
        .collect()
}

/// Scores one method on a synthetic test set. The reference positions are
/// the source vertices moved by the ground truth.
pub fn evaluate_method(method: &dyn Stabilizer, samples: &[FullSample], psi: &ModelData, cfg: &EvalConfig) -> Result<MethodReport> {
    let transforms = stabilize_all(method, samples, psi)?;
    score_transforms(method.name(), &transforms, samples, psi, cfg)
}

/// Scores given per-pair transforms against the test set.
pub fn score_transforms(
    name: String,
    transforms: &[RigidTransform],
    samples: &[FullSample],
    psi: &ModelData,
    cfg: &EvalConfig,
) -> Result<MethodReport> {
    if samples.is_empty() {
        return Err(Error::Empty("test samples"));
    }
    crate::model::size_check("transforms", samples.len(), transforms.len())?;
    if cfg.regions.is_empty() {
        return Err(Error::Empty("evaluation regions"));
    }
    let mut rows = Vec::with_capacity(cfg.regions.len());
    for &region in &cfg.regions {
        let mask = psi.mask(region);
        let per_sample: Vec<Vec<f64>> = samples
            .par_iter()
            .zip(transforms)
            .map(|(s, t)| {
                let v = s.source_mesh.select(mask);
                vertex_errors(&t.apply(&v), &s.sample.gt.apply(&v))
            })
            .collect::<Result<_>>()?;
        let all: Vec<f64> = per_sample.iter().flatten().copied().collect();
        let (md, md_std) = mean_std(&all);
        let mx = per_sample.iter().map(|e| e.iter().copied().fold(0.0, f64::max)).sum::<f64>() / samples.len() as f64;
        let pck = pck_from_errors(&all, cfg.pck_range_mm, cfg.pck_resolution)?;
        rows.push(RegionRow {
            region,
            md,
            md_std,
            mx,
            auc: pck.auc,
            pck: pck.curve,
        });
    }
    let skull: Vec<f64> = samples
        .par_iter()
        .zip(transforms)
        .map(|(s, t)| skull_energy(t, &s.source_skull, &s.target_skull))
        .collect::<Result<_>>()?;
    Ok(MethodReport {
        method: name,
        rows,
        skull_median: median(&skull),
        skull_mean: skull.iter().sum::<f64>() / skull.len() as f64,
    })
}

#[cfg(test)]
mod tests;
