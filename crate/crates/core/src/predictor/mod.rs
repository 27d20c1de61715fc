//! The learned stabilizer: a shared feature extractor applied to both meshes
//! of a pair, and a regressor mapping the joined codes to a rigid transform.

mod checkpoint;
pub mod mlp;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, VertexBlock};
use crate::model::{ModelData, Region};
use crate::synthesis::{neutral_template, prealignment};

pub use checkpoint::{Checkpoint, CHECKPOINT_KIND, CHECKPOINT_VERSION};
pub use network::{decode_output, pose_loss, LossParts, Network, PredictorConfig, OUTPUT_DIM};
pub use train::{mean_source_error, Adam, LogRecord, Trainer, TrainingSet};

/// Input standardization: per-coordinate training mean and one global scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Normalization {
    pub fn fit(set: &TrainingSet) -> Self {
        let dim = set.dim();
        let n = set.len() as f64;
        let mut mean = vec![0.0; dim];
        // sources and targets share a coordinate layout, so both feed the mean
        for i in 0..set.len() {
            for (m, (s, t)) in mean.iter_mut().zip(set.source(i).iter().zip(set.target(i))) {
                *m += (*s as f64 + *t as f64) / (2.0 * n);
            }
        }
        let mut var = 0.0;
        for i in 0..set.len() {
            for block in [set.source(i), set.target(i)] {
                for (m, x) in mean.iter().zip(block) {
                    var += (*x as f64 - m).powi(2);
                }
            }
        }
        let scale = (var / (2.0 * n * dim as f64)).sqrt();
        Self {
            mean,
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    /// Appends the standardized coordinates of one block.
    pub fn extend(&self, out: &mut Vec<f32>, block: &[f32]) {
        out.extend(block.iter().zip(&self.mean).map(|(x, m)| ((*x as f64 - m) / self.scale) as f32));
    }

    pub fn apply(&self, block: &VertexBlock) -> Vec<f32> {
        let raw: Vec<f32> = block.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
        let mut out = Vec::with_capacity(raw.len());
        self.extend(&mut out, &raw);
        out
    }
}

/// Trained weights plus everything needed to apply them.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    pub mask: Region,
    pub n_points: usize,
    pub norm: Normalization,
    pub net: Network<f32>,
}

/// Pairs processed per forward pass at inference time.
const INFERENCE_BATCH: usize = 256;

impl Predictor {
    fn check_block(&self, v: &VertexBlock) -> Result<()> {
        if v.len() != self.n_points {
            return Err(Error::SizeMismatch {
                what: "predictor input points",
                expected: self.n_points,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Latent code of one preprocessed block.
    pub fn feature_extract(&self, v: &VertexBlock) -> Result<Vec<f64>> {
        self.check_block(v)?;
        Ok(self.net.features(&self.norm.apply(v), 1).into_iter().map(f64::from).collect())
    }

    /// Transform taking the preprocessed source onto the preprocessed target.
    pub fn predict(&self, vs_hat: &VertexBlock, vt_hat: &VertexBlock) -> Result<RigidTransform> {
        self.check_block(vs_hat)?;
        self.check_block(vt_hat)?;
        let out = self.net.predict(&self.norm.apply(vs_hat), &self.norm.apply(vt_hat), 1)?;
        Ok(out[0])
    }

    /// Predictions for every pair of a compact set.
    pub fn predict_set(&self, set: &TrainingSet) -> Result<Vec<RigidTransform>> {
        if set.n_points != self.n_points {
            return Err(Error::SizeMismatch {
                what: "predictor input points",
                expected: self.n_points,
                got: set.n_points,
            });
        }
        let mut out = Vec::with_capacity(set.len());
        let mut start = 0;
        while start < set.len() {
            let end = (start + INFERENCE_BATCH).min(set.len());
            let mut xs = Vec::new();
            let mut xt = Vec::new();
            for i in start..end {
                self.norm.extend(&mut xs, set.source(i));
                self.norm.extend(&mut xt, set.target(i));
            }
            out.extend(self.net.predict(&xs, &xt, end - start)?);
            start = end;
        }
        Ok(out)
    }

    /// Stabilizes a full-mesh pair: pre-aligns it, predicts in the
    /// preprocessed frame and maps the result back to the input frames.
    /// Returns the world-frame transform and the moved source mesh.
    pub fn stabilize_pair(
        &self,
        vs_full: &VertexBlock,
        vt_full: &VertexBlock,
        psi: &ModelData,
    ) -> Result<(RigidTransform, VertexBlock)> {
        let mask = psi.mask(self.mask);
        let template_hat = neutral_template(psi, mask)?;
        self.stabilize_with(vs_full, vt_full, mask, &template_hat)
    }

    /// As [`Predictor::stabilize_pair`] with a precomputed mask and template.
    pub fn stabilize_with(
        &self,
        vs_full: &VertexBlock,
        vt_full: &VertexBlock,
        mask: &[usize],
        template_hat: &VertexBlock,
    ) -> Result<(RigidTransform, VertexBlock)> {
        let (a_s, a_t) = prealignment(vs_full, vt_full, mask, template_hat)?;
        let s = self.predict(&a_s.apply(&vs_full.select(mask)), &a_t.apply(&vt_full.select(mask)))?;
        let world = a_t.inverse().compose(&s).compose(&a_s);
        Ok((world, world.apply(vs_full)))
    }
}

#[cfg(test)]
mod tests;
