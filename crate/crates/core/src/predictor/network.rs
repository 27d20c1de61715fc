use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, Real, Trace};
use crate::error::{Error, Result};
use crate::geometry::{GramSchmidt, RigidTransform};

/// Number of raw regressor outputs: a 6D rotation and a translation.
pub const OUTPUT_DIM: usize = 9;

/// Architecture and optimization settings of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Hidden widths of the feature extractor.
    pub extractor: Vec<usize>,
    pub latent: usize,
    /// Hidden widths of the regressor.
    pub regressor: Vec<usize>,
    pub learning_rate: f64,
    /// Learning rate at the last iteration as a fraction of the initial one,
    /// reached by cosine decay. 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub alpha_t: f64,
    pub seed: u64,
    /// Iterations between log records (and validation passes).
    pub log_every: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            extractor: vec![1024, 512, 512],
            latent: 256,
            regressor: vec![512, 512, 512],
            learning_rate: 5e-5,
            final_lr_fraction: 1.0,
            iterations: 20_000,
            batch_size: 32,
            alpha_t: 1.0,
            seed: 0,
            log_every: 1000,
        }
    }
}

impl PredictorConfig {
    /// Settings for short schedules of a few ten thousand iterations: a
    /// larger, cosine-decayed step and translation measured in centimeters
    /// relative to the rotation term.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 2e-4,
            final_lr_fraction: 0.05,
            alpha_t: 0.1,
            ..Self::default()
        }
    }

    /// Learning rate for the update that follows `iteration` completed ones.
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let progress = (iteration as f64 / self.iterations.max(1) as f64).min(1.0);
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.extractor.iter().chain(&self.regressor).any(|&s| s == 0) || self.latent == 0 {
            return bad("layer sizes must be positive");
        }
        if !(self.alpha_t >= 0.0 && self.alpha_t.is_finite()) {
            return bad("alpha_t must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return bad("final learning-rate fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.log_every == 0 {
            return bad("log interval must be positive");
        }
        Ok(())
    }
}

/// Shared feature extractor `F` and regressor `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub extractor: Mlp<T>,
    pub regressor: Mlp<T>,
}

/// Loss value split into its rotation and translation terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub rotation: f64,
    pub translation: f64,
}

impl std::ops::AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.rotation += o.rotation;
        self.translation += o.translation;
    }
}

impl std::ops::Div<f64> for LossParts {
    type Output = LossParts;

    fn div(self, d: f64) -> LossParts {
        LossParts {
            total: self.total / d,
            rotation: self.rotation / d,
            translation: self.translation / d,
        }
    }
}

/// Turns nine raw outputs into a rigid transform.
pub fn decode_output(raw: &[f64; OUTPUT_DIM]) -> Result<RigidTransform> {
    let frame = GramSchmidt::new(raw[..6].try_into().expect("six values"))?;
    Ok(RigidTransform::from_parts_unchecked(frame.matrix(), Vector3::new(raw[6], raw[7], raw[8])))
}

/// `||R_gt - R||_F + alpha_t ||t_gt - t||` for one prediction, together with
/// its gradient with respect to the nine raw outputs.
pub fn pose_loss(raw: &[f64; OUTPUT_DIM], gt: &RigidTransform, alpha_t: f64) -> Result<(LossParts, [f64; OUTPUT_DIM])> {
    let frame = GramSchmidt::new(raw[..6].try_into().expect("six values"))?;
    let dr: Matrix3<f64> = frame.matrix() - gt.rotation();
    let rotation = dr.norm();
    let grad_r = if rotation > 0.0 { dr / rotation } else { Matrix3::zeros() };
    let dt = Vector3::new(raw[6], raw[7], raw[8]) - gt.translation();
    let translation = dt.norm();
    let grad_t = if translation > 0.0 { dt * (alpha_t / translation) } else { Vector3::zeros() };

    let g6 = frame.backward(&grad_r);
    let mut grad = [0.0; OUTPUT_DIM];
    grad[..6].copy_from_slice(&g6);
    grad[6..].copy_from_slice(grad_t.as_slice());
    Ok((
        LossParts {
            total: rotation + alpha_t * translation,
            rotation,
            translation,
        },
        grad,
    ))
}

/// Intermediate results of a batched forward pass.
pub struct Forward<T> {
    pub batch: usize,
    inputs: Vec<T>,
    extractor: Trace<T>,
    joint: Vec<T>,
    regressor: Trace<T>,
}

impl<T> Forward<T> {
    /// Raw `[batch][9]` outputs.
    pub fn outputs(&self) -> &[T] {
        self.regressor.output()
    }
}

impl<T: Real> Network<T> {
    /// Fresh weights for inputs of width `n_in`. The last regressor bias
    /// starts at the identity transform.
    pub fn new<R: Rng + ?Sized>(cfg: &PredictorConfig, n_in: usize, rng: &mut R) -> Self {
        let mut fs = vec![n_in];
        fs.extend(&cfg.extractor);
        fs.push(cfg.latent);
        let mut rs = vec![2 * cfg.latent];
        rs.extend(&cfg.regressor);
        rs.push(OUTPUT_DIM);
        let extractor = Mlp::new(&fs, rng);
        let mut regressor = Mlp::new(&rs, rng);
        let last = regressor.layers.last_mut().expect("nonempty");
        for (b, v) in last.b.iter_mut().zip([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]) {
            *b = T::of(v);
        }
        Self { extractor, regressor }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.zeros_like(),
            regressor: self.regressor.zeros_like(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.extractor.n_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.extractor.n_out()
    }

    pub fn n_params(&self) -> usize {
        self.extractor.n_params() + self.regressor.n_params()
    }

    /// Latent codes of `batch` stacked inputs.
    pub fn features(&self, x: &[T], batch: usize) -> Vec<T> {
        self.extractor.forward(x, batch).outputs.pop().expect("nonempty")
    }

    /// Runs both sources and targets through the shared extractor, joins
    /// each pair's codes (source first) and regresses the raw outputs.
    pub fn forward(&self, sources: &[T], targets: &[T], batch: usize) -> Forward<T> {
        let n_in = self.n_in();
        assert_eq!(sources.len(), batch * n_in, "source extent");
        assert_eq!(targets.len(), batch * n_in, "target extent");
        let mut inputs = Vec::with_capacity(2 * batch * n_in);
        inputs.extend_from_slice(sources);
        inputs.extend_from_slice(targets);
        let extractor = self.extractor.forward(&inputs, 2 * batch);
        let l = self.latent_dim();
        let z = extractor.output();
        let mut joint = Vec::with_capacity(batch * 2 * l);
        for b in 0..batch {
            joint.extend_from_slice(&z[b * l..(b + 1) * l]);
            joint.extend_from_slice(&z[(batch + b) * l..(batch + b + 1) * l]);
        }
        let regressor = self.regressor.forward(&joint, batch);
        Forward {
            batch,
            inputs,
            extractor,
            joint,
            regressor,
        }
    }

    /// Accumulates parameter gradients given the gradient of the loss with
    /// respect to the raw outputs.
    pub fn backward(&self, fwd: &Forward<T>, d_out: &[T], grads: &mut Network<T>) {
        let batch = fwd.batch;
        let l = self.latent_dim();
        let d_joint = self
            .regressor
            .backward(&fwd.joint, &fwd.regressor, d_out, &mut grads.regressor, true)
            .expect("input gradient requested");
        let mut d_z = vec![T::zero(); 2 * batch * l];
        for b in 0..batch {
            let row = &d_joint[b * 2 * l..(b + 1) * 2 * l];
            d_z[b * l..(b + 1) * l].copy_from_slice(&row[..l]);
            d_z[(batch + b) * l..(batch + b + 1) * l].copy_from_slice(&row[l..]);
        }
        self.extractor
            .backward(&fwd.inputs, &fwd.extractor, &d_z, &mut grads.extractor, false);
    }

    /// Mean loss over a batch; gradients are accumulated into `grads`.
    pub fn loss_and_grad(
        &self,
        sources: &[T],
        targets: &[T],
        gts: &[RigidTransform],
        alpha_t: f64,
        grads: &mut Network<T>,
    ) -> Result<LossParts> {
        let batch = gts.len();
        let fwd = self.forward(sources, targets, batch);
        let mut total = LossParts::default();
        let mut d_out = vec![T::zero(); batch * OUTPUT_DIM];
        for (b, gt) in gts.iter().enumerate() {
            let raw = raw_row(fwd.outputs(), b);
            let (parts, grad) = pose_loss(&raw, gt, alpha_t)?;
            total += parts;
            for (d, g) in d_out[b * OUTPUT_DIM..(b + 1) * OUTPUT_DIM].iter_mut().zip(grad) {
                *d = T::of(g / batch as f64);
            }
        }
        self.backward(&fwd, &d_out, grads);
        Ok(total / batch as f64)
    }

    /// Mean loss without gradients.
    pub fn loss(&self, sources: &[T], targets: &[T], gts: &[RigidTransform], alpha_t: f64) -> Result<LossParts> {
        let fwd = self.forward(sources, targets, gts.len());
        let mut total = LossParts::default();
        for (b, gt) in gts.iter().enumerate() {
            total += pose_loss(&raw_row(fwd.outputs(), b), gt, alpha_t)?.0;
        }
        Ok(total / gts.len() as f64)
    }

    /// Decoded transforms for a batch of pairs.
    pub fn predict(&self, sources: &[T], targets: &[T], batch: usize) -> Result<Vec<RigidTransform>> {
        let fwd = self.forward(sources, targets, batch);
        (0..batch).map(|b| decode_output(&raw_row(fwd.outputs(), b))).collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            extractor: self.extractor.cast(),
            regressor: self.regressor.cast(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.extractor.params().chain(self.regressor.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.extractor.params_mut().chain(self.regressor.params_mut())
    }
}

fn raw_row<T: Real>(outputs: &[T], b: usize) -> [f64; OUTPUT_DIM] {
    let mut raw = [0.0; OUTPUT_DIM];
    for (r, o) in raw.iter_mut().zip(&outputs[b * OUTPUT_DIM..(b + 1) * OUTPUT_DIM]) {
        *r = o.f64();
    }
    raw
}
