use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::network::{LossParts, Network, PredictorConfig};
use super::{Normalization, Predictor};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::model::Region;
use crate::synthesis::{sample_seed, TrainingSample};

/// Preprocessed pairs stored compactly as `f32` millimeters.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub n_points: usize,
    pub sources: Vec<f32>,
    pub targets: Vec<f32>,
    pub gts: Vec<RigidTransform>,
}

impl TrainingSet {
    pub fn new(n_points: usize) -> Self {
        Self {
            n_points,
            ..Default::default()
        }
    }

    pub fn from_samples(samples: &[TrainingSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("training set"))?;
        let mut set = Self::new(first.source.len());
        for s in samples {
            set.push(s)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, s: &TrainingSample) -> Result<()> {
        for block in [&s.source, &s.target] {
            if block.len() != self.n_points {
                return Err(Error::SizeMismatch {
                    what: "sample points",
                    expected: self.n_points,
                    got: block.len(),
                });
            }
        }
        let flat = |b: &crate::geometry::VertexBlock| b.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect::<Vec<_>>();
        self.sources.extend(flat(&s.source));
        self.targets.extend(flat(&s.target));
        self.gts.push(s.gt);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gts.is_empty()
    }

    pub fn dim(&self) -> usize {
        3 * self.n_points
    }

    pub fn source(&self, i: usize) -> &[f32] {
        &self.sources[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * self.dim()..(i + 1) * self.dim()]
    }

    /// The first `n` pairs.
    pub fn truncated(&self, n: usize) -> TrainingSet {
        let n = n.min(self.len());
        TrainingSet {
            n_points: self.n_points,
            sources: self.sources[..n * self.dim()].to_vec(),
            targets: self.targets[..n * self.dim()].to_vec(),
            gts: self.gts[..n].to_vec(),
        }
    }
}

/// Mean distance between the ground-truth and predicted placements of the
/// source points, over all pairs and points.
pub fn mean_source_error(set: &TrainingSet, predictions: &[RigidTransform]) -> f64 {
    let mut sum = 0.0;
    for (i, s) in predictions.iter().enumerate() {
        let gt = &set.gts[i];
        for p in set.source(i).chunks_exact(3) {
            let p = Point3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            sum += (s.transform_point(&p) - gt.transform_point(&p)).norm();
        }
    }
    sum / (set.len() * set.n_points) as f64
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: Network<f32>,
    pub v: Network<f32>,
}

impl Adam {
    pub fn new(net: &Network<f32>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: net.zeros_like(),
            v: net.zeros_like(),
        }
    }

    pub fn step(&mut self, net: &mut Network<f32>, grads: &Network<f32>, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let pairs = [
            (&mut net.extractor, &grads.extractor, &mut self.m.extractor, &mut self.v.extractor),
            (&mut net.regressor, &grads.regressor, &mut self.m.regressor, &mut self.v.regressor),
        ];
        for (p, g, m, v) in pairs {
            update_mlp(p, g, m, v, b1, b2, step, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_mlp(p: &mut Mlp<f32>, g: &Mlp<f32>, m: &mut Mlp<f32>, v: &mut Mlp<f32>, b1: f32, b2: f32, step: f32, eps: f32) {
    for (((pl, gl), ml), vl) in p.layers.iter_mut().zip(&g.layers).zip(&mut m.layers).zip(&mut v.layers) {
        for (pw, gw, mw, vw) in [
            (&mut pl.w, &gl.w, &mut ml.w, &mut vl.w),
            (&mut pl.b, &gl.b, &mut ml.b, &mut vl.b),
        ] {
            for i in 0..pw.len() {
                let gi = gw[i];
                mw[i] = flush(b1 * mw[i] + (1.0 - b1) * gi);
                vw[i] = flush(b2 * vw[i] + (1.0 - b2) * gi * gi);
                pw[i] -= step * mw[i] / (vw[i].sqrt() + eps);
            }
        }
    }
}

/// Moments of inactive units decay geometrically; subnormal values would
/// make every later update of them an order of magnitude slower.
fn flush(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    /// Mean batch loss since the previous record.
    pub loss: f64,
    pub rotation: f64,
    pub translation: f64,
    /// Mean vertex distance on the validation pairs, mm.
    pub val_md: Option<f64>,
}

/// Mutable training state: weights, optimizer moments and position in the
/// sample stream.
pub struct Trainer<'a> {
    pub cfg: PredictorConfig,
    pub mask: Region,
    pub norm: Normalization,
    pub net: Network<f32>,
    pub adam: Adam,
    pub iteration: u64,
    train: &'a TrainingSet,
    val: Option<&'a TrainingSet>,
    grads: Network<f32>,
    epoch: Option<(u64, Vec<usize>)>,
    window: (LossParts, u64),
}

impl<'a> Trainer<'a> {
    /// Fresh weights drawn from the configured seed.
    pub fn new(cfg: &PredictorConfig, mask: Region, train: &'a TrainingSet, val: Option<&'a TrainingSet>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let norm = Normalization::fit(train);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = Network::new(cfg, train.dim(), &mut rng);
        Ok(Self::assemble(cfg.clone(), mask, norm, net, None, 0, train, val))
    }

    /// Continues from saved weights and optimizer state.
    pub fn resume(
        predictor: Predictor,
        adam: Adam,
        iteration: u64,
        train: &'a TrainingSet,
        val: Option<&'a TrainingSet>,
    ) -> Result<Self> {
        if train.n_points != predictor.n_points {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {} input points, training data has {}",
                predictor.n_points, train.n_points
            )));
        }
        Ok(Self::assemble(
            predictor.cfg,
            predictor.mask,
            predictor.norm,
            predictor.net,
            Some(adam),
            iteration,
            train,
            val,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: PredictorConfig,
        mask: Region,
        norm: Normalization,
        net: Network<f32>,
        adam: Option<Adam>,
        iteration: u64,
        train: &'a TrainingSet,
        val: Option<&'a TrainingSet>,
    ) -> Self {
        Self {
            adam: adam.unwrap_or_else(|| Adam::new(&net)),
            grads: net.zeros_like(),
            cfg,
            mask,
            norm,
            net,
            iteration,
            train,
            val,
            epoch: None,
            window: (LossParts::default(), 0),
        }
    }

    /// Index of the `pos`-th sample in the stream: each epoch visits every
    /// training pair once in an order fixed by the seed and epoch number.
    fn stream_index(&mut self, pos: u64) -> usize {
        let n = self.train.len() as u64;
        let epoch = pos / n;
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(self.cfg.seed, epoch)));
            self.epoch = Some((epoch, order));
        }
        self.epoch.as_ref().expect("just set").1[(pos % n) as usize]
    }

    /// One optimizer update. A non-finite loss or gradient leaves the state
    /// untouched and reports divergence.
    pub fn step(&mut self) -> Result<LossParts> {
        let b = self.cfg.batch_size;
        let dim = self.train.dim();
        let mut xs = Vec::with_capacity(b * dim);
        let mut xt = Vec::with_capacity(b * dim);
        let mut gts = Vec::with_capacity(b);
        for k in 0..b {
            let i = self.stream_index(self.iteration * b as u64 + k as u64);
            self.norm.extend(&mut xs, self.train.source(i));
            self.norm.extend(&mut xt, self.train.target(i));
            gts.push(self.train.gts[i]);
        }
        self.grads.params_mut().for_each(|g| *g = 0.0);
        let diverged = |loss: f64| Error::Diverged {
            iteration: self.iteration,
            loss,
        };
        let parts = self
            .net
            .loss_and_grad(&xs, &xt, &gts, self.cfg.alpha_t, &mut self.grads)
            .map_err(|_| diverged(f64::NAN))?;
        if !parts.total.is_finite() || !self.grads.params().all(|g| g.is_finite()) {
            return Err(diverged(parts.total));
        }
        self.adam.step(&mut self.net, &self.grads, self.cfg.learning_rate_at(self.iteration));
        self.iteration += 1;
        self.window.0 += parts;
        self.window.1 += 1;
        Ok(parts)
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            cfg: self.cfg.clone(),
            mask: self.mask,
            n_points: self.train.n_points,
            norm: self.norm.clone(),
            net: self.net.clone(),
        }
    }

    pub fn checkpoint(&self, info: serde_json::Value) -> super::Checkpoint {
        super::Checkpoint {
            predictor: self.predictor(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            info,
        }
    }

    pub fn validation_md(&self) -> Result<Option<f64>> {
        let Some(val) = self.val else {
            return Ok(None);
        };
        let predictions = self.predictor().predict_set(val)?;
        Ok(Some(mean_source_error(val, &predictions)))
    }

    /// Trains up to the configured iteration count, reporting a record every
    /// `log_every` iterations and at the end.
    pub fn run(&mut self, mut on_log: impl FnMut(&LogRecord, &Trainer) -> Result<()>) -> Result<()> {
        while self.iteration < self.cfg.iterations {
            self.step()?;
            if self.iteration % self.cfg.log_every == 0 || self.iteration == self.cfg.iterations {
                let (sum, count) = std::mem::take(&mut self.window);
                let mean = sum / count.max(1) as f64;
                let record = LogRecord {
                    iteration: self.iteration,
                    loss: mean.total,
                    rotation: mean.rotation,
                    translation: mean.translation,
                    val_md: self.validation_md()?,
                };
                on_log(&record, self)?;
            }
        }
        Ok(())
    }
}
