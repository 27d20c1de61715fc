//! Training-pair synthesis: random identities and expressions are posed with
//! the model, pre-aligned with deliberately noisy Procrustes fits, and paired
//! with the exact transform that re-aligns their skulls.

mod dataset;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{procrustes_transform, sample_random_rigid, RigidTransform, VertexBlock};
use crate::baselines::unpose_baseline;
use crate::model::{bind_pose, model_forward, root_params_for, skull_forward, ModelData, ModelParams, Region, HEAD};

pub use dataset::{generate_dataset, Dataset, DatasetHeader, DATASET_KIND, DATASET_VERSION};

/// Tolerance on the skull residual of every generated sample, in mm.
pub const GT_TOLERANCE_MM: f64 = 1e-6;

/// Diagonal Gaussian over identity coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDistribution {
    pub mean: Vec<f64>,
    /// Population standard deviation per coordinate.
    pub std: Vec<f64>,
}

impl IdentityDistribution {
    pub fn fit(identity_set: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = identity_set.first() else {
            return Err(Error::Empty("identity set"));
        };
        if identity_set.len() < 2 {
            return Err(Error::InvalidConfig("need at least two identities to fit a distribution".into()));
        }
        let d = first.len();
        if let Some(bad) = identity_set.iter().find(|b| b.len() != d) {
            return Err(Error::SizeMismatch {
                what: "identity vector",
                expected: d,
                got: bad.len(),
            });
        }
        let n = identity_set.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| identity_set.iter().map(|b| b[i]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|i| (identity_set.iter().map(|b| (b[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws from the box `U(mean - 3 std, mean + 3 std)`.
    pub fn sample_box<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| {
                if s == 0.0 {
                    m
                } else {
                    rng.random_range(m - 3.0 * s..m + 3.0 * s)
                }
            })
            .collect()
    }
}

/// A stand-in for a set of fitted scan identities: coefficients drawn from
/// zero-mean Gaussians whose spread decays geometrically with the index.
pub fn synth_identity_set(seed: u64, count: usize, n_identity: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n_identity)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * 3.5 * 0.85f64.powi(i as i32)
                })
                .collect()
        })
        .collect()
}

/// A set of expression vectors, sampled uniformly during synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionLibrary {
    pub entries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LibraryKind {
    #[default]
    Standard,
    /// Every entry opens the jaw strongly.
    JawHeavy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub seed: u64,
    pub count: usize,
    /// Maximum number of active bases per entry.
    pub sparsity: usize,
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    pub kind: LibraryKind,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            count: 400,
            sparsity: 3,
            min_magnitude: 0.2,
            max_magnitude: 1.0,
            kind: LibraryKind::Standard,
        }
    }
}

impl ExpressionLibrary {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::Empty("expression library"));
        };
        let d = first.len();
        for e in &entries {
            if e.len() != d {
                return Err(Error::SizeMismatch {
                    what: "expression vector",
                    expected: d,
                    got: e.len(),
                });
            }
            if !e.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig("non-finite expression coefficient".into()));
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    /// Standard deviation pooled over all entries and coordinates.
    pub fn pooled_std(&self) -> f64 {
        let values: Vec<f64> = self.entries.iter().flatten().copied().collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// Sparse random expressions: each entry activates at most `sparsity`
/// distinct bases with magnitudes in the configured range.
pub fn synth_expression_library(cfg: &LibraryConfig, n_expression: usize) -> Result<ExpressionLibrary> {
    if cfg.count == 0 {
        return Err(Error::Empty("expression library"));
    }
    if !(0.0 <= cfg.min_magnitude && cfg.min_magnitude <= cfg.max_magnitude) {
        return Err(Error::InvalidConfig("expression magnitude range".into()));
    }
    let jaw_heavy = cfg.kind == LibraryKind::JawHeavy;
    if jaw_heavy && n_expression == 0 {
        return Err(Error::InvalidConfig("jaw-heavy library needs a jaw basis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let magnitude = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let entries = (0..cfg.count)
        .map(|_| {
            let mut e = vec![0.0; n_expression];
            let active = if cfg.sparsity == 0 {
                0
            } else {
                rng.random_range(1..=cfg.sparsity.min(n_expression))
            };
            for i in rand::seq::index::sample(&mut rng, n_expression, active) {
                e[i] = magnitude(&mut rng, cfg.min_magnitude, cfg.max_magnitude);
            }
            if jaw_heavy {
                // the jaw basis comes first in the model's expression order
                e[0] = magnitude(&mut rng, 0.6, 1.0);
            }
            e
        })
        .collect();
    ExpressionLibrary::new(entries)
}

/// Noise levels and bookkeeping for training-pair synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Expression noise std; `None` means 5% of the library's pooled std.
    pub eps_expr: Option<f64>,
    /// Rotation noise std in radians.
    pub eps_r: f64,
    /// Translation noise std in mm.
    pub eps_t: f64,
    /// Std in radians of each component of the head joint's rotation
    /// relative to the neck. Zero keeps both meshes unarticulated.
    pub head_pose_std: f64,
    pub mask: Region,
    pub count: usize,
    pub master_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            eps_expr: None,
            eps_r: 3f64.to_radians(),
            eps_t: 3.0,
            head_pose_std: 0.0,
            mask: Region::Frontal,
            count: 8000,
            master_seed: 1,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.eps_r) && ok(self.eps_t) && ok(self.head_pose_std) && self.eps_expr.is_none_or(ok)) {
            return Err(Error::InvalidConfig("noise scales must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One preprocessed training pair with its ground-truth transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub source: VertexBlock,
    pub target: VertexBlock,
    /// Maps the source's frame onto the target's so that skulls coincide.
    pub gt: RigidTransform,
    pub seed: u64,
}

/// Everything behind a sample: parameters, full meshes and skulls, all in
/// the preprocessed frames of the source and target respectively.
#[derive(Debug, Clone)]
pub struct FullSample {
    pub sample: TrainingSample,
    pub source_params: ModelParams,
    pub target_params: ModelParams,
    pub source_mesh: VertexBlock,
    pub target_mesh: VertexBlock,
    pub source_skull: VertexBlock,
    pub target_skull: VertexBlock,
}

/// Mixes a master seed and a sample index into an independent seed.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(master ^ splitmix(index))
}

/// The centered neutral face restricted to `mask`, used as the common
/// pre-alignment target.
pub fn neutral_template(psi: &ModelData, mask: &[usize]) -> Result<VertexBlock> {
    let (v, _) = bind_pose(psi, &vec![0.0; psi.n_identity()], &vec![0.0; psi.n_expression()])?;
    let masked = v.select(mask);
    let c = masked.centroid().coords;
    Ok(masked.iter().map(|p| p - c).collect())
}

/// Pre-alignment transforms `(a_s, a_t)` of a full-mesh pair: the target is
/// fitted to the template and the source to the fitted target, both on the
/// masked vertices.
pub fn prealignment(
    vs_full: &VertexBlock,
    vt_full: &VertexBlock,
    mask: &[usize],
    template_hat: &VertexBlock,
) -> Result<(RigidTransform, RigidTransform)> {
    if vs_full.len() != vt_full.len() {
        return Err(Error::CountMismatch {
            left: vs_full.len(),
            right: vt_full.len(),
        });
    }
    if mask.last().is_some_and(|&i| i >= vs_full.len()) {
        return Err(Error::SizeMismatch {
            what: "mesh vertices",
            expected: mask.last().map_or(0, |&i| i + 1),
            got: vs_full.len(),
        });
    }
    let cs = vs_full.select(mask);
    let ct = vt_full.select(mask);
    let a_t = procrustes_transform(&ct, template_hat)?;
    let vt_hat = a_t.apply(&ct);
    let a_s = procrustes_transform(&cs, &vt_hat)?;
    Ok((a_s, a_t))
}

/// Masks a full-mesh pair and pre-aligns it: returns `(V̂s, V̂t)`.
pub fn preprocess_pair(
    vs_full: &VertexBlock,
    vt_full: &VertexBlock,
    psi: &ModelData,
    mask: Region,
) -> Result<(VertexBlock, VertexBlock)> {
    let indices = psi.mask(mask);
    let template_hat = neutral_template(psi, indices)?;
    let (a_s, a_t) = prealignment(vs_full, vt_full, indices, &template_hat)?;
    Ok((a_s.apply(&vs_full.select(indices)), a_t.apply(&vt_full.select(indices))))
}

/// Draws samples for one model, identity distribution and library.
#[derive(Debug, Clone)]
pub struct Synthesizer<'a> {
    cfg: SynthesisConfig,
    psi: &'a ModelData,
    dist: &'a IdentityDistribution,
    library: &'a ExpressionLibrary,
    eps_expr: f64,
    mask: Vec<usize>,
    template_hat: VertexBlock,
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        cfg: &SynthesisConfig,
        psi: &'a ModelData,
        dist: &'a IdentityDistribution,
        library: &'a ExpressionLibrary,
    ) -> Result<Self> {
        cfg.validate()?;
        crate::model::size_check("identity distribution", psi.n_identity(), dist.dim())?;
        crate::model::size_check("expression library", psi.n_expression(), library.dim())?;
        let mask = psi.mask(cfg.mask).to_vec();
        let template_hat = neutral_template(psi, &mask)?;
        Ok(Self {
            cfg: cfg.clone(),
            psi,
            dist,
            library,
            eps_expr: cfg.eps_expr.unwrap_or_else(|| 0.05 * library.pooled_std()),
            mask,
            template_hat,
        })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.cfg
    }

    pub fn mask(&self) -> &[usize] {
        &self.mask
    }

    pub fn template_hat(&self) -> &VertexBlock {
        &self.template_hat
    }

    /// Effective expression noise std.
    pub fn eps_expr(&self) -> f64 {
        self.eps_expr
    }

    /// The `index`-th sample of the configured master seed.
    pub fn sample(&self, index: u64) -> Result<TrainingSample> {
        self.sample_with_seed(sample_seed(self.cfg.master_seed, index))
    }

    pub fn sample_with_seed(&self, seed: u64) -> Result<TrainingSample> {
        Ok(self.sample_full(seed)?.sample)
    }

    fn draw_expression(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let base = &self.library.entries[rng.random_range(0..self.library.entries.len())];
        if self.eps_expr == 0.0 {
            return base.clone();
        }
        let noise = Normal::new(0.0, self.eps_expr).expect("finite std");
        base.iter().map(|x| x + noise.sample(rng)).collect()
    }

    pub fn sample_full(&self, seed: u64) -> Result<FullSample> {
        let psi = self.psi;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = self.dist.sample_box(&mut rng);
        let phi_s = self.draw_expression(&mut rng);
        let phi_t = self.draw_expression(&mut rng);
        let noise_s = sample_random_rigid(self.cfg.eps_r, self.cfg.eps_t, &mut rng);
        let noise_t = sample_random_rigid(self.cfg.eps_r, self.cfg.eps_t, &mut rng);

        let mut articulate = || -> Vector3<f64> {
            if self.cfg.head_pose_std == 0.0 {
                return Vector3::zeros();
            }
            let n = Normal::new(0.0, self.cfg.head_pose_std).expect("finite std");
            Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))
        };
        let (head_s, head_t) = (articulate(), articulate());
        let unposed = |phi: &[f64], head: Vector3<f64>| {
            let mut p = ModelParams {
                beta: beta.clone(),
                phi: phi.to_vec(),
                ..ModelParams::zeros(psi)
            };
            p.theta[HEAD] = head;
            p
        };
        let (ps, pt) = (unposed(&phi_s, head_s), unposed(&phi_t, head_t));
        let ms = model_forward(psi, &ps)?;
        let mt = model_forward(psi, &pt)?;
        let cs = ms.select(&self.mask);
        let ct = mt.select(&self.mask);

        let s_t_hat = procrustes_transform(&ct, &self.template_hat)?;
        let a_t = noise_t.compose(&s_t_hat);
        let target = a_t.apply(&ct);
        let s_s_t = procrustes_transform(&cs, &target)?;
        let a_s = noise_s.compose(&s_s_t);
        let source = a_s.apply(&cs);
        // Without articulation both skulls coincide before pre-alignment and
        // the head term is the identity.
        let skull_s = skull_forward(psi, &ps)?;
        let skull_t = skull_forward(psi, &pt)?;
        let head = unpose_baseline(&ps, &pt, psi)?;
        let gt = noise_t
            .compose(&s_t_hat)
            .compose(&head)
            .compose(&s_s_t.inverse())
            .compose(&noise_s.inverse());

        let source_skull = a_s.apply(&skull_s);
        let target_skull = a_t.apply(&skull_t);
        let residual = gt.apply(&source_skull).frobenius_distance(&target_skull) / (skull_s.len() as f64).sqrt();
        if !(residual <= GT_TOLERANCE_MM) {
            return Err(Error::GroundTruth(residual));
        }

        let posed = |params: ModelParams, a: &RigidTransform| -> Result<ModelParams> {
            let (root, tau) = root_params_for(psi, &params.beta, a)?;
            let mut p = params;
            p.theta[0] = root;
            p.tau = tau;
            Ok(p)
        };
        Ok(FullSample {
            sample: TrainingSample {
                source: source.round_f32(),
                target: target.round_f32(),
                gt,
                seed,
            },
            source_params: posed(ps, &a_s)?,
            target_params: posed(pt, &a_t)?,
            source_mesh: a_s.apply(&ms),
            target_mesh: a_t.apply(&mt),
            source_skull,
            target_skull,
        })
    }
}
