//! Learned per-vertex confidence map for weighted Procrustes.
//!
//! The map is fitted by projected gradient descent. Each step re-solves the
//! weighted alignment of every pair in a mini-batch and then moves the
//! weights along the gradient of the objective with those alignments held
//! fixed. Since the alignment is the minimizer of the data term, this is the
//! exact gradient of the data term at the current weights.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{framed, unframe, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{weighted_procrustes, RigidTransform, VertexBlock};
use crate::model::{ModelData, Region};

pub const CMAP_KIND: &str = "facestab-cmap";
pub const CMAP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmapVariant {
    /// Data term and hinge regularizer only.
    Original,
    /// Adds a reward for spread-out weights.
    Contrast,
    /// Adds the spread reward and a local-smoothness penalty.
    ContrastConsistent,
}

impl CmapVariant {
    pub const ALL: [CmapVariant; 3] = [CmapVariant::Original, CmapVariant::Contrast, CmapVariant::ContrastConsistent];

    pub fn as_str(&self) -> &'static str {
        match self {
            CmapVariant::Original => "original",
            CmapVariant::Contrast => "contrast",
            CmapVariant::ContrastConsistent => "contrast_consistent",
        }
    }
}

impl std::str::FromStr for CmapVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CmapVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown confidence-map variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmapConfig {
    pub variant: CmapVariant,
    pub region: Region,
    pub alpha_data: f64,
    pub alpha_reg: f64,
    pub alpha_sigma: f64,
    pub alpha_n: f64,
    pub rho: f64,
    pub k: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Candidate step sizes for validation-based selection.
    pub step_grid: Vec<f64>,
    pub batch_size: usize,
    /// Millimeters per length unit used inside the objective.
    pub unit_mm: f64,
    pub seed: u64,
}

impl Default for CmapConfig {
    fn default() -> Self {
        Self {
            variant: CmapVariant::ContrastConsistent,
            region: Region::Face,
            alpha_data: 100.0,
            alpha_reg: 0.01,
            alpha_sigma: 100.0,
            alpha_n: 100.0,
            rho: 0.4,
            k: 10,
            steps: 300,
            step_size: 1e-2,
            step_grid: vec![1e-3, 1e-2, 1e-1],
            batch_size: 16,
            unit_mm: 1000.0,
            seed: 0,
        }
    }
}

impl CmapConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        let weights = [self.alpha_data, self.alpha_reg, self.alpha_sigma, self.alpha_n];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be non-negative");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.batch_size == 0 || !(self.unit_mm > 0.0) || !(self.step_size > 0.0) {
            return bad("batch size, unit and step size must be positive");
        }
        Ok(())
    }

    fn uses_sigma(&self) -> bool {
        self.variant != CmapVariant::Original
    }

    fn uses_neighborhood(&self) -> bool {
        self.variant == CmapVariant::ContrastConsistent
    }
}

/// Per-vertex weights over a region of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMap {
    pub region: Region,
    pub variant: CmapVariant,
    pub weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    kind: String,
    version: u32,
    region: Region,
    variant: CmapVariant,
    count: usize,
    #[serde(default)]
    info: serde_json::Value,
}

impl ConfidenceMap {
    pub fn uniform(psi: &ModelData, region: Region, value: f64) -> Self {
        Self {
            region,
            variant: CmapVariant::Original,
            weights: vec![value; psi.mask(region).len()],
        }
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.weights)
    }

    /// Mean over vertices of the weight spread in each neighborhood.
    pub fn neighborhood_std(&self, neighbors: &[Vec<usize>]) -> f64 {
        neighbors
            .iter()
            .map(|nb| std_dev(&nb.iter().map(|&j| self.weights[j]).collect::<Vec<_>>()))
            .sum::<f64>()
            / neighbors.len() as f64
    }

    pub fn to_bytes(&self, info: serde_json::Value) -> Vec<u8> {
        let header = MapHeader {
            kind: CMAP_KIND.into(),
            version: CMAP_VERSION,
            region: self.region,
            variant: self.variant,
            count: self.weights.len(),
            info,
        };
        let payload: Vec<u8> = self.weights.iter().flat_map(|w| (*w as f32).to_le_bytes()).collect();
        framed(&serde_json::to_vec(&header).expect("header serializes"), &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (json, payload) = unframe(bytes, path)?;
        let h: MapHeader = serde_json::from_slice(json).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if h.kind != CMAP_KIND || h.version != CMAP_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: expected {CMAP_KIND} v{CMAP_VERSION}, found {} v{}",
                path.display(),
                h.kind,
                h.version
            )));
        }
        if payload.len() != 4 * h.count {
            return Err(Error::format(path, "weight count does not match header"));
        }
        Ok(Self {
            region: h.region,
            variant: h.variant,
            weights: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        })
    }

    pub fn save(&self, path: &Path, info: serde_json::Value) -> Result<()> {
        write_atomic(path, &self.to_bytes(info))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Stored weights are single precision; this rounds in-memory weights
    /// the same way.
    pub fn rounded(mut self) -> Self {
        self.weights.iter_mut().for_each(|w| *w = *w as f32 as f64);
        self
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// For every region vertex, the region-local ids of its `k` nearest region
/// vertices on the neutral template (the vertex itself included).
pub fn neighborhoods(psi: &ModelData, region: Region, k: usize) -> Vec<Vec<usize>> {
    let pts = psi.template.select(psi.mask(region));
    let k = k.min(pts.len());
    (0..pts.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = pts.iter().enumerate().map(|(j, q)| ((q - pts[i]).norm_squared(), j)).collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
            let mut nb: Vec<usize> = d[..k].iter().map(|&(_, j)| j).collect();
            nb.sort_unstable();
            nb
        })
        .collect()
}

/// Unweighted loss terms of a map on one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmapLosses {
    pub data: f64,
    pub reg: f64,
    pub sigma: f64,
    pub nbhd: f64,
}

/// Evaluates the four terms for weights `w` on a region-restricted pair
/// (coordinates in objective units).
pub fn cmap_losses(w: &[f64], us: &VertexBlock, ut: &VertexBlock, neighbors: &[Vec<usize>], rho: f64) -> Result<CmapLosses> {
    let data = if w.iter().all(|&x| x == 0.0) {
        0.0
    } else {
        let s = weighted_procrustes(us, ut, w)?;
        crate::geometry::weighted_residual(&s, us, ut, w)
    };
    let n = w.len() as f64;
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    let nbhd = neighbors
        .iter()
        .map(|nb| std_dev(&nb.iter().map(|&j| w[j]).collect::<Vec<_>>()))
        .sum::<f64>()
        / n;
    Ok(CmapLosses {
        data,
        reg: (rho * n - norm2).max(0.0),
        sigma: -std_dev(w),
        nbhd,
    })
}

fn objective_gradient(
    w: &[f64],
    batch: &[(VertexBlock, VertexBlock)],
    neighbors: &[Vec<usize>],
    cfg: &CmapConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = w.len();
    let nf = n as f64;
    let mut grad = vec![0.0; n];
    let mut value = 0.0;

    let scale = cfg.alpha_data / batch.len() as f64;
    for (us, ut) in batch {
        let s = weighted_procrustes(us, ut, w)?;
        for i in 0..n {
            let r2 = (s.transform_point(&us[i]) - ut[i]).norm_squared();
            value += scale * w[i] * w[i] * r2;
            grad[i] += scale * 2.0 * w[i] * r2;
        }
    }

    let norm2: f64 = w.iter().map(|x| x * x).sum();
    if cfg.rho * nf > norm2 {
        value += cfg.alpha_reg * (cfg.rho * nf - norm2);
        for (g, wi) in grad.iter_mut().zip(w) {
            *g -= cfg.alpha_reg * 2.0 * wi;
        }
    }

    if cfg.uses_sigma() {
        let mean = w.iter().sum::<f64>() / nf;
        let sigma = std_dev(w);
        value -= cfg.alpha_sigma * sigma;
        if sigma > 0.0 {
            for (g, wi) in grad.iter_mut().zip(w) {
                *g -= cfg.alpha_sigma * (wi - mean) / (nf * sigma);
            }
        }
    }

    if cfg.uses_neighborhood() {
        for nb in neighbors {
            let k = nb.len() as f64;
            let mean = nb.iter().map(|&j| w[j]).sum::<f64>() / k;
            let sigma = (nb.iter().map(|&j| (w[j] - mean).powi(2)).sum::<f64>() / k).sqrt();
            value += cfg.alpha_n * sigma / nf;
            if sigma > 0.0 {
                for &j in nb {
                    grad[j] += cfg.alpha_n * (w[j] - mean) / (k * sigma * nf);
                }
            }
        }
    }
    Ok((value, grad))
}

/// Fits a map on full-mesh pairs with the configured step size.
pub fn cmap_train(pairs: &[(VertexBlock, VertexBlock)], psi: &ModelData, cfg: &CmapConfig) -> Result<ConfidenceMap> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("confidence-map training pairs"));
    }
    let mask = psi.mask(cfg.region);
    let to_units = |v: &VertexBlock| -> VertexBlock { v.select(mask).iter().map(|p| p / cfg.unit_mm).collect() };
    let local: Vec<(VertexBlock, VertexBlock)> = pairs.iter().map(|(s, t)| (to_units(s), to_units(t))).collect();
    let neighbors = if cfg.uses_neighborhood() {
        neighborhoods(psi, cfg.region, cfg.k)
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![0.5; mask.len()];
    let batch_size = cfg.batch_size.min(local.len());
    for step in 0..cfg.steps {
        let batch: Vec<(VertexBlock, VertexBlock)> =
            sample(&mut rng, local.len(), batch_size).into_iter().map(|i| local[i].clone()).collect();
        let (value, grad) = objective_gradient(&w, &batch, &neighbors, cfg)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: step as u64,
                loss: value,
            });
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi = (*wi - cfg.step_size * g).clamp(0.0, 1.0);
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::Diverged {
                iteration: step as u64,
                loss: value,
            });
        }
    }
    Ok(ConfidenceMap {
        region: cfg.region,
        variant: cfg.variant,
        weights: w,
    })
}

/// Trains one map per step size of the grid and keeps the one with the
/// lowest mean vertex error on the validation triples `(source, target,
/// ground truth)`. Returns the map, its step size and validation error.
pub fn cmap_select(
    train: &[(VertexBlock, VertexBlock)],
    validation: &[(VertexBlock, VertexBlock, RigidTransform)],
    psi: &ModelData,
    cfg: &CmapConfig,
) -> Result<(ConfidenceMap, f64, f64)> {
    if validation.is_empty() {
        return Err(Error::Empty("confidence-map validation pairs"));
    }
    let grid = if cfg.step_grid.is_empty() {
        vec![cfg.step_size]
    } else {
        cfg.step_grid.clone()
    };
    let mask = psi.mask(cfg.region);
    let mut best: Option<(ConfidenceMap, f64, f64)> = None;
    for &step_size in &grid {
        let run = CmapConfig {
            step_size,
            ..cfg.clone()
        };
        let map = match cmap_train(train, psi, &run) {
            Ok(m) => m,
            Err(Error::Diverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut sum = 0.0;
        for (vs, vt, gt) in validation {
            let s = cmap_stabilize(&map, vs, vt, psi)?;
            for &i in mask {
                sum += (s.transform_point(&vs[i]) - gt.transform_point(&vs[i])).norm();
            }
        }
        let md = sum / (validation.len() * mask.len()) as f64;
        if best.as_ref().is_none_or(|b| md < b.2) {
            best = Some((map, step_size, md));
        }
    }
    best.ok_or(Error::Diverged {
        iteration: cfg.steps as u64,
        loss: f64::NAN,
    })
}

/// Weighted Procrustes of a full-mesh pair on the map's region.
pub fn cmap_stabilize(map: &ConfidenceMap, vs_full: &VertexBlock, vt_full: &VertexBlock, psi: &ModelData) -> Result<RigidTransform> {
    let mask = psi.mask(map.region);
    crate::model::size_check("confidence map", mask.len(), map.weights.len())?;
    weighted_procrustes(&vs_full.select(mask), &vt_full.select(mask), &map.weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::proc_baseline;
    use crate::geometry::sample_random_rigid;
    use crate::model::{synth_model, ModelParams, model_forward};
    use rand::Rng;

    fn jaw_pairs(psi: &ModelData, n: usize, seed: u64) -> Vec<(VertexBlock, VertexBlock, RigidTransform)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut a = ModelParams::zeros(psi);
                let mut b = ModelParams::zeros(psi);
                a.phi[0] = rng.random_range(0.0..0.3);
                b.phi[0] = rng.random_range(0.6..1.0);
                let z = sample_random_rigid(0.05, 3.0, &mut rng);
                let vs = model_forward(psi, &a).unwrap();
                let vt = z.apply(&model_forward(psi, &b).unwrap());
                (vs, vt, z)
            })
            .collect()
    }

    #[test]
    fn loss_terms_on_simple_maps() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let u = psi.template.select(psi.mask(Region::Face));
        let nb = neighborhoods(&psi, Region::Face, 10);
        let n = u.len();
        let l = cmap_losses(&vec![1.0; n], &u, &u, &nb, 0.4).unwrap();
        assert!(l.data.abs() < 1e-18);
        assert_eq!((l.reg, l.sigma, l.nbhd), (0.0, 0.0, 0.0));
        let zero = cmap_losses(&vec![0.0; n], &u, &u, &nb, 0.4).unwrap();
        assert_eq!((zero.data, zero.reg), (0.0, 0.4 * n as f64));
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        w[1] = 1.0;
        w[2] = 1.0;
        w[3] = 1.0;
        let l = cmap_losses(&w, &u, &u, &nb, 0.4).unwrap();
        assert!((l.reg - (0.4 * n as f64 - 4.0)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
        let l = cmap_losses(&w, &u, &u, &nb, 0.4).unwrap();
        assert!(l.nbhd > 0.0 && l.sigma < 0.0 && l.reg == 0.0);
    }

    #[test]
    fn neighborhoods_contain_self_and_k_members() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let nb = neighborhoods(&psi, Region::Upper, 5);
        assert_eq!(nb.len(), psi.mask(Region::Upper).len());
        for (i, n) in nb.iter().enumerate() {
            assert_eq!(n.len(), 5);
            assert!(n.contains(&i));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_minimized_objective() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let mask = psi.mask(Region::Face);
        let batch: Vec<(VertexBlock, VertexBlock)> = jaw_pairs(&psi, 3, 4)
            .into_iter()
            .map(|(s, t, _)| (s.select(mask).iter().map(|p| p / 100.0).collect(), t.select(mask).iter().map(|p| p / 100.0).collect()))
            .collect();
        let nb = neighborhoods(&psi, Region::Face, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..mask.len()).map(|_| rng.random_range(0.1..0.9)).collect();
        let cfg = CmapConfig {
            rho: 0.6,
            ..Default::default()
        };
        let (_, grad) = objective_gradient(&w, &batch, &nb, &cfg).unwrap();
        let h = 1e-6;
        for i in [0, 7, mask.len() / 2, mask.len() - 1] {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (objective_gradient(&p, &batch, &nb, &cfg).unwrap().0 - objective_gradient(&m, &batch, &nb, &cfg).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn uniform_map_matches_region_procrustes() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let (vs, vt, _) = jaw_pairs(&psi, 1, 5).remove(0);
        let map = ConfidenceMap::uniform(&psi, Region::Face, 0.5);
        let a = cmap_stabilize(&map, &vs, &vt, &psi).unwrap();
        let b = proc_baseline(&vs, &vt, &psi, Region::Face).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
        assert!(cmap_stabilize(&map, &vs, &vs, &psi).unwrap().max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn zero_weights_on_jaw_help_forehead() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let face = psi.mask(Region::Face);
        let upper = psi.mask(Region::Upper);
        let (vs, vt, z) = jaw_pairs(&psi, 1, 6).remove(0);
        let masked = ConfidenceMap {
            region: Region::Face,
            variant: CmapVariant::Original,
            weights: face.iter().map(|i| if upper.contains(i) { 1.0 } else { 0.0 }).collect(),
        };
        let err = |s: RigidTransform| upper.iter().map(|&i| (s.transform_point(&vs[i]) - z.transform_point(&vs[i])).norm()).sum::<f64>();
        let uniform = ConfidenceMap::uniform(&psi, Region::Face, 1.0);
        assert!(err(cmap_stabilize(&masked, &vs, &vt, &psi).unwrap()) < err(cmap_stabilize(&uniform, &vs, &vt, &psi).unwrap()));
    }

    #[test]
    fn file_round_trip() {
        let map = ConfidenceMap {
            region: Region::Face,
            variant: CmapVariant::Contrast,
            weights: vec![0.0, 0.25, 1.0, 0.5],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cmap");
        map.save(&path, serde_json::json!({"seed": 3})).unwrap();
        assert_eq!(ConfidenceMap::load(&path).unwrap(), map);
        let bytes = std::fs::read(&path).unwrap();
        assert!(ConfidenceMap::from_bytes(&bytes[..bytes.len() - 2], &path).is_err());
    }

    #[test]
    fn zero_extra_weights_reduce_to_original() {
        let psi = synth_model(1, 642, 3, 16).unwrap();
        let pairs: Vec<_> = jaw_pairs(&psi, 4, 7).into_iter().map(|(s, t, _)| (s, t)).collect();
        let base = CmapConfig {
            steps: 20,
            batch_size: 2,
            ..Default::default()
        };
        let original = cmap_train(&pairs, &psi, &CmapConfig { variant: CmapVariant::Original, ..base.clone() }).unwrap();
        let plain = cmap_train(
            &pairs,
            &psi,
            &CmapConfig {
                variant: CmapVariant::ContrastConsistent,
                alpha_sigma: 0.0,
                alpha_n: 0.0,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(original.weights, plain.weights);
        assert!(original.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        assert_eq!(original, cmap_train(&pairs, &psi, &CmapConfig { variant: CmapVariant::Original, ..base }).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            CmapConfig { rho: 1.0, ..Default::default() },
            CmapConfig { k: 0, ..Default::default() },
            CmapConfig { alpha_reg: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert_eq!("contrast".parse::<CmapVariant>().unwrap(), CmapVariant::Contrast);
        assert!("other".parse::<CmapVariant>().is_err());
    }
}
