use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use facestab::baselines::CmapConfig;
use facestab::eval::EvalConfig;
use facestab::model::ModelData;
use facestab::predictor::PredictorConfig;
use facestab::synthesis::{
    synth_expression_library, synth_identity_set, ExpressionLibrary, IdentityDistribution, LibraryConfig, LibraryKind,
    SynthesisConfig,
};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seed: u64,
    pub vertices: usize,
    pub identity: usize,
    pub expression: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vertices: 2562,
            identity: 10,
            expression: 16,
        }
    }
}

/// Source of the identity set the box distribution is fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    pub seed: u64,
    pub count: usize,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self { seed: 2, count: 50 }
    }
}

/// The synthetic pairs a method is scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub count: usize,
    pub master_seed: u64,
    pub library: LibraryKind,
    /// Std in degrees of the head rotation relative to the neck.
    pub head_pose_deg: f64,
    /// Pose-noise level of the noisy unposing method.
    pub unpose_noise: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            count: 200,
            master_seed: 5000,
            library: LibraryKind::Standard,
            head_pose_deg: 0.0,
            unpose_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub validation: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub predictor: PathBuf,
    pub cmap: PathBuf,
    pub report: PathBuf,
    pub log: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let p = |s: &str| PathBuf::from("out").join(s);
        Self {
            model: p("model.bin"),
            dataset: p("train.ds"),
            validation: p("val.ds"),
            checkpoint_dir: p("checkpoints"),
            predictor: p("predictor.bin"),
            cmap: p("cmap.bin"),
            report: p("report.json"),
            log: p("train.jsonl"),
        }
    }
}

/// Everything a pipeline run needs. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub identity: IdentityConfig,
    pub library: LibraryConfig,
    pub synthesis: SynthesisConfig,
    pub validation_count: usize,
    pub validation_seed: u64,
    /// Fields given here override [`PredictorConfig::desk_scale`].
    #[serde(deserialize_with = "over_desk_scale")]
    pub predictor: PredictorConfig,
    pub checkpoint_every: u64,
    pub cmap: CmapConfig,
    pub cmap_train_pairs: usize,
    pub eval: EvalConfig,
    pub test: TestConfig,
    pub methods: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            model: ModelConfig::default(),
            identity: IdentityConfig::default(),
            library: LibraryConfig::default(),
            synthesis: SynthesisConfig::default(),
            validation_count: 200,
            validation_seed: 1000,
            predictor: PredictorConfig::desk_scale(),
            checkpoint_every: 1000,
            cmap: CmapConfig::default(),
            cmap_train_pairs: 400,
            eval: EvalConfig::default(),
            test: TestConfig::default(),
            methods: ["oracle", "ours", "proc_head", "proc_face", "proc_upper", "unpose", "unpose_noisy"]
                .map(String::from)
                .to_vec(),
        }
    }
}

fn over_desk_scale<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<PredictorConfig, D::Error> {
    let patch = serde_json::Map::deserialize(d)?;
    let mut base = match serde_json::to_value(PredictorConfig::desk_scale()) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => unreachable!("a struct serializes to an object"),
    };
    base.extend(patch);
    serde_json::from_value(base.into()).map_err(serde::de::Error::custom)
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn identity_distribution(&self, psi: &ModelData) -> Result<IdentityDistribution> {
        let set = synth_identity_set(self.identity.seed, self.identity.count, psi.n_identity());
        Ok(IdentityDistribution::fit(&set)?)
    }

    pub fn expression_library(&self, psi: &ModelData, kind: LibraryKind) -> Result<ExpressionLibrary> {
        Ok(synth_expression_library(&LibraryConfig { kind, ..self.library.clone() }, psi.n_expression())?)
    }

    pub fn test_synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            count: self.test.count,
            master_seed: self.test.master_seed,
            head_pose_std: self.test.head_pose_deg.to_radians(),
            ..self.synthesis.clone()
        }
    }

    pub fn validation_synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            count: self.validation_count,
            master_seed: self.validation_seed,
            ..self.synthesis.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_predictor_settings_start_from_the_desk_scale_preset() {
        let cfg: RunConfig = serde_json::from_str(r#"{ "predictor": { "iterations": 5, "alpha_t": 2.0 } }"#).unwrap();
        let expected = PredictorConfig {
            iterations: 5,
            alpha_t: 2.0,
            ..PredictorConfig::desk_scale()
        };
        assert_eq!(cfg.predictor, expected);
        assert_eq!(RunConfig::load(None).unwrap().predictor, PredictorConfig::desk_scale());
        assert!(serde_json::from_str::<RunConfig>(r#"{ "predictor": { "latent": "wide" } }"#).is_err());
    }
}
