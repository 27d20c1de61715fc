use std::path::Path;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExpressionLibrary, IdentityDistribution, SynthesisConfig, Synthesizer, TrainingSample};
use crate::container::{framed, unframe, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, VertexBlock};
use crate::model::{ModelData, Region};

pub const DATASET_KIND: &str = "facestab-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub kind: String,
    pub version: u32,
    pub count: usize,
    pub n_points: usize,
    pub mask: Region,
    pub units: String,
    pub config: SynthesisConfig,
    pub eps_expr: f64,
    pub model_hash: String,
    pub identity: IdentityDistribution,
    pub library: ExpressionLibrary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

fn record_len(n_points: usize) -> usize {
    2 * 3 * n_points * 4 + 16 * 8 + 8
}

/// Generates `cfg.count` samples in parallel. Sample `i` uses the seed
/// derived from `(cfg.master_seed, i)`, so the content does not depend on
/// the number of worker threads.
pub fn generate_dataset(
    cfg: &SynthesisConfig,
    psi: &ModelData,
    dist: &IdentityDistribution,
    library: &ExpressionLibrary,
) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::Empty("dataset"));
    }
    let synth = Synthesizer::new(cfg, psi, dist, library)?;
    let samples = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| synth.sample(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            kind: DATASET_KIND.into(),
            version: DATASET_VERSION,
            count: cfg.count,
            n_points: synth.mask().len(),
            mask: cfg.mask,
            units: "mm".into(),
            config: cfg.clone(),
            eps_expr: synth.eps_expr(),
            model_hash: psi.content_hash(),
            identity: dist.clone(),
            library: library.clone(),
        },
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.header.n_points;
        let mut payload = Vec::with_capacity(self.samples.len() * record_len(n));
        for s in &self.samples {
            for block in [&s.source, &s.target] {
                for p in block.iter() {
                    for c in [p.x, p.y, p.z] {
                        payload.extend_from_slice(&(c as f32).to_le_bytes());
                    }
                }
            }
            for x in s.gt.to_row_major() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
            payload.extend_from_slice(&s.seed.to_le_bytes());
        }
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        framed(&header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (json, payload) = unframe(bytes, path)?;
        let header: DatasetHeader =
            serde_json::from_slice(json).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if header.kind != DATASET_KIND || header.version != DATASET_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: expected {DATASET_KIND} v{DATASET_VERSION}, found {} v{}",
                path.display(),
                header.kind,
                header.version
            )));
        }
        let n = header.n_points;
        if payload.len() != header.count * record_len(n) {
            return Err(Error::format(path, "record section has the wrong size"));
        }
        let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().expect("4 bytes")) as f64;
        let samples = payload
            .chunks_exact(record_len(n))
            .map(|rec| {
                let block = |offset: usize| -> VertexBlock {
                    let b = &rec[offset..offset + 12 * n];
                    (0..n)
                        .map(|i| Point3::new(f32_at(b, 3 * i), f32_at(b, 3 * i + 1), f32_at(b, 3 * i + 2)))
                        .collect()
                };
                let gt_bytes = &rec[24 * n..24 * n + 128];
                let mut gt = [0.0; 16];
                for (k, g) in gt.iter_mut().enumerate() {
                    *g = f64::from_le_bytes(gt_bytes[8 * k..8 * k + 8].try_into().expect("8 bytes"));
                }
                Ok(TrainingSample {
                    source: block(0),
                    target: block(12 * n),
                    gt: RigidTransform::from_row_major(&gt)
                        .map_err(|e| Error::format(path, format!("bad transform: {e}")))?,
                    seed: u64::from_le_bytes(rec[24 * n + 128..].try_into().expect("8 bytes")),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rejects a dataset generated from a different model.
    pub fn check_model(&self, psi: &ModelData) -> Result<()> {
        let hash = psi.content_hash();
        if self.header.model_hash != hash {
            return Err(Error::Incompatible(format!(
                "dataset was generated from model {} but model {} was given",
                self.header.model_hash, hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{synth_expression_library, synth_identity_set, LibraryConfig};
    use super::*;
    use crate::model::synth_model;

    fn small(count: usize) -> (ModelData, Dataset) {
        let psi = synth_model(2, 642, 4, 16).unwrap();
        let dist = IdentityDistribution::fit(&synth_identity_set(1, 20, 4)).unwrap();
        let lib = synth_expression_library(&LibraryConfig::default(), 16).unwrap();
        let cfg = SynthesisConfig {
            count,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, &psi, &dist, &lib).unwrap();
        (psi, ds)
    }

    #[test]
    fn single_record_round_trips() {
        let (psi, ds) = small(1);
        let back = Dataset::from_bytes(&ds.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ds);
        back.check_model(&psi).unwrap();
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let (_, a) = small(12);
        let (_, b) = small(12);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        a.write(&path).unwrap();
        assert_eq!(Dataset::read(&path).unwrap(), a);
    }

    #[test]
    fn thread_count_does_not_change_content() {
        let (_, a) = small(8);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (_, b) = pool.install(|| small(8));
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (_, ds) = small(2);
        let bytes = ds.to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
    }
}
