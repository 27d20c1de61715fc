use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde_json::json;

use super::{ModelData, Region};
use crate::container::{TensorData, TensorFile};
use crate::error::{Error, Result};
use crate::geometry::VertexBlock;

pub const MODEL_KIND: &str = "facestab-model";
pub const MODEL_VERSION: u32 = 1;

fn flatten<'a, I: IntoIterator<Item = &'a Vector3<f64>>>(rows: I) -> Vec<f64> {
    rows.into_iter().flat_map(|v| [v.x, v.y, v.z]).collect()
}

fn vectors(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn block(flat: &[f64]) -> VertexBlock {
    vectors(flat).into_iter().map(Point3::from).collect()
}

fn indices(v: &[usize]) -> TensorData {
    TensorData::U32(v.iter().map(|&i| i as u32).collect())
}

impl ModelData {
    pub fn to_file(&self) -> TensorFile {
        let n = self.n_vertices();
        let k = self.n_joints();
        let meta = json!({
            "units": "mm",
            "seed": self.seed,
            "parents": self.parents,
            "head_joint": self.head_joint,
        });
        let mut f = TensorFile::new(MODEL_KIND, MODEL_VERSION, meta);
        f.push("template", vec![n, 3], TensorData::F64(flatten(self.template.iter().map(|p| &p.coords))));
        f.push("joints", vec![k, 3], TensorData::F64(flatten(self.joints.iter().map(|p| &p.coords))));
        f.push(
            "identity_basis",
            vec![self.n_identity(), n, 3],
            TensorData::F64(flatten(self.identity_basis.iter().flatten())),
        );
        f.push(
            "expression_basis",
            vec![self.n_expression(), n, 3],
            TensorData::F64(flatten(self.expression_basis.iter().flatten())),
        );
        f.push(
            "joint_identity_basis",
            vec![self.n_identity(), k, 3],
            TensorData::F64(flatten(self.joint_identity_basis.iter().flatten())),
        );
        f.push(
            "skin_weights",
            vec![k, n],
            TensorData::F64(self.skin_weights.iter().flatten().copied().collect()),
        );
        f.push(
            "skull",
            vec![self.skull.len(), 3],
            TensorData::F64(flatten(self.skull.iter().map(|p| &p.coords))),
        );
        f.push(
            "faces",
            vec![self.faces.len(), 3],
            TensorData::U32(self.faces.iter().flatten().copied().collect()),
        );
        f.push("cranium", vec![self.cranium.len()], indices(&self.cranium));
        for (region, m) in &self.masks {
            f.push(&format!("mask.{region}"), vec![m.len()], indices(m));
        }
        f
    }

    pub fn from_file(f: &TensorFile, path: &Path) -> Result<Self> {
        f.expect_kind(MODEL_KIND, MODEL_VERSION, path)?;
        let bad = |what: &str| Error::format(path, format!("bad {what}"));
        let parents: Vec<Option<usize>> =
            serde_json::from_value(f.meta["parents"].clone()).map_err(|_| bad("parents"))?;
        let head_joint = f.meta["head_joint"].as_u64().ok_or_else(|| bad("head_joint"))? as usize;
        let seed = f.meta["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        if f.meta["units"] != "mm" {
            return Err(bad("units"));
        }

        let (shape, template) = f.f64s("template", path)?;
        if shape.len() != 2 || shape[1] != 3 {
            return Err(bad("template shape"));
        }
        let n = shape[0];
        let (shape, joints) = f.f64s("joints", path)?;
        let k = shape[0];
        let rows = |name: &str, inner: usize| -> Result<Vec<Vec<Vector3<f64>>>> {
            let (shape, data) = f.f64s(name, path)?;
            if shape.len() != 3 || shape[1] != inner || shape[2] != 3 {
                return Err(bad(name));
            }
            Ok(data.chunks_exact(inner * 3).map(vectors).collect())
        };
        let index_list = |name: &str| -> Result<Vec<usize>> {
            Ok(f.u32s(name, path)?.1.iter().map(|&i| i as usize).collect())
        };

        let (shape, weights) = f.f64s("skin_weights", path)?;
        if shape != [k, n] {
            return Err(bad("skin_weights"));
        }
        let faces = f
            .u32s("faces", path)?
            .1
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let mut masks = BTreeMap::new();
        for region in Region::ALL {
            masks.insert(region, index_list(&format!("mask.{region}"))?);
        }

        let psi = ModelData {
            template: block(template),
            joints: vectors(joints).into_iter().map(Point3::from).collect(),
            identity_basis: rows("identity_basis", n)?,
            expression_basis: rows("expression_basis", n)?,
            joint_identity_basis: rows("joint_identity_basis", k)?,
            skin_weights: weights.chunks_exact(n.max(1)).map(<[f64]>::to_vec).collect(),
            parents,
            head_joint,
            skull: block(f.f64s("skull", path)?.1),
            masks,
            cranium: index_list("cranium")?,
            faces,
            seed,
        };
        psi.validate()?;
        Ok(psi)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_file().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&TensorFile::read(path)?, path)
    }

    /// SHA-256 of the serialized model.
    pub fn content_hash(&self) -> String {
        crate::container::sha256_hex(&self.to_file().to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::super::synth_model;
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let psi = synth_model(4, 642, 3, 18).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        psi.save(&path).unwrap();
        let back = ModelData::load(&path).unwrap();
        assert_eq!(back, psi);
        assert_eq!(back.content_hash(), psi.content_hash());
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        TensorFile::new("something-else", 1, serde_json::Value::Null).write(&path).unwrap();
        assert!(matches!(ModelData::load(&path), Err(Error::Incompatible(_))));
    }
}
