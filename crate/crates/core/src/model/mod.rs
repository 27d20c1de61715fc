//! Morphable head model: linear identity and expression bases, a four-joint
//! kinematic chain, linear blend skinning, and a synthetic skull rigidly bound
//! to the head joint.

pub(crate) mod forward;
mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VertexBlock;

pub use forward::{bind_pose, lbs, model_forward, root_params_for, skinning_transforms, skull_forward};
pub use io::{MODEL_KIND, MODEL_VERSION};
pub use synth::{synth_model, ExpressionShape, EXPRESSION_SHAPES, MIN_VERTICES};

pub const ROOT: usize = 0;
pub const NECK: usize = 1;
pub const HEAD: usize = 2;
pub const JAW: usize = 3;
pub const JOINT_NAMES: [&str; 4] = ["root", "neck", "head", "jaw"];

/// Named vertex subsets of the head mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Head,
    Face,
    Upper,
    Full,
    FaceAndNeck,
    Superhero,
    Frontal,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Head,
        Region::Face,
        Region::Upper,
        Region::Full,
        Region::FaceAndNeck,
        Region::Superhero,
        Region::Frontal,
    ];

    /// The three regions used for reporting.
    pub const EVALUATION: [Region; 3] = [Region::Face, Region::Upper, Region::Head];

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::Face => "face",
            Region::Upper => "upper",
            Region::Full => "full",
            Region::FaceAndNeck => "face_and_neck",
            Region::Superhero => "superhero",
            Region::Frontal => "frontal",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRegion(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub region: Region,
    /// Sorted, unique vertex ids.
    pub indices: Vec<usize>,
}

/// Model data: template, joints, linear bases, skinning weights, hierarchy,
/// skull points and region masks. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub template: VertexBlock,
    pub joints: Vec<Point3<f64>>,
    /// `[basis][vertex]` displacements (homogeneous row is zero).
    pub identity_basis: Vec<Vec<Vector3<f64>>>,
    pub expression_basis: Vec<Vec<Vector3<f64>>>,
    /// `[basis][joint]` joint displacements.
    pub joint_identity_basis: Vec<Vec<Vector3<f64>>>,
    /// `[joint][vertex]`, columns sum to one.
    pub skin_weights: Vec<Vec<f64>>,
    /// Parent of each joint; `None` only for the root at index 0.
    pub parents: Vec<Option<usize>>,
    pub head_joint: usize,
    /// Skull points in bind pose, rigidly attached to `head_joint`.
    pub skull: VertexBlock,
    pub masks: BTreeMap<Region, Vec<usize>>,
    /// Vertices driven only by the head joint and never moved by expressions.
    pub cranium: Vec<usize>,
    pub faces: Vec<[u32; 3]>,
    pub seed: u64,
}

/// Model parameters: identity, expression, per-joint angle-axis rotations
/// (radians) and root translation (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub theta: Vec<Vector3<f64>>,
    pub tau: Vector3<f64>,
}

impl ModelParams {
    /// All-zero parameters sized for `psi`.
    pub fn zeros(psi: &ModelData) -> Self {
        Self {
            beta: vec![0.0; psi.n_identity()],
            phi: vec![0.0; psi.n_expression()],
            theta: vec![Vector3::zeros(); psi.n_joints()],
            tau: Vector3::zeros(),
        }
    }

    pub fn check(&self, psi: &ModelData) -> Result<()> {
        size_check("beta", psi.n_identity(), self.beta.len())?;
        size_check("phi", psi.n_expression(), self.phi.len())?;
        size_check("theta", psi.n_joints(), self.theta.len())?;
        let finite = self.beta.iter().chain(&self.phi).all(|x| x.is_finite())
            && self.theta.iter().all(|t| t.iter().all(|x| x.is_finite()))
            && self.tau.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("non-finite model parameters".into()));
        }
        Ok(())
    }
}

pub(crate) fn size_check(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

impl ModelData {
    pub fn n_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_identity(&self) -> usize {
        self.identity_basis.len()
    }

    pub fn n_expression(&self) -> usize {
        self.expression_basis.len()
    }

    pub fn mask(&self, region: Region) -> &[usize] {
        &self.masks[&region]
    }

    pub fn region_mask(&self, region: Region) -> RegionMask {
        RegionMask {
            region,
            indices: self.mask(region).to_vec(),
        }
    }

    /// Looks a region up by name.
    pub fn region_mask_named(&self, name: &str) -> Result<RegionMask> {
        Ok(self.region_mask(name.parse()?))
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        let k = self.n_joints();
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if n == 0 || k == 0 {
            return bad("empty template or skeleton".into());
        }
        if self.parents.len() != k || self.parents[0].is_some() {
            return bad("joint 0 must be the only root".into());
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                Some(p) => {
                    return Err(Error::InvalidHierarchy {
                        joint: j,
                        parent: *p,
                    })
                }
                None => return bad(format!("joint {j} has no parent")),
            }
        }
        if self.head_joint >= k {
            return bad("head joint out of range".into());
        }
        if self.identity_basis.iter().any(|b| b.len() != n)
            || self.expression_basis.iter().any(|b| b.len() != n)
        {
            return bad("basis row length differs from vertex count".into());
        }
        if self.joint_identity_basis.len() != self.n_identity()
            || self.joint_identity_basis.iter().any(|b| b.len() != k)
        {
            return bad("joint identity basis shape".into());
        }
        if self.skin_weights.len() != k || self.skin_weights.iter().any(|w| w.len() != n) {
            return bad("skinning weight shape".into());
        }
        for v in 0..n {
            let mut sum = 0.0;
            for w in &self.skin_weights {
                if !(w[v] >= 0.0) {
                    return bad(format!("negative skinning weight at vertex {v}"));
                }
                sum += w[v];
            }
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("skinning weights of vertex {v} sum to {sum}"));
            }
        }
        for region in Region::ALL {
            let Some(m) = self.masks.get(&region) else {
                return bad(format!("missing mask {region}"));
            };
            if m.is_empty() || m.windows(2).any(|w| w[0] >= w[1]) || m.last() >= Some(&n) {
                return bad(format!("mask {region} must be non-empty, sorted, unique and in range"));
            }
        }
        if self.mask(Region::Frontal).len() >= n {
            return bad("frontal mask must be a strict subset".into());
        }
        for &v in &self.cranium {
            if self.skin_weights[self.head_joint][v] != 1.0 {
                return bad(format!("cranium vertex {v} is not fully bound to the head"));
            }
            for (i, basis) in self.expression_basis.iter().enumerate() {
                if basis[v] != Vector3::zeros() {
                    return bad(format!("expression {i} moves cranium vertex {v}"));
                }
            }
        }
        if self.skull.is_empty() {
            return bad("no skull points".into());
        }
        if self.faces.iter().flatten().any(|&i| i as usize >= n) {
            return bad("face index out of range".into());
        }
        Ok(())
    }
}
