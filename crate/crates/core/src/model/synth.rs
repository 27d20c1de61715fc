//! Procedural head model standing in for scanned and artist-authored assets.
//!
//! The template is a subdivided icosphere deformed into a head with a neck
//! stump and nose, brow, chin, lip and eye-socket features. Everything is
//! derived from the undeformed unit direction `u` of each vertex, with `+y`
//! up and the face looking down `+z`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelData, Region, HEAD, JAW, NECK, ROOT};
use crate::error::{Error, Result};
use crate::geometry::rotation::angle_axis_to_matrix;
use crate::geometry::VertexBlock;

pub const MIN_VERTICES: usize = 500;

/// Rounds of neighbor averaging applied to identity noise fields.
const IDENTITY_SMOOTHING_ROUNDS: usize = 20;
/// Inward offset of the skull surface below the cranium skin.
const SKULL_OFFSET_MM: f64 = 6.0;
/// Lower bound on `u.z` for the frontal (network input) region.
const FRONTAL_MIN_Z: f64 = 0.0;
/// Forehead skin slides over the skull when the brows move.
const FOREHEAD_LIFT_MM: f64 = 6.0;
const FOREHEAD_RADIUS: f64 = 0.6;

/// Hand-placed expression shapes, in basis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpressionShape {
    JawOpen,
    JawLeft,
    JawRight,
    MouthStretchLeft,
    MouthStretchRight,
    LipPucker,
    UpperLipRaise,
    ChinRaise,
    BrowRaiseLeft,
    BrowRaiseRight,
    BrowFurrow,
    CheekPuffLeft,
    CheekPuffRight,
    NoseWrinkle,
    SquintLeft,
    SquintRight,
}

pub const EXPRESSION_SHAPES: [ExpressionShape; 16] = [
    ExpressionShape::JawOpen,
    ExpressionShape::JawLeft,
    ExpressionShape::JawRight,
    ExpressionShape::MouthStretchLeft,
    ExpressionShape::MouthStretchRight,
    ExpressionShape::LipPucker,
    ExpressionShape::UpperLipRaise,
    ExpressionShape::ChinRaise,
    ExpressionShape::BrowRaiseLeft,
    ExpressionShape::BrowRaiseRight,
    ExpressionShape::BrowFurrow,
    ExpressionShape::CheekPuffLeft,
    ExpressionShape::CheekPuffRight,
    ExpressionShape::NoseWrinkle,
    ExpressionShape::SquintLeft,
    ExpressionShape::SquintRight,
];

/// A raised-cosine bump on the front of the face, in `(u.x, u.y)`.
#[derive(Debug, Clone, Copy)]
struct Window {
    cx: f64,
    cy: f64,
    radius: f64,
}

impl Window {
    const fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Self { cx, cy, radius }
    }

    fn eval(&self, u: &Vector3<f64>) -> f64 {
        let d = ((u.x - self.cx).powi(2) + (u.y - self.cy).powi(2)).sqrt();
        if d >= self.radius {
            return 0.0;
        }
        0.5 * (1.0 + (std::f64::consts::PI * d / self.radius).cos()) * smoothstep(0.0, 0.3, u.z)
    }
}

/// Hermite smoothstep; `e0 > e1` gives a falling edge.
fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn gauss2(u: &Vector3<f64>, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    (-(u.x - cx).powi(2) / (2.0 * sx * sx) - (u.y - cy).powi(2) / (2.0 * sy * sy)).exp()
}

/// Head surface point for a unit direction.
fn head_point(u: &Vector3<f64>) -> Vector3<f64> {
    let front = smoothstep(0.0, 0.35, u.z);
    let brow = 6.0 * (-(u.y - 0.3).powi(2) / (2.0 * 0.06 * 0.06)).exp() * (-u.x * u.x / (2.0 * 0.45 * 0.45)).exp();
    let bump = front
        * (22.0 * gauss2(u, 0.0, -0.05, 0.09, 0.16)
            + brow
            + 8.0 * gauss2(u, 0.0, -0.55, 0.15, 0.08)
            - 7.0 * (gauss2(u, 0.3, 0.15, 0.09, 0.07) + gauss2(u, -0.3, 0.15, 0.09, 0.07))
            + 4.0 * gauss2(u, 0.0, -0.38, 0.2, 0.05));
    let jaw_taper = 1.0 - 0.22 * smoothstep(-0.15, -0.65, u.y) * smoothstep(-0.2, 0.4, u.z);
    let mut p = Vector3::new(72.0 * u.x * jaw_taper, 98.0 * u.y, 92.0 * u.z) + u * bump;

    let s = smoothstep(-0.62, -0.82, u.y);
    if s > 0.0 {
        let rho = (u.x * u.x + u.z * u.z).sqrt();
        let (dx, dz) = if rho > 0.0 { (u.x / rho, u.z / rho) } else { (0.0, 0.0) };
        let closing = (rho / 0.4).min(1.0);
        let t = ((-0.62 - u.y) / 0.38).clamp(0.0, 1.0);
        let neck = Vector3::new(50.0 * dx * closing, -60.0 - 120.0 * t, -12.0 + 50.0 * dz * closing);
        p = p * (1.0 - s) + neck * s;
    }
    p
}

/// Subdivided icosahedron with outward-facing triangles.
fn icosphere(level: u32) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn neighbors(n: usize, faces: &[[u32; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for f in faces {
        for i in 0..3 {
            let a = f[i] as usize;
            let b = f[(i + 1) % 3] as usize;
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn vertex_normals(points: &[Vector3<f64>], faces: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut normals = vec![Vector3::zeros(); points.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| i as usize);
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        normals[a] += n;
        normals[b] += n;
        normals[c] += n;
    }
    normals
        .into_iter()
        .zip(points)
        .map(|(n, p)| {
            let n = n.normalize();
            // outward with respect to the head center
            if n.dot(p) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect()
}

struct Weights {
    root: f64,
    neck: f64,
    head: f64,
    jaw: f64,
}

fn skin_weights_for(u: &Vector3<f64>) -> Weights {
    let root = smoothstep(-0.85, -0.97, u.y);
    // the nape blends into the neck higher up than the throat does
    let nape = smoothstep(-0.1, -0.6, u.z);
    let neck = smoothstep(-0.6 + 0.4 * nape, -0.8, u.y) * (1.0 - root);
    let remaining = 1.0 - root - neck;
    let jaw = smoothstep(-0.1, -0.4, u.y) * smoothstep(-0.25, 0.2, u.z) * remaining;
    Weights {
        root,
        neck,
        head: remaining - jaw,
        jaw,
    }
}

fn region_contains(region: Region, u: &Vector3<f64>) -> bool {
    let neck = u.y < -0.7;
    let frontal = u.z > FRONTAL_MIN_Z && u.y > -0.69 && u.y < 0.8;
    let face = !neck && u.z > FRONTAL_MIN_Z - 0.15 && u.y < 0.85;
    match region {
        Region::Full => true,
        Region::Head => !neck,
        Region::Frontal => frontal,
        Region::Face => face || frontal,
        Region::Upper => frontal && u.z > 0.45 && u.y >= -0.15 && u.x.abs() < 0.5,
        Region::Superhero => frontal && u.y > -0.22,
        Region::FaceAndNeck => face || frontal || neck,
    }
}

impl ExpressionShape {
    fn displacement(
        &self,
        u: &Vector3<f64>,
        p: &Vector3<f64>,
        jaw_weight: f64,
        jaw_pivot: &Vector3<f64>,
        jaw_open: &nalgebra::Matrix3<f64>,
    ) -> Vector3<f64> {
        use ExpressionShape::*;
        let windowed = |w: Window, d: Vector3<f64>| d * w.eval(u);
        // fades out below the hairline, where the cranium is rigid
        let forehead = |cx: f64, lift: f64| {
            Vector3::new(0.0, lift, 0.0) * Window::new(cx, 0.3, FOREHEAD_RADIUS).eval(u) * smoothstep(0.5, 0.3, u.y)
        };
        match self {
            JawOpen => (jaw_open * (p - jaw_pivot) - (p - jaw_pivot)) * jaw_weight,
            JawLeft => Vector3::new(5.0, 0.0, 0.0) * jaw_weight,
            JawRight => Vector3::new(-5.0, 0.0, 0.0) * jaw_weight,
            MouthStretchLeft => windowed(Window::new(0.28, -0.38, 0.2), Vector3::new(4.0, 1.5, -2.0)),
            MouthStretchRight => windowed(Window::new(-0.28, -0.38, 0.2), Vector3::new(-4.0, 1.5, -2.0)),
            LipPucker => windowed(Window::new(0.0, -0.38, 0.2), Vector3::new(0.0, 0.0, 6.0)),
            UpperLipRaise => windowed(Window::new(0.0, -0.27, 0.14), Vector3::new(0.0, 4.0, 1.0)),
            ChinRaise => windowed(Window::new(0.0, -0.55, 0.18), Vector3::new(0.0, 4.0, 3.0)),
            BrowRaiseLeft => {
                windowed(Window::new(0.3, 0.28, 0.22), Vector3::new(0.0, 6.0, 1.0))
                    + forehead(0.2, FOREHEAD_LIFT_MM)
            }
            BrowRaiseRight => {
                windowed(Window::new(-0.3, 0.28, 0.22), Vector3::new(0.0, 6.0, 1.0))
                    + forehead(-0.2, FOREHEAD_LIFT_MM)
            }
            BrowFurrow => {
                windowed(Window::new(0.0, 0.24, 0.22), Vector3::new(-12.0 * u.x, -2.5, 0.5))
                    + forehead(0.0, -0.5 * FOREHEAD_LIFT_MM)
            }
            CheekPuffLeft => windowed(Window::new(0.5, -0.22, 0.24), u * 6.0),
            CheekPuffRight => windowed(Window::new(-0.5, -0.22, 0.24), u * 6.0),
            NoseWrinkle => windowed(Window::new(0.0, 0.0, 0.14), Vector3::new(0.0, 3.0, -1.0)),
            SquintLeft => windowed(Window::new(0.3, 0.07, 0.12), Vector3::new(0.0, 3.0, 0.5)),
            SquintRight => windowed(Window::new(-0.3, 0.07, 0.12), Vector3::new(0.0, 3.0, 0.5)),
        }
    }
}

/// Builds a procedural head model. The icosphere level is the smallest one
/// with at least `n_vertices_target` vertices (2,562 at level 4).
pub fn synth_model(
    seed: u64,
    n_vertices_target: usize,
    n_identity: usize,
    n_expression: usize,
) -> Result<ModelData> {
    if n_vertices_target < MIN_VERTICES {
        return Err(Error::InvalidConfig(format!(
            "at least {MIN_VERTICES} vertices required, got {n_vertices_target}"
        )));
    }
    let mut level = 0;
    while 10 * 4usize.pow(level) + 2 < n_vertices_target {
        level += 1;
    }
    let (dirs, faces) = icosphere(level);
    let n = dirs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let positions: Vec<Vector3<f64>> = dirs.iter().map(head_point).collect();
    let template: VertexBlock = positions.iter().map(|p| Point3::from(*p)).collect();

    let joints = vec![
        Point3::new(0.0, -175.0, -15.0),
        Point3::new(0.0, -110.0, -15.0),
        Point3::new(0.0, -45.0, -10.0),
        Point3::new(0.0, -15.0, 5.0),
    ];
    let parents = vec![None, Some(ROOT), Some(NECK), Some(HEAD)];

    let mut skin_weights = vec![vec![0.0; n]; 4];
    for (v, u) in dirs.iter().enumerate() {
        let w = skin_weights_for(u);
        skin_weights[ROOT][v] = w.root;
        skin_weights[NECK][v] = w.neck;
        skin_weights[HEAD][v] = w.head;
        skin_weights[JAW][v] = w.jaw;
    }

    let masks: BTreeMap<Region, Vec<usize>> = Region::ALL
        .into_iter()
        .map(|r| (r, (0..n).filter(|&v| region_contains(r, &dirs[v])).collect()))
        .collect();

    let cranium: Vec<usize> = (0..n)
        .filter(|&v| {
            let u = &dirs[v];
            skin_weights[HEAD][v] == 1.0 && (u.y > 0.5 || u.z < -0.2)
        })
        .collect();
    let is_cranium = {
        let mut flags = vec![false; n];
        cranium.iter().for_each(|&v| flags[v] = true);
        flags
    };

    // Identity: smooth random fields with unit RMS displacement.
    let adjacency = neighbors(n, &faces);
    let identity_basis: Vec<Vec<Vector3<f64>>> = (0..n_identity)
        .map(|_| {
            let mut field: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    )
                })
                .collect();
            for _ in 0..IDENTITY_SMOOTHING_ROUNDS {
                field = (0..n)
                    .map(|v| {
                        let sum = adjacency[v].iter().fold(field[v], |acc, &w| acc + field[w]);
                        sum / (1 + adjacency[v].len()) as f64
                    })
                    .collect();
            }
            let rms = (field.iter().map(|d| d.norm_squared()).sum::<f64>() / n as f64).sqrt();
            field.iter().map(|d| d / rms).collect()
        })
        .collect();

    let joint_identity_basis: Vec<Vec<Vector3<f64>>> = identity_basis
        .iter()
        .map(|row| {
            skin_weights
                .iter()
                .map(|w| {
                    let total: f64 = w.iter().sum();
                    if total == 0.0 {
                        return Vector3::zeros();
                    }
                    row.iter().zip(w).fold(Vector3::zeros(), |acc, (d, wv)| acc + d * *wv) / total
                })
                .collect()
        })
        .collect();

    // Expressions: localized shapes, zero on the cranium.
    let jaw_pivot = joints[JAW].coords;
    let jaw_open = angle_axis_to_matrix(15f64.to_radians(), &Vector3::x()).expect("unit axis");
    let mut expression_basis = Vec::with_capacity(n_expression);
    for i in 0..n_expression {
        let row: Vec<Vector3<f64>> = if let Some(shape) = EXPRESSION_SHAPES.get(i) {
            (0..n)
                .map(|v| shape.displacement(&dirs[v], &positions[v], skin_weights[JAW][v], &jaw_pivot, &jaw_open))
                .collect()
        } else {
            let window = Window::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.6..0.4),
                rng.random_range(0.12..0.25),
            );
            let dir = Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
            .normalize()
                * 4.0;
            dirs.iter().map(|u| dir * window.eval(u)).collect()
        };
        let row = row
            .into_iter()
            .enumerate()
            .map(|(v, d)| if is_cranium[v] { Vector3::zeros() } else { d })
            .collect();
        expression_basis.push(row);
    }

    let normals = vertex_normals(&positions, &faces);
    let skull: VertexBlock = cranium
        .iter()
        .map(|&v| Point3::from(positions[v] - normals[v] * SKULL_OFFSET_MM))
        .collect();

    let psi = ModelData {
        template,
        joints,
        identity_basis,
        expression_basis,
        joint_identity_basis,
        skin_weights,
        parents,
        head_joint: HEAD,
        skull,
        masks,
        cranium,
        faces,
        seed,
    };
    psi.validate()?;
    Ok(psi)
}
