use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, VertexBlock};

fn check_pair(pred: &VertexBlock, gt: &VertexBlock) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::CountMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

fn check_lists(pred: &[VertexBlock], gt: &[VertexBlock]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::CountMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    pred.iter().zip(gt).try_for_each(|(p, g)| check_pair(p, g))
}

/// Euclidean distance of every vertex to its reference position.
pub fn vertex_errors(pred: &VertexBlock, gt: &VertexBlock) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt.iter()).map(|(p, g)| (p - g).norm()).collect())
}

/// Mean of all vertex distances and their standard deviation, both taken
/// over every vertex of every sample.
pub fn mean_vertex_distance(pred: &[VertexBlock], gt: &[VertexBlock]) -> Result<(f64, f64)> {
    check_lists(pred, gt)?;
    let mut errors = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        errors.extend(vertex_errors(p, g)?);
    }
    Ok(mean_std(&errors))
}

/// Per-sample maximum vertex distance, averaged over samples.
pub fn max_vertex_distance(pred: &[VertexBlock], gt: &[VertexBlock]) -> Result<f64> {
    check_lists(pred, gt)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sum += vertex_errors(p, g)?.into_iter().fold(0.0, f64::max);
    }
    Ok(sum / pred.len() as f64)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Percentage of correct keypoints over a threshold range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pck {
    pub thresholds: Vec<f64>,
    /// Fraction of vertices whose error is at most each threshold.
    pub curve: Vec<f64>,
    /// Normalized trapezoidal area under the curve, in percent.
    pub auc: f64,
}

/// Evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn thresholds(lo: f64, hi: f64, resolution: usize) -> Result<Vec<f64>> {
    if resolution < 2 || !(hi > lo) {
        return Err(Error::InvalidConfig("PCK needs at least two thresholds over a non-empty range".into()));
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    Ok((0..resolution).map(|i| lo + step * i as f64).collect())
}

/// PCK curve and AUC of precomputed vertex errors.
pub fn pck_from_errors(errors: &[f64], range_mm: (f64, f64), resolution: usize) -> Result<Pck> {
    if errors.is_empty() {
        return Err(Error::Empty("vertex errors"));
    }
    let thresholds = thresholds(range_mm.0, range_mm.1, resolution)?;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<f64> = thresholds
        .iter()
        .map(|t| sorted.partition_point(|e| e <= t) as f64 / n)
        .collect();
    let area: f64 = thresholds
        .windows(2)
        .zip(curve.windows(2))
        .map(|(t, c)| 0.5 * (c[0] + c[1]) * (t[1] - t[0]))
        .sum();
    let auc = 100.0 * area / (range_mm.1 - range_mm.0);
    Ok(Pck { thresholds, curve, auc })
}

pub fn pck_auc(pred: &[VertexBlock], gt: &[VertexBlock], range_mm: (f64, f64), resolution: usize) -> Result<Pck> {
    check_lists(pred, gt)?;
    let mut errors = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        errors.extend(vertex_errors(p, g)?);
    }
    pck_from_errors(&errors, range_mm, resolution)
}

/// Root-mean-square distance between the moved source skull and the target
/// skull.
pub fn skull_energy(s: &RigidTransform, ws: &VertexBlock, wt: &VertexBlock) -> Result<f64> {
    check_pair(ws, wt)?;
    if ws.is_empty() {
        return Err(Error::Empty("skull points"));
    }
    Ok(s.apply(ws).frobenius_distance(wt) / (ws.len() as f64).sqrt())
}

/// Median of a non-empty list; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    fn block(xs: &[f64]) -> VertexBlock {
        xs.iter().map(|&x| Point3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn hand_computed_distances() {
        let zero = block(&[0.0, 0.0]);
        assert_eq!(mean_vertex_distance(&[block(&[1.0, 3.0])], &[zero.clone()]).unwrap().0, 2.0);
        let m = max_vertex_distance(&[block(&[1.0, 3.0]), block(&[2.0, 2.0])], &[zero.clone(), zero.clone()]).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(mean_vertex_distance(&[zero.clone()], &[zero.clone()]).unwrap(), (0.0, 0.0));
        assert!(mean_vertex_distance(&[zero.clone()], &[block(&[0.0])]).is_err());
        assert!(mean_vertex_distance(&[], &[]).is_err());
    }

    #[test]
    fn pck_special_cases() {
        let p = pck_from_errors(&[0.0; 10], (0.0, 5.0), 100).unwrap();
        assert_eq!(p.auc, 100.0);
        assert_eq!(pck_from_errors(&[10.0; 10], (0.0, 5.0), 100).unwrap().auc, 0.0);
        let half = pck_from_errors(&[2.5; 10], (0.0, 5.0), 100).unwrap().auc;
        assert!((half - 50.0).abs() <= 100.0 / 99.0);
        assert!(pck_from_errors(&[1.0], (0.0, 5.0), 1).is_err());
    }

    #[test]
    fn skull_energy_of_translation() {
        let w: VertexBlock = (0..5).map(|i| Point3::new(i as f64, 1.0, -2.0)).collect();
        let wt = RigidTransform::from_translation(Vector3::new(6.0, 8.0, 0.0)).apply(&w);
        assert!((skull_energy(&RigidTransform::identity(), &w, &wt).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
