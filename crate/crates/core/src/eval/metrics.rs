//! Verification metrics from genuine and impostor match scores.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub gar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarAtFar {
    pub far: f64,
    pub gar: f64,
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Accept rule `score >= threshold`, swept over every observed score plus
/// one threshold above all of them. Points run from FAR 1 down to FAR 0.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let (mut g, mut i) = (genuine.to_vec(), impostor.to_vec());
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    thresholds
        .into_iter()
        .map(|t| {
            let g_acc = g.len() - g.partition_point(|&s| s < t);
            let i_acc = i.len() - i.partition_point(|&s| s < t);
            RocPoint { threshold: t, far: fraction(i_acc, i.len()), gar: fraction(g_acc, g.len()) }
        })
        .collect()
}

/// Equal error rate by linear interpolation across the first sweep step
/// where `FAR - FRR` changes sign.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    eer_from_roc(&roc(genuine, impostor))
}

pub fn eer_from_roc(points: &[RocPoint]) -> f64 {
    let gap = |p: &RocPoint| p.far - (1.0 - p.gar);
    let Some(idx) = points.iter().position(|p| gap(p) <= 0.0) else {
        return points.last().map_or(0.5, |p| (p.far + 1.0 - p.gar) / 2.0);
    };
    let cur = &points[idx];
    if idx == 0 || gap(cur) == 0.0 {
        return (cur.far + 1.0 - cur.gar) / 2.0;
    }
    let prev = &points[idx - 1];
    let (d0, d1) = (gap(prev), gap(cur));
    let lambda = d0 / (d0 - d1);
    prev.far + lambda * (cur.far - prev.far)
}

/// Highest GAR among sweep points with FAR at or below `target`.
pub fn gar_at_far(points: &[RocPoint], target: f64) -> f64 {
    points.iter().filter(|p| p.far <= target).map(|p| p.gar).fold(0.0, f64::max)
}

/// ROC points as `far,gar` lines with a header.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("far,gar\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.far, p.gar));
    }
    out
}
