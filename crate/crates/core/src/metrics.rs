//! Split variation of information.
//!
//! `vi_under = H(GT | Seg)` grows with false merges, `vi_over = H(Seg | GT)`
//! with false splits. Entropies are in bits. Voxels with ground truth 0 are
//! ignored; segmentation label 0 on a labeled voxel counts as one more
//! segment.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::agglo::{AggloError, MergeTree};
use crate::volume::{LabelVolume, Shape3};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: segmentation {0}, ground truth {1}")]
    ShapeMismatch(Shape3, Shape3),
    #[error("ground truth has no labeled voxels")]
    EmptyOverlap,
    #[error("thresholds must be strictly decreasing")]
    UnsortedThresholds,
    #[error(transparent)]
    Agglo(#[from] AggloError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViScore {
    pub vi_under: f64,
    pub vi_over: f64,
}

impl ViScore {
    pub fn total(&self) -> f64 {
        self.vi_under + self.vi_over
    }
}

pub fn split_vi(seg: &LabelVolume, gt: &LabelVolume) -> Result<ViScore, MetricsError> {
    if seg.shape() != gt.shape() {
        return Err(MetricsError::ShapeMismatch(seg.shape(), gt.shape()));
    }
    let mut joint: HashMap<(u64, u64), u64> = HashMap::new();
    let mut seg_totals: HashMap<u64, u64> = HashMap::new();
    let mut gt_totals: HashMap<u64, u64> = HashMap::new();
    let mut total = 0u64;
    for (&s, &g) in seg.data().iter().zip(gt.data()) {
        if g == 0 {
            continue;
        }
        *joint.entry((s, g)).or_insert(0) += 1;
        *seg_totals.entry(s).or_insert(0) += 1;
        *gt_totals.entry(g).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::EmptyOverlap);
    }
    // Fixed summation order keeps results bit-identical across runs.
    let mut cells: Vec<((u64, u64), u64)> = joint.into_iter().collect();
    cells.sort_unstable();
    let n = total as f64;
    let (mut under, mut over) = (0.0f64, 0.0f64);
    for ((s, g), count) in cells {
        let c = count as f64;
        under += c * (seg_totals[&s] as f64 / c).log2();
        over += c * (gt_totals[&g] as f64 / c).log2();
    }
    Ok(ViScore {
        vi_under: under / n,
        vi_over: over / n,
    })
}

/// Split-VI at a sequence of agglomeration thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ViCurve {
    pub points: Vec<(f64, ViScore)>,
}

impl ViCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,vi_under,vi_over\n");
        for (theta, vi) in &self.points {
            writeln!(out, "{:.6},{:.6},{:.6}", theta, vi.vi_under, vi.vi_over).unwrap();
        }
        out
    }

    /// Point with the smallest total VI.
    pub fn best(&self) -> Option<(f64, ViScore)> {
        self.points
            .iter()
            .copied()
            .min_by(|a, b| a.1.total().total_cmp(&b.1.total()))
    }
}

/// `count` evenly spaced thresholds from 1 down to 0.
pub fn threshold_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..count)
            .map(|i| 1.0 - i as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn vi_curve(
    tree: &MergeTree,
    base: &LabelVolume,
    gt: &LabelVolume,
    thetas: &[f64],
) -> Result<ViCurve, MetricsError> {
    if thetas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(MetricsError::UnsortedThresholds);
    }
    tree.validate(base)?;
    let points = thetas
        .par_iter()
        .map(|&theta| {
            let seg = crate::agglo::apply_threshold(tree, base, theta)?;
            Ok((theta, split_vi(&seg, gt)?))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(ViCurve { points })
}
