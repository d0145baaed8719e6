//! Maximin (bottleneck) edges and MALIS pair counting.
//!
//! Every pair of voxels is connected in the affinity graph by some path
//! whose weakest edge is as strong as possible; that weakest edge is the
//! pair's maximin edge. All maximin edges lie on a maximum spanning tree, so
//! a single Kruskal sweep in decreasing affinity order finds them: when an
//! edge joins two components, it is the maximin edge of exactly the pairs
//! formed by one voxel from each side. Keeping a histogram of ground-truth
//! labels per component turns that into same-label (`pos`) and cross-label
//! (`neg`) pair counts.
//!
//! Edges are swept in the order (affinity desc, channel asc, z, y, x asc),
//! which is the edge slot order for equal affinities.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::dsu::DisjointSets;
use crate::volume::{AffinityVolume, Coord, EdgeVolume, LabelVolume, Shape3};

#[derive(Debug, Error)]
pub enum MalisError {
    #[error("shape mismatch: affinities {0}, labels {1}")]
    ShapeMismatch(Shape3, Shape3),
    #[error("voxel {0:?} is outside the volume")]
    OutOfBounds(Coord),
    #[error("maximin affinity needs two distinct voxels")]
    SameVoxel,
}

/// Per-edge same-label and cross-label pair counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounts {
    pub pos: EdgeVolume<u64>,
    pub neg: EdgeVolume<u64>,
}

impl PairCounts {
    pub fn total_pos(&self) -> u64 {
        self.pos.data().iter().sum()
    }

    pub fn total_neg(&self) -> u64 {
        self.neg.data().iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct MalisResult {
    pub loss: f64,
    /// Derivative of the loss with respect to each affinity.
    pub gradient: EdgeVolume<f32>,
}

/// Strongest-first sweep order over in-bounds edge slots.
pub fn sweep_order(aff: &AffinityVolume) -> Vec<usize> {
    let shape = aff.shape();
    let mut slots = Vec::with_capacity(shape.edge_slots());
    shape.for_each_edge(|slot, _, _| slots.push(slot));
    // Stable sort keeps slot order among equal affinities.
    slots.sort_by(|&a, &b| {
        aff.slot(b)
            .partial_cmp(&aff.slot(a))
            .unwrap_or(Ordering::Equal)
    });
    slots
}

fn endpoints(shape: Shape3, slot: usize) -> (usize, usize) {
    let (c, v) = shape.slot_parts(slot);
    (v, v + shape.strides()[c])
}

/// Largest achievable minimum affinity over all paths from `a` to `b`.
///
/// Every in-bounds edge counts as present, so the result is 0 only when the
/// best path has to cross a zero-affinity edge.
pub fn maximin_affinity(aff: &AffinityVolume, a: Coord, b: Coord) -> Result<f32, MalisError> {
    let shape = aff.shape();
    for c in [a, b] {
        if !shape.contains(c) {
            return Err(MalisError::OutOfBounds(c));
        }
    }
    if a == b {
        return Err(MalisError::SameVoxel);
    }
    let (va, vb) = (shape.index(a), shape.index(b));
    let mut sets = DisjointSets::new(shape.len());
    for slot in sweep_order(aff) {
        let (u, v) = endpoints(shape, slot);
        sets.union(u, v);
        if sets.same(va, vb) {
            return Ok(aff.slot(slot));
        }
    }
    unreachable!("the voxel grid is connected")
}

/// Assigns every pair of labeled voxels to its maximin edge.
///
/// Label 0 voxels carry connectivity but are never part of a counted pair.
pub fn malis_edge_counts(aff: &AffinityVolume, gt: &LabelVolume) -> Result<PairCounts, MalisError> {
    let shape = aff.shape();
    if gt.shape() != shape {
        return Err(MalisError::ShapeMismatch(shape, gt.shape()));
    }
    let mut pos = vec![0u64; shape.edge_slots()];
    let mut neg = vec![0u64; shape.edge_slots()];

    let mut histograms: Vec<HashMap<u64, u64>> = gt
        .data()
        .iter()
        .map(|&l| {
            let mut h = HashMap::new();
            if l != 0 {
                h.insert(l, 1);
            }
            h
        })
        .collect();
    let mut labeled: Vec<u64> = gt.data().iter().map(|&l| u64::from(l != 0)).collect();
    let mut sets = DisjointSets::new(shape.len());

    for slot in sweep_order(aff) {
        let (u, v) = endpoints(shape, slot);
        let (ru, rv) = (sets.find(u), sets.find(v));
        if ru == rv {
            continue;
        }
        let (mut big, mut small) = (
            std::mem::take(&mut histograms[ru]),
            std::mem::take(&mut histograms[rv]),
        );
        if big.len() < small.len() {
            std::mem::swap(&mut big, &mut small);
        }
        let same: u64 = small
            .iter()
            .map(|(label, n)| n * big.get(label).copied().unwrap_or(0))
            .sum();
        pos[slot] = same;
        neg[slot] = labeled[ru] * labeled[rv] - same;
        for (label, n) in small {
            *big.entry(label).or_insert(0) += n;
        }
        let total = labeled[ru] + labeled[rv];
        let root = sets.union(ru, rv).expect("distinct roots");
        histograms[root] = big;
        labeled[root] = total;
    }

    Ok(PairCounts {
        pos: EdgeVolume::new(shape, pos).expect("sized to shape"),
        neg: EdgeVolume::new(shape, neg).expect("sized to shape"),
    })
}

/// Quadratic MALIS loss for precomputed counts.
///
/// Each same-label pair pulls its maximin edge toward 1, each cross-label
/// pair toward 0. With `normalize`, loss and gradient are divided by the
/// number of counted pairs.
pub fn loss_from_counts(aff: &AffinityVolume, counts: &PairCounts, normalize: bool) -> MalisResult {
    let shape = aff.shape();
    let mut loss = 0.0f64;
    let mut grad = vec![0.0f64; shape.edge_slots()];
    let (pos, neg) = (counts.pos.data(), counts.neg.data());
    for slot in 0..shape.edge_slots() {
        if pos[slot] == 0 && neg[slot] == 0 {
            continue;
        }
        let a = f64::from(aff.slot(slot));
        let (p, n) = (pos[slot] as f64, neg[slot] as f64);
        loss += p * (a - 1.0).powi(2) + n * a * a;
        grad[slot] = 2.0 * p * (a - 1.0) + 2.0 * n * a;
    }
    if normalize {
        let pairs = (counts.total_pos() + counts.total_neg()) as f64;
        if pairs > 0.0 {
            loss /= pairs;
            grad.iter_mut().for_each(|g| *g /= pairs);
        } else {
            loss = 0.0;
        }
    }
    let gradient = EdgeVolume::new(shape, grad.into_iter().map(|g| g as f32).collect())
        .expect("sized to shape");
    MalisResult { loss, gradient }
}

pub fn malis_gradient(
    aff: &AffinityVolume,
    gt: &LabelVolume,
    normalize: bool,
) -> Result<MalisResult, MalisError> {
    let counts = malis_edge_counts(aff, gt)?;
    Ok(loss_from_counts(aff, &counts, normalize))
}

/// One gradient-descent step on the affinities, clamped back into `[0, 1]`.
pub fn gradient_step(aff: &AffinityVolume, gradient: &EdgeVolume<f32>, step: f32) -> AffinityVolume {
    let moved = aff
        .data()
        .iter()
        .zip(gradient.data())
        .map(|(&a, &g)| a - step * g)
        .collect();
    let field = EdgeVolume::new(aff.shape(), moved).expect("same shape");
    AffinityVolume::from_clamped(&field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{CHANNEL_X, CHANNEL_Y};

    fn chain(affs: &[f32]) -> AffinityVolume {
        let shape = Shape3::new(1, 1, affs.len() + 1).unwrap();
        AffinityVolume::from_fn(shape, |c, [_, _, x]| if c == CHANNEL_X { affs[x] } else { 0.0 })
    }

    fn labels(shape: Shape3, data: &[u64]) -> LabelVolume {
        LabelVolume::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn maximin_on_a_chain() {
        let aff = chain(&[0.9, 0.4]);
        assert_eq!(maximin_affinity(&aff, [0, 0, 0], [0, 0, 2]).unwrap(), 0.4);
        assert_eq!(maximin_affinity(&aff, [0, 0, 0], [0, 0, 1]).unwrap(), 0.9);
    }

    #[test]
    fn maximin_prefers_the_detour() {
        let shape = Shape3::new(1, 2, 2).unwrap();
        let aff = AffinityVolume::from_fn(shape, |c, [_, y, x]| match (c, y, x) {
            (CHANNEL_X, 0, 0) => 0.2,
            (CHANNEL_X, 1, 0) => 0.7,
            (CHANNEL_Y, 0, 0) => 0.6,
            (CHANNEL_Y, 0, 1) => 0.5,
            _ => 0.0,
        });
        assert_eq!(maximin_affinity(&aff, [0, 0, 0], [0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn maximin_rejects_bad_voxels() {
        let aff = chain(&[0.9, 0.4]);
        assert!(matches!(
            maximin_affinity(&aff, [0, 0, 1], [0, 0, 1]),
            Err(MalisError::SameVoxel)
        ));
        assert!(matches!(
            maximin_affinity(&aff, [0, 0, 0], [0, 1, 0]),
            Err(MalisError::OutOfBounds(_))
        ));
    }

    #[test]
    fn counts_on_a_chain() {
        let aff = chain(&[0.9, 0.4]);
        let gt = labels(aff.shape(), &[1, 1, 2]);
        let counts = malis_edge_counts(&aff, &gt).unwrap();
        let n = aff.shape().len();
        let x = CHANNEL_X * n;
        assert_eq!((counts.pos.slot(x), counts.pos.slot(x + 1)), (1, 0));
        assert_eq!((counts.neg.slot(x), counts.neg.slot(x + 1)), (0, 2));
        assert_eq!(counts.total_pos() + counts.total_neg(), 3);
    }

    #[test]
    fn unlabeled_voxels_contribute_nothing() {
        let aff = chain(&[0.3, 0.8, 0.5]);
        let gt = LabelVolume::zeros(aff.shape());
        let counts = malis_edge_counts(&aff, &gt).unwrap();
        assert_eq!(counts.total_pos() + counts.total_neg(), 0);
        let result = loss_from_counts(&aff, &counts, true);
        assert_eq!(result.loss, 0.0);
        assert!(result.gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_label_has_only_positive_pairs() {
        let shape = Shape3::new(2, 2, 3).unwrap();
        let aff = AffinityVolume::from_fn(shape, |c, v| {
            ((shape.index(v) * 7 + c * 3) % 11) as f32 / 11.0
        });
        let gt = LabelVolume::from_fn(shape, |_| 5);
        let counts = malis_edge_counts(&aff, &gt).unwrap();
        let n = shape.len() as u64;
        assert_eq!(counts.total_neg(), 0);
        assert_eq!(counts.total_pos(), n * (n - 1) / 2);
    }

    #[test]
    fn label_zero_still_carries_connectivity() {
        // 1 - 0 - 1: the pair (v0, v2) passes through the unlabeled voxel.
        let aff = chain(&[0.9, 0.4]);
        let gt = labels(aff.shape(), &[1, 0, 1]);
        let counts = malis_edge_counts(&aff, &gt).unwrap();
        let x = CHANNEL_X * aff.shape().len();
        assert_eq!(counts.pos.slot(x), 0);
        assert_eq!(counts.pos.slot(x + 1), 1);
    }

    #[test]
    fn gradient_on_a_chain() {
        let aff = chain(&[0.9, 0.4]);
        let gt = labels(aff.shape(), &[1, 1, 2]);
        let result = malis_gradient(&aff, &gt, false).unwrap();
        let x = CHANNEL_X * aff.shape().len();
        assert!((result.gradient.slot(x) - (-0.2)).abs() < 1e-6);
        assert!((result.gradient.slot(x + 1) - 1.6).abs() < 1e-6);
        assert!((result.loss - 0.33).abs() < 1e-6);

        let normalized = malis_gradient(&aff, &gt, true).unwrap();
        assert!((normalized.loss - 0.11).abs() < 1e-6);
        assert!((normalized.gradient.slot(x + 1) - 1.6 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_affinities_have_zero_loss() {
        let shape = Shape3::new(2, 3, 3).unwrap();
        let gt = LabelVolume::from_fn(shape, |[_, y, _]| if y < 2 { 1 } else { 2 });
        let aff = AffinityVolume::from_fn(shape, |c, v| {
            let mut u = v;
            u[c] += 1;
            if gt.get(v) == gt.get(u) {
                1.0
            } else {
                0.0
            }
        });
        let result = malis_gradient(&aff, &gt, false).unwrap();
        assert_eq!(result.loss, 0.0);
        assert!(result.gradient.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let aff = chain(&[0.5]);
        let gt = LabelVolume::zeros(Shape3::new(1, 1, 3).unwrap());
        assert!(matches!(
            malis_edge_counts(&aff, &gt),
            Err(MalisError::ShapeMismatch(..))
        ));
    }

    #[test]
    fn gradient_step_moves_against_the_gradient() {
        let aff = chain(&[0.9, 0.4]);
        let gt = labels(aff.shape(), &[1, 1, 2]);
        let result = malis_gradient(&aff, &gt, false).unwrap();
        let moved = gradient_step(&aff, &result.gradient, 0.5);
        let x = CHANNEL_X * aff.shape().len();
        assert!((moved.slot(x) - 1.0).abs() < 1e-6);
        assert_eq!(moved.slot(x + 1), 0.0);
    }
}
