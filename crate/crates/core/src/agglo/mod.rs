//! Hierarchical agglomeration of supervoxels.
//!
//! A best-first loop repeatedly merges the highest-scoring boundary of the
//! region adjacency graph. After each merge the surviving node's boundaries
//! are re-scored and pushed again; older queue entries are recognized as
//! stale by per-node version stamps and skipped.
//!
//! Every merge is recorded in a [`MergeTree`] together with the highest
//! threshold at which it still happens, so any threshold can be replayed
//! without rerunning the loop.

mod features;
mod rag;
mod scorer;
mod train;
mod tree;

pub use features::{
    histogram_bin, ChannelStats, FeatureAccumulator, FeatureVector, CHANNEL_FEATURES,
    FEATURE_LEN, HISTOGRAM_BINS,
};
pub use rag::{edge_key, EdgeKey, Node, Rag};
pub use scorer::{LogisticModel, Scorer, MODEL_FILE_LEN, MODEL_VERSION};
pub use train::{fit_logistic, train_scorer, TrainingOutcome, EPOCHS, LEARNING_RATE, MIN_PURITY};
pub use tree::{apply_threshold, Merge, MergeTree};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::volume::{AffinityVolume, LabelVolume, Shape3};

#[derive(Debug, Error)]
pub enum AggloError {
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Shape3, Shape3),
    #[error("no boundary between segments {0} and {1}")]
    MissingEdge(u64, u64),
    #[error("segment {0} is not in the graph")]
    MissingNode(u64),
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),
    #[error("merge tree does not match the base segmentation: {0}")]
    TreeBaseMismatch(String),
    #[error("malformed merge tree at line {line}: {reason}")]
    BadTree { line: usize, reason: String },
    #[error("malformed model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    score: f64,
    a: u64,
    b: u64,
    version_a: u32,
    version_b: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
            .then_with(|| (self.version_a, self.version_b).cmp(&(other.version_a, other.version_b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs best-first merging on `rag` until the best score drops below `theta`.
///
/// Queue order is score descending, then the smaller label pair. The smaller
/// label of a merged pair survives.
pub fn agglomerate_rag(rag: &mut Rag, scorer: &Scorer, theta: f64) -> Result<MergeTree, AggloError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(AggloError::InvalidThreshold(theta));
    }
    let mut version: HashMap<u64, u32> = rag.nodes().map(|(l, _)| (l, 0)).collect();
    let mut heap = BinaryHeap::new();
    let candidate = |rag: &Rag, version: &HashMap<u64, u32>, a: u64, b: u64| {
        let (a, b) = edge_key(a, b);
        scorer.score(rag, a, b).map(|score| Candidate {
            score,
            a,
            b,
            version_a: version[&a],
            version_b: version[&b],
        })
    };
    for (a, b) in rag.edge_keys() {
        heap.push(candidate(rag, &version, a, b)?);
    }

    let mut tree = MergeTree::default();
    let mut level = f64::INFINITY;
    while let Some(c) = heap.pop() {
        let current = |l: u64, v: u32| version.get(&l) == Some(&v);
        if !current(c.a, c.version_a) || !current(c.b, c.version_b) {
            continue;
        }
        if c.score < theta {
            break;
        }
        rag.merge(c.a, c.b)?;
        version.remove(&c.b);
        *version.get_mut(&c.a).unwrap() += 1;
        // A later merge can score above an earlier one with a learned scorer;
        // it still only happens once every earlier merge has, so its level is
        // capped by theirs.
        level = level.min(c.score);
        tree.merges.push(Merge {
            survivor: c.a,
            absorbed: c.b,
            score: level,
        });
        let neighbors: Vec<u64> = rag.neighbors(c.a).collect();
        for n in neighbors {
            heap.push(candidate(rag, &version, c.a, n)?);
        }
    }
    Ok(tree)
}

/// Agglomerates `labels` at threshold `theta`, returning the merged labeling
/// and the merge record.
pub fn agglomerate(
    labels: &LabelVolume,
    aff: &AffinityVolume,
    scorer: &Scorer,
    theta: f64,
) -> Result<(LabelVolume, MergeTree), AggloError> {
    let mut rag = Rag::build(labels, aff)?;
    let tree = agglomerate_rag(&mut rag, scorer, theta)?;
    let merged = tree.relabel(labels, 0.0)?;
    Ok((merged, tree))
}
