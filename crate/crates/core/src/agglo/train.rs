//! Boundary classifier training against ground truth.
//!
//! Decisions come from a simulated agglomeration: a boundary is a merge
//! example when both segments have the same dominant ground-truth label and
//! each is at least half pure. Positive pairs are merged, features are
//! recomputed, and the boundaries that changed are collected again until no
//! positives remain.

use std::collections::{BTreeSet, HashMap};

use super::features::{FeatureVector, FEATURE_LEN};
use super::rag::Rag;
use super::scorer::{sigmoid, LogisticModel};
use super::AggloError;
use crate::dsu::DisjointSets;
use crate::volume::LabelVolume;

pub const EPOCHS: usize = 500;
pub const LEARNING_RATE: f64 = 0.1;
pub const MIN_PURITY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: LogisticModel,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<bool>,
    /// Simulated agglomeration rounds that produced examples.
    pub rounds: usize,
}

impl TrainingOutcome {
    /// Fraction of collected examples the model classifies correctly at 0.5.
    pub fn accuracy(&self) -> f64 {
        let correct = self
            .features
            .iter()
            .zip(&self.targets)
            .filter(|(f, &t)| (self.model.predict(f) >= 0.5) == t)
            .count();
        correct as f64 / self.targets.len().max(1) as f64
    }
}

/// Ground-truth label histogram of one segment.
#[derive(Debug, Clone, Default)]
struct Overlap {
    counts: HashMap<u64, u64>,
}

impl Overlap {
    /// Plurality label over labeled voxels (ties: smaller label) and its purity.
    fn dominant(&self) -> Option<(u64, f64)> {
        let total: u64 = self.counts.values().sum();
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(&label, &n)| (label, n as f64 / total as f64))
    }

    fn absorb(&mut self, other: Overlap) {
        for (l, n) in other.counts {
            *self.counts.entry(l).or_insert(0) += n;
        }
    }
}

fn should_merge(a: &Overlap, b: &Overlap) -> bool {
    match (a.dominant(), b.dominant()) {
        (Some((la, pa)), Some((lb, pb))) => la == lb && pa >= MIN_PURITY && pb >= MIN_PURITY,
        _ => false,
    }
}

/// Collects merge decisions on `rag` (built from `seg`) and fits a logistic
/// model to them.
pub fn train_scorer(
    rag: &Rag,
    seg: &LabelVolume,
    gt: &LabelVolume,
) -> Result<TrainingOutcome, AggloError> {
    if seg.shape() != gt.shape() {
        return Err(AggloError::ShapeMismatch(seg.shape(), gt.shape()));
    }
    let mut overlaps: HashMap<u64, Overlap> = HashMap::new();
    for (&s, &g) in seg.data().iter().zip(gt.data()) {
        if s != 0 && g != 0 {
            *overlaps.entry(s).or_default().counts.entry(g).or_insert(0) += 1;
        }
    }
    let mut rag = rag.clone();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut dirty: Option<BTreeSet<u64>> = None;
    let mut rounds = 0;

    loop {
        let empty = Overlap::default();
        let overlap = |l: u64| overlaps.get(&l).unwrap_or(&empty);
        let mut positives = Vec::new();
        for (a, b) in rag.edge_keys() {
            let positive = should_merge(overlap(a), overlap(b));
            if positive {
                positives.push((a, b));
            }
            let changed = dirty.as_ref().is_none_or(|d| d.contains(&a) || d.contains(&b));
            if changed {
                features.push(rag.edge_features(a, b)?);
                targets.push(positive);
            }
        }
        rounds += 1;
        if positives.is_empty() {
            break;
        }

        let labels: Vec<u64> = rag.nodes().map(|(l, _)| l).collect();
        let index: HashMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut groups = DisjointSets::new(labels.len());
        for &(a, b) in &positives {
            groups.union(index[&a], index[&b]);
        }
        // Smallest label of each group survives.
        let mut survivor: HashMap<usize, u64> = HashMap::new();
        for (i, &l) in labels.iter().enumerate() {
            survivor.entry(groups.find(i)).or_insert(l);
        }
        let mut touched = BTreeSet::new();
        for (i, &l) in labels.iter().enumerate() {
            let keep = survivor[&groups.find(i)];
            if keep != l {
                rag.merge(keep, l)?;
                if let Some(o) = overlaps.remove(&l) {
                    overlaps.entry(keep).or_default().absorb(o);
                }
                touched.insert(keep);
            }
        }
        dirty = Some(touched);
    }

    let positives = targets.iter().filter(|&&t| t).count();
    if targets.is_empty() || positives == 0 || positives == targets.len() {
        return Err(AggloError::DegenerateTraining(format!(
            "{} examples, {} positive",
            targets.len(),
            positives
        )));
    }
    let model = fit_logistic(&features, &targets);
    Ok(TrainingOutcome {
        model,
        features,
        targets,
        rounds,
    })
}

/// Full-batch gradient descent on the mean log-loss over standardized
/// features; the standardization is folded back into the returned weights.
pub fn fit_logistic(features: &[FeatureVector], targets: &[bool]) -> LogisticModel {
    let n = features.len() as f64;
    let mut mean = [0.0; FEATURE_LEN];
    let mut scale = [0.0; FEATURE_LEN];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f.as_slice()) {
            *m += x / n;
        }
    }
    for f in features {
        for ((s, x), m) in scale.iter_mut().zip(f.as_slice()).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let standardized: Vec<[f64; FEATURE_LEN]> = features
        .iter()
        .map(|f| {
            let mut z = [0.0; FEATURE_LEN];
            for j in 0..FEATURE_LEN {
                z[j] = (f.0[j] - mean[j]) / scale[j];
            }
            z
        })
        .collect();

    let mut w = [0.0; FEATURE_LEN];
    let mut b = 0.0;
    for _ in 0..EPOCHS {
        let mut gw = [0.0; FEATURE_LEN];
        let mut gb = 0.0;
        for (z, &t) in standardized.iter().zip(targets) {
            let p = sigmoid(b + w.iter().zip(z).map(|(w, x)| w * x).sum::<f64>());
            let err = p - f64::from(u8::from(t));
            for (g, x) in gw.iter_mut().zip(z) {
                *g += err * x;
            }
            gb += err;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= LEARNING_RATE * g / n;
        }
        b -= LEARNING_RATE * gb / n;
    }

    let mut weights = [0.0; FEATURE_LEN];
    let mut bias = b;
    for j in 0..FEATURE_LEN {
        weights[j] = w[j] / scale[j];
        bias -= w[j] * mean[j] / scale[j];
    }
    LogisticModel { weights, bias }
}
