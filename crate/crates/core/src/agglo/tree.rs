use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::AggloError;
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub survivor: u64,
    pub absorbed: u64,
    /// Highest threshold at which this merge is applied.
    pub score: f64,
}

/// Ordered record of agglomeration merges.
///
/// Text form: one `survivor absorbed score` line per merge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeTree {
    pub merges: Vec<Merge>,
}

impl MergeTree {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.merges {
            writeln!(out, "{} {} {}", m.survivor, m.absorbed, m.score).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AggloError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| AggloError::BadTree {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad("expected `survivor absorbed score`"));
            }
            let survivor = fields[0].parse().map_err(|_| bad("bad survivor label"))?;
            let absorbed = fields[1].parse().map_err(|_| bad("bad absorbed label"))?;
            let score: f64 = fields[2].parse().map_err(|_| bad("bad score"))?;
            if !score.is_finite() {
                return Err(bad("score is not finite"));
            }
            merges.push(Merge {
                survivor,
                absorbed,
                score,
            });
        }
        Ok(Self { merges })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), AggloError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AggloError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Checks that the tree can be replayed on `base`: every label exists,
    /// nothing is absorbed twice, and absorbed labels never reappear.
    pub fn validate(&self, base: &LabelVolume) -> Result<(), AggloError> {
        let present: HashSet<u64> = base.data().iter().copied().filter(|&l| l != 0).collect();
        let mut absorbed = HashSet::new();
        for (i, m) in self.merges.iter().enumerate() {
            let mismatch = |what: String| AggloError::TreeBaseMismatch(format!("merge {}: {what}", i + 1));
            if m.survivor == m.absorbed {
                return Err(mismatch(format!("label {} merged with itself", m.survivor)));
            }
            for l in [m.survivor, m.absorbed] {
                if !present.contains(&l) {
                    return Err(mismatch(format!("label {l} is not in the base segmentation")));
                }
                if absorbed.contains(&l) {
                    return Err(mismatch(format!("label {l} was already absorbed")));
                }
            }
            absorbed.insert(m.absorbed);
        }
        Ok(())
    }

    /// Applies, in order, the merges whose score is at least `theta`.
    pub(crate) fn relabel(&self, base: &LabelVolume, theta: f64) -> Result<LabelVolume, AggloError> {
        let mut parent: HashMap<u64, u64> = HashMap::new();
        for m in self.merges.iter().filter(|m| m.score >= theta) {
            parent.insert(m.absorbed, m.survivor);
        }
        if parent.is_empty() {
            return Ok(base.clone());
        }
        let mut resolved: HashMap<u64, u64> = HashMap::new();
        let mut resolve = |l: u64| -> u64 {
            if let Some(&r) = resolved.get(&l) {
                return r;
            }
            let mut r = l;
            while let Some(&p) = parent.get(&r) {
                r = p;
            }
            resolved.insert(l, r);
            r
        };
        let data = base.data().iter().map(|&l| if l == 0 { 0 } else { resolve(l) }).collect();
        Ok(LabelVolume::new(base.shape(), data).expect("same shape"))
    }
}

/// Segmentation obtained by replaying every recorded merge scoring at least
/// `theta` on top of `base`.
pub fn apply_threshold(tree: &MergeTree, base: &LabelVolume, theta: f64) -> Result<LabelVolume, AggloError> {
    tree.validate(base)?;
    tree.relabel(base, theta)
}
