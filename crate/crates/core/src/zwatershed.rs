//! Thresholded watershed on the affinity graph.
//!
//! Four passes produce an over-segmentation:
//!
//! 1. edges with affinity `>= t_high` are unioned unconditionally;
//! 2. voxels untouched by pass 1 follow their strongest incident edge
//!    (ties: channel ascending, then the lower neighbor first) when it is
//!    `>= t_low`, joining whatever component that edge leads to;
//! 3. voxels with no incident edge `>= t_low` become background;
//! 4. components smaller than `size_min` are absorbed into the neighbor
//!    across their strongest boundary edge if it is `>= t_merge`; whatever
//!    stays too small becomes background.
//!
//! Output labels are `1..=K`, numbered by first voxel in flat order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::dsu::DisjointSets;
use crate::volume::{AffinityVolume, LabelVolume, Shape3};

#[derive(Debug, Error)]
pub enum WatershedError {
    #[error("shape mismatch: labels {0}, affinities {1}")]
    ShapeMismatch(Shape3, Shape3),
    #[error("invalid watershed parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatershedParams {
    pub t_high: f32,
    pub t_low: f32,
    pub size_min: usize,
    pub t_merge: f32,
}

impl Default for WatershedParams {
    fn default() -> Self {
        Self {
            t_high: 0.98,
            t_low: 0.2,
            size_min: 25,
            t_merge: 0.3,
        }
    }
}

impl WatershedParams {
    pub fn validate(&self) -> Result<(), WatershedError> {
        for (name, t) in [
            ("t_high", self.t_high),
            ("t_low", self.t_low),
            ("t_merge", self.t_merge),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(WatershedError::InvalidParams(format!(
                    "{name} = {t} is outside [0, 1]"
                )));
            }
        }
        if !(self.t_low <= self.t_merge && self.t_merge <= self.t_high) {
            return Err(WatershedError::InvalidParams(format!(
                "need t_low <= t_merge <= t_high, got {} / {} / {}",
                self.t_low, self.t_merge, self.t_high
            )));
        }
        Ok(())
    }
}

/// Voxel counts of the output segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasinStats {
    /// `sizes[k - 1]` is the voxel count of label `k`.
    pub sizes: Vec<u64>,
    pub background: u64,
}

impl BasinStats {
    pub fn of(labels: &LabelVolume) -> Self {
        let max = labels.data().iter().copied().max().unwrap_or(0) as usize;
        let mut sizes = vec![0u64; max];
        let mut background = 0;
        for &l in labels.data() {
            if l == 0 {
                background += 1;
            } else {
                sizes[l as usize - 1] += 1;
            }
        }
        Self { sizes, background }
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().sum::<u64>() + self.background
    }
}

/// Strongest incident edge of voxel `v` as `(affinity, neighbor)`.
fn steepest_edge(aff: &AffinityVolume, v: usize) -> Option<(f32, usize)> {
    let shape = aff.shape();
    let n = shape.len();
    let mut best: Option<(f32, usize)> = None;
    for c in 0..3 {
        let lower = shape.backward(v, c).map(|u| (aff.slot(c * n + u), u));
        let upper = shape.forward(v, c).map(|u| (aff.slot(c * n + v), u));
        for (a, u) in lower.into_iter().chain(upper) {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, u));
            }
        }
    }
    best
}

pub fn zwatershed(
    aff: &AffinityVolume,
    params: &WatershedParams,
) -> Result<(LabelVolume, BasinStats), WatershedError> {
    params.validate()?;
    let shape = aff.shape();
    let n = shape.len();
    let mut sets = DisjointSets::new(n);
    let mut seeded = vec![false; n];

    shape.for_each_edge(|slot, u, v| {
        if aff.slot(slot) >= params.t_high {
            sets.union(u, v);
            seeded[u] = true;
            seeded[v] = true;
        }
    });

    let steepest: Vec<Option<(f32, usize)>> = (0..n)
        .into_par_iter()
        .map(|v| if seeded[v] { None } else { steepest_edge(aff, v) })
        .collect();

    let mut background = vec![false; n];
    for (v, edge) in steepest.iter().enumerate() {
        if seeded[v] {
            continue;
        }
        match edge {
            Some((a, u)) if *a >= params.t_low => {
                sets.union(v, *u);
            }
            _ => background[v] = true,
        }
    }

    let mut root_label: HashMap<usize, u64> = HashMap::new();
    let mut data = vec![0u64; n];
    for v in 0..n {
        if background[v] {
            continue;
        }
        let root = sets.find(v);
        let next = root_label.len() as u64 + 1;
        data[v] = *root_label.entry(root).or_insert(next);
    }
    let labels = LabelVolume::new(shape, data).expect("sized to shape");
    let labels = size_filter(&labels, aff, params.size_min, params.t_merge)?;
    let stats = BasinStats::of(&labels);
    Ok((labels, stats))
}

#[derive(Debug, PartialEq)]
struct Candidate {
    affinity: f32,
    label: u64,
    region: usize,
    version: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.affinity
            .total_cmp(&other.affinity)
            .then_with(|| other.label.cmp(&self.label))
            .then_with(|| self.version.cmp(&other.version))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Regions {
    labels: Vec<u64>,
    sizes: Vec<u64>,
    /// neighbor region -> strongest boundary affinity
    adjacency: Vec<HashMap<usize, f32>>,
    alive: Vec<bool>,
    version: Vec<u32>,
}

impl Regions {
    /// Strongest qualifying neighbor; ties go to the smaller label.
    fn best_neighbor(&self, r: usize, t_merge: f32) -> Option<(f32, usize)> {
        self.adjacency[r]
            .iter()
            .filter(|(_, &a)| a >= t_merge)
            .map(|(&m, &a)| (a, m))
            .max_by(|x, y| {
                x.0.total_cmp(&y.0)
                    .then_with(|| self.labels[y.1].cmp(&self.labels[x.1]))
            })
    }

    fn absorb(&mut self, into: usize, from: usize) {
        self.sizes[into] += self.sizes[from];
        let from_adj = std::mem::take(&mut self.adjacency[from]);
        for (m, a) in from_adj {
            self.adjacency[m].remove(&from);
            if m == into {
                continue;
            }
            let e = self.adjacency[into].entry(m).or_insert(a);
            *e = e.max(a);
            let e = self.adjacency[m].entry(into).or_insert(a);
            *e = e.max(a);
        }
        self.alive[from] = false;
        self.version[into] += 1;
    }
}

/// Absorbs segments smaller than `size_min` into their strongest neighbor
/// and renumbers the result densely.
///
/// When `size_min <= 1` no segment can be too small and the input is
/// returned unchanged.
pub fn size_filter(
    labels: &LabelVolume,
    aff: &AffinityVolume,
    size_min: usize,
    t_merge: f32,
) -> Result<LabelVolume, WatershedError> {
    let shape = labels.shape();
    if aff.shape() != shape {
        return Err(WatershedError::ShapeMismatch(shape, aff.shape()));
    }
    if size_min <= 1 {
        return Ok(labels.clone());
    }
    let size_min = size_min as u64;

    let mut distinct: Vec<u64> = labels.data().iter().copied().filter(|&l| l != 0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let index: HashMap<u64, usize> = distinct.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let region_of: Vec<Option<usize>> = labels
        .data()
        .iter()
        .map(|l| index.get(l).copied())
        .collect();

    let count = distinct.len();
    let mut regions = Regions {
        labels: distinct,
        sizes: vec![0; count],
        adjacency: vec![HashMap::new(); count],
        alive: vec![true; count],
        version: vec![0; count],
    };
    for r in region_of.iter().flatten() {
        regions.sizes[*r] += 1;
    }
    shape.for_each_edge(|slot, u, v| {
        if let (Some(a), Some(b)) = (region_of[u], region_of[v]) {
            if a != b {
                let w = aff.slot(slot);
                for (p, q) in [(a, b), (b, a)] {
                    let e = regions.adjacency[p].entry(q).or_insert(w);
                    *e = e.max(w);
                }
            }
        }
    });

    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<Candidate>, regions: &Regions, r: usize| {
        if let Some((affinity, _)) = regions.best_neighbor(r, t_merge) {
            heap.push(Candidate {
                affinity,
                label: regions.labels[r],
                region: r,
                version: regions.version[r],
            });
        }
    };
    for r in 0..count {
        if regions.sizes[r] < size_min {
            push(&mut heap, &regions, r);
        }
    }

    let mut parent: Vec<usize> = (0..count).collect();
    while let Some(c) = heap.pop() {
        let r = c.region;
        if !regions.alive[r] || regions.version[r] != c.version || regions.sizes[r] >= size_min {
            continue;
        }
        let Some((_, target)) = regions.best_neighbor(r, t_merge) else {
            continue;
        };
        regions.absorb(target, r);
        parent[r] = target;
        if regions.sizes[target] < size_min {
            push(&mut heap, &regions, target);
        }
    }

    let resolve = |mut r: usize| {
        while parent[r] != r {
            r = parent[r];
        }
        r
    };
    let final_label: Vec<u64> = (0..count)
        .map(|r| {
            let root = resolve(r);
            if regions.sizes[root] < size_min {
                0
            } else {
                regions.labels[root]
            }
        })
        .collect();
    let data = region_of
        .iter()
        .map(|r| r.map_or(0, |r| final_label[r]))
        .collect();
    Ok(LabelVolume::new(shape, data)
        .expect("sized to shape")
        .relabel_sequential())
}
