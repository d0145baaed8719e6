//! Independent reference implementations and instance generators shared by
//! the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use anisoseg::volume::{AffinityVolume, LabelVolume, Shape3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adjacency list of in-bounds edges: `(neighbor, slot)` per voxel.
pub fn adjacency(shape: Shape3) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); shape.len()];
    shape.for_each_edge(|slot, u, v| {
        adj[u].push((v, slot));
        adj[v].push((u, slot));
    });
    adj
}

/// Bottleneck (widest-path) value from `src` to every voxel, by a
/// max-min variant of Dijkstra.
pub fn widest_paths(aff: &AffinityVolume, adj: &[Vec<(usize, usize)>], src: usize) -> Vec<f32> {
    #[derive(PartialEq)]
    struct Item(f32, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> Ordering {
            self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
        }
    }
    let mut best = vec![f32::NEG_INFINITY; adj.len()];
    best[src] = f32::INFINITY;
    let mut heap = BinaryHeap::from([Item(f32::INFINITY, src)]);
    while let Some(Item(w, u)) = heap.pop() {
        if w < best[u] {
            continue;
        }
        for &(v, slot) in &adj[u] {
            let cand = w.min(aff.slot(slot));
            if cand > best[v] {
                best[v] = cand;
                heap.push(Item(cand, v));
            }
        }
    }
    best
}

/// Brute-force MALIS pair counts for affinities with distinct in-bounds
/// values: every labeled pair is charged to the unique edge whose affinity
/// equals the pair's bottleneck value.
pub fn oracle_counts(aff: &AffinityVolume, gt: &LabelVolume) -> (Vec<u64>, Vec<u64>) {
    let shape = aff.shape();
    let adj = adjacency(shape);
    let mut edge_of_value: HashMap<u32, usize> = HashMap::new();
    shape.for_each_edge(|slot, _, _| {
        let prev = edge_of_value.insert(aff.slot(slot).to_bits(), slot);
        assert!(prev.is_none(), "oracle needs distinct affinities");
    });
    let mut pos = vec![0u64; shape.edge_slots()];
    let mut neg = vec![0u64; shape.edge_slots()];
    let labels = gt.data();
    for u in 0..shape.len() {
        if labels[u] == 0 {
            continue;
        }
        let widest = widest_paths(aff, &adj, u);
        for v in u + 1..shape.len() {
            if labels[v] == 0 {
                continue;
            }
            let slot = edge_of_value[&widest[v].to_bits()];
            if labels[u] == labels[v] {
                pos[slot] += 1;
            } else {
                neg[slot] += 1;
            }
        }
    }
    (pos, neg)
}

/// Affinities whose in-bounds values are a random permutation of
/// `(k + 1) / (E + 1)`.
pub fn distinct_affinities(shape: Shape3, r: &mut impl Rng) -> AffinityVolume {
    let slots: Vec<usize> = (0..shape.edge_slots()).filter(|&s| shape.slot_in_bounds(s)).collect();
    let mut values: Vec<f32> = (0..slots.len()).map(|k| (k + 1) as f32 / (slots.len() + 1) as f32).collect();
    values.shuffle(r);
    let mut data = vec![0.0f32; shape.edge_slots()];
    for (s, v) in slots.into_iter().zip(values) {
        data[s] = v;
    }
    AffinityVolume::new(shape, data).unwrap()
}

pub fn random_affinities(shape: Shape3, r: &mut impl Rng) -> AffinityVolume {
    AffinityVolume::from_fn(shape, |_, _| r.random::<f32>())
}

pub fn random_labels(shape: Shape3, max_label: u64, r: &mut impl Rng) -> LabelVolume {
    LabelVolume::from_fn(shape, |_| r.random_range(0..=max_label))
}

pub fn random_shape(max: usize, r: &mut impl Rng) -> Shape3 {
    Shape3::new(r.random_range(1..=max), r.random_range(1..=max), r.random_range(1..=max)).unwrap()
}

/// Split-VI from an explicit dense contingency table, via
/// `H(A | B) = H(A, B) - H(B)` in bits.
pub fn oracle_vi(seg: &LabelVolume, gt: &LabelVolume) -> (f64, f64) {
    let mut seg_ids = BTreeMap::new();
    let mut gt_ids = BTreeMap::new();
    for (&s, &g) in seg.data().iter().zip(gt.data()) {
        if g != 0 {
            let n = seg_ids.len();
            seg_ids.entry(s).or_insert(n);
            let m = gt_ids.len();
            gt_ids.entry(g).or_insert(m);
        }
    }
    let mut table = vec![vec![0u64; gt_ids.len()]; seg_ids.len()];
    let mut total = 0u64;
    for (&s, &g) in seg.data().iter().zip(gt.data()) {
        if g != 0 {
            table[seg_ids[&s]][gt_ids[&g]] += 1;
            total += 1;
        }
    }
    let n = total as f64;
    let entropy = |counts: &mut dyn Iterator<Item = u64>| -> f64 {
        counts
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    };
    let h_joint = entropy(&mut table.iter().flatten().copied());
    let h_seg = entropy(&mut table.iter().map(|row| row.iter().sum()));
    let h_gt = entropy(&mut (0..gt_ids.len()).map(|j| table.iter().map(|row| row[j]).sum()));
    (h_joint - h_seg, h_joint - h_gt)
}

/// True when two labelings induce the same partition, background included
/// as its own class.
pub fn same_partition(a: &LabelVolume, b: &LabelVolume) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.data().iter().zip(b.data()).all(|(&x, &y)| {
        (x == 0) == (y == 0) && *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

/// Number of 6-connected same-label pieces, background excluded.
pub fn count_components(labels: &LabelVolume) -> usize {
    let shape = labels.shape();
    let adj = adjacency(shape);
    let data = labels.data();
    let mut seen = vec![false; shape.len()];
    let mut count = 0;
    for s in 0..shape.len() {
        if seen[s] || data[s] == 0 {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] && data[v] == data[u] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Applies a random bijection to the nonzero labels.
pub fn permute_labels(labels: &LabelVolume, r: &mut impl Rng) -> LabelVolume {
    let mut distinct: Vec<u64> = labels.data().iter().copied().filter(|&l| l != 0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut targets: Vec<u64> = (1..=distinct.len() as u64).map(|k| k * 7 + 100).collect();
    targets.shuffle(r);
    let map: HashMap<u64, u64> = distinct.into_iter().zip(targets).collect();
    let data = labels.data().iter().map(|&l| if l == 0 { 0 } else { map[&l] }).collect();
    LabelVolume::new(labels.shape(), data).unwrap()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
}
