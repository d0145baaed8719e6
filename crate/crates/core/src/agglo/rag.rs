use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::features::{FeatureAccumulator, FeatureVector};
use super::AggloError;
use crate::volume::{AffinityVolume, LabelVolume};

/// A supervoxel: its voxel count and the statistics of affinity edges
/// lying entirely inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub size: u64,
    pub internal: FeatureAccumulator,
}

/// Unordered label pair, stored smaller label first.
pub type EdgeKey = (u64, u64);

pub fn edge_key(a: u64, b: u64) -> EdgeKey {
    (a.min(b), a.max(b))
}

/// Region adjacency graph over the nonzero labels of a segmentation.
#[derive(Debug, Clone, Default)]
pub struct Rag {
    nodes: BTreeMap<u64, Node>,
    edges: HashMap<EdgeKey, FeatureAccumulator>,
    adjacency: BTreeMap<u64, BTreeSet<u64>>,
}

impl Rag {
    /// One node per nonzero label, one edge per pair of labels joined by at
    /// least one in-bounds affinity edge. Background voxels take no part.
    pub fn build(labels: &LabelVolume, aff: &AffinityVolume) -> Result<Rag, AggloError> {
        let shape = labels.shape();
        if aff.shape() != shape {
            return Err(AggloError::ShapeMismatch(shape, aff.shape()));
        }
        let mut rag = Rag::default();
        let data = labels.data();
        for &l in data.iter().filter(|&&l| l != 0) {
            rag.nodes
                .entry(l)
                .or_insert_with(|| Node {
                    size: 0,
                    internal: FeatureAccumulator::default(),
                })
                .size += 1;
        }
        shape.for_each_edge(|slot, u, v| {
            let (a, b) = (data[u], data[v]);
            if a == 0 || b == 0 {
                return;
            }
            let (c, _) = shape.slot_parts(slot);
            let w = aff.slot(slot);
            if a == b {
                rag.nodes.get_mut(&a).unwrap().internal.push(c, w);
            } else {
                rag.edges.entry(edge_key(a, b)).or_default().push(c, w);
            }
        });
        for &(a, b) in rag.edges.keys() {
            rag.adjacency.entry(a).or_default().insert(b);
            rag.adjacency.entry(b).or_default().insert(a);
        }
        Ok(rag)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, label: u64) -> Option<&Node> {
        self.nodes.get(&label)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (u64, &Node)> {
        self.nodes.iter().map(|(&l, n)| (l, n))
    }

    pub fn edge(&self, a: u64, b: u64) -> Option<&FeatureAccumulator> {
        self.edges.get(&edge_key(a, b))
    }

    /// Edge keys in ascending order.
    pub fn edge_keys(&self) -> Vec<EdgeKey> {
        let mut keys: Vec<EdgeKey> = self.edges.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Neighbors of `label` in ascending order.
    pub fn neighbors(&self, label: u64) -> impl Iterator<Item = u64> + '_ {
        self.adjacency.get(&label).into_iter().flatten().copied()
    }

    pub fn edge_features(&self, a: u64, b: u64) -> Result<FeatureVector, AggloError> {
        let acc = self.edge(a, b).ok_or(AggloError::MissingEdge(a, b))?;
        let (na, nb) = (&self.nodes[&a], &self.nodes[&b]);
        Ok(acc.features(na.size, nb.size))
    }

    /// Folds `absorbed` into `survivor`: sizes add, the boundary between them
    /// becomes interior, and boundaries shared with third nodes combine.
    pub fn merge(&mut self, survivor: u64, absorbed: u64) -> Result<(), AggloError> {
        if survivor == absorbed {
            return Err(AggloError::MissingNode(absorbed));
        }
        for l in [survivor, absorbed] {
            if !self.nodes.contains_key(&l) {
                return Err(AggloError::MissingNode(l));
            }
        }
        let gone = self.nodes.remove(&absorbed).unwrap();
        let between = self.edges.remove(&edge_key(survivor, absorbed));
        let node = self.nodes.get_mut(&survivor).unwrap();
        node.size += gone.size;
        node.internal += &gone.internal;
        if let Some(b) = &between {
            node.internal += b;
        }

        let neighbors = self.adjacency.remove(&absorbed).unwrap_or_default();
        for n in neighbors {
            let adj = self.adjacency.get_mut(&n).unwrap();
            adj.remove(&absorbed);
            if n == survivor {
                continue;
            }
            adj.insert(survivor);
            self.adjacency.entry(survivor).or_default().insert(n);
            let moved = self.edges.remove(&edge_key(absorbed, n)).unwrap();
            *self.edges.entry(edge_key(survivor, n)).or_default() += &moved;
        }
        if let Some(adj) = self.adjacency.get(&survivor) {
            if adj.is_empty() {
                self.adjacency.remove(&survivor);
            }
        }
        Ok(())
    }

    /// Number of connected components of the graph, isolated nodes included.
    pub fn component_count(&self) -> usize {
        let labels: Vec<u64> = self.nodes.keys().copied().collect();
        let index: HashMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut sets = crate::dsu::DisjointSets::new(labels.len());
        let mut components = labels.len();
        for &(a, b) in self.edges.keys() {
            if sets.union(index[&a], index[&b]).is_some() {
                components -= 1;
            }
        }
        components
    }
}
