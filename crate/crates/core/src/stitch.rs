//! Block partitioning and overlap-based stitching.
//!
//! A volume is tiled by block cores; each block is processed over its core
//! plus a halo. Segments of neighboring blocks are matched by how many halo
//! voxels they share, matched segments are unioned, and every block writes
//! its core region into the global labeling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsu::DisjointSets;
use crate::volume::{Coord, LabelVolume, Shape3};

#[derive(Debug, Error)]
pub enum StitchError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("coverage gap: {0}")]
    CoverageGap(String),
    #[error("invalid stitch parameters: {0}")]
    InvalidParams(String),
    #[error("malformed manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
}

/// Core and halo-extended voxel ranges of one block, per axis (z, y, x).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub core: [Range<usize>; 3],
    pub halo: [Range<usize>; 3],
}

impl BlockSpec {
    pub fn halo_lo(&self) -> Coord {
        self.halo.clone().map(|r| r.start)
    }

    pub fn halo_hi(&self) -> Coord {
        self.halo.clone().map(|r| r.end)
    }

    pub fn halo_shape(&self) -> Shape3 {
        Shape3::new(self.halo[0].len(), self.halo[1].len(), self.halo[2].len())
            .expect("halo ranges are non-empty")
    }

    pub fn core_len(&self) -> usize {
        self.core.iter().map(|r| r.len()).product()
    }
}

/// Tiles `shape` with `block`-sized cores (the last one per axis truncated)
/// and grows each core by `halo`, clipped to the volume. Blocks are ordered
/// z-major, then y, then x.
pub fn partition_blocks(shape: Shape3, block: [usize; 3], halo: [usize; 3]) -> Result<Vec<BlockSpec>, StitchError> {
    let dims = shape.dims();
    let mut axes: Vec<Vec<(Range<usize>, Range<usize>)>> = Vec::new();
    for axis in 0..3 {
        let (len, b, h) = (dims[axis], block[axis], halo[axis]);
        if b == 0 {
            return Err(StitchError::InvalidPartition(format!("block size 0 on axis {axis}")));
        }
        let count = len.div_ceil(b);
        if count > 1 && h == 0 {
            return Err(StitchError::InvalidPartition(format!(
                "axis {axis} has {count} blocks but halo 0"
            )));
        }
        axes.push(
            (0..count)
                .map(|i| {
                    let core = i * b..((i + 1) * b).min(len);
                    let grown = core.start.saturating_sub(h)..(core.end + h).min(len);
                    (core, grown)
                })
                .collect(),
        );
    }
    let mut specs = Vec::new();
    for (cz, hz) in &axes[0] {
        for (cy, hy) in &axes[1] {
            for (cx, hx) in &axes[2] {
                specs.push(BlockSpec {
                    core: [cz.clone(), cy.clone(), cx.clone()],
                    halo: [hz.clone(), hy.clone(), hx.clone()],
                });
            }
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchParams {
    /// Overlap must reach this fraction of the smaller segment's voxels in
    /// the shared region.
    pub min_ratio: f64,
    /// Overlap must reach this many voxels.
    pub min_voxels: u64,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self {
            min_ratio: 0.5,
            min_voxels: 2,
        }
    }
}

impl StitchParams {
    pub fn validate(&self) -> Result<(), StitchError> {
        if !(self.min_ratio > 0.0 && self.min_ratio <= 1.0) {
            return Err(StitchError::InvalidParams(format!(
                "min_ratio {} is outside (0, 1]",
                self.min_ratio
            )));
        }
        if self.min_voxels == 0 {
            return Err(StitchError::InvalidParams("min_voxels must be positive".into()));
        }
        Ok(())
    }
}

/// Overlap between two segments of different blocks within their shared
/// halo region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StitchEdge {
    pub a: usize,
    pub b: usize,
    pub overlap: u64,
    /// Voxels of `a` inside the shared region.
    pub count_a: u64,
    /// Voxels of `b` inside the shared region.
    pub count_b: u64,
}

#[derive(Debug, Clone, Default)]
pub struct StitchGraph {
    /// `(block index, local label)` per node.
    pub nodes: Vec<(usize, u64)>,
    pub edges: Vec<StitchEdge>,
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Option<Range<usize>> {
    let r = a.start.max(b.start)..a.end.min(b.end);
    (!r.is_empty()).then_some(r)
}

fn volume_shape(specs: &[BlockSpec]) -> Result<Shape3, StitchError> {
    let dims = [0, 1, 2].map(|axis| specs.iter().map(|s| s.core[axis].end).max().unwrap_or(0));
    Shape3::from_dims(dims).map_err(|_| StitchError::CoverageGap("no blocks".into()))
}

fn check_coverage(specs: &[BlockSpec], labelings: &[LabelVolume]) -> Result<Shape3, StitchError> {
    if specs.len() != labelings.len() {
        return Err(StitchError::CoverageGap(format!(
            "{} blocks but {} labelings",
            specs.len(),
            labelings.len()
        )));
    }
    let shape = volume_shape(specs)?;
    for (i, (spec, labels)) in specs.iter().zip(labelings).enumerate() {
        for axis in 0..3 {
            let (c, h) = (&spec.core[axis], &spec.halo[axis]);
            if c.is_empty() || h.start > c.start || h.end < c.end {
                return Err(StitchError::CoverageGap(format!(
                    "block {i}: halo does not contain a non-empty core"
                )));
            }
        }
        if labels.shape() != spec.halo_shape() {
            return Err(StitchError::CoverageGap(format!(
                "block {i}: labeling is {} but its halo range is {}",
                labels.shape(),
                spec.halo_shape()
            )));
        }
    }
    let mut owner = vec![false; shape.len()];
    for (i, spec) in specs.iter().enumerate() {
        for z in spec.core[0].clone() {
            for y in spec.core[1].clone() {
                for x in spec.core[2].clone() {
                    let v = shape.index([z, y, x]);
                    if std::mem::replace(&mut owner[v], true) {
                        return Err(StitchError::CoverageGap(format!(
                            "block {i} overlaps another core at {:?}",
                            [z, y, x]
                        )));
                    }
                }
            }
        }
    }
    if let Some(v) = owner.iter().position(|&o| !o) {
        return Err(StitchError::CoverageGap(format!(
            "voxel {:?} is not covered by any core",
            shape.coord(v)
        )));
    }
    Ok(shape)
}

/// Measures segment overlaps over every pair of intersecting halos.
pub fn build_stitch_graph(specs: &[BlockSpec], labelings: &[LabelVolume]) -> Result<StitchGraph, StitchError> {
    check_coverage(specs, labelings)?;
    let mut graph = StitchGraph::default();
    let mut node_index: HashMap<(usize, u64), usize> = HashMap::new();
    for (block, labels) in labelings.iter().enumerate() {
        let mut seen: Vec<u64> = labels.data().iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        for l in seen {
            node_index.insert((block, l), graph.nodes.len());
            graph.nodes.push((block, l));
        }
    }

    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            let (si, sj) = (&specs[i], &specs[j]);
            let shared: Option<Vec<Range<usize>>> =
                (0..3).map(|axis| intersect(&si.halo[axis], &sj.halo[axis])).collect();
            let Some(shared) = shared else { continue };
            let (oi, oj) = (si.halo_lo(), sj.halo_lo());
            let mut overlap: HashMap<(u64, u64), u64> = HashMap::new();
            let mut count_i: HashMap<u64, u64> = HashMap::new();
            let mut count_j: HashMap<u64, u64> = HashMap::new();
            for z in shared[0].clone() {
                for y in shared[1].clone() {
                    for x in shared[2].clone() {
                        let a = labelings[i].get([z - oi[0], y - oi[1], x - oi[2]]);
                        let b = labelings[j].get([z - oj[0], y - oj[1], x - oj[2]]);
                        if a != 0 {
                            *count_i.entry(a).or_insert(0) += 1;
                        }
                        if b != 0 {
                            *count_j.entry(b).or_insert(0) += 1;
                        }
                        if a != 0 && b != 0 {
                            *overlap.entry((a, b)).or_insert(0) += 1;
                        }
                    }
                }
            }
            let mut pairs: Vec<((u64, u64), u64)> = overlap.into_iter().collect();
            pairs.sort_unstable();
            for ((a, b), n) in pairs {
                graph.edges.push(StitchEdge {
                    a: node_index[&(i, a)],
                    b: node_index[&(j, b)],
                    overlap: n,
                    count_a: count_i[&a],
                    count_b: count_j[&b],
                });
            }
        }
    }
    Ok(graph)
}

/// Joins block labelings into one volume. Matched segments share a global
/// label; labels are numbered `1..=K` by first voxel in flat order.
pub fn stitch(specs: &[BlockSpec], labelings: &[LabelVolume], params: &StitchParams) -> Result<LabelVolume, StitchError> {
    params.validate()?;
    let graph = build_stitch_graph(specs, labelings)?;
    let shape = volume_shape(specs)?;
    let mut sets = DisjointSets::new(graph.nodes.len());
    for e in &graph.edges {
        let smaller = e.count_a.min(e.count_b) as f64;
        if e.overlap >= params.min_voxels && e.overlap as f64 >= params.min_ratio * smaller {
            sets.union(e.a, e.b);
        }
    }
    let node_index: HashMap<(usize, u64), usize> =
        graph.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let mut out = LabelVolume::zeros(shape);
    for (block, (spec, labels)) in specs.iter().zip(labelings).enumerate() {
        let lo = spec.halo_lo();
        for z in spec.core[0].clone() {
            for y in spec.core[1].clone() {
                for x in spec.core[2].clone() {
                    let l = labels.get([z - lo[0], y - lo[1], x - lo[2]]);
                    if l != 0 {
                        let root = sets.find(node_index[&(block, l)]);
                        out.set([z, y, x], root as u64 + 1);
                    }
                }
            }
        }
    }
    Ok(out.relabel_sequential())
}

/// One manifest line: a block's ranges and the file holding its labeling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub spec: BlockSpec,
    pub path: PathBuf,
}

pub const MANIFEST_HEADER: &str =
    "# core_z0 core_z1 core_y0 core_y1 core_x0 core_x1 halo_z0 halo_z1 halo_y0 halo_y1 halo_x0 halo_x1 path";

pub fn manifest_to_text(entries: &[ManifestEntry]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        for r in e.spec.core.iter().chain(&e.spec.halo) {
            write!(out, "{} {} ", r.start, r.end).unwrap();
        }
        writeln!(out, "{}", e.path.display()).unwrap();
    }
    out
}

/// Parses a manifest; relative paths are resolved against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>, StitchError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| StitchError::BadManifest {
            line: i + 1,
            reason: reason.to_string(),
        };
        let mut rest = trimmed;
        let mut numbers = [0usize; 12];
        for n in numbers.iter_mut() {
            let (token, tail) = rest.split_once(char::is_whitespace).ok_or_else(|| bad("expected 12 bounds and a path"))?;
            *n = token.parse().map_err(|_| bad("bad range bound"))?;
            rest = tail.trim_start();
        }
        if rest.is_empty() {
            return Err(bad("missing labeling path"));
        }
        let range = |k: usize| numbers[2 * k]..numbers[2 * k + 1];
        let spec = BlockSpec {
            core: [range(0), range(1), range(2)],
            halo: [range(3), range(4), range(5)],
        };
        if spec.halo.iter().chain(&spec.core).any(|r| r.is_empty()) {
            return Err(bad("empty range"));
        }
        let path = Path::new(rest);
        let path = if path.is_absolute() { path.to_path_buf() } else { base_dir.join(path) };
        entries.push(ManifestEntry { spec, path });
    }
    Ok(entries)
}
