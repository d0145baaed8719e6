//! Dense volumetric containers shared by every stage of the pipeline.
//!
//! Voxels are stored x-fastest: the flat index of `(z, y, x)` is
//! `(z * Y + y) * X + x`. Edge-valued volumes (affinities, pair counts,
//! gradients) hold three channels, channel-slowest, in the order z, y, x.
//! Slot `(c, v)` describes the edge between voxel `v` and `v + unit(c)`;
//! slots whose neighbor falls outside the volume are kept at zero.

mod file;

pub use file::{
    decode, encode, read_affinities, read_labels, read_volume, write_volume, Dtype, Volume,
    VolumeFile, HEADER_LEN, MAGIC, VERSION,
};

use std::fmt;

use thiserror::Error;

/// Voxel coordinate as `[z, y, x]`.
pub type Coord = [usize; 3];

/// Channel index of z-affinities.
pub const CHANNEL_Z: usize = 0;
/// Channel index of y-affinities.
pub const CHANNEL_Y: usize = 1;
/// Channel index of x-affinities.
pub const CHANNEL_X: usize = 2;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("invalid shape {0:?}: every dimension must be at least 1 and the voxel count must fit in 64 bits")]
    InvalidShape([u64; 3]),
    #[error("data length {actual} does not match the expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("affinity {value} at slot {slot} is outside [0, 1]")]
    AffinityOutOfRange { slot: usize, value: f32 },
    #[error("not a volume file (bad magic)")]
    BadMagic,
    #[error("unsupported volume file version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("payload holds {actual} bytes, header implies {expected}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("expected a {expected} volume, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Extent of a volume in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Shape3 {
    pub fn new(z: usize, y: usize, x: usize) -> Result<Self, VolumeError> {
        let bad = || VolumeError::InvalidShape([z as u64, y as u64, x as u64]);
        if z == 0 || y == 0 || x == 0 {
            return Err(bad());
        }
        // Three channels of the largest dtype must stay addressable.
        z.checked_mul(y)
            .and_then(|n| n.checked_mul(x))
            .and_then(|n| n.checked_mul(3 * 8))
            .ok_or_else(bad)?;
        Ok(Self { z, y, x })
    }

    pub fn from_dims(dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(dims[0], dims[1], dims[2])
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.z * self.y * self.x
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat-index step for a unit move along each axis.
    pub fn strides(&self) -> [usize; 3] {
        [self.y * self.x, self.x, 1]
    }

    #[inline]
    pub fn index(&self, [z, y, x]: Coord) -> usize {
        (z * self.y + y) * self.x + x
    }

    #[inline]
    pub fn coord(&self, index: usize) -> Coord {
        let x = index % self.x;
        let rest = index / self.x;
        [rest / self.y, rest % self.y, x]
    }

    pub fn contains(&self, [z, y, x]: Coord) -> bool {
        z < self.z && y < self.y && x < self.x
    }

    /// Flat index of `v + unit(channel)` if it lies inside the volume.
    #[inline]
    pub fn forward(&self, v: usize, channel: usize) -> Option<usize> {
        let c = self.coord(v);
        (c[channel] + 1 < self.dims()[channel]).then(|| v + self.strides()[channel])
    }

    /// Flat index of `v - unit(channel)` if it lies inside the volume.
    #[inline]
    pub fn backward(&self, v: usize, channel: usize) -> Option<usize> {
        let c = self.coord(v);
        (c[channel] > 0).then(|| v - self.strides()[channel])
    }

    /// Number of edge slots (three per voxel, including out-of-bounds ones).
    pub fn edge_slots(&self) -> usize {
        3 * self.len()
    }

    /// Visits every in-bounds edge as `(slot, lower voxel, upper voxel)` in
    /// slot order (channel, then z, y, x).
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.len();
        let strides = self.strides();
        let dims = self.dims();
        for c in 0..3 {
            let base = c * n;
            for z in 0..self.z {
                for y in 0..self.y {
                    for x in 0..self.x {
                        let coord = [z, y, x];
                        if coord[c] + 1 < dims[c] {
                            let v = self.index(coord);
                            f(base + v, v, v + strides[c]);
                        }
                    }
                }
            }
        }
    }

    /// Splits an edge slot into `(channel, lower voxel)`.
    #[inline]
    pub fn slot_parts(&self, slot: usize) -> (usize, usize) {
        (slot / self.len(), slot % self.len())
    }

    /// Whether the edge slot has an in-bounds upper endpoint.
    pub fn slot_in_bounds(&self, slot: usize) -> bool {
        let (c, v) = self.slot_parts(slot);
        self.forward(v, c).is_some()
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.y, self.x)
    }
}

/// Segment id per voxel. Label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    shape: Shape3,
    data: Vec<u64>,
}

impl LabelVolume {
    pub fn new(shape: Shape3, data: Vec<u64>) -> Result<Self, VolumeError> {
        if data.len() != shape.len() {
            return Err(VolumeError::LengthMismatch {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(Coord) -> u64) -> Self {
        let data = (0..shape.len()).map(|i| f(shape.coord(i))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn get(&self, coord: Coord) -> u64 {
        self.data[self.shape.index(coord)]
    }

    pub fn set(&mut self, coord: Coord, label: u64) {
        let i = self.shape.index(coord);
        self.data[i] = label;
    }

    /// Number of distinct nonzero labels.
    pub fn count_segments(&self) -> usize {
        let mut labels: Vec<u64> = self.data.iter().copied().filter(|&l| l != 0).collect();
        labels.sort_unstable();
        labels.dedup();
        labels.len()
    }

    /// Renumbers nonzero labels to `1..=K` in order of each label's first
    /// voxel in flat order. Background stays 0.
    pub fn relabel_sequential(&self) -> LabelVolume {
        let mut map = std::collections::HashMap::new();
        let mut next = 0u64;
        let data = self
            .data
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *map.entry(l).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        LabelVolume {
            shape: self.shape,
            data,
        }
    }

    /// Copies the sub-box `[lo, hi)` into a new volume.
    pub fn crop(&self, lo: Coord, hi: Coord) -> Result<LabelVolume, VolumeError> {
        let shape = Shape3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2])?;
        Ok(LabelVolume::from_fn(shape, |[z, y, x]| {
            self.get([z + lo[0], y + lo[1], x + lo[2]])
        }))
    }
}

/// Three-channel edge field over a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVolume<T> {
    shape: Shape3,
    data: Vec<T>,
}

impl<T: Copy + Default> EdgeVolume<T> {
    /// Wraps `data`; out-of-bounds slots are reset to `T::default()`.
    pub fn new(shape: Shape3, mut data: Vec<T>) -> Result<Self, VolumeError> {
        if data.len() != shape.edge_slots() {
            return Err(VolumeError::LengthMismatch {
                expected: shape.edge_slots(),
                actual: data.len(),
            });
        }
        clear_out_of_bounds(shape, &mut data);
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            data: vec![T::default(); shape.edge_slots()],
        }
    }

    /// Builds a field by evaluating `f(channel, lower voxel)` on in-bounds edges.
    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, Coord) -> T) -> Self {
        let mut data = vec![T::default(); shape.edge_slots()];
        shape.for_each_edge(|slot, v, _| {
            let (c, _) = shape.slot_parts(slot);
            data[slot] = f(c, shape.coord(v));
        });
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn slot(&self, slot: usize) -> T {
        self.data[slot]
    }

    /// Value of the edge from `coord` to `coord + unit(channel)`.
    pub fn get(&self, channel: usize, coord: Coord) -> T {
        self.data[channel * self.shape.len() + self.shape.index(coord)]
    }

    /// Sets an in-bounds slot. Writes to out-of-bounds slots are ignored.
    pub fn set_slot(&mut self, slot: usize, value: T) {
        if self.shape.slot_in_bounds(slot) {
            self.data[slot] = value;
        }
    }

    /// Copies the edges whose both endpoints lie in `[lo, hi)`.
    pub fn crop(&self, lo: Coord, hi: Coord) -> Result<EdgeVolume<T>, VolumeError> {
        let shape = Shape3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2])?;
        Ok(EdgeVolume::from_fn(shape, |c, [z, y, x]| {
            self.get(c, [z + lo[0], y + lo[1], x + lo[2]])
        }))
    }
}

fn clear_out_of_bounds<T: Copy + Default>(shape: Shape3, data: &mut [T]) {
    let n = shape.len();
    let dims = shape.dims();
    for (c, channel) in data.chunks_mut(n).enumerate() {
        for (v, value) in channel.iter_mut().enumerate() {
            if shape.coord(v)[c] + 1 >= dims[c] {
                *value = T::default();
            }
        }
    }
}

/// Edge affinities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityVolume(EdgeVolume<f32>);

impl AffinityVolume {
    /// Validates the range of every in-bounds slot and zeroes the rest.
    pub fn new(shape: Shape3, data: Vec<f32>) -> Result<Self, VolumeError> {
        Self::try_from(EdgeVolume::new(shape, data)?)
    }

    pub fn zeros(shape: Shape3) -> Self {
        Self(EdgeVolume::zeros(shape))
    }

    /// Evaluates `f(channel, lower voxel)` on in-bounds edges; results are
    /// clamped into `[0, 1]` and NaN becomes 0.
    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, Coord) -> f32) -> Self {
        Self(EdgeVolume::from_fn(shape, |c, v| clamp_unit(f(c, v))))
    }

    /// Clamps an arbitrary field into an affinity volume.
    pub fn from_clamped(field: &EdgeVolume<f32>) -> Self {
        let data = field.data().iter().map(|&a| clamp_unit(a)).collect();
        Self(EdgeVolume {
            shape: field.shape(),
            data,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.0.shape()
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn as_edges(&self) -> &EdgeVolume<f32> {
        &self.0
    }

    pub fn into_edges(self) -> EdgeVolume<f32> {
        self.0
    }

    #[inline]
    pub fn slot(&self, slot: usize) -> f32 {
        self.0.slot(slot)
    }

    pub fn get(&self, channel: usize, coord: Coord) -> f32 {
        self.0.get(channel, coord)
    }

    pub fn crop(&self, lo: Coord, hi: Coord) -> Result<AffinityVolume, VolumeError> {
        self.0.crop(lo, hi).map(AffinityVolume)
    }
}

impl TryFrom<EdgeVolume<f32>> for AffinityVolume {
    type Error = VolumeError;

    fn try_from(mut field: EdgeVolume<f32>) -> Result<Self, Self::Error> {
        clear_out_of_bounds(field.shape, &mut field.data);
        if let Some((slot, &value)) = field
            .data
            .iter()
            .enumerate()
            .find(|(_, a)| !(0.0..=1.0).contains(*a))
        {
            return Err(VolumeError::AffinityOutOfRange { slot, value });
        }
        Ok(Self(field))
    }
}

fn clamp_unit(a: f32) -> f32 {
    if a.is_nan() {
        0.0
    } else {
        a.clamp(0.0, 1.0)
    }
}
