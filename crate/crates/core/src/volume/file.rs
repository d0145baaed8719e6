//! `VOLB` container: a 40-byte little-endian header followed by the raw payload.
//!
//! ```text
//! 0..4    magic "VOLB"
//! 4..8    version (u32) = 1
//! 8       dtype code: 1 = u64 labels, 2 = f32 edge values
//! 9       channel count: 1 for labels, 3 for edge values
//! 10..16  reserved, zero
//! 16..40  dims z, y, x (u64 each)
//! 40..    payload, channel-slowest, x-fastest
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AffinityVolume, EdgeVolume, LabelVolume, Shape3, VolumeError};

pub const MAGIC: &[u8; 4] = b"VOLB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U64 = 1,
    F32 = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self, VolumeError> {
        match code {
            1 => Ok(Dtype::U64),
            2 => Ok(Dtype::F32),
            other => Err(VolumeError::UnknownDtype(other)),
        }
    }

    fn size(self) -> u64 {
        match self {
            Dtype::U64 => 8,
            Dtype::F32 => 4,
        }
    }

    fn channels(self) -> u8 {
        match self {
            Dtype::U64 => 1,
            Dtype::F32 => 3,
        }
    }
}

/// A decoded volume file.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabelVolume),
    Edges(EdgeVolume<f32>),
}

impl Volume {
    pub fn shape(&self) -> Shape3 {
        match self {
            Volume::Labels(v) => v.shape(),
            Volume::Edges(v) => v.shape(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Volume::Labels(_) => "label",
            Volume::Edges(_) => "edge",
        }
    }
}

/// Anything that can be serialized as a `VOLB` file.
pub trait VolumeFile {
    fn dtype(&self) -> Dtype;
    fn shape(&self) -> Shape3;
    fn write_payload(&self, out: &mut Vec<u8>);
}

impl VolumeFile for LabelVolume {
    fn dtype(&self) -> Dtype {
        Dtype::U64
    }
    fn shape(&self) -> Shape3 {
        LabelVolume::shape(self)
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        for v in self.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl VolumeFile for EdgeVolume<f32> {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }
    fn shape(&self) -> Shape3 {
        EdgeVolume::shape(self)
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        for v in self.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl VolumeFile for AffinityVolume {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }
    fn shape(&self) -> Shape3 {
        AffinityVolume::shape(self)
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        self.as_edges().write_payload(out)
    }
}

impl VolumeFile for Volume {
    fn dtype(&self) -> Dtype {
        match self {
            Volume::Labels(v) => v.dtype(),
            Volume::Edges(v) => v.dtype(),
        }
    }
    fn shape(&self) -> Shape3 {
        Volume::shape(self)
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            Volume::Labels(v) => v.write_payload(out),
            Volume::Edges(v) => v.write_payload(out),
        }
    }
}

/// Serializes a volume into its exact on-disk bytes.
pub fn encode<V: VolumeFile + ?Sized>(vol: &V) -> Vec<u8> {
    let dtype = vol.dtype();
    let shape = vol.shape();
    let payload = shape.len() * dtype.channels() as usize * dtype.size() as usize;
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(dtype.channels());
    out.extend_from_slice(&[0u8; 6]);
    for d in shape.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    vol.write_payload(&mut out);
    out
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Volume, VolumeError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(VolumeError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(VolumeError::BadHeader(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(VolumeError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(bytes[8])?;
    if bytes[9] != dtype.channels() {
        return Err(VolumeError::BadHeader(format!(
            "dtype {:?} requires {} channel(s), header declares {}",
            dtype,
            dtype.channels(),
            bytes[9]
        )));
    }
    if bytes[10..16].iter().any(|&b| b != 0) {
        return Err(VolumeError::BadHeader("reserved bytes are not zero".into()));
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
    let dims = [dim(0), dim(1), dim(2)];
    let as_usize = |d: u64| usize::try_from(d).map_err(|_| VolumeError::InvalidShape(dims));
    let shape = Shape3::new(as_usize(dims[0])?, as_usize(dims[1])?, as_usize(dims[2])?)?;

    let payload = &bytes[HEADER_LEN..];
    let expected = shape.len() as u64 * dtype.channels() as u64 * dtype.size();
    if payload.len() as u64 != expected {
        return Err(VolumeError::TruncatedPayload {
            expected,
            actual: payload.len() as u64,
        });
    }
    Ok(match dtype {
        Dtype::U64 => {
            let data = payload
                .chunks_exact(8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Volume::Labels(LabelVolume::new(shape, data)?)
        }
        Dtype::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Volume::Edges(EdgeVolume::new(shape, data)?)
        }
    })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    decode(&fs::read(path)?)
}

pub fn write_volume<V: VolumeFile + ?Sized>(
    vol: &V,
    path: impl AsRef<Path>,
) -> Result<(), VolumeError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(vol))?;
    file.sync_all()?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume, VolumeError> {
    match read_volume(path)? {
        Volume::Labels(v) => Ok(v),
        other => Err(VolumeError::KindMismatch {
            expected: "label",
            found: other.kind(),
        }),
    }
}

/// Reads an edge volume and checks that it holds valid affinities.
pub fn read_affinities(path: impl AsRef<Path>) -> Result<AffinityVolume, VolumeError> {
    match read_volume(path)? {
        Volume::Edges(v) => AffinityVolume::try_from(v),
        other => Err(VolumeError::KindMismatch {
            expected: "edge",
            found: other.kind(),
        }),
    }
}
