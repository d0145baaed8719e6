//! Segmentation toolkit for anisotropic affinity volumes.
//!
//! The pipeline runs on a voxel affinity graph: [`zwatershed`] produces an
//! over-segmentation, [`agglo`] merges supervoxels hierarchically, [`metrics`]
//! scores results with split variation of information, and [`stitch`]
//! assembles block-wise results. [`malis`] computes maximin pair counts and
//! loss gradients, and [`synth`] generates test data.

pub mod dsu;
pub mod malis;
pub mod volume;
pub mod agglo;
pub mod zwatershed;
pub mod metrics;
pub mod stitch;
pub mod synth;
pub mod cli;
