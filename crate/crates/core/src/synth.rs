//! Synthetic anisotropic ground truth and noisy affinities.
//!
//! All randomness comes from ChaCha8 seeded with a 64-bit value. Stream 0
//! places seeds, stream 1 draws section shifts and stream 2 draws affinity
//! noise, so changing one parameter never perturbs the other draws.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dsu::DisjointSets;
use crate::volume::{AffinityVolume, Coord, EdgeVolume, LabelVolume, Shape3, CHANNEL_Z};

pub const SEED_STREAM: u64 = 0;
pub const JITTER_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{seeds} seeds do not fit in {voxels} voxels")]
    TooManySeeds { seeds: usize, voxels: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub n_seeds: usize,
    /// Scale applied to z distances; 1 is isotropic.
    pub anisotropy: f64,
    pub rng_seed: u64,
}

impl SynthParams {
    pub fn validate(&self, shape: Shape3) -> Result<(), SynthError> {
        if self.n_seeds == 0 {
            return Err(SynthError::InvalidParams("n_seeds must be positive".into()));
        }
        if !(self.anisotropy >= 1.0 && self.anisotropy.is_finite()) {
            return Err(SynthError::InvalidParams(format!(
                "anisotropy {} must be finite and at least 1",
                self.anisotropy
            )));
        }
        if self.n_seeds > shape.len() {
            return Err(SynthError::TooManySeeds {
                seeds: self.n_seeds,
                voxels: shape.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Standard deviation of additive Gaussian noise.
    pub flip_sigma: f64,
    /// Probability that a section is shifted by one voxel in y or x relative
    /// to the one below it.
    pub jitter_prob: f64,
    pub rng_seed: u64,
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self {
            flip_sigma: 0.0,
            jitter_prob: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.flip_sigma >= 0.0 && self.flip_sigma.is_finite()) {
            return Err(SynthError::InvalidParams(format!("flip_sigma {} must be >= 0", self.flip_sigma)));
        }
        if !(0.0..=1.0).contains(&self.jitter_prob) {
            return Err(SynthError::InvalidParams(format!(
                "jitter_prob {} is outside [0, 1]",
                self.jitter_prob
            )));
        }
        Ok(())
    }
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed positions drawn without replacement, in label order.
pub fn sample_seeds(shape: Shape3, p: &SynthParams) -> Result<Vec<Coord>, SynthError> {
    p.validate(shape)?;
    let mut rng = rng_for(p.rng_seed, SEED_STREAM);
    Ok(index::sample(&mut rng, shape.len(), p.n_seeds)
        .into_iter()
        .map(|v| shape.coord(v))
        .collect())
}

pub fn synth_labels(shape: Shape3, p: &SynthParams) -> Result<LabelVolume, SynthError> {
    let seeds = sample_seeds(shape, p)?;
    Ok(labels_from_seeds(shape, &seeds, p.anisotropy))
}

/// Labels each voxel `1 + i` for its nearest seed `i` under
/// `dx² + dy² + (anisotropy·dz)²`, lowest index winning ties.
///
/// Grid cells of a Voronoi partition can come apart into several
/// 6-connected pieces. Every piece other than a label's largest one is
/// handed to the neighboring label it touches most, so each label ends up
/// connected.
pub fn labels_from_seeds(shape: Shape3, seeds: &[Coord], anisotropy: f64) -> LabelVolume {
    assert!(!seeds.is_empty(), "at least one seed is required");
    let data: Vec<u64> = (0..shape.len())
        .into_par_iter()
        .map(|v| {
            let [z, y, x] = shape.coord(v);
            let mut best = (f64::INFINITY, 0usize);
            for (i, s) in seeds.iter().enumerate() {
                let dz = anisotropy * (z as f64 - s[0] as f64);
                let dy = y as f64 - s[1] as f64;
                let dx = x as f64 - s[2] as f64;
                let d = dx * dx + dy * dy + dz * dz;
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1 as u64 + 1
        })
        .collect();
    let mut labels = LabelVolume::new(shape, data).expect("length matches shape");
    absorb_fragments(&mut labels);
    labels
}

fn absorb_fragments(labels: &mut LabelVolume) {
    let shape = labels.shape();
    loop {
        let mut sets = DisjointSets::new(shape.len());
        shape.for_each_edge(|_, u, v| {
            if labels.data()[u] == labels.data()[v] {
                sets.union(u, v);
            }
        });
        // Largest piece per label, earliest root on ties.
        let mut main: HashMap<u64, usize> = HashMap::new();
        for v in 0..shape.len() {
            let r = sets.find(v);
            if r != v {
                continue;
            }
            let l = labels.data()[v];
            let e = main.entry(l).or_insert(r);
            if sets.set_size(r) > sets.set_size(*e) {
                *e = r;
            }
        }
        let mut roots = vec![0usize; shape.len()];
        for (v, r) in roots.iter_mut().enumerate() {
            *r = sets.find(v);
        }
        let is_main = |v: usize, l: u64| main[&l] == roots[v];
        let data = labels.data();
        if (0..shape.len()).all(|v| is_main(v, data[v])) {
            return;
        }
        // Contact counts between each fragment and neighboring main pieces.
        let mut contact: BTreeMap<usize, BTreeMap<u64, u64>> = BTreeMap::new();
        shape.for_each_edge(|_, u, v| {
            let (lu, lv) = (data[u], data[v]);
            if lu == lv {
                return;
            }
            let (mu, mv) = (is_main(u, lu), is_main(v, lv));
            if !mu && mv {
                *contact.entry(roots[u]).or_default().entry(lv).or_insert(0) += 1;
            }
            if !mv && mu {
                *contact.entry(roots[v]).or_default().entry(lu).or_insert(0) += 1;
            }
        });
        let target: HashMap<usize, u64> = contact
            .into_iter()
            .map(|(root, counts)| {
                let best = counts
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .expect("non-empty contact map")
                    .0;
                (root, best)
            })
            .collect();
        let data = labels.data_mut();
        for v in 0..shape.len() {
            if let Some(&l) = target.get(&roots[v]) {
                data[v] = l;
            }
        }
    }
}

/// Per-section offset `(dy, dx)` of section `z + 1` relative to section `z`,
/// one entry per z boundary.
pub fn sample_shifts(shape: Shape3, n: &NoiseParams) -> Vec<[i64; 2]> {
    let mut rng = rng_for(n.rng_seed, JITTER_STREAM);
    (0..shape.z.saturating_sub(1))
        .map(|_| {
            if n.jitter_prob > 0.0 && rng.random_bool(n.jitter_prob) {
                match rng.random_range(0..4u8) {
                    0 => [1, 0],
                    1 => [-1, 0],
                    2 => [0, 1],
                    _ => [0, -1],
                }
            } else {
                [0, 0]
            }
        })
        .collect()
}

/// Affinities encoding `labels`: 1 within a segment, 0 across or touching
/// background. The z-affinity between `(z, y, x)` and the section above
/// compares against `(z + 1, y + dy, x + dx)`, clamped into the volume.
/// Gaussian noise with standard deviation `sigma` is then added to every
/// in-bounds slot, in slot order, and the result clamped to `[0, 1]`.
pub fn affinities_with_shifts(labels: &LabelVolume, shifts: &[[i64; 2]], sigma: f64, rng: &mut ChaCha8Rng) -> AffinityVolume {
    let shape = labels.shape();
    assert_eq!(shifts.len(), shape.z.saturating_sub(1), "one shift per z boundary");
    let same = |a: u64, b: u64| if a != 0 && a == b { 1.0f32 } else { 0.0 };
    let mut field = EdgeVolume::<f32>::from_fn(shape, |c, [z, y, x]| {
        let here = labels.get([z, y, x]);
        let mut there = [z, y, x];
        there[c] += 1;
        if c == CHANNEL_Z {
            let [dy, dx] = shifts[z];
            there[1] = (y as i64 + dy).clamp(0, shape.y as i64 - 1) as usize;
            there[2] = (x as i64 + dx).clamp(0, shape.x as i64 - 1) as usize;
        }
        same(here, labels.get(there))
    });
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        for slot in 0..shape.edge_slots() {
            if shape.slot_in_bounds(slot) {
                let a = f64::from(field.slot(slot)) + normal.sample(rng);
                field.set_slot(slot, a as f32);
            }
        }
    }
    AffinityVolume::from_clamped(&field)
}

pub fn synth_affinities(labels: &LabelVolume, n: &NoiseParams) -> Result<AffinityVolume, SynthError> {
    n.validate()?;
    let shifts = sample_shifts(labels.shape(), n);
    let mut rng = rng_for(n.rng_seed, NOISE_STREAM);
    Ok(affinities_with_shifts(labels, &shifts, n.flip_sigma, &mut rng))
}
