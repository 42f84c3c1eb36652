//! Labelled static robot states: sampling, normalisation, splitting and
//! persistence.

pub mod io;
pub mod sampler;
pub mod stance;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::robot::{FootPositions, JointVector, RobotParams, Vec3, NUM_LEGS};
use crate::stability::ContactForces;

pub use io::{read_dataset, write_dataset, LoadedDataset, DATASET_FORMAT_VERSION};
pub use sampler::{sample_configuration, sample_configuration_detailed, SampleDraw, SamplerConfig};
pub use stance::{decode_stance, stance_encoding, StanceEncoding, StanceId, NUM_STANCES};

/// Feature layout of a robot state vector.
pub mod layout {
    use std::ops::Range;

    pub const Q: Range<usize> = 0..12;
    pub const FEET: Range<usize> = 12..24;
    pub const TAU: Range<usize> = 24..36;
    pub const LAMBDA: Range<usize> = 36..48;
    pub const GRAVITY: Range<usize> = 48..51;
    pub const COM: Range<usize> = 51..54;
    pub const BASE_DIM: usize = 51;
    pub const WITH_COM_DIM: usize = 54;

    pub fn dim(with_com: bool) -> usize {
        if with_com {
            WITH_COM_DIM
        } else {
            BASE_DIM
        }
    }

    /// Column names in file order.
    pub fn feature_names(with_com: bool) -> Vec<String> {
        let mut names = Vec::with_capacity(dim(with_com));
        for (prefix, n) in [("q", 12), ("pf", 12), ("tau", 12), ("lam", 12), ("g", 3)] {
            names.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        if with_com {
            names.extend((0..3).map(|i| format!("com{i}")));
        }
        names
    }
}

/// State vector `[q, p_f, tau, lambda, g]`, optionally followed by the CoM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState(pub Vec<f64>);

impl RobotState {
    pub fn with_com(&self) -> bool {
        self.0.len() == layout::WITH_COM_DIM
    }

    fn part(&self, r: Range<usize>) -> &[f64] {
        &self.0[r]
    }

    pub fn q(&self) -> JointVector {
        JointVector::from_slice(self.part(layout::Q)).expect("12 joints")
    }

    pub fn feet(&self) -> FootPositions {
        FootPositions::from_flat(self.part(layout::FEET))
    }

    pub fn torques(&self) -> &[f64] {
        self.part(layout::TAU)
    }

    pub fn forces(&self) -> ContactForces {
        ContactForces::from_flat(self.part(layout::LAMBDA))
    }

    pub fn gravity(&self) -> Vec3 {
        let g = self.part(layout::GRAVITY);
        Vec3::new(g[0], g[1], g[2])
    }

    pub fn com(&self) -> Option<Vec3> {
        self.with_com().then(|| {
            let c = self.part(layout::COM);
            Vec3::new(c[0], c[1], c[2])
        })
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A labelled state: `{x, y, s}` plus the stance id and contact flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: RobotState,
    pub y: bool,
    pub s: StanceEncoding,
    pub stance_id: StanceId,
    pub contact_flags: [bool; NUM_LEGS],
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalisationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormalisationStats {
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> Result<Self> {
        let n = rows.clone().count();
        let dim = rows
            .clone()
            .next()
            .ok_or_else(|| Error::BadInput("no rows for statistics".into()))?
            .len();
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalise(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalise(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// Features whose spread was floored, i.e. constant over the training split.
    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.std[i] <= STD_FLOOR).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stats: NormalisationStats,
    pub seed: u64,
    pub split_fraction: f64,
    pub with_com: bool,
    pub params_hash: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        layout::dim(self.with_com)
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Fraction of samples labelled stable.
pub fn stable_fraction(samples: &[Sample]) -> f64 {
    samples.iter().filter(|s| s.y).count() as f64 / samples.len().max(1) as f64
}

/// Seed of the `index`-th sample of a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index.wrapping_add(1)))
}

/// Sample `n_total` labelled states with stances assigned round-robin,
/// shuffle and split them, and compute statistics on the training part.
pub fn generate_dataset(
    n_total: usize,
    split_fraction: f64,
    seed: u64,
    params: &RobotParams,
    config: &SamplerConfig,
    exec: Exec,
) -> Result<Dataset> {
    if n_total < 80 {
        return Err(Error::BadInput(format!("n_total {n_total} < 80")));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::BadInput(format!(
            "split fraction {split_fraction} outside (0, 1)"
        )));
    }
    params.validate()?;
    let samples = try_map_indexed(exec, n_total, |i| {
        let stance = StanceId::new((i % NUM_STANCES as usize) as u8)?;
        sample_configuration(stance, sample_seed(seed, i as u64), params, config)
    })?;
    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n_total as f64) * split_fraction).round() as usize;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take =
        |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| slots[i].take().expect("each index once")).collect() };
    let train = take(&order[..n_train]);
    let test = take(&order[n_train..]);
    let stats = NormalisationStats::from_rows(train.iter().map(|s| s.x.0.as_slice()))?;
    Ok(Dataset {
        train,
        test,
        stats,
        seed,
        split_fraction,
        with_com: config.with_com,
        params_hash: params.hash_hex(),
    })
}
