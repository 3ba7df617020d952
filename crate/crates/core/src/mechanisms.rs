//! Noise primitives: the Gaussian mechanism, clamping, and noisy-threshold
//! partition selection.
//!
//! # Noise streams
//!
//! Every noise draw comes from a ChaCha20 stream whose 32-byte seed is
//!
//! ```text
//! SHA-256( "przcdp-noise-v1"
//!        || seed as u64 little-endian
//!        || len(stage) as u64 LE || stage (UTF-8)
//!        || query index as u64 LE
//!        || len(group) as u64 LE || group (UTF-8) )
//! ```
//!
//! and normal variates are drawn with `rand_distr::StandardNormal`. Streams
//! depend only on `(seed, stage, query, group)`, so the order in which
//! releases are computed cannot change their values.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant::PolicyFunction;
use crate::error::{Error, Result};
use crate::splitting::{SplitTable, ThresholdScheme};
use crate::table::{Row, Schema};

/// Gaussian noise calibrated to a sensitivity. The implied zCDP parameter is
/// always recomputed from `delta` and `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseSpec {
    delta: f64,
    sigma: f64,
}

impl GaussianNoiseSpec {
    pub fn new(delta: f64, sigma: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::NonpositiveInput {
                name: "delta",
                value: delta,
            });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::NonpositiveSigma(sigma));
        }
        Ok(GaussianNoiseSpec { delta, sigma })
    }

    /// Calibrates sigma so the release is `rho`-zCDP.
    pub fn for_rho(delta: f64, rho: f64) -> Result<Self> {
        GaussianNoiseSpec::new(delta, sigma_for_rho(delta, rho)?)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        rho_for_sigma(self.delta, self.sigma)
    }
}

/// `sigma = delta / sqrt(2 rho)`
pub fn sigma_for_rho(delta: f64, rho: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::NonpositiveInput {
            name: "delta",
            value: delta,
        });
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::NonpositiveInput {
            name: "rho",
            value: rho,
        });
    }
    Ok(delta / (2.0 * rho).sqrt())
}

/// `delta^2 / (2 sigma^2)`, evaluated as `(delta/sigma)^2 / 2` so that
/// `sigma_for_rho(delta, rho_for_sigma(delta, s))` returns `s` to within an ulp.
pub fn rho_for_sigma(delta: f64, sigma: f64) -> f64 {
    let r = delta / sigma;
    0.5 * r * r
}

/// Top-coding: `min(value, bound)`.
pub fn clamp(value: f64, bound: f64) -> f64 {
    value.min(bound)
}

/// Root of all noise streams for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    noise: bool,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, noise: true }
    }

    /// Test hook: every release returns its input unchanged.
    pub fn without_noise(self) -> Self {
        SeededRng {
            noise: false,
            ..self
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise
    }

    pub fn stream(&self, stage: &str, query: u64, group: &str) -> NoiseStream {
        let mut h = Sha256::new();
        h.update(b"przcdp-noise-v1");
        h.update(self.seed.to_le_bytes());
        h.update((stage.len() as u64).to_le_bytes());
        h.update(stage.as_bytes());
        h.update(query.to_le_bytes());
        h.update((group.len() as u64).to_le_bytes());
        h.update(group.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        NoiseStream {
            rng: ChaCha20Rng::from_seed(digest),
            noise: self.noise,
        }
    }
}

pub struct NoiseStream {
    rng: ChaCha20Rng,
    noise: bool,
}

impl NoiseStream {
    pub fn standard_normal(&mut self) -> f64 {
        if self.noise {
            StandardNormal.sample(&mut self.rng)
        } else {
            0.0
        }
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }
}

/// `value + N(0, sigma^2)`.
pub fn gaussian_release(value: f64, spec: &GaussianNoiseSpec, rng: &mut NoiseStream) -> f64 {
    value + rng.normal(spec.sigma)
}

/// Group key: the labels of the grouping attributes, in order.
pub type GroupKey = Vec<String>;

pub fn group_key_string(key: &[String]) -> String {
    key.join("|")
}

pub(crate) fn row_key(row: &Row, indices: &[usize]) -> GroupKey {
    indices.iter().map(|&i| row.labels[i].clone()).collect()
}

pub(crate) fn resolve_group_attrs(schema: &Schema, attrs: &[String]) -> Result<Vec<usize>> {
    attrs
        .iter()
        .map(|a| schema.require_conditional(a))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedGroup {
    pub key: GroupKey,
    pub true_count: f64,
    pub noisy_count: f64,
    pub released: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSelection {
    pub group_attrs: Vec<String>,
    pub sigma: f64,
    pub tau: f64,
    pub groups: Vec<SelectedGroup>,
}

impl PartitionSelection {
    pub fn released(&self) -> BTreeSet<GroupKey> {
        self.groups
            .iter()
            .filter(|g| g.released)
            .map(|g| g.key.clone())
            .collect()
    }

    /// zCDP cost per split row: the split-row count has sensitivity 1.
    pub fn rho_per_split_row(&self) -> f64 {
        rho_for_sigma(1.0, self.sigma)
    }

    /// Per-record charge: a record's `m` split rows all land in the same
    /// group, so the stage costs `m^2 / (2 sigma^2)`.
    pub fn policy(&self, thresholds: &ThresholdScheme) -> PolicyFunction {
        PolicyFunction::split_cost(self.rho_per_split_row(), thresholds.clone())
    }
}

pub(crate) const PARTITION_STAGE: &str = "partition_select";

/// Releases each group key present in the split table iff its split-row
/// count plus `N(0, sigma^2)` reaches `tau`. Keys absent from the data are
/// never considered.
pub fn partition_select(
    split_table: &SplitTable,
    group_attrs: &[String],
    sigma: f64,
    tau: f64,
    rng: &SeededRng,
) -> Result<PartitionSelection> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::NonpositiveSigma(sigma));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::NonpositiveTau(tau));
    }
    let indices = resolve_group_attrs(split_table.schema(), group_attrs)?;
    let mut counts: BTreeMap<GroupKey, f64> = BTreeMap::new();
    for row in split_table.rows() {
        *counts.entry(row_key(row, &indices)).or_insert(0.0) += 1.0;
    }
    let groups = counts
        .into_iter()
        .map(|(key, count)| {
            let mut stream = rng.stream(PARTITION_STAGE, 0, &group_key_string(&key));
            let noisy = count + stream.normal(sigma);
            SelectedGroup {
                released: noisy >= tau,
                key,
                true_count: count,
                noisy_count: noisy,
            }
        })
        .collect();
    Ok(PartitionSelection {
        group_attrs: group_attrs.to_vec(),
        sigma,
        tau,
        groups,
    })
}
