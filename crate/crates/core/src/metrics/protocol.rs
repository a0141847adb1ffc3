//! Repeated IIAS evaluation with seeded sampling without repetition.
//!
//! Each embedding space (one trained model) is scored independently. For
//! every pool (men attributes, women attributes, and each target class per
//! gender) the records are sorted by id, shuffled with a sub-seed derived
//! from the run seed and the pool's identity, and cut into R disjoint
//! chunks. Iteration r scores chunk r of every pool. Sub-seeds make the
//! result independent of record order and of evaluation order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{iias, MetricError};
use crate::domain::{Condition, DatasetManifest, EmbeddingRecord, Family, GenderTag, SpaceKey, Variant};
use crate::scalar::{self, Scalar};

/// Mean IIAS of one class for one (condition, variant, family) cell, with
/// the per-iteration values it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult<T = f64> {
    pub class: String,
    pub condition: Condition,
    pub variant: Variant,
    pub family: Family,
    /// Mean of `per_iteration`.
    pub iias: T,
    /// Iteration r holds the mean over models of that iteration's IIAS.
    pub per_iteration: Vec<T>,
    /// Number of embedding spaces (models) averaged into each iteration.
    pub spaces: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable sub-seed for a labelled branch of a seeded computation.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    // FNV-1a, with a separator byte so ["ab","c"] and ["a","bc"] differ
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.as_bytes().iter().chain(std::iter::once(&0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Shuffles `pool` with `seed` and splits it into `rounds` disjoint chunks
/// of `size` items each. Items beyond `rounds * size` are left unused.
pub fn partition_pool<I: Clone>(pool: &[I], size: usize, rounds: usize, seed: u64) -> Option<Vec<Vec<I>>> {
    if pool.len() < size * rounds {
        return None;
    }
    let mut shuffled = pool.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    Some(
        (0..rounds)
            .map(|r| shuffled[r * size..(r + 1) * size].to_vec())
            .collect(),
    )
}

struct Pools<'a, T> {
    attributes: BTreeMap<GenderTag, Vec<&'a EmbeddingRecord<T>>>,
    targets: BTreeMap<(&'a str, GenderTag), Vec<&'a EmbeddingRecord<T>>>,
}

fn sampled<'a, T: Scalar>(
    space: &SpaceKey,
    space_label: &str,
    pool_label: &str,
    pool: Option<&Vec<&'a EmbeddingRecord<T>>>,
    size: usize,
    rounds: usize,
    seed: u64,
) -> Result<Vec<Vec<&'a [T]>>, MetricError> {
    let mut pool: Vec<&EmbeddingRecord<T>> = pool.cloned().unwrap_or_default();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let sub_seed = derive_seed(
        seed,
        &[
            &space.model,
            space.family.as_str(),
            space.variant.as_str(),
            &space.iteration.to_string(),
            pool_label,
        ],
    );
    let chunks = partition_pool(&pool, size, rounds, sub_seed).ok_or_else(|| MetricError::PoolTooSmall {
        space: space_label.to_string(),
        pool: pool_label.to_string(),
        available: pool.len(),
        required: size * rounds,
    })?;
    Ok(chunks
        .into_iter()
        .map(|c| c.into_iter().map(|r| r.vec.as_slice()).collect())
        .collect())
}

/// Runs the repeated association protocol declared by `manifest`.
///
/// Returns one result per (class, variant, family) present in `records`,
/// sorted by class, then variant, then family. The condition is the
/// manifest's.
pub fn iias_protocol_run<T: Scalar>(
    records: &[EmbeddingRecord<T>],
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<Vec<AssociationResult<T>>, MetricError> {
    let rounds = manifest.protocol.iterations as usize;
    if rounds == 0 {
        return Err(MetricError::NoIterations);
    }
    if manifest.targets.is_empty() {
        return Err(MetricError::Empty("target set declarations"));
    }

    let mut spaces: BTreeMap<SpaceKey, Pools<'_, T>> = BTreeMap::new();
    for r in records {
        let pools = spaces.entry(r.space()).or_insert_with(|| Pools {
            attributes: BTreeMap::new(),
            targets: BTreeMap::new(),
        });
        if r.class == manifest.attributes.class {
            pools.attributes.entry(r.gender).or_default().push(r);
        } else if r.masked == manifest.protocol.masked && manifest.targets.contains_key(&r.class) {
            pools.targets.entry((r.class.as_str(), r.gender)).or_default().push(r);
        }
    }
    if spaces.is_empty() {
        return Err(MetricError::Empty("embedding records"));
    }

    // (class, variant, family) -> per-space per-iteration scores
    let mut cells: BTreeMap<(&str, Variant, Family), Vec<Vec<T>>> = BTreeMap::new();
    for (key, pools) in &spaces {
        let label = key.to_string();
        let men = sampled(
            key,
            &label,
            "attributes/man",
            pools.attributes.get(&GenderTag::Man),
            manifest.attributes.men,
            rounds,
            seed,
        )?;
        let women = sampled(
            key,
            &label,
            "attributes/woman",
            pools.attributes.get(&GenderTag::Woman),
            manifest.attributes.women,
            rounds,
            seed,
        )?;

        for (class, spec) in &manifest.targets {
            let mut by_gender = Vec::new();
            for gender in GenderTag::ALL {
                by_gender.push(sampled(
                    key,
                    &label,
                    &format!("targets/{class}/{gender}"),
                    pools.targets.get(&(class.as_str(), gender)),
                    spec.size(gender),
                    rounds,
                    seed,
                )?);
            }
            let mut scores = Vec::with_capacity(rounds);
            for r in 0..rounds {
                let targets: Vec<&[T]> = by_gender.iter().flat_map(|g| g[r].iter().copied()).collect();
                scores.push(iias(&targets, &men[r], &women[r])?);
            }
            cells
                .entry((class.as_str(), key.variant, key.family))
                .or_default()
                .push(scores);
        }
    }

    let condition = manifest.condition();
    let mut out = Vec::with_capacity(cells.len());
    for ((class, variant, family), per_space) in cells {
        let per_iteration: Vec<T> = (0..rounds)
            .map(|r| {
                let column: Vec<T> = per_space.iter().map(|s| s[r]).collect();
                scalar::mean(&column).expect("at least one space per cell")
            })
            .collect();
        out.push(AssociationResult {
            class: class.to_string(),
            condition,
            variant,
            family,
            iias: scalar::mean(&per_iteration).expect("rounds >= 1"),
            per_iteration,
            spaces: per_space.len(),
        });
    }
    Ok(out)
}
