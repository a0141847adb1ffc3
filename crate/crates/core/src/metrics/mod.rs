//! Bias metrics: cosine similarity, the association score and IIAS, total
//! absolute IIAS, accuracy and accuracy difference, percent increase, and
//! family-level aggregation.
//!
//! Everything here is a pure function over immutable inputs and is generic
//! over the [`Scalar`] type.

mod protocol;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::domain::{AccuracyRun, Family, Variant};
use crate::scalar::{self, Scalar};

pub use protocol::{derive_seed, iias_protocol_run, partition_pool, AssociationResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("baseline must be > 0, got {0}")]
    NonPositiveBaseline(f64),
    #[error("no {0} values to compare")]
    MissingFamily(Family),
    #[error("model '{model}' iteration {iteration} has no {missing} run")]
    UnpairedRun {
        model: String,
        iteration: u32,
        missing: Variant,
    },
    #[error("{pool} in {space}: {available} records, {required} needed for disjoint sampling")]
    PoolTooSmall {
        space: String,
        pool: String,
        available: usize,
        required: usize,
    },
    #[error("protocol needs at least one iteration")]
    NoIterations,
}

fn check_vector<T: Scalar>(v: &[T]) -> Result<T, MetricError> {
    let mut sq = T::zero();
    for &x in v {
        if !x.is_finite() {
            return Err(MetricError::NonFinite);
        }
        sq = sq + x * x;
    }
    if sq.is_zero() {
        return Err(MetricError::ZeroVector);
    }
    Ok(sq.sqrt())
}

/// `(a·b) / (‖a‖₂‖b‖₂)`, in `[-1, 1]`.
///
/// For entrywise non-negative inputs the result is in `[0, 1]`. Negative
/// activations are scored as-is, never clamped to zero.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let na = check_vector(a)?;
    let nb = check_vector(b)?;
    let dot = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let cos = dot / (na * nb);
    // rounding can overshoot the unit interval by an ulp
    Ok(cos.max(-T::one()).min(T::one()))
}

fn mean_similarity<T: Scalar, V: AsRef<[T]>>(w: &[T], set: &[V]) -> Result<T, MetricError> {
    let mut sum = T::zero();
    for v in set {
        sum = sum + cosine_similarity(w, v.as_ref())?;
    }
    Ok(sum / T::from_count(set.len()))
}

/// Differential association of one target with the two attribute sets:
/// mean similarity to `a_set` minus mean similarity to `b_set`.
pub fn association_score<T: Scalar, V: AsRef<[T]>>(w: &[T], a_set: &[V], b_set: &[V]) -> Result<T, MetricError> {
    if a_set.is_empty() {
        return Err(MetricError::Empty("attribute set A"));
    }
    if b_set.is_empty() {
        return Err(MetricError::Empty("attribute set B"));
    }
    Ok(mean_similarity(w, a_set)? - mean_similarity(w, b_set)?)
}

/// Image-image association score: mean of [`association_score`] over the
/// target set. Positive means the targets sit closer to `a_set` (men).
pub fn iias<T: Scalar, W: AsRef<[T]>, V: AsRef<[T]>>(
    targets: &[W],
    a_set: &[V],
    b_set: &[V],
) -> Result<T, MetricError> {
    if targets.is_empty() {
        return Err(MetricError::Empty("target set W"));
    }
    let mut sum = T::zero();
    for w in targets {
        sum = sum + association_score(w.as_ref(), a_set, b_set)?;
    }
    Ok(sum / T::from_count(targets.len()))
}

/// Sum of absolute per-class scores; captures magnitude regardless of direction.
pub fn total_absolute_iias<T: Scalar>(per_class: &[T]) -> T {
    per_class.iter().fold(T::zero(), |acc, x| acc + x.abs())
}

/// Fraction of positions where the predicted label equals the truth,
/// i.e. one minus the misclassification rate.
pub fn accuracy_from_labels<T: Scalar, L: PartialEq>(truth: &[L], predicted: &[L]) -> Result<T, MetricError> {
    if truth.len() != predicted.len() {
        return Err(MetricError::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty("label sequence"));
    }
    let misses = truth.iter().zip(predicted).filter(|(t, p)| t != p).count();
    let error = T::from_count(misses) / T::from_count(truth.len());
    Ok(T::one() - error)
}

/// Accuracy difference between a balanced-data and an imbalanced-data model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaResult<T = f64> {
    pub a_unbiased: T,
    pub a_biased: T,
    /// `|a_unbiased - a_biased|`
    pub delta: T,
    /// `delta / a_unbiased * 100`; `None` when `a_unbiased` is zero.
    pub percent_delta: Option<T>,
}

fn check_unit<T: Scalar>(name: &'static str, x: T) -> Result<(), MetricError> {
    if x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(MetricError::OutOfRange {
            name,
            value: x.to_f64().unwrap_or(f64::NAN),
        })
    }
}

pub fn accuracy_difference<T: Scalar>(a_unbiased: T, a_biased: T) -> Result<DeltaResult<T>, MetricError> {
    check_unit("a_unbiased", a_unbiased)?;
    check_unit("a_biased", a_biased)?;
    let delta = (a_unbiased - a_biased).abs();
    let percent_delta = (a_unbiased > T::zero()).then(|| delta / a_unbiased * T::hundred());
    Ok(DeltaResult {
        a_unbiased,
        a_biased,
        delta,
        percent_delta,
    })
}

/// `(x - baseline) / baseline * 100`.
pub fn percent_increase<T: Scalar>(x: T, baseline: T) -> Result<T, MetricError> {
    if baseline.is_nan() || baseline <= T::zero() {
        return Err(MetricError::NonPositiveBaseline(baseline.to_f64().unwrap_or(f64::NAN)));
    }
    Ok((x - baseline) / baseline * T::hundred())
}

pub fn aggregate_mean<T: Scalar>(values: &[T]) -> Result<T, MetricError> {
    scalar::mean(values).ok_or(MetricError::Empty("value sequence"))
}

/// Per-model accuracy difference averaged over training iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDelta<T = f64> {
    pub model: String,
    pub family: Family,
    pub per_iteration: Vec<DeltaResult<T>>,
    pub mean_delta: T,
    /// `None` if any iteration had zero unbiased accuracy.
    pub mean_percent_delta: Option<T>,
}

/// Pairs biased and unbiased runs by `(model, iteration)` and averages the
/// accuracy difference per model. Output is sorted by family, then model.
pub fn model_deltas<T: Scalar>(runs: &[AccuracyRun<T>]) -> Result<Vec<ModelDelta<T>>, MetricError> {
    type Pair<T> = (Option<T>, Option<T>);
    let mut by_model: BTreeMap<(Family, &str), BTreeMap<u32, Pair<T>>> = BTreeMap::new();
    for r in runs {
        let slot = by_model
            .entry((r.family, r.model.as_str()))
            .or_default()
            .entry(r.iteration)
            .or_default();
        match r.variant {
            Variant::Unbiased => slot.0 = Some(r.accuracy),
            Variant::Biased => slot.1 = Some(r.accuracy),
        }
    }

    let mut out = Vec::with_capacity(by_model.len());
    for ((family, model), iterations) in by_model {
        let mut per_iteration = Vec::with_capacity(iterations.len());
        for (iteration, pair) in iterations {
            let (unbiased, biased) = match pair {
                (Some(u), Some(b)) => (u, b),
                (None, _) => {
                    return Err(MetricError::UnpairedRun {
                        model: model.to_string(),
                        iteration,
                        missing: Variant::Unbiased,
                    })
                }
                (_, None) => {
                    return Err(MetricError::UnpairedRun {
                        model: model.to_string(),
                        iteration,
                        missing: Variant::Biased,
                    })
                }
            };
            per_iteration.push(accuracy_difference(unbiased, biased)?);
        }
        let deltas: Vec<T> = per_iteration.iter().map(|d| d.delta).collect();
        let percents: Option<Vec<T>> = per_iteration.iter().map(|d| d.percent_delta).collect();
        out.push(ModelDelta {
            model: model.to_string(),
            family,
            mean_delta: aggregate_mean(&deltas)?,
            mean_percent_delta: percents.map(|p| aggregate_mean(&p)).transpose()?,
            per_iteration,
        });
    }
    Ok(out)
}

/// Family means of a per-model quantity and how much higher one family is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyComparison<T = f64> {
    pub cnn_mean: T,
    pub vit_mean: T,
    pub cnn_count: usize,
    pub vit_count: usize,
}

impl<T: Scalar> FamilyComparison<T> {
    pub fn mean(&self, family: Family) -> T {
        match family {
            Family::Cnn => self.cnn_mean,
            Family::Vit => self.vit_mean,
        }
    }

    /// Percent increase of the ViT mean over the CNN mean (negative if lower).
    pub fn vit_over_cnn(&self) -> Result<T, MetricError> {
        percent_increase(self.vit_mean, self.cnn_mean)
    }

    /// The family with the higher mean and its percent increase over the
    /// other. `None` when the means are equal.
    pub fn higher(&self) -> Result<Option<(Family, T)>, MetricError> {
        if self.vit_mean > self.cnn_mean {
            Ok(Some((Family::Vit, percent_increase(self.vit_mean, self.cnn_mean)?)))
        } else if self.cnn_mean > self.vit_mean {
            Ok(Some((Family::Cnn, percent_increase(self.cnn_mean, self.vit_mean)?)))
        } else {
            Ok(None)
        }
    }
}

/// Groups family-tagged values and averages each group. Both families must
/// be present.
pub fn compare_families<T: Scalar, I>(values: I) -> Result<FamilyComparison<T>, MetricError>
where
    I: IntoIterator<Item = (Family, T)>,
{
    let mut cnn = Vec::new();
    let mut vit = Vec::new();
    for (family, v) in values {
        match family {
            Family::Cnn => cnn.push(v),
            Family::Vit => vit.push(v),
        }
    }
    let cnn_mean = scalar::mean(&cnn).ok_or(MetricError::MissingFamily(Family::Cnn))?;
    let vit_mean = scalar::mean(&vit).ok_or(MetricError::MissingFamily(Family::Vit))?;
    Ok(FamilyComparison {
        cnn_mean,
        vit_mean,
        cnn_count: cnn.len(),
        vit_count: vit.len(),
    })
}
