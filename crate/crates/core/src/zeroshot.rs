//! Zero-shot prediction analysis: per-gender label distributions, top-k
//! concentration and skewness of the per-label counts.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use crate::domain::{Family, GenderTag, LabelVocabulary};
use crate::ingest::PredictionLog;
use crate::metrics::{compare_families, FamilyComparison, MetricError};
use crate::scalar::Scalar;

/// Prediction counts of one encoder for one gender, over the full vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelDistribution {
    pub encoder: String,
    pub family: Family,
    pub gender: GenderTag,
    /// Every vocabulary label, including those never predicted.
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl LabelDistribution {
    /// Counts in vocabulary order.
    pub fn count_values(&self, vocab: &LabelVocabulary) -> Vec<u64> {
        vocab
            .labels()
            .iter()
            .map(|l| self.counts.get(l).copied().unwrap_or(0))
            .collect()
    }

    pub fn nonzero_labels(&self) -> usize {
        self.counts.values().filter(|&&c| c > 0).count()
    }
}

pub fn build_distribution(
    log: &PredictionLog,
    encoder: &str,
    gender: GenderTag,
    vocab: &LabelVocabulary,
) -> Result<LabelDistribution, MetricError> {
    let mut counts: BTreeMap<String, u64> = vocab.labels().iter().map(|l| (l.clone(), 0)).collect();
    let mut total = 0;
    let mut family = None;
    for r in log.slice(encoder, gender) {
        // ingest guarantees vocabulary membership; anything else is skipped
        if let Some(c) = counts.get_mut(&r.label) {
            *c += 1;
            total += 1;
            family.get_or_insert(r.family);
        }
    }
    let Some(family) = family else {
        return Err(MetricError::Empty("prediction slice"));
    };
    Ok(LabelDistribution {
        encoder: encoder.to_string(),
        family,
        gender,
        counts,
        total,
    })
}

/// Share of predictions captured by the most frequent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationResult<T = f64> {
    pub encoder: String,
    pub family: Family,
    pub gender: GenderTag,
    /// Most frequent first; ties broken by ascending label.
    pub top_labels: Vec<String>,
    /// `100 * sum(top counts) / total`
    pub occurrence_percent: T,
}

pub const DEFAULT_TOP_K: usize = 3;

/// `k` is clamped to the number of labels with a nonzero count.
pub fn topk_occurrence<T: Scalar>(dist: &LabelDistribution, k: NonZeroUsize) -> ConcentrationResult<T> {
    let mut ranked: Vec<(&String, u64)> = dist
        .counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(l, &c)| (l, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(k.get());
    let top: u64 = ranked.iter().map(|(_, c)| c).sum();
    let occurrence_percent = if dist.total == 0 {
        T::zero()
    } else {
        T::hundred() * T::from_u64(top).expect("count fits") / T::from_u64(dist.total).expect("count fits")
    };
    ConcentrationResult {
        encoder: dist.encoder.clone(),
        family: dist.family,
        gender: dist.gender,
        top_labels: ranked.into_iter().map(|(l, _)| l.clone()).collect(),
        occurrence_percent,
    }
}

/// Which moment estimator [`skewness`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SkewnessEstimator {
    /// Fisher-Pearson `g1 = m3 / m2^(3/2)` with population moments.
    #[default]
    Population,
    /// Adjusted `G1 = g1 * sqrt(n(n-1)) / (n-2)`.
    SampleAdjusted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkewnessConfig {
    pub estimator: SkewnessEstimator,
    /// Count never-predicted vocabulary labels as zeros.
    pub include_zero_counts: bool,
}

impl Default for SkewnessConfig {
    fn default() -> Self {
        Self {
            estimator: SkewnessEstimator::Population,
            include_zero_counts: true,
        }
    }
}

/// Skewness of a sample. Zero when the values are all equal or there are
/// fewer than three of them (where the adjusted estimator is undefined and
/// the population one is identically zero).
pub fn sample_skewness<T: Scalar>(values: &[T], estimator: SkewnessEstimator) -> T {
    let n = values.len();
    if n < 3 {
        return T::zero();
    }
    let nf = T::from_count(n);
    let mean = values.iter().copied().sum::<T>() / nf;
    let (mut s2, mut s3) = (T::zero(), T::zero());
    for &x in values {
        let d = x - mean;
        s2 = s2 + d * d;
        s3 = s3 + d * d * d;
    }
    let m2 = s2 / nf;
    let m3 = s3 / nf;
    // relative cutoff: affine-shifted constant data leaves rounding residue
    let scale = values.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if m2 <= T::epsilon() * T::epsilon() * scale * scale * T::lit(16.0) {
        return T::zero();
    }
    let g1 = m3 / m2.powf(T::lit(1.5));
    match estimator {
        SkewnessEstimator::Population => g1,
        SkewnessEstimator::SampleAdjusted => {
            let one = T::one();
            g1 * (nf * (nf - one)).sqrt() / (nf - one - one)
        }
    }
}

/// Skewness of the per-label prediction counts of a distribution.
pub fn skewness<T: Scalar>(dist: &LabelDistribution, config: SkewnessConfig) -> T {
    let values: Vec<T> = dist
        .counts
        .values()
        .filter(|&&c| config.include_zero_counts || c > 0)
        .map(|&c| T::from_u64(c).expect("count fits"))
        .collect();
    sample_skewness(&values, config.estimator)
}

/// Per-family means of a per-encoder scalar plus the ViT-over-CNN increase.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySummary<T = f64> {
    pub comparison: FamilyComparison<T>,
    pub vit_increase_percent: T,
}

pub fn family_comparison<T: Scalar, S: AsRef<str>>(
    results: &[(S, Family, T)],
) -> Result<FamilySummary<T>, MetricError> {
    let comparison = compare_families(results.iter().map(|(_, f, v)| (*f, *v)))?;
    Ok(FamilySummary {
        vit_increase_percent: comparison.vit_over_cnn()?,
        comparison,
    })
}

/// One row of the zero-shot tables: an encoder's concentration and
/// skewness for both genders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSummary<T = f64> {
    pub encoder: String,
    pub family: Family,
    pub man: ConcentrationResult<T>,
    pub woman: ConcentrationResult<T>,
    pub man_skewness: T,
    pub woman_skewness: T,
}

/// Runs the whole zero-shot analysis for every encoder in the log.
pub fn analyze<T: Scalar>(
    log: &PredictionLog,
    vocab: &LabelVocabulary,
    k: NonZeroUsize,
    config: SkewnessConfig,
) -> Result<Vec<EncoderSummary<T>>, MetricError> {
    let mut out = Vec::new();
    for (encoder, family) in log.encoders() {
        let man = build_distribution(log, &encoder, GenderTag::Man, vocab)?;
        let woman = build_distribution(log, &encoder, GenderTag::Woman, vocab)?;
        out.push(EncoderSummary {
            man: topk_occurrence(&man, k),
            woman: topk_occurrence(&woman, k),
            man_skewness: skewness(&man, config),
            woman_skewness: skewness(&woman, config),
            encoder,
            family,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PredictionRecord;
    use approx::assert_relative_eq;

    fn k(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    fn log(rows: &[(&str, GenderTag, &str)]) -> PredictionLog {
        PredictionLog {
            records: rows
                .iter()
                .enumerate()
                .map(|(i, (encoder, gender, label))| PredictionRecord {
                    image_id: format!("img{i}"),
                    gender: *gender,
                    label: label.to_string(),
                    encoder: encoder.to_string(),
                    family: if encoder.starts_with("ViT") {
                        Family::Vit
                    } else {
                        Family::Cnn
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn degenerate_distribution() {
        let vocab = LabelVocabulary::occupations();
        let rows = vec![("RN50", GenderTag::Woman, "nurse"); 10];
        let dist = build_distribution(&log(&rows), "RN50", GenderTag::Woman, &vocab).unwrap();
        assert_eq!(dist.total, 10);
        assert_eq!(dist.counts["nurse"], 10);
        assert_eq!(dist.counts.len(), 100);
        assert_eq!(dist.counts.values().filter(|&&c| c == 0).count(), 99);

        let top = topk_occurrence::<f64>(&dist, k(3));
        assert_eq!(top.top_labels, vec!["nurse".to_string()]);
        assert_eq!(top.occurrence_percent, 100.0);
    }

    #[test]
    fn empty_slice_is_an_error() {
        let vocab = LabelVocabulary::occupations();
        let rows = vec![("RN50", GenderTag::Woman, "nurse")];
        assert!(build_distribution(&log(&rows), "RN50", GenderTag::Man, &vocab).is_err());
    }

    #[test]
    fn filter_by_encoder() {
        let vocab = LabelVocabulary::occupations();
        let rows = vec![
            ("RN50", GenderTag::Man, "economist"),
            ("ViT-B/16", GenderTag::Man, "coach"),
            ("RN50", GenderTag::Man, "coach"),
        ];
        let dist = build_distribution(&log(&rows), "RN50", GenderTag::Man, &vocab).unwrap();
        assert_eq!(dist.total, 2);
        assert_eq!(dist.counts["economist"], 1);
        assert_eq!(dist.family, Family::Cnn);
    }

    #[test]
    fn top_three_of_uniform_breaks_ties_lexicographically() {
        let labels = [
            "teacher", "nurse", "pilot", "judge", "chef", "baker", "tailor", "welder", "police", "sailor",
        ];
        let vocab = LabelVocabulary::new(labels).unwrap();
        let mut rows = Vec::new();
        for l in labels {
            for _ in 0..10 {
                rows.push(("RN50", GenderTag::Man, l));
            }
        }
        let dist = build_distribution(&log(&rows), "RN50", GenderTag::Man, &vocab).unwrap();
        let top = topk_occurrence::<f64>(&dist, k(3));
        assert_eq!(top.occurrence_percent, 30.0);
        assert_eq!(top.top_labels, vec!["baker", "chef", "judge"]);
        assert_eq!(topk_occurrence::<f64>(&dist, k(10)).occurrence_percent, 100.0);
    }

    #[test]
    fn forty_seven_of_hundred() {
        let vocab = LabelVocabulary::occupations();
        let mut rows = Vec::new();
        for (label, n) in [("mathematician", 20), ("psychiatrist", 15), ("youtuber", 12)] {
            rows.extend(std::iter::repeat_n(("RN50", GenderTag::Man, label), n));
        }
        // remaining 53 spread so no label reaches 12
        for (i, label) in vocab.labels().iter().take(60).enumerate() {
            if rows.len() == 100 {
                break;
            }
            if !["mathematician", "psychiatrist", "youtuber"].contains(&label.as_str()) {
                let n = if i % 2 == 0 { 2 } else { 1 };
                for _ in 0..n.min(100 - rows.len()) {
                    rows.push(("RN50", GenderTag::Man, label.as_str()));
                }
            }
        }
        assert_eq!(rows.len(), 100);
        let dist = build_distribution(&log(&rows), "RN50", GenderTag::Man, &vocab).unwrap();
        let top = topk_occurrence::<f64>(&dist, k(3));
        assert_eq!(top.occurrence_percent, 47.0);
        assert_eq!(top.top_labels, vec!["mathematician", "psychiatrist", "youtuber"]);
    }

    #[test]
    fn skewness_examples() {
        let pop = SkewnessEstimator::Population;
        assert_eq!(sample_skewness(&[5.0, 5.0, 5.0, 5.0], pop), 0.0);
        assert_relative_eq!(
            sample_skewness(&[1.0, 1.0, 8.0], pop),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            sample_skewness(&[8.0, 1.0, 1.0], pop),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(sample_skewness(&[1.0, 9.0], pop), 0.0);
        // adjusted: g1 * sqrt(6) / 1
        assert_relative_eq!(
            sample_skewness(&[1.0, 1.0, 8.0], SkewnessEstimator::SampleAdjusted),
            std::f64::consts::FRAC_1_SQRT_2 * 6f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_count_mode() {
        let vocab = LabelVocabulary::new(["a", "b", "c", "d"]).unwrap();
        let rows = vec![
            ("RN50", GenderTag::Man, "a"),
            ("RN50", GenderTag::Man, "b"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
            ("RN50", GenderTag::Man, "c"),
        ];
        let dist = build_distribution(&log(&rows), "RN50", GenderTag::Man, &vocab).unwrap();
        let with_zeros: f64 = skewness(&dist, SkewnessConfig::default());
        let without: f64 = skewness(
            &dist,
            SkewnessConfig {
                include_zero_counts: false,
                ..Default::default()
            },
        );
        assert_relative_eq!(
            with_zeros,
            sample_skewness(&[1.0, 1.0, 7.0, 0.0], SkewnessEstimator::Population)
        );
        assert_relative_eq!(
            without,
            sample_skewness(&[1.0, 1.0, 7.0], SkewnessEstimator::Population)
        );
    }

    #[test]
    fn family_comparison_examples() {
        let s = family_comparison(&[
            ("RN50", Family::Cnn, 47.0),
            ("RN50x4", Family::Cnn, 46.0),
            ("ViT-B/16", Family::Vit, 50.0),
        ])
        .unwrap();
        assert_eq!(s.comparison.cnn_mean, 46.5);
        assert_eq!(s.comparison.vit_mean, 50.0);

        let s = family_comparison(&[
            ("RN50", Family::Cnn, 2.27_f64),
            ("RN50x4", Family::Cnn, 2.06),
            ("ViT-B/16", Family::Vit, 2.54),
            ("ViT-B/32", Family::Vit, 2.73),
        ])
        .unwrap();
        assert_relative_eq!(s.comparison.cnn_mean, 2.165, epsilon = 1e-12);
        assert_relative_eq!(s.comparison.vit_mean, 2.635, epsilon = 1e-12);
        assert!((s.vit_increase_percent - 21.7).abs() < 0.05);

        assert!(family_comparison(&[("RN50", Family::Cnn, 1.0)]).is_err());
    }
}
