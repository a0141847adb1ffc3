//! Domain model shared by every other module, plus dataset manifest validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Protected attribute pole. Kept as an enumeration so other attribute
/// pairs can be added without touching the metric code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[non_exhaustive]
pub enum GenderTag {
    Man,
    Woman,
}

impl GenderTag {
    pub const ALL: [GenderTag; 2] = [GenderTag::Man, GenderTag::Woman];

    pub fn as_str(self) -> &'static str {
        match self {
            GenderTag::Man => "man",
            GenderTag::Woman => "woman",
        }
    }
}

/// Architecture family of the model that produced an embedding or prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cnn,
    Vit,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Cnn, Family::Vit];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Vit => "vit",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Cnn => "CNN",
            Family::Vit => "ViT",
        }
    }
}

/// Whether a model was fine-tuned on gender-imbalanced (`Biased`) or
/// gender-balanced (`Unbiased`) data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Biased,
    Unbiased,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Biased, Variant::Unbiased];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Biased => "biased",
            Variant::Unbiased => "unbiased",
        }
    }
}

/// Target image condition: faces blacked out or left visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Masked,
    Unmasked,
}

impl Condition {
    pub fn from_masked(masked: bool) -> Self {
        if masked {
            Condition::Masked
        } else {
            Condition::Unmasked
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Masked => "masked",
            Condition::Unmasked => "unmasked",
        }
    }
}

macro_rules! impl_display_as_str {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    )*};
}

impl_display_as_str!(GenderTag, Family, Variant, Condition);

macro_rules! impl_from_str {
    ($ty:ty, $what:literal, $($text:literal => $val:expr),*) => {
        impl std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($val),)*
                    other => Err(format!("unknown {} '{}'", $what, other)),
                }
            }
        }
    };
}

impl_from_str!(GenderTag, "gender", "man" => GenderTag::Man, "woman" => GenderTag::Woman);
impl_from_str!(Family, "family", "cnn" => Family::Cnn, "vit" => Family::Vit);
impl_from_str!(Variant, "variant", "biased" => Variant::Biased, "unbiased" => Variant::Unbiased);
impl_from_str!(Condition, "condition", "masked" => Condition::Masked, "unmasked" => Condition::Unmasked);

/// One image's feature vector plus its semantic tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmbeddingRecord<T = f64> {
    pub id: String,
    pub vec: Vec<T>,
    pub gender: GenderTag,
    pub class: String,
    pub masked: bool,
    pub model: String,
    pub family: Family,
    pub variant: Variant,
    /// 1-based.
    pub iteration: u32,
}

impl<T: Scalar> EmbeddingRecord<T> {
    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vec.iter().all(|x| x.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.vec.iter().all(|x| x.is_finite())
    }

    /// The embedding space this record lives in.
    pub fn space(&self) -> SpaceKey {
        SpaceKey {
            model: self.model.clone(),
            family: self.family,
            variant: self.variant,
            iteration: self.iteration,
        }
    }
}

/// Identifies one trained feature extractor. Vectors are only ever compared
/// within a single space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpaceKey {
    pub model: String,
    pub family: Family,
    pub variant: Variant,
    pub iteration: u32,
}

impl fmt::Display for SpaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]/{}/{}", self.model, self.family, self.variant, self.iteration)
    }
}

/// One (model, variant, iteration) accuracy observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AccuracyRun<T = f64> {
    pub model: String,
    pub family: Family,
    pub variant: Variant,
    pub iteration: u32,
    /// In `[0, 1]`.
    pub accuracy: T,
}

/// One zero-shot prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub gender: GenderTag,
    pub label: String,
    pub encoder: String,
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabularyError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate label '{0}'")]
    Duplicate(String),
    #[error("label '{0}' is not lowercase")]
    NotLowercase(String),
    #[error("blank label")]
    Blank,
}

const OCCUPATIONS: &str = include_str!("../fixtures/occupations.txt");

/// Ordered set of distinct lowercase labels a zero-shot classifier may emit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
    lookup: HashSet<String>,
}

impl LabelVocabulary {
    pub fn new<I, S>(labels: I) -> Result<Self, VocabularyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        let mut lookup = HashSet::new();
        for label in labels {
            let label: String = label.into();
            if label.trim().is_empty() {
                return Err(VocabularyError::Blank);
            }
            if label.chars().any(char::is_uppercase) {
                return Err(VocabularyError::NotLowercase(label));
            }
            if !lookup.insert(label.clone()) {
                return Err(VocabularyError::Duplicate(label));
            }
            out.push(label);
        }
        if out.is_empty() {
            return Err(VocabularyError::Empty);
        }
        Ok(Self { labels: out, lookup })
    }

    /// Parses one label per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, VocabularyError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    /// The 100-term occupation list used for the zero-shot experiments.
    pub fn occupations() -> Self {
        Self::parse(OCCUPATIONS).expect("bundled vocabulary is valid")
    }

    pub fn contains(&self, label: &str) -> bool {
        self.lookup.contains(label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self::occupations()
    }
}

fn default_attribute_class() -> String {
    "attribute".to_string()
}

/// Attribute sets A (men) and B (women): records whose class equals `class`.
/// `men` and `women` are the per-iteration sample sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    #[serde(default = "default_attribute_class")]
    pub class: String,
    pub men: usize,
    pub women: usize,
}

/// Per-gender sample sizes of one target set W_c.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub men: usize,
    pub women: usize,
}

impl TargetSpec {
    pub fn size(&self, gender: GenderTag) -> usize {
        match gender {
            GenderTag::Man => self.men,
            GenderTag::Woman => self.women,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    /// Number of resampling iterations R.
    pub iterations: u32,
    /// Which target condition this manifest evaluates.
    pub masked: bool,
}

/// Declares the attribute and target sets for one association run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub attributes: AttributeSpec,
    pub targets: BTreeMap<String, TargetSpec>,
    pub protocol: ProtocolSpec,
}

impl DatasetManifest {
    pub fn condition(&self) -> Condition {
        Condition::from_masked(self.protocol.masked)
    }

    pub fn attribute_size(&self, gender: GenderTag) -> usize {
        match gender {
            GenderTag::Man => self.attributes.men,
            GenderTag::Woman => self.attributes.women,
        }
    }

    /// Problems with the declaration itself, independent of any records.
    pub fn declaration_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.attributes.men != self.attributes.women {
            out.push(Violation::Declaration(format!(
                "attribute sets declared unbalanced: A={} B={}",
                self.attributes.men, self.attributes.women
            )));
        }
        if self.attributes.men == 0 || self.attributes.women == 0 {
            out.push(Violation::Declaration("attribute sets must be non-empty".to_string()));
        }
        if self.targets.is_empty() {
            out.push(Violation::Declaration("no target sets declared".to_string()));
        }
        for (class, spec) in &self.targets {
            if spec.men != spec.women {
                out.push(Violation::Declaration(format!(
                    "target set '{class}' declared unbalanced: men={} women={}",
                    spec.men, spec.women
                )));
            }
            if spec.men + spec.women == 0 {
                out.push(Violation::Declaration(format!("target set '{class}' is empty")));
            }
            if *class == self.attributes.class {
                out.push(Violation::Declaration(format!(
                    "target class '{class}' collides with the attribute class"
                )));
            }
        }
        if self.protocol.iterations == 0 {
            out.push(Violation::Declaration("protocol iterations must be >= 1".to_string()));
        }
        out
    }
}

/// One problem found by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    Declaration(String),
    NoRecords,
    DuplicateId {
        id: String,
        count: usize,
    },
    EmptyVector {
        id: String,
    },
    NonFiniteVector {
        id: String,
    },
    ZeroVector {
        id: String,
    },
    InvalidIteration {
        id: String,
    },
    DimensionMismatch {
        dims: Vec<usize>,
    },
    AttributeImbalance {
        space: String,
        men: usize,
        women: usize,
    },
    AttributePoolTooSmall {
        space: String,
        gender: GenderTag,
        available: usize,
        required: usize,
    },
    TargetImbalance {
        space: String,
        class: String,
        men: usize,
        women: usize,
    },
    TargetPoolTooSmall {
        space: String,
        class: String,
        gender: GenderTag,
        available: usize,
        required: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Declaration(msg) => write!(f, "manifest: {msg}"),
            Violation::NoRecords => f.write_str("no embedding records"),
            Violation::DuplicateId { id, count } => {
                write!(f, "duplicate id '{id}' ({count} records)")
            }
            Violation::EmptyVector { id } => write!(f, "empty vector for '{id}'"),
            Violation::NonFiniteVector { id } => write!(f, "non-finite vector for '{id}'"),
            Violation::ZeroVector { id } => write!(f, "zero vector for '{id}'"),
            Violation::InvalidIteration { id } => write!(f, "iteration must be >= 1 for '{id}'"),
            Violation::DimensionMismatch { dims } => {
                let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                write!(f, "dimension mismatch: {}", dims.join(", "))
            }
            Violation::AttributeImbalance { space, men, women } => {
                write!(f, "attribute imbalance A={men} B={women} in {space}")
            }
            Violation::AttributePoolTooSmall {
                space,
                gender,
                available,
                required,
            } => write!(
                f,
                "attribute pool too small in {space}: {gender} has {available}, needs {required}"
            ),
            Violation::TargetImbalance {
                space,
                class,
                men,
                women,
            } => write!(f, "target imbalance for '{class}' men={men} women={women} in {space}"),
            Violation::TargetPoolTooSmall {
                space,
                class,
                gender,
                available,
                required,
            } => write!(
                f,
                "target pool too small for '{class}' in {space}: {gender} has {available}, needs {required}"
            ),
        }
    }
}

/// Result of validating a record collection against a manifest. An empty
/// violation list means the collection is usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        write!(f, "{} violations", self.violations.len())
    }
}

#[derive(Default)]
struct SpaceCounts {
    attributes: BTreeMap<GenderTag, usize>,
    targets: BTreeMap<(String, GenderTag), usize>,
}

/// Checks a record collection against the manifest's set-size protocol and
/// the per-record invariants. Violations are sorted, so the report does not
/// depend on record order.
pub fn validate_manifest<T: Scalar>(manifest: &DatasetManifest, records: &[EmbeddingRecord<T>]) -> ValidationReport {
    let mut violations = manifest.declaration_violations();

    if records.is_empty() {
        violations.push(Violation::NoRecords);
    }

    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dims = BTreeSet::new();
    let mut spaces: BTreeMap<SpaceKey, SpaceCounts> = BTreeMap::new();

    for r in records {
        *ids.entry(r.id.as_str()).or_default() += 1;
        if r.vec.is_empty() {
            violations.push(Violation::EmptyVector { id: r.id.clone() });
        } else if !r.is_finite() {
            violations.push(Violation::NonFiniteVector { id: r.id.clone() });
        } else if r.is_zero() {
            violations.push(Violation::ZeroVector { id: r.id.clone() });
        }
        dims.insert(r.dim());
        if r.iteration == 0 {
            violations.push(Violation::InvalidIteration { id: r.id.clone() });
        }

        let counts = spaces.entry(r.space()).or_default();
        if r.class == manifest.attributes.class {
            *counts.attributes.entry(r.gender).or_default() += 1;
        } else if r.masked == manifest.protocol.masked && manifest.targets.contains_key(&r.class) {
            *counts.targets.entry((r.class.clone(), r.gender)).or_default() += 1;
        }
    }

    for (id, count) in ids {
        if count > 1 {
            violations.push(Violation::DuplicateId {
                id: id.to_string(),
                count,
            });
        }
    }
    if dims.len() > 1 {
        violations.push(Violation::DimensionMismatch {
            dims: dims.into_iter().collect(),
        });
    }

    let rounds = manifest.protocol.iterations.max(1) as usize;
    for (key, counts) in &spaces {
        let space = key.to_string();
        let men = counts.attributes.get(&GenderTag::Man).copied().unwrap_or(0);
        let women = counts.attributes.get(&GenderTag::Woman).copied().unwrap_or(0);
        if men != women {
            violations.push(Violation::AttributeImbalance {
                space: space.clone(),
                men,
                women,
            });
        }
        for (gender, available) in [(GenderTag::Man, men), (GenderTag::Woman, women)] {
            let required = manifest.attribute_size(gender) * rounds;
            if available < required {
                violations.push(Violation::AttributePoolTooSmall {
                    space: space.clone(),
                    gender,
                    available,
                    required,
                });
            }
        }

        for (class, spec) in &manifest.targets {
            let get = |g| counts.targets.get(&(class.clone(), g)).copied().unwrap_or(0);
            let (men, women) = (get(GenderTag::Man), get(GenderTag::Woman));
            if spec.men == spec.women && men != women {
                violations.push(Violation::TargetImbalance {
                    space: space.clone(),
                    class: class.clone(),
                    men,
                    women,
                });
            }
            for (gender, available) in [(GenderTag::Man, men), (GenderTag::Woman, women)] {
                let required = spec.size(gender) * rounds;
                if available < required {
                    violations.push(Violation::TargetPoolTooSmall {
                        space: space.clone(),
                        class: class.clone(),
                        gender,
                        available,
                        required,
                    });
                }
            }
        }
    }

    violations.sort();
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, gender: GenderTag, class: &str, vec: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.to_string(),
            vec,
            gender,
            class: class.to_string(),
            masked: false,
            model: "vgg16".to_string(),
            family: Family::Cnn,
            variant: Variant::Biased,
            iteration: 1,
        }
    }

    fn manifest(attr: usize, target: usize) -> DatasetManifest {
        let mut targets = BTreeMap::new();
        targets.insert(
            "ceo".to_string(),
            TargetSpec {
                men: target,
                women: target,
            },
        );
        DatasetManifest {
            attributes: AttributeSpec {
                class: "attribute".to_string(),
                men: attr,
                women: attr,
            },
            targets,
            protocol: ProtocolSpec {
                iterations: 1,
                masked: false,
            },
        }
    }

    fn pool(men: usize, women: usize, targets: usize) -> Vec<EmbeddingRecord> {
        let mut out = Vec::new();
        for i in 0..men {
            out.push(record(
                &format!("m{i}"),
                GenderTag::Man,
                "attribute",
                vec![1.0, 0.1 * i as f64],
            ));
        }
        for i in 0..women {
            out.push(record(
                &format!("w{i}"),
                GenderTag::Woman,
                "attribute",
                vec![0.1 * i as f64, 1.0],
            ));
        }
        for i in 0..targets {
            out.push(record(&format!("tm{i}"), GenderTag::Man, "ceo", vec![1.0, 1.0]));
            out.push(record(&format!("tw{i}"), GenderTag::Woman, "ceo", vec![1.0, 2.0]));
        }
        out
    }

    #[test]
    fn conforming_pool_is_valid() {
        let report = validate_manifest(&manifest(10, 5), &pool(10, 10, 5));
        assert!(report.is_valid(), "{report}");
        assert_eq!(report.to_string(), "0 violations");
    }

    #[test]
    fn missing_attribute_is_reported_as_imbalance() {
        let report = validate_manifest(&manifest(10, 5), &pool(9, 10, 5));
        let text = report.to_string();
        assert!(text.contains("attribute imbalance A=9 B=10"), "{text}");
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::AttributePoolTooSmall {
                gender: GenderTag::Man,
                available: 9,
                required: 10,
                ..
            }
        )));
    }

    #[test]
    fn mixed_dimensions_are_reported() {
        let mut records = pool(10, 10, 5);
        records[0].vec = vec![1.0; 512];
        records[1].vec = vec![1.0; 768];
        let report = validate_manifest(&manifest(10, 5), &records);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DimensionMismatch { .. })));
        assert!(report.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn record_level_defects() {
        let mut records = pool(10, 10, 5);
        records[0].vec = vec![0.0, 0.0];
        records[1].id = records[2].id.clone();
        records[3].iteration = 0;
        records[4].vec = vec![f64::NAN, 1.0];
        let report = validate_manifest(&manifest(10, 5), &records);
        let v = &report.violations;
        assert!(v.contains(&Violation::ZeroVector { id: "m0".into() }));
        assert!(v.contains(&Violation::DuplicateId {
            id: "m2".into(),
            count: 2
        }));
        assert!(v.contains(&Violation::InvalidIteration { id: "m3".into() }));
        assert!(v.contains(&Violation::NonFiniteVector { id: "m4".into() }));
    }

    #[test]
    fn declaration_problems() {
        let mut m = manifest(10, 5);
        m.attributes.women = 9;
        m.protocol.iterations = 0;
        m.targets.get_mut("ceo").unwrap().women = 4;
        let report = validate_manifest(&m, &pool(10, 10, 5));
        let decls = report
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::Declaration(_)))
            .count();
        assert_eq!(decls, 3);
    }

    #[test]
    fn pool_must_cover_all_iterations() {
        let mut m = manifest(10, 5);
        m.protocol.iterations = 2;
        let report = validate_manifest(&m, &pool(10, 10, 5));
        assert_eq!(
            report
                .violations
                .iter()
                .filter(|v| matches!(v, Violation::AttributePoolTooSmall { .. }))
                .count(),
            2
        );
        assert!(validate_manifest(&m, &pool(20, 20, 10)).is_valid());
    }

    #[test]
    fn targets_of_the_other_condition_are_ignored() {
        let mut records = pool(10, 10, 5);
        let mut extra = record("masked-extra", GenderTag::Man, "ceo", vec![1.0, 1.0]);
        extra.masked = true;
        records.push(extra);
        assert!(validate_manifest(&manifest(10, 5), &records).is_valid());
    }

    #[test]
    fn vocabulary_rules() {
        let vocab = LabelVocabulary::occupations();
        assert_eq!(vocab.len(), 100);
        assert!(vocab.contains("jewellery maker"));
        assert!(!vocab.contains("astronaut"));
        assert_eq!(vocab.labels()[0], "accountant");
        assert_eq!(vocab.labels()[99], "youtuber");
        assert_eq!(
            LabelVocabulary::new(["a", "a"]),
            Err(VocabularyError::Duplicate("a".into()))
        );
        assert_eq!(LabelVocabulary::new(Vec::<String>::new()), Err(VocabularyError::Empty));
        assert!(matches!(
            LabelVocabulary::new(["Nurse"]),
            Err(VocabularyError::NotLowercase(_))
        ));
    }
}
