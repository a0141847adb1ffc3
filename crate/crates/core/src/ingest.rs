//! Readers and writers for the on-disk formats.
//!
//! * `.embj` embedding files: one JSON header line, then one JSON record per line.
//! * accuracy tables: CSV with header `model,family,variant,iteration,accuracy`.
//! * prediction logs: CSV with header `image_id,gender,label,encoder,family`.
//! * manifests: TOML with `[attributes]`, `[targets.<class>]` and `[protocol]`.
//!
//! Every loader enforces the record invariants at load time, so downstream
//! metric code never sees a zero vector or an out-of-range accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AccuracyRun, DatasetManifest, EmbeddingRecord, Family, GenderTag, LabelVocabulary, PredictionRecord, Variant,
};
use crate::scalar::Scalar;

pub const EMBEDDING_FORMAT: &str = "biaslens-emb";
pub const EMBEDDING_VERSION: u32 = 1;
pub const ACCURACY_HEADER: [&str; 5] = ["model", "family", "variant", "iteration", "accuracy"];
pub const PREDICTION_HEADER: [&str; 5] = ["image_id", "gender", "label", "encoder", "family"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestErrorKind {
    Parse,
    DimensionMismatch,
    ZeroVector,
    DuplicateId,
    VocabularyViolation,
    Io,
}

impl fmt::Display for IngestErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IngestErrorKind::Parse => "parse error",
            IngestErrorKind::DimensionMismatch => "dimension mismatch",
            IngestErrorKind::ZeroVector => "zero vector",
            IngestErrorKind::DuplicateId => "duplicate id",
            IngestErrorKind::VocabularyViolation => "vocabulary violation",
            IngestErrorKind::Io => "io error",
        })
    }
}

/// A load failure. `line` is 1-based and set for every content error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct IngestError {
    pub kind: IngestErrorKind,
    pub line: Option<u64>,
    pub message: String,
}

impl IngestError {
    fn at(kind: IngestErrorKind, line: u64, message: impl Into<String>) -> Self {
        Self {
            kind,
            line: Some(line.max(1)),
            message: message.into(),
        }
    }

    fn parse(line: u64, message: impl Into<String>) -> Self {
        Self::at(IngestErrorKind::Parse, line, message)
    }
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.kind, self.message),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

impl From<io::Error> for IngestError {
    fn from(e: io::Error) -> Self {
        Self {
            kind: IngestErrorKind::Io,
            line: None,
            message: e.to_string(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|e| IngestError {
        kind: IngestErrorKind::Io,
        line: None,
        message: format!("{}: {e}", path.display()),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path).map(BufWriter::new).map_err(|e| IngestError {
        kind: IngestErrorKind::Io,
        line: None,
        message: format!("{}: {e}", path.display()),
    })
}

// ---------------------------------------------------------------------------
// Embedding files

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingHeader {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
}

/// Same field order as [`EmbeddingRecord`]; rejects unknown keys.
#[derive(Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct RawEmbedding<T> {
    id: String,
    vec: Vec<T>,
    gender: GenderTag,
    class: String,
    masked: bool,
    model: String,
    family: Family,
    variant: Variant,
    iteration: u32,
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord<T>>, IngestError> {
    read_embeddings(open(path.as_ref())?)
}

pub fn read_embeddings<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<EmbeddingRecord<T>>, IngestError> {
    let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i as u64 + 1, other)),
    });

    let (header_line, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(IngestError::parse(1, "missing header line")),
    };
    let header: EmbeddingHeader =
        serde_json::from_str(&header).map_err(|e| IngestError::parse(header_line, format!("bad header: {e}")))?;
    if header.format != EMBEDDING_FORMAT {
        return Err(IngestError::parse(
            header_line,
            format!("unknown format '{}'", header.format),
        ));
    }
    if header.version != EMBEDDING_VERSION {
        return Err(IngestError::parse(
            header_line,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.dim == 0 {
        return Err(IngestError::parse(header_line, "dim must be >= 1"));
    }

    let mut records = Vec::with_capacity(header.count);
    let mut seen = HashSet::new();
    let mut last_line = header_line;
    for (n, line) in lines {
        let line = line?;
        last_line = n;
        let raw: RawEmbedding<T> = serde_json::from_str(&line).map_err(|e| IngestError::parse(n, e.to_string()))?;
        if raw.vec.len() != header.dim {
            return Err(IngestError::at(
                IngestErrorKind::DimensionMismatch,
                n,
                format!(
                    "record '{}' has {} values, header declares {}",
                    raw.id,
                    raw.vec.len(),
                    header.dim
                ),
            ));
        }
        if raw.vec.iter().any(|x| !x.is_finite()) {
            return Err(IngestError::parse(
                n,
                format!("record '{}' has a non-finite value", raw.id),
            ));
        }
        if raw.vec.iter().all(|x| x.is_zero()) {
            return Err(IngestError::at(
                IngestErrorKind::ZeroVector,
                n,
                format!("record '{}' is the zero vector", raw.id),
            ));
        }
        if raw.iteration == 0 {
            return Err(IngestError::parse(
                n,
                format!("record '{}': iteration must be >= 1", raw.id),
            ));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(IngestError::at(
                IngestErrorKind::DuplicateId,
                n,
                format!("id '{}' repeated", raw.id),
            ));
        }
        records.push(EmbeddingRecord {
            id: raw.id,
            vec: raw.vec,
            gender: raw.gender,
            class: raw.class,
            masked: raw.masked,
            model: raw.model,
            family: raw.family,
            variant: raw.variant,
            iteration: raw.iteration,
        });
    }

    if records.len() != header.count {
        return Err(IngestError::parse(
            last_line,
            format!("header declares {} records, file has {}", header.count, records.len()),
        ));
    }
    Ok(records)
}

/// Writes an `.embj` stream. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_embeddings<T: Scalar, W: Write>(mut writer: W, records: &[EmbeddingRecord<T>]) -> Result<(), IngestError> {
    let dim = records.first().map_or(1, |r| r.dim());
    if let Some(bad) = records.iter().find(|r| r.dim() != dim) {
        return Err(IngestError {
            kind: IngestErrorKind::DimensionMismatch,
            line: None,
            message: format!("record '{}' has {} values, expected {dim}", bad.id, bad.dim()),
        });
    }
    let header = EmbeddingHeader {
        format: EMBEDDING_FORMAT.to_string(),
        version: EMBEDDING_VERSION,
        dim,
        count: records.len(),
    };
    let to_io = |e: serde_json::Error| IngestError::from(io::Error::other(e));
    serde_json::to_writer(&mut writer, &header).map_err(to_io)?;
    writer.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(to_io)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_embeddings<T: Scalar>(path: impl AsRef<Path>, records: &[EmbeddingRecord<T>]) -> Result<(), IngestError> {
    write_embeddings(create(path.as_ref())?, records)
}

// ---------------------------------------------------------------------------
// CSV tables

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(1);
    match e.kind() {
        csv::ErrorKind::Io(_) => IngestError {
            kind: IngestErrorKind::Io,
            line: None,
            message: e.to_string(),
        },
        _ => IngestError::parse(line, e.to_string()),
    }
}

/// Reads the rows of a CSV table with a mandatory fixed header. Returns
/// `(line, fields)` pairs; `None` for an input with no content at all.
fn read_table<R: Read>(reader: R, header: &[&str]) -> Result<Option<Vec<(u64, csv::StringRecord)>>, IngestError> {
    let mut rdr = csv_reader(reader);
    let mut rows = rdr.records();
    let first = match rows.next() {
        None => return Ok(None),
        Some(r) => r.map_err(csv_error)?,
    };
    let got: Vec<&str> = first.iter().collect();
    if got != header {
        return Err(IngestError::parse(
            1,
            format!("expected header '{}', found '{}'", header.join(","), got.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(1, |p| p.line());
        if row.len() != header.len() {
            return Err(IngestError::parse(
                line,
                format!("expected {} fields, found {}", header.len(), row.len()),
            ));
        }
        out.push((line, row));
    }
    Ok(Some(out))
}

fn field<F: std::str::FromStr>(row: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<F, IngestError>
where
    F::Err: fmt::Display,
{
    let raw = &row[idx];
    raw.parse()
        .map_err(|e| IngestError::parse(line, format!("column '{name}': '{raw}': {e}")))
}

fn text_field(row: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<String, IngestError> {
    let raw = &row[idx];
    if raw.is_empty() {
        return Err(IngestError::parse(line, format!("column '{name}' is empty")));
    }
    Ok(raw.to_string())
}

pub fn load_accuracy_runs<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<AccuracyRun<T>>, IngestError> {
    read_accuracy_runs(open(path.as_ref())?)
}

pub fn read_accuracy_runs<T: Scalar, R: Read>(reader: R) -> Result<Vec<AccuracyRun<T>>, IngestError> {
    let Some(rows) = read_table(reader, &ACCURACY_HEADER)? else {
        return Err(IngestError::parse(1, "missing header"));
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let model = text_field(&row, 0, "model", line)?;
        let family: Family = field(&row, 1, "family", line)?;
        let variant: Variant = field(&row, 2, "variant", line)?;
        let iteration: u32 = field(&row, 3, "iteration", line)?;
        if iteration == 0 {
            return Err(IngestError::parse(line, "iteration must be >= 1"));
        }
        let accuracy: T = row[4]
            .parse()
            .map_err(|_| IngestError::parse(line, format!("accuracy '{}' is not a number", &row[4])))?;
        if !(accuracy >= T::zero() && accuracy <= T::one()) {
            return Err(IngestError::parse(
                line,
                format!("accuracy '{}' outside [0, 1]", &row[4]),
            ));
        }
        if !seen.insert((model.clone(), variant, iteration)) {
            return Err(IngestError::at(
                IngestErrorKind::DuplicateId,
                line,
                format!("run ({model}, {variant}, {iteration}) repeated"),
            ));
        }
        out.push(AccuracyRun {
            model,
            family,
            variant,
            iteration,
            accuracy,
        });
    }
    Ok(out)
}

fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(writer)
}

fn csv_write_error(e: csv::Error) -> IngestError {
    IngestError {
        kind: IngestErrorKind::Io,
        line: None,
        message: e.to_string(),
    }
}

pub fn write_accuracy_runs<T: Scalar, W: Write>(writer: W, runs: &[AccuracyRun<T>]) -> Result<(), IngestError> {
    let mut w = csv_writer(writer);
    w.write_record(ACCURACY_HEADER).map_err(csv_write_error)?;
    for r in runs {
        w.write_record([
            r.model.clone(),
            r.family.to_string(),
            r.variant.to_string(),
            r.iteration.to_string(),
            r.accuracy.to_string(),
        ])
        .map_err(csv_write_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_accuracy_runs<T: Scalar>(path: impl AsRef<Path>, runs: &[AccuracyRun<T>]) -> Result<(), IngestError> {
    write_accuracy_runs(create(path.as_ref())?, runs)
}

/// Zero-shot predictions, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionLog {
    pub records: Vec<PredictionRecord>,
}

impl PredictionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Rows for one encoder and gender, in file order.
    pub fn slice<'a>(&'a self, encoder: &'a str, gender: GenderTag) -> impl Iterator<Item = &'a PredictionRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.encoder == encoder && r.gender == gender)
    }

    /// Records grouped by `(encoder, gender)`.
    pub fn groups(&self) -> BTreeMap<(String, GenderTag), Vec<&PredictionRecord>> {
        let mut out: BTreeMap<(String, GenderTag), Vec<&PredictionRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry((r.encoder.clone(), r.gender)).or_default().push(r);
        }
        out
    }

    /// Encoders with their family, sorted by encoder id.
    pub fn encoders(&self) -> Vec<(String, Family)> {
        let mut out: BTreeMap<&str, Family> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.encoder.as_str()).or_insert(r.family);
        }
        out.into_iter().map(|(e, f)| (e.to_string(), f)).collect()
    }
}

pub fn load_predictions(path: impl AsRef<Path>, vocab: &LabelVocabulary) -> Result<PredictionLog, IngestError> {
    read_predictions(open(path.as_ref())?, vocab)
}

pub fn read_predictions<R: Read>(reader: R, vocab: &LabelVocabulary) -> Result<PredictionLog, IngestError> {
    let Some(rows) = read_table(reader, &PREDICTION_HEADER)? else {
        return Ok(PredictionLog::default());
    };
    let mut families: HashMap<String, Family> = HashMap::new();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let image_id = text_field(&row, 0, "image_id", line)?;
        let gender: GenderTag = field(&row, 1, "gender", line)?;
        let label = text_field(&row, 2, "label", line)?;
        let encoder = text_field(&row, 3, "encoder", line)?;
        let family: Family = field(&row, 4, "family", line)?;
        if !vocab.contains(&label) {
            return Err(IngestError::at(
                IngestErrorKind::VocabularyViolation,
                line,
                format!("label '{label}' not in vocabulary"),
            ));
        }
        match families.get(&encoder) {
            Some(&f) if f != family => {
                return Err(IngestError::parse(
                    line,
                    format!("encoder '{encoder}' declared as both {f} and {family}"),
                ))
            }
            Some(_) => {}
            None => {
                families.insert(encoder.clone(), family);
            }
        }
        if !seen.insert((image_id.clone(), encoder.clone())) {
            return Err(IngestError::at(
                IngestErrorKind::DuplicateId,
                line,
                format!("image '{image_id}' predicted twice by '{encoder}'"),
            ));
        }
        records.push(PredictionRecord {
            image_id,
            gender,
            label,
            encoder,
            family,
        });
    }
    Ok(PredictionLog { records })
}

pub fn write_predictions<W: Write>(writer: W, log: &PredictionLog) -> Result<(), IngestError> {
    let mut w = csv_writer(writer);
    w.write_record(PREDICTION_HEADER).map_err(csv_write_error)?;
    for r in &log.records {
        w.write_record([
            r.image_id.as_str(),
            r.gender.as_str(),
            r.label.as_str(),
            r.encoder.as_str(),
            r.family.as_str(),
        ])
        .map_err(csv_write_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_predictions(path: impl AsRef<Path>, log: &PredictionLog) -> Result<(), IngestError> {
    write_predictions(create(path.as_ref())?, log)
}

// ---------------------------------------------------------------------------
// Manifests and vocabularies

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, IngestError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| IngestError {
        kind: IngestErrorKind::Io,
        line: None,
        message: format!("{}: {e}", path.as_ref().display()),
    })?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, IngestError> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(1, |s| text[..s.start.min(text.len())].lines().count().max(1) as u64);
        IngestError::parse(line, e.message().to_string())
    })
}

pub fn render_manifest(manifest: &DatasetManifest) -> String {
    toml::to_string(manifest).expect("manifest serializes")
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<LabelVocabulary, IngestError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    LabelVocabulary::parse(&text).map_err(|e| IngestError::parse(1, e.to_string()))
}
