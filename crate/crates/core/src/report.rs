//! Result tables (accuracy difference, IIAS, zero-shot occurrence and
//! skewness) with family averages and percent-increase annotations, plus
//! replication of the published aggregate rows from per-model values.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{Condition, Family, GenderTag, Variant};
use crate::metrics::{
    self, compare_families, percent_increase, total_absolute_iias, AssociationResult, MetricError, ModelDelta,
};
use crate::scalar::Scalar;
use crate::zeroshot::EncoderSummary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("fixture {name}: {message}")]
    Fixture { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    AccuracyDifference,
    Iias,
    ZeroshotOccurrence,
    ZeroshotSkewness,
}

impl TableKind {
    pub fn title(self) -> &'static str {
        match self {
            TableKind::AccuracyDifference => "Accuracy difference",
            TableKind::Iias => "Image-image association score",
            TableKind::ZeroshotOccurrence => "Zero-shot top-k occurrence",
            TableKind::ZeroshotSkewness => "Zero-shot prediction skewness",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Score(f64),
    Empty,
}

impl Cell {
    fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn score(&self) -> Option<f64> {
        match self {
            Cell::Score(x) => Some(*x),
            _ => None,
        }
    }

    fn display(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Score(x) => format!("{x:.2}"),
            Cell::Empty => String::new(),
        }
    }

    fn full(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Score(x) => x.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

/// Marks a summary cell as higher than another summary cell by `percent`.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub row: usize,
    pub column: usize,
    pub baseline_row: usize,
    pub baseline_column: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub kind: TableKind,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Family averages (or totals); annotations point into these rows.
    pub summary_rows: Vec<Vec<Cell>>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected md or csv)")),
        }
    }
}

impl ReportTable {
    fn new(kind: TableKind, headers: &[&str]) -> Self {
        Self {
            kind,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            summary_rows: Vec::new(),
            annotations: Vec::new(),
        }
    }

    /// Annotates whichever of the two summary cells is higher with its
    /// increase over the other. Equal cells get no annotation.
    fn annotate(&mut self, a: (usize, usize), b: (usize, usize)) -> Result<(), MetricError> {
        let value = |(r, c): (usize, usize)| self.summary_rows[r][c].score();
        let (Some(x), Some(y)) = (value(a), value(b)) else {
            return Ok(());
        };
        let (hi, lo, hv, lv) = if x > y {
            (a, b, x, y)
        } else if y > x {
            (b, a, y, x)
        } else {
            return Ok(());
        };
        self.annotations.push(Annotation {
            row: hi.0,
            column: hi.1,
            baseline_row: lo.0,
            baseline_column: lo.1,
            percent: percent_increase(hv, lv)?,
        });
        Ok(())
    }

    fn annotation_at(&self, row: usize, column: usize) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.row == row && a.column == column)
    }

    /// Renders the table. Markdown rounds scores to two decimals and
    /// annotations to whole percents; CSV keeps full precision in long
    /// `section,row,column,value` form.
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.render_markdown(),
            Format::Csv => self.render_csv(),
        }
    }

    fn render_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "### {}\n", self.kind.title());
        let _ = writeln!(out, "| {} |", self.headers.join(" | "));
        let _ = writeln!(out, "|{}", self.headers.iter().map(|_| "---|").collect::<String>());
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::display).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        for (r, row) in self.summary_rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| match self.annotation_at(r, c) {
                    Some(a) => format!("{} ({:.0}% ↑)", cell.display(), a.percent),
                    None => cell.display(),
                })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    fn render_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let label = |row: &[Cell]| row.first().map(Cell::full).unwrap_or_default();
        let mut put = |fields: [&str; 4]| w.write_record(fields).expect("in-memory write");
        put(["section", "row", "column", "value"]);
        for (section, rows) in [("data", &self.rows), ("summary", &self.summary_rows)] {
            for row in rows.iter() {
                let name = label(row);
                for (c, cell) in row.iter().enumerate().skip(1) {
                    put([section, &name, &self.headers[c], &cell.full()]);
                }
            }
        }
        for a in &self.annotations {
            let name = label(&self.summary_rows[a.row]);
            put([
                "increase_percent",
                &name,
                &self.headers[a.column],
                &a.percent.to_string(),
            ]);
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

impl fmt::Display for ReportTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_markdown())
    }
}

fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn family_label(f: Family) -> String {
    format!("{} average", f.display_name())
}

/// Per-model accuracy-difference means, one table row each.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelDeltaRow {
    pub model: String,
    pub family: Family,
    pub mean_delta: f64,
    pub mean_percent_delta: Option<f64>,
}

impl<T: Scalar> From<&ModelDelta<T>> for ModelDeltaRow {
    fn from(d: &ModelDelta<T>) -> Self {
        Self {
            model: d.model.clone(),
            family: d.family,
            mean_delta: to_f64(d.mean_delta),
            mean_percent_delta: d.mean_percent_delta.map(to_f64),
        }
    }
}

/// Builds family-row tables: one data row per item, one summary row per
/// family holding column means, and an annotation per scored column.
fn family_table<R>(
    kind: TableKind,
    headers: &[&str],
    items: &[R],
    family_of: impl Fn(&R) -> Family,
    cells: impl Fn(&R) -> Vec<Cell>,
) -> Result<ReportTable, MetricError> {
    let mut table = ReportTable::new(kind, headers);
    let mut sorted: Vec<&R> = items.iter().collect();
    sorted.sort_by_key(|r| family_of(r));
    for r in &sorted {
        let mut row = vec![Cell::text(family_of(r).display_name())];
        row.extend(cells(r));
        table.rows.push(row);
    }

    let scored: Vec<usize> = (2..headers.len())
        .filter(|&c| table.rows.iter().any(|r| matches!(r[c], Cell::Score(_))))
        .collect();
    let mut summary: BTreeMap<Family, Vec<Cell>> = BTreeMap::new();
    for family in Family::ALL {
        let mut row = vec![Cell::text(family_label(family)), Cell::Empty];
        row.resize(headers.len(), Cell::Empty);
        summary.insert(family, row);
    }
    for &c in &scored {
        let values = table.rows.iter().filter_map(|r| {
            let family = if r[0] == Cell::text(Family::Cnn.display_name()) {
                Family::Cnn
            } else {
                Family::Vit
            };
            r[c].score().map(|v| (family, v))
        });
        let cmp = compare_families(values)?;
        summary.get_mut(&Family::Cnn).expect("present")[c] = Cell::Score(cmp.cnn_mean);
        summary.get_mut(&Family::Vit).expect("present")[c] = Cell::Score(cmp.vit_mean);
    }
    if items.is_empty() {
        return Ok(table);
    }
    table.summary_rows = summary.into_values().collect();
    for &c in &scored {
        table.annotate((0, c), (1, c))?;
    }
    Ok(table)
}

/// Mean Δ and mean %Δ per model with family averages.
pub fn accuracy_table(rows: &[ModelDeltaRow]) -> Result<ReportTable, MetricError> {
    family_table(
        TableKind::AccuracyDifference,
        &["Model Type", "Model Name", "Mean Δ", "Mean %Δ"],
        rows,
        |r| r.family,
        |r| {
            vec![
                Cell::text(&r.model),
                Cell::Score(r.mean_delta),
                r.mean_percent_delta.map_or(Cell::Empty, Cell::Score),
            ]
        },
    )
}

/// One per-class IIAS value of the association table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct IiasCell {
    pub class: String,
    pub condition: Condition,
    pub variant: Variant,
    pub family: Family,
    pub iias: f64,
}

impl<T: Scalar> From<&AssociationResult<T>> for IiasCell {
    fn from(r: &AssociationResult<T>) -> Self {
        Self {
            class: r.class.clone(),
            condition: r.condition,
            variant: r.variant,
            family: r.family,
            iias: to_f64(r.iias),
        }
    }
}

/// Classes down, (condition, variant, family) across, with a total
/// absolute IIAS row and, per (condition, variant), an annotation on the
/// family with the larger total.
pub fn iias_table(cells: &[IiasCell]) -> Result<ReportTable, MetricError> {
    let mut columns: Vec<(Condition, Variant, Family)> =
        cells.iter().map(|c| (c.condition, c.variant, c.family)).collect();
    columns.sort();
    columns.dedup();
    let mut classes: Vec<&str> = Vec::new();
    for c in cells {
        if !classes.contains(&c.class.as_str()) {
            classes.push(&c.class);
        }
    }

    let mut headers = vec!["Class".to_string()];
    headers.extend(
        columns
            .iter()
            .map(|(c, v, f)| format!("{} {} {}", c, v, f.display_name())),
    );
    let mut table = ReportTable {
        kind: TableKind::Iias,
        headers,
        rows: Vec::new(),
        summary_rows: Vec::new(),
        annotations: Vec::new(),
    };

    let lookup: BTreeMap<(&str, (Condition, Variant, Family)), f64> = cells
        .iter()
        .map(|c| ((c.class.as_str(), (c.condition, c.variant, c.family)), c.iias))
        .collect();
    for class in &classes {
        let mut row = vec![Cell::text(*class)];
        row.extend(
            columns
                .iter()
                .map(|col| lookup.get(&(*class, *col)).map_or(Cell::Empty, |&v| Cell::Score(v))),
        );
        table.rows.push(row);
    }
    if cells.is_empty() {
        return Ok(table);
    }

    let mut total = vec![Cell::text("Total IIAS (absolute)")];
    for col in &columns {
        let values: Vec<f64> = classes
            .iter()
            .filter_map(|class| lookup.get(&(*class, *col)).copied())
            .collect();
        total.push(Cell::Score(total_absolute_iias(&values)));
    }
    table.summary_rows.push(total);

    for (i, &(cond, var, fam)) in columns.iter().enumerate() {
        if fam != Family::Cnn {
            continue;
        }
        if let Some(j) = columns.iter().position(|&c| c == (cond, var, Family::Vit)) {
            table.annotate((0, i + 1), (0, j + 1))?;
        }
    }
    Ok(table)
}

/// Top-k concentration of one encoder for both genders.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceRow {
    pub encoder: String,
    pub family: Family,
    pub man_percent: f64,
    pub man_top: Vec<String>,
    pub woman_percent: f64,
    pub woman_top: Vec<String>,
}

pub fn occurrence_table(rows: &[OccurrenceRow]) -> Result<ReportTable, MetricError> {
    family_table(
        TableKind::ZeroshotOccurrence,
        &[
            "Family",
            "Image Encoder",
            "Man Occurrence",
            "Man Top Predictions",
            "Woman Occurrence",
            "Woman Top Predictions",
        ],
        rows,
        |r| r.family,
        |r| {
            vec![
                Cell::text(&r.encoder),
                Cell::Score(r.man_percent),
                Cell::text(r.man_top.join(", ")),
                Cell::Score(r.woman_percent),
                Cell::text(r.woman_top.join(", ")),
            ]
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewnessRow {
    pub encoder: String,
    pub family: Family,
    pub man: f64,
    pub woman: f64,
}

pub fn skewness_table(rows: &[SkewnessRow]) -> Result<ReportTable, MetricError> {
    family_table(
        TableKind::ZeroshotSkewness,
        &["Family", "Image Encoder", "Man", "Woman"],
        rows,
        |r| r.family,
        |r| vec![Cell::text(&r.encoder), Cell::Score(r.man), Cell::Score(r.woman)],
    )
}

/// Both zero-shot tables from an analysis run.
pub fn zeroshot_tables<T: Scalar>(summaries: &[EncoderSummary<T>]) -> Result<(ReportTable, ReportTable), MetricError> {
    let occurrence: Vec<OccurrenceRow> = summaries
        .iter()
        .map(|s| OccurrenceRow {
            encoder: s.encoder.clone(),
            family: s.family,
            man_percent: to_f64(s.man.occurrence_percent),
            man_top: s.man.top_labels.clone(),
            woman_percent: to_f64(s.woman.occurrence_percent),
            woman_top: s.woman.top_labels.clone(),
        })
        .collect();
    let skew: Vec<SkewnessRow> = summaries
        .iter()
        .map(|s| SkewnessRow {
            encoder: s.encoder.clone(),
            family: s.family,
            man: to_f64(s.man_skewness),
            woman: to_f64(s.woman_skewness),
        })
        .collect();
    Ok((occurrence_table(&occurrence)?, skewness_table(&skew)?))
}

// ---------------------------------------------------------------------------
// Replication of the published aggregates

/// Per-model values the published aggregate rows are derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedFixture {
    pub accuracy: Vec<ModelDeltaRow>,
    pub iias: Vec<IiasCell>,
    pub occurrence: Vec<OccurrenceRow>,
    pub skewness: Vec<SkewnessRow>,
}

pub const ACCURACY_FILE: &str = "accuracy_difference.csv";
pub const IIAS_FILE: &str = "iias.csv";
pub const OCCURRENCE_FILE: &str = "occurrence.csv";
pub const SKEWNESS_FILE: &str = "skewness.csv";

const BUNDLED_ACCURACY: &str = include_str!("../fixtures/published/accuracy_difference.csv");
const BUNDLED_IIAS: &str = include_str!("../fixtures/published/iias.csv");
const BUNDLED_OCCURRENCE: &str = include_str!("../fixtures/published/occurrence.csv");
const BUNDLED_SKEWNESS: &str = include_str!("../fixtures/published/skewness.csv");

#[derive(Deserialize)]
struct OccurrenceLine {
    encoder: String,
    family: Family,
    gender: GenderTag,
    occurrence: f64,
    top_labels: String,
}

#[derive(Deserialize)]
struct SkewnessLine {
    encoder: String,
    family: Family,
    gender: GenderTag,
    skewness: f64,
}

fn read_rows<D: serde::de::DeserializeOwned>(name: &str, reader: impl Read) -> Result<Vec<D>, ReportError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<D>, _>>()
        .map_err(|e| ReportError::Fixture {
            name: name.to_string(),
            message: e.to_string(),
        })
}

/// Joins per-gender lines into per-encoder rows, keeping first-seen order.
fn by_encoder<L, R>(
    name: &str,
    lines: Vec<L>,
    key: impl Fn(&L) -> (&str, Family, GenderTag),
    build: impl Fn(&L, &L) -> R,
) -> Result<Vec<R>, ReportError> {
    let mut order: Vec<(String, Family)> = Vec::new();
    let mut slots: BTreeMap<(String, GenderTag), usize> = BTreeMap::new();
    for (i, l) in lines.iter().enumerate() {
        let (enc, fam, gender) = key(l);
        if !order.iter().any(|(e, _)| e == enc) {
            order.push((enc.to_string(), fam));
        }
        slots.insert((enc.to_string(), gender), i);
    }
    order
        .iter()
        .map(|(enc, _)| {
            let get = |g: GenderTag| {
                slots.get(&(enc.clone(), g)).ok_or_else(|| ReportError::Fixture {
                    name: name.to_string(),
                    message: format!("encoder '{enc}' has no {g} row"),
                })
            };
            Ok(build(&lines[*get(GenderTag::Man)?], &lines[*get(GenderTag::Woman)?]))
        })
        .collect()
}

impl PublishedFixture {
    /// The per-model values shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_readers(
            BUNDLED_ACCURACY.as_bytes(),
            BUNDLED_IIAS.as_bytes(),
            BUNDLED_OCCURRENCE.as_bytes(),
            BUNDLED_SKEWNESS.as_bytes(),
        )
        .expect("bundled fixture parses")
    }

    /// Loads the four fixture files from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ReportError> {
        let open = |name: &str| {
            std::fs::File::open(dir.as_ref().join(name)).map_err(|e| ReportError::Fixture {
                name: name.to_string(),
                message: e.to_string(),
            })
        };
        Self::from_readers(
            open(ACCURACY_FILE)?,
            open(IIAS_FILE)?,
            open(OCCURRENCE_FILE)?,
            open(SKEWNESS_FILE)?,
        )
    }

    pub fn from_readers(
        accuracy_t: impl Read,
        iias_t: impl Read,
        occurrence_t: impl Read,
        skewness_t: impl Read,
    ) -> Result<Self, ReportError> {
        let accuracy = read_rows(ACCURACY_FILE, accuracy_t)?;
        let iias = read_rows(IIAS_FILE, iias_t)?;
        let occurrence = by_encoder(
            OCCURRENCE_FILE,
            read_rows::<OccurrenceLine>(OCCURRENCE_FILE, occurrence_t)?,
            |l| (l.encoder.as_str(), l.family, l.gender),
            |m, w| {
                let split = |s: &str| s.split(';').map(|x| x.trim().to_string()).collect();
                OccurrenceRow {
                    encoder: m.encoder.clone(),
                    family: m.family,
                    man_percent: m.occurrence,
                    man_top: split(&m.top_labels),
                    woman_percent: w.occurrence,
                    woman_top: split(&w.top_labels),
                }
            },
        )?;
        let skewness = by_encoder(
            SKEWNESS_FILE,
            read_rows::<SkewnessLine>(SKEWNESS_FILE, skewness_t)?,
            |l| (l.encoder.as_str(), l.family, l.gender),
            |m, w| SkewnessRow {
                encoder: m.encoder.clone(),
                family: m.family,
                man: m.skewness,
                woman: w.skewness,
            },
        )?;
        Ok(Self {
            accuracy,
            iias,
            occurrence,
            skewness,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Reported for reference; does not gate the replication.
    Info,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "info",
        })
    }
}

/// One recomputed aggregate compared to its published value.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub table: &'static str,
    pub cell: String,
    pub computed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    pub note: &'static str,
}

impl Check {
    fn gated(table: &'static str, cell: impl Into<String>, computed: f64, expected: f64, tolerance: f64) -> Self {
        let status = if (computed - expected).abs() <= tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            table,
            cell: cell.into(),
            computed,
            expected,
            tolerance,
            status,
            note: "",
        }
    }

    fn info(
        table: &'static str,
        cell: impl Into<String>,
        computed: f64,
        expected: f64,
        tolerance: f64,
        note: &'static str,
    ) -> Self {
        Self {
            status: CheckStatus::Info,
            note,
            ..Self::gated(table, cell, computed, expected, tolerance)
        }
    }

    fn with_note(mut self, note: &'static str) -> Self {
        self.note = note;
        self
    }

    pub fn within_tolerance(&self) -> bool {
        (self.computed - self.expected).abs() <= self.tolerance
    }
}

/// Tolerances for comparing recomputed aggregates with the published ones.
pub mod tolerance {
    /// Family means of Δ and %Δ.
    pub const ACCURACY_MEAN: f64 = 0.05;
    /// Percent-increase annotations, in percentage points.
    pub const INCREASE_PP: f64 = 1.0;
    /// Total absolute IIAS per column.
    pub const IIAS_TOTAL: f64 = 0.001;
    /// CNN occurrence means are reproduced exactly.
    pub const OCCURRENCE_EXACT: f64 = 1e-9;
    /// ViT occurrence means are printed rounded (48, 59).
    pub const OCCURRENCE_VIT: f64 = 1.0;
    pub const SKEWNESS_MEAN: f64 = 0.01;
    pub const SKEWNESS_INCREASE_PP: f64 = 0.5;
}

/// Published aggregate values.
pub mod published {
    pub const DELTA_MEAN: [f64; 2] = [0.11, 0.17];
    pub const PERCENT_DELTA_MEAN: [f64; 2] = [16.88, 37.80];
    pub const DELTA_INCREASE: f64 = 54.0;
    pub const PERCENT_DELTA_INCREASE: f64 = 123.0;
    /// Column order: masked biased CNN, ViT; masked unbiased CNN, ViT;
    /// unmasked biased CNN, ViT; unmasked unbiased CNN, ViT.
    pub const IIAS_TOTALS: [f64; 8] = [0.599, 0.74, 0.79, 0.44, 0.46, 0.97, 0.21, 0.58];
    /// (increase, higher family is ViT) per (condition, variant) pair.
    pub const IIAS_INCREASES: [(f64, bool); 4] = [(23.0, true), (80.0, false), (111.0, true), (176.0, true)];
    /// [CNN man, CNN woman, ViT man, ViT woman]
    pub const OCCURRENCE_MEANS: [f64; 4] = [46.5, 52.5, 48.0, 59.0];
    pub const OCCURRENCE_INCREASES: [f64; 2] = [3.3, 12.53];
    /// [CNN man, CNN woman, ViT man, ViT woman]
    pub const SKEWNESS_MEANS: [f64; 4] = [2.16, 3.7, 2.63, 4.0];
    pub const SKEWNESS_INCREASES: [f64; 2] = [21.7, 8.0];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub checks: Vec<Check>,
    pub tables: Vec<ReportTable>,
}

impl ReplicationSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn table_checks<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a Check> + 'a {
        self.checks.iter().filter(move |c| c.table == table)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["table", "cell", "computed", "expected", "tolerance", "status", "note"])
            .expect("in-memory write");
        for c in &self.checks {
            w.write_record([
                c.table.to_string(),
                c.cell.clone(),
                c.computed.to_string(),
                c.expected.to_string(),
                c.tolerance.to_string(),
                c.status.to_string(),
                c.note.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let _ = writeln!(out, "{}", t.render(Format::Markdown));
        }
        let _ = writeln!(out, "### Replication checks\n");
        for c in &self.checks {
            let _ = write!(
                out,
                "[{}] {} {}: computed {:.4}, published {} (±{})",
                c.status, c.table, c.cell, c.computed, c.expected, c.tolerance
            );
            if !c.note.is_empty() {
                let _ = write!(out, " -- {}", c.note);
            }
            out.push('\n');
        }
        let failed = self.failures().count();
        let gated = self.checks.iter().filter(|c| c.status != CheckStatus::Info).count();
        let _ = writeln!(out, "\n{} of {gated} gated checks pass", gated - failed);
        out
    }
}

fn cell_score(table: &ReportTable, row: usize, column: usize) -> f64 {
    table.summary_rows[row][column].score().unwrap_or(f64::NAN)
}

fn annotation_percent(table: &ReportTable, row: usize, column: usize) -> Option<&Annotation> {
    table.annotation_at(row, column)
}

/// Recomputes every aggregate cell of the four result tables from the
/// per-model values and compares each with the published value.
pub fn replicate_published(fixture: &PublishedFixture) -> Result<ReplicationSummary, ReportError> {
    use published as p;
    use tolerance as tol;
    let mut checks = Vec::new();

    // accuracy difference
    let accuracy_t = accuracy_table(&fixture.accuracy)?;
    for (row, family) in Family::ALL.iter().enumerate() {
        checks.push(Check::gated(
            "accuracy",
            format!("{} mean Δ", family.display_name()),
            cell_score(&accuracy_t, row, 2),
            p::DELTA_MEAN[row],
            tol::ACCURACY_MEAN,
        ));
        checks.push(Check::gated(
            "accuracy",
            format!("{} mean %Δ", family.display_name()),
            cell_score(&accuracy_t, row, 3),
            p::PERCENT_DELTA_MEAN[row],
            tol::ACCURACY_MEAN,
        ));
    }
    for (column, name, expected) in [(2, "Δ", p::DELTA_INCREASE), (3, "%Δ", p::PERCENT_DELTA_INCREASE)] {
        let got = annotation_percent(&accuracy_t, 1, column).map_or(f64::NAN, |a| a.percent);
        checks.push(Check::gated(
            "accuracy",
            format!("ViT {name} increase over CNN"),
            got,
            expected,
            tol::INCREASE_PP,
        ));
    }

    // association scores
    let iias_t = iias_table(&fixture.iias)?;
    for (i, expected) in p::IIAS_TOTALS.iter().enumerate() {
        checks.push(Check::gated(
            "iias",
            format!("total |IIAS| {}", iias_t.headers[i + 1]),
            cell_score(&iias_t, 0, i + 1),
            *expected,
            tol::IIAS_TOTAL,
        ));
    }
    for (pair, (expected, vit_higher)) in p::IIAS_INCREASES.iter().enumerate() {
        let (cnn_col, vit_col) = (2 * pair + 1, 2 * pair + 2);
        let (higher_col, lower) = if *vit_higher {
            (vit_col, "CNN")
        } else {
            (cnn_col, "ViT")
        };
        let got = annotation_percent(&iias_t, 0, higher_col).map_or(f64::NAN, |a| a.percent);
        checks.push(Check::gated(
            "iias",
            format!("{} increase over {lower}", iias_t.headers[higher_col]),
            got,
            *expected,
            tol::INCREASE_PP,
        ));
    }

    // zero-shot occurrence
    let occurrence_t = occurrence_table(&fixture.occurrence)?;
    let occ = [
        cell_score(&occurrence_t, 0, 2),
        cell_score(&occurrence_t, 0, 4),
        cell_score(&occurrence_t, 1, 2),
        cell_score(&occurrence_t, 1, 4),
    ];
    let names = ["CNN man", "CNN woman", "ViT man", "ViT woman"];
    for i in 0..4 {
        let tolerance = if i < 2 {
            tol::OCCURRENCE_EXACT
        } else {
            tol::OCCURRENCE_VIT
        };
        let mut check = Check::gated(
            "occurrence",
            format!("{} mean occurrence", names[i]),
            occ[i],
            p::OCCURRENCE_MEANS[i],
            tolerance,
        );
        if i >= 2 {
            check = check.with_note("published mean is rounded to an integer");
        }
        checks.push(check);
    }
    for (g, (cnn, vit)) in [(occ[0], occ[2]), (occ[1], occ[3])].into_iter().enumerate() {
        let gender = if g == 0 { "man" } else { "woman" };
        checks.push(Check::info(
            "occurrence",
            format!("ViT {gender} occurrence increase over CNN"),
            percent_increase(vit, cnn).map_err(ReportError::from)?,
            p::OCCURRENCE_INCREASES[g],
            tol::INCREASE_PP,
            "published increase derives from the rounded ViT mean",
        ));
        checks.push(Check::info(
            "occurrence",
            format!("ViT {gender} occurrence increase from published means"),
            percent_increase(p::OCCURRENCE_MEANS[2 + g], p::OCCURRENCE_MEANS[g]).map_err(ReportError::from)?,
            p::OCCURRENCE_INCREASES[g],
            tol::INCREASE_PP,
            "consistency of the published annotation with the published means",
        ));
    }

    // zero-shot skewness
    let skewness_t = skewness_table(&fixture.skewness)?;
    let skew = [
        cell_score(&skewness_t, 0, 2),
        cell_score(&skewness_t, 0, 3),
        cell_score(&skewness_t, 1, 2),
        cell_score(&skewness_t, 1, 3),
    ];
    for i in 0..4 {
        checks.push(Check::gated(
            "skewness",
            format!("{} mean skewness", names[i]),
            skew[i],
            p::SKEWNESS_MEANS[i],
            tol::SKEWNESS_MEAN,
        ));
    }
    for (g, column) in [2usize, 3].into_iter().enumerate() {
        let gender = if g == 0 { "man" } else { "woman" };
        let got = annotation_percent(&skewness_t, 1, column).map_or(f64::NAN, |a| a.percent);
        checks.push(Check::gated(
            "skewness",
            format!("ViT {gender} skewness increase over CNN"),
            got,
            p::SKEWNESS_INCREASES[g],
            tol::SKEWNESS_INCREASE_PP,
        ));
    }

    Ok(ReplicationSummary {
        checks,
        tables: vec![accuracy_t, iias_t, occurrence_t, skewness_t],
    })
}

/// Shorthand for [`metrics::model_deltas`] followed by [`accuracy_table`].
pub fn accuracy_table_from_runs<T: Scalar>(runs: &[crate::domain::AccuracyRun<T>]) -> Result<ReportTable, MetricError> {
    let deltas = metrics::model_deltas(runs)?;
    let rows: Vec<ModelDeltaRow> = deltas.iter().map(ModelDeltaRow::from).collect();
    accuracy_table(&rows)
}
