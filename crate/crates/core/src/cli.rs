//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 for data or domain errors, 2 for usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::domain::{
    validate_manifest, AttributeSpec, DatasetManifest, Family, LabelVocabulary, ProtocolSpec, TargetSpec, Variant,
};
use crate::ingest;
use crate::metrics::iias_protocol_run;
use crate::report::{self, Format, IiasCell, PublishedFixture};
use crate::synth::{self, SynthConfig, ATTRIBUTE_CLASS, FEMALE_CODED, MALE_CODED};
use crate::zeroshot::{self, SkewnessConfig, SkewnessEstimator};

#[derive(Debug, Parser)]
#[command(name = "biaslens", version, about = "Gender-bias audit of image encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repeated image-image association scores from embeddings and a manifest.
    Iias(IiasArgs),
    /// Accuracy difference between unbiased and biased training.
    Accdiff(AccdiffArgs),
    /// Top-k occurrence and skewness of zero-shot predictions.
    Zeroshot(ZeroshotArgs),
    /// Generate a synthetic embedding pool with planted associations.
    Synth(SynthArgs),
    /// Recompute the published aggregate rows from per-model values.
    Replicate(ReplicateArgs),
    /// Check embeddings against a manifest.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Md,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Md => Format::Markdown,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "md")]
    pub format: FormatArg,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IiasArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AccdiffArgs {
    #[arg(long)]
    pub accuracy: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Population,
    Sample,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Label vocabulary, one label per line. Defaults to the bundled occupations.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = NonZeroUsize::new(zeroshot::DEFAULT_TOP_K).expect("nonzero"))]
    pub k: NonZeroUsize,
    #[arg(long, value_enum, default_value = "population")]
    pub estimator: EstimatorArg,
    /// Compute skewness over predicted labels only.
    #[arg(long)]
    pub exclude_zero_counts: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Attribute records per gender per space.
    #[arg(long, default_value_t = 10)]
    pub attributes: usize,
    /// Target records per gender and class per space.
    #[arg(long, default_value_t = 5)]
    pub targets: usize,
    /// Allow negative coordinates.
    #[arg(long)]
    pub signed: bool,
    #[arg(long, default_value_t = 90.0)]
    pub pole_angle: f64,
    #[arg(long, default_value = "synth")]
    pub model: String,
    #[arg(long, default_value = "cnn")]
    pub family: Family,
    #[arg(long, default_value = "biased")]
    pub variant: Variant,
    /// Emit four spaces (cnn and vit, biased at `beta`, unbiased at `beta/2`).
    #[arg(long)]
    pub grid: bool,
    /// Write a manifest sized for this many protocol iterations.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub iterations: u32,
    /// Embedding file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// Directory holding the per-model fixture CSVs. Defaults to the bundled copy.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_iias(a: &IiasArgs) -> Result<i32, Failure> {
    let records = ingest::load_embeddings::<f64>(&a.embeddings)?;
    let manifest = ingest::load_manifest(&a.manifest)?;
    let report = validate_manifest(&manifest, &records);
    if !report.is_valid() {
        return Err(Failure {
            code: 1,
            message: report.to_string(),
        });
    }
    let results = iias_protocol_run(&records, &manifest, a.seed)?;
    let cells: Vec<IiasCell> = results.iter().map(IiasCell::from).collect();
    let table = report::iias_table(&cells)?;
    emit(&table.render(a.output.format.into()), a.output.out.as_deref())?;
    Ok(0)
}

fn cmd_accdiff(a: &AccdiffArgs) -> Result<i32, Failure> {
    let runs = ingest::load_accuracy_runs::<f64>(&a.accuracy)?;
    let table = report::accuracy_table_from_runs(&runs)?;
    emit(&table.render(a.output.format.into()), a.output.out.as_deref())?;
    Ok(0)
}

fn cmd_zeroshot(a: &ZeroshotArgs) -> Result<i32, Failure> {
    let vocab = match &a.vocab {
        Some(path) => ingest::load_vocabulary(path)?,
        None => LabelVocabulary::occupations(),
    };
    let log = ingest::load_predictions(&a.predictions, &vocab)?;
    let config = SkewnessConfig {
        estimator: match a.estimator {
            EstimatorArg::Population => SkewnessEstimator::Population,
            EstimatorArg::Sample => SkewnessEstimator::SampleAdjusted,
        },
        include_zero_counts: !a.exclude_zero_counts,
    };
    let summaries = zeroshot::analyze::<f64>(&log, &vocab, a.k, config)?;
    let (occurrence, skewness) = report::zeroshot_tables(&summaries)?;
    let format: Format = a.output.format.into();
    let text = match format {
        Format::Markdown => format!("{}\n{}", occurrence.render(format), skewness.render(format)),
        Format::Csv => {
            let skew = skewness.render(format);
            let body = skew.split_once('\n').map_or("", |(_, rest)| rest);
            format!("{}{}", occurrence.render(format), body)
        }
    };
    emit(&text, a.output.out.as_deref())?;
    Ok(0)
}

fn synth_configs(a: &SynthArgs) -> Vec<SynthConfig> {
    let base = SynthConfig {
        dim: a.dim,
        beta: a.beta,
        sigma: a.sigma,
        attributes_per_gender: a.attributes,
        targets_per_gender: a.targets,
        seed: a.seed,
        non_negative: !a.signed,
        pole_angle_degrees: a.pole_angle,
        model: a.model.clone(),
        family: a.family,
        variant: a.variant,
        iteration: 1,
    };
    if !a.grid {
        return vec![base];
    }
    let mut out = Vec::new();
    for family in Family::ALL {
        for variant in Variant::ALL {
            let model = format!("{}-{}", a.model, family);
            let seed = crate::metrics::derive_seed(a.seed, &[&model, variant.as_str()]);
            out.push(SynthConfig {
                beta: match variant {
                    Variant::Biased => a.beta,
                    Variant::Unbiased => a.beta / 2.0,
                },
                seed,
                model,
                family,
                variant,
                ..base.clone()
            });
        }
    }
    out
}

fn per_iteration(total: usize, iterations: u32, what: &str) -> Result<usize, Failure> {
    let size = total / iterations as usize;
    if size == 0 {
        return Err(Failure {
            code: 2,
            message: format!("{total} {what} records per gender cannot cover {iterations} iterations"),
        });
    }
    Ok(size)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32, Failure> {
    if a.iterations == 0 {
        return Err(Failure {
            code: 2,
            message: "--iterations must be at least 1".to_string(),
        });
    }
    let configs = synth_configs(a);
    let mut records = Vec::new();
    let mut summary = String::new();
    for config in &configs {
        let pool = synth::generate_pool::<f64>(config)?;
        for class in [MALE_CODED, FEMALE_CODED] {
            let measured = synth::measured_iias(&pool, class)?;
            let _ = writeln!(
                summary,
                "{}/{}/{} {class}: measured {measured:.6}",
                config.model, config.family, config.variant
            );
        }
        let expected = synth::expected_iias(config)?;
        let _ = writeln!(
            summary,
            "{}/{}/{} expected {MALE_CODED} {:.6}{}",
            config.model,
            config.family,
            config.variant,
            expected.value,
            expected.std_error.map_or(String::new(), |se| format!(" (se {se:.6})"))
        );
        records.extend(pool);
    }

    if let Some(path) = &a.manifest_out {
        let attributes = per_iteration(a.attributes, a.iterations, ATTRIBUTE_CLASS)?;
        let targets = per_iteration(a.targets, a.iterations, "target")?;
        let manifest = DatasetManifest {
            attributes: AttributeSpec {
                class: ATTRIBUTE_CLASS.to_string(),
                men: attributes,
                women: attributes,
            },
            targets: [MALE_CODED, FEMALE_CODED]
                .into_iter()
                .map(|c| {
                    (
                        c.to_string(),
                        TargetSpec {
                            men: targets,
                            women: targets,
                        },
                    )
                })
                .collect(),
            protocol: ProtocolSpec {
                iterations: a.iterations,
                masked: false,
            },
        };
        emit(&ingest::render_manifest(&manifest), Some(path))?;
    }

    match &a.out {
        Some(path) => {
            ingest::save_embeddings(path, &records)?;
            print!("{summary}");
        }
        None => {
            let stdout = std::io::stdout();
            ingest::write_embeddings(stdout.lock(), &records)?;
        }
    }
    Ok(0)
}

fn cmd_replicate(a: &ReplicateArgs) -> Result<i32, Failure> {
    let fixture = match &a.fixtures {
        Some(dir) => PublishedFixture::load_dir(dir)?,
        None => PublishedFixture::bundled(),
    };
    let summary = report::replicate_published(&fixture)?;
    let text = match Format::from(a.output.format) {
        Format::Markdown => summary.to_text(),
        Format::Csv => summary.to_csv(),
    };
    emit(&text, a.output.out.as_deref())?;
    for c in summary.failures() {
        eprintln!(
            "replication mismatch: {} {}: computed {}, published {} (±{})",
            c.table, c.cell, c.computed, c.expected, c.tolerance
        );
    }
    Ok(if summary.all_pass() { 0 } else { 1 })
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32, Failure> {
    let records = ingest::load_embeddings::<f64>(&a.embeddings)?;
    let manifest = ingest::load_manifest(&a.manifest)?;
    let report = validate_manifest(&manifest, &records);
    println!("{report}");
    Ok(if report.is_valid() { 0 } else { 1 })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Iias(a) => cmd_iias(a),
        Command::Accdiff(a) => cmd_accdiff(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
