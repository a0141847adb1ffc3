use std::path::PathBuf;

use biaslens::domain::validate_manifest;
use biaslens::ingest::{
    self, read_accuracy_runs, read_embeddings, read_predictions, write_accuracy_runs, write_embeddings,
    write_predictions,
};
use biaslens::{
    AccuracyRun, EmbeddingRecord, Family, GenderTag, IngestErrorKind, LabelVocabulary, PredictionLog, PredictionRecord,
    Variant, Violation,
};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Cnn), Just(Family::Vit)]
}

fn gender() -> impl Strategy<Value = GenderTag> {
    prop_oneof![Just(GenderTag::Man), Just(GenderTag::Woman)]
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Biased), Just(Variant::Unbiased)]
}

fn records(dim: usize) -> impl Strategy<Value = Vec<EmbeddingRecord<f64>>> {
    prop::collection::vec(
        (
            prop::collection::vec(
                prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), -1e3f64..1e3],
                dim,
            )
            .prop_filter("nonzero", |v| v.iter().any(|&x| x != 0.0)),
            gender(),
            "[a-z_]{1,8}",
            any::<bool>(),
            "[A-Za-z0-9 ,\"/-]{1,10}",
            family(),
            variant(),
            1u32..10,
        ),
        1..20,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(
                |(i, (vec, gender, class, masked, model, family, variant, iteration))| EmbeddingRecord {
                    id: format!("img-{i}"),
                    vec,
                    gender,
                    class,
                    masked,
                    model,
                    family,
                    variant,
                    iteration,
                },
            )
            .collect()
    })
}

proptest! {
    #[test]
    fn embeddings_round_trip(recs in (1usize..6).prop_flat_map(records)) {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &recs).unwrap();
        let back: Vec<EmbeddingRecord<f64>> = read_embeddings(buf.as_slice()).unwrap();
        prop_assert_eq!(back, recs);
    }

    #[test]
    fn f32_embeddings_round_trip(recs in (1usize..6).prop_flat_map(records)) {
        let narrow: Vec<EmbeddingRecord<f32>> = recs
            .into_iter()
            .map(|r| EmbeddingRecord {
                vec: r.vec.iter().map(|&x| (x as f32).clamp(-1e30, 1e30)).collect(),
                id: r.id,
                gender: r.gender,
                class: r.class,
                masked: r.masked,
                model: r.model,
                family: r.family,
                variant: r.variant,
                iteration: r.iteration,
            })
            .filter(|r| r.vec.iter().any(|&x| x != 0.0))
            .collect();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &narrow).unwrap();
        let back: Vec<EmbeddingRecord<f32>> = read_embeddings(buf.as_slice()).unwrap();
        prop_assert_eq!(back, narrow);
    }

    #[test]
    fn accuracy_runs_round_trip(
        rows in prop::collection::vec(("[a-zA-Z0-9_-]{1,8}", family(), 0.0f64..=1.0), 1..6)
    ) {
        let mut runs = Vec::new();
        for (i, (model, family, acc)) in rows.into_iter().enumerate() {
            for (j, v) in Variant::ALL.into_iter().enumerate() {
                runs.push(AccuracyRun {
                    model: format!("{model}{i}"),
                    family,
                    variant: v,
                    iteration: 1 + j as u32,
                    accuracy: acc,
                });
            }
        }
        let mut buf = Vec::new();
        write_accuracy_runs(&mut buf, &runs).unwrap();
        prop_assert_eq!(read_accuracy_runs::<f64, _>(buf.as_slice()).unwrap(), runs);
    }

    #[test]
    fn predictions_round_trip(
        rows in prop::collection::vec((gender(), 0usize..100, "[a-zA-Z/0-9-]{1,6}", family()), 0..40)
    ) {
        let vocab = LabelVocabulary::occupations();
        let mut families = std::collections::BTreeMap::new();
        let records: Vec<PredictionRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (gender, label, encoder, family))| PredictionRecord {
                image_id: format!("p{i}"),
                gender,
                label: vocab.labels()[label].clone(),
                family: *families.entry(encoder.clone()).or_insert(family),
                encoder,
            })
            .collect();
        let log = PredictionLog { records };
        let mut buf = Vec::new();
        write_predictions(&mut buf, &log).unwrap();
        prop_assert_eq!(read_predictions(buf.as_slice(), &vocab).unwrap(), log);
    }

    #[test]
    fn validation_ignores_record_order(seed in any::<u64>(), drop in 0usize..800) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let manifest = ingest::load_manifest(fixture("synthetic/manifest.toml")).unwrap();
        let mut recs: Vec<EmbeddingRecord<f64>> = ingest::load_embeddings(fixture("synthetic/pool.embj")).unwrap();
        recs.remove(drop);
        let before = validate_manifest(&manifest, &recs);
        recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(validate_manifest(&manifest, &recs), before);
    }
}

#[test]
fn bundled_fixtures_load_clean() {
    let manifest = ingest::load_manifest(fixture("synthetic/manifest.toml")).unwrap();
    let pool: Vec<EmbeddingRecord<f64>> = ingest::load_embeddings(fixture("synthetic/pool.embj")).unwrap();
    assert_eq!(pool.len(), 800);
    assert!(validate_manifest(&manifest, &pool).is_valid());
    let runs = ingest::load_accuracy_runs::<f64>(fixture("synthetic/accuracy_runs.csv")).unwrap();
    assert_eq!(runs.len(), 80);
    let vocab = ingest::load_vocabulary(fixture("occupations.txt")).unwrap();
    assert_eq!(vocab, LabelVocabulary::occupations());
    assert_eq!(vocab.len(), 100);
    let log = ingest::load_predictions(fixture("synthetic/predictions.csv"), &vocab).unwrap();
    assert_eq!(log.encoders().len(), 4);
}

#[test]
fn manifest_round_trip() {
    let manifest = ingest::load_manifest(fixture("synthetic/manifest.toml")).unwrap();
    let text = ingest::render_manifest(&manifest);
    assert_eq!(ingest::parse_manifest(&text).unwrap(), manifest);
}

#[test]
fn errors_carry_line_numbers() {
    let header = r#"{"format":"biaslens-emb","version":1,"dim":2,"count":2}"#;
    let rec = |id: &str, v: &str| {
        format!(
            r#"{{"id":"{id}","vec":{v},"gender":"man","class":"ceo","masked":true,"model":"m","family":"cnn","variant":"biased","iteration":1}}"#
        )
    };
    let cases = [
        (
            format!("{header}\n{}\n{}\n", rec("a", "[1,0]"), rec("b", "[1,0,0]")),
            IngestErrorKind::DimensionMismatch,
            3,
        ),
        (
            format!("{header}\n{}\n{}\n", rec("a", "[0,0]"), rec("b", "[1,0]")),
            IngestErrorKind::ZeroVector,
            2,
        ),
        (
            format!("{header}\n{}\n\n{}\n", rec("a", "[1,0]"), rec("a", "[0,1]")),
            IngestErrorKind::DuplicateId,
            4,
        ),
        (
            format!("{header}\n{}\nnot json\n", rec("a", "[1,0]")),
            IngestErrorKind::Parse,
            3,
        ),
    ];
    for (text, kind, line) in cases {
        let err = read_embeddings::<f64, _>(text.as_bytes()).unwrap_err();
        assert_eq!((err.kind, err.line), (kind, Some(line)), "{err}");
        assert!(err.to_string().starts_with(&format!("line {line}:")));
    }

    let csv = "model,family,variant,iteration,accuracy\nm,cnn,biased,1,0.5\nm,cnn,unbiased,1,1.5\n";
    let err = read_accuracy_runs::<f64, _>(csv.as_bytes()).unwrap_err();
    assert_eq!((err.kind, err.line), (IngestErrorKind::Parse, Some(3)));

    let preds = "image_id,gender,label,encoder,family\n1,man,nurse,rn,cnn\n2,woman,astronaut,rn,cnn\n";
    let err = read_predictions(preds.as_bytes(), &LabelVocabulary::occupations()).unwrap_err();
    assert_eq!((err.kind, err.line), (IngestErrorKind::VocabularyViolation, Some(3)));
}

#[test]
fn imbalanced_pool_is_reported() {
    let manifest = ingest::load_manifest(fixture("synthetic/manifest.toml")).unwrap();
    let mut pool: Vec<EmbeddingRecord<f64>> = ingest::load_embeddings(fixture("synthetic/pool.embj")).unwrap();
    let first_woman = pool
        .iter()
        .position(|r| r.class == "attribute" && r.gender == GenderTag::Woman)
        .unwrap();
    pool.remove(first_woman);
    let report = validate_manifest(&manifest, &pool);
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::AttributeImbalance { men: 50, women: 49, .. })));
    assert!(report
        .to_string()
        .ends_with(&format!("{} violations", report.violations.len())));
}
