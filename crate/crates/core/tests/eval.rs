mod common;

use geopoi_core::eval::protocols::{cross_city_csv, VARIANTS};
use geopoi_core::eval::{
    cross_city, evaluate, evaluate_predictions, run_variants, EvalReport, MetricsRecord, Prediction, ReportKind,
};
use geopoi_core::eval::metrics::{parse_cdf_csv, parse_metrics_csv, parse_samples_csv};
use geopoi_core::geo::haversine_km;
use geopoi_core::ingest::{DatasetSplit, PoiInfo, Vocab};
use geopoi_core::recommender::{Ablation, TrainedModel};
use geopoi_core::synthetic::{geo_clustered, ClusterSpec, NYC, TOKYO};
use geopoi_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COORDS: [(f64, f64); 4] = [(40.7128, -74.006), (34.0522, -118.2437), (41.8781, -87.6298), (40.758, -73.9855)];

fn four_pois() -> Vocab {
    let pois = COORDS
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| PoiInfo {
            id: format!("p{i}"),
            lat,
            lon,
            category: "c".into(),
        })
        .collect();
    Vocab::new(pois, vec!["u".into()], vec!["c".into()])
}

fn pred(id: usize, target: usize, predicted: usize, absent: bool) -> Prediction {
    Prediction {
        sample_id: id,
        target,
        predicted,
        target_absent: absent,
    }
}

#[test]
fn oracle_predictor_is_perfect() {
    let preds = (0..8).map(|i| pred(i, i % 4, i % 4, i % 2 == 0)).collect();
    let r = evaluate_predictions(preds, &four_pois(), "fp").unwrap();
    assert_eq!(r.acc_at_1, 1.0);
    assert!(r.cdf.is_empty());
    assert_eq!((r.mean_error_km, r.median_error_km), (None, None));
    assert_eq!(r.target_absent_acc, Some(1.0));
    assert_eq!(r.cdf_csv(), "distance_km,cumulative_fraction\n");
}

#[test]
fn always_wrong_predictor() {
    let preds = (0..6).map(|i| pred(i, i % 4, (i + 1) % 4, false)).collect();
    let r = evaluate_predictions(preds, &four_pois(), "fp").unwrap();
    assert_eq!(r.acc_at_1, 0.0);
    assert_eq!(r.cdf.len(), 6);
    assert_eq!(r.cdf.last().unwrap().1, 1.0);
    assert_eq!(r.target_absent_acc, None);
    assert_eq!(r.target_absent_acc_over_all, 0.0);
}

#[test]
fn four_sample_case_against_haversine() {
    let preds = vec![
        pred(3, 0, 0, false),
        pred(0, 1, 2, true),
        pred(2, 3, 3, true),
        pred(1, 0, 1, false),
    ];
    let r = evaluate_predictions(preds, &four_pois(), "fp").unwrap();
    assert_eq!(r.acc_at_1, 0.5);
    let d1 = haversine_km(COORDS[2], COORDS[1]);
    let d2 = haversine_km(COORDS[1], COORDS[0]);
    let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
    assert!((r.mean_error_km.unwrap() - (d1 + d2) / 2.0).abs() < 1e-9);
    assert!((r.median_error_km.unwrap() - (d1 + d2) / 2.0).abs() < 1e-9);
    assert!((r.cdf[0].0 - lo).abs() < 1e-9 && (r.cdf[1].0 - hi).abs() < 1e-9);
    assert_eq!((r.cdf[0].1, r.cdf[1].1), (0.5, 1.0));
    assert_eq!((r.target_absent_count, r.target_absent_hits), (2, 1));
    assert_eq!(r.target_absent_acc, Some(0.5));
    assert_eq!(r.target_absent_acc_over_all, 0.25);
    let ids: Vec<usize> = r.per_sample.iter().map(|s| s.prediction.sample_id).collect();
    assert_eq!(ids, [0, 1, 2, 3]);
    assert!(r.metrics_csv().lines().any(|l| l == "acc_at_1,0.5"));
}

#[test]
fn out_of_vocabulary_predictions_and_empty_input_are_errors() {
    assert!(matches!(evaluate_predictions(vec![], &four_pois(), ""), Err(Error::Empty(_))));
    assert!(matches!(
        evaluate_predictions(vec![pred(0, 0, 9, false)], &four_pois(), ""),
        Err(Error::VocabMismatch(_))
    ));
}

fn random_report(seed: u64, n: usize) -> EvalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preds = (0..n)
        .map(|i| pred(i, rng.random_range(0..4), rng.random_range(0..4), rng.random_bool(0.5)))
        .collect();
    evaluate_predictions(preds, &four_pois(), "abc123").unwrap()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-9,
        (None, None) => true,
        _ => false,
    }
}

proptest! {
    #[test]
    fn exports_round_trip(seed in 0u64..1000, n in 1usize..40) {
        let r = random_report(seed, n);
        let m = parse_metrics_csv(&r.render(ReportKind::MetricsCsv)).unwrap();
        let expected = MetricsRecord::of(&r);
        prop_assert!((m.acc_at_1 - expected.acc_at_1).abs() < 1e-9);
        prop_assert!(close(m.mean_error_km, expected.mean_error_km));
        prop_assert!(close(m.median_error_km, expected.median_error_km));
        prop_assert!(close(m.target_absent_acc, expected.target_absent_acc));
        prop_assert_eq!((m.sample_count, m.hits), (expected.sample_count, expected.hits));
        prop_assert_eq!(&m.config_fingerprint, &expected.config_fingerprint);

        let cdf = parse_cdf_csv(&r.render(ReportKind::CdfCsv)).unwrap();
        prop_assert_eq!(cdf.len(), r.cdf.len());
        for (a, b) in cdf.iter().zip(&r.cdf) {
            prop_assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
        prop_assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        if let Some(last) = cdf.last() {
            prop_assert_eq!(last.1, 1.0);
        }
    }

    #[test]
    fn sample_dump_recount_and_partition(seed in 0u64..1000, n in 1usize..40) {
        let r = random_report(seed, n);
        let rows = parse_samples_csv(&r.samples_csv()).unwrap();
        prop_assert_eq!(rows.len(), r.sample_count);
        let hits = rows.iter().filter(|(p, _)| p.target == p.predicted).count();
        prop_assert!((hits as f64 / rows.len() as f64 - r.acc_at_1).abs() < 1e-12);
        let absent: Vec<_> = rows.iter().filter(|(p, _)| p.target_absent).collect();
        let present: Vec<_> = rows.iter().filter(|(p, _)| !p.target_absent).collect();
        prop_assert_eq!(absent.len() + present.len(), rows.len());
        prop_assert_eq!(absent.len(), r.target_absent_count);
        let absent_hits = absent.iter().filter(|(p, _)| p.target == p.predicted).count();
        prop_assert_eq!(absent_hits, r.target_absent_hits);
        for (p, e) in &rows {
            prop_assert_eq!(e.is_none(), p.target == p.predicted);
        }
    }
}

#[test]
fn export_writes_files_and_reports_unwritable_paths() {
    let r = random_report(1, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    r.export(&path, ReportKind::MetricsCsv).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), r.metrics_csv());
    assert!(r.export(&dir.path().join("missing/metrics.csv"), ReportKind::CdfCsv).is_err());
    assert!("pdf".parse::<ReportKind>().is_err());
}

fn quick_config() -> geopoi_core::Config {
    let mut c = common::tiny_config();
    for (k, v) in [("max_epochs", "2"), ("emb_epochs", "2"), ("emb_batch_size", "32"), ("batch_size", "16")] {
        c.set(k, v).unwrap();
    }
    c
}

fn small_city(center: (f64, f64), prefix: &str, seed: u64) -> DatasetSplit {
    let data = geo_clustered(&ClusterSpec {
        clusters: 3,
        per_cluster: 3,
        users: 6,
        events: 20,
        center,
        prefix: prefix.into(),
        seed,
    });
    DatasetSplit::from_checkins(&data, &quick_config().ingest)
}

#[test]
fn ablation_table_has_every_variant_and_seed() {
    let split = small_city(NYC, "g", 1);
    let table = run_variants(&split, &quick_config(), &[1, 2], &VARIANTS).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.reports.len() == 2));
    let csv = table.to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "variant,seed_1,seed_2,mean");
    let body: Vec<&str> = csv.lines().skip(1).take(4).collect();
    for (line, (name, _)) in body.iter().zip(VARIANTS) {
        assert!(line.starts_with(&format!("{name},")));
        assert_eq!(line.split(',').count(), 4);
    }
    assert!(run_variants(&split, &quick_config(), &[], &VARIANTS).is_err());
}

#[test]
fn cross_city_rows_and_degenerate_diagonal() {
    let cfg = quick_config();
    let a = small_city(NYC, "nyc", 1);
    let b = small_city(TOKYO, "tky", 2);
    let rows = cross_city(&[("nyc".into(), a.clone()), ("tky".into(), b.clone())], &cfg, Ablation::FULL).unwrap();
    let pairs: Vec<(&str, &str)> = rows.iter().map(|r| (r.train_city.as_str(), r.eval_city.as_str())).collect();
    assert_eq!(pairs, [("nyc", "nyc"), ("nyc", "tky"), ("tky", "nyc"), ("tky", "tky")]);
    assert_eq!(cross_city_csv(&rows).lines().count(), 5);

    // diagonal equals plain train-and-evaluate
    let table = geopoi_core::embedder::EmbeddingSource::embeddings(
        &geopoi_core::embedder::SkipGramSource { config: cfg.embed.clone(), seed: cfg.seed },
        &a,
    )
    .unwrap();
    let own = geopoi_core::recommender::train(&a, &cfg, Ablation::FULL, Some(&table)).unwrap();
    assert_eq!(evaluate(&own.model, &a).unwrap(), rows[0].report);
}

#[test]
fn evaluating_on_a_foreign_vocabulary_lists_ids() {
    let a = small_city(NYC, "nyc", 1);
    let b = small_city(TOKYO, "tky", 2);
    let cfg = quick_config();
    let model = TrainedModel::init(&cfg, Ablation { no_gcim: false, no_fourier: false, no_pam: true }, &a.vocab, None).unwrap();
    match evaluate(&model, &b) {
        Err(Error::VocabMismatch(msg)) => assert!(msg.contains("nyc")),
        other => panic!("expected a vocabulary mismatch, got {other:?}"),
    }
}
