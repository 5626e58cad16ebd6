mod common;

use face_aging::data::toy::{self, generate_toy_corpus, materialize, measure_disc};
use face_aging::data::{denormalize_age, load_manifest, normalize_age, DatasetStats};
use face_aging::image::ImageTensor;

#[test]
fn radius_fit_recovers_construction_slope() {
    for res in [32, 64] {
        let corpus = generate_toy_corpus(3, 4, 16, res).unwrap();
        let xs: Vec<f64> = corpus.iter().map(|s| s.age).collect();
        let ys: Vec<f64> = corpus.iter().map(|s| measure_disc(&s.image).radius).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let expected = (toy::RADIUS_MAX - toy::RADIUS_MIN) / (toy::AGE_MAX - toy::AGE_MIN);
        assert!((slope / expected - 1.0).abs() < 0.05, "resolution {res}: slope {slope} vs {expected}");
    }
}

#[test]
fn normalisation_round_trip_and_monotone() {
    let stats = DatasetStats::morph(1, 1);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=610 {
        let age = 16.0 + i as f64 * 0.1;
        let n = normalize_age(age, &stats).unwrap();
        assert!(n > prev);
        prev = n;
        assert!((denormalize_age(n, &stats) - age).abs() < 1e-9);
    }
}

#[test]
fn materialised_corpus_loads_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_toy_corpus(7, 3, 5, 32).unwrap();
    let manifest = materialize(&corpus, dir.path()).unwrap();
    let (rows, stats) = load_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 15);
    assert_eq!(stats.identity_count, 3);
    assert_eq!((stats.age_min, stats.age_max), (16.0, 77.0));
    let loaded = rows[4].load(32).unwrap();
    assert_eq!(loaded.identity, corpus[4].identity);
    let quantised = ImageTensor::from_rgb8(&corpus[4].image.to_rgb8()).unwrap();
    assert_eq!(loaded.image, quantised);
}
