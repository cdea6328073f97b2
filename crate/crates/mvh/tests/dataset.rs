use mvh::dataset::{read_dataset, write_dataset, Manifest};
use mvh::pgm;
use mvh_core::corpus::generate_dataset;
use mvh_core::harness::{build_artifacts, RunConfig};

fn small() -> RunConfig {
    RunConfig {
        seed: 11,
        n_samples: 30,
        concept_threshold: 3,
        min_count: 2,
        ..RunConfig::default()
    }
}

#[test]
fn written_dataset_reads_back_identically() {
    let cfg = small();
    let samples = generate_dataset(cfg.seed, cfg.n_samples, &cfg.synth).unwrap();
    let prepared = build_artifacts(samples, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &prepared, &Manifest::from_config(&cfg, prepared.samples.len())).unwrap();

    // A different run seed must not change the stored split.
    let later = RunConfig { seed: 999, ..cfg.clone() };
    let (back, manifest) = read_dataset(dir.path(), &later).unwrap();
    assert_eq!(manifest.seed, cfg.seed);
    assert_eq!(back.train, prepared.train);
    assert_eq!(back.test, prepared.test);
    assert_eq!(back.vocab, prepared.vocab);
    assert_eq!(back.concepts, prepared.concepts);
    assert_eq!(back.samples.len(), prepared.samples.len());
    for (a, b) in back.samples.iter().zip(&prepared.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.frontal, b.frontal, "{}", a.id);
        assert_eq!(a.lateral, b.lateral, "{}", a.id);
        assert_eq!(a.obs_labels, b.obs_labels);
        assert_eq!(a.concept_labels, b.concept_labels);
        assert_eq!(a.report, b.report);
        assert!(a.plants.is_empty());
    }
    let img = std::fs::read_to_string(dir.path().join("images").join(format!("{}_f.pgm", prepared.samples[0].id))).unwrap();
    assert!(img.starts_with("P2\n# seed 11\n"));
}

#[test]
fn mismatched_image_size_is_a_validation_error() {
    let cfg = small();
    let prepared = build_artifacts(generate_dataset(cfg.seed, cfg.n_samples, &cfg.synth).unwrap(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &prepared, &Manifest::from_config(&cfg, prepared.samples.len())).unwrap();
    let mut other = cfg.clone();
    other.synth.image_size = 64;
    let err = read_dataset(dir.path(), &other).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_dataset(&dir.path().join("nope"), &small()).is_err());
}

#[test]
fn pgm_round_trip_of_quantized_values() {
    let vals: Vec<f64> = (0..12).map(|i| (i * 23 % 256) as f64 / 255.0).collect();
    let text = pgm::encode(4, 3, &vals, 3).unwrap();
    let g = pgm::decode(&text).unwrap();
    assert_eq!((g.width, g.height), (4, 3));
    assert_eq!(g.values, vals);
}
