use mpple::{load_dataset, write_dataset, Dataset, Schema, SubjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mixed_dataset(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let recs = (0..n)
        .map(|i| {
            let t = rng.random::<f64>() * 3.0 + 1e-3;
            let cov = vec![rng.random::<f64>() - 0.5, f64::from(rng.random_bool(0.5) as u8), 1e-300 * i as f64];
            let aux = vec![rng.random::<f64>() * 1e6];
            match i % 5 {
                0 => SubjectRecord::censored(t, cov, aux),
                1 => SubjectRecord::failure(t, None, cov, aux),
                j => SubjectRecord::failure(t, Some(j - 2), cov, aux),
            }
        })
        .collect();
    Dataset::new(recs, 3, vec!["age".into(), "sex".into(), "tiny".into()], vec!["cd4".into()], None).unwrap()
}

#[test]
fn fifty_records_round_trip_exactly() {
    let ds = mixed_dataset(50);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path, &Schema::for_dataset(&ds)).unwrap();
    assert_eq!(back.records(), ds.records());
    assert_eq!(back.covariate_names(), ds.covariate_names());
    assert_eq!(back.auxiliary_names(), ds.auxiliary_names());
    assert_eq!((back.k(), back.tau()), (ds.k(), ds.tau()));
}

#[test]
fn schema_maps_reordered_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "id,z,status,T,type\n1,0.5,1,2.0,2\n2,-1,0,1.5,\n3,0,1,0.5,NA\n").unwrap();
    let schema: Schema = serde_json::from_str(
        r#"{"time": "T", "event": "status", "cause": "type", "covariates": ["z"]}"#,
    )
    .unwrap();
    let ds = load_dataset(&path, &schema).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.records()[0].cause, Some(1));
    assert!(!ds.records()[1].event);
    assert!(ds.records()[2].is_missing_cause());
    assert_eq!(ds.k(), 2);
}
