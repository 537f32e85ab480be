mod common;

use std::io::Write;

use plreg::em::{self, EmConfig};
use plreg::gibbs::{self, GibbsConfig};
use plreg::io::{self, CsvOptions, IoError, ModelArtifact, ModelParams};
use plreg::model::FeatureMap;
use plreg::RngStream;

use common::{data_path, load};

#[test]
fn bundled_datasets_have_expected_shapes() {
    for (file, label, n, d, k) in [
        ("iris.csv", "class", 150, 4, 3),
        ("wine.csv", "class", 178, 13, 3),
        ("pima.csv", "type", 532, 7, 2),
        ("lenses.csv", "class", 24, 4, 3),
    ] {
        let data = load(file, label, false);
        assert_eq!((data.dataset.n(), data.dataset.d(), data.dataset.n_classes()), (n, d, k), "{file}");
    }
}

#[test]
fn missing_cell_names_its_row() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    writeln!(file, "x,y,class").unwrap();
    for r in 1..=9 {
        if r == 7 {
            writeln!(file, "1.0,,a").unwrap();
        } else {
            writeln!(file, "1.0,2.0,{}", if r % 2 == 0 { "a" } else { "b" }).unwrap();
        }
    }
    let err = io::load_csv(file.path(), "class", &CsvOptions::default()).unwrap_err();
    assert!(matches!(err, IoError::Parse { row: 7, .. }), "{err:?}");
}

#[test]
fn missing_label_column_is_reported() {
    let err = io::load_csv(&data_path("iris.csv"), "species", &CsvOptions::default()).unwrap_err();
    assert!(matches!(err, IoError::MissingColumn(_)));
}

#[test]
fn saved_models_predict_identically() {
    let data = load("iris.csv", "class", true);
    let map = FeatureMap::default_for(data.dataset.d());
    let design = map.design(&data.dataset).unwrap();
    let raw = io::read_table(&data_path("iris.csv"), Some("class")).unwrap().x;
    let dir = tempfile::tempdir().unwrap();

    let trace = em::fit_map(&design, 1.0, 1.0, &EmConfig::default(), &mut RngStream::new(3)).unwrap();
    let chain = gibbs::run_chain(
        &design,
        1.0,
        1.0,
        &GibbsConfig {
            burn_in: 20,
            samples: 30,
            ..GibbsConfig::default()
        },
        &mut RngStream::new(4),
    )
    .unwrap();
    let params = [
        ModelParams::Em {
            hyper_a: 1.0,
            hyper_b: 1.0,
            normalized: trace.weights.normalized(),
            total_mass: trace.weights.total_mass(),
            zero_pattern: trace.sparsity.clone(),
            objective: trace.objective.clone(),
        },
        ModelParams::Gibbs {
            hyper_a: 1.0,
            hyper_b: 1.0,
            chain: chain.clone(),
        },
    ];
    for (i, params) in params.into_iter().enumerate() {
        let artifact = ModelArtifact::new(
            data.covariate_names.clone(),
            data.label_names.clone(),
            data.standardization.clone(),
            Some(map.clone()),
            Some(3),
            params,
        );
        let path = dir.path().join(format!("model{i}.json"));
        artifact.save(&path).unwrap();
        let back = ModelArtifact::load(&path).unwrap();
        assert_eq!(back, artifact);
        assert_eq!(back.predict(raw.view()).unwrap(), artifact.predict(raw.view()).unwrap());
    }

    let chain_path = dir.path().join("chain.csv");
    chain.write_csv(std::fs::File::create(&chain_path).unwrap()).unwrap();
    let read = io::read_chain_csv(&chain_path).unwrap();
    assert_eq!(read.draws, chain.draws);
}
