//! End-to-end checks through the public API only.

use molkan::autodiff::{grad_check, ParamStore, Tape, Tensor};
use molkan::kan::{KanConfig, KanFamily, KanLayer};
use molkan::molgraph::{batch_graphs, featurize, murcko_scaffold, parse_smiles};
use molkan::mpnn::{apply_checkpoint, load_checkpoint, save_checkpoint, GnnConfig, GnnModel, HeadKind, Host, UpdateKind};
use molkan::training::{
    load_csv_dataset, predict, scaffold_split, train_loop, CsvOptions, SplitFractions, TaskKind, TrainConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CSV: &str = "smiles,y
CCO,0.1
CCN,0.3
CCCO,0.2
c1ccccc1O,1.5
c1ccccc1N,1.4
c1ccccc1CC,1.9
C1CCCCC1O,1.1
C1CCCCC1N,1.0
CC(=O)O,-0.4
CC(=O)N,-0.5
c1ccncc1,0.9
c1ccncc1C,1.2
OCC(O)CO,-1.1
CCOCC,0.4
C1CC1,0.7
C1CC1C,0.8
";

#[test]
fn csv_to_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    std::fs::write(&csv, CSV).unwrap();
    let (data, stats) = load_csv_dataset(&csv, TaskKind::Regression, &CsvOptions::default()).unwrap();
    assert_eq!((stats.molecules, stats.skipped), (16, 0));

    let split = scaffold_split(&data.scaffold_keys(), SplitFractions::default(), 0).unwrap();
    assert!(split.indices.is_partition(data.len()));

    let cfg = GnnConfig {
        hidden: 16,
        n_tasks: 1,
        ..GnnConfig::default()
    };
    let mut store = ParamStore::new();
    let model = GnnModel::init(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let train = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let report = train_loop(&model, &mut store, &data, &split.indices, &train).unwrap();
    assert_eq!(report.train_loss.len(), 3);
    assert!(report.test_metric.is_some_and(f64::is_finite));

    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&store, &ckpt).unwrap();
    let mut fresh = ParamStore::new();
    let reloaded = GnnModel::init(&mut fresh, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    apply_checkpoint(&mut fresh, &load_checkpoint(&ckpt).unwrap()).unwrap();

    let all: Vec<usize> = (0..data.len()).collect();
    let a = predict(&model, &store, &data, &all).unwrap();
    let b = predict(&reloaded, &fresh, &data, &all).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn checkpoint_rejects_other_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let small = GnnConfig {
        hidden: 8,
        ..GnnConfig::default()
    };
    GnnModel::init(&mut store, &small, &mut rng).unwrap();
    save_checkpoint(&store, &ckpt).unwrap();

    let mut other = ParamStore::new();
    let wide = GnnConfig { hidden: 12, ..small };
    GnnModel::init(&mut other, &wide, &mut rng).unwrap();
    assert!(apply_checkpoint(&mut other, &load_checkpoint(&ckpt).unwrap()).is_err());
}

#[test]
fn every_model_combination_has_correct_gradients() {
    let graphs: Vec<_> = ["CC(=O)N", "c1ccccc1O"].iter().map(|s| parse_smiles(s).unwrap()).collect();
    let feats: Vec<_> = graphs.iter().map(featurize).collect();
    let items: Vec<_> = graphs.iter().zip(&feats).collect();
    let batch = batch_graphs(&items).unwrap();
    for &host in Host::ALL {
        for &update in UpdateKind::ALL {
            for &head in HeadKind::ALL {
                let cfg = GnnConfig {
                    host,
                    update,
                    head,
                    hidden: 4,
                    depth: 1,
                    gat_heads: 2,
                    kan: KanConfig {
                        num_rbfs: 3,
                        grid_size: 3,
                        ..KanConfig::default()
                    },
                    ..GnnConfig::default()
                };
                let mut store = ParamStore::new();
                let model = GnnModel::init(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                for p in store.iter_mut() {
                    if p.name.ends_with(".bias") {
                        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
                            *v += 0.05 * (i as f64 + 1.0);
                        }
                    }
                }
                let ids: Vec<_> = store.ids().collect();
                let report = grad_check(&mut store, &ids, 1e-5, 1e-4, |tape, store| {
                    let y = model.forward(tape, store, &batch)?;
                    let y2 = tape.mul(y, y)?;
                    Ok(tape.sum(y2))
                })
                .unwrap();
                assert!(report.passed, "{host}/{update}/{head}: {report:?}");
            }
        }
    }
}

#[test]
fn scaffold_of_substituted_rings() {
    let s = |smi: &str| murcko_scaffold(&parse_smiles(smi).unwrap());
    assert_eq!(s("c1ccccc1O"), s("c1ccccc1CC"));
    assert_ne!(s("c1ccccc1O"), s("C1CCCCC1O"));
    assert_eq!(s("CCO"), s("OCC(O)CO"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Rows of a KAN layer's output depend only on the matching input row.
    #[test]
    fn kan_layers_act_row_wise(
        rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 1..6),
        family_index in 0usize..3,
    ) {
        let family = KanFamily::ALL[family_index];
        let (store, layer) = KanLayer::standalone(family, 3, 2, &KanConfig::default(), 7).unwrap();
        let run = |data: Vec<f64>, n: usize| {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(vec![n, 3], data).unwrap());
            let y = layer.forward(&mut tape, &store, x).unwrap();
            tape.value(y).data().to_vec()
        };
        let together = run(rows.concat(), rows.len());
        for (i, row) in rows.iter().enumerate() {
            let alone = run(row.clone(), 1);
            prop_assert!(alone.iter().zip(&together[2 * i..2 * i + 2]).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
