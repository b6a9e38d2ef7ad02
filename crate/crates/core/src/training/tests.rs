use std::io::Write;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{ParamStore, Tensor};
use crate::kan::KanConfig;
use crate::mpnn::{GnnConfig, GnnModel, HeadKind, Host, UpdateKind};

/// Quadratic reference: fraction of (pos, neg) pairs ranked correctly, ties
/// counted as half.
fn auc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

#[test]
fn auc_worked_examples() {
    let perfect = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
    assert_eq!(perfect, 1.0);
    let inverted = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
    assert_eq!(inverted, 0.0);
    let tied = roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap();
    assert_eq!(tied, 0.5);
    // one of four pairs misordered
    let mixed = roc_auc(&[0.1, 0.6, 0.5, 0.9], &[false, false, true, true]).unwrap();
    assert!((mixed - 0.75).abs() < 1e-12);
    assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
}

proptest! {
    #[test]
    fn auc_matches_pairwise_oracle(
        data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)
    ) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) / 5.0).collect();
        let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
        let fast = roc_auc(&scores, &labels);
        let slow = auc_pairwise(&scores, &labels);
        match (fast, slow) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn normalization_round_trips(
        vals in prop::collection::vec(-50.0f64..50.0, 6)
    ) {
        let labels = Tensor::new(vec![3, 2], vals.clone()).unwrap();
        let mask = Tensor::full(&[3, 2], 1.0);
        let norm = Normalizer::fit(&labels, &mask, &[0, 1, 2]);
        let back = norm.denormalize(&norm.normalize(&labels));
        prop_assert!(back.max_abs_diff(&labels) < 1e-9);
    }
}

#[test]
fn macro_auc_skips_undefined_tasks() {
    let scores = Tensor::new(vec![3, 2], vec![0.1, 0.3, 0.9, 0.2, 0.5, 0.1]).unwrap();
    let labels = Tensor::new(vec![3, 2], vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
    let mask = Tensor::full(&[3, 2], 1.0);
    let report = roc_auc_tasks(&scores, &labels, &mask).unwrap();
    assert_eq!(report.per_task[1], None);
    assert_eq!(report.macro_average, report.per_task[0]);
    // masking out the only negative makes task 0 undefined too
    let mask = Tensor::new(vec![3, 2], vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut masked_labels = labels.clone();
    masked_labels.data_mut()[4] = 1.0;
    let report = roc_auc_tasks(&scores, &masked_labels, &mask).unwrap();
    assert_eq!(report.macro_average, None);
}

#[test]
fn mae_worked_example_respects_mask() {
    let pred = Tensor::new(vec![3, 1], vec![1.0, 2.0, 10.0]).unwrap();
    let target = Tensor::new(vec![3, 1], vec![2.0, 4.0, 0.0]).unwrap();
    let mask = Tensor::new(vec![3, 1], vec![1.0, 1.0, 0.0]).unwrap();
    assert_eq!(mae_tasks(&pred, &target, &mask).unwrap(), vec![Some(1.5)]);
    let none = Tensor::zeros(&[3, 1]);
    assert_eq!(mae_tasks(&pred, &target, &none).unwrap(), vec![None]);
}

#[test]
fn normalizer_clamps_zero_spread() {
    let labels = Tensor::new(vec![2, 1], vec![3.0, 3.0]).unwrap();
    let mask = Tensor::full(&[2, 1], 1.0);
    let norm = Normalizer::fit(&labels, &mask, &[0, 1]);
    assert_eq!(norm.mean, vec![3.0]);
    assert_eq!(norm.std, vec![1.0]);
}

#[test]
fn single_scaffold_falls_back_to_random() {
    let keys = vec!["same".to_string(); 20];
    let split = scaffold_split(&keys, SplitFractions::default(), 3).unwrap();
    assert!(split.fell_back);
    assert_eq!(split.indices.sizes(), [16, 2, 2]);
    assert!(split.indices.is_partition(20));
}

#[test]
fn singleton_scaffolds_split_eight_one_one() {
    let keys: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
    let split = scaffold_split(&keys, SplitFractions::default(), 0).unwrap();
    assert!(!split.fell_back);
    assert_eq!(split.indices.sizes(), [8, 1, 1]);
}

#[test]
fn large_scaffold_groups_go_to_train_first() {
    let mut keys = vec!["big".to_string(); 6];
    keys.extend(["a", "b", "c", "d"].map(String::from));
    let split = scaffold_split(&keys, SplitFractions::default(), 0).unwrap();
    assert!(!split.fell_back);
    assert_eq!(split.indices.train, vec![0, 1, 2, 3, 4, 5, 6, 7]);
    assert_eq!(split.indices.valid, vec![8]);
    assert_eq!(split.indices.test, vec![9]);
}

proptest! {
    #[test]
    fn scaffold_split_partitions_and_keeps_groups_whole(
        groups in prop::collection::vec(0usize..12, 3..120),
        seed in any::<u64>(),
    ) {
        let keys: Vec<String> = groups.iter().map(|g| format!("k{g}")).collect();
        let split = scaffold_split(&keys, SplitFractions::default(), seed).unwrap();
        prop_assert!(split.indices.is_partition(keys.len()));
        if !split.fell_back {
            let mut part_of = std::collections::HashMap::new();
            for (p, part) in [&split.indices.train, &split.indices.valid, &split.indices.test].iter().enumerate() {
                for &i in part.iter() {
                    let prev = part_of.insert(keys[i].clone(), p);
                    prop_assert!(prev.is_none() || prev == Some(p), "group {} straddles parts", keys[i]);
                }
            }
        }
        let again = scaffold_split(&keys, SplitFractions::default(), seed).unwrap();
        prop_assert_eq!(again, split);
    }
}

fn write_csv(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn csv_loader_skips_malformed_rows() {
    let f = write_csv("smiles,label\nCCO,1\nC1CC,0\nc1ccccc1,0\n");
    let (data, stats) = load_csv_dataset(f.path(), TaskKind::Classification, &CsvOptions::default()).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(stats.rows_read, 3);
    assert_eq!(stats.skipped, 1);
    assert_eq!(stats.skip_reasons.get("smiles parse error"), Some(&1));
    assert_eq!(data.task_names, vec!["label"]);
    assert_eq!(data.labels.data(), &[1.0, 0.0]);
}

#[test]
fn csv_loader_handles_missing_labels_and_columns() {
    let f = write_csv("id,smiles,t1,t2\n1,CCO,1,\n2,CCN,,\n3,CCC,0,1\n");
    let (data, stats) = load_csv_dataset(f.path(), TaskKind::Classification, &CsvOptions::default()).unwrap();
    // `id` has non-binary values so it is not a task
    assert_eq!(data.task_names, vec!["t1", "t2"]);
    assert_eq!(stats.skip_reasons.get("no labels"), Some(&1));
    assert_eq!(data.mask.data(), &[1.0, 0.0, 1.0, 1.0]);

    let opts = CsvOptions {
        smiles_column: Some("smiles".into()),
        label_columns: Some(vec!["t9".into()]),
    };
    assert!(load_csv_dataset(f.path(), TaskKind::Classification, &opts).is_err());
}

fn tiny_config(update: UpdateKind) -> GnnConfig {
    GnnConfig {
        host: Host::Gine,
        update,
        head: HeadKind::Mlp,
        hidden: 8,
        kan: KanConfig {
            num_rbfs: 3,
            grid_size: 3,
            ..KanConfig::default()
        },
        ..GnnConfig::default()
    }
}

const TOY_SMILES: &[&str] = &[
    "CCO", "CCN", "CCC", "CCCl", "c1ccccc1", "c1ccncc1", "C1CCCCC1", "CC(=O)O", "CCOC", "c1ccccc1O",
    "c1ccccc1N", "C1CCNCC1", "CC(C)C", "OCCO", "NCCN", "c1ccc2ccccc2c1", "C1CC1", "CC#N", "C=CC", "ClCCl",
];

fn toy_dataset(kind: TaskKind) -> Dataset {
    let molecules: Vec<Molecule> = TOY_SMILES.iter().map(|s| Molecule::from_smiles(s).unwrap()).collect();
    // label: contains nitrogen (classification) or heavy-atom count (regression)
    let labels: Vec<f64> = TOY_SMILES
        .iter()
        .map(|s| match kind {
            TaskKind::Classification => f64::from(u8::from(s.contains('N') || s.contains('n'))),
            TaskKind::Regression => s.chars().filter(|c| c.is_ascii_alphabetic()).count() as f64,
        })
        .collect();
    let n = labels.len();
    Dataset::new(
        kind,
        vec!["y".into()],
        molecules,
        Tensor::new(vec![n, 1], labels).unwrap(),
        Tensor::full(&[n, 1], 1.0),
    )
    .unwrap()
}

fn toy_split() -> SplitIndices {
    SplitIndices {
        train: (0..14).collect(),
        valid: vec![14, 15, 16],
        test: vec![17, 18, 19],
    }
}

fn run(kind: TaskKind, update: UpdateKind, epochs: usize, seed: u64) -> (RunReport, ParamStore) {
    let data = toy_dataset(kind);
    let mut store = ParamStore::new();
    let model = GnnModel::init(&mut store, &tiny_config(update), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: 4,
        lr: 1e-2,
        seed,
    };
    let report = train_loop(&model, &mut store, &data, &toy_split(), &cfg).unwrap();
    (report, store)
}

#[test]
fn training_reduces_loss() {
    for kind in [TaskKind::Classification, TaskKind::Regression] {
        let (report, _) = run(kind, UpdateKind::Skan, 15, 1);
        let first = report.train_loss[0];
        let last = *report.train_loss.last().unwrap();
        assert!(last < 0.7 * first, "{kind:?}: {first} -> {last}");
        assert_eq!(report.valid_metric.len(), 15);
        assert_eq!(report.epoch_seconds.len(), 15);
        assert!(report.test_metric.is_some());
    }
}

#[test]
fn selected_epoch_is_best_validation_epoch() {
    let (report, _) = run(TaskKind::Regression, UpdateKind::Mlp, 8, 2);
    let best = report
        .valid_metric
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((i, v)),
        })
        .unwrap();
    assert_eq!(report.selected_epoch, best.0);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let (a, sa) = run(TaskKind::Classification, UpdateKind::Fastkan, 3, 7);
    let (b, sb) = run(TaskKind::Classification, UpdateKind::Fastkan, 3, 7);
    assert_eq!(a.metrics_only(), b.metrics_only());
    assert_eq!(sa.snapshot(), sb.snapshot());
    let (c, _) = run(TaskKind::Classification, UpdateKind::Fastkan, 3, 8);
    assert_ne!(a.train_loss, c.train_loss);
}

#[test]
fn report_json_round_trips_exactly() {
    let (report, _) = run(TaskKind::Regression, UpdateKind::BsplineKan, 2, 3);
    let json = serde_json::to_string_pretty(&report).unwrap();
    let back: RunReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
}

#[test]
fn masked_labels_do_not_affect_training() {
    let base = toy_dataset(TaskKind::Regression);
    let mut mask = base.mask.clone();
    for i in [1, 4, 9] {
        mask.data_mut()[i] = 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut perturbed_labels = base.labels.clone();
    for i in [1, 4, 9] {
        perturbed_labels.data_mut()[i] = rng.gen_range(-1e3..1e3);
    }
    let a = Dataset::new(TaskKind::Regression, base.task_names.clone(), base.molecules.clone(), base.labels.clone(), mask.clone()).unwrap();
    let b = Dataset::new(TaskKind::Regression, base.task_names.clone(), base.molecules.clone(), perturbed_labels, mask).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-2, seed: 5 };
    let train = |data: &Dataset| {
        let mut store = ParamStore::new();
        let model = GnnModel::init(&mut store, &tiny_config(UpdateKind::Skan), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let report = train_loop(&model, &mut store, data, &toy_split(), &cfg).unwrap();
        (report.metrics_only(), store.snapshot())
    };
    assert_eq!(train(&a), train(&b));
}

#[test]
fn divergence_is_reported() {
    let data = toy_dataset(TaskKind::Regression);
    let mut store = ParamStore::new();
    let model = GnnModel::init(&mut store, &tiny_config(UpdateKind::Mlp), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let id = store.id_of("head.second.bias").or_else(|| store.ids().last()).unwrap();
    store.value_mut(id).fill(f64::NAN);
    let cfg = TrainConfig { epochs: 1, batch_size: 4, lr: 1e-2, seed: 0 };
    let err = train_loop(&model, &mut store, &data, &toy_split(), &cfg).unwrap_err();
    assert!(matches!(err, crate::Error::Diverged(_)), "{err}");
}
