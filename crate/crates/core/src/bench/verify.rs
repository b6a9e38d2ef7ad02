use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::molgen::random_smiles;
use crate::autodiff::opcheck::{check_op, CHECKED_OPS};
use crate::autodiff::{grad_check_on, GradCheckReport, OpKind, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kan::{enumerate_parameters, BSplineBasis, KanConfig, KanFamily, KanLayer};
use crate::molgraph::{batch_graphs, featurize, murcko_scaffold, parse_smiles, MolecularGraph};
use crate::mpnn::{GnnConfig, GnnModel, HeadKind, Host, UpdateKind};
use super::split_stats::scaffold_keys_from_csv;
use crate::training::{roc_auc, scaffold_split, SplitFractions};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const INVARIANCE_TOL: f64 = 1e-10;
pub const AUC_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Corrupts the backward rule of one op kind (negative control).
    pub fault: Option<OpKind>,
    pub op_trials: usize,
    pub invariance_molecules: usize,
    pub auc_instances: usize,
    /// CSVs (with a `smiles` column) whose scaffold splits are checked in
    /// addition to a generated corpus.
    pub split_datasets: Vec<PathBuf>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            fault: None,
            op_trials: 3,
            invariance_molecules: 100,
            auc_instances: 200,
            split_datasets: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Checks whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
    }

    fn run(&mut self, name: impl Into<String>, check: impl FnOnce() -> Result<(bool, String)>) {
        let name = name.into();
        let started = Instant::now();
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        let seconds = started.elapsed().as_secs_f64();
        log::info!("{} {name}: {detail}", if passed { "ok  " } else { "FAIL" });
        self.checks.push(CheckOutcome {
            name,
            passed,
            detail,
            seconds,
        });
    }
}

fn grad_detail(r: &GradCheckReport) -> (bool, String) {
    let worst = r
        .worst
        .as_ref()
        .map(|(n, i)| format!(" at {n}[{i}]"))
        .unwrap_or_default();
    (
        r.passed,
        format!("max rel error {:.2e}{worst} over {} entries (tol {:.0e})", r.max_rel_error, r.checked, r.tol),
    )
}

fn faulty_tape(fault: Option<OpKind>) -> impl Fn() -> Tape {
    move || {
        let mut t = Tape::new();
        if let Some(f) = fault {
            t.inject_backward_fault(f);
        }
        t
    }
}

/// Runs every invariant check: gradients of each op kind, KAN family and
/// model combination, parameter-count identities, B-spline partition of
/// unity, permutation invariance, batching transparency, masked losses,
/// the ROC-AUC oracle and scaffold-split disjointness.
pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    gradient_checks(&mut report, opts);
    parameter_count_checks(&mut report);
    report.run("kan/bspline-partition-of-unity", partition_of_unity);
    invariance_checks(&mut report, opts);
    report.run("loss/masked-entries-ignored", masked_loss_invariance);
    report.run("metrics/roc-auc-oracle", || auc_oracle(opts.auc_instances, opts.seed));
    split_checks(&mut report, opts);
    report
}

fn gradient_checks(report: &mut VerifyReport, opts: &VerifyOptions) {
    for &kind in CHECKED_OPS {
        report.run(format!("grad/op/{kind}"), || {
            check_op(kind, opts.op_trials, opts.seed, GRAD_STEP, GRAD_TOL, opts.fault).map(|r| grad_detail(&r))
        });
    }

    let kan = KanConfig {
        num_rbfs: 5,
        grid_size: 4,
        ..KanConfig::default()
    };
    for family in KanFamily::ALL {
        report.run(format!("grad/kan/{family}"), || {
            let (mut store, layer) = KanLayer::standalone(family, 3, 4, &kan, opts.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let data = (0..5 * 3).map(|_| rng.gen_range(-2.2..2.2)).collect();
            let x = Tensor::new(vec![5, 3], data)?;
            let params = layer.param_ids();
            let r = grad_check_on(&mut store, &params, GRAD_STEP, GRAD_TOL, faulty_tape(opts.fault), |tape, store| {
                let xv = tape.constant(x.clone());
                let y = layer.forward(tape, store, xv)?;
                let y = tape.square(y);
                Ok(tape.mean(y))
            })?;
            let (passed, mut detail) = grad_detail(&r);
            if let KanLayer::Skan(s) = &layer {
                detail.push_str(&format!(
                    "; centers and log-bandwidths included: {}",
                    params.contains(&s.centers()) && params.contains(&s.log_bandwidth())
                ));
            }
            Ok((passed, detail))
        });
    }

    let molecules = ["CC(=O)N", "OC=C", "C1CC1"];
    for &host in Host::ALL {
        for &update in UpdateKind::ALL {
            for &head in HeadKind::ALL {
                report.run(format!("grad/model/{host}/{update}/{head}"), || {
                    let graphs = molecules.iter().map(|s| parse_smiles(s)).collect::<Result<Vec<_>>>()?;
                    if let Some(g) = graphs.iter().find(|g| g.num_atoms() > 5) {
                        return Err(Error::contract(format!("{} has more than 5 atoms", g.source_smiles)));
                    }
                    let cfg = tiny_model(host, update, head);
                    let (mut store, model) = init_model(&cfg, opts.seed)?;
                    jitter_biases(&mut store, opts.seed);
                    let batch = batch_of(&graphs)?;
                    let targets = Arc::new(Tensor::new(vec![3, 1], vec![0.4, -1.2, 0.9])?);
                    let mask = Arc::new(Tensor::full(&[3, 1], 1.0));
                    let ids: Vec<_> = store.ids().collect();
                    let r = grad_check_on(&mut store, &ids, GRAD_STEP, GRAD_TOL, faulty_tape(opts.fault), |tape, store| {
                        let y = model.forward(tape, store, &batch)?;
                        tape.masked_mse(y, targets.clone(), mask.clone())
                    })?;
                    Ok(grad_detail(&r))
                });
            }
        }
    }
}

/// Zero-initialized biases let a molecule with all-dead relus feed an exact
/// 0 into the next relu, where central differences return the mean of the
/// one-sided slopes. Moving biases off zero keeps fixtures off the kink.
fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let ids: Vec<_> = store.iter().filter(|p| p.name.ends_with(".bias")).map(|p| p.name.clone()).collect();
    for name in ids {
        let id = store.id_of(&name).expect("listed above");
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn tiny_model(host: Host, update: UpdateKind, head: HeadKind) -> GnnConfig {
    GnnConfig {
        host,
        update,
        head,
        hidden: 5,
        gat_heads: 2,
        kan: KanConfig {
            num_rbfs: 3,
            grid_size: 3,
            ..KanConfig::default()
        },
        ..GnnConfig::default()
    }
}

fn init_model(cfg: &GnnConfig, seed: u64) -> Result<(ParamStore, GnnModel)> {
    let mut store = ParamStore::new();
    let model = GnnModel::init(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok((store, model))
}

fn batch_of(graphs: &[MolecularGraph]) -> Result<crate::molgraph::BatchedGraph> {
    let feats: Vec<_> = graphs.iter().map(featurize).collect();
    let items: Vec<_> = graphs.iter().zip(&feats).collect();
    batch_graphs(&items)
}

/// `(n_in, n_out, M, G, k)` points for the parameter-count identities.
pub const PARAMETER_GRID: [(usize, usize, usize, usize, usize); 20] = [
    (1, 1, 1, 1, 1),
    (1, 4, 2, 3, 1),
    (2, 5, 8, 5, 3),
    (3, 3, 4, 4, 2),
    (4, 1, 6, 6, 3),
    (5, 7, 8, 8, 3),
    (8, 8, 3, 2, 1),
    (7, 2, 10, 7, 2),
    (16, 16, 8, 8, 3),
    (10, 3, 5, 10, 4),
    (2, 13, 12, 5, 3),
    (32, 16, 8, 5, 3),
    (6, 6, 1, 1, 2),
    (9, 4, 7, 3, 3),
    (12, 12, 2, 9, 1),
    (3, 20, 16, 4, 3),
    (20, 3, 4, 12, 5),
    (64, 64, 8, 8, 3),
    (11, 5, 9, 6, 2),
    (256, 256, 8, 5, 3),
];

pub fn closed_form_parameters(family: KanFamily, n_in: usize, n_out: usize, m: usize, g: usize, k: usize) -> usize {
    match family {
        KanFamily::Skan => n_in * n_out * m + n_in * n_out + 2 * m,
        KanFamily::BsplineKan => n_in * n_out * (g + k) + 2 * n_in * n_out,
        KanFamily::Fastkan => n_in * n_out * m + n_in * n_out,
    }
}

fn parameter_count_checks(report: &mut VerifyReport) {
    for family in KanFamily::ALL {
        report.run(format!("params/kan/{family}"), || {
            for &(n_in, n_out, m, g, k) in &PARAMETER_GRID {
                let cfg = KanConfig {
                    num_rbfs: m,
                    grid_size: g,
                    spline_order: k,
                    ..KanConfig::default()
                };
                let (store, layer) = KanLayer::standalone(family, n_in, n_out, &cfg, 0)?;
                let expected = closed_form_parameters(family, n_in, n_out, m, g, k);
                let counted = enumerate_parameters(&store, &layer.param_ids());
                if counted != expected || layer.parameter_count() != expected || store.scalar_count() != expected {
                    return Ok((
                        false,
                        format!("({n_in},{n_out},M={m},G={g},k={k}): enumerated {counted}, closed form {expected}"),
                    ));
                }
            }
            Ok((true, format!("{} grid points match", PARAMETER_GRID.len())))
        });
    }
}

fn partition_of_unity() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        for g in 1..=12 {
            let basis = BSplineBasis::uniform(g, k, 2.0)?;
            let (lo, hi) = basis.domain();
            for i in 0..=200 {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                let s: f64 = basis.evaluate(x).iter().sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max |sum - 1| = {worst:.2e} over k 1..=5, G 1..=12")))
}

fn random_molecules(rng: &mut ChaCha8Rng, count: usize, max_atoms: usize) -> Result<Vec<MolecularGraph>> {
    (0..count)
        .map(|_| {
            let s = random_smiles(rng, max_atoms);
            parse_smiles(&s)
        })
        .collect()
}

fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

fn invariance_checks(report: &mut VerifyReport, opts: &VerifyOptions) {
    for &host in Host::ALL {
        report.run(format!("invariance/permutation/{host}"), || {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xbeef);
            let molecules = random_molecules(&mut rng, opts.invariance_molecules, 24)?;
            let models = UpdateKind::ALL
                .iter()
                .enumerate()
                .map(|(i, &u)| {
                    let head = HeadKind::ALL[i % 2];
                    init_model(&GnnConfig { hidden: 16, ..tiny_model(host, u, head) }, opts.seed + i as u64)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut worst: f64 = 0.0;
            for (i, g) in molecules.iter().enumerate() {
                let (store, model) = &models[i % models.len()];
                let p = g.permuted(&random_permutation(g.num_atoms(), &mut rng))?;
                let y0 = predict(model, store, &batch_of(std::slice::from_ref(g))?)?;
                let y1 = predict(model, store, &batch_of(&[p])?)?;
                worst = worst.max(y0.max_abs_diff(&y1));
            }
            Ok((
                worst <= INVARIANCE_TOL,
                format!("max |dy| = {worst:.2e} over {} random molecules", molecules.len()),
            ))
        });
        report.run(format!("invariance/batching/{host}"), || {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xba7c);
            let molecules = random_molecules(&mut rng, 12, 16)?;
            let (store, model) = init_model(&tiny_model(host, UpdateKind::Skan, HeadKind::Skan), opts.seed)?;
            let all = predict(&model, &store, &batch_of(&molecules)?)?;
            let mut worst: f64 = 0.0;
            for (i, g) in molecules.iter().enumerate() {
                let one = predict(&model, &store, &batch_of(std::slice::from_ref(g))?)?;
                worst = worst.max((one.item() - all.at(i, 0)).abs());
            }
            Ok((worst <= INVARIANCE_TOL, format!("max |dy| = {worst:.2e} over a batch of {}", molecules.len())))
        });
    }
}

fn predict(model: &GnnModel, store: &ParamStore, batch: &crate::molgraph::BatchedGraph) -> Result<Tensor> {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, store, batch)?;
    Ok(tape.value(y).clone())
}

fn masked_loss_invariance() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let data = (0..24).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let logits = store.add("logits", Tensor::new(vec![6, 4], data)?)?;
    let mask_data: Vec<f64> = (0..24).map(|i| f64::from(u8::from(i % 3 != 0))).collect();
    let mask = Arc::new(Tensor::new(vec![6, 4], mask_data.clone())?);
    let labels: Vec<f64> = (0..24).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let mut perturbed = labels.clone();
    for (i, m) in mask_data.iter().enumerate() {
        if *m == 0.0 {
            perturbed[i] = 1.0 - perturbed[i];
        }
    }
    let eval = |labels: Vec<f64>, regression: bool| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let z = tape.param(&store, logits);
        let y = Arc::new(Tensor::new(vec![6, 4], labels)?);
        let loss = if regression {
            tape.masked_mse(z, y, mask.clone())?
        } else {
            tape.masked_bce(z, y, mask.clone())?
        };
        let grads = tape.backward(loss)?;
        let g = grads.get(z).map(|g| g.data().to_vec()).unwrap_or_default();
        Ok((tape.value(loss).item(), g))
    };
    let mut identical = true;
    for regression in [false, true] {
        identical &= eval(labels.clone(), regression)? == eval(perturbed.clone(), regression)?;
    }
    Ok((identical, format!("loss and gradients bit-identical under masked-label flips: {identical}")))
}

/// Quadratic reference: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn auc_oracle(instances: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0c);
    let mut worst: f64 = 0.0;
    let mut mismatched_definedness = 0;
    for _ in 0..instances {
        let n = rng.gen_range(2..=500);
        let levels = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / 7.0).collect();
        let p = rng.gen_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(p)).collect();
        match (roc_auc(&scores, &labels), auc_pairwise(&scores, &labels)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => mismatched_definedness += 1,
        }
    }
    Ok((
        worst <= AUC_TOL && mismatched_definedness == 0,
        format!("max |rank-sum - pairwise| = {worst:.2e} over {instances} tie-heavy instances"),
    ))
}

/// Partition, scaffold-disjointness and determinism of a scaffold split.
pub fn check_scaffold_split(keys: &[String], seed: u64) -> Result<(bool, String)> {
    let split = scaffold_split(keys, SplitFractions::default(), seed)?;
    let again = scaffold_split(keys, SplitFractions::default(), seed)?;
    let partition = split.indices.is_partition(keys.len());
    let mut part_of: HashMap<&str, usize> = HashMap::new();
    let mut straddling = 0;
    let parts = [&split.indices.train, &split.indices.valid, &split.indices.test];
    for (p, part) in parts.iter().enumerate() {
        for &i in part.iter() {
            if *part_of.entry(keys[i].as_str()).or_insert(p) != p {
                straddling += 1;
            }
        }
    }
    let deterministic = split == again;
    let disjoint = split.fell_back || straddling == 0;
    Ok((
        partition && disjoint && deterministic && !split.fell_back,
        format!(
            "sizes {:?}, {} scaffolds, partition {partition}, straddling {straddling}, deterministic {deterministic}, fallback {}",
            split.indices.sizes(),
            part_of.len(),
            split.fell_back
        ),
    ))
}

fn split_checks(report: &mut VerifyReport, opts: &VerifyOptions) {
    report.run("split/scaffold/generated", || {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5ca1);
        let keys: Vec<String> = random_molecules(&mut rng, 400, 16)?.iter().map(murcko_scaffold).collect();
        check_scaffold_split(&keys, opts.seed)
    });
    for path in &opts.split_datasets {
        report.run(format!("split/scaffold/{}", path.display()), || {
            let (keys, _) = scaffold_keys_from_csv(path, "smiles")?;
            check_scaffold_split(&keys, opts.seed)
        });
    }
}
