use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// ROC-AUC of one task via the rank-sum statistic with average ranks for
/// ties. `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // ranks are 1-based; a run of ties shares the mean of its ranks
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_run as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucReport {
    /// `None` for tasks lacking a positive or a negative label.
    pub per_task: Vec<Option<f64>>,
    /// Mean over tasks with a defined AUC; `None` when there are none.
    pub macro_average: Option<f64>,
}

/// Per-task ROC-AUC over the unmasked entries of `graphs × tasks` matrices.
pub fn roc_auc_tasks(scores: &Tensor, labels: &Tensor, mask: &Tensor) -> Result<AucReport> {
    check_matrices("roc_auc", scores, labels, mask)?;
    let (rows, tasks) = (scores.rows(), scores.row_len());
    let per_task: Vec<Option<f64>> = (0..tasks)
        .map(|t| {
            let (mut s, mut l) = (Vec::new(), Vec::new());
            for r in 0..rows {
                if mask.at(r, t) != 0.0 {
                    s.push(scores.at(r, t));
                    l.push(labels.at(r, t) > 0.5);
                }
            }
            roc_auc(&s, &l)
        })
        .collect();
    Ok(AucReport {
        macro_average: mean_defined(&per_task),
        per_task,
    })
}

/// Per-task mean absolute error over unmasked entries; `None` for tasks
/// with no labels.
pub fn mae_tasks(pred: &Tensor, targets: &Tensor, mask: &Tensor) -> Result<Vec<Option<f64>>> {
    check_matrices("mae", pred, targets, mask)?;
    let (rows, tasks) = (pred.rows(), pred.row_len());
    Ok((0..tasks)
        .map(|t| {
            let mut total = 0.0;
            let mut count = 0usize;
            for r in 0..rows {
                if mask.at(r, t) != 0.0 {
                    total += (pred.at(r, t) - targets.at(r, t)).abs();
                    count += 1;
                }
            }
            (count > 0).then(|| total / count as f64)
        })
        .collect())
}

pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn check_matrices(op: &'static str, a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<()> {
    if a.rank() != 2 || a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Per-task target standardization fitted on training rows.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits mean and population std over the unmasked entries of `rows`.
    /// Tasks with zero spread (or no labels) get std 1.
    pub fn fit(labels: &Tensor, mask: &Tensor, rows: &[usize]) -> Self {
        let tasks = labels.row_len();
        let mut mean = vec![0.0; tasks];
        let mut std = vec![1.0; tasks];
        for t in 0..tasks {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|&&r| mask.at(r, t) != 0.0)
                .map(|&r| labels.at(r, t))
                .collect();
            if vals.is_empty() {
                log::warn!("task {t} has no training labels; normalization left at identity");
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            mean[t] = m;
            if var.sqrt() > 0.0 && var.is_finite() {
                std[t] = var.sqrt();
            } else {
                log::warn!("task {t} has zero training spread; std clamped to 1");
            }
        }
        Normalizer { mean, std }
    }

    pub fn identity(tasks: usize) -> Self {
        Normalizer {
            mean: vec![0.0; tasks],
            std: vec![1.0; tasks],
        }
    }

    pub fn normalize(&self, t: &Tensor) -> Tensor {
        self.apply(t, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        self.apply(t, |v, m, s| v * s + m)
    }

    fn apply(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let w = self.mean.len();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % w;
            *v = f(*v, self.mean[c], self.std[c]);
        }
        out
    }
}
