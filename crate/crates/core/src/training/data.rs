use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::molgraph::{
    batch_graphs, featurize, murcko_scaffold, parse_smiles, BatchedGraph, FeatureMatrices,
    MolecularGraph,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(TaskKind::Classification),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Molecule {
    pub graph: MolecularGraph,
    pub features: FeatureMatrices,
    pub scaffold: String,
}

impl Molecule {
    pub fn from_smiles(smiles: &str) -> Result<Self> {
        let graph = parse_smiles(smiles)?;
        let features = featurize(&graph);
        let scaffold = murcko_scaffold(&graph);
        Ok(Molecule {
            graph,
            features,
            scaffold,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows_read: usize,
    pub molecules: usize,
    pub skipped: usize,
    /// Skip reason → count.
    pub skip_reasons: BTreeMap<String, usize>,
    /// Molecules kept despite an over-valent atom.
    pub valence_warnings: usize,
}

impl ParseStats {
    fn skip(&mut self, reason: &str) {
        self.skipped += 1;
        *self.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }
}

/// Molecules with a `molecules × tasks` label matrix and a matching 0/1
/// mask of present labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: TaskKind,
    pub task_names: Vec<String>,
    pub molecules: Vec<Molecule>,
    pub labels: Tensor,
    pub mask: Tensor,
}

impl Dataset {
    pub fn new(
        kind: TaskKind,
        task_names: Vec<String>,
        molecules: Vec<Molecule>,
        labels: Tensor,
        mask: Tensor,
    ) -> Result<Self> {
        let expected = [molecules.len(), task_names.len()];
        if labels.shape() != expected || mask.shape() != expected {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: labels.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        if kind == TaskKind::Classification {
            let bad = labels
                .data()
                .iter()
                .zip(mask.data())
                .any(|(&y, &m)| m != 0.0 && y != 0.0 && y != 1.0);
            if bad {
                return Err(Error::Config("classification labels must be 0 or 1".into()));
            }
        }
        Ok(Dataset {
            kind,
            task_names,
            molecules,
            labels,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn scaffold_keys(&self) -> Vec<String> {
        self.molecules.iter().map(|m| m.scaffold.clone()).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<BatchedGraph> {
        let items: Vec<_> = indices
            .iter()
            .map(|&i| (&self.molecules[i].graph, &self.molecules[i].features))
            .collect();
        batch_graphs(&items)
    }

    /// Label and mask rows for `indices`.
    pub fn targets(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let t = self.n_tasks();
        let mut labels = Vec::with_capacity(indices.len() * t);
        let mut mask = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            labels.extend_from_slice(self.labels.row(i));
            mask.extend_from_slice(self.mask.row(i));
        }
        (
            Tensor::from_parts(vec![indices.len(), t], labels),
            Tensor::from_parts(vec![indices.len(), t], mask),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    /// Column holding SMILES; `smiles` when unset.
    pub smiles_column: Option<String>,
    /// Label columns; detected when unset (see [`load_csv_dataset`]).
    pub label_columns: Option<Vec<String>>,
}

fn cell(row: &csv::StringRecord, c: usize) -> &str {
    row.get(c).map(str::trim).unwrap_or("")
}

fn is_binary(cell: &str) -> bool {
    matches!(cell.parse::<f64>(), Ok(v) if v == 0.0 || v == 1.0)
}

/// Reads a CSV with a header row, a SMILES column and one or more label
/// columns (empty cells are missing labels).
///
/// Without explicit `label_columns`, every non-SMILES column whose non-empty
/// cells all parse as numbers is a label; for classification they must
/// also all be 0 or 1, which drops running-index columns.
pub fn load_csv_dataset(path: &Path, kind: TaskKind, opts: &CsvOptions) -> Result<(Dataset, ParseStats)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let smiles_name = opts.smiles_column.as_deref().unwrap_or("smiles");
    let smiles_col = header
        .iter()
        .position(|h| h == smiles_name)
        .ok_or_else(|| Error::Config(format!("{}: no {smiles_name:?} column", path.display())))?;

    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;

    let label_cols: Vec<usize> = match &opts.label_columns {
        Some(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::Config(format!("{}: no label column {n:?}", path.display())))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&c| c != smiles_col)
            .filter(|&c| {
                let cells: Vec<&str> = rows.iter().map(|r| cell(r, c)).filter(|s| !s.is_empty()).collect();
                !cells.is_empty()
                    && cells.iter().all(|s| match kind {
                        TaskKind::Classification => is_binary(s),
                        TaskKind::Regression => s.parse::<f64>().is_ok_and(f64::is_finite),
                    })
            })
            .collect(),
    };
    if label_cols.is_empty() {
        return Err(Error::Config(format!("{}: no label columns found", path.display())));
    }

    let mut stats = ParseStats::default();
    let mut molecules = Vec::new();
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for row in &rows {
        stats.rows_read += 1;
        let smiles = cell(row, smiles_col);
        if smiles.is_empty() {
            stats.skip("empty smiles");
            continue;
        }
        let mut y = Vec::with_capacity(label_cols.len());
        let mut m = Vec::with_capacity(label_cols.len());
        let mut bad_label = false;
        for &c in &label_cols {
            let s = cell(row, c);
            if s.is_empty() {
                y.push(0.0);
                m.push(0.0);
            } else {
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        y.push(v);
                        m.push(1.0);
                    }
                    _ => bad_label = true,
                }
            }
        }
        if bad_label {
            stats.skip("unparseable label");
            continue;
        }
        if m.iter().all(|&v| v == 0.0) {
            stats.skip("no labels");
            continue;
        }
        match Molecule::from_smiles(smiles) {
            Ok(mol) => {
                stats.valence_warnings += usize::from(mol.graph.valence_warning);
                molecules.push(mol);
                labels.extend(y);
                mask.extend(m);
            }
            Err(e) => {
                log::debug!("skipping {smiles:?}: {e}");
                stats.skip("smiles parse error");
            }
        }
    }
    stats.molecules = molecules.len();
    if molecules.is_empty() {
        return Err(Error::Config(format!("{}: no parseable molecules", path.display())));
    }
    if stats.skipped > 0 {
        log::info!("{}: skipped {} of {} rows", path.display(), stats.skipped, stats.rows_read);
    }
    let n = molecules.len();
    let t = label_cols.len();
    let dataset = Dataset::new(
        kind,
        label_cols.iter().map(|&c| header[c].clone()).collect(),
        molecules,
        Tensor::new(vec![n, t], labels)?,
        Tensor::new(vec![n, t], mask)?,
    )?;
    Ok((dataset, stats))
}
