use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molgraph::{murcko_scaffold, parse_smiles};
use crate::training::{scaffold_groups, scaffold_split, SplitFractions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub rows_read: usize,
    pub molecules: usize,
    pub skipped: usize,
    pub scaffolds: usize,
    /// Molecules without rings (empty scaffold key).
    pub acyclic: usize,
    pub largest_group: usize,
    /// `(low, high, groups)`: number of scaffold groups whose size falls in
    /// `low..=high`, over power-of-two buckets.
    pub histogram: Vec<(usize, usize, usize)>,
    pub split_sizes: [usize; 3],
    pub split_fell_back: bool,
}

/// Scaffold statistics of the `smiles_column` of a CSV and the sizes of its
/// default scaffold split.
pub fn split_stats(path: &Path, smiles_column: &str) -> Result<SplitStats> {
    let (keys, rows_read) = scaffold_keys_from_csv(path, smiles_column)?;
    Ok(stats_for_keys(&keys, rows_read))
}

/// Scaffold keys of every parseable SMILES in a CSV column, plus the number
/// of data rows read. Labels are not needed.
pub fn scaffold_keys_from_csv(path: &Path, smiles_column: &str) -> Result<(Vec<String>, usize)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let col = reader
        .headers()?
        .iter()
        .position(|h| h.trim() == smiles_column)
        .ok_or_else(|| Error::Config(format!("{}: no {smiles_column:?} column", path.display())))?;
    let mut keys = Vec::new();
    let mut rows_read = 0;
    for row in reader.records() {
        let row = row?;
        rows_read += 1;
        if let Ok(g) = parse_smiles(row.get(col).unwrap_or("").trim()) {
            keys.push(murcko_scaffold(&g));
        }
    }
    if keys.is_empty() {
        return Err(Error::Config(format!("{}: no parseable molecules", path.display())));
    }
    Ok((keys, rows_read))
}

pub fn stats_for_keys(keys: &[String], rows_read: usize) -> SplitStats {
    let groups = scaffold_groups(keys);
    let mut buckets: BTreeMap<u32, usize> = BTreeMap::new();
    for (_, members) in &groups {
        *buckets.entry(members.len().next_power_of_two().trailing_zeros()).or_default() += 1;
    }
    let histogram = buckets
        .into_iter()
        .map(|(b, count)| {
            let high = 1usize << b;
            let low = if b == 0 { 1 } else { (high >> 1) + 1 };
            (low, high, count)
        })
        .collect();
    let split = scaffold_split(keys, SplitFractions::default(), 0).expect("default fractions are valid");
    SplitStats {
        rows_read,
        molecules: keys.len(),
        skipped: rows_read - keys.len(),
        scaffolds: groups.len(),
        acyclic: keys.iter().filter(|k| k.is_empty()).count(),
        largest_group: groups.first().map_or(0, |g| g.1.len()),
        histogram,
        split_sizes: split.indices.sizes(),
        split_fell_back: split.fell_back,
    }
}
