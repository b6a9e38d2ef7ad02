use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.valid.len(), self.test.len()]
    }

    /// True when the three parts are disjoint and cover `0..n` exactly.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be in [0,1] and sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldSplit {
    pub indices: SplitIndices,
    /// Set when the scaffold grouping was degenerate and a random split was
    /// used instead.
    pub fell_back: bool,
}

/// Groups molecules by scaffold key and returns `(key, members)` sorted by
/// size descending, then key ascending.
pub fn scaffold_groups(keys: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.as_str()).or_default().push(i);
    }
    let mut groups: Vec<(String, Vec<usize>)> =
        groups.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    groups
}

/// Deterministic scaffold split: whole groups fill train until it holds at
/// least the train fraction of molecules, then valid up to train + valid,
/// and the rest goes to test.
///
/// Falls back to [`random_split`] when there are fewer than three groups or
/// the greedy fill leaves a part empty.
pub fn scaffold_split(keys: &[String], fractions: SplitFractions, seed: u64) -> Result<ScaffoldSplit> {
    fractions.validate()?;
    let n = keys.len();
    let groups = scaffold_groups(keys);
    // the slack keeps 0.9·10 = 9.000000000000002 from demanding a tenth molecule
    let train_cut = fractions.train * n as f64 - 1e-9;
    let valid_cut = (fractions.train + fractions.valid) * n as f64 - 1e-9;

    let mut split = SplitIndices::default();
    for (_, members) in &groups {
        let part = if (split.train.len() as f64) < train_cut {
            &mut split.train
        } else if ((split.train.len() + split.valid.len()) as f64) < valid_cut {
            &mut split.valid
        } else {
            &mut split.test
        };
        part.extend_from_slice(members);
    }

    let degenerate = groups.len() < 3 || split.sizes().contains(&0);
    if degenerate {
        log::warn!(
            "scaffold split degenerate ({} groups, sizes {:?}); using a random split",
            groups.len(),
            split.sizes()
        );
        return Ok(ScaffoldSplit {
            indices: random_split(n, fractions, seed)?,
            fell_back: true,
        });
    }
    for part in [&mut split.train, &mut split.valid, &mut split.test] {
        part.sort_unstable();
    }
    Ok(ScaffoldSplit {
        indices: split,
        fell_back: false,
    })
}

/// Seeded shuffle cut at the given fractions.
pub fn random_split(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_valid = ((fractions.valid * n as f64).round() as usize).min(n - n_train);
    let mut split = SplitIndices {
        train: idx[..n_train].to_vec(),
        valid: idx[n_train..n_train + n_valid].to_vec(),
        test: idx[n_train + n_valid..].to_vec(),
    };
    for part in [&mut split.train, &mut split.valid, &mut split.test] {
        part.sort_unstable();
    }
    Ok(split)
}
