//! Kolmogorov-Arnold layers: B-spline KAN, fixed-grid FastKAN and SwallowKAN
//! (SKAN) with learnable RBF centers and bandwidths.
//!
//! All three families map `batch × n_in` to `batch × n_out` by summing one
//! learnable univariate function per (input, output) edge. They differ only
//! in the basis behind those functions, so they are interchangeable inside
//! [`KanNetwork`] and inside the GNN update block.

mod bspline;
mod network;
mod rbf;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use bspline::{BSplineBasis, BSplineKanLayer};
pub use network::KanNetwork;
pub use rbf::{grid_centers, grid_spacing, FastKanLayer, SkanLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KanFamily {
    BsplineKan,
    Fastkan,
    Skan,
}

impl KanFamily {
    pub const ALL: [KanFamily; 3] = [KanFamily::BsplineKan, KanFamily::Fastkan, KanFamily::Skan];

    pub fn as_str(self) -> &'static str {
        match self {
            KanFamily::BsplineKan => "bspline_kan",
            KanFamily::Fastkan => "fastkan",
            KanFamily::Skan => "skan",
        }
    }
}

impl fmt::Display for KanFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KanFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bspline_kan" | "kan" => Ok(KanFamily::BsplineKan),
            "fastkan" => Ok(KanFamily::Fastkan),
            "skan" => Ok(KanFamily::Skan),
            other => Err(Error::Config(format!("unknown KAN family {other:?}"))),
        }
    }
}

/// How SKAN bandwidths are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthInit {
    /// Equal to the spacing between adjacent centers.
    GridSpacing,
    /// `2·range / density`: the width a grid of `density` cells would have.
    Density(f64),
}

impl BandwidthInit {
    pub fn initial(self, m: usize, range: f64) -> f64 {
        match self {
            BandwidthInit::GridSpacing => grid_spacing(m, range),
            BandwidthInit::Density(d) => 2.0 * range / d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KanConfig {
    /// Half-width of the input interval covered by grids and centers.
    pub grid_range: f64,
    /// Number of B-spline grid intervals `G`.
    pub grid_size: usize,
    /// B-spline order `k`.
    pub spline_order: usize,
    /// Number of RBFs `M` (FastKAN and SKAN).
    pub num_rbfs: usize,
    pub bandwidth: BandwidthInit,
}

impl Default for KanConfig {
    fn default() -> Self {
        KanConfig {
            grid_range: 2.0,
            grid_size: 5,
            spline_order: 3,
            num_rbfs: 8,
            bandwidth: BandwidthInit::GridSpacing,
        }
    }
}

/// Xavier-uniform draw with bound `√(6 / (n_in + n_out))`.
pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], n_in: usize, n_out: usize) -> Tensor {
    let bound = xavier_bound(n_in, n_out);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub fn xavier_bound(n_in: usize, n_out: usize) -> f64 {
    (6.0 / (n_in + n_out) as f64).sqrt()
}

fn check_input(tape: &Tape, x: Var, n_in: usize) -> Result<()> {
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != n_in {
        return Err(Error::Dimension {
            op: "kan_forward",
            lhs: shape.to_vec(),
            rhs: vec![n_in],
        });
    }
    Ok(())
}

/// One KAN layer of any family.
#[derive(Clone, Debug)]
pub enum KanLayer {
    BSpline(BSplineKanLayer),
    Fast(FastKanLayer),
    Skan(SkanLayer),
}

impl KanLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        family: KanFamily,
        n_in: usize,
        n_out: usize,
        cfg: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::contract(format!(
                "KAN layer dims must be positive, got {n_in}→{n_out}"
            )));
        }
        Ok(match family {
            KanFamily::BsplineKan => {
                KanLayer::BSpline(BSplineKanLayer::init(store, prefix, n_in, n_out, cfg, rng)?)
            }
            KanFamily::Fastkan => {
                KanLayer::Fast(FastKanLayer::init(store, prefix, n_in, n_out, cfg, rng)?)
            }
            KanFamily::Skan => KanLayer::Skan(SkanLayer::init(store, prefix, n_in, n_out, cfg, rng)?),
        })
    }

    /// A layer in a fresh store, seeded deterministically.
    pub fn standalone(
        family: KanFamily,
        n_in: usize,
        n_out: usize,
        cfg: &KanConfig,
        seed: u64,
    ) -> Result<(ParamStore, KanLayer)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = KanLayer::init(&mut store, "layer", family, n_in, n_out, cfg, &mut rng)?;
        Ok((store, layer))
    }

    pub fn family(&self) -> KanFamily {
        match self {
            KanLayer::BSpline(_) => KanFamily::BsplineKan,
            KanLayer::Fast(_) => KanFamily::Fastkan,
            KanLayer::Skan(_) => KanFamily::Skan,
        }
    }

    pub fn n_in(&self) -> usize {
        match self {
            KanLayer::BSpline(l) => l.n_in,
            KanLayer::Fast(l) => l.n_in,
            KanLayer::Skan(l) => l.n_in,
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            KanLayer::BSpline(l) => l.n_out,
            KanLayer::Fast(l) => l.n_out,
            KanLayer::Skan(l) => l.n_out,
        }
    }

    /// Closed-form learnable scalar count.
    pub fn parameter_count(&self) -> usize {
        match self {
            KanLayer::BSpline(l) => l.parameter_count(),
            KanLayer::Fast(l) => l.parameter_count(),
            KanLayer::Skan(l) => l.parameter_count(),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            KanLayer::BSpline(l) => l.param_ids(),
            KanLayer::Fast(l) => l.param_ids(),
            KanLayer::Skan(l) => l.param_ids(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            KanLayer::BSpline(l) => l.forward(tape, store, x),
            KanLayer::Fast(l) => l.forward(tape, store, x),
            KanLayer::Skan(l) => l.forward(tape, store, x),
        }
    }
}

/// Counts the scalars actually held in `store` for `ids`.
pub fn enumerate_parameters(store: &ParamStore, ids: &[ParamId]) -> usize {
    ids.iter().map(|&id| store.value(id).len()).sum()
}
