use rand::Rng;

use super::{KanConfig, KanFamily, KanLayer};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Stack of same-family KAN layers with widths `[n0, n1, …, nL]`.
#[derive(Clone, Debug)]
pub struct KanNetwork {
    layers: Vec<KanLayer>,
    widths: Vec<usize>,
}

impl KanNetwork {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        family: KanFamily,
        widths: &[usize],
        cfg: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::contract("a KAN network needs at least two widths"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| KanLayer::init(store, &format!("{prefix}.{i}"), family, w[0], w[1], cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(KanNetwork {
            layers,
            widths: widths.to_vec(),
        })
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn family(&self) -> KanFamily {
        self.layers[0].family()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(KanLayer::parameter_count).sum()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(KanLayer::param_ids).collect()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(tape, store, h))
    }
}
