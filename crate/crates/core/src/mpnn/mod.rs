//! Message-passing GNN encoder with KAN-based node updates, mean readout
//! and an MLP or SKAN prediction head.
//!
//! Each layer aggregates neighbor messages `m_v` with a GCN, GAT or GINE
//! rule and then updates `h_v ← φ((1 + ε)·h_v + m_v)`, where `φ` is a
//! two-layer KAN block (or a linear→relu→linear MLP baseline).

mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kan::{uniform_init, KanConfig, KanFamily, KanLayer, KanNetwork};
use crate::molgraph::{BatchedGraph, EDGE_DIM, NODE_DIM};

pub use checkpoint::{
    apply_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointRecord,
};

macro_rules! string_enum {
    ($name:ident, $what:literal, { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $s),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

string_enum!(Host, "host", { Gcn => "gcn", Gat => "gat", Gine => "gine" });
string_enum!(UpdateKind, "update kind", {
    Mlp => "mlp",
    Skan => "skan",
    BsplineKan => "bspline_kan",
    Fastkan => "fastkan",
});
string_enum!(HeadKind, "head kind", { Mlp => "mlp", Skan => "skan" });

impl UpdateKind {
    pub fn kan_family(self) -> Option<KanFamily> {
        match self {
            UpdateKind::Mlp => None,
            UpdateKind::Skan => Some(KanFamily::Skan),
            UpdateKind::BsplineKan => Some(KanFamily::BsplineKan),
            UpdateKind::Fastkan => Some(KanFamily::Fastkan),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub host: Host,
    pub depth: usize,
    pub hidden: usize,
    pub update: UpdateKind,
    pub head: HeadKind,
    pub n_tasks: usize,
    pub gat_heads: usize,
    /// Pass every per-edge message through a SKAN layer before summation.
    pub skan_in_aggregation: bool,
    /// Basis settings shared by all KAN blocks; `num_rbfs` is `M`.
    pub kan: KanConfig,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            host: Host::Gine,
            depth: 2,
            hidden: 256,
            update: UpdateKind::Skan,
            head: HeadKind::Mlp,
            n_tasks: 1,
            gat_heads: 4,
            skan_in_aggregation: false,
            kan: KanConfig::default(),
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.n_tasks == 0 {
            return Err(Error::Config(format!(
                "depth, hidden and n_tasks must be positive (got {}, {}, {})",
                self.depth, self.hidden, self.n_tasks
            )));
        }
        if self.host == Host::Gat && self.gat_heads == 0 {
            return Err(Error::Config("gat_heads must be positive".into()));
        }
        Ok(())
    }

    /// Whether the update input carries the learnable `(1 + ε)` self term.
    pub fn uses_epsilon(&self) -> bool {
        self.update != UpdateKind::Mlp || self.host == Host::Gine
    }
}

/// Affine map `x·Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.add(
                format!("{prefix}.weight"),
                uniform_init(rng, &[n_out, n_in], n_in, n_out),
            )?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[n_out]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul_t(x, w, false, true)?;
        tape.add(y, b)
    }
}

/// Linear → relu → linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        widths: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            first: Linear::init(store, &format!("{prefix}.0"), widths[0], widths[1], rng)?,
            second: Linear::init(store, &format!("{prefix}.1"), widths[1], widths[2], rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let z = self.first.forward(tape, store, x)?;
        let z = tape.relu(z);
        self.second.forward(tape, store, z)
    }
}

/// Either a two-layer KAN or an MLP over the same widths.
#[derive(Clone, Debug)]
pub enum Block {
    Mlp(Mlp),
    Kan(KanNetwork),
}

impl Block {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        family: Option<KanFamily>,
        widths: [usize; 3],
        kan: &KanConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match family {
            None => Block::Mlp(Mlp::init(store, prefix, widths, rng)?),
            Some(f) => Block::Kan(KanNetwork::init(store, prefix, f, &widths, kan, rng)?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            Block::Mlp(m) => m.forward(tape, store, x),
            Block::Kan(k) => k.forward(tape, store, x),
        }
    }
}

#[derive(Clone, Debug)]
pub enum HostWeights {
    Gcn {
        weight: ParamId,
    },
    Gat {
        /// Stacked per-head projections, `(heads·hidden) × hidden`.
        weight: ParamId,
        att_src: ParamId,
        att_dst: ParamId,
        att_edge: ParamId,
    },
    Gine,
}

#[derive(Clone, Debug)]
pub struct MessagePassingLayer {
    pub host: HostWeights,
    pub epsilon: Option<ParamId>,
    pub aggregation_kan: Option<KanLayer>,
    pub update: Block,
}

/// Index arrays of a batch, shared by every layer of one forward pass.
pub struct GraphContext {
    pub n: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// `1/√((deg(u)+1)(deg(v)+1))` per directed edge, `E × 1`.
    pub gcn_norm: Tensor,
}

impl GraphContext {
    pub fn new(batch: &BatchedGraph) -> Self {
        let deg = batch.degrees();
        let norm = batch
            .edge_src
            .iter()
            .zip(&batch.edge_dst)
            .map(|(&u, &v)| 1.0 / (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt())
            .collect();
        GraphContext {
            n: batch.num_nodes(),
            src: batch.edge_src.as_slice().into(),
            dst: batch.edge_dst.as_slice().into(),
            gcn_norm: Tensor::from_parts(vec![batch.num_edges(), 1], norm),
        }
    }
}

impl MessagePassingLayer {
    fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &GnnConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.hidden;
        let host = match cfg.host {
            Host::Gcn => HostWeights::Gcn {
                weight: store.add(format!("{prefix}.gcn.weight"), uniform_init(rng, &[d, d], d, d))?,
            },
            Host::Gat => {
                let h = cfg.gat_heads;
                HostWeights::Gat {
                    weight: store.add(
                        format!("{prefix}.gat.weight"),
                        uniform_init(rng, &[h * d, d], d, d),
                    )?,
                    att_src: store.add(
                        format!("{prefix}.gat.att_src"),
                        uniform_init(rng, &[h, d], d, 1),
                    )?,
                    att_dst: store.add(
                        format!("{prefix}.gat.att_dst"),
                        uniform_init(rng, &[h, d], d, 1),
                    )?,
                    att_edge: store.add(
                        format!("{prefix}.gat.att_edge"),
                        uniform_init(rng, &[h, d], d, 1),
                    )?,
                }
            }
            Host::Gine => HostWeights::Gine,
        };
        let epsilon = if cfg.uses_epsilon() {
            Some(store.add(format!("{prefix}.epsilon"), Tensor::scalar(0.0))?)
        } else {
            None
        };
        let aggregation_kan = if cfg.skan_in_aggregation {
            Some(KanLayer::init(
                store,
                &format!("{prefix}.aggregation"),
                KanFamily::Skan,
                d,
                d,
                &cfg.kan,
                rng,
            )?)
        } else {
            None
        };
        let update = Block::init(
            store,
            &format!("{prefix}.update"),
            cfg.update.kan_family(),
            [d, d, d],
            &cfg.kan,
            rng,
        )?;
        Ok(MessagePassingLayer {
            host,
            epsilon,
            aggregation_kan,
            update,
        })
    }

    fn edge_message(&self, tape: &mut Tape, store: &ParamStore, msg: Var) -> Result<Var> {
        match &self.aggregation_kan {
            Some(k) => k.forward(tape, store, msg),
            None => Ok(msg),
        }
    }

    /// Neighbor messages `m_v`, `N × hidden`.
    pub fn aggregate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &GraphContext,
        h: Var,
        e: Var,
    ) -> Result<Var> {
        match &self.host {
            HostWeights::Gcn { weight } => {
                let w = tape.param(store, *weight);
                let z = tape.matmul_t(h, w, false, true)?;
                let zu = tape.gather_rows(z, ctx.src.clone())?;
                let msg = tape.add(zu, e)?;
                let msg = self.edge_message(tape, store, msg)?;
                let norm = tape.constant(ctx.gcn_norm.clone());
                let msg = tape.mul(msg, norm)?;
                tape.scatter_add(msg, ctx.dst.clone(), ctx.n)
            }
            HostWeights::Gine => {
                let hu = tape.gather_rows(h, ctx.src.clone())?;
                let msg = tape.add(hu, e)?;
                let msg = match &self.aggregation_kan {
                    Some(k) => k.forward(tape, store, msg)?,
                    None => tape.relu(msg),
                };
                tape.scatter_add(msg, ctx.dst.clone(), ctx.n)
            }
            HostWeights::Gat { .. } => {
                let (alpha, zs) = self.gat_attention(tape, store, ctx, h, e)?;
                let heads = zs.len();
                let mut total: Option<Var> = None;
                for (k, zk) in zs.into_iter().enumerate() {
                    let zu = tape.gather_rows(zk, ctx.src.clone())?;
                    let zu = self.edge_message(tape, store, zu)?;
                    let ak = tape.slice(alpha, 1, k, 1)?;
                    let msg = tape.mul(zu, ak)?;
                    let mk = tape.scatter_add(msg, ctx.dst.clone(), ctx.n)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, mk)?,
                        None => mk,
                    });
                }
                let total = total.expect("at least one head");
                Ok(tape.scale(total, 1.0 / heads as f64))
            }
        }
    }

    /// GAT attention weights (`E × heads`, normalized over each target's
    /// incoming edges) and the per-head projected node states.
    pub fn gat_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &GraphContext,
        h: Var,
        e: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let HostWeights::Gat {
            weight,
            att_src,
            att_dst,
            att_edge,
        } = &self.host
        else {
            return Err(Error::contract("attention requested on a non-GAT layer"));
        };
        let d = tape.shape(h)[1];
        let w = tape.param(store, *weight);
        let z = tape.matmul_t(h, w, false, true)?;
        let heads = tape.shape(z)[1] / d;
        let a_src = tape.param(store, *att_src);
        let a_dst = tape.param(store, *att_dst);
        let a_edge = tape.param(store, *att_edge);

        let mut zs = Vec::with_capacity(heads);
        let mut s_src = Vec::with_capacity(heads);
        let mut s_dst = Vec::with_capacity(heads);
        for k in 0..heads {
            let zk = tape.slice(z, 1, k * d, d)?;
            let ak = tape.slice(a_src, 0, k, 1)?;
            s_src.push(tape.matmul_t(zk, ak, false, true)?);
            let ak = tape.slice(a_dst, 0, k, 1)?;
            s_dst.push(tape.matmul_t(zk, ak, false, true)?);
            zs.push(zk);
        }
        let s_src = tape.concat(&s_src, 1)?;
        let s_dst = tape.concat(&s_dst, 1)?;
        let lu = tape.gather_rows(s_src, ctx.src.clone())?;
        let lv = tape.gather_rows(s_dst, ctx.dst.clone())?;
        let le = tape.matmul_t(e, a_edge, false, true)?;
        let logits = tape.add(lu, lv)?;
        let logits = tape.add(logits, le)?;
        let logits = tape.leaky_relu(logits, 0.2);
        let alpha = tape.segment_softmax(logits, ctx.dst.clone(), ctx.n)?;
        Ok((alpha, zs))
    }

    /// Update input `(1 + ε)·h + m`, or `h + m` when the layer has no ε.
    pub fn update_input(&self, tape: &mut Tape, store: &ParamStore, h: Var, m: Var) -> Result<Var> {
        let x = tape.add(h, m)?;
        match self.epsilon {
            Some(eps) => {
                let eps = tape.param(store, eps);
                let eh = tape.mul(h, eps)?;
                tape.add(x, eh)
            }
            None => Ok(x),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &GraphContext,
        h: Var,
        e: Var,
    ) -> Result<Var> {
        let m = self.aggregate(tape, store, ctx, h, e)?;
        let x = self.update_input(tape, store, h, m)?;
        self.update.forward(tape, store, x)
    }
}

#[derive(Clone, Debug)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub node_embed: Linear,
    pub edge_embed: Linear,
    pub layers: Vec<MessagePassingLayer>,
    pub head: Block,
}

impl GnnModel {
    pub fn init(store: &mut ParamStore, cfg: &GnnConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden;
        let node_embed = Linear::init(store, "node_embed", NODE_DIM, d, rng)?;
        let edge_embed = Linear::init(store, "edge_embed", EDGE_DIM, d, rng)?;
        let layers = (0..cfg.depth)
            .map(|i| MessagePassingLayer::init(store, &format!("layers.{i}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let head_family = match cfg.head {
            HeadKind::Mlp => None,
            HeadKind::Skan => Some(KanFamily::Skan),
        };
        let head = Block::init(store, "head", head_family, [d, d, cfg.n_tasks], &cfg.kan, rng)?;
        Ok(GnnModel {
            config: cfg.clone(),
            node_embed,
            edge_embed,
            layers,
            head,
        })
    }

    /// Node states after the last message-passing layer, `N × hidden`.
    pub fn node_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &BatchedGraph,
    ) -> Result<Var> {
        let ctx = GraphContext::new(batch);
        let x = tape.constant(batch.h.clone());
        let mut h = self.node_embed.forward(tape, store, x)?;
        let ef = tape.constant(batch.e.clone());
        let e = self.edge_embed.forward(tape, store, ef)?;
        for layer in &self.layers {
            h = layer.forward(tape, store, &ctx, h, e)?;
        }
        Ok(h)
    }

    /// Graph embeddings `g`, `graphs × hidden`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &BatchedGraph) -> Result<Var> {
        let h = self.node_states(tape, store, batch)?;
        readout(tape, h, batch)
    }

    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, g: Var) -> Result<Var> {
        self.head.forward(tape, store, g)
    }

    /// Raw outputs, `graphs × n_tasks`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &BatchedGraph) -> Result<Var> {
        let g = self.encode(tape, store, batch)?;
        self.predict(tape, store, g)
    }
}

/// Mean of node states per graph.
pub fn readout(tape: &mut Tape, h: Var, batch: &BatchedGraph) -> Result<Var> {
    let b = batch.num_graphs();
    let sums = tape.scatter_add(h, batch.graph_id.as_slice().into(), b)?;
    let inv = batch
        .node_offsets
        .windows(2)
        .map(|w| 1.0 / (w[1] - w[0]).max(1) as f64)
        .collect();
    let inv = tape.constant(Tensor::from_parts(vec![b, 1], inv));
    tape.mul(sums, inv)
}
