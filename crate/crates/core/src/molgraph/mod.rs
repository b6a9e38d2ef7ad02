//! Molecular graphs: SMILES parsing, fixed-layout featurization, scaffold
//! keys for splitting, and disjoint-union batching.

mod scaffold;
mod smiles;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use scaffold::{murcko_scaffold, ring_bonds, scaffold_atoms};
pub use smiles::parse_smiles;

/// Width of a node feature row.
pub const NODE_DIM: usize = 28;
/// Width of an edge feature row.
pub const EDGE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    Other,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::Other,
    ];

    /// Maps a symbol in either case (`c` is aromatic carbon) to its class.
    pub fn from_symbol(s: &str) -> Element {
        match s {
            "B" | "b" => Element::B,
            "C" | "c" => Element::C,
            "N" | "n" => Element::N,
            "O" | "o" => Element::O,
            "P" | "p" => Element::P,
            "S" | "s" => Element::S,
            "F" => Element::F,
            "Cl" => Element::Cl,
            "Br" => Element::Br,
            "I" => Element::I,
            _ => Element::Other,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Twice the bond's valence contribution, so aromatic (1.5) stays integral.
    pub fn twice_valence(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    /// Clamped to `[-2, 2]`.
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets; `None` for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub degree: u8,
    pub implicit_h: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Directed edges: bond `i` appears as `2i` (a→b) and `2i+1` (b→a).
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub source_smiles: String,
    /// Set when a non-aromatic atom's bonds exceed every allowed valence.
    pub valence_warning: bool,
}

impl MolecularGraph {
    pub(crate) fn from_parts(
        atoms: Vec<Atom>,
        bonds: Vec<Bond>,
        source_smiles: String,
        valence_warning: bool,
    ) -> Self {
        let mut edge_src = Vec::with_capacity(2 * bonds.len());
        let mut edge_dst = Vec::with_capacity(2 * bonds.len());
        for b in &bonds {
            edge_src.extend([b.a, b.b]);
            edge_dst.extend([b.b, b.a]);
        }
        MolecularGraph {
            atoms,
            bonds,
            edge_src,
            edge_dst,
            source_smiles,
            valence_warning,
        }
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Neighbor lists with the bond order of each incident bond.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.a].push((b.b, b.order));
            adj[b.b].push((b.a, b.order));
        }
        adj
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`; bond order in
    /// the list is preserved.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract("permutation must be a bijection on atom indices"));
        }
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        Ok(MolecularGraph::from_parts(
            atoms,
            bonds,
            self.source_smiles.clone(),
            self.valence_warning,
        ))
    }
}

/// Node and edge feature matrices of one molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrices {
    /// `atoms × 28`: element 11 | degree 0-5 | charge -2..2 | aromatic | implicit H 0-4.
    pub h: Tensor,
    /// `2·bonds × 4`: bond-order one-hot, rows aligned with the edge lists.
    pub e: Tensor,
}

pub fn featurize(g: &MolecularGraph) -> FeatureMatrices {
    let mut h = Tensor::zeros(&[g.atoms.len(), NODE_DIM]);
    for (i, atom) in g.atoms.iter().enumerate() {
        let row = &mut h.data_mut()[i * NODE_DIM..(i + 1) * NODE_DIM];
        row[atom.element.index()] = 1.0;
        row[11 + (atom.degree as usize).min(5)] = 1.0;
        row[17 + (atom.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
        if atom.aromatic {
            row[22] = 1.0;
        }
        row[23 + (atom.implicit_h as usize).min(4)] = 1.0;
    }
    let mut e = Tensor::zeros(&[g.num_edges(), EDGE_DIM]);
    for (i, b) in g.bonds.iter().enumerate() {
        let col = b.order.index();
        e.data_mut()[2 * i * EDGE_DIM + col] = 1.0;
        e.data_mut()[(2 * i + 1) * EDGE_DIM + col] = 1.0;
    }
    FeatureMatrices { h, e }
}

/// Several molecules as one disconnected graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedGraph {
    pub h: Tensor,
    pub e: Tensor,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// Molecule index of every node.
    pub graph_id: Vec<usize>,
    /// First node of each molecule, plus a trailing total.
    pub node_offsets: Vec<usize>,
}

impl BatchedGraph {
    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_id.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Undirected degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for &d in &self.edge_dst {
            deg[d] += 1;
        }
        deg
    }
}

/// Disjoint union of the given molecules, in order.
pub fn batch_graphs(items: &[(&MolecularGraph, &FeatureMatrices)]) -> Result<BatchedGraph> {
    if items.is_empty() {
        return Err(Error::contract("cannot batch an empty list of graphs"));
    }
    let total_nodes: usize = items.iter().map(|(g, _)| g.num_atoms()).sum();
    let total_edges: usize = items.iter().map(|(g, _)| g.num_edges()).sum();
    let mut h = Vec::with_capacity(total_nodes * NODE_DIM);
    let mut e = Vec::with_capacity(total_edges * EDGE_DIM);
    let mut edge_src = Vec::with_capacity(total_edges);
    let mut edge_dst = Vec::with_capacity(total_edges);
    let mut graph_id = Vec::with_capacity(total_nodes);
    let mut node_offsets = vec![0];
    for (gi, (g, f)) in items.iter().enumerate() {
        if f.h.shape() != [g.num_atoms(), NODE_DIM] || f.e.shape() != [g.num_edges(), EDGE_DIM] {
            return Err(Error::Dimension {
                op: "batch_graphs",
                lhs: f.h.shape().to_vec(),
                rhs: vec![g.num_atoms(), NODE_DIM],
            });
        }
        let offset = *node_offsets.last().unwrap();
        h.extend_from_slice(f.h.data());
        e.extend_from_slice(f.e.data());
        edge_src.extend(g.edge_src.iter().map(|s| s + offset));
        edge_dst.extend(g.edge_dst.iter().map(|d| d + offset));
        graph_id.extend(std::iter::repeat(gi).take(g.num_atoms()));
        node_offsets.push(offset + g.num_atoms());
    }
    Ok(BatchedGraph {
        h: Tensor::new(vec![total_nodes, NODE_DIM], h)?,
        e: Tensor::new(vec![total_edges, EDGE_DIM], e)?,
        edge_src,
        edge_dst,
        graph_id,
        node_offsets,
    })
}

#[cfg(test)]
mod tests;
