use sha2::{Digest, Sha256};

use super::MolecularGraph;

/// Marks each bond that lies on a cycle: a bond is a ring bond exactly when
/// its endpoints stay connected after removing it.
pub fn ring_bonds(g: &MolecularGraph) -> Vec<bool> {
    let adj = g.adjacency();
    let n = g.num_atoms();
    g.bonds
        .iter()
        .map(|bond| {
            let mut seen = vec![false; n];
            let mut stack = vec![bond.a];
            seen[bond.a] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    let skipped = (u == bond.a && v == bond.b) || (u == bond.b && v == bond.a);
                    if !skipped && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen[bond.b]
        })
        .collect()
}

/// Atoms of the Bemis-Murcko framework (rings plus linkers), ascending.
/// Empty for acyclic molecules.
pub fn scaffold_atoms(g: &MolecularGraph) -> Vec<usize> {
    let ring = ring_bonds(g);
    if !ring.iter().any(|&r| r) {
        return Vec::new();
    }
    let n = g.num_atoms();
    let mut in_ring = vec![false; n];
    for (b, &r) in g.bonds.iter().zip(&ring) {
        if r {
            in_ring[b.a] = true;
            in_ring[b.b] = true;
        }
    }
    let adj = g.adjacency();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1 && !in_ring[i]).collect();
    while let Some(u) = queue.pop() {
        if !alive[u] {
            continue;
        }
        alive[u] = false;
        for &(v, _) in &adj[u] {
            if alive[v] {
                degree[v] -= 1;
                if degree[v] == 1 && !in_ring[v] {
                    queue.push(v);
                }
            }
        }
    }
    (0..n).filter(|&i| alive[i]).collect()
}

fn digest_u64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Scaffold key: a Weisfeiler-Leman hash of the Murcko framework, with
/// (element, aromatic) node colors and bond-order edge labels refined for
/// `|V|` rounds. Acyclic molecules map to the empty string.
pub fn murcko_scaffold(g: &MolecularGraph) -> String {
    let keep = scaffold_atoms(g);
    if keep.is_empty() {
        return String::new();
    }
    let mut local = vec![usize::MAX; g.num_atoms()];
    for (i, &a) in keep.iter().enumerate() {
        local[a] = i;
    }
    let mut adj: Vec<Vec<(usize, u8)>> = vec![Vec::new(); keep.len()];
    for b in &g.bonds {
        let (u, v) = (local[b.a], local[b.b]);
        if u != usize::MAX && v != usize::MAX {
            adj[u].push((v, b.order.index() as u8));
            adj[v].push((u, b.order.index() as u8));
        }
    }

    let mut colors: Vec<u64> = keep
        .iter()
        .map(|&a| {
            let atom = &g.atoms[a];
            digest_u64(&[atom.element.index() as u8, atom.aromatic as u8])
        })
        .collect();
    let mut buf = Vec::new();
    for _ in 0..keep.len() {
        colors = (0..keep.len())
            .map(|u| {
                let mut nbrs: Vec<(u8, u64)> = adj[u].iter().map(|&(v, o)| (o, colors[v])).collect();
                nbrs.sort_unstable();
                buf.clear();
                buf.extend_from_slice(&colors[u].to_le_bytes());
                for (o, c) in nbrs {
                    buf.push(o);
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                digest_u64(&buf)
            })
            .collect();
    }
    colors.sort_unstable();
    let mut hasher = Sha256::new();
    for c in colors {
        hasher.update(c.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
