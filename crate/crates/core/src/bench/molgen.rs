//! Random valid molecules for property checks.

use rand::Rng;

const ELEMENTS: &[(&str, u8)] = &[("C", 4), ("C", 4), ("C", 4), ("N", 3), ("O", 2), ("S", 2), ("F", 1), ("Cl", 1)];

/// A random connected molecule of 1..=`max_atoms` heavy atoms as SMILES:
/// a random tree with occasional double bonds, plus up to two ring
/// closures, never exceeding organic-subset valences.
pub fn random_smiles(rng: &mut impl Rng, max_atoms: usize) -> String {
    let n = rng.gen_range(1..=max_atoms.max(1));
    let mut symbols = Vec::with_capacity(n);
    let mut free = Vec::with_capacity(n);
    // (a, b, order) with a < b
    let mut bonds: Vec<(usize, usize, u8)> = Vec::new();
    for i in 0..n {
        let candidates: Vec<usize> = (0..i).filter(|&j| free[j] > 0).collect();
        let (sym, val) = loop {
            let (s, v) = ELEMENTS[rng.gen_range(0..ELEMENTS.len())];
            // terminal atoms cannot extend the chain, keep them for leaves
            if i == 0 || v > 1 || rng.gen_bool(0.3) {
                break (s, v);
            }
        };
        symbols.push(sym);
        free.push(val);
        if i == 0 {
            continue;
        }
        let Some(&parent) = candidates.get(rng.gen_range(0..candidates.len().max(1))) else {
            // nothing left to attach to; stop growing
            symbols.pop();
            free.pop();
            break;
        };
        let max_order = free[parent].min(free[i]).min(2);
        let order = if max_order >= 2 && rng.gen_bool(0.2) { 2 } else { 1 };
        free[parent] -= order;
        free[i] -= order;
        bonds.push((parent, i, order));
    }
    let n = symbols.len();
    for _ in 0..rng.gen_range(0..=2) {
        if n < 3 {
            break;
        }
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        let exists = bonds.iter().any(|&(x, y, _)| x == a && y == b);
        if a != b && !exists && free[a] > 0 && free[b] > 0 {
            free[a] -= 1;
            free[b] -= 1;
            bonds.push((a, b, 1));
        }
    }
    write_smiles(&symbols, &bonds)
}

/// Depth-first SMILES writer. Atoms are already in an order where every
/// atom's tree parent precedes it, so DFS from atom 0 reaches all of them.
fn write_smiles(symbols: &[&str], bonds: &[(usize, usize, u8)]) -> String {
    let n = symbols.len();
    let mut adj: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    for &(a, b, o) in bonds {
        adj[a].push((b, o));
        adj[b].push((a, o));
    }
    // find DFS tree edges; remaining edges become ring closures
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    let mut stack = vec![0usize];
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    while let Some(u) = stack.pop() {
        if visited[u] {
            continue;
        }
        visited[u] = true;
        order.push(u);
        if parent[u] != usize::MAX {
            let o = adj[u].iter().find(|&&(v, _)| v == parent[u]).map(|&(_, o)| o).unwrap_or(1);
            children[parent[u]].push((u, o));
        }
        for &(v, _) in adj[u].iter().rev() {
            if !visited[v] {
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    let mut closures: Vec<Vec<(u8, u8)>> = vec![Vec::new(); n];
    let mut digit = 1u8;
    for &(a, b, o) in bonds {
        if parent[a] != b && parent[b] != a {
            closures[a].push((digit, o));
            closures[b].push((digit, o));
            digit += 1;
        }
    }

    fn emit(
        u: usize,
        symbols: &[&str],
        children: &[Vec<(usize, u8)>],
        closures: &[Vec<(u8, u8)>],
        out: &mut String,
    ) {
        out.push_str(symbols[u]);
        for &(d, o) in &closures[u] {
            if o == 2 {
                out.push('=');
            }
            out.push(char::from(b'0' + d));
        }
        let kids = &children[u];
        for (i, &(v, o)) in kids.iter().enumerate() {
            let last = i + 1 == kids.len();
            if !last {
                out.push('(');
            }
            if o == 2 {
                out.push('=');
            }
            emit(v, symbols, children, closures, out);
            if !last {
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    emit(0, symbols, &children, &closures, &mut out);
    out
}
