use std::collections::HashMap;

use super::{Atom, Bond, BondOrder, Element, MolecularGraph};
use crate::error::{Error, Result};

const PERIODIC_TABLE: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Lowercase symbols allowed for aromatic bracket atoms.
const AROMATIC_BRACKET: &[&str] = &["b", "c", "n", "o", "p", "s", "se", "as", "te"];

struct Pending {
    atom: usize,
    order: Option<BondOrder>,
    pos: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Whether each atom was written inside brackets.
    bracket: Vec<bool>,
    rings: HashMap<u32, Pending>,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<()> {
        let mut prev: Option<usize> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut bond: Option<(BondOrder, usize)> = None;
        // set after '.', so the next atom starts a new fragment
        let mut dot = false;

        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || bond.is_some() {
                        return self.err(start, "branch must follow an atom");
                    }
                    branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branches.pop() else {
                        return self.err(start, "unmatched ')'");
                    };
                    if bond.is_some() {
                        return self.err(start, "bond before ')'");
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if bond.is_some() {
                        return self.err(start, "two consecutive bond symbols");
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => BondOrder::Single,
                    };
                    bond = Some((order, start));
                    self.pos += 1;
                }
                b'$' => return self.err(start, "quadruple bonds are not supported"),
                b'.' => {
                    if bond.is_some() || prev.is_none() {
                        return self.err(start, "misplaced '.'");
                    }
                    dot = true;
                    prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return self.err(start, "ring closure before any atom");
                    };
                    let label = self.ring_label()?;
                    let order = bond.take().map(|(o, _)| o);
                    self.ring_bond(atom, label, order, start)?;
                }
                _ => {
                    let idx = self.atom()?;
                    if let Some(p) = prev {
                        let order = match bond.take() {
                            Some((o, _)) => o,
                            None => self.default_order(p, idx),
                        };
                        self.add_bond(p, idx, order, start)?;
                    } else if let Some((_, bpos)) = bond {
                        return self.err(bpos, "bond has no preceding atom");
                    }
                    dot = false;
                    prev = Some(idx);
                }
            }
        }
        if let Some((_, bpos)) = bond {
            return self.err(bpos, "dangling bond at end of input");
        }
        if dot {
            return self.err(self.src.len(), "'.' at end of input");
        }
        if let Some((_, p)) = branches.pop() {
            return self.err(p, "unclosed '('");
        }
        if let Some(p) = self.rings.values().map(|r| r.pos).min() {
            return self.err(p, "unmatched ring closure");
        }
        if self.atoms.is_empty() {
            return self.err(0, "no atoms");
        }
        Ok(())
    }

    fn ring_label(&mut self) -> Result<u32> {
        let start = self.pos;
        if self.src[start] == b'%' {
            let digits = self.src.get(start + 1..start + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.err(start, "'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            Ok((self.src[start] - b'0') as u32)
        }
    }

    fn ring_bond(
        &mut self,
        atom: usize,
        label: u32,
        order: Option<BondOrder>,
        pos: usize,
    ) -> Result<()> {
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, Pending { atom, order, pos });
                Ok(())
            }
            Some(open) => {
                let order = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return self.err(pos, "conflicting ring-closure bond orders")
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, atom),
                };
                self.add_bond(open.atom, atom, order, pos)
            }
        }
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, pos: usize) -> Result<()> {
        if a == b {
            return self.err(pos, "atom bonded to itself");
        }
        let dup = self
            .bonds
            .iter()
            .any(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a));
        if dup {
            return self.err(pos, "duplicate bond between the same atoms");
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn push_atom(&mut self, atom: Atom, bracket: bool) -> usize {
        self.atoms.push(atom);
        self.bracket.push(bracket);
        self.atoms.len() - 1
    }

    fn atom(&mut self) -> Result<usize> {
        let start = self.pos;
        let c = self.src[start];
        if c == b'[' {
            return self.bracket_atom();
        }
        let two = self.src.get(start..start + 2);
        let (symbol, aromatic, len) = match (c, two) {
            (b'C', Some(b"Cl")) => ("Cl", false, 2),
            (b'B', Some(b"Br")) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.src[start..start + 1]).unwrap(), false, 1)
            }
            (b'b' | b'c' | b'n' | b'o' | b'p' | b's', _) => {
                (std::str::from_utf8(&self.src[start..start + 1]).unwrap(), true, 1)
            }
            _ => return self.err(start, format!("unexpected character {:?}", c as char)),
        };
        self.pos += len;
        let atom = Atom {
            element: Element::from_symbol(symbol),
            aromatic,
            formal_charge: 0,
            explicit_h: None,
            degree: 0,
            implicit_h: 0,
        };
        Ok(self.push_atom(atom, false))
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
    }

    fn bracket_atom(&mut self) -> Result<usize> {
        let open = self.pos;
        self.pos += 1;
        // isotope is accepted and dropped
        self.digits();

        let symbol = self.bracket_symbol()?;
        let aromatic = symbol.starts_with(|c: char| c.is_ascii_lowercase());

        while self.peek() == Some(b'@') {
            self.pos += 1;
            if let Some(rest) = self.src.get(self.pos..self.pos + 2) {
                if [b"TH", b"AL", b"SP", b"TB", b"OH"].iter().any(|t| rest == *t) {
                    self.pos += 2;
                    self.digits();
                }
            }
        }

        let mut explicit_h = 0;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            explicit_h = self.digits().unwrap_or(1);
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.digits() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }

        // atom-map class, discarded
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.digits().is_none() {
                return self.err(self.pos, "atom class needs digits");
            }
        }

        if self.peek() != Some(b']') {
            return self.err(self.pos.min(self.src.len()), format!("unterminated bracket atom opened at {open}"));
        }
        self.pos += 1;

        let element = Element::from_symbol(&symbol);
        let atom = Atom {
            element,
            aromatic,
            formal_charge: charge.clamp(-2, 2) as i8,
            explicit_h: Some(explicit_h as u8),
            degree: 0,
            implicit_h: 0,
        };
        Ok(self.push_atom(atom, true))
    }

    fn bracket_symbol(&mut self) -> Result<String> {
        let start = self.pos;
        let Some(c) = self.peek() else {
            return self.err(start, "unterminated bracket atom");
        };
        if c.is_ascii_lowercase() {
            for len in [2, 1] {
                if let Some(s) = self.src.get(start..start + len) {
                    let s = std::str::from_utf8(s).unwrap_or("");
                    if AROMATIC_BRACKET.contains(&s) {
                        self.pos += len;
                        return Ok(s.to_string());
                    }
                }
            }
            return self.err(start, "unknown aromatic atom symbol");
        }
        if !c.is_ascii_uppercase() {
            return self.err(start, format!("expected element symbol, found {:?}", c as char));
        }
        if let Some(s) = self.src.get(start..start + 2) {
            let s = std::str::from_utf8(s).unwrap_or("");
            if s.as_bytes()[1].is_ascii_lowercase() && PERIODIC_TABLE.contains(&s) {
                self.pos += 2;
                return Ok(s.to_string());
            }
        }
        let s = std::str::from_utf8(&self.src[start..start + 1]).unwrap();
        if PERIODIC_TABLE.contains(&s) {
            self.pos += 1;
            Ok(s.to_string())
        } else {
            self.err(start, format!("unknown element symbol {s:?}"))
        }
    }
}

/// Lowest-to-highest allowed valences for organic-subset atoms.
fn valences(element: Element) -> &'static [u32] {
    match element {
        Element::B => &[3],
        Element::C => &[4],
        Element::N | Element::P => &[3, 5],
        Element::O => &[2],
        Element::S => &[2, 4, 6],
        Element::F | Element::Cl | Element::Br | Element::I => &[1],
        Element::Other => &[],
    }
}

/// Fills degrees and implicit hydrogens; returns true when some atom's bonds
/// exceed every allowed valence.
fn assign_hydrogens(atoms: &mut [Atom], bonds: &[Bond], bracket: &[bool]) -> bool {
    let mut twice_sum = vec![0u32; atoms.len()];
    for b in bonds {
        let t = b.order.twice_valence();
        twice_sum[b.a] += t;
        twice_sum[b.b] += t;
        atoms[b.a].degree += 1;
        atoms[b.b].degree += 1;
    }
    let mut warning = false;
    for (i, atom) in atoms.iter_mut().enumerate() {
        if bracket[i] {
            atom.implicit_h = atom.explicit_h.unwrap_or(0);
            continue;
        }
        let used = twice_sum[i] / 2;
        let allowed = valences(atom.element);
        let h = if atom.aromatic {
            allowed.first().map_or(0, |&v| v.saturating_sub(used))
        } else {
            match allowed.iter().find(|&&v| v >= used) {
                Some(&v) => v - used,
                None => {
                    warning = true;
                    0
                }
            }
        };
        atom.implicit_h = h as u8;
    }
    warning
}

/// Keeps the connected component with the most atoms (the first on ties).
fn largest_fragment(atoms: Vec<Atom>, bonds: Vec<Bond>, bracket: Vec<bool>) -> (Vec<Atom>, Vec<Bond>, Vec<bool>) {
    let n = atoms.len();
    let mut comp = vec![usize::MAX; n];
    let mut adj = vec![Vec::new(); n];
    for b in &bonds {
        adj[b.a].push(b.b);
        adj[b.b].push(b.a);
    }
    let mut sizes = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![s];
        comp[s] = id;
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    if sizes.len() == 1 {
        return (atoms, bonds, bracket);
    }
    let best = (0..sizes.len())
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut remap = vec![usize::MAX; n];
    let mut kept_atoms = Vec::new();
    let mut kept_bracket = Vec::new();
    for (i, (atom, br)) in atoms.into_iter().zip(bracket).enumerate() {
        if comp[i] == best {
            remap[i] = kept_atoms.len();
            kept_atoms.push(atom);
            kept_bracket.push(br);
        }
    }
    let kept_bonds = bonds
        .into_iter()
        .filter(|b| comp[b.a] == best)
        .map(|b| Bond {
            a: remap[b.a],
            b: remap[b.b],
            order: b.order,
        })
        .collect();
    (kept_atoms, kept_bonds, kept_bracket)
}

/// Parses a SMILES string into a molecular graph.
///
/// Supports the organic subset, aromatic atoms, bracket atoms (isotope,
/// chirality and atom class are read and dropped), branches, ring closures
/// (`1`-`9`, `%nn`) and `.`-separated fragments, of which only the largest
/// is kept.
pub fn parse_smiles(s: &str) -> Result<MolecularGraph> {
    if s.is_empty() {
        return Err(Error::Parse {
            pos: 0,
            msg: "empty SMILES".into(),
        });
    }
    if let Some(pos) = s.bytes().position(|c| !c.is_ascii() || c.is_ascii_whitespace()) {
        return Err(Error::Parse {
            pos,
            msg: "non-ASCII or whitespace character".into(),
        });
    }
    let mut p = Parser {
        src: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        bracket: Vec::new(),
        rings: HashMap::new(),
    };
    p.run()?;
    let (mut atoms, bonds, bracket) = largest_fragment(p.atoms, p.bonds, p.bracket);
    let valence_warning = assign_hydrogens(&mut atoms, &bonds, &bracket);
    Ok(MolecularGraph::from_parts(atoms, bonds, s.to_string(), valence_warning))
}
