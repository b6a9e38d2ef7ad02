use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn hs(s: &str) -> Vec<u8> {
    parse_smiles(s).unwrap().atoms.iter().map(|a| a.implicit_h).collect()
}

#[test]
fn methane() {
    let g = parse_smiles("C").unwrap();
    assert_eq!(g.num_atoms(), 1);
    assert!(g.bonds.is_empty());
    assert_eq!(g.atoms[0].implicit_h, 4);
}

#[test]
fn ethanol() {
    let g = parse_smiles("CCO").unwrap();
    assert_eq!(g.num_atoms(), 3);
    assert_eq!(g.bonds.len(), 2);
    assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
    assert_eq!(hs("CCO"), vec![3, 2, 1]);
}

#[test]
fn benzene() {
    let g = parse_smiles("c1ccccc1").unwrap();
    assert_eq!(g.num_atoms(), 6);
    assert_eq!(g.bonds.len(), 6);
    assert!(g.atoms.iter().all(|a| a.aromatic && a.element == Element::C));
    assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
    assert!(g.atoms.iter().all(|a| a.degree == 2 && a.implicit_h == 1));
}

#[test]
fn formic_acid_bonds() {
    let g = parse_smiles("C(=O)O").unwrap();
    assert_eq!(g.num_atoms(), 3);
    let mut orders: Vec<_> = g
        .bonds
        .iter()
        .map(|b| {
            assert_eq!(b.a, 0);
            (b.b, b.order)
        })
        .collect();
    orders.sort();
    assert_eq!(orders, vec![(1, BondOrder::Double), (2, BondOrder::Single)]);
    assert_eq!(hs("C(=O)O"), vec![1, 0, 1]);
}

#[test]
fn valence_table() {
    assert_eq!(hs("c1ccncc1"), vec![1, 1, 1, 0, 1, 1]);
    assert_eq!(hs("c1cc[nH]c1"), vec![1, 1, 1, 1, 1]);
    assert_eq!(hs("c1ccsc1"), vec![1, 1, 1, 0, 1]);
    assert_eq!(hs("CS(=O)C"), vec![3, 0, 0, 3]);
    assert_eq!(hs("CS(=O)(=O)C"), vec![3, 0, 0, 0, 3]);
    assert_eq!(hs("OP(=O)(O)O"), vec![1, 0, 0, 1, 1]);
    assert_eq!(hs("C#N"), vec![1, 0]);
    assert_eq!(hs("FC(Cl)(Br)I"), vec![0, 0, 0, 0, 0]);
    assert_eq!(hs("FC(Cl)Br"), vec![0, 1, 0, 0]);
    assert_eq!(hs("B(C)C"), vec![1, 3, 3]);
    // fused aromatic carbons carry no hydrogen
    assert_eq!(hs("c1ccc2ccccc2c1")[4], 1);
    assert_eq!(hs("c1ccc2ccccc2c1")[3], 0);
    assert_eq!(hs("Cc1ccccc1")[1], 0);
}

#[test]
fn bracket_atoms() {
    let g = parse_smiles("C[N+](=O)[O-]").unwrap();
    assert_eq!(g.atoms[1].formal_charge, 1);
    assert_eq!(g.atoms[3].formal_charge, -1);
    assert_eq!(g.atoms[1].implicit_h, 0);
    assert_eq!(g.atoms[1].explicit_h, Some(0));

    let g = parse_smiles("[13CH3][C@@H](N)C(=O)O").unwrap();
    assert_eq!(g.atoms[0].element, Element::C);
    assert_eq!(g.atoms[0].implicit_h, 3);
    assert_eq!(g.atoms[1].implicit_h, 1);

    let g = parse_smiles("[Fe+++]").unwrap();
    assert_eq!(g.atoms[0].element, Element::Other);
    assert_eq!(g.atoms[0].formal_charge, 2);
    assert_eq!(parse_smiles("[O-2]").unwrap().atoms[0].formal_charge, -2);
    assert_eq!(parse_smiles("[NH4+:7]").unwrap().atoms[0].implicit_h, 4);
    let se = parse_smiles("c1cc[se]c1").unwrap();
    assert!(se.atoms[3].aromatic && se.atoms[3].element == Element::Other);
    assert_eq!(parse_smiles("[Cl-]").unwrap().atoms[0].element, Element::Cl);
}

#[test]
fn stereo_bonds_are_single() {
    let g = parse_smiles("F/C=C/F").unwrap();
    let orders: Vec<_> = g.bonds.iter().map(|b| b.order).collect();
    assert_eq!(
        orders,
        vec![BondOrder::Single, BondOrder::Double, BondOrder::Single]
    );
}

#[test]
fn ring_closures() {
    let g = parse_smiles("C1CC%12CC1C%12").unwrap();
    assert_eq!(g.bonds.len(), 7);
    let g = parse_smiles("C=1CCCCC1").unwrap();
    assert!(g.bonds.iter().any(|b| b.order == BondOrder::Double && b.a == 0 && b.b == 5));
    // label reuse after closing
    let g = parse_smiles("C1CC1C1CC1").unwrap();
    assert_eq!(g.bonds.len(), 7);
}

#[test]
fn largest_fragment_is_kept() {
    let g = parse_smiles("[Na+].CC(=O)[O-]").unwrap();
    assert_eq!(g.num_atoms(), 4);
    assert!(g.atoms.iter().all(|a| a.element != Element::Other));
    assert_eq!(g.bonds.iter().map(|b| b.a.max(b.b)).max(), Some(3));
    assert_eq!(g.source_smiles, "[Na+].CC(=O)[O-]");
}

#[test]
fn parse_errors_carry_positions() {
    let pos = |s: &str| match parse_smiles(s) {
        Err(Error::Parse { pos, .. }) => pos,
        other => panic!("{s}: expected parse error, got {other:?}"),
    };
    assert_eq!(pos("CCX"), 2);
    assert_eq!(pos("C1CC"), 1);
    assert_eq!(pos("CC(C"), 2);
    assert_eq!(pos("CC)C"), 2);
    assert_eq!(pos("[Xx]"), 1);
    assert_eq!(pos("C[C"), 3);
    assert_eq!(pos("C="), 1);
    assert_eq!(pos(""), 0);
    assert_eq!(pos("C11"), 2);
    assert_eq!(pos("*C"), 0);
    assert_eq!(pos("C C"), 1);
}

#[test]
fn valence_overflow_warns_and_clamps() {
    let g = parse_smiles("C(C)(C)(C)(C)C").unwrap();
    assert!(g.valence_warning);
    assert_eq!(g.atoms[0].implicit_h, 0);
    assert!(!parse_smiles("CCO").unwrap().valence_warning);
    // aromatic deficits clamp silently
    let g = parse_smiles("O=c1cccc[nH]1").unwrap();
    assert!(!g.valence_warning);
    assert_eq!(g.atoms[1].implicit_h, 0);
}

#[test]
fn methane_features() {
    let f = featurize(&parse_smiles("C").unwrap());
    assert_eq!(f.h.shape(), &[1, NODE_DIM]);
    assert_eq!(f.e.shape(), &[0, EDGE_DIM]);
    let ones: Vec<usize> = (0..NODE_DIM).filter(|&j| f.h.at(0, j) == 1.0).collect();
    // C, degree 0, charge 0, four hydrogens
    assert_eq!(ones, vec![1, 11, 19, 27]);
    assert_eq!(f.h.data().iter().sum::<f64>(), 4.0);
}

#[test]
fn benzene_rows_identical() {
    let f = featurize(&parse_smiles("c1ccccc1").unwrap());
    for i in 1..6 {
        assert_eq!(f.h.row(i), f.h.row(0));
    }
    assert_eq!(f.h.at(0, 22), 1.0);
}

#[test]
fn double_bond_edge_rows() {
    let g = parse_smiles("C=C").unwrap();
    let f = featurize(&g);
    assert_eq!(f.e.shape(), &[2, EDGE_DIM]);
    for r in 0..2 {
        assert_eq!(f.e.row(r), &[0.0, 1.0, 0.0, 0.0]);
    }
    assert_eq!(g.edge_src, vec![0, 1]);
    assert_eq!(g.edge_dst, vec![1, 0]);
}

#[test]
fn one_hot_blocks_sum_to_one() {
    let blocks = [(0, 11), (11, 17), (17, 22), (23, 28)];
    for s in ["CC(=O)Nc1ccc(O)cc1", "[NH4+]", "C[N+](=O)[O-]", "ClC(Cl)(Cl)Cl", "c1ccc2[nH]ccc2c1"] {
        let f = featurize(&parse_smiles(s).unwrap());
        for i in 0..f.h.rows() {
            let row = f.h.row(i);
            for &(a, b) in &blocks {
                assert_eq!(row[a..b].iter().sum::<f64>(), 1.0, "{s} row {i}");
            }
            assert!(row[22] == 0.0 || row[22] == 1.0);
        }
        for i in 0..f.e.rows() {
            assert_eq!(f.e.row(i).iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn scaffold_examples() {
    let key = |s: &str| murcko_scaffold(&parse_smiles(s).unwrap());
    assert_eq!(key("CCCC"), "");
    assert_eq!(key("CC(=O)O"), "");
    let benzene = key("c1ccccc1");
    assert_eq!(benzene.len(), 64);
    assert_eq!(key("CCc1ccccc1"), benzene);
    assert_eq!(key("c1ccccc1"), benzene);
    // Kekulé spelling has different bond labels
    assert_ne!(key("C1=CC=CC=C1"), benzene);
    assert_ne!(key("c1ccncc1"), benzene);
    assert_ne!(key("C1CCCCC1"), benzene);
    // the linker between two rings is part of the framework
    let biphenyl_methane = key("c1ccccc1Cc1ccccc1");
    assert_ne!(biphenyl_methane, key("c1ccccc1-c1ccccc1"));
    assert_eq!(biphenyl_methane, key("CCc1ccc(Cc2ccccc2O)cc1"));
}

#[test]
fn scaffold_atoms_strip_side_chains() {
    let g = parse_smiles("CCc1ccc(CN)cc1").unwrap();
    let kept = scaffold_atoms(&g);
    assert_eq!(kept, vec![2, 3, 4, 5, 8, 9]);
    let ring = ring_bonds(&g);
    assert_eq!(ring.iter().filter(|&&r| r).count(), 6);
}

#[test]
fn batch_offsets() {
    let a = parse_smiles("CO").unwrap();
    let b = parse_smiles("CCN").unwrap();
    let (fa, fb) = (featurize(&a), featurize(&b));
    let batch = batch_graphs(&[(&a, &fa), (&b, &fb)]).unwrap();
    assert_eq!(batch.num_graphs(), 2);
    assert_eq!(batch.graph_id, vec![0, 0, 1, 1, 1]);
    assert_eq!(batch.edge_src, vec![0, 1, 2, 3, 3, 4]);
    assert_eq!(batch.edge_dst, vec![1, 0, 3, 2, 4, 3]);
    assert_eq!(batch.node_offsets, vec![0, 2, 5]);
    assert_eq!(batch.h.rows(), 5);
    assert_eq!(batch.e.rows(), 6);
    assert_eq!(batch.degrees(), vec![1, 1, 1, 2, 1]);

    let single = batch_graphs(&[(&b, &fb)]).unwrap();
    assert_eq!(single.h, fb.h);
    assert_eq!(single.e, fb.e);
    assert_eq!(single.edge_src, b.edge_src);
    assert!(single.graph_id.iter().all(|&g| g == 0));

    assert!(matches!(batch_graphs(&[]), Err(Error::Contract(_))));
}

#[test]
fn permuted_graph_keeps_structure() {
    let g = parse_smiles("CC(=O)N").unwrap();
    let p = g.permuted(&[3, 1, 0, 2]).unwrap();
    assert_eq!(p.atoms[3].implicit_h, 3);
    assert_eq!(p.atoms[1].degree, 3);
    assert_eq!(murcko_scaffold(&p), murcko_scaffold(&g));
    assert!(g.permuted(&[0, 0, 1, 2]).is_err());
}

fn substituent() -> impl Strategy<Value = String> {
    let atom = prop_oneof![
        Just("C"),
        Just("N"),
        Just("O"),
        Just("F"),
        Just("Cl"),
        Just("C(C)C"),
        Just("C(=O)O"),
        Just("C#N"),
        Just("S(=O)(=O)C"),
    ];
    prop::collection::vec(atom, 1..4).prop_map(|parts| parts.concat())
}

proptest! {
    #[test]
    fn decorated_benzene_keeps_scaffold(subs in prop::collection::vec(prop::option::of(substituent()), 6)) {
        let mut s = String::new();
        for (i, sub) in subs.iter().enumerate() {
            s.push('c');
            if i == 0 || i == 5 {
                s.push('1');
            }
            if let Some(sub) = sub {
                s.push('(');
                s.push_str(sub);
                s.push(')');
            }
        }
        let g = parse_smiles(&s).unwrap();
        prop_assert_eq!(murcko_scaffold(&g), murcko_scaffold(&parse_smiles("c1ccccc1").unwrap()));
    }

    #[test]
    fn edges_are_symmetric(idx in 0usize..8) {
        let smiles = ["CCO", "c1ccccc1", "CC(=O)Nc1ccc(O)cc1", "C1CC2CCC1CC2", "N#CC=C", "OCC(O)CO", "c1ccc2ncccc2c1", "[NH3+]CC([O-])=O"];
        let g = parse_smiles(smiles[idx]).unwrap();
        let f = featurize(&g);
        for k in 0..g.num_edges() {
            let twin = k ^ 1;
            prop_assert_eq!(g.edge_src[k], g.edge_dst[twin]);
            prop_assert_eq!(g.edge_dst[k], g.edge_src[twin]);
            prop_assert_eq!(f.e.row(k), f.e.row(twin));
        }
        for (i, a) in g.atoms.iter().enumerate() {
            let deg = g.edge_src.iter().filter(|&&s| s == i).count();
            prop_assert_eq!(a.degree as usize, deg);
        }
        prop_assert_eq!(parse_smiles(smiles[idx]).unwrap(), g);
    }
}
