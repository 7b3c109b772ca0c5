mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crebm::molcore::{morgan_fingerprint, parse_smiles, tanimoto, MolGraph};

use common::{isomorphic, random_permutation, random_tree};

fn tree_and_perm(max_atoms: usize) -> impl Strategy<Value = (MolGraph, Vec<usize>)> {
    (1..=max_atoms, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_tree(&mut rng, n);
        let p = random_permutation(&mut rng, n);
        (g, p)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn canonical_ignores_atom_order((g, perm) in tree_and_perm(10)) {
        prop_assert_eq!(g.canonical(), g.permuted(&perm).canonical());
    }

    #[test]
    fn canonical_parses_back_to_same_graph((g, _) in tree_and_perm(8)) {
        let s = g.canonical();
        let back = parse_smiles(&s).unwrap();
        prop_assert!(isomorphic(&g, &back), "{} lost structure", s);
        prop_assert_eq!(back.canonical(), s);
    }

    #[test]
    fn canonical_equality_matches_isomorphism(
        (a, _) in tree_and_perm(5),
        (b, _) in tree_and_perm(5),
    ) {
        prop_assert_eq!(a.canonical() == b.canonical(), isomorphic(&a, &b));
    }

    #[test]
    fn fingerprint_ignores_atom_order((g, perm) in tree_and_perm(12)) {
        let a = morgan_fingerprint(&g, 2, 256);
        let b = morgan_fingerprint(&g.permuted(&perm), 2, 256);
        prop_assert_eq!(a.bits(), b.bits());
        prop_assert_eq!(tanimoto(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_is_symmetric_and_bounded((a, _) in tree_and_perm(9), (b, _) in tree_and_perm(9)) {
        let fa = morgan_fingerprint(&a, 2, 128);
        let fb = morgan_fingerprint(&b, 2, 128);
        let s = tanimoto(&fa, &fb).unwrap();
        prop_assert_eq!(s, tanimoto(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn mismatched_fingerprint_widths_are_rejected() {
    let g = parse_smiles("CCO").unwrap();
    assert!(tanimoto(
        &morgan_fingerprint(&g, 2, 64),
        &morgan_fingerprint(&g, 2, 128)
    )
    .is_err());
}
