//! Bond-split reaction rules.
//!
//! A rule `(A, B, order, cap_a, cap_b)` runs backwards by cutting an
//! `A-B` bond of the given order and capping the two fragments with
//! `cap_a` (on the `A` atom) and `cap_b` (on the `B` atom). Forwards it
//! removes one terminal `cap_a` sitting on an `A` atom and one terminal
//! `cap_b` sitting on a `B` atom and joins the two atoms.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molcore::{Element, Fragment, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReactionRule {
    pub id: String,
    pub bond: (Element, Element, u8),
    pub cap_a: Element,
    pub cap_b: Element,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RxnError {
    #[error("forward reactions take exactly 2 reactants, got {0}")]
    Arity(usize),
    #[error("unknown rule id {0:?}")]
    UnknownRule(String),
}

/// Two reactants as sorted canonical SMILES. Sets compare lexicographically
/// over their sorted members.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReactantSet(Vec<String>);

impl ReactantSet {
    pub fn new(mut members: Vec<String>) -> Self {
        members.sort();
        Self(members)
    }

    pub fn members(&self) -> &[String] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<String> {
        self.0
    }

    pub fn key(&self) -> String {
        self.0.join(".")
    }
}

impl ReactionRule {
    /// Equivalence up to swapping the two sides of the pattern.
    pub fn same_chemistry(&self, other: &ReactionRule) -> bool {
        let (a, b, o) = self.bond;
        let (c, d, p) = other.bond;
        o == p
            && ((a == c && b == d && self.cap_a == other.cap_a && self.cap_b == other.cap_b)
                || (a == d && b == c && self.cap_a == other.cap_b && self.cap_b == other.cap_a))
    }
}

/// Terminal `cap` atoms singly bonded to an atom of `anchor` element, as
/// `(cap atom, anchor atom)` pairs.
fn cap_sites(mol: &MolGraph, cap: Element, anchor: Element) -> Vec<(usize, usize)> {
    (0..mol.num_atoms())
        .filter(|&i| mol.element(i) == cap && mol.degree(i) == 1)
        .filter_map(|i| {
            let (n, order) = mol.neighbors(i)[0];
            (order == 1 && mol.element(n) == anchor).then_some((i, n))
        })
        .collect()
}

pub(crate) fn has_site(mol: &MolGraph, cap: Element, anchor: Element) -> bool {
    !cap_sites(mol, cap, anchor).is_empty()
}

fn join(
    x: &MolGraph,
    x_cap: usize,
    x_anchor: usize,
    y: &MolGraph,
    y_cap: usize,
    y_anchor: usize,
    order: u8,
) -> MolGraph {
    let mut atoms = Vec::with_capacity(x.num_atoms() + y.num_atoms() - 2);
    let mut xmap = vec![usize::MAX; x.num_atoms()];
    for i in 0..x.num_atoms() {
        if i != x_cap {
            xmap[i] = atoms.len();
            atoms.push(x.element(i));
        }
    }
    let mut ymap = vec![usize::MAX; y.num_atoms()];
    for i in 0..y.num_atoms() {
        if i != y_cap {
            ymap[i] = atoms.len();
            atoms.push(y.element(i));
        }
    }
    let mut bonds = Vec::with_capacity(atoms.len() - 1);
    for &(a, b, o) in x.bonds() {
        if a != x_cap && b != x_cap {
            bonds.push((xmap[a], xmap[b], o));
        }
    }
    for &(a, b, o) in y.bonds() {
        if a != y_cap && b != y_cap {
            bonds.push((ymap[a], ymap[b], o));
        }
    }
    bonds.push((xmap[x_anchor], ymap[y_anchor], order));
    MolGraph::new(atoms, bonds).expect("joining two trees by one bond yields a tree")
}

/// Smallest canonical product over all cap-site pairings with `x` donating
/// the `A` side and `y` the `B` side.
fn forward_directed(rule: &ReactionRule, x: &MolGraph, y: &MolGraph) -> Option<(String, MolGraph)> {
    let (a, b, order) = rule.bond;
    let xs = cap_sites(x, rule.cap_a, a);
    if xs.is_empty() {
        return None;
    }
    let ys = cap_sites(y, rule.cap_b, b);
    let mut best: Option<(String, MolGraph)> = None;
    for &(xc, xa) in &xs {
        for &(yc, ya) in &ys {
            let p = join(x, xc, xa, y, yc, ya, order);
            let key = p.canonical();
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, p));
            }
        }
    }
    best
}

pub(crate) fn forward_with_key(
    rule: &ReactionRule,
    x: &MolGraph,
    y: &MolGraph,
) -> Option<(String, MolGraph)> {
    let first = forward_directed(rule, x, y);
    let second = forward_directed(rule, y, x);
    match (first, second) {
        (Some(p), Some(q)) => Some(if q.0 < p.0 { q } else { p }),
        (p, q) => p.or(q),
    }
}

/// Forward application Φ. When several cap pairings exist the product with
/// the smallest canonical SMILES is returned.
pub fn apply_forward_rule(
    rule: &ReactionRule,
    reactants: &[MolGraph],
) -> Result<Option<MolGraph>, RxnError> {
    if reactants.len() != 2 {
        return Err(RxnError::Arity(reactants.len()));
    }
    Ok(forward_with_key(rule, &reactants[0], &reactants[1]).map(|(_, g)| g))
}

/// Retro application Ψ for one rule: every matching bond, in either
/// orientation, cut and capped. Reactant sets whose forward application
/// would not give back `product` (another cap site on the same reactant
/// wins the smallest-product tie-break) are dropped, so every returned set
/// round-trips. Sorted, deduplicated.
pub fn apply_retro_rule(rule: &ReactionRule, product: &MolGraph) -> Vec<ReactantSet> {
    retro_with_graphs(rule, product, &product.canonical())
        .into_iter()
        .map(|(set, _)| set)
        .collect()
}

pub(crate) fn retro_with_graphs(
    rule: &ReactionRule,
    product: &MolGraph,
    product_key: &str,
) -> Vec<(ReactantSet, [MolGraph; 2])> {
    let (ea, eb, order) = rule.bond;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &(i, j, o) in product.bonds() {
        if o != order {
            continue;
        }
        let (ei, ej) = (product.element(i), product.element(j));
        let mut orientations = Vec::with_capacity(2);
        if ei == ea && ej == eb {
            orientations.push((i, j));
        }
        if ej == ea && ei == eb {
            orientations.push((j, i));
        }
        for (a_atom, b_atom) in orientations {
            let (mut fa, mut fb): (Fragment, Fragment) = product.split_at(a_atom, b_atom);
            let ra = fa.root;
            fa.attach(ra, rule.cap_a, 1);
            let rb = fb.root;
            fb.attach(rb, rule.cap_b, 1);
            let (ga, gb) = (fa.into_graph(), fb.into_graph());
            let set = ReactantSet::new(vec![ga.canonical(), gb.canonical()]);
            if !seen.insert(set.clone()) {
                continue;
            }
            let roundtrip = forward_with_key(rule, &ga, &gb);
            if roundtrip.is_some_and(|(k, _)| k == product_key) {
                out.push((set, [ga, gb]));
            }
        }
    }
    out.sort_by(|x, y| x.0.cmp(&y.0));
    out
}
