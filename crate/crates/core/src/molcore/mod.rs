//! Acyclic molecular graphs over a small element alphabet.
//!
//! Molecules are trees: hydrogens, charges, stereo and rings are not
//! represented. Everything downstream (rules, fingerprints, routes) keys
//! molecules by their canonical SMILES string.

mod canon;
mod fingerprint;
mod smiles;

pub use canon::{canonical_smiles, rooted_code};
pub use fingerprint::{
    fingerprint_union, morgan_fingerprint, tanimoto, Fingerprint, FingerprintError,
};
pub use smiles::{parse_smiles, ParseError};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radius and width of the circular fingerprints used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintConfig {
    pub radius: usize,
    pub nbits: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            nbits: 1024,
        }
    }
}

impl FingerprintConfig {
    pub fn of(&self, mol: &MolGraph) -> Fingerprint {
        morgan_fingerprint(mol, self.radius, self.nbits)
    }
}

/// Element labels of the supported alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| format!("unknown element symbol {s:?}"))
    }
}

/// Violations of the tree invariant when assembling a graph by hand.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("expected {expected} bonds for {atoms} atoms, got {got}")]
    BondCount {
        atoms: usize,
        expected: usize,
        got: usize,
    },
    #[error("bond ({0}, {1}) references an atom out of range")]
    OutOfRange(usize, usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("bond order {0} not in 1..=3")]
    BondOrder(u8),
    #[error("graph is not connected")]
    Disconnected,
}

/// A connected acyclic labeled graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Element>,
    bonds: Vec<(usize, usize, u8)>,
    adj: Vec<Vec<(usize, u8)>>,
}

impl MolGraph {
    pub fn new(atoms: Vec<Element>, bonds: Vec<(usize, usize, u8)>) -> Result<Self, GraphError> {
        let n = atoms.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if bonds.len() != n - 1 {
            return Err(GraphError::BondCount {
                atoms: n,
                expected: n - 1,
                got: bonds.len(),
            });
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b, order) in &bonds {
            if a >= n || b >= n {
                return Err(GraphError::OutOfRange(a, b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !(1..=3).contains(&order) {
                return Err(GraphError::BondOrder(order));
            }
            if adj[a].iter().any(|&(x, _)| x == b) {
                return Err(GraphError::DuplicateBond(a, b));
            }
            adj[a].push((b, order));
            adj[b].push((a, order));
        }
        // n-1 edges plus connectivity implies a tree.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        if count != n {
            return Err(GraphError::Disconnected);
        }
        Ok(Self { atoms, bonds, adj })
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[(usize, usize, u8)] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, u8)] {
        &self.adj[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adj[atom].len()
    }

    pub fn element(&self, atom: usize) -> Element {
        self.atoms[atom]
    }

    pub fn canonical(&self) -> String {
        canonical_smiles(self)
    }

    /// Returns a copy with atoms renumbered: atom `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        let n = self.atoms.len();
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let mut atoms = vec![Element::C; n];
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|&(a, b, o)| (perm[a], perm[b], o))
            .collect();
        MolGraph::new(atoms, bonds).expect("permutation preserves the tree invariant")
    }

    /// Splits the graph at the bond between `a` and `b`, returning the
    /// component containing `a` and the one containing `b`, each rooted at the
    /// atom that lost the bond.
    pub(crate) fn split_at(&self, a: usize, b: usize) -> (Fragment, Fragment) {
        (self.component_without(a, b), self.component_without(b, a))
    }

    fn component_without(&self, start: usize, blocked: usize) -> Fragment {
        let n = self.atoms.len();
        let mut map = vec![usize::MAX; n];
        let mut order = vec![start];
        map[start] = 0;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            for &(w, _) in &self.adj[v] {
                if (v == start && w == blocked) || map[w] != usize::MAX {
                    continue;
                }
                map[w] = order.len();
                order.push(w);
            }
        }
        let atoms = order.iter().map(|&v| self.atoms[v]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|&&(x, y, _)| map[x] != usize::MAX && map[y] != usize::MAX)
            .map(|&(x, y, o)| (map[x], map[y], o))
            .collect();
        Fragment {
            atoms,
            bonds,
            root: 0,
        }
    }
}

/// Raw pieces of a molecule under construction; `root` marks an atom of
/// interest (the attachment point after a split).
#[derive(Debug, Clone)]
pub(crate) struct Fragment {
    pub atoms: Vec<Element>,
    pub bonds: Vec<(usize, usize, u8)>,
    pub root: usize,
}

impl Fragment {
    /// Attaches a new atom to `at` with the given bond order and returns its index.
    pub fn attach(&mut self, at: usize, element: Element, order: u8) -> usize {
        self.atoms.push(element);
        let idx = self.atoms.len() - 1;
        self.bonds.push((at, idx, order));
        idx
    }

    pub fn into_graph(self) -> MolGraph {
        MolGraph::new(self.atoms, self.bonds).expect("fragment operations keep the tree invariant")
    }
}

impl FromStr for MolGraph {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_smiles(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_cycles_and_bad_counts() {
        use Element::*;
        assert_eq!(
            MolGraph::new(vec![C, C, C], vec![(0, 1, 1), (1, 2, 1), (2, 0, 1)]),
            Err(GraphError::BondCount {
                atoms: 3,
                expected: 2,
                got: 3
            })
        );
        assert_eq!(
            MolGraph::new(vec![C, C, C, C], vec![(0, 1, 1), (1, 0, 2), (2, 3, 1)]),
            Err(GraphError::DuplicateBond(1, 0))
        );
        assert_eq!(
            MolGraph::new(vec![C, C], vec![(0, 0, 1)]),
            Err(GraphError::SelfLoop(0))
        );
        assert_eq!(MolGraph::new(vec![], vec![]), Err(GraphError::Empty));
    }

    #[test]
    fn split_produces_two_trees() {
        let g = parse_smiles("CC(Cl)N").unwrap();
        // bond C1-N3
        let (left, right) = g.split_at(1, 3);
        assert_eq!(left.atoms.len(), 3);
        assert_eq!(right.atoms.len(), 1);
        assert_eq!(left.into_graph().canonical(), "C(C)Cl");
        assert_eq!(right.into_graph().canonical(), "N");
    }

    #[test]
    fn element_roundtrip() {
        for e in Element::ALL {
            assert_eq!(e.symbol().parse::<Element>().unwrap(), e);
        }
        assert!("Xe".parse::<Element>().is_err());
    }
}
