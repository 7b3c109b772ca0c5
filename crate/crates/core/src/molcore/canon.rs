//! Canonical SMILES for trees.
//!
//! Each atom gets a rooted code: its symbol followed by its child branches,
//! where a branch is the bond symbol plus the child's code. Branches are
//! sorted lexicographically; all but the last are parenthesized. Codes are
//! refined bottom-up from the leaves, so equal codes mean isomorphic rooted
//! subtrees. The whole molecule is rooted at its centroid; with two centroids
//! the smaller string wins.

use super::MolGraph;

fn bond_symbol(order: u8) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

/// Rooted code of the subtree hanging from `root`, truncated at `depth`
/// bonds when given. Used for both canonical SMILES and fingerprint
/// environments.
pub fn rooted_code(mol: &MolGraph, root: usize, depth: Option<usize>) -> String {
    code_from(mol, root, usize::MAX, depth)
}

fn code_from(mol: &MolGraph, v: usize, parent: usize, depth: Option<usize>) -> String {
    let mut out = String::from(mol.element(v).symbol());
    if depth == Some(0) {
        return out;
    }
    let next = depth.map(|d| d - 1);
    let mut branches: Vec<String> = mol
        .neighbors(v)
        .iter()
        .filter(|&&(w, _)| w != parent)
        .map(|&(w, order)| {
            let mut b = String::from(bond_symbol(order));
            b.push_str(&code_from(mol, w, v, next));
            b
        })
        .collect();
    branches.sort_unstable();
    if let Some(last) = branches.pop() {
        for b in &branches {
            out.push('(');
            out.push_str(b);
            out.push(')');
        }
        out.push_str(&last);
    }
    out
}

/// One or two centroids of a tree.
fn centroids(mol: &MolGraph) -> Vec<usize> {
    let n = mol.num_atoms();
    if n <= 2 {
        return (0..n).collect();
    }
    // Iterative DFS order from atom 0, then subtree sizes in reverse.
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0];
    parent[0] = 0;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &(w, _) in mol.neighbors(v) {
            if parent[w] == usize::MAX {
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let mut size = vec![1usize; n];
    for &v in order.iter().rev() {
        if v != 0 {
            size[parent[v]] += size[v];
        }
    }
    let mut best = Vec::new();
    let mut best_max = usize::MAX;
    for v in 0..n {
        let mut largest = n - size[v];
        for &(w, _) in mol.neighbors(v) {
            if parent[w] == v {
                largest = largest.max(size[w]);
            }
        }
        match largest.cmp(&best_max) {
            std::cmp::Ordering::Less => {
                best_max = largest;
                best.clear();
                best.push(v);
            }
            std::cmp::Ordering::Equal => best.push(v),
            std::cmp::Ordering::Greater => {}
        }
    }
    best
}

pub fn canonical_smiles(mol: &MolGraph) -> String {
    centroids(mol)
        .into_iter()
        .map(|c| rooted_code(mol, c, None))
        .min()
        .expect("a molecule has at least one atom")
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    fn canon(s: &str) -> String {
        canonical_smiles(&parse_smiles(s).unwrap())
    }

    #[test]
    fn branch_order_does_not_matter() {
        assert_eq!(canon("C(N)O"), canon("C(O)N"));
        assert_eq!(canon("O"), "O");
    }

    #[test]
    fn known_forms() {
        assert_eq!(canon("CN"), "CN");
        assert_eq!(canon("NC"), "CN");
        assert_eq!(canon("ClC"), "CCl");
        assert_eq!(canon("ON"), "NO");
        assert_eq!(canon("C(=O)(C)N"), "C(=O)(C)N");
        assert_eq!(canon("CCCC"), canon("C(C)CC"));
    }

    #[test]
    fn distinguishes_bond_orders() {
        assert_ne!(canon("C=CC"), canon("CCC"));
        assert_ne!(canon("C=CCN"), canon("CC=CN"));
    }

    #[test]
    fn centroid_of_path_and_star() {
        let path = parse_smiles("CCCCC").unwrap();
        assert_eq!(centroids(&path), vec![2]);
        let even = parse_smiles("CCCC").unwrap();
        assert_eq!(centroids(&even), vec![1, 2]);
        let star = parse_smiles("C(C)(C)(C)C").unwrap();
        assert_eq!(centroids(&star), vec![0]);
    }

    #[test]
    fn truncated_codes() {
        let g = parse_smiles("CC(Cl)N").unwrap();
        assert_eq!(rooted_code(&g, 1, Some(0)), "C");
        assert_eq!(rooted_code(&g, 1, Some(1)), "C(C)(Cl)N");
        assert_eq!(rooted_code(&g, 0, Some(1)), "CC");
        assert_eq!(rooted_code(&g, 0, Some(2)), "CC(Cl)N");
    }
}
