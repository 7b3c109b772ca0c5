#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crebm::crebm::{bt_loss_and_grad, EnergyModel, FeaturePair, RouteFeatures};
use crebm::molcore::{Element, MolGraph};
use crebm::proposer::OneStepModel;
use crebm::rxn::{generate_benchmark, Benchmark, BenchmarkConfig};

pub const ELEMENTS: [Element; 9] = [
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

/// Uniform random labeled tree: atom `i > 0` hangs off a random earlier atom.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> MolGraph {
    let atoms = (0..n)
        .map(|_| ELEMENTS[rng.gen_range(0..ELEMENTS.len())])
        .collect();
    let bonds = (1..n)
        .map(|i| (rng.gen_range(0..i), i, rng.gen_range(1..=3u8)))
        .collect();
    MolGraph::new(atoms, bonds).expect("random tree is valid")
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn bond_order(m: &MolGraph, a: usize, b: usize) -> Option<u8> {
    m.neighbors(a)
        .iter()
        .find(|(n, _)| *n == b)
        .map(|&(_, o)| o)
}

/// Searches for an atom bijection preserving elements, bonds and bond
/// orders by extending partial permutations one atom at a time.
pub fn isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    let n = a.num_atoms();
    if n != b.num_atoms() || a.bonds().len() != b.bonds().len() {
        return false;
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    fn extend(a: &MolGraph, b: &MolGraph, i: usize, map: &mut [usize], used: &mut [bool]) -> bool {
        if i == a.num_atoms() {
            return true;
        }
        for j in 0..b.num_atoms() {
            if used[j] || a.element(i) != b.element(j) || a.degree(i) != b.degree(j) {
                continue;
            }
            let consistent = (0..i).all(|k| bond_order(a, i, k) == bond_order(b, j, map[k]));
            if !consistent {
                continue;
            }
            map[i] = j;
            used[j] = true;
            if extend(a, b, i + 1, map, used) {
                return true;
            }
            used[j] = false;
        }
        false
    }
    extend(a, b, 0, &mut map, &mut used)
}

/// A small network: at most a few hundred molecules and targets of depth
/// two or three.
pub fn micro_config() -> BenchmarkConfig {
    BenchmarkConfig {
        num_rules: 12,
        inventory_size: 40,
        molecule_budget: 80,
        max_depth: 3,
        max_atoms: 22,
        variants_per_skeleton: 2,
        ..BenchmarkConfig::default()
    }
}

pub fn micro_benchmark(seed: u64) -> Benchmark {
    generate_benchmark(&micro_config(), seed).expect("micro benchmark generates")
}

/// Log probabilities of every complete route for `mol`, enumerated
/// explicitly. A molecule is expanded only at step depth `depth <=
/// max_depth`, with the model's top `k` outcomes; reactants may not repeat
/// a molecule on their own root path.
pub fn enumerate_route_logps(
    model: &OneStepModel,
    inventory: &BTreeSet<String>,
    mol: &str,
    depth: usize,
    max_depth: usize,
    k: usize,
    path: &mut Vec<String>,
) -> Vec<f64> {
    if depth > max_depth {
        return Vec::new();
    }
    let graph: MolGraph = mol.parse().expect("canonical smiles parses");
    path.push(mol.to_string());
    let mut out = Vec::new();
    for p in model.propose_topk(&graph, k) {
        let members = p.reactants.members();
        if members.iter().any(|m| path.contains(m)) {
            continue;
        }
        let mut partial = vec![p.logp];
        for m in members {
            if inventory.contains(m) {
                continue;
            }
            let sub = enumerate_route_logps(model, inventory, m, depth + 1, max_depth, k, path);
            partial = partial
                .iter()
                .flat_map(|a| sub.iter().map(move |b| a + b))
                .collect();
            if partial.is_empty() {
                break;
            }
        }
        out.extend(partial);
    }
    path.pop();
    out
}

pub fn random_features(rng: &mut impl Rng, nbits: usize) -> RouteFeatures {
    let mut active: Vec<u32> = (0..2 * nbits as u32)
        .filter(|_| rng.gen_bool(0.15))
        .collect();
    active.sort_unstable();
    RouteFeatures {
        active,
        dense: [
            rng.gen_range(0.0..1.0),
            rng.gen_range(1..=8) as f64 / 8.0,
            rng.gen_range(1..=6) as f64 / 8.0,
        ],
    }
}

pub fn random_pairs(rng: &mut impl Rng, nbits: usize, n: usize) -> Vec<FeaturePair> {
    (0..n)
        .map(|_| FeaturePair {
            winner: random_features(rng, nbits),
            loser: random_features(rng, nbits),
        })
        .collect()
}

/// Largest relative gap between the analytic gradient and central finite
/// differences of the loss. Components where both magnitudes are below
/// `floor` are compared against `floor`.
pub fn max_fd_relative_error(
    model: &EnergyModel,
    pairs: &[FeaturePair],
    lambda: f64,
    step: f64,
    floor: f64,
) -> f64 {
    let (_, analytic) = bt_loss_and_grad(model, pairs, lambda).expect("non-empty batch");
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let (up, _) = bt_loss_and_grad(&probe, pairs, lambda).unwrap();
        probe.params[i] = orig - step;
        let (down, _) = bt_loss_and_grad(&probe, pairs, lambda).unwrap();
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// One-step model with weights drawn uniformly from `[-scale, scale)`.
pub fn random_onestep(bench: &Benchmark, rng: &mut impl Rng, scale: f64) -> OneStepModel {
    use crebm::molcore::FingerprintConfig;
    use crebm::proposer::OneStepCheckpoint;
    let fp = FingerprintConfig::default();
    let ckpt = OneStepCheckpoint {
        radius: fp.radius,
        nbits: fp.nbits,
        rule_ids: bench.rules.iter().map(|r| r.id.clone()).collect(),
        weights: bench
            .rules
            .iter()
            .map(|_| {
                (0..fp.nbits)
                    .map(|_| rng.gen_range(-scale..scale))
                    .collect()
            })
            .collect(),
        bias: bench
            .rules
            .iter()
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    };
    OneStepModel::from_checkpoint(ckpt, &bench.rules).expect("checkpoint matches rules")
}

/// Tries every atom permutation of `a` until one reproduces `b` exactly.
pub fn isomorphic_by_permutation(a: &MolGraph, b: &MolGraph) -> bool {
    let n = a.num_atoms();
    if n != b.num_atoms() {
        return false;
    }
    let norm = |bonds: &[(usize, usize, u8)]| {
        let mut v: Vec<(usize, usize, u8)> = bonds
            .iter()
            .map(|&(x, y, o)| (x.min(y), x.max(y), o))
            .collect();
        v.sort_unstable();
        v
    };
    let target_bonds = norm(b.bonds());
    let mut perm: Vec<usize> = (0..n).collect();
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let matches = |perm: &[usize]| {
        let p = a.permuted(perm);
        p.atoms() == b.atoms() && norm(p.bonds()) == target_bonds
    };
    if matches(&perm) {
        return true;
    }
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            if matches(&perm) {
                return true;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    false
}
