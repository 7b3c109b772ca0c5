//! Exact, breadth-limited forward simulation standing in for a learned
//! forward model.

use std::collections::{BTreeMap, BTreeSet};

use crate::molcore::{morgan_fingerprint, tanimoto, Element, FingerprintConfig, MolGraph};

use super::rule::{forward_with_key, has_site, ReactionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardSearch {
    pub depth_limit: usize,
    pub width: usize,
}

impl Default for ForwardSearch {
    fn default() -> Self {
        Self {
            depth_limit: 6,
            width: 48,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutcome {
    pub product: MolGraph,
    pub canonical: String,
    pub similarity: f64,
}

struct PoolEntry {
    graph: MolGraph,
    sim: f64,
    sites: BTreeSet<(Element, Element)>,
}

impl PoolEntry {
    fn new(graph: MolGraph, sim: f64, rules: &[ReactionRule]) -> Self {
        let mut sites = BTreeSet::new();
        for r in rules {
            for (cap, anchor) in [(r.cap_a, r.bond.0), (r.cap_b, r.bond.1)] {
                if !sites.contains(&(cap, anchor)) && has_site(&graph, cap, anchor) {
                    sites.insert((cap, anchor));
                }
            }
        }
        Self { graph, sim, sites }
    }
}

/// Level-by-level forward search from `materials`.
///
/// Each level applies every rule to every unordered pair from the pool
/// (materials plus everything kept so far) that involves at least one
/// molecule added in the previous level. Products larger than the target are
/// discarded since joins never shrink a molecule. At most `width` new
/// products per level are kept, ranked by Tanimoto similarity to the target.
/// Returns the pool member most similar to the target. Similarity ties go to
/// the target itself when it is reachable (distinct molecules can share a
/// fingerprint), then to the smaller canonical SMILES.
pub fn forward_oracle(
    rules: &[ReactionRule],
    materials: &[MolGraph],
    target: &MolGraph,
    search: ForwardSearch,
    fp: FingerprintConfig,
) -> ForwardOutcome {
    assert!(
        !materials.is_empty(),
        "forward search needs at least one material"
    );
    let target_fp = morgan_fingerprint(target, fp.radius, fp.nbits);
    let sim_to_target = |g: &MolGraph| {
        tanimoto(&morgan_fingerprint(g, fp.radius, fp.nbits), &target_fp)
            .expect("same fingerprint width")
    };
    let max_atoms = target.num_atoms();
    let target_key = target.canonical();
    // Best first: higher similarity, then the target itself, then the smaller key.
    let rank = |sa: f64, ka: &String, sb: f64, kb: &String| {
        sb.total_cmp(&sa)
            .then_with(|| (*kb == target_key).cmp(&(*ka == target_key)))
            .then_with(|| ka.cmp(kb))
    };

    let mut pool: BTreeMap<String, PoolEntry> = BTreeMap::new();
    for m in materials {
        pool.entry(m.canonical())
            .or_insert_with(|| PoolEntry::new(m.clone(), sim_to_target(m), rules));
    }
    let mut fresh: BTreeSet<String> = pool.keys().cloned().collect();

    for _ in 0..search.depth_limit {
        let keys: Vec<&String> = pool.keys().collect();
        let entries: Vec<&PoolEntry> = pool.values().collect();
        let is_fresh: Vec<bool> = keys.iter().map(|k| fresh.contains(*k)).collect();
        let mut candidates: BTreeMap<String, MolGraph> = BTreeMap::new();
        for rule in rules {
            let a_site = (rule.cap_a, rule.bond.0);
            let b_site = (rule.cap_b, rule.bond.1);
            for i in 0..entries.len() {
                for j in i..entries.len() {
                    if !(is_fresh[i] || is_fresh[j]) {
                        continue;
                    }
                    let (x, y) = (entries[i], entries[j]);
                    if x.graph.num_atoms() + y.graph.num_atoms() - 2 > max_atoms {
                        continue;
                    }
                    let fits = (x.sites.contains(&a_site) && y.sites.contains(&b_site))
                        || (y.sites.contains(&a_site) && x.sites.contains(&b_site));
                    if !fits {
                        continue;
                    }
                    if let Some((key, g)) = forward_with_key(rule, &x.graph, &y.graph) {
                        if !pool.contains_key(&key) {
                            candidates.entry(key).or_insert(g);
                        }
                    }
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let mut ranked: Vec<(f64, String, MolGraph)> = candidates
            .into_iter()
            .map(|(k, g)| (sim_to_target(&g), k, g))
            .collect();
        ranked.sort_by(|a, b| rank(a.0, &a.1, b.0, &b.1));
        ranked.truncate(search.width);
        fresh.clear();
        for (sim, key, g) in ranked {
            fresh.insert(key.clone());
            pool.insert(key, PoolEntry::new(g, sim, rules));
        }
    }

    let (key, best) = pool
        .iter()
        .min_by(|a, b| rank(a.1.sim, a.0, b.1.sim, b.0))
        .expect("pool holds at least the materials");
    ForwardOutcome {
        product: best.graph.clone(),
        canonical: key.clone(),
        similarity: best.sim,
    }
}
