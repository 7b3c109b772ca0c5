//! Seeded generation of a synthetic reaction network, target splits and
//! reference routes, plus the on-disk benchmark directory format.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with the 64-bit seed;
//! every collection that reaches the output is ordered, so a `(config, seed)`
//! pair fully determines the written files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molcore::{parse_smiles, Element, MolGraph};
use crate::route::{Route, Step};

use super::rule::{forward_with_key, has_site, ReactionRule};

const CORE: [Element; 5] = [Element::C, Element::N, Element::O, Element::S, Element::P];
const CORE_WEIGHTS: [f64; 5] = [4.0, 2.0, 2.0, 1.0, 1.0];
const HALOGENS: [Element; 4] = [Element::F, Element::Cl, Element::Br, Element::I];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub num_rules: usize,
    pub inventory_size: usize,
    /// Number of non-inventory molecules the network grows to.
    pub molecule_budget: usize,
    pub max_depth: usize,
    pub max_atoms: usize,
    pub reference_cap: usize,
    /// Rules sharing one bond pattern, differing in the `A`-side cap.
    pub caps_per_pattern: usize,
    /// Halogen variants generated per inventory skeleton.
    pub variants_per_skeleton: usize,
    /// Spread of the log-normal popularity of inventory molecules.
    pub popularity_sigma: f64,
    /// Probability that a reactant is drawn from the inventory rather than
    /// from already produced molecules.
    pub inventory_pick: f64,
    pub max_attempts: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            num_rules: 12,
            inventory_size: 60,
            molecule_budget: 3000,
            max_depth: 6,
            max_atoms: 22,
            reference_cap: 8,
            caps_per_pattern: 2,
            variants_per_skeleton: 3,
            popularity_sigma: 1.5,
            inventory_pick: 0.55,
            max_attempts: 2_000_000,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.inventory_size < 20 {
            return fail("inventory_size must be at least 20");
        }
        if self.num_rules < 5 {
            return fail("num_rules must be at least 5");
        }
        if !(2..=6).contains(&self.max_depth) {
            return fail("max_depth must lie in [2, 6]");
        }
        if self.caps_per_pattern == 0 || self.caps_per_pattern > HALOGENS.len() {
            return fail("caps_per_pattern must lie in [1, 4]");
        }
        if self.variants_per_skeleton == 0 {
            return fail("variants_per_skeleton must be positive");
        }
        if self.max_atoms < 4 || self.reference_cap == 0 || self.molecule_budget == 0 {
            return fail("max_atoms >= 4, reference_cap > 0 and molecule_budget > 0 are required");
        }
        if !(0.0..=1.0).contains(&self.inventory_pick)
            || !(self.popularity_sigma.is_finite() && self.popularity_sigma >= 0.0)
        {
            return fail("inventory_pick must be a probability and popularity_sigma finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub product: String,
    pub reactants: Vec<String>,
    pub rule_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Provenance {
    seed: u64,
    config: BenchmarkConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReferenceLine {
    target: String,
    routes: Vec<Route>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub seed: u64,
    pub rules: Vec<ReactionRule>,
    pub inventory: BTreeSet<String>,
    pub molecules: BTreeSet<String>,
    pub reactions: Vec<ReactionRecord>,
    pub splits: Splits,
    pub references: BTreeMap<String, Vec<Route>>,
}

/// Minimum number of reactions needed to make each network molecule from the
/// inventory. Inventory molecules have depth 0.
pub fn min_depths(
    inventory: &BTreeSet<String>,
    reactions: &[ReactionRecord],
) -> BTreeMap<String, usize> {
    let mut depth: BTreeMap<String, usize> = inventory.iter().map(|m| (m.clone(), 0)).collect();
    loop {
        let mut changed = false;
        for r in reactions {
            let d = r
                .reactants
                .iter()
                .map(|x| depth.get(x).copied())
                .try_fold(0usize, |acc, d| d.map(|d| acc.max(d)));
            if let Some(d) = d {
                let cand = d + 1;
                let slot = depth.entry(r.product.clone()).or_insert(usize::MAX);
                if cand < *slot {
                    *slot = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            return depth;
        }
    }
}

impl Benchmark {
    pub fn rule(&self, id: &str) -> Option<&ReactionRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn min_depths(&self) -> BTreeMap<String, usize> {
        min_depths(&self.inventory, &self.reactions)
    }

    pub fn targets(&self) -> impl Iterator<Item = &String> {
        self.splits
            .train
            .iter()
            .chain(self.splits.val.iter())
            .chain(self.splits.test.iter())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("rules.jsonl"))?;
        for r in &self.rules {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        let mut f = fs::File::create(dir.join("inventory.txt"))?;
        for m in &self.inventory {
            writeln!(f, "{m}")?;
        }
        let mut f = fs::File::create(dir.join("reactions.jsonl"))?;
        for r in &self.reactions {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        fs::write(
            dir.join("splits.json"),
            serde_json::to_string_pretty(&self.splits)? + "\n",
        )?;
        let mut f = fs::File::create(dir.join("references.jsonl"))?;
        for (target, routes) in &self.references {
            let line = ReferenceLine {
                target: target.clone(),
                routes: routes.clone(),
            };
            writeln!(f, "{}", serde_json::to_string(&line)?)?;
        }
        let prov = Provenance {
            seed: self.seed,
            config: self.config.clone(),
        };
        fs::write(
            dir.join("benchmark.json"),
            serde_json::to_string_pretty(&prov)? + "\n",
        )?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let prov: Provenance =
            serde_json::from_str(&fs::read_to_string(dir.join("benchmark.json"))?)?;
        let rules: Vec<ReactionRule> = read_jsonl(&dir.join("rules.jsonl"))?;
        let inventory: BTreeSet<String> = fs::read_to_string(dir.join("inventory.txt"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let reactions: Vec<ReactionRecord> = read_jsonl(&dir.join("reactions.jsonl"))?;
        let splits: Splits = serde_json::from_str(&fs::read_to_string(dir.join("splits.json"))?)?;
        let references = read_jsonl::<ReferenceLine>(&dir.join("references.jsonl"))?
            .into_iter()
            .map(|l| (l.target, l.routes))
            .collect();
        let mut molecules = inventory.clone();
        for r in &reactions {
            molecules.insert(r.product.clone());
            molecules.extend(r.reactants.iter().cloned());
        }
        for r in &reactions {
            if !rules.iter().any(|x| x.id == r.rule_id) {
                return Err(Error::Validation(format!(
                    "reaction uses unknown rule {}",
                    r.rule_id
                )));
            }
        }
        Ok(Self {
            config: prov.config,
            seed: prov.seed,
            rules,
            inventory,
            molecules,
            reactions,
            splits,
            references,
        })
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

fn generate_rules(cfg: &BenchmarkConfig, rng: &mut ChaCha8Rng) -> Vec<ReactionRule> {
    let core_pick = WeightedIndex::new(CORE_WEIGHTS).expect("static weights");
    let mut rules: Vec<ReactionRule> = Vec::new();
    let mut patterns: Vec<(Element, Element, u8)> = Vec::new();
    while rules.len() < cfg.num_rules {
        let a = CORE[core_pick.sample(rng)];
        let b = CORE[core_pick.sample(rng)];
        let order = if rng.gen_bool(0.8) { 1 } else { 2 };
        if patterns
            .iter()
            .any(|&(x, y, o)| o == order && ((x, y) == (a, b) || (x, y) == (b, a)))
        {
            continue;
        }
        patterns.push((a, b, order));
        let cap_b = HALOGENS[rng.gen_range(0..HALOGENS.len())];
        let mut caps = HALOGENS.to_vec();
        caps.shuffle(rng);
        for &cap_a in caps.iter().take(cfg.caps_per_pattern) {
            if rules.len() == cfg.num_rules {
                break;
            }
            let rule = ReactionRule {
                id: format!("R{:02}", rules.len() + 1),
                bond: (a, b, order),
                cap_a,
                cap_b,
            };
            if rules.iter().any(|r| r.same_chemistry(&rule)) {
                continue;
            }
            rules.push(rule);
        }
    }
    rules
}

/// Random tree over `n` core atoms.
fn random_skeleton(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Element>, Vec<(usize, usize, u8)>) {
    let core_pick = WeightedIndex::new(CORE_WEIGHTS).expect("static weights");
    let atoms: Vec<Element> = (0..n).map(|_| CORE[core_pick.sample(rng)]).collect();
    let bonds = (1..n)
        .map(|i| {
            let order = if rng.gen_bool(0.85) { 1 } else { 2 };
            (rng.gen_range(0..i), i, order)
        })
        .collect();
    (atoms, bonds)
}

/// Inventory of small capped skeletons. Each skeleton comes in several
/// halogen variants with independent log-normal popularity.
fn generate_inventory(
    cfg: &BenchmarkConfig,
    rules: &[ReactionRule],
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, (MolGraph, f64)> {
    let popularity = LogNormal::new(0.0, cfg.popularity_sigma).expect("validated sigma");
    let mut inv: BTreeMap<String, (MolGraph, f64)> = BTreeMap::new();
    let mut guard = 0;
    while inv.len() < cfg.inventory_size {
        guard += 1;
        assert!(guard < 100_000, "inventory generation stalled");
        let n_core = rng.gen_range(1..=3);
        let max_caps = (4 - n_core).min(2);
        let n_caps = rng.gen_range(1..=max_caps);
        let (atoms, bonds) = random_skeleton(n_core, rng);
        let positions: Vec<usize> = (0..n_caps).map(|_| rng.gen_range(0..n_core)).collect();
        // every halogen assignment to the cap positions, in random order
        let mut assignments: Vec<Vec<Element>> = vec![Vec::new()];
        for _ in 0..n_caps {
            assignments = assignments
                .into_iter()
                .flat_map(|prefix| {
                    HALOGENS.iter().map(move |&h| {
                        let mut v = prefix.clone();
                        v.push(h);
                        v
                    })
                })
                .collect();
        }
        assignments.shuffle(rng);
        let mut taken = 0;
        for caps in assignments {
            if taken == cfg.variants_per_skeleton || inv.len() >= cfg.inventory_size {
                break;
            }
            let mut a = atoms.clone();
            let mut b = bonds.clone();
            for (&p, &h) in positions.iter().zip(&caps) {
                a.push(h);
                b.push((p, a.len() - 1, 1));
            }
            let g = MolGraph::new(a, b).expect("skeleton plus caps is a tree");
            // Only keep molecules that can take part in at least one rule.
            let useful = rules
                .iter()
                .any(|r| has_site(&g, r.cap_a, r.bond.0) || has_site(&g, r.cap_b, r.bond.1));
            if !useful {
                continue;
            }
            let key = g.canonical();
            if inv.contains_key(&key) {
                continue;
            }
            taken += 1;
            let weight = popularity.sample(rng);
            inv.insert(key, (g, weight));
        }
    }
    inv
}

struct Node {
    key: String,
    graph: MolGraph,
    depth: usize,
}

pub fn generate_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = generate_rules(cfg, &mut rng);
    let inv = generate_inventory(cfg, &rules, &mut rng);

    let inv_nodes: Vec<Node> = inv
        .iter()
        .map(|(k, (g, _))| Node {
            key: k.clone(),
            graph: g.clone(),
            depth: 0,
        })
        .collect();
    let inv_weights: Vec<f64> = inv.values().map(|(_, w)| *w).collect();
    // Donor lists per (cap, anchor) site: inventory indices and produced indices.
    let site_of = |g: &MolGraph, cap: Element, anchor: Element| has_site(g, cap, anchor);
    let mut inv_donors: BTreeMap<(Element, Element), Vec<usize>> = BTreeMap::new();
    let mut prod_donors: BTreeMap<(Element, Element), Vec<usize>> = BTreeMap::new();
    let mut sites: BTreeSet<(Element, Element)> = BTreeSet::new();
    for r in &rules {
        sites.insert((r.cap_a, r.bond.0));
        sites.insert((r.cap_b, r.bond.1));
    }
    for &s in &sites {
        let list: Vec<usize> = (0..inv_nodes.len())
            .filter(|&i| site_of(&inv_nodes[i].graph, s.0, s.1))
            .collect();
        inv_donors.insert(s, list);
        prod_donors.insert(s, Vec::new());
    }

    let mut produced: Vec<Node> = Vec::new();
    let mut produced_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut reactions: Vec<ReactionRecord> = Vec::new();
    let mut seen_reactions: BTreeSet<(String, Vec<String>, String)> = BTreeSet::new();

    let mut attempts = 0usize;
    while produced.len() < cfg.molecule_budget {
        attempts += 1;
        if attempts > cfg.max_attempts {
            return Err(Error::Infeasible(format!(
                "grew {} of {} molecules in {} attempts",
                produced.len(),
                cfg.molecule_budget,
                cfg.max_attempts
            )));
        }
        let rule = &rules[rng.gen_range(0..rules.len())];
        let pick = |site: (Element, Element), rng: &mut ChaCha8Rng| -> Option<(bool, usize)> {
            let inv_list = &inv_donors[&site];
            let prod_list = &prod_donors[&site];
            let use_inv =
                prod_list.is_empty() || (!inv_list.is_empty() && rng.gen_bool(cfg.inventory_pick));
            if use_inv {
                if inv_list.is_empty() {
                    return None;
                }
                let w: Vec<f64> = inv_list.iter().map(|&i| inv_weights[i]).collect();
                let idx = WeightedIndex::new(&w).ok()?.sample(rng);
                Some((true, inv_list[idx]))
            } else {
                Some((false, prod_list[rng.gen_range(0..prod_list.len())]))
            }
        };
        let Some(xa) = pick((rule.cap_a, rule.bond.0), &mut rng) else {
            continue;
        };
        let Some(yb) = pick((rule.cap_b, rule.bond.1), &mut rng) else {
            continue;
        };
        let node = |(is_inv, i): (bool, usize)| if is_inv { &inv_nodes[i] } else { &produced[i] };
        let (x, y) = (node(xa), node(yb));
        if x.graph.num_atoms() + y.graph.num_atoms() - 2 > cfg.max_atoms {
            continue;
        }
        let Some((key, graph)) = forward_with_key(rule, &x.graph, &y.graph) else {
            continue;
        };
        if inv.contains_key(&key) || key == x.key || key == y.key {
            continue;
        }
        let depth = 1 + x.depth.max(y.depth);
        if depth > cfg.max_depth {
            continue;
        }
        let mut reactants = vec![x.key.clone(), y.key.clone()];
        reactants.sort();
        let record_key = (key.clone(), reactants.clone(), rule.id.clone());
        if seen_reactions.contains(&record_key) {
            continue;
        }
        seen_reactions.insert(record_key);
        reactions.push(ReactionRecord {
            product: key.clone(),
            reactants,
            rule_id: rule.id.clone(),
        });
        match produced_index.get(&key) {
            Some(&i) => {
                if depth < produced[i].depth {
                    produced[i].depth = depth;
                }
            }
            None => {
                let i = produced.len();
                for &s in &sites {
                    if site_of(&graph, s.0, s.1) {
                        prod_donors.get_mut(&s).expect("site registered").push(i);
                    }
                }
                produced_index.insert(key.clone(), i);
                produced.push(Node { key, graph, depth });
            }
        }
    }

    reactions.sort_by(|a, b| {
        (&a.product, &a.reactants, &a.rule_id).cmp(&(&b.product, &b.reactants, &b.rule_id))
    });
    let inventory: BTreeSet<String> = inv.keys().cloned().collect();
    let mut molecules = inventory.clone();
    molecules.extend(produced_index.keys().cloned());
    let depths = min_depths(&inventory, &reactions);

    let mut targets: Vec<String> = produced_index
        .keys()
        .filter(|k| {
            depths
                .get(*k)
                .is_some_and(|&d| (2..=cfg.max_depth).contains(&d))
        })
        .cloned()
        .collect();
    targets.shuffle(&mut rng);
    let n = targets.len();
    let n_test = n / 10;
    let n_val = n / 10;
    let n_train = n - n_val - n_test;
    let mut splits = Splits {
        train: targets[..n_train].to_vec(),
        val: targets[n_train..n_train + n_val].to_vec(),
        test: targets[n_train + n_val..].to_vec(),
    };
    splits.train.sort();
    splits.val.sort();
    splits.test.sort();

    let mut bench = Benchmark {
        config: cfg.clone(),
        seed,
        rules,
        inventory,
        molecules,
        reactions,
        splits,
        references: BTreeMap::new(),
    };
    let extractor = RouteExtractor::new(&bench);
    let mut references = BTreeMap::new();
    for t in bench.targets() {
        let routes = extractor.extract(t, cfg.reference_cap)?;
        references.insert(t.clone(), routes);
    }
    bench.references = references;
    Ok(bench)
}

/// Backward enumeration of network routes.
pub struct RouteExtractor<'a> {
    inventory: &'a BTreeSet<String>,
    producers: BTreeMap<&'a str, Vec<&'a ReactionRecord>>,
    depth: BTreeMap<String, usize>,
    max_depth: usize,
}

impl<'a> RouteExtractor<'a> {
    pub fn new(bench: &'a Benchmark) -> Self {
        let depth = bench.min_depths();
        let mut producers: BTreeMap<&str, Vec<&ReactionRecord>> = BTreeMap::new();
        for r in &bench.reactions {
            producers.entry(r.product.as_str()).or_default().push(r);
        }
        let reaction_depth = |r: &ReactionRecord| {
            1 + r
                .reactants
                .iter()
                .map(|x| depth.get(x).copied().unwrap_or(usize::MAX - 1))
                .max()
                .unwrap_or(0)
        };
        for list in producers.values_mut() {
            list.sort_by(|a, b| {
                (reaction_depth(a), &a.reactants, &a.rule_id).cmp(&(
                    reaction_depth(b),
                    &b.reactants,
                    &b.rule_id,
                ))
            });
        }
        Self {
            inventory: &bench.inventory,
            producers,
            depth,
            max_depth: bench.config.max_depth,
        }
    }

    /// Up to `cap` routes for `target`, depth-first over the choice of
    /// producing reaction at every intermediate, shallowest reactions first.
    pub fn extract(&self, target: &str, cap: usize) -> Result<Vec<Route>> {
        if self.inventory.contains(target) {
            return Err(Error::Validation(format!(
                "target {target} is a starting material"
            )));
        }
        if !self.producers.contains_key(target) {
            return Err(Error::Validation(format!("no reaction produces {target}")));
        }
        let mut path = vec![target.to_string()];
        let subtrees = self.expand(target, &mut path, self.max_depth, cap);
        Ok(subtrees
            .into_iter()
            .map(|steps| Route {
                target: target.to_string(),
                log_prob: 0.0,
                steps,
            })
            .collect())
    }

    fn expand(
        &self,
        mol: &str,
        path: &mut Vec<String>,
        budget: usize,
        cap: usize,
    ) -> Vec<Vec<Step>> {
        let mut out = Vec::new();
        if budget == 0 {
            return out;
        }
        let Some(list) = self.producers.get(mol) else {
            return out;
        };
        for r in list {
            if out.len() >= cap {
                break;
            }
            if r.reactants.iter().any(|x| path.contains(x)) {
                continue;
            }
            let feasible = r
                .reactants
                .iter()
                .all(|x| self.depth.get(x).is_some_and(|&d| d < budget));
            if !feasible {
                continue;
            }
            // Sub-route options per reactant; leaves have one empty option.
            let mut options: Vec<Vec<Vec<Step>>> = Vec::with_capacity(r.reactants.len());
            let mut dead = false;
            for x in &r.reactants {
                if self.inventory.contains(x) {
                    options.push(vec![Vec::new()]);
                    continue;
                }
                path.push(x.clone());
                let sub = self.expand(x, path, budget - 1, cap);
                path.pop();
                if sub.is_empty() {
                    dead = true;
                    break;
                }
                options.push(sub);
            }
            if dead {
                continue;
            }
            let head = Step {
                product: mol.to_string(),
                reactants: r.reactants.clone(),
                rule_id: r.rule_id.clone(),
                logp: 0.0,
            };
            let mut idx = vec![0usize; options.len()];
            'combos: loop {
                if out.len() >= cap {
                    break;
                }
                let mut steps = vec![head.clone()];
                for (o, &i) in options.iter().zip(&idx) {
                    steps.extend(o[i].iter().cloned());
                }
                out.push(steps);
                // odometer, last position fastest
                let mut pos = idx.len();
                loop {
                    if pos == 0 {
                        break 'combos;
                    }
                    pos -= 1;
                    idx[pos] += 1;
                    if idx[pos] < options[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                }
            }
        }
        out
    }
}

pub fn extract_reference_routes(bench: &Benchmark, target: &str, cap: usize) -> Result<Vec<Route>> {
    RouteExtractor::new(bench).extract(target, cap)
}

/// Parses every canonical string of a benchmark file back into a graph.
pub fn parse_all<'a, I: IntoIterator<Item = &'a String>>(
    keys: I,
) -> Result<BTreeMap<String, MolGraph>> {
    keys.into_iter()
        .map(|k| Ok((k.clone(), parse_smiles(k)?)))
        .collect()
}
