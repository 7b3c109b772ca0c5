//! Route planners over the one-step proposer: greedy depth-first search,
//! beam search and a best-first search with a pluggable value function.
//!
//! All planners grow partial routes one expansion at a time. The open
//! molecule expanded next is always the one with the most atoms (ties: the
//! smaller canonical SMILES, then the earliest opened), and every ranking
//! tie is broken by the route serialization, so planning is deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molcore::parse_smiles;
use crate::proposer::{OneStepModel, Proposal, ProposalCache};
use crate::route::{Route, Step};
use crate::rxn::{read_jsonl, ReactantSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchLimits {
    pub beam_width: usize,
    pub max_depth: usize,
    pub expansions_budget: usize,
    pub proposals_per_node: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self {
            beam_width: 10,
            max_depth: 6,
            expansions_budget: 2000,
            proposals_per_node: 10,
        }
    }
}

impl SearchLimits {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.max_depth == 0 || self.proposals_per_node == 0 {
            return Err(Error::Config(
                "beam_width, max_depth and proposals_per_node must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Node {
    product: String,
    reactants: Vec<String>,
    rule_id: String,
    logp: f64,
    parent: Option<usize>,
    children: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
struct Open {
    mol: String,
    atoms: usize,
    /// Step owning this reactant and its position, `None` for the target.
    slot: Option<(usize, usize)>,
    /// Depth of the step that would expand this molecule (target: 1).
    depth: usize,
}

#[derive(Debug, Clone)]
struct Partial {
    nodes: Vec<Node>,
    open: Vec<Open>,
    logp: f64,
    key: String,
}

impl Partial {
    fn root(target: &str, atoms: usize) -> Self {
        Self {
            nodes: Vec::new(),
            open: vec![Open {
                mol: target.to_string(),
                atoms,
                slot: None,
                depth: 1,
            }],
            logp: 0.0,
            key: String::new(),
        }
    }

    /// Step indices in pre-order.
    fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            return order;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            order.push(n);
            for c in self.nodes[n].children.iter().rev().flatten() {
                stack.push(*c);
            }
        }
        order
    }

    fn refresh(&mut self) {
        let order = self.preorder();
        self.logp = order.iter().map(|&n| self.nodes[n].logp).sum();
        let mut key = String::new();
        for &n in &order {
            let node = &self.nodes[n];
            key.push_str(&node.product);
            key.push('>');
            key.push_str(&node.reactants.join("."));
            key.push('|');
            key.push_str(&node.rule_id);
            key.push(';');
        }
        self.key = key;
    }

    fn next_open(&self) -> usize {
        let mut best = 0;
        for (i, o) in self.open.iter().enumerate().skip(1) {
            let b = &self.open[best];
            if o.atoms > b.atoms || (o.atoms == b.atoms && o.mol < b.mol) {
                best = i;
            }
        }
        best
    }

    fn ancestors<'s>(&'s self, open: &'s Open) -> Vec<&'s str> {
        let mut out = vec![open.mol.as_str()];
        let mut cur = open.slot.map(|(s, _)| s);
        while let Some(s) = cur {
            out.push(&self.nodes[s].product);
            cur = self.nodes[s].parent;
        }
        out
    }

    fn into_route(self, target: &str) -> Route {
        let order = self.preorder();
        let steps: Vec<Step> = order
            .iter()
            .map(|&n| {
                let node = &self.nodes[n];
                Step {
                    product: node.product.clone(),
                    reactants: node.reactants.clone(),
                    rule_id: node.rule_id.clone(),
                    logp: node.logp,
                }
            })
            .collect();
        Route {
            target: target.to_string(),
            log_prob: self.logp,
            steps,
        }
    }
}

fn cmp_rank(a: &Partial, b: &Partial) -> Ordering {
    b.logp.total_cmp(&a.logp).then_with(|| a.key.cmp(&b.key))
}

struct Expander<'a, 'm> {
    cache: &'a ProposalCache<'m>,
    inventory: &'a BTreeSet<String>,
    limits: SearchLimits,
}

impl Expander<'_, '_> {
    /// Successors of `st` by expanding its next open molecule with each of
    /// the top proposals, in proposal order. Proposals that close a cycle
    /// or would need a step past the depth limit are skipped.
    fn children(&self, st: &Partial) -> Vec<Partial> {
        let oi = st.next_open();
        let open = &st.open[oi];
        let entry = self.cache.get(&open.mol);
        let path = st.ancestors(open);
        let mut out = Vec::new();
        for p in entry.outcomes.iter().take(self.limits.proposals_per_node) {
            if let Some(child) = self.apply(st, oi, &path, p) {
                out.push(child);
            }
        }
        out
    }

    fn apply(&self, st: &Partial, oi: usize, path: &[&str], p: &Proposal) -> Option<Partial> {
        let open = &st.open[oi];
        if open.depth > self.limits.max_depth {
            return None;
        }
        let members = p.reactants.members();
        if members.iter().any(|m| path.contains(&m.as_str())) {
            return None;
        }
        let mut next = st.clone();
        let removed = next.open.remove(oi);
        let idx = next.nodes.len();
        next.nodes.push(Node {
            product: removed.mol.clone(),
            reactants: members.to_vec(),
            rule_id: p.rule_id.clone(),
            logp: p.logp,
            parent: removed.slot.map(|(s, _)| s),
            children: vec![None; members.len()],
        });
        if let Some((s, pos)) = removed.slot {
            next.nodes[s].children[pos] = Some(idx);
        }
        for (pos, m) in members.iter().enumerate() {
            if self.inventory.contains(m) {
                continue;
            }
            if removed.depth + 1 > self.limits.max_depth {
                return None;
            }
            next.open.push(Open {
                mol: m.clone(),
                atoms: self.cache.get(m).num_atoms,
                slot: Some((idx, pos)),
                depth: removed.depth + 1,
            });
        }
        next.refresh();
        Some(next)
    }
}

fn check_target(target: &str, inventory: &BTreeSet<String>) -> Result<()> {
    if inventory.contains(target) {
        return Err(Error::Validation(format!(
            "target {target} is a starting material"
        )));
    }
    Ok(())
}

fn finish(target: &str, mut done: Vec<Partial>, limit: usize) -> Vec<Route> {
    done.sort_by(cmp_rank);
    done.dedup_by(|a, b| a.key == b.key);
    done.truncate(limit);
    done.into_iter().map(|p| p.into_route(target)).collect()
}

/// Beam search over partial routes scored by accumulated log probability.
/// Complete routes leave the beam; partial routes that already score below
/// the `beam_width`-th complete route are pruned since scores only drop.
pub fn beam_search_plan(
    target: &str,
    cache: &ProposalCache,
    inventory: &BTreeSet<String>,
    limits: SearchLimits,
) -> Result<Vec<Route>> {
    limits.validate()?;
    check_target(target, inventory)?;
    let ex = Expander {
        cache,
        inventory,
        limits,
    };
    let mut frontier = vec![Partial::root(target, cache.get(target).num_atoms)];
    let mut done: Vec<Partial> = Vec::new();
    while !frontier.is_empty() {
        let mut partial = Vec::new();
        for st in &frontier {
            for c in ex.children(st) {
                if c.open.is_empty() {
                    done.push(c);
                } else {
                    partial.push(c);
                }
            }
        }
        partial.sort_by(cmp_rank);
        partial.dedup_by(|a, b| a.key == b.key);
        partial.truncate(limits.beam_width);
        if done.len() >= limits.beam_width {
            done.sort_by(cmp_rank);
            let bar = done[limits.beam_width - 1].logp;
            partial.retain(|p| p.logp >= bar);
        }
        frontier = partial;
    }
    Ok(finish(target, done, limits.beam_width))
}

/// Depth-first search taking proposals in rank order and backtracking on
/// dead ends. Returns up to `n` complete routes in discovery order.
pub fn greedy_dfs_routes(
    target: &str,
    cache: &ProposalCache,
    inventory: &BTreeSet<String>,
    limits: SearchLimits,
    n: usize,
) -> Result<Vec<Route>> {
    limits.validate()?;
    check_target(target, inventory)?;
    let ex = Expander {
        cache,
        inventory,
        limits,
    };
    let mut found: Vec<Partial> = Vec::new();
    let mut expansions = 0usize;
    let mut stack: Vec<std::vec::IntoIter<Partial>> = Vec::new();
    let root = Partial::root(target, cache.get(target).num_atoms);
    stack.push(vec![root].into_iter());
    while let Some(iter) = stack.last_mut() {
        let Some(st) = iter.next() else {
            stack.pop();
            continue;
        };
        if st.open.is_empty() {
            if !found.iter().any(|f| f.key == st.key) {
                found.push(st);
            }
            if found.len() >= n {
                break;
            }
            continue;
        }
        if expansions >= limits.expansions_budget {
            break;
        }
        expansions += 1;
        stack.push(ex.children(&st).into_iter());
    }
    Ok(found.into_iter().map(|p| p.into_route(target)).collect())
}

pub fn greedy_dfs_plan(
    target: &str,
    cache: &ProposalCache,
    inventory: &BTreeSet<String>,
    limits: SearchLimits,
) -> Result<Option<Route>> {
    Ok(greedy_dfs_routes(target, cache, inventory, limits, 1)?
        .into_iter()
        .next())
}

/// Lower bound on the remaining cost of closing an open molecule.
pub enum ValueFn<'a> {
    Zero,
    Oracle(&'a CostOracle<'a>),
}

/// Exact minimum `-log p` needed to reduce a molecule to starting materials
/// with at most `levels` more reaction levels, using the same proposals the
/// planner sees. Cycle constraints are ignored, so the value never
/// overestimates the cost of a route the planner can build.
pub struct CostOracle<'a> {
    cache: &'a ProposalCache<'a>,
    inventory: &'a BTreeSet<String>,
    proposals_per_node: usize,
    memo: RwLock<HashMap<(String, usize), f64>>,
}

impl<'a> CostOracle<'a> {
    pub fn new(
        cache: &'a ProposalCache<'a>,
        inventory: &'a BTreeSet<String>,
        proposals_per_node: usize,
    ) -> Self {
        Self {
            cache,
            inventory,
            proposals_per_node,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn cost(&self, mol: &str, levels: usize) -> f64 {
        if self.inventory.contains(mol) {
            return 0.0;
        }
        if levels == 0 {
            return f64::INFINITY;
        }
        let key = (mol.to_string(), levels);
        if let Some(&v) = self.memo.read().expect("memo lock").get(&key) {
            return v;
        }
        let entry = self.cache.get(mol);
        let mut best = f64::INFINITY;
        for p in entry.outcomes.iter().take(self.proposals_per_node) {
            let mut c = -p.logp;
            for m in p.reactants.members() {
                if c >= best {
                    break;
                }
                c += self.cost(m, levels - 1);
            }
            if c < best {
                best = c;
            }
        }
        self.memo.write().expect("memo lock").insert(key, best);
        best
    }
}

struct Queued {
    f: f64,
    seq: usize,
    state: Partial,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // BinaryHeap is a max-heap: smallest f, then smallest key, then earliest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.state.key.cmp(&self.state.key))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Best-first search over partial routes with priority
/// `-log p(route so far) + sum of value(open molecules)`.
/// Stops after `expansions_budget` expansions or once `beam_width` complete
/// routes have been popped.
pub fn retrostar_plan(
    target: &str,
    cache: &ProposalCache,
    inventory: &BTreeSet<String>,
    value: &ValueFn,
    limits: SearchLimits,
) -> Result<Vec<Route>> {
    limits.validate()?;
    check_target(target, inventory)?;
    if limits.expansions_budget == 0 {
        return Ok(Vec::new());
    }
    let ex = Expander {
        cache,
        inventory,
        limits,
    };
    let h = |st: &Partial| -> f64 {
        match value {
            ValueFn::Zero => 0.0,
            ValueFn::Oracle(o) => st
                .open
                .iter()
                .map(|op| {
                    o.cost(
                        &op.mol,
                        limits.max_depth + 1 - op.depth.min(limits.max_depth + 1),
                    )
                })
                .sum(),
        }
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let root = Partial::root(target, cache.get(target).num_atoms);
    let f0 = h(&root);
    if f0.is_finite() {
        heap.push(Queued {
            f: f0,
            seq,
            state: root,
        });
    }
    let mut done: Vec<Partial> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut expansions = 0usize;
    while let Some(Queued { state, .. }) = heap.pop() {
        if state.open.is_empty() {
            if seen.insert(state.key.clone()) {
                done.push(state);
            }
            if done.len() >= limits.beam_width {
                break;
            }
            continue;
        }
        if expansions >= limits.expansions_budget {
            break;
        }
        expansions += 1;
        for c in ex.children(&state) {
            let f = -c.logp + h(&c);
            if f.is_finite() {
                seq += 1;
                heap.push(Queued { f, seq, state: c });
            }
        }
    }
    Ok(finish(target, done, limits.beam_width))
}

/// Sum of the model's step log probabilities over every reaction.
pub fn route_log_prob(route: &Route, model: &OneStepModel) -> Result<f64> {
    route.validate()?;
    let mut total = 0.0;
    for s in &route.steps {
        let g = parse_smiles(&s.product)?;
        total += model.step_log_prob(&g, &ReactantSet::new(s.reactants.clone()));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Greedy,
    Beam,
    Retrostar,
    /// Best-first search with the exact cost-to-go.
    RetrostarOracle,
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Algo::Greedy),
            "beam" => Ok(Algo::Beam),
            "retrostar" => Ok(Algo::Retrostar),
            "retrostar-oracle" => Ok(Algo::RetrostarOracle),
            other => Err(Error::Config(format!("unknown planner {other:?}"))),
        }
    }
}

/// Plans every target in parallel; the result is keyed and ordered by
/// target. Greedy planning returns up to `beam_width` routes from
/// continued backtracking.
pub fn plan_targets(
    targets: &[String],
    model: &OneStepModel,
    inventory: &BTreeSet<String>,
    algo: Algo,
    limits: SearchLimits,
) -> Result<BTreeMap<String, Vec<Route>>> {
    let cache = ProposalCache::new(model);
    let oracle = CostOracle::new(&cache, inventory, limits.proposals_per_node);
    let results: Vec<Result<(String, Vec<Route>)>> = targets
        .par_iter()
        .map(|t| {
            let routes = match algo {
                Algo::Beam => beam_search_plan(t, &cache, inventory, limits)?,
                Algo::Greedy => greedy_dfs_routes(t, &cache, inventory, limits, limits.beam_width)?,
                Algo::Retrostar => retrostar_plan(t, &cache, inventory, &ValueFn::Zero, limits)?,
                Algo::RetrostarOracle => {
                    retrostar_plan(t, &cache, inventory, &ValueFn::Oracle(&oracle), limits)?
                }
            };
            Ok((t.clone(), routes))
        })
        .collect();
    results.into_iter().collect()
}

pub fn write_routes(path: &Path, routes: &BTreeMap<String, Vec<Route>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for list in routes.values() {
        for r in list {
            writeln!(f, "{}", r.to_json())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Groups routes by target, keeping file order within a target.
pub fn read_routes(path: &Path) -> Result<BTreeMap<String, Vec<Route>>> {
    let mut out: BTreeMap<String, Vec<Route>> = BTreeMap::new();
    for r in read_jsonl::<Route>(path)? {
        r.validate()?;
        out.entry(r.target.clone()).or_default().push(r);
    }
    Ok(out)
}
