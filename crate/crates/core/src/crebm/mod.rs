//! Route rewards, preference pairs, the residual energy model and
//! reranking of planner proposals by `-log p + E`.

mod energy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use energy::{
    bt_loss_and_grad, energy_score, features_from_parts, pair_accuracy, route_features,
    train_energy, EnergyCheckpoint, EnergyModel, EnergyTrainConfig, EnergyTrainReport, FeaturePair,
    RouteFeatures, HIDDEN,
};

use crate::error::{Error, Result};
use crate::molcore::{fingerprint_union, parse_smiles, tanimoto, FingerprintConfig, MolGraph};
use crate::proposer::OneStepModel;
use crate::route::Route;
use crate::rxn::{forward_oracle, read_jsonl, ForwardSearch, ReactantSet, ReactionRule};
use crate::search::route_log_prob;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionId {
    Feasibility,
    MaterialSimilarity,
    ForwardFeasibility,
    ShortestRoute,
}

impl CriterionId {
    pub const ALL: [CriterionId; 4] = [
        CriterionId::Feasibility,
        CriterionId::MaterialSimilarity,
        CriterionId::ForwardFeasibility,
        CriterionId::ShortestRoute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionId::Feasibility => "feasibility",
            CriterionId::MaterialSimilarity => "material_similarity",
            CriterionId::ForwardFeasibility => "forward_feasibility",
            CriterionId::ShortestRoute => "shortest_route",
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown criterion {s:?}")))
    }
}

/// Everything a reward needs besides the route itself.
#[derive(Debug, Clone)]
pub struct RewardContext<'a> {
    pub rules: &'a [ReactionRule],
    pub fp: FingerprintConfig,
    pub forward: ForwardSearch,
    /// Weights of the forward term and the material term.
    pub weights: (f64, f64),
}

impl<'a> RewardContext<'a> {
    pub fn new(rules: &'a [ReactionRule]) -> Self {
        Self {
            rules,
            fp: FingerprintConfig::default(),
            forward: ForwardSearch::default(),
            weights: (1.0, 1.0),
        }
    }
}

fn parse_set(items: &BTreeSet<String>) -> Result<Vec<MolGraph>> {
    Ok(items
        .iter()
        .map(|s| parse_smiles(s))
        .collect::<Result<_, _>>()?)
}

/// Heuristic route reward. `feasibility` adds the similarity of the
/// forward-simulated product to the target and the similarity of the
/// starting materials to the reference materials; the two other similarity
/// criteria keep one term each, and `shortest_route` is minus the number of
/// reactions.
pub fn phi_reward(
    route: &Route,
    target: &MolGraph,
    ref_materials: &BTreeSet<String>,
    criterion: CriterionId,
    ctx: &RewardContext,
) -> Result<f64> {
    if criterion == CriterionId::ShortestRoute {
        return Ok(-(route.num_reactions() as f64));
    }
    let leaves = parse_set(&route.leaves())?;
    if leaves.is_empty() {
        return Err(Error::Validation("route has no starting materials".into()));
    }
    let forward = || forward_oracle(ctx.rules, &leaves, target, ctx.forward, ctx.fp).similarity;
    let material = || -> Result<f64> {
        if ref_materials.is_empty() {
            return Err(Error::Validation("reference materials are empty".into()));
        }
        let refs = parse_set(ref_materials)?;
        let a = fingerprint_union(leaves.iter(), ctx.fp.radius, ctx.fp.nbits)?;
        let b = fingerprint_union(refs.iter(), ctx.fp.radius, ctx.fp.nbits)?;
        Ok(tanimoto(&a, &b)?)
    };
    Ok(match criterion {
        CriterionId::Feasibility => ctx.weights.0 * forward() + ctx.weights.1 * material()?,
        CriterionId::ForwardFeasibility => forward(),
        CriterionId::MaterialSimilarity => material()?,
        CriterionId::ShortestRoute => unreachable!(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub target: String,
    pub winner: Route,
    pub loser: Route,
    pub phi_w: f64,
    pub phi_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub k_samples: usize,
    pub max_pairs_per_target: usize,
    pub eps: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            k_samples: 10,
            max_pairs_per_target: 20,
            eps: 1e-9,
        }
    }
}

/// Pairs for one target: the first reference route plus the top sampled
/// routes, ranked by reward, with every ordered pair whose reward gap
/// exceeds `eps`, largest gaps first. With a model, the reference route's
/// step scores are filled in from it.
pub fn target_pairs(
    target: &str,
    reference: &Route,
    sampled: &[Route],
    model: Option<&OneStepModel>,
    criterion: CriterionId,
    ctx: &RewardContext,
    cfg: &PairConfig,
) -> Result<Vec<PreferencePair>> {
    let target_graph = parse_smiles(target)?;
    let mut reference = reference.clone();
    if let Some(model) = model {
        for s in reference.steps.iter_mut() {
            let g = parse_smiles(&s.product)?;
            s.logp = model.step_log_prob(&g, &ReactantSet::new(s.reactants.clone()));
        }
        reference.log_prob = route_log_prob(&reference, model)?;
    }
    let ref_key = reference.canonical_key();
    let ref_materials = reference.leaves();

    let mut cands: Vec<Route> = vec![reference];
    let mut seen: BTreeSet<String> = BTreeSet::from([ref_key.clone()]);
    for r in sampled.iter().take(cfg.k_samples) {
        if seen.insert(r.canonical_key()) {
            cands.push(r.clone());
        }
    }
    // every criterion except route length depends on the leaves only
    let mut by_leaves: BTreeMap<BTreeSet<String>, f64> = BTreeMap::new();
    let mut scored: Vec<(f64, Route)> = Vec::with_capacity(cands.len());
    for r in cands {
        let leaves = r.leaves();
        let phi = match by_leaves.get(&leaves) {
            Some(&v) if criterion != CriterionId::ShortestRoute => v,
            _ => {
                let v = phi_reward(&r, &target_graph, &ref_materials, criterion, ctx)?;
                by_leaves.insert(leaves, v);
                v
            }
        };
        scored.push((phi, r));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.canonical_key().cmp(&b.1.canonical_key()))
    });

    let mut gaps: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..scored.len() {
        for j in 0..scored.len() {
            let gap = scored[i].0 - scored[j].0;
            if gap > cfg.eps {
                gaps.push((gap, i, j));
            }
        }
    }
    gaps.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });
    gaps.truncate(cfg.max_pairs_per_target);
    let pairs: Vec<PreferencePair> = gaps
        .into_iter()
        .map(|(_, i, j)| PreferencePair {
            target: target.to_string(),
            winner: scored[i].1.clone(),
            loser: scored[j].1.clone(),
            phi_w: scored[i].0,
            phi_l: scored[j].0,
        })
        .collect();
    let ref_losses = pairs
        .iter()
        .filter(|p| p.loser.canonical_key() == ref_key)
        .count();
    if ref_losses > 0 {
        warn!("{target}: reference route is the loser in {ref_losses} pairs");
    }
    Ok(pairs)
}

/// Builds the preference data set over `targets` in parallel, returned in
/// target order. Targets without references or sampled routes are skipped.
pub fn build_preference_pairs(
    targets: &[String],
    sampled: &BTreeMap<String, Vec<Route>>,
    references: &BTreeMap<String, Vec<Route>>,
    model: Option<&OneStepModel>,
    criterion: CriterionId,
    ctx: &RewardContext,
    cfg: &PairConfig,
) -> Result<Vec<PreferencePair>> {
    let empty = Vec::new();
    let per_target: Vec<Result<Vec<PreferencePair>>> = targets
        .par_iter()
        .map(|t| {
            let Some(reference) = references.get(t).and_then(|r| r.first()) else {
                return Ok(Vec::new());
            };
            let routes = sampled.get(t).unwrap_or(&empty);
            target_pairs(t, reference, routes, model, criterion, ctx, cfg)
        })
        .collect();
    let mut out = Vec::new();
    for p in per_target {
        out.extend(p?);
    }
    info!(
        "{} preference pairs over {} targets",
        out.len(),
        targets.len()
    );
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        writeln!(f, "{}", serde_json::to_string(p)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    let pairs: Vec<PreferencePair> = read_jsonl(path)?;
    for p in &pairs {
        if p.phi_w.partial_cmp(&p.phi_l) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Validation(format!(
                "pair for {} is not ordered by reward",
                p.target
            )));
        }
    }
    Ok(pairs)
}

pub fn pair_features(pairs: &[PreferencePair], fp: FingerprintConfig) -> Result<Vec<FeaturePair>> {
    pairs
        .par_iter()
        .map(|p| {
            let t = parse_smiles(&p.target)?;
            Ok(FeaturePair {
                winner: route_features(&p.winner, &t, fp)?,
                loser: route_features(&p.loser, &t, fp)?,
            })
        })
        .collect()
}

/// The four orderings compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RankMode {
    /// `-log p`
    LogP,
    /// `-log p + E`
    LogPPlusEnergy,
    /// `E`
    Energy,
    /// `-log p - E`
    LogPMinusEnergy,
}

impl RankMode {
    pub const ALL: [RankMode; 4] = [
        RankMode::LogP,
        RankMode::LogPPlusEnergy,
        RankMode::Energy,
        RankMode::LogPMinusEnergy,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RankMode::LogP => "-logP",
            RankMode::LogPPlusEnergy => "-logP+E",
            RankMode::Energy => "E",
            RankMode::LogPMinusEnergy => "-logP-E",
        }
    }

    pub fn score(self, log_prob: f64, energy: f64) -> f64 {
        match self {
            RankMode::LogP => -log_prob,
            RankMode::LogPPlusEnergy => -log_prob + energy,
            RankMode::Energy => energy,
            RankMode::LogPMinusEnergy => -log_prob - energy,
        }
    }
}

/// Sorts candidates ascending by `mode` score; ties by route serialization.
pub fn rank_with_energies(candidates: &[Route], energies: &[f64], mode: RankMode) -> Vec<Route> {
    assert_eq!(candidates.len(), energies.len());
    let mut idx: Vec<(f64, String, usize)> = candidates
        .iter()
        .zip(energies)
        .enumerate()
        .map(|(i, (r, &e))| (mode.score(r.log_prob, e), r.canonical_key(), i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    idx.into_iter()
        .map(|(_, _, i)| candidates[i].clone())
        .collect()
}

pub fn route_energies(candidates: &[Route], model: &EnergyModel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(candidates.len());
    let mut graphs: BTreeMap<&str, MolGraph> = BTreeMap::new();
    for r in candidates {
        if !graphs.contains_key(r.target.as_str()) {
            graphs.insert(&r.target, parse_smiles(&r.target)?);
        }
        out.push(energy_score(model, r, &graphs[r.target.as_str()])?);
    }
    Ok(out)
}

/// Orders candidates by `-log p + E`, ascending.
pub fn rerank_routes(candidates: &[Route], model: &EnergyModel) -> Result<Vec<Route>> {
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate routes to rerank".into()));
    }
    if let Some(r) = candidates.iter().find(|r| !r.log_prob.is_finite()) {
        return Err(Error::Validation(format!(
            "candidate for {} has non-finite log_prob",
            r.target
        )));
    }
    let energies = route_energies(candidates, model)?;
    Ok(rank_with_energies(
        candidates,
        &energies,
        RankMode::LogPPlusEnergy,
    ))
}

/// One energy model per criterion.
#[derive(Debug, Clone, Default)]
pub struct EnergyRegistry {
    models: BTreeMap<CriterionId, EnergyModel>,
}

impl EnergyRegistry {
    pub fn insert(&mut self, model: EnergyModel) -> Option<EnergyModel> {
        self.models.insert(model.criterion, model)
    }

    pub fn get(&self, c: CriterionId) -> Option<&EnergyModel> {
        self.models.get(&c)
    }
}
