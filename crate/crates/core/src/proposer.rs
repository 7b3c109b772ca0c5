//! Template-style one-step retrosynthesis model: a linear softmax over the
//! rules applicable to a product, scored from its fingerprint.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molcore::{parse_smiles, FingerprintConfig, MolGraph};
use crate::rxn::{retro_with_graphs, ReactantSet, ReactionRecord, ReactionRule};

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub reactants: ReactantSet,
    pub rule_id: String,
    pub prob: f64,
    pub logp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepCheckpoint {
    pub radius: usize,
    pub nbits: usize,
    pub rule_ids: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepModel {
    fp: FingerprintConfig,
    rules: Vec<ReactionRule>,
    /// `rules.len() x nbits`
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl OneStepModel {
    pub fn zeros(rules: Vec<ReactionRule>, fp: FingerprintConfig) -> Self {
        let n = rules.len();
        Self {
            fp,
            rules,
            weights: vec![vec![0.0; fp.nbits]; n],
            bias: vec![0.0; n],
        }
    }

    pub fn fingerprint_config(&self) -> FingerprintConfig {
        self.fp
    }

    pub fn rules(&self) -> &[ReactionRule] {
        &self.rules
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn to_checkpoint(&self) -> OneStepCheckpoint {
        OneStepCheckpoint {
            radius: self.fp.radius,
            nbits: self.fp.nbits,
            rule_ids: self.rules.iter().map(|r| r.id.clone()).collect(),
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint; `rules` must list the same ids in
    /// the same order.
    pub fn from_checkpoint(ckpt: OneStepCheckpoint, rules: &[ReactionRule]) -> Result<Self> {
        let ids: Vec<&str> = rules.iter().map(|r| r.id.as_str()).collect();
        if ids != ckpt.rule_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Validation(
                "checkpoint rule ids do not match the rule file".into(),
            ));
        }
        let shape_ok = ckpt.weights.len() == rules.len()
            && ckpt.bias.len() == rules.len()
            && ckpt.weights.iter().all(|row| row.len() == ckpt.nbits);
        if !shape_ok || ckpt.nbits < 64 {
            return Err(Error::Validation("checkpoint shape mismatch".into()));
        }
        let finite = ckpt
            .bias
            .iter()
            .chain(ckpt.weights.iter().flatten())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation(
                "checkpoint holds non-finite parameters".into(),
            ));
        }
        Ok(Self {
            fp: FingerprintConfig {
                radius: ckpt.radius,
                nbits: ckpt.nbits,
            },
            rules: rules.to_vec(),
            weights: ckpt.weights,
            bias: ckpt.bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path, rules: &[ReactionRule]) -> Result<Self> {
        let ckpt: OneStepCheckpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_checkpoint(ckpt, rules)
    }

    fn logit(&self, rule: usize, bits: &[u32]) -> f64 {
        let row = &self.weights[rule];
        self.bias[rule] + bits.iter().map(|&b| row[b as usize]).sum::<f64>()
    }

    /// Every outcome with its probability, merged across rules that happen
    /// to give the same reactant set, sorted by probability (descending)
    /// then reactant-set serialization.
    pub fn outcomes(&self, product: &MolGraph) -> Vec<Proposal> {
        let key = product.canonical();
        let per_rule: Vec<(usize, Vec<ReactantSet>)> = self
            .rules
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let sets: Vec<ReactantSet> = retro_with_graphs(r, product, &key)
                    .into_iter()
                    .map(|(s, _)| s)
                    .collect();
                (!sets.is_empty()).then_some((i, sets))
            })
            .collect();
        if per_rule.is_empty() {
            return Vec::new();
        }
        let bits = self.fp.of(product);
        let logits: Vec<f64> = per_rule
            .iter()
            .map(|(i, _)| self.logit(*i, bits.bits()))
            .collect();
        let probs = softmax(&logits);
        // reactant set -> (total mass, largest single contribution, its rule)
        let mut merged: BTreeMap<ReactantSet, (f64, f64, usize)> = BTreeMap::new();
        for ((rule, sets), p_rule) in per_rule.iter().zip(&probs) {
            let share = p_rule / sets.len() as f64;
            for s in sets {
                let e = merged.entry(s.clone()).or_insert((0.0, -1.0, *rule));
                e.0 += share;
                if share > e.1 {
                    e.1 = share;
                    e.2 = *rule;
                }
            }
        }
        let mut out: Vec<Proposal> = merged
            .into_iter()
            .map(|(reactants, (prob, _, rule))| Proposal {
                reactants,
                rule_id: self.rules[rule].id.clone(),
                prob,
                logp: prob.ln(),
            })
            .collect();
        out.sort_by(|a, b| {
            b.prob
                .total_cmp(&a.prob)
                .then_with(|| a.reactants.cmp(&b.reactants))
        });
        out
    }

    pub fn propose_topk(&self, product: &MolGraph, k: usize) -> Vec<Proposal> {
        assert!(k >= 1, "k must be at least 1");
        let mut all = self.outcomes(product);
        all.truncate(k);
        all
    }

    /// Log probability of `reactants` under the proposal distribution, or
    /// negative infinity when no rule produces that set.
    pub fn step_log_prob(&self, product: &MolGraph, reactants: &ReactantSet) -> f64 {
        self.outcomes(product)
            .into_iter()
            .find(|p| &p.reactants == reactants)
            .map_or(f64::NEG_INFINITY, |p| p.logp)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

struct Example {
    bits: Vec<u32>,
    applicable: Vec<usize>,
    /// Position of the true rule inside `applicable`.
    label: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: OneStepModel,
    /// Mean cross-entropy over the whole training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

fn build_examples(model: &OneStepModel, reactions: &[ReactionRecord]) -> Result<Vec<Example>> {
    let index: BTreeMap<&str, usize> = model
        .rules
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut cache: HashMap<&str, (Vec<u32>, Vec<usize>)> = HashMap::new();
    let mut out = Vec::with_capacity(reactions.len());
    for rec in reactions {
        let &rule = index
            .get(rec.rule_id.as_str())
            .ok_or_else(|| Error::Validation(format!("unknown rule {}", rec.rule_id)))?;
        if !cache.contains_key(rec.product.as_str()) {
            let g = parse_smiles(&rec.product)?;
            let applicable: Vec<usize> = model
                .rules
                .iter()
                .enumerate()
                .filter(|(_, r)| !retro_with_graphs(r, &g, &rec.product).is_empty())
                .map(|(i, _)| i)
                .collect();
            cache.insert(&rec.product, (model.fp.of(&g).bits().to_vec(), applicable));
        }
        let (bits, applicable) = &cache[rec.product.as_str()];
        let label = applicable.iter().position(|&r| r == rule).ok_or_else(|| {
            Error::Validation(format!(
                "rule {} does not apply to {}",
                rec.rule_id, rec.product
            ))
        })?;
        out.push(Example {
            bits: bits.clone(),
            applicable: applicable.clone(),
            label,
        });
    }
    Ok(out)
}

fn example_loss(model: &OneStepModel, ex: &Example) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = ex
        .applicable
        .iter()
        .map(|&r| model.logit(r, &ex.bits))
        .collect();
    let probs = softmax(&logits);
    (-probs[ex.label].ln(), probs)
}

fn mean_loss(model: &OneStepModel, examples: &[Example]) -> f64 {
    examples
        .iter()
        .map(|ex| example_loss(model, ex).0)
        .sum::<f64>()
        / examples.len() as f64
}

/// Mini-batch Adam on the cross-entropy of the true rule among the
/// applicable ones.
pub fn train_onestep(
    rules: &[ReactionRule],
    fp: FingerprintConfig,
    reactions: &[ReactionRecord],
    hyper: &TrainConfig,
) -> Result<TrainOutcome> {
    if reactions.is_empty() {
        return Err(Error::Validation("no training reactions".into()));
    }
    let mut model = OneStepModel::zeros(rules.to_vec(), fp);
    let examples = build_examples(&model, reactions)?;
    let (nr, nb) = (rules.len(), fp.nbits);
    let mut m_w = vec![0.0; nr * nb];
    let mut v_w = vec![0.0; nr * nb];
    let mut m_b = vec![0.0; nr];
    let mut v_b = vec![0.0; nr];
    let mut g_w = vec![0.0; nr * nb];
    let mut g_b = vec![0.0; nr];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut t = 0i32;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hyper.batch_size.max(1)) {
            g_w.iter_mut().for_each(|g| *g = 0.0);
            g_b.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                let (_, probs) = example_loss(&model, ex);
                for (pos, (&r, p)) in ex.applicable.iter().zip(&probs).enumerate() {
                    let d = (p - if pos == ex.label { 1.0 } else { 0.0 }) * scale;
                    g_b[r] += d;
                    for &b in &ex.bits {
                        g_w[r * nb + b as usize] += d;
                    }
                }
            }
            t += 1;
            let c1 = 1.0 - hyper.beta1.powi(t);
            let c2 = 1.0 - hyper.beta2.powi(t);
            let step = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                *theta -= hyper.lr * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
            };
            for r in 0..nr {
                step(&mut model.bias[r], g_b[r], &mut m_b[r], &mut v_b[r]);
                for b in 0..nb {
                    let k = r * nb + b;
                    step(&mut model.weights[r][b], g_w[k], &mut m_w[k], &mut v_w[k]);
                }
            }
        }
        let loss = mean_loss(&model, &examples);
        info!("one-step epoch {} loss {:.6}", epoch + 1, loss);
        epoch_losses.push(loss);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Memoized proposals keyed by canonical SMILES, shared across planning
/// threads. Values are pure functions of the frozen model.
pub struct ProposalCache<'m> {
    model: &'m OneStepModel,
    entries: RwLock<HashMap<String, Arc<CachedMol>>>,
}

#[derive(Debug)]
pub struct CachedMol {
    pub num_atoms: usize,
    pub outcomes: Vec<Proposal>,
}

impl<'m> ProposalCache<'m> {
    pub fn new(model: &'m OneStepModel) -> Self {
        Self {
            model,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &'m OneStepModel {
        self.model
    }

    pub fn get(&self, smiles: &str) -> Arc<CachedMol> {
        if let Some(e) = self.entries.read().expect("cache lock").get(smiles) {
            return e.clone();
        }
        let g = parse_smiles(smiles).expect("planner only handles canonical SMILES");
        let entry = Arc::new(CachedMol {
            num_atoms: g.num_atoms(),
            outcomes: self.model.outcomes(&g),
        });
        self.entries
            .write()
            .expect("cache lock")
            .entry(smiles.to_string())
            .or_insert(entry)
            .clone()
    }
}
