//! Residual energy over (target, starting materials, depth) features: a
//! one-hidden-layer tanh network trained with a pairwise Bradley-Terry loss.

use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CriterionId;
use crate::error::{Error, Result};
use crate::molcore::{fingerprint_union, parse_smiles, tanimoto, FingerprintConfig, MolGraph};
use crate::route::Route;

pub const HIDDEN: usize = 32;
const DENSE: usize = 3;

/// Sparse input vector: active one-hot indices below `2 * nbits` plus three
/// dense trailing features.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteFeatures {
    pub active: Vec<u32>,
    pub dense: [f64; DENSE],
}

/// Layout: `[fp(target) | fp_union(B) | tanimoto(target, B) | |B| / 8 | depth / 8]`.
pub fn route_features(
    route: &Route,
    target: &MolGraph,
    fp: FingerprintConfig,
) -> Result<RouteFeatures> {
    let leaves: Vec<MolGraph> = route
        .leaves()
        .iter()
        .map(|s| parse_smiles(s))
        .collect::<Result<_, _>>()?;
    features_from_parts(target, &leaves, route.depth(), fp)
}

pub fn features_from_parts(
    target: &MolGraph,
    leaves: &[MolGraph],
    depth: usize,
    fp: FingerprintConfig,
) -> Result<RouteFeatures> {
    let ft = fp.of(target);
    let fb = fingerprint_union(leaves.iter(), fp.radius, fp.nbits)?;
    let mut active: Vec<u32> = ft.bits().to_vec();
    active.extend(fb.bits().iter().map(|b| b + fp.nbits as u32));
    Ok(RouteFeatures {
        active,
        dense: [
            tanimoto(&ft, &fb)?,
            leaves.len() as f64 / 8.0,
            depth as f64 / 8.0,
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheckpoint {
    pub criterion: CriterionId,
    pub nbits: usize,
    #[serde(default = "default_radius")]
    pub radius: usize,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn default_radius() -> usize {
    FingerprintConfig::default().radius
}

/// Parameters are kept flat: `w1` row-major (`HIDDEN x feature_dim`), then
/// `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub criterion: CriterionId,
    pub fp: FingerprintConfig,
    pub params: Vec<f64>,
}

impl EnergyModel {
    pub fn feature_dim(&self) -> usize {
        2 * self.fp.nbits + DENSE
    }

    pub fn num_params(fp: FingerprintConfig) -> usize {
        let d = 2 * fp.nbits + DENSE;
        HIDDEN * d + 2 * HIDDEN + 1
    }

    pub fn zeros(criterion: CriterionId, fp: FingerprintConfig) -> Self {
        Self {
            criterion,
            fp,
            params: vec![0.0; Self::num_params(fp)],
        }
    }

    pub fn uniform(
        criterion: CriterionId,
        fp: FingerprintConfig,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let params = (0..Self::num_params(fp))
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        Self {
            criterion,
            fp,
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = HIDDEN * self.feature_dim();
        (w1, w1 + HIDDEN, w1 + 2 * HIDDEN)
    }

    fn hidden(&self, x: &RouteFeatures) -> [f64; HIDDEN] {
        let d = self.feature_dim();
        let dense0 = 2 * self.fp.nbits;
        let (b1, _, _) = self.offsets();
        let mut h = [0.0; HIDDEN];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.params[j * d..(j + 1) * d];
            let mut pre = self.params[b1 + j];
            for &i in &x.active {
                pre += row[i as usize];
            }
            for (k, v) in x.dense.iter().enumerate() {
                pre += row[dense0 + k] * v;
            }
            *hj = pre.tanh();
        }
        h
    }

    pub fn energy(&self, x: &RouteFeatures) -> f64 {
        let (_, w2, b2) = self.offsets();
        let h = self.hidden(x);
        self.params[b2]
            + h.iter()
                .zip(&self.params[w2..w2 + HIDDEN])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// Adds `upstream * dE/dθ` into `grad`.
    fn backprop(&self, x: &RouteFeatures, upstream: f64, grad: &mut [f64]) {
        let d = self.feature_dim();
        let dense0 = 2 * self.fp.nbits;
        let (b1, w2, b2) = self.offsets();
        let h = self.hidden(x);
        grad[b2] += upstream;
        for j in 0..HIDDEN {
            grad[w2 + j] += upstream * h[j];
            let dpre = upstream * self.params[w2 + j] * (1.0 - h[j] * h[j]);
            grad[b1 + j] += dpre;
            let row = &mut grad[j * d..(j + 1) * d];
            for &i in &x.active {
                row[i as usize] += dpre;
            }
            for (k, v) in x.dense.iter().enumerate() {
                row[dense0 + k] += dpre * v;
            }
        }
    }

    pub fn to_checkpoint(&self) -> EnergyCheckpoint {
        let d = self.feature_dim();
        let (b1, w2, b2) = self.offsets();
        EnergyCheckpoint {
            criterion: self.criterion,
            nbits: self.fp.nbits,
            radius: self.fp.radius,
            w1: (0..HIDDEN)
                .map(|j| self.params[j * d..(j + 1) * d].to_vec())
                .collect(),
            b1: self.params[b1..w2].to_vec(),
            w2: self.params[w2..b2].to_vec(),
            b2: self.params[b2],
        }
    }

    pub fn from_checkpoint(c: EnergyCheckpoint) -> Result<Self> {
        let fp = FingerprintConfig {
            radius: c.radius,
            nbits: c.nbits,
        };
        let d = 2 * c.nbits + DENSE;
        let ok = c.nbits >= 64
            && c.w1.len() == HIDDEN
            && c.w1.iter().all(|r| r.len() == d)
            && c.b1.len() == HIDDEN
            && c.w2.len() == HIDDEN;
        if !ok {
            return Err(Error::Validation("energy checkpoint shape mismatch".into()));
        }
        let mut params: Vec<f64> = c.w1.into_iter().flatten().collect();
        params.extend(c.b1);
        params.extend(c.w2);
        params.push(c.b2);
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Validation(
                "energy checkpoint holds non-finite parameters".into(),
            ));
        }
        Ok(Self {
            criterion: c.criterion,
            fp,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn energy_score(model: &EnergyModel, route: &Route, target: &MolGraph) -> Result<f64> {
    Ok(model.energy(&route_features(route, target, model.fp)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub winner: RouteFeatures,
    pub loser: RouteFeatures,
}

/// `-log sigmoid(s)` without overflow.
fn neg_log_sigmoid(s: f64) -> f64 {
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-log sigmoid(E(loser) - E(winner))` over the batch plus
/// `lambda * |θ|²`, with its exact gradient.
pub fn bt_loss_and_grad(
    model: &EnergyModel,
    batch: &[FeaturePair],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty preference batch".into()));
    }
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for p in batch {
        let s = model.energy(&p.loser) - model.energy(&p.winner);
        loss += neg_log_sigmoid(s);
        // d/ds of -log sigmoid(s) is -sigmoid(-s)
        let g = -sigmoid(-s) * scale;
        model.backprop(&p.loser, g, &mut grad);
        model.backprop(&p.winner, -g, &mut grad);
    }
    loss *= scale;
    if lambda != 0.0 {
        for (g, p) in grad.iter_mut().zip(&model.params) {
            *g += 2.0 * lambda * p;
        }
        loss += lambda * model.params.iter().map(|p| p * p).sum::<f64>();
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub init_scale: f64,
    pub holdout: f64,
    pub seed: u64,
}

impl Default for EnergyTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            epochs: 40,
            lambda: 1e-4,
            init_scale: 0.05,
            holdout: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrainReport {
    /// Training-set loss at initialization followed by one entry per epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out pairwise accuracy after each epoch.
    pub heldout_accuracy: Vec<f64>,
    pub best_epoch: usize,
    pub num_train: usize,
    pub num_heldout: usize,
}

pub fn pair_accuracy(model: &EnergyModel, pairs: &[FeaturePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let right = pairs
        .iter()
        .filter(|p| model.energy(&p.winner) < model.energy(&p.loser))
        .count();
    right as f64 / pairs.len() as f64
}

/// Adam on the pairwise loss. A seeded 10% of the pairs is held out and the
/// parameters from the epoch with the best held-out accuracy are returned
/// (earliest epoch on ties; the last epoch when nothing is held out).
pub fn train_energy(
    pairs: &[FeaturePair],
    criterion: CriterionId,
    fp: FingerprintConfig,
    hyper: &EnergyTrainConfig,
) -> Result<(EnergyModel, EnergyTrainReport)> {
    if pairs.is_empty() {
        return Err(Error::Validation("no preference pairs to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut model = EnergyModel::uniform(criterion, fp, hyper.init_scale, &mut rng);
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut rng);
    let n_hold = if pairs.len() >= 2 {
        ((pairs.len() as f64 * hyper.holdout).floor() as usize).min(pairs.len() - 1)
    } else {
        0
    };
    let held: Vec<FeaturePair> = idx[..n_hold].iter().map(|&i| pairs[i].clone()).collect();
    let train: Vec<FeaturePair> = idx[n_hold..].iter().map(|&i| pairs[i].clone()).collect();

    let n = model.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = EnergyTrainReport {
        epoch_losses: vec![bt_loss_and_grad(&model, &train, hyper.lambda)?.0],
        heldout_accuracy: Vec::new(),
        best_epoch: 0,
        num_train: train.len(),
        num_heldout: held.len(),
    };
    let mut best: Option<(f64, EnergyModel)> = None;
    let mut t = 0i32;
    let mut batch: Vec<FeaturePair> = Vec::with_capacity(hyper.batch_size);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i].clone()));
            let (_, g) = bt_loss_and_grad(&model, &batch, hyper.lambda)?;
            t += 1;
            let c1 = 1.0 - hyper.beta1.powi(t);
            let c2 = 1.0 - hyper.beta2.powi(t);
            for k in 0..n {
                m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
                v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
                model.params[k] -= hyper.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + hyper.eps);
            }
        }
        let loss = bt_loss_and_grad(&model, &train, hyper.lambda)?.0;
        let acc = pair_accuracy(&model, &held);
        info!("energy epoch {epoch} loss {loss:.6} held-out accuracy {acc:.4}");
        report.epoch_losses.push(loss);
        report.heldout_accuracy.push(acc);
        let better = match &best {
            None => true,
            Some((b, _)) => held.is_empty() || acc > *b,
        };
        if better {
            best = Some((acc, model.clone()));
            report.best_epoch = epoch;
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok((model, report))
}
