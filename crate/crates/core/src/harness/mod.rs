//! Exact-match metrics, ablation over ranking modes and the staged
//! experiment pipeline.

mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pipeline::{run_pipeline, training_reactions, PipelineConfig, PipelineSummary};

use crate::crebm::{rank_with_energies, route_energies, EnergyModel, RankMode};
use crate::error::{Error, Result};
use crate::route::Route;

pub const DEPTH_BUCKETS: std::ops::RangeInclusive<usize> = 2..=6;

/// True iff `predicted` equals one of the reference sets.
pub fn exact_match_starting_materials(
    predicted: &BTreeSet<String>,
    references: &[BTreeSet<String>],
) -> Result<bool> {
    if references.is_empty() {
        return Err(Error::Validation("no reference material sets".into()));
    }
    Ok(references.iter().any(|r| r == predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub target: String,
    /// Leaf sets of the ranked routes, best first.
    pub predicted: Vec<Vec<String>>,
    /// 1-based rank of the first exact match.
    pub matched_rank: Option<usize>,
    pub reference_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBucket {
    pub depth: usize,
    pub targets: usize,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub num_targets: usize,
    /// Accuracy in percent for k = 1..=kmax.
    pub topk: Vec<f64>,
    pub depth_top1: Vec<DepthBucket>,
    pub records: Vec<TargetRecord>,
}

fn pct(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

/// Top-k exact-match accuracy over `targets`. Targets missing from
/// `results` count as misses. Depth buckets use the shallowest reference
/// route of each target.
pub fn evaluate_topk(
    targets: &[String],
    results: &BTreeMap<String, Vec<Route>>,
    references: &BTreeMap<String, Vec<Route>>,
    kmax: usize,
    mode: &str,
) -> Result<EvalReport> {
    let empty = Vec::new();
    let mut records = Vec::with_capacity(targets.len());
    let mut sorted: Vec<&String> = targets.iter().collect();
    sorted.sort();
    sorted.dedup();
    for t in sorted {
        let refs = references
            .get(t)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| Error::Validation(format!("target {t} has no reference routes")))?;
        let ref_sets: Vec<BTreeSet<String>> = refs.iter().map(Route::leaves).collect();
        let routes = results.get(t).unwrap_or(&empty);
        let mut matched_rank = None;
        let mut predicted = Vec::with_capacity(routes.len());
        for (i, r) in routes.iter().enumerate() {
            let leaves = r.leaves();
            if matched_rank.is_none() && exact_match_starting_materials(&leaves, &ref_sets)? {
                matched_rank = Some(i + 1);
            }
            predicted.push(leaves.into_iter().collect());
        }
        records.push(TargetRecord {
            target: t.clone(),
            predicted,
            matched_rank,
            reference_depth: refs.iter().map(Route::depth).min().unwrap_or(0),
        });
    }
    let n = records.len();
    let topk = (1..=kmax)
        .map(|k| {
            pct(
                records
                    .iter()
                    .filter(|r| r.matched_rank.is_some_and(|m| m <= k))
                    .count(),
                n,
            )
        })
        .collect();
    let depth_top1 = DEPTH_BUCKETS
        .map(|d| {
            let inside: Vec<&TargetRecord> =
                records.iter().filter(|r| r.reference_depth == d).collect();
            DepthBucket {
                depth: d,
                targets: inside.len(),
                top1: pct(
                    inside.iter().filter(|r| r.matched_rank == Some(1)).count(),
                    inside.len(),
                ),
            }
        })
        .collect();
    Ok(EvalReport {
        mode: mode.to_string(),
        num_targets: n,
        topk,
        depth_top1,
        records,
    })
}

impl EvalReport {
    pub fn top1(&self) -> f64 {
        self.topk.first().copied().unwrap_or(0.0)
    }

    fn csv_rows(&self, out: &mut String) {
        for (k, v) in self.topk.iter().enumerate() {
            writeln!(out, "{},top{},{:.4}", self.mode, k + 1, v).unwrap();
        }
        for b in &self.depth_top1 {
            writeln!(out, "{},depth{}_targets,{}", self.mode, b.depth, b.targets).unwrap();
            writeln!(out, "{},depth{}_top1,{:.4}", self.mode, b.depth, b.top1).unwrap();
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,metric,value\n");
        self.csv_rows(&mut out);
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_dual(stem, &serde_json::to_string_pretty(self)?, &self.to_csv())
    }
}

fn write_dual(stem: &Path, json: &str, csv: &str) -> Result<()> {
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(stem.with_extension("json"), format!("{json}\n"))?;
    fs::write(stem.with_extension("csv"), csv)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reports: Vec<EvalReport>,
    /// Top-1 change of each mode relative to the first one.
    pub delta_top1: Vec<f64>,
}

impl AblationReport {
    pub fn get(&self, mode: RankMode) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.mode == mode.label())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,metric,value\n");
        for (r, d) in self.reports.iter().zip(&self.delta_top1) {
            r.csv_rows(&mut out);
            writeln!(out, "{},delta_top1,{:.4}", r.mode, d).unwrap();
        }
        out
    }

    pub fn write(&self, stem: &Path) -> Result<()> {
        let slim = AblationReport {
            reports: self
                .reports
                .iter()
                .map(|r| EvalReport {
                    records: Vec::new(),
                    ..r.clone()
                })
                .collect(),
            delta_top1: self.delta_top1.clone(),
        };
        write_dual(stem, &serde_json::to_string_pretty(&slim)?, &self.to_csv())
    }
}

/// Scores every candidate pool once and evaluates each ranking mode on the
/// same pools.
pub fn run_ablation(
    targets: &[String],
    candidates: &BTreeMap<String, Vec<Route>>,
    references: &BTreeMap<String, Vec<Route>>,
    energy: &EnergyModel,
    modes: &[RankMode],
    kmax: usize,
) -> Result<AblationReport> {
    let scored: Vec<Result<(String, Vec<f64>)>> = candidates
        .par_iter()
        .map(|(t, routes)| Ok((t.clone(), route_energies(routes, energy)?)))
        .collect();
    let energies: BTreeMap<String, Vec<f64>> = scored.into_iter().collect::<Result<_>>()?;
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        let ranked: BTreeMap<String, Vec<Route>> = candidates
            .iter()
            .map(|(t, routes)| (t.clone(), rank_with_energies(routes, &energies[t], mode)))
            .collect();
        reports.push(evaluate_topk(
            targets,
            &ranked,
            references,
            kmax,
            mode.label(),
        )?);
    }
    let base = reports.first().map_or(0.0, EvalReport::top1);
    let delta_top1 = reports.iter().map(|r| r.top1() - base).collect();
    Ok(AblationReport {
        reports,
        delta_top1,
    })
}
