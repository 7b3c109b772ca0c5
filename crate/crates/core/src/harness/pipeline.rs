//! The full experiment as content-addressed stages.
//!
//! Every stage writes into `stages/<name>-<hash>/`, where the hash covers
//! the stage's own settings and the hashes of the stages it reads. A stage
//! whose directory is already complete is skipped, and downstream stages
//! always read their inputs back from disk, so a resumed run and a fresh
//! run see the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{run_ablation, AblationReport};
use crate::crebm::{
    build_preference_pairs, pair_features, read_pairs, train_energy, write_pairs, CriterionId,
    EnergyModel, EnergyTrainConfig, EnergyTrainReport, PairConfig, RankMode, RewardContext,
};
use crate::error::Result;
use crate::proposer::{train_onestep, OneStepModel, TrainConfig};
use crate::rxn::{generate_benchmark, Benchmark, BenchmarkConfig, ReactionRecord};
use crate::search::{plan_targets, read_routes, write_routes, Algo, SearchLimits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub benchmark: BenchmarkConfig,
    pub onestep: TrainConfig,
    pub limits: SearchLimits,
    pub pairs: PairConfig,
    pub criterion: CriterionId,
    pub energy: EnergyTrainConfig,
    /// Planner whose pools are reranked with the same energy model.
    pub second_planner: Algo,
    pub kmax: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            benchmark: BenchmarkConfig::default(),
            onestep: TrainConfig::default(),
            limits: SearchLimits::default(),
            pairs: PairConfig::default(),
            criterion: CriterionId::Feasibility,
            energy: EnergyTrainConfig::default(),
            second_planner: Algo::RetrostarOracle,
            kmax: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub stages: BTreeMap<String, PathBuf>,
    pub reports_dir: PathBuf,
    pub ablation: AblationReport,
    pub plug_and_play: AblationReport,
    pub energy_report: EnergyTrainReport,
    pub onestep_losses: Vec<f64>,
}

/// Reactions appearing in the reference routes of the training targets,
/// deduplicated and sorted.
pub fn training_reactions(bench: &Benchmark) -> Vec<ReactionRecord> {
    let mut set = BTreeSet::new();
    for t in &bench.splits.train {
        for r in bench.references.get(t).into_iter().flatten() {
            for s in &r.steps {
                set.insert((s.product.clone(), s.reactants.clone(), s.rule_id.clone()));
            }
        }
    }
    set.into_iter()
        .map(|(product, reactants, rule_id)| ReactionRecord {
            product,
            reactants,
            rule_id,
        })
        .collect()
}

struct Stages {
    root: PathBuf,
    dirs: BTreeMap<String, PathBuf>,
}

impl Stages {
    /// Runs `body` into a fresh directory unless the stage is already
    /// complete. Returns the directory and the stage hash.
    fn run<F>(
        &mut self,
        name: &str,
        inputs: serde_json::Value,
        body: F,
    ) -> Result<(PathBuf, String)>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let digest = Sha256::digest(format!("{name}\n{inputs}").as_bytes());
        let hash = hex::encode(&digest[..8]);
        let dir = self.root.join("stages").join(format!("{name}-{hash}"));
        if dir.join(".done").exists() {
            info!("stage {name}: cached at {}", dir.display());
        } else {
            info!("stage {name}: running");
            let tmp = dir.with_extension("partial");
            if tmp.exists() {
                fs::remove_dir_all(&tmp)?;
            }
            fs::create_dir_all(&tmp)?;
            fs::write(
                tmp.join("inputs.json"),
                serde_json::to_string_pretty(&inputs)? + "\n",
            )?;
            body(&tmp)?;
            fs::write(tmp.join(".done"), "")?;
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::rename(&tmp, &dir)?;
        }
        self.dirs.insert(name.to_string(), dir.clone());
        Ok((dir, hash))
    }
}

fn algo_name(a: Algo) -> String {
    serde_json::to_value(a)
        .expect("enum serializes")
        .as_str()
        .unwrap_or("planner")
        .to_string()
}

pub fn run_pipeline(cfg: &PipelineConfig, workdir: &Path) -> Result<PipelineSummary> {
    cfg.benchmark.validate()?;
    cfg.limits.validate()?;
    let mut stages = Stages {
        root: workdir.to_path_buf(),
        dirs: BTreeMap::new(),
    };

    let (bench_dir, bench_hash) = stages.run(
        "benchmark",
        json!({"seed": cfg.seed, "config": cfg.benchmark}),
        |d| generate_benchmark(&cfg.benchmark, cfg.seed)?.write_dir(d),
    )?;
    let bench = Benchmark::read_dir(&bench_dir)?;

    let onestep_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.onestep
    };
    let (onestep_dir, onestep_hash) = stages.run(
        "onestep",
        json!({"benchmark": bench_hash, "train": onestep_cfg}),
        |d| {
            let out = train_onestep(
                &bench.rules,
                Default::default(),
                &training_reactions(&bench),
                &onestep_cfg,
            )?;
            out.model.save(&d.join("onestep.json"))?;
            fs::write(
                d.join("losses.json"),
                serde_json::to_string(&out.epoch_losses)? + "\n",
            )?;
            Ok(())
        },
    )?;
    let model = OneStepModel::load(&onestep_dir.join("onestep.json"), &bench.rules)?;
    let onestep_losses: Vec<f64> =
        serde_json::from_str(&fs::read_to_string(onestep_dir.join("losses.json"))?)?;

    let plan = |stages: &mut Stages, split: &str, algo: Algo| -> Result<(PathBuf, String)> {
        let name = format!("plan-{split}-{}", algo_name(algo));
        let inputs = json!({"onestep": onestep_hash, "benchmark": bench_hash, "split": split, "algo": algo, "limits": cfg.limits});
        stages.run(&name, inputs, |d| {
            let targets = bench.splits.get(split)?;
            let routes = plan_targets(targets, &model, &bench.inventory, algo, cfg.limits)?;
            write_routes(&d.join("routes.jsonl"), &routes)
        })
    };
    let (train_dir, train_hash) = plan(&mut stages, "train", Algo::Beam)?;
    let (test_dir, _) = plan(&mut stages, "test", Algo::Beam)?;
    let (second_dir, _) = plan(&mut stages, "test", cfg.second_planner)?;

    let fp = model.fingerprint_config();
    let (prefs_dir, prefs_hash) = stages.run(
        "prefs",
        json!({"routes": train_hash, "onestep": onestep_hash, "benchmark": bench_hash, "pairs": cfg.pairs, "criterion": cfg.criterion}),
        |d| {
            let sampled = read_routes(&train_dir.join("routes.jsonl"))?;
            let ctx = RewardContext::new(&bench.rules);
            let pairs = build_preference_pairs(
                &bench.splits.train,
                &sampled,
                &bench.references,
                Some(&model),
                cfg.criterion,
                &ctx,
                &cfg.pairs,
            )?;
            write_pairs(&d.join("prefs.jsonl"), &pairs)
        },
    )?;

    let energy_cfg = EnergyTrainConfig {
        seed: cfg.seed,
        ..cfg.energy
    };
    let (energy_dir, _) = stages.run(
        "energy",
        json!({"prefs": prefs_hash, "train": energy_cfg}),
        |d| {
            let pairs = read_pairs(&prefs_dir.join("prefs.jsonl"))?;
            let feats = pair_features(&pairs, fp)?;
            let (model, report) = train_energy(&feats, cfg.criterion, fp, &energy_cfg)?;
            model.save(&d.join("energy.json"))?;
            fs::write(
                d.join("train_report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            Ok(())
        },
    )?;
    let energy = EnergyModel::load(&energy_dir.join("energy.json"))?;
    let energy_report: EnergyTrainReport =
        serde_json::from_str(&fs::read_to_string(energy_dir.join("train_report.json"))?)?;

    let reports_dir = workdir.join("reports");
    fs::create_dir_all(&reports_dir)?;
    let test_pools = read_routes(&test_dir.join("routes.jsonl"))?;
    let ablation = run_ablation(
        &bench.splits.test,
        &test_pools,
        &bench.references,
        &energy,
        &RankMode::ALL,
        cfg.kmax,
    )?;
    ablation.write(&reports_dir.join("ablation"))?;
    for r in &ablation.reports {
        let stem = match r.mode.as_str() {
            "-logP" => "eval_base",
            "-logP+E" => "eval_reranked",
            _ => continue,
        };
        r.write(&reports_dir.join(stem))?;
    }

    let second_pools = read_routes(&second_dir.join("routes.jsonl"))?;
    let plug_and_play = run_ablation(
        &bench.splits.test,
        &second_pools,
        &bench.references,
        &energy,
        &[RankMode::LogP, RankMode::LogPPlusEnergy],
        cfg.kmax,
    )?;
    plug_and_play
        .write(&reports_dir.join(format!("plug_and_play_{}", algo_name(cfg.second_planner))))?;

    Ok(PipelineSummary {
        stages: stages.dirs,
        reports_dir,
        ablation,
        plug_and_play,
        energy_report,
        onestep_losses,
    })
}
