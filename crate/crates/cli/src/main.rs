use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use crebm::crebm::{
    build_preference_pairs, pair_features, read_pairs, rerank_routes, train_energy, write_pairs,
    CriterionId, EnergyModel, EnergyTrainConfig, PairConfig, RankMode, RewardContext,
};
use crebm::harness::{
    evaluate_topk, run_ablation, run_pipeline, training_reactions, PipelineConfig,
};
use crebm::molcore::FingerprintConfig;
use crebm::proposer::{train_onestep, OneStepModel, TrainConfig};
use crebm::route::Route;
use crebm::rxn::{generate_benchmark, Benchmark, BenchmarkConfig};
use crebm::search::{plan_targets, read_routes, write_routes, Algo, SearchLimits};

#[derive(Parser)]
#[command(
    name = "crebm",
    version,
    about = "Synthetic retrosynthesis benchmark, planners and route reranking"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic benchmark directory.
    GenBenchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the one-step model on reactions from training reference routes.
    TrainOnestep {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan routes for every target of a split.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "beam")]
        algo: Algo,
        #[arg(long, default_value_t = 10)]
        beam_width: usize,
        /// Proposals expanded per molecule.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 6)]
        max_depth: usize,
        #[arg(long, default_value_t = 2000)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build preference pairs from sampled routes.
    BuildPrefs {
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value = "feasibility")]
        criterion: CriterionId,
        #[arg(long, default_value_t = 10)]
        k_samples: usize,
        #[arg(long, default_value = "train")]
        split: String,
        /// One-step model used to score the reference route.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an energy model on preference pairs.
    TrainCrebm {
        #[arg(long)]
        prefs: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "feasibility")]
        criterion: CriterionId,
        /// JSON training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reorder route pools by -logP + E.
    Rerank {
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k exact-match accuracy of ranked routes.
    Evaluate {
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 5)]
        kmax: usize,
        /// Output stem; writes <stem>.json and <stem>.csv.
        #[arg(long)]
        report: PathBuf,
    },
    /// Evaluate all four ranking modes on the same pools.
    Ablate {
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        energy: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 5)]
        kmax: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run every stage, reusing completed ones under the work directory.
    RunPipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workdir: PathBuf,
    },
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(crebm::Error::from)?)
        }
    }
}

fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    Benchmark::read_dir(dir).with_context(|| format!("loading benchmark {}", dir.display()))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenBenchmark { config, seed, out } => {
            let cfg: BenchmarkConfig = read_json(config.as_deref())?;
            let bench = generate_benchmark(&cfg, seed)?;
            bench.write_dir(&out)?;
            info!(
                "{} rules, {} inventory, {} targets",
                bench.rules.len(),
                bench.inventory.len(),
                bench.references.len()
            );
        }
        Cmd::TrainOnestep {
            benchmark,
            seed,
            config,
            out,
        } => {
            let bench = load_benchmark(&benchmark)?;
            let cfg = TrainConfig {
                seed,
                ..read_json(config.as_deref())?
            };
            let outcome = train_onestep(
                &bench.rules,
                FingerprintConfig::default(),
                &training_reactions(&bench),
                &cfg,
            )?;
            if let Some(l) = outcome.epoch_losses.last() {
                info!("final loss {l:.4}");
            }
            outcome.model.save(&out)?;
        }
        Cmd::Plan {
            model,
            benchmark,
            split,
            algo,
            beam_width,
            k,
            max_depth,
            budget,
            out,
        } => {
            let bench = load_benchmark(&benchmark)?;
            let model = OneStepModel::load(&model, &bench.rules)?;
            let limits = SearchLimits {
                beam_width,
                max_depth,
                expansions_budget: budget,
                proposals_per_node: k,
            };
            let routes = plan_targets(
                bench.splits.get(&split)?,
                &model,
                &bench.inventory,
                algo,
                limits,
            )?;
            info!(
                "solved {} of {} targets",
                routes.len(),
                bench.splits.get(&split)?.len()
            );
            write_routes(&out, &routes)?;
        }
        Cmd::BuildPrefs {
            routes,
            benchmark,
            criterion,
            k_samples,
            split,
            model,
            out,
        } => {
            let bench = load_benchmark(&benchmark)?;
            let sampled = read_routes(&routes)?;
            let model = model
                .map(|p| OneStepModel::load(&p, &bench.rules))
                .transpose()?;
            let cfg = PairConfig {
                k_samples,
                ..PairConfig::default()
            };
            let pairs = build_preference_pairs(
                bench.splits.get(&split)?,
                &sampled,
                &bench.references,
                model.as_ref(),
                criterion,
                &RewardContext::new(&bench.rules),
                &cfg,
            )?;
            info!("{} pairs", pairs.len());
            write_pairs(&out, &pairs)?;
        }
        Cmd::TrainCrebm {
            prefs,
            seed,
            criterion,
            config,
            out,
        } => {
            let fp = FingerprintConfig::default();
            let cfg = EnergyTrainConfig {
                seed,
                ..read_json(config.as_deref())?
            };
            let feats = pair_features(&read_pairs(&prefs)?, fp)?;
            let (model, report) = train_energy(&feats, criterion, fp, &cfg)?;
            let best = report
                .heldout_accuracy
                .iter()
                .copied()
                .fold(f64::NAN, f64::max);
            info!(
                "best held-out accuracy {best:.4} at epoch {}",
                report.best_epoch
            );
            model.save(&out)?;
        }
        Cmd::Rerank {
            routes,
            energy,
            out,
        } => {
            let pools = read_routes(&routes)?;
            let model = EnergyModel::load(&energy)?;
            let ranked = pools
                .iter()
                .map(|(t, rs)| Ok((t.clone(), rerank_routes(rs, &model)?)))
                .collect::<crebm::Result<BTreeMap<String, Vec<Route>>>>()?;
            write_routes(&out, &ranked)?;
        }
        Cmd::Evaluate {
            routes,
            benchmark,
            split,
            kmax,
            report,
        } => {
            let bench = load_benchmark(&benchmark)?;
            let pools = read_routes(&routes)?;
            let rep = evaluate_topk(
                bench.splits.get(&split)?,
                &pools,
                &bench.references,
                kmax,
                "as-given",
            )?;
            rep.write(&report)?;
            print!("{}", rep.to_csv());
        }
        Cmd::Ablate {
            routes,
            energy,
            benchmark,
            split,
            kmax,
            report,
        } => {
            let bench = load_benchmark(&benchmark)?;
            let pools = read_routes(&routes)?;
            let model = EnergyModel::load(&energy)?;
            let rep = run_ablation(
                bench.splits.get(&split)?,
                &pools,
                &bench.references,
                &model,
                &RankMode::ALL,
                kmax,
            )?;
            rep.write(&report)?;
            print!("{}", rep.to_csv());
        }
        Cmd::RunPipeline { config, workdir } => {
            let cfg: PipelineConfig = read_json(config.as_deref())?;
            let summary = run_pipeline(&cfg, &workdir)?;
            print!("{}", summary.ablation.to_csv());
            print!("{}", summary.plug_and_play.to_csv());
            info!("reports in {}", summary.reports_dir.display());
        }
    }
    Ok(())
}

/// Bad inputs exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<crebm::Error>() {
        Some(crebm::Error::Io(_)) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
