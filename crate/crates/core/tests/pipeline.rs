use std::fs;

use crebm::harness::{run_pipeline, PipelineConfig};
use crebm::rxn::BenchmarkConfig;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: 3,
        benchmark: BenchmarkConfig {
            inventory_size: 40,
            molecule_budget: 300,
            max_depth: 4,
            ..BenchmarkConfig::default()
        },
        ..PipelineConfig::default()
    };
    cfg.onestep.epochs = 5;
    cfg.energy.epochs = 5;
    cfg.limits.expansions_budget = 300;
    cfg
}

#[test]
fn stages_are_cached_and_reports_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let first = run_pipeline(&cfg, dir.path()).unwrap();
    let names: Vec<&str> = first.stages.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "benchmark",
            "energy",
            "onestep",
            "plan-test-beam",
            "plan-test-retrostar-oracle",
            "plan-train-beam",
            "prefs"
        ]
    );
    for d in first.stages.values() {
        assert!(d.join(".done").exists());
    }
    let csv = fs::read_to_string(first.reports_dir.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("mode,metric,value\n"));
    for stem in [
        "eval_base",
        "eval_reranked",
        "plug_and_play_retrostar-oracle",
    ] {
        assert!(first.reports_dir.join(format!("{stem}.json")).exists());
        assert!(first.reports_dir.join(format!("{stem}.csv")).exists());
    }
    assert_eq!(first.ablation.reports.len(), 4);
    for r in &first.ablation.reports {
        assert!(r.topk.windows(2).all(|w| w[0] <= w[1]));
    }

    let er = &first.energy_report;
    assert!((er.epoch_losses[0] - std::f64::consts::LN_2).abs() < 0.05);
    assert!(er.heldout_accuracy[er.best_epoch - 1] > 0.5);

    // A finished stage is reused rather than recomputed.
    let marker = first.stages["energy"].join("energy.json");
    let before = fs::metadata(&marker).unwrap().modified().unwrap();
    let second = run_pipeline(&cfg, dir.path()).unwrap();
    assert_eq!(fs::metadata(&marker).unwrap().modified().unwrap(), before);
    assert_eq!(second.ablation, first.ablation);

    // Changing a late setting leaves earlier stages untouched.
    let mut tweaked = cfg.clone();
    tweaked.energy.lambda = 1e-3;
    let third = run_pipeline(&tweaked, dir.path()).unwrap();
    assert_eq!(third.stages["prefs"], first.stages["prefs"]);
    assert_ne!(third.stages["energy"], first.stages["energy"]);
}

#[test]
fn invalid_limits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.limits.beam_width = 0;
    assert!(run_pipeline(&cfg, dir.path()).is_err());
}
