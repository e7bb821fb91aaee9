use std::collections::BTreeSet;
use std::fs;

use esd_core::harness::{
    block_starts, evaluate, ground_truth_refs, make_splits, random_policy_rollout, run_experiment, EvalSuite, ExperimentConfig,
    Method, MethodSummary, SplitCounts,
};
use esd_core::policy::{EpisodeEnv, TrainConfig};
use esd_core::scoring::score_map;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 3,
        scenes_per_type: 3,
        split: SplitCounts {
            train: 1,
            validation: 1,
            test: 1,
        },
        demos_per_scene: 4,
        rl_iterations: 1,
        starts_per_scene: Some(3),
        ..ExperimentConfig::default()
    };
    cfg.il.epochs = 2;
    cfg.rl.batch = 4;
    cfg
}

#[test]
fn splits_are_disjoint_and_deterministic() {
    let cfg = ExperimentConfig::default();
    let a = make_splits(&cfg).unwrap();
    let b = make_splits(&cfg).unwrap();
    assert_eq!(a.split, b.split);
    let sets: Vec<BTreeSet<u64>> = [&a.split.train, &a.split.validation, &a.split.test]
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    assert_eq!(sets[0].len() + sets[1].len() + sets[2].len(), a.scenes.len());
    assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
    assert_eq!(a.split.test.len(), 4 * cfg.split.test);
    for starts in &a.split.starts {
        let scene = a.scene(starts.scene_seed).unwrap();
        assert!(starts.validation.iter().chain(&starts.test).all(|p| scene.is_valid_pose(*p)));
        let cells: BTreeSet<_> = starts.validation.iter().chain(&starts.test).map(|p| (p.x, p.y)).collect();
        assert_eq!(cells.len(), starts.validation.len() + starts.test.len());
    }
}

#[test]
fn block_starts_cover_every_free_cell_once() {
    let data = make_splits(&ExperimentConfig::default()).unwrap();
    let scene = data.scene(data.split.test[0]).unwrap();
    let s = block_starts(scene, 4, 1);
    assert_eq!(s.validation.len() + s.test.len(), scene.free_cells().len());
    assert_eq!(s, block_starts(scene, 4, 1));
}

#[test]
fn references_come_from_the_gamma_band() {
    let cfg = ExperimentConfig::default();
    let lex = cfg.lexicon().unwrap();
    let data = make_splits(&cfg).unwrap();
    let (sensor, scoring) = (cfg.sensor(), cfg.scoring(&lex));
    for seed in data.split.test.iter().take(3) {
        let scene = data.scene(*seed).unwrap();
        let smap = score_map(scene, &lex, &scoring, &sensor);
        let refs = ground_truth_refs(scene, &smap, &lex, &sensor, cfg.gamma).unwrap();
        let band = smap.band(cfg.gamma);
        assert!(!band.is_empty() && refs.len() <= band.len());
        assert!(band.iter().all(|p| smap.score_of(*p).unwrap() >= cfg.gamma * smap.s_max));
        let distinct: BTreeSet<_> = refs.references().iter().collect();
        assert_eq!(distinct.len(), refs.len());
        let exact = ground_truth_refs(scene, &smap, &lex, &sensor, 1.0).unwrap();
        if smap.band(1.0).len() == 1 {
            assert_eq!(exact.len(), 1);
        }
    }
}

#[test]
fn random_rollouts_respect_the_horizon() {
    let cfg = ExperimentConfig::default();
    let lex = cfg.lexicon().unwrap();
    let data = make_splits(&cfg).unwrap();
    let (sensor, scoring) = (cfg.sensor(), cfg.scoring(&lex));
    let scene = &data.scenes[0];
    let env = EpisodeEnv {
        scene,
        lex: &lex,
        sensor: &sensor,
        scoring: &scoring,
    };
    let tc = TrainConfig::default();
    for (i, start) in scene.enumerate_viewpoints().into_iter().step_by(97).enumerate() {
        let a = random_policy_rollout(&env, start, &tc, i as u64);
        assert!(a.len() <= tc.horizon);
        let b = random_policy_rollout(&env, start, &tc, i as u64);
        assert_eq!(a.final_pose, b.final_pose);
    }
}

#[test]
fn stop_always_and_aggregates() {
    let cfg = small_config();
    let lex = cfg.lexicon().unwrap();
    let data = make_splits(&cfg).unwrap();
    let suite = EvalSuite::new(&data, &lex, &cfg).unwrap();
    let stop = evaluate(Method::StopAlways, None, &suite).unwrap();
    assert_eq!(stop.episodes.len(), 4 * 3);
    for r in &stop.episodes {
        assert_eq!(r.nos, 0);
        assert_eq!((r.final_x, r.final_y, r.final_h), (r.start_x, r.start_y, r.start_h));
    }
    let random = evaluate(Method::Random, None, &suite).unwrap();
    let recs = random.records(Method::Random);
    let recomputed = MethodSummary::from_records(Method::Random, &recs);
    assert_eq!(random.summary(Method::Random), Some(&recomputed));
    let mean_nos = recs.iter().map(|r| r.nos as f64).sum::<f64>() / recs.len() as f64;
    assert!((recomputed.nos - mean_nos).abs() < 1e-12);
    assert!(evaluate(Method::Il, None, &suite).is_err());
}

#[test]
fn end_to_end_run_reproduces() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = run_experiment(&cfg, a.path(), false).unwrap();
    run_experiment(&cfg, b.path(), false).unwrap();
    let report = out.report.unwrap();
    for m in [Method::StopAlways, Method::Random, Method::Il, Method::IlRl] {
        assert_eq!(report.records(m).len(), 12);
    }
    for f in [
        "config.json",
        "lexicon.json",
        "split.json",
        "references.json",
        "demos.jsonl",
        "checkpoints/il.json",
        "checkpoints/il_rl.json",
        "training.json",
        "seeds.json",
        "reports/summary.csv",
        "reports/episodes.csv",
        "reports/report.json",
        "reports/summary.txt",
    ] {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let saved = ExperimentConfig::load(&a.path().join("config.json")).unwrap();
    assert_eq!(serde_json::to_string(&saved).unwrap(), serde_json::to_string(&cfg).unwrap());
}

#[test]
fn dry_run_plans_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small_config(), &dir.path().join("run"), true).unwrap();
    assert!(!out.plan.is_empty());
    assert!(out.report.is_none());
    assert!(!dir.path().join("run").exists());
}
