mod common;

use esd_core::demogen::{make_demos, DemoConfig};
use esd_core::gridscene::Scene;
use esd_core::lexicon::Lexicon;
use esd_core::perception::{ScoreMode, SensorConfig};
use esd_core::policy::{
    grad_check, il_loss_and_grad, prepare_demo, reinforce_update, returns, rollout, run_episode, train_il, EpisodeEnv,
    PolicyParams, PolicyShape, RandomController, RolloutMode, Termination, TrainConfig, Trajectory,
};
use esd_core::scoring::ScoringConfig;

struct Fixture {
    lex: Lexicon,
    scenes: Vec<Scene>,
    sensor: SensorConfig,
    scoring: ScoringConfig,
}

fn fixture() -> Fixture {
    let lex = Lexicon::build(4).unwrap();
    let scoring = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
    Fixture {
        scenes: common::scenes(4, 31),
        sensor: SensorConfig::default(),
        scoring,
        lex,
    }
}

fn demo_batch(f: &Fixture, per_scene: usize) -> Vec<Trajectory> {
    let cfg = DemoConfig {
        per_scene,
        ..DemoConfig::default()
    };
    let demos = make_demos(&f.scenes, &f.lex, &f.scoring, &f.sensor, &cfg).unwrap();
    demos
        .iter()
        .map(|d| {
            let scene = f.scenes.iter().find(|s| s.seed() == d.scene_seed).unwrap();
            prepare_demo(d, scene, &f.lex, &f.sensor)
        })
        .collect()
}

fn env(f: &Fixture, i: usize) -> EpisodeEnv<'_> {
    EpisodeEnv {
        scene: &f.scenes[i],
        lex: &f.lex,
        sensor: &f.sensor,
        scoring: &f.scoring,
    }
}

#[test]
fn il_loss_decreases_on_a_fixed_batch() {
    let f = fixture();
    let batch = demo_batch(&f, 2);
    let mut params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 8, 16), 1);
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let (loss, grad) = il_loss_and_grad(&params, &batch).unwrap();
        assert!(loss <= prev + 1e-12, "{loss} after {prev}");
        prev = loss;
        params.axpy(-1e-3, &grad);
    }
}

#[test]
fn train_il_records_a_falling_loss() {
    let f = fixture();
    let batch = demo_batch(&f, 4);
    let params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 16, 8), 2);
    let cfg = TrainConfig {
        epochs: 30,
        batch: 4,
        lr: 0.05,
        ..TrainConfig::default()
    };
    let out = train_il(&params, &batch, &cfg).unwrap();
    assert!(out.params.is_finite());
    let n = out.losses.len();
    assert!(n >= 30);
    let head: f64 = out.losses[..4].iter().sum();
    let tail: f64 = out.losses[n - 4..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn rewards_telescope_to_final_progress() {
    let f = fixture();
    let params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 8, 16), 4);
    let cfg = TrainConfig::default();
    for i in 0..f.scenes.len() {
        let e = env(&f, i);
        let start = f.scenes[i].enumerate_viewpoints()[i * 13];
        for seed in 0..10 {
            let episodes = [
                run_episode(&e, &mut RandomController, start, &cfg, seed).unwrap(),
                rollout(&params, &e, start, &cfg, RolloutMode::Sample, seed).unwrap(),
            ];
            for ep in episodes {
                let sum: f64 = ep.rewards().iter().sum();
                assert!((sum - (ep.final_progress() - ep.start_score)).abs() <= 1e-9);
                assert!(ep.len() <= cfg.horizon);
                assert_eq!(ep.termination == Termination::HorizonReached, ep.len() == cfg.horizon);
            }
        }
    }
}

#[test]
fn rollouts_are_deterministic() {
    let f = fixture();
    let params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 8, 16), 5);
    let e = env(&f, 1);
    let start = f.scenes[1].enumerate_viewpoints()[7];
    let cfg = TrainConfig::default();
    for mode in [RolloutMode::Sample, RolloutMode::Greedy] {
        let a = rollout(&params, &e, start, &cfg, mode, 99).unwrap();
        let b = rollout(&params, &e, start, &cfg, mode, 99).unwrap();
        assert_eq!(a.rewards(), b.rewards());
        assert_eq!(a.final_pose, b.final_pose);
    }
}

#[test]
fn baseline_starts_from_first_batch_mean() {
    let f = fixture();
    let params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 8, 16), 6);
    let cfg = TrainConfig::default();
    let episodes: Vec<_> = (0..4)
        .map(|i| {
            let start = f.scenes[i].enumerate_viewpoints()[3];
            rollout(&params, &env(&f, i), start, &cfg, RolloutMode::Sample, i as u64).unwrap()
        })
        .collect();
    let mean_r0 = episodes.iter().map(|e| returns(&e.rewards(), cfg.beta)[0]).sum::<f64>() / 4.0;
    let (updated, b) = reinforce_update(&params, &episodes, 0.0, &cfg).unwrap();
    assert!((b - (1.0 - cfg.baseline_decay) * mean_r0).abs() < 1e-12);
    assert!(updated.is_finite());
}

#[test]
fn reinforce_surrogate_gradient_matches_finite_differences() {
    let f = fixture();
    let params = PolicyParams::init(PolicyShape::for_lexicon(&f.lex, 8, 16), 7);
    let cfg = TrainConfig::default();
    let episodes: Vec<_> = (0..2)
        .map(|i| {
            let start = f.scenes[i].enumerate_viewpoints()[11];
            rollout(&params, &env(&f, i), start, &cfg, RolloutMode::Sample, 40 + i as u64).unwrap()
        })
        .collect();
    let batch: Vec<Trajectory> = episodes.iter().map(|e| e.trajectory()).collect();
    let weights: Vec<Vec<f64>> = episodes.iter().map(|e| returns(&e.rewards(), cfg.beta).iter().map(|r| r - 0.05).collect()).collect();
    let report = grad_check(&params, &batch, &weights, 1e-5).unwrap();
    assert!(report.max_abs_error < 1e-8, "{report:?}");
}
