mod common;

use esd_core::demogen::{floyd_warshall, make_demos, shortest_path_actions, DemoConfig};
use esd_core::lexicon::Lexicon;
use esd_core::perception::{ScoreMode, SensorConfig};
use esd_core::scoring::{score_map, ScoringConfig};

#[test]
fn floyd_warshall_matches_bfs_from_fixed_sources() {
    for scene in common::scenes(4, 3) {
        let tables = floyd_warshall(&scene);
        let poses = scene.enumerate_viewpoints();
        for &from in poses.iter().step_by(53) {
            for &to in poses.iter().step_by(41) {
                assert_eq!(tables.distance(from, to), common::bfs_distance(&scene, from, to), "{from:?} -> {to:?}");
            }
        }
    }
}

#[test]
fn shortest_paths_replay_to_their_target() {
    let scene = &common::scenes(1, 8)[0];
    let tables = floyd_warshall(scene);
    let poses = scene.enumerate_viewpoints();
    for (&from, &to) in poses.iter().step_by(29).zip(poses.iter().rev().step_by(31)) {
        let actions = shortest_path_actions(&tables, from, to).unwrap();
        assert_eq!(Some(actions.len() as u32 - 1), tables.distance(from, to));
        assert!(actions.last().unwrap().is_stop());
        let mut p = from;
        for a in actions {
            p = scene.apply_action(p, a).unwrap();
        }
        assert_eq!(p, to);
    }
}

#[test]
fn demos_are_valid_shortest_paths_ending_in_stop() {
    let lex = Lexicon::build(2).unwrap();
    let scenes = common::scenes(4, 12);
    let scoring = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
    let sensor = SensorConfig::default();
    let cfg = DemoConfig {
        per_scene: 6,
        ..DemoConfig::default()
    };
    let demos = make_demos(&scenes, &lex, &scoring, &sensor, &cfg).unwrap();
    assert_eq!(demos.len(), 24);
    for d in &demos {
        let scene = scenes.iter().find(|s| s.seed() == d.scene_seed).unwrap();
        assert!(d.verify(scene));
        assert!(d.actions.last().unwrap().is_stop());
        assert!(d.len() <= cfg.max_len);
        let tables = floyd_warshall(scene);
        assert_eq!(tables.distance(d.start, d.target), Some(d.len() as u32 - 1));
        let smap = score_map(scene, &lex, &scoring, &sensor);
        assert!(smap.score_of(d.target).unwrap() >= cfg.gamma * smap.s_max);
    }
    let again = make_demos(&scenes, &lex, &scoring, &sensor, &cfg).unwrap();
    assert_eq!(demos, again);
}
