//! Shortest-path demonstrations.
//!
//! Targets are drawn uniformly from the gamma-band of a scene's score map;
//! paths come from an all-pairs Floyd-Warshall table over the pose graph,
//! where each feasible non-stop composite action is one unit-weight edge.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridscene::{Action, Direction, Pose, Scene, NUM_HEADINGS};
use crate::lexicon::Lexicon;
use crate::perception::SensorConfig;
use crate::rng;
use crate::scoring::{score_map, ScoreMap, ScoringConfig};

/// Paths longer than this (in actions, including the final stop) are not
/// used as demonstrations.
pub const DEFAULT_MAX_DEMO_LEN: usize = 40;
pub const DEFAULT_GAMMA: f64 = 0.95;
const RESAMPLE_TRIES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum DemoError {
    #[error("scene {0} has no viewpoint with positive score")]
    DegenerateScene(u64),
    #[error("{to} is unreachable from {from}")]
    Unreachable { from: Pose, to: Pose },
    #[error("pose {0} is not a viewpoint of the scene")]
    UnknownPose(Pose),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub scene_seed: u64,
    /// Noise seed under which the demonstration's observations are replayed.
    pub episode_seed: u64,
    pub start: Pose,
    pub target: Pose,
    pub actions: Vec<Action>,
    /// `poses[t]` is the pose at which `actions[t]` is taken.
    pub poses: Vec<Pose>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Replays the actions from `start` and checks alignment, feasibility,
    /// the terminal stop, and the final pose.
    pub fn verify(&self, scene: &Scene) -> bool {
        if self.actions.len() != self.poses.len() || self.actions.last() != Some(&Action::STOP) {
            return false;
        }
        let mut pose = self.start;
        for (t, (&a, &p)) in self.actions.iter().zip(&self.poses).enumerate() {
            if p != pose || (a.is_stop() && t + 1 != self.actions.len()) {
                return false;
            }
            match scene.apply_action(pose, a) {
                Ok(next) => pose = next,
                Err(_) => return false,
            }
        }
        pose == self.target
    }
}

/// Uniform draw from `{v : score(v) >= gamma * s_max}`.
pub fn sample_target(smap: &ScoreMap, gamma: f64, rng: &mut impl Rng) -> Result<Pose, DemoError> {
    if smap.s_max <= 0.0 {
        return Err(DemoError::DegenerateScene(smap.scene_seed));
    }
    let band = smap.band(gamma);
    Ok(*band.choose(rng).expect("band contains the argmax"))
}

const INF: u16 = u16::MAX / 2;
const NONE: u32 = u32::MAX;

/// All-pairs shortest step counts over a scene's viewpoints.
#[derive(Clone, Debug)]
pub struct PathTables {
    width: usize,
    poses: Vec<Pose>,
    lookup: Vec<u32>,
    dist: Vec<u16>,
    next: Vec<u32>,
}

impl PathTables {
    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn node(&self, p: Pose) -> Option<usize> {
        let slot = (p.y * self.width + p.x) * NUM_HEADINGS as usize + p.h as usize;
        match self.lookup.get(slot) {
            Some(&i) if i != NONE && p.x < self.width => Some(i as usize),
            _ => None,
        }
    }

    /// Shortest number of composite actions from `from` to `to`.
    pub fn distance(&self, from: Pose, to: Pose) -> Option<u32> {
        let (i, j) = (self.node(from)?, self.node(to)?);
        let d = self.dist[i * self.len() + j];
        (d < INF).then_some(d as u32)
    }

    fn successor(&self, i: usize, j: usize) -> usize {
        self.next[i * self.len() + j] as usize
    }
}

/// Floyd-Warshall over the pose graph. Ties keep the first path found,
/// which follows pose enumeration order.
pub fn floyd_warshall(scene: &Scene) -> PathTables {
    let poses = scene.enumerate_viewpoints();
    let n = poses.len();
    let width = scene.width();
    let mut lookup = vec![NONE; width * scene.height() * NUM_HEADINGS as usize];
    for (i, p) in poses.iter().enumerate() {
        lookup[(p.y * width + p.x) * NUM_HEADINGS as usize + p.h as usize] = i as u32;
    }
    let mut dist = vec![INF; n * n];
    let mut next = vec![NONE; n * n];
    for (i, &p) in poses.iter().enumerate() {
        dist[i * n + i] = 0;
        next[i * n + i] = i as u32;
        let mask = scene.feasible_actions(p);
        for a in Action::all().filter(|a| !a.is_stop() && mask[a.index()]) {
            let q = scene.apply_action(p, a).expect("mask is feasible");
            let j = lookup[(q.y * width + q.x) * NUM_HEADINGS as usize + q.h as usize] as usize;
            dist[i * n + j] = 1;
            next[i * n + j] = j as u32;
        }
    }

    let mut row_k = vec![0u16; n];
    for k in 0..n {
        row_k.copy_from_slice(&dist[k * n..(k + 1) * n]);
        for i in 0..n {
            let dik = dist[i * n + k];
            if dik >= INF || i == k {
                continue;
            }
            let nik = next[i * n + k];
            let drow = &mut dist[i * n..(i + 1) * n];
            let nrow = &mut next[i * n..(i + 1) * n];
            for j in 0..n {
                let cand = dik + row_k[j];
                if cand < drow[j] {
                    drow[j] = cand;
                    nrow[j] = nik;
                }
            }
        }
    }
    PathTables {
        width,
        poses,
        lookup,
        dist,
        next,
    }
}

/// The unique composite action taking `from` to an adjacent pose `to`.
pub fn action_between(from: Pose, to: Pose) -> Option<Action> {
    let dx = to.x as i64 - from.x as i64;
    let dy = to.y as i64 - from.y as i64;
    let mv = if dx == 0 && dy == 0 {
        None
    } else {
        Some((0..8u8).map(|d| Direction::new(d).unwrap()).find(|d| d.offset() == (dx, dy))?)
    };
    let rot = (to.h + NUM_HEADINGS - from.h) % NUM_HEADINGS;
    Some(Action { mv, rot })
}

/// Shortest action sequence from `from` to `to`, followed by a stop.
pub fn shortest_path_actions(tables: &PathTables, from: Pose, to: Pose) -> Result<Vec<Action>, DemoError> {
    let i = tables.node(from).ok_or(DemoError::UnknownPose(from))?;
    let j = tables.node(to).ok_or(DemoError::UnknownPose(to))?;
    if tables.distance(from, to).is_none() {
        return Err(DemoError::Unreachable { from, to });
    }
    let mut actions = Vec::new();
    let mut cur = i;
    while cur != j {
        let nxt = tables.successor(cur, j);
        let a = action_between(tables.poses[cur], tables.poses[nxt]).expect("path edges are single actions");
        actions.push(a);
        cur = nxt;
    }
    actions.push(Action::STOP);
    Ok(actions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub per_scene: usize,
    pub gamma: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            per_scene: 4,
            gamma: DEFAULT_GAMMA,
            max_len: DEFAULT_MAX_DEMO_LEN,
            seed: 0,
        }
    }
}

/// Demonstrations for one scene given its score map and path tables. Each
/// demonstration draws its own band target and a uniform start pose.
pub fn demos_for_scene(scene: &Scene, smap: &ScoreMap, tables: &PathTables, cfg: &DemoConfig) -> Result<Vec<Demonstration>, DemoError> {
    if smap.s_max <= 0.0 {
        return Err(DemoError::DegenerateScene(scene.seed()));
    }
    let mut rng = rng::stream(&[rng::TAG_DEMO, cfg.seed, scene.seed()]);
    let mut out = Vec::with_capacity(cfg.per_scene);
    for k in 0..cfg.per_scene {
        for _ in 0..RESAMPLE_TRIES {
            let target = sample_target(smap, cfg.gamma, &mut rng)?;
            let start = *tables.poses().choose(&mut rng).expect("scene has viewpoints");
            match tables.distance(start, target) {
                Some(d) if (d as usize) < cfg.max_len => {}
                _ => continue,
            }
            let actions = shortest_path_actions(tables, start, target)?;
            let mut poses = Vec::with_capacity(actions.len());
            let mut p = start;
            for &a in &actions {
                poses.push(p);
                p = scene.apply_action(p, a).expect("path actions are feasible");
            }
            out.push(Demonstration {
                scene_seed: scene.seed(),
                episode_seed: rng::mix(&[rng::TAG_DEMO, cfg.seed, scene.seed(), k as u64]),
                start,
                target,
                actions,
                poses,
            });
            break;
        }
    }
    Ok(out)
}

/// Demonstrations for every scene, concatenated in scene order.
pub fn make_demos(
    scenes: &[Scene],
    lex: &Lexicon,
    scoring: &ScoringConfig,
    sensor: &SensorConfig,
    cfg: &DemoConfig,
) -> Result<Vec<Demonstration>, DemoError> {
    let per_scene: Vec<Result<Vec<Demonstration>, DemoError>> = scenes
        .par_iter()
        .map(|scene| {
            let smap = score_map(scene, lex, scoring, sensor);
            if smap.s_max <= 0.0 {
                return Err(DemoError::DegenerateScene(scene.seed()));
            }
            let tables = floyd_warshall(scene);
            demos_for_scene(scene, &smap, &tables, cfg)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridscene::{Cell, RoomType};
    use crate::perception::ScoreMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(scores: &[f64]) -> ScoreMap {
        let poses: Vec<Pose> = (0..scores.len()).map(|i| Pose::new(i, 0, 0)).collect();
        let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        ScoreMap {
            scene_seed: 1,
            s_max: scores[best],
            argmax: poses[best],
            poses,
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn gamma_one_picks_argmax() {
        let m = map(&[0.1, 0.9, 0.5, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_target(&m, 1.0, &mut rng).unwrap(), Pose::new(1, 0, 0));
        }
    }

    #[test]
    fn gamma_zero_covers_everything() {
        let m = map(&[0.1, 0.9, 0.0, 0.3]);
        assert_eq!(m.band(0.0).len(), 4);
        assert_eq!(m.band(DEFAULT_GAMMA), vec![Pose::new(1, 0, 0)]);
    }

    #[test]
    fn degenerate_map_rejected() {
        let m = map(&[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_target(&m, 0.95, &mut rng), Err(DemoError::DegenerateScene(1)));
    }

    fn open(w: usize, h: usize) -> Scene {
        Scene::new(w, h, &[], vec![], RoomType::Kitchen, 3).unwrap()
    }

    #[test]
    fn distances_basic() {
        let s = open(4, 4);
        let t = floyd_warshall(&s);
        for &p in t.poses() {
            assert_eq!(t.distance(p, p), Some(0));
        }
        assert_eq!(t.distance(Pose::new(1, 1, 0), Pose::new(1, 1, 5)), Some(1));
        assert_eq!(t.distance(Pose::new(0, 0, 0), Pose::new(3, 3, 4)), Some(3));
    }

    #[test]
    fn paths_to_self_and_neighbour() {
        let s = open(4, 4);
        let t = floyd_warshall(&s);
        let p = Pose::new(1, 1, 2);
        assert_eq!(shortest_path_actions(&t, p, p).unwrap(), vec![Action::STOP]);
        let q = Pose::new(2, 1, 2);
        assert_eq!(
            shortest_path_actions(&t, p, q).unwrap(),
            vec![Action::new(Some(2), 0).unwrap(), Action::STOP]
        );
    }

    #[test]
    fn paths_route_around_obstacles() {
        let wall: Vec<Cell> = (0..4).map(|y| Cell::new(2, y)).collect();
        let s = Scene::new(5, 5, &wall, vec![], RoomType::Kitchen, 0).unwrap();
        let t = floyd_warshall(&s);
        let (a, b) = (Pose::new(0, 0, 0), Pose::new(4, 0, 0));
        let actions = shortest_path_actions(&t, a, b).unwrap();
        assert_eq!(actions.len() as u32, t.distance(a, b).unwrap() + 1);
        let mut p = a;
        for &x in &actions {
            p = s.apply_action(p, x).unwrap();
        }
        assert_eq!(p, b);
    }

    #[test]
    fn demos_are_valid_and_deterministic() {
        let lex = Lexicon::build(4).unwrap();
        let scoring = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
        let sensor = SensorConfig::default();
        let gen = crate::gridscene::SceneGenConfig {
            width: [8, 8],
            height: [8, 8],
            ..Default::default()
        };
        let scenes: Vec<Scene> = (0..3).map(|i| crate::gridscene::generate_scene(&gen, 100 + i).unwrap()).collect();
        let cfg = DemoConfig {
            per_scene: 4,
            seed: 9,
            ..Default::default()
        };
        let a = make_demos(&scenes, &lex, &scoring, &sensor, &cfg).unwrap();
        let b = make_demos(&scenes, &lex, &scoring, &sensor, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 12);
        for d in &a {
            let scene = scenes.iter().find(|s| s.seed() == d.scene_seed).unwrap();
            assert!(d.verify(scene));
            assert!(d.len() <= DEFAULT_MAX_DEMO_LEN);
            let smap = score_map(scene, &lex, &scoring, &sensor);
            assert!(smap.score_of(d.target).unwrap() >= cfg.gamma * smap.s_max);
        }
    }
}
