//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::Rng;

use esd_core::gridscene::{generate_scene, Cell, Pose, RoomType, Scene, SceneGenConfig};
use esd_core::lexicon::Lexicon;
use esd_core::perception::{CaptionBox, Detection, Observation, Rect};

/// Allocentric unit moves, clockwise from +y.
const OFFSETS: [(i64, i64); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];

/// Poses reachable in one composite action: an optional unit move to a free
/// in-bounds cell, then any of the eight rotations.
pub fn neighbours(scene: &Scene, p: Pose) -> Vec<Pose> {
    let mut cells = vec![(p.x, p.y)];
    for (dx, dy) in OFFSETS {
        let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
        if x < 0 || y < 0 || x >= scene.width() as i64 || y >= scene.height() as i64 {
            continue;
        }
        if scene.is_free(Cell::new(x as usize, y as usize)) {
            cells.push((x as usize, y as usize));
        }
    }
    cells
        .into_iter()
        .flat_map(|(x, y)| (0..8u8).map(move |r| Pose { x, y, h: (p.h + r) % 8 }))
        .collect()
}

/// Breadth-first action count between two poses.
pub fn bfs_distance(scene: &Scene, from: Pose, to: Pose) -> Option<u32> {
    let idx = |p: Pose| (p.y * scene.width() + p.x) * 8 + p.h as usize;
    let mut dist = vec![u32::MAX; scene.width() * scene.height() * 8];
    let mut queue = VecDeque::from([from]);
    dist[idx(from)] = 0;
    while let Some(p) = queue.pop_front() {
        if p == to {
            return Some(dist[idx(p)]);
        }
        for q in neighbours(scene, p) {
            if dist[idx(q)] == u32::MAX {
                dist[idx(q)] = dist[idx(p)] + 1;
                queue.push_back(q);
            }
        }
    }
    None
}

/// Maximum one-to-one matching total by enumerating every injective map
/// from the smaller side into the larger one.
pub fn brute_force_max(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let m = w.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    let get = |i: usize, j: usize| if n <= m { w[i][j] } else { w[j][i] };
    let (small, large) = (n.min(m), n.max(m));
    fn go(row: usize, small: usize, large: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, get: &dyn Fn(usize, usize) -> f64) {
        if row == small {
            *best = best.max(acc);
            return;
        }
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                go(row + 1, small, large, used, acc + get(row, j), best, get);
                used[j] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(0, small, large, &mut vec![false; large], 0.0, &mut best, &get);
    best
}

pub fn scenes(n: usize, seed: u64) -> Vec<Scene> {
    (0..n)
        .map(|i| {
            let cfg = SceneGenConfig {
                room_type: RoomType::ALL[i % 4],
                ..SceneGenConfig::default()
            };
            generate_scene(&cfg, seed.wrapping_mul(1000).wrapping_add(i as u64)).expect("generation succeeds")
        })
        .collect()
}

fn random_rect(rng: &mut impl Rng) -> Rect {
    let x0 = rng.random_range(0.0..0.9);
    let y0 = rng.random_range(0.0..0.9);
    Rect::new(x0, y0, rng.random_range(x0 + 0.01..=1.0), rng.random_range(y0 + 0.01..=1.0))
}

/// Random detections and a random caption built from the lexicon's words.
pub fn fuzz_observation(lex: &Lexicon, rng: &mut impl Rng, dense: bool) -> Observation {
    let categories: Vec<&str> = lex.categories().collect();
    let nouns: Vec<&str> = lex.nouns().collect();
    let words = lex.words();
    let detections: Vec<Detection> = (0..rng.random_range(0..7))
        .map(|_| Detection {
            category: categories.choose(rng).unwrap().to_string(),
            confidence: rng.random_range(0.0..=1.0),
            bbox: random_rect(rng),
        })
        .collect();
    let caption: Vec<String> = (0..rng.random_range(0..10))
        .map(|_| {
            if rng.random_bool(0.6) {
                nouns.choose(rng).unwrap().to_string()
            } else {
                words.choose(rng).unwrap().clone()
            }
        })
        .collect();
    let caption_boxes = dense.then(|| {
        lex.extract_nouns(&caption)
            .iter()
            .map(|_| CaptionBox {
                bbox: random_rect(rng),
                confidence: rng.random_range(0.0..=1.0),
            })
            .collect()
    });
    Observation {
        pose: Pose { x: 0, y: 0, h: 0 },
        detections,
        caption,
        caption_boxes,
    }
}
