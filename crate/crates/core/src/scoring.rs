//! Viewpoint scoring: word-pair similarity, maximum-weight bipartite
//! matching between detections and caption nouns, and the combined score
//! `sim + lambda * |distinct categories| / N`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gridscene::{Pose, Scene};
use crate::lexicon::{Lexicon, LexiconError};
use crate::perception::{observe, CaptionBox, Detection, Observation, Rect, ScoreMode, SensorConfig};

/// Episode seed used for annotation: score maps and ground-truth captions.
pub const ANNOTATION_SEED: u64 = 0xA770_7A7E;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub lambda: f64,
    pub total_categories: usize,
    pub mode: ScoreMode,
}

impl ScoringConfig {
    pub fn new(lex: &Lexicon, lambda: f64, mode: ScoreMode) -> Self {
        ScoringConfig {
            lambda,
            total_categories: lex.num_categories().max(1),
            mode,
        }
    }

    pub fn max_score(&self) -> f64 {
        1.0 + self.lambda
    }
}

/// Intersection over union; 0 for disjoint or degenerate rectangles.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = Rect::new(a.x0.max(b.x0), a.y0.max(b.y0), a.x1.min(b.x1), a.y1.min(b.y1)).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `R(o, w) = k(o, w) * max(0, cos(o, w))`. In dense mode
/// `k = IoU(box(o), box(w)) * C(w)`; in caption mode `k = 1`. A dense-mode
/// call without a caption box falls back to `k = 1`.
pub fn pair_similarity(
    lex: &Lexicon,
    detection: &Detection,
    word: &str,
    caption_box: Option<&CaptionBox>,
    mode: ScoreMode,
) -> Result<f64, LexiconError> {
    let cos = lex.cosine(&detection.category, word)?.max(0.0);
    let k = match (mode, caption_box) {
        (ScoreMode::Dense, Some(cb)) => iou(&detection.bbox, &cb.bbox) * cb.confidence,
        _ => 1.0,
    };
    Ok(k * cos)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Maximum-weight one-to-one matching of size `min(n, m)` on a non-negative
/// `n x m` matrix. The matrix is padded to square with zeros and solved with
/// the O(k^3) Hungarian method; among optimal assignments the
/// lexicographically smallest one is returned.
pub fn hungarian_max_matching(weights: &[Vec<f64>]) -> Matching {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Matching {
            pairs: Vec::new(),
            total: 0.0,
        };
    }
    debug_assert!(weights.iter().all(|r| r.len() == m));
    let k = n.max(m);
    let w = |i: usize, j: usize| if i < n && j < m { weights[i][j] } else { 0.0 };
    let max_w = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| w(i, j))
        .fold(0.0f64, f64::max);
    let cost: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| max_w - w(i, j)).collect()).collect();

    let (assignment, u, v) = hungarian_min(&cost);
    let sum = |a: &[usize]| -> f64 { a.iter().enumerate().map(|(i, &j)| w(i, j)).sum() };
    let best_total = sum(&assignment);

    let tol = 1e-9 * max_w.max(1.0);
    let tight: Vec<Vec<bool>> = (0..k)
        .map(|i| (0..k).map(|j| (cost[i][j] - u[i] - v[j]).abs() <= tol).collect())
        .collect();
    let refined = lexicographic_perfect_matching(&tight);
    let chosen = match refined {
        Some(a) if (sum(&a) - best_total).abs() <= 1e-12 * best_total.max(1.0) => a,
        _ => assignment,
    };
    let pairs: Vec<(usize, usize)> = chosen
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < n && j < m)
        .map(|(i, &j)| (i, j))
        .collect();
    // Summed in sorted order so the total does not depend on row or column order.
    let mut matched: Vec<f64> = pairs.iter().map(|&(i, j)| weights[i][j]).collect();
    matched.sort_by(f64::total_cmp);
    let total = matched.iter().sum();
    Matching { pairs, total }
}

/// Classic potentials-based Hungarian method for a square cost matrix.
/// Returns the row-to-column assignment and the dual potentials.
fn hungarian_min(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching of a square boolean graph.
fn lexicographic_perfect_matching(allowed: &[Vec<bool>]) -> Option<Vec<usize>> {
    let k = allowed.len();
    let mut fixed: Vec<usize> = Vec::with_capacity(k);
    let mut col_used = vec![false; k];
    for i in 0..k {
        let mut found = false;
        for j in 0..k {
            if col_used[j] || !allowed[i][j] {
                continue;
            }
            col_used[j] = true;
            if has_perfect_matching(allowed, i + 1, &col_used) {
                fixed.push(j);
                found = true;
                break;
            }
            col_used[j] = false;
        }
        if !found {
            return None;
        }
    }
    Some(fixed)
}

/// Whether rows `from..k` can be matched into the unused columns.
fn has_perfect_matching(allowed: &[Vec<bool>], from: usize, col_used: &[bool]) -> bool {
    let k = allowed.len();
    let mut match_col: Vec<Option<usize>> = vec![None; k];
    fn augment(
        i: usize,
        allowed: &[Vec<bool>],
        col_used: &[bool],
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for j in 0..allowed.len() {
            if col_used[j] || !allowed[i][j] || seen[j] {
                continue;
            }
            seen[j] = true;
            if match_col[j].is_none_or(|r| augment(r, allowed, col_used, seen, match_col)) {
                match_col[j] = Some(i);
                return true;
            }
        }
        false
    }
    (from..k).all(|i| {
        let mut seen = vec![false; k];
        augment(i, allowed, col_used, &mut seen, &mut match_col)
    })
}

/// Weight matrix R over detections x caption nouns.
pub fn similarity_matrix(obs: &Observation, lex: &Lexicon, mode: ScoreMode) -> Vec<Vec<f64>> {
    let nouns = lex.extract_nouns(&obs.caption);
    let boxes = obs.caption_boxes.as_deref();
    obs.detections
        .iter()
        .map(|d| {
            nouns
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let cb = boxes.and_then(|b| b.get(j));
                    pair_similarity(lex, d, w, cb, mode).unwrap_or(0.0)
                })
                .collect()
        })
        .collect()
}

/// Normalized matching similarity in `[0, 1]`: matching total divided by
/// `max(|O|, |W|)`, zero when either side is empty.
pub fn sim(obs: &Observation, lex: &Lexicon, cfg: &ScoringConfig) -> f64 {
    let weights = similarity_matrix(obs, lex, cfg.mode);
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return 0.0;
    }
    let total = hungarian_max_matching(&weights).total;
    (total / n.max(m) as f64).clamp(0.0, 1.0)
}

pub fn distinct_categories(detections: &[Detection]) -> usize {
    detections.iter().map(|d| d.category.as_str()).collect::<BTreeSet<_>>().len()
}

/// `sim + lambda * |distinct detected categories| / N`.
pub fn viewpoint_score(obs: &Observation, lex: &Lexicon, cfg: &ScoringConfig) -> f64 {
    let richness = distinct_categories(&obs.detections) as f64 / cfg.total_categories as f64;
    sim(obs, lex, cfg) + cfg.lambda * richness
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub scene_seed: u64,
    pub poses: Vec<Pose>,
    pub scores: Vec<f64>,
    pub s_max: f64,
    pub argmax: Pose,
}

impl ScoreMap {
    pub fn score_of(&self, pose: Pose) -> Option<f64> {
        self.poses.iter().position(|&p| p == pose).map(|i| self.scores[i])
    }

    /// Poses whose score lies in `[gamma * s_max, s_max]`, in pose order.
    pub fn band(&self, gamma: f64) -> Vec<Pose> {
        let threshold = gamma * self.s_max;
        self.poses
            .iter()
            .zip(&self.scores)
            .filter(|(_, &s)| s >= threshold)
            .map(|(&p, _)| p)
            .collect()
    }

    /// Per-cell maximum over headings, row-major over the scene grid.
    pub fn cell_max(&self, width: usize, height: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; width * height];
        for (p, &s) in self.poses.iter().zip(&self.scores) {
            let slot: &mut Option<f64> = &mut out[p.y * width + p.x];
            *slot = Some(slot.map_or(s, |v: f64| v.max(s)));
        }
        out
    }
}

/// Score of every viewpoint, observed at the annotation seed.
pub fn score_map(scene: &Scene, lex: &Lexicon, cfg: &ScoringConfig, sensor: &SensorConfig) -> ScoreMap {
    let sensor = sensor.with_episode(ANNOTATION_SEED);
    let poses = scene.enumerate_viewpoints();
    let scores: Vec<f64> = poses
        .par_iter()
        .map(|&p| viewpoint_score(&observe(scene, p, lex, &sensor), lex, cfg))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    ScoreMap {
        scene_seed: scene.seed(),
        s_max: scores.get(best).copied().unwrap_or(0.0),
        argmax: poses.get(best).copied().unwrap_or(Pose::new(0, 0, 0)),
        poses,
        scores,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridscene::{generate_scene, SceneGenConfig};

    fn lex() -> Lexicon {
        Lexicon::build(2).unwrap()
    }

    fn det(c: &str) -> Detection {
        Detection {
            category: c.into(),
            confidence: 0.9,
            bbox: Rect::new(0.2, 0.2, 0.6, 0.8),
        }
    }

    fn obs(dets: &[&str], caption: &str) -> Observation {
        Observation {
            pose: Pose::new(0, 0, 0),
            detections: dets.iter().map(|c| det(c)).collect(),
            caption: caption.split_whitespace().map(String::from).collect(),
            caption_boxes: None,
        }
    }

    #[test]
    fn iou_cases() {
        let a = Rect::new(0.0, 0.0, 1.0, 0.5);
        let b = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&a, &b), 0.5);
        assert_eq!(iou(&Rect::new(0.0, 0.0, 0.4, 0.4), &Rect::new(0.5, 0.5, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn pair_similarity_modes() {
        let lex = lex();
        let d = det("couch");
        assert!((pair_similarity(&lex, &d, "couch", None, ScoreMode::Caption).unwrap() - 1.0).abs() < 1e-12);
        let cb = CaptionBox {
            bbox: d.bbox,
            confidence: 0.8,
        };
        let r = pair_similarity(&lex, &d, "couch", Some(&cb), ScoreMode::Dense).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(pair_similarity(&lex, &d, "zebra", None, ScoreMode::Caption).is_err());
    }

    #[test]
    fn negative_cosine_is_clamped() {
        use crate::lexicon::{WordEntry, WordFlags};
        let noun = WordFlags {
            noun: true,
            category: true,
            stop: false,
        };
        let entries = vec![
            WordEntry {
                word: "x".into(),
                flags: noun,
                vector: vec![1.0, 0.0],
            },
            WordEntry {
                word: "y".into(),
                flags: noun,
                vector: vec![-1.0, 0.2],
            },
            WordEntry {
                word: "z".into(),
                flags: noun,
                vector: vec![0.0, 1.0],
            },
        ];
        let groups = vec![vec!["x".into()], vec!["y".into()], vec!["z".into()]];
        let lex = Lexicon::from_parts(entries, groups).unwrap();
        assert_eq!(pair_similarity(&lex, &det("x"), "y", None, ScoreMode::Caption).unwrap(), 0.0);
        assert_eq!(pair_similarity(&lex, &det("x"), "z", None, ScoreMode::Caption).unwrap(), 0.0);
    }

    #[test]
    fn hungarian_identity() {
        let m = hungarian_max_matching(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total, 2.0);
    }

    #[test]
    fn hungarian_prefers_cross_assignment() {
        let m = hungarian_max_matching(&[vec![0.9, 0.8], vec![0.7, 0.1]]);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
        assert!((m.total - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hungarian_rectangular_and_empty() {
        let m = hungarian_max_matching(&[vec![0.1, 0.5, 0.3]]);
        assert_eq!(m.pairs, vec![(0, 1)]);
        let m = hungarian_max_matching(&[vec![0.2], vec![0.7], vec![0.1]]);
        assert_eq!(m.pairs, vec![(1, 0)]);
        let m = hungarian_max_matching(&[]);
        assert!(m.pairs.is_empty() && m.total == 0.0);
    }

    #[test]
    fn hungarian_lexicographic_tie_break() {
        let m = hungarian_max_matching(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        let m = hungarian_max_matching(&vec![vec![0.0; 3]; 3]);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn sim_cases() {
        let lex = lex();
        let cfg = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
        assert!((sim(&obs(&["couch"], "a living_room with a couch"), &lex, &cfg) - 1.0).abs() < 1e-12);
        assert_eq!(sim(&obs(&[], "a wall with a wall"), &lex, &cfg), 0.0);
        let half = sim(&obs(&["couch", "table"], "a living_room with a couch"), &lex, &cfg);
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn score_cases() {
        let lex = lex();
        let cfg = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
        assert_eq!(viewpoint_score(&obs(&[], "a wall with a wall"), &lex, &cfg), 0.0);
        let one = viewpoint_score(&obs(&["couch"], "a kitchen with a couch"), &lex, &cfg);
        assert!((one - (1.0 + 0.1 / 40.0)).abs() < 1e-12);

        // sim = 1 and every category detected gives exactly 1 + lambda.
        let cats: Vec<&str> = lex.categories().collect();
        let mut o = obs(&cats, "");
        o.caption = std::iter::once("a".to_string())
            .chain(cats.iter().flat_map(|c| ["a".to_string(), c.to_string()]))
            .collect();
        assert!((viewpoint_score(&o, &lex, &cfg) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn score_map_properties() {
        let lex = lex();
        let cfg = ScoringConfig::new(&lex, 0.1, ScoreMode::Caption);
        let sensor = SensorConfig::default();
        let gen = SceneGenConfig {
            width: [8, 8],
            height: [8, 8],
            ..Default::default()
        };
        let scene = generate_scene(&gen, 4).unwrap();
        let a = score_map(&scene, &lex, &cfg, &sensor);
        let b = score_map(&scene, &lex, &cfg, &sensor);
        assert_eq!(a, b);
        assert_eq!(a.poses.len(), scene.enumerate_viewpoints().len());
        assert!(a.scores.iter().all(|&s| s <= a.s_max && s >= 0.0));
        assert_eq!(a.score_of(a.argmax), Some(a.s_max));

        let empty = SceneGenConfig {
            objects: [0, 0],
            ..gen
        };
        let scene = generate_scene(&empty, 4).unwrap();
        let mut quiet = sensor.clone();
        quiet.noise.p_fp = 0.0;
        let m = score_map(&scene, &lex, &cfg, &quiet);
        assert_eq!(m.s_max, 0.0);
        assert!(m.scores.iter().all(|&s| s == 0.0));
    }
}
