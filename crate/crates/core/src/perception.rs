//! Synthetic detector and caption oracle.
//!
//! All noise is drawn from streams keyed by `(scene seed, episode seed,
//! pose)`, so re-visiting a pose within one episode reproduces the same
//! observation.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridscene::{polar, Pose, Scene, SceneObject, ViewConfig};
use crate::lexicon::{Lexicon, WALL};
use crate::rng;

/// Confidence assigned to spurious detections and unsourced caption nouns.
pub const SPURIOUS_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("object {0} is not visible from the pose")]
    NotVisible(u32),
}

/// Axis-aligned viewport rectangle in normalized `[0,1]` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const FULL: Rect = Rect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.x0)
            && (0.0..=1.0).contains(&self.x1)
            && (0.0..=1.0).contains(&self.y0)
            && (0.0..=1.0).contains(&self.y1)
            && self.x0 < self.x1
            && self.y0 < self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionBox {
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Caption,
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pose: Pose,
    pub detections: Vec<Detection>,
    pub caption: Vec<String>,
    /// Present in dense mode only; aligned with the caption's nouns.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caption_boxes: Option<Vec<CaptionBox>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p_miss: f64,
    pub p_fp: f64,
    pub p_sub: f64,
    pub p_omit: f64,
    pub k_caption: usize,
    pub episode_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_miss: 0.1,
            p_fp: 0.05,
            p_sub: 0.1,
            p_omit: 0.05,
            k_caption: 3,
            episode_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            p_miss: 0.0,
            p_fp: 0.0,
            p_sub: 0.0,
            p_omit: 0.0,
            ..Default::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.p_miss, self.p_fp, self.p_sub, self.p_omit]
            .iter()
            .all(|p| (0.0..=1.0).contains(p))
    }
}

/// Everything needed to turn a pose into an observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub view: ViewConfig,
    pub noise: NoiseConfig,
    pub mode: ScoreMode,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            view: ViewConfig::default(),
            noise: NoiseConfig::default(),
            mode: ScoreMode::Caption,
        }
    }
}

impl SensorConfig {
    pub fn with_episode(&self, episode_seed: u64) -> Self {
        let mut s = self.clone();
        s.noise.episode_seed = episode_seed;
        s
    }
}

/// `salience * max(0, 1 - distance / range)`.
pub fn base_confidence(salience: f64, distance: f64, range: f64) -> f64 {
    salience * (1.0 - distance / range).max(0.0)
}

fn pose_keys(scene: &Scene, pose: Pose, noise: &NoiseConfig, tag: u64) -> [u64; 6] {
    [
        tag,
        scene.seed(),
        noise.episode_seed,
        pose.x as u64,
        pose.y as u64,
        pose.h as u64,
    ]
}

/// A detection plus the scene object it came from (`None` when spurious).
#[derive(Clone, Debug)]
struct SourcedDetection {
    detection: Detection,
    source: Option<usize>,
}

fn detect_sourced(scene: &Scene, pose: Pose, lex: &Lexicon, sensor: &SensorConfig) -> Vec<SourcedDetection> {
    let noise = &sensor.noise;
    let mut rng = rng::stream(&pose_keys(scene, pose, noise, rng::TAG_DETECT));
    let mut out = Vec::new();
    for v in scene.visible_objects(pose, &sensor.view) {
        // Draw unconditionally so the stream layout is independent of p_miss.
        let miss: f64 = rng.random();
        if miss < noise.p_miss {
            continue;
        }
        let bbox = box_for(scene, pose, v.object, v.distance, &sensor.view);
        out.push(SourcedDetection {
            detection: Detection {
                category: v.object.category.clone(),
                confidence: base_confidence(v.object.salience, v.distance, sensor.view.range),
                bbox,
            },
            source: Some(v.index),
        });
    }
    let fp: f64 = rng.random();
    if fp < noise.p_fp && lex.num_categories() > 0 {
        let k = rng.random_range(0..lex.num_categories());
        let category = lex.categories().nth(k).expect("index in range").to_string();
        let cx: f64 = rng.random_range(0.1..0.9);
        let half: f64 = rng.random_range(0.05..0.1);
        out.push(SourcedDetection {
            detection: Detection {
                category,
                confidence: SPURIOUS_CONFIDENCE,
                bbox: Rect::new(cx - half, 0.5 - 2.0 * half, cx + half, 0.5 + 2.0 * half),
            },
            source: None,
        });
    }
    out
}

/// Noisy detections O(I) at `pose`.
pub fn detect(scene: &Scene, pose: Pose, lex: &Lexicon, sensor: &SensorConfig) -> Vec<Detection> {
    detect_sourced(scene, pose, lex, sensor)
        .into_iter()
        .map(|d| d.detection)
        .collect()
}

/// One emitted caption noun and where it came from.
#[derive(Clone, Debug)]
struct CaptionNoun {
    word: String,
    /// Index into the detection list the noun describes.
    detection: usize,
    substituted: bool,
}

pub const FALLBACK_CAPTION: [&str; 5] = ["a", WALL, "with", "a", WALL];

fn fallback() -> Vec<String> {
    FALLBACK_CAPTION.iter().map(|s| s.to_string()).collect()
}

fn caption_nouns(
    scene: &Scene,
    pose: Pose,
    detections: &[Detection],
    lex: &Lexicon,
    noise: &NoiseConfig,
) -> Vec<CaptionNoun> {
    // Highest confidence first; ties keep detection order.
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut picked: Vec<usize> = Vec::new();
    for i in order {
        if picked.len() == noise.k_caption {
            break;
        }
        if !picked.iter().any(|&j| detections[j].category == detections[i].category) {
            picked.push(i);
        }
    }

    let mut rng = rng::stream(&pose_keys(scene, pose, noise, rng::TAG_CAPTION));
    let pool: Vec<&str> = lex.nouns().filter(|w| *w != WALL).collect();
    let mut nouns = Vec::with_capacity(picked.len());
    for i in picked {
        let source = detections[i].category.as_str();
        let sub: f64 = rng.random();
        let omit: f64 = rng.random();
        let mut word = source.to_string();
        let mut substituted = false;
        if sub < noise.p_sub {
            let others: Vec<&str> = pool.iter().copied().filter(|w| *w != source).collect();
            if let Some(w) = others.choose(&mut rng) {
                word = w.to_string();
                substituted = true;
            }
        }
        if omit < noise.p_omit {
            continue;
        }
        nouns.push(CaptionNoun {
            word,
            detection: i,
            substituted,
        });
    }
    nouns
}

fn render_caption(room: &str, nouns: &[CaptionNoun]) -> Vec<String> {
    if nouns.is_empty() {
        return fallback();
    }
    let mut out = vec!["a".to_string(), room.to_string(), "with".to_string()];
    for (k, n) in nouns.iter().enumerate() {
        if k > 0 {
            out.push("and".into());
        }
        out.push("a".into());
        out.push(n.word.clone());
    }
    out
}

/// Caption U(I): `a {room} with a {n1} [and a {n2} [and a {n3}]]`, or the
/// wall fallback when nothing survives.
pub fn caption(scene: &Scene, pose: Pose, detections: &[Detection], lex: &Lexicon, noise: &NoiseConfig) -> Vec<String> {
    let nouns = caption_nouns(scene, pose, detections, lex, noise);
    render_caption(scene.room_type().word(), &nouns)
}

/// Maps a bearing span (degrees) and distance to a viewport rectangle.
pub fn bearing_span_box(min_bearing: f64, max_bearing: f64, distance: f64, fov_deg: f64) -> Rect {
    let half = fov_deg / 2.0;
    let x = |b: f64| ((b + half) / fov_deg).clamp(0.0, 1.0);
    let height = (1.0 / (1.0 + distance)).min(1.0);
    Rect::new(
        x(min_bearing),
        (0.5 - height / 2.0).clamp(0.0, 1.0),
        x(max_bearing),
        (0.5 + height / 2.0).clamp(0.0, 1.0),
    )
}

fn box_for(_scene: &Scene, pose: Pose, object: &SceneObject, distance: f64, view: &ViewConfig) -> Rect {
    // Each cell subtends half a cell either side of its centre, so even a
    // single-cell object gets a non-degenerate horizontal extent.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in &object.footprint {
        let (d, b) = polar(pose, c);
        let half_width = if d > 0.0 { (0.5 / d).atan().to_degrees() } else { 45.0 };
        lo = lo.min(b - half_width);
        hi = hi.max(b + half_width);
    }
    bearing_span_box(lo, hi, distance, view.fov_deg)
}

/// Viewport rectangle of a visible object.
pub fn project_box(scene: &Scene, pose: Pose, object: &SceneObject, view: &ViewConfig) -> Result<Rect, PerceptionError> {
    let v = scene
        .visible_objects(pose, view)
        .into_iter()
        .find(|v| v.object.id == object.id)
        .ok_or(PerceptionError::NotVisible(object.id))?;
    Ok(box_for(scene, pose, v.object, v.distance, view))
}

/// Detections, caption, and (dense mode) caption boxes at `pose`.
pub fn observe(scene: &Scene, pose: Pose, lex: &Lexicon, sensor: &SensorConfig) -> Observation {
    let sourced = detect_sourced(scene, pose, lex, sensor);
    let detections: Vec<Detection> = sourced.iter().map(|d| d.detection.clone()).collect();
    let nouns = caption_nouns(scene, pose, &detections, lex, &sensor.noise);
    let caption = render_caption(scene.room_type().word(), &nouns);
    let caption_boxes = match sensor.mode {
        ScoreMode::Caption => None,
        ScoreMode::Dense => {
            let mut rng = rng::stream(&pose_keys(scene, pose, &sensor.noise, rng::TAG_BOX));
            let visible: Vec<Rect> = sourced
                .iter()
                .filter(|d| d.source.is_some())
                .map(|d| d.detection.bbox)
                .collect();
            let boxes = if nouns.is_empty() {
                vec![
                    CaptionBox {
                        bbox: Rect::FULL,
                        confidence: SPURIOUS_CONFIDENCE,
                    };
                    2
                ]
            } else {
                nouns
                    .iter()
                    .map(|n| {
                        let det = &detections[n.detection];
                        if n.substituted {
                            let bbox = visible.choose(&mut rng).copied().unwrap_or(det.bbox);
                            CaptionBox {
                                bbox,
                                confidence: SPURIOUS_CONFIDENCE,
                            }
                        } else {
                            CaptionBox {
                                bbox: det.bbox,
                                confidence: det.confidence,
                            }
                        }
                    })
                    .collect()
            };
            Some(boxes)
        }
    };
    Observation {
        pose,
        detections,
        caption,
        caption_boxes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridscene::{Cell, RoomType};

    fn lex() -> Lexicon {
        Lexicon::build(11).unwrap()
    }

    fn scene(objs: &[(&str, (usize, usize), f64)]) -> Scene {
        let objects = objs
            .iter()
            .enumerate()
            .map(|(i, &(c, (x, y), s))| SceneObject {
                id: i as u32,
                category: c.into(),
                footprint: vec![Cell::new(x, y)],
                salience: s,
            })
            .collect();
        Scene::new(11, 11, &[], objects, RoomType::LivingRoom, 77).unwrap()
    }

    fn quiet() -> SensorConfig {
        SensorConfig {
            noise: NoiseConfig::noiseless(),
            ..Default::default()
        }
    }

    #[test]
    fn nothing_visible_gives_nothing() {
        let s = scene(&[("couch", (5, 1), 1.0)]);
        let d = detect(&s, Pose::new(5, 5, 0), &lex(), &quiet());
        assert!(d.is_empty());
        let c = caption(&s, Pose::new(5, 5, 0), &d, &lex(), &quiet().noise);
        assert_eq!(c, FALLBACK_CAPTION);
    }

    #[test]
    fn confidence_formula() {
        assert_eq!(base_confidence(1.0, 0.0, 10.0), 1.0);
        assert_eq!(base_confidence(0.5, 5.0, 10.0), 0.25);
        assert_eq!(base_confidence(1.0, 12.0, 10.0), 0.0);
        let s = scene(&[("couch", (5, 7), 0.8)]);
        let d = detect(&s, Pose::new(5, 5, 0), &lex(), &quiet());
        assert_eq!(d.len(), 1);
        assert!((d[0].confidence - 0.8 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn full_miss_rate_detects_nothing() {
        let s = scene(&[("couch", (5, 7), 1.0), ("table", (6, 8), 1.0)]);
        let mut sensor = quiet();
        sensor.noise.p_miss = 1.0;
        for h in 0..8 {
            assert!(detect(&s, Pose::new(5, 5, h), &lex(), &sensor).is_empty());
        }
    }

    #[test]
    fn template_caption() {
        let s = scene(&[]);
        let dets = vec![
            Detection {
                category: "couch".into(),
                confidence: 0.9,
                bbox: Rect::FULL,
            },
            Detection {
                category: "table".into(),
                confidence: 0.8,
                bbox: Rect::FULL,
            },
        ];
        let c = caption(&s, Pose::new(1, 1, 0), &dets, &lex(), &quiet().noise);
        assert_eq!(c.join(" "), "a living_room with a couch and a table");
    }

    #[test]
    fn caption_keeps_top_k_distinct() {
        let s = scene(&[]);
        let d = |c: &str, p: f64| Detection {
            category: c.into(),
            confidence: p,
            bbox: Rect::FULL,
        };
        let dets = vec![d("lamp", 0.2), d("couch", 0.9), d("couch", 0.95), d("tv", 0.5), d("rug", 0.6)];
        let c = caption(&s, Pose::new(1, 1, 0), &dets, &lex(), &quiet().noise);
        assert_eq!(c.join(" "), "a living_room with a couch and a rug and a tv");
    }

    #[test]
    fn full_substitution_changes_every_noun() {
        let lex = lex();
        let s = scene(&[]);
        let cats: Vec<&str> = lex.categories().take(3).collect();
        let dets: Vec<Detection> = cats
            .iter()
            .enumerate()
            .map(|(i, c)| Detection {
                category: c.to_string(),
                confidence: 0.9 - 0.1 * i as f64,
                bbox: Rect::FULL,
            })
            .collect();
        let mut noise = NoiseConfig::noiseless();
        noise.p_sub = 1.0;
        for seed in 0..50 {
            noise.episode_seed = seed;
            let c = caption(&s, Pose::new(1, 1, 0), &dets, &lex, &noise);
            let nouns = lex.extract_nouns(&c);
            assert_eq!(nouns.len(), 3);
            for (n, src) in nouns.iter().zip(&cats) {
                assert_ne!(n, src);
            }
        }
    }

    #[test]
    fn span_box_arithmetic() {
        let b = bearing_span_box(-10.0, 10.0, 3.0, 90.0);
        assert!((b.x0 - 35.0 / 90.0).abs() < 1e-12);
        assert!((b.x1 - 55.0 / 90.0).abs() < 1e-12);
        assert!((b.x0 - 0.388).abs() < 1e-3 && (b.x1 - 0.611).abs() < 1e-3);
        let near = bearing_span_box(-10.0, 10.0, 0.0, 90.0);
        assert_eq!((near.y0, near.y1), (0.0, 1.0));
    }

    #[test]
    fn projected_boxes() {
        let s = scene(&[("couch", (3, 8), 1.0), ("table", (7, 8), 1.0), ("tv", (5, 1), 1.0)]);
        let view = ViewConfig::default();
        let p = Pose::new(5, 5, 0);
        let a = project_box(&s, p, &s.objects()[0], &view).unwrap();
        let b = project_box(&s, p, &s.objects()[1], &view).unwrap();
        assert!(a.is_valid() && b.is_valid());
        assert!(a.x1 <= b.x0);
        assert_eq!(project_box(&s, p, &s.objects()[2], &view), Err(PerceptionError::NotVisible(2)));
    }

    #[test]
    fn observe_modes() {
        let s = scene(&[("couch", (3, 8), 1.0), ("table", (7, 8), 0.9)]);
        let lex = lex();
        let mut sensor = quiet();
        let p = Pose::new(5, 5, 0);
        let o = observe(&s, p, &lex, &sensor);
        assert!(o.caption_boxes.is_none());
        assert_eq!(o, observe(&s, p, &lex, &sensor));
        sensor.mode = ScoreMode::Dense;
        let o = observe(&s, p, &lex, &sensor);
        let boxes = o.caption_boxes.as_ref().unwrap();
        assert_eq!(boxes.len(), lex.extract_nouns(&o.caption).len());
        assert_eq!(boxes.len(), 2);
    }

    #[test]
    fn noiseless_caption_nouns_are_detected() {
        let lex = lex();
        let s = crate::gridscene::generate_scene(&Default::default(), 5).unwrap();
        let sensor = quiet();
        for p in s.enumerate_viewpoints() {
            let o = observe(&s, p, &lex, &sensor);
            for n in lex.extract_nouns(&o.caption) {
                assert!(n == WALL || o.detections.iter().any(|d| d.category == n));
            }
        }
    }
}
