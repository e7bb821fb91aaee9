//! Experiment orchestration: dataset splits, ground-truth annotation,
//! baselines, evaluation reports, ASCII rendering and the end-to-end run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demogen::{make_demos, DemoConfig, Demonstration, DEFAULT_GAMMA, DEFAULT_MAX_DEMO_LEN};
use crate::gridscene::{generate_scene, Cell, CellKind, Pose, RoomType, Scene, SceneGenConfig, ViewConfig, NUM_HEADINGS};
use crate::langmetrics::{caption_metrics, cider, ReferenceSet};
use crate::lexicon::Lexicon;
use crate::perception::{observe, NoiseConfig, ScoreMode, SensorConfig};
use crate::policy::{
    prepare_demo, run_episode, train_il, train_rl, Controller, Episode, EpisodeEnv, LearnedController, PolicyParams,
    PolicyShape, RandomController, RolloutMode, StopController, Termination, TrainConfig, Trajectory,
};
use crate::rng;
use crate::scoring::{score_map, ScoreMap, ScoringConfig, ANNOTATION_SEED};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("scene {0} has no positive-score viewpoint")]
    DegenerateScene(u64),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 5,
            validation: 1,
            test: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub room_types: Vec<RoomType>,
    pub scenes_per_type: usize,
    pub split: SplitCounts,
    /// Generation ranges; the room type is taken from `room_types`.
    pub scene: SceneGenConfig,
    pub view: ViewConfig,
    pub noise: NoiseConfig,
    pub mode: ScoreMode,
    pub lambda: f64,
    pub gamma: f64,
    pub demos_per_scene: usize,
    pub max_demo_len: usize,
    pub hidden: usize,
    pub lang_dim: usize,
    pub il: TrainConfig,
    pub rl: TrainConfig,
    pub rl_iterations: usize,
    /// Side of the start-pose blocks; one cell per block is held out for validation.
    pub block: usize,
    /// Cap on evaluated test starts per scene; all of them when unset.
    pub starts_per_scene: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            room_types: RoomType::ALL.to_vec(),
            scenes_per_type: 8,
            split: SplitCounts::default(),
            scene: SceneGenConfig::default(),
            view: ViewConfig::default(),
            noise: NoiseConfig::default(),
            mode: ScoreMode::Caption,
            lambda: 0.1,
            gamma: DEFAULT_GAMMA,
            demos_per_scene: 64,
            max_demo_len: DEFAULT_MAX_DEMO_LEN,
            hidden: crate::policy::DEFAULT_HIDDEN,
            lang_dim: crate::policy::DEFAULT_LANG_DIM,
            il: TrainConfig {
                epochs: 200,
                batch: 8,
                ..TrainConfig::default()
            },
            rl: TrainConfig {
                batch: 16,
                ..TrainConfig::default()
            },
            rl_iterations: 20,
            block: 4,
            starts_per_scene: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML when the path ends in `.toml`, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_owned(),
            source,
        })?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.room_types.is_empty() {
            return bad("room_types is empty".into());
        }
        let s = &self.split;
        if s.train + s.validation + s.test != self.scenes_per_type {
            return bad(format!(
                "split {}+{}+{} does not add up to scenes_per_type {}",
                s.train, s.validation, s.test, self.scenes_per_type
            ));
        }
        if s.test == 0 || s.train == 0 {
            return bad("split needs at least one train and one test scene per type".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} not in (0, 1]", self.gamma));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda {} is negative", self.lambda));
        }
        if self.block == 0 || self.starts_per_scene == Some(0) || self.hidden == 0 {
            return bad("block, starts_per_scene and hidden must be positive".into());
        }
        if !self.noise.is_valid() {
            return bad("noise probabilities must lie in [0, 1]".into());
        }
        self.scene.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.il.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.rl.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn lexicon_seed(&self) -> u64 {
        rng::mix(&[rng::TAG_LEXICON, self.seed])
    }

    pub fn lexicon(&self) -> Result<Lexicon, HarnessError> {
        Lexicon::build(self.lexicon_seed()).map_err(stage("lexicon"))
    }

    pub fn sensor(&self) -> SensorConfig {
        SensorConfig {
            view: self.view,
            noise: self.noise.clone(),
            mode: self.mode,
        }
    }

    pub fn scoring(&self, lex: &Lexicon) -> ScoringConfig {
        ScoringConfig::new(lex, self.lambda, self.mode)
    }

    pub fn demo_config(&self) -> DemoConfig {
        DemoConfig {
            per_scene: self.demos_per_scene,
            gamma: self.gamma,
            max_len: self.max_demo_len,
            seed: rng::mix(&[rng::TAG_DEMO, self.seed]),
        }
    }

    pub fn init_seed(&self) -> u64 {
        rng::mix(&[rng::TAG_INIT, self.seed])
    }

    pub fn il_config(&self) -> TrainConfig {
        TrainConfig {
            seed: rng::mix(&[rng::TAG_SHUFFLE, self.seed]),
            ..self.il.clone()
        }
    }

    pub fn rl_config(&self) -> TrainConfig {
        TrainConfig {
            seed: rng::mix(&[rng::TAG_RL, self.seed]),
            ..self.rl.clone()
        }
    }

    pub fn eval_config(&self) -> TrainConfig {
        self.rl.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStarts {
    pub scene_seed: u64,
    pub validation: Vec<Pose>,
    /// Test starts in evaluation order.
    pub test: Vec<Pose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
    pub starts: Vec<SceneStarts>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Every generated scene, grouped by room type.
    pub scenes: Vec<Scene>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn scene(&self, seed: u64) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.seed() == seed)
    }

    pub fn subset(&self, seeds: &[u64]) -> Vec<Scene> {
        seeds.iter().filter_map(|&s| self.scene(s).cloned()).collect()
    }
}

/// Start poses for one scene: the free cells are tiled into `block x block`
/// squares; one seeded cell per square goes to validation and the rest are
/// test starts, each with a seeded heading, in seeded order.
pub fn block_starts(scene: &Scene, block: usize, seed: u64) -> SceneStarts {
    let mut rng = rng::stream(&[rng::TAG_SPLIT, seed, scene.seed()]);
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for by in (0..scene.height()).step_by(block) {
        for bx in (0..scene.width()).step_by(block) {
            let cells: Vec<Cell> = (by..(by + block).min(scene.height()))
                .flat_map(|y| (bx..(bx + block).min(scene.width())).map(move |x| Cell::new(x, y)))
                .filter(|&c| scene.is_free(c))
                .collect();
            if cells.is_empty() {
                continue;
            }
            let held = rng.random_range(0..cells.len());
            for (i, c) in cells.into_iter().enumerate() {
                let pose = Pose {
                    x: c.x,
                    y: c.y,
                    h: rng.random_range(0..NUM_HEADINGS),
                };
                if i == held {
                    validation.push(pose);
                } else {
                    test.push(pose);
                }
            }
        }
    }
    test.shuffle(&mut rng);
    SceneStarts {
        scene_seed: scene.seed(),
        validation,
        test,
    }
}

/// Generates `scenes_per_type` scenes per room type and splits each type's
/// scenes into train / validation / test by a seeded shuffle.
pub fn make_splits(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let mut scenes = Vec::new();
    let mut split = DatasetSplit {
        train: vec![],
        validation: vec![],
        test: vec![],
        starts: vec![],
    };
    for (t, &room) in cfg.room_types.iter().enumerate() {
        let gen = SceneGenConfig {
            room_type: room,
            ..cfg.scene.clone()
        };
        let mut seeds = Vec::with_capacity(cfg.scenes_per_type);
        for k in 0..cfg.scenes_per_type {
            let seed = rng::mix(&[rng::TAG_SCENE, cfg.seed, t as u64, k as u64]);
            scenes.push(generate_scene(&gen, seed).map_err(stage("generate"))?);
            seeds.push(seed);
        }
        let mut rng = rng::stream(&[rng::TAG_SPLIT, cfg.seed, t as u64]);
        seeds.shuffle(&mut rng);
        let (train, rest) = seeds.split_at(cfg.split.train);
        let (val, test) = rest.split_at(cfg.split.validation);
        split.train.extend_from_slice(train);
        split.validation.extend_from_slice(val);
        split.test.extend_from_slice(test);
    }
    for &s in &split.test {
        let scene = scenes.iter().find(|x| x.seed() == s).expect("test scene generated");
        split.starts.push(block_starts(scene, cfg.block, cfg.seed));
    }
    Ok(Dataset { scenes, split })
}

/// Deduplicated captions of every viewpoint in the band
/// `[gamma * s_max, s_max]`, observed at the annotation seed.
pub fn ground_truth_refs(
    scene: &Scene,
    smap: &ScoreMap,
    lex: &Lexicon,
    sensor: &SensorConfig,
    gamma: f64,
) -> Result<ReferenceSet, HarnessError> {
    if smap.s_max <= 0.0 {
        return Err(HarnessError::DegenerateScene(scene.seed()));
    }
    let sensor = sensor.with_episode(ANNOTATION_SEED);
    let captions = smap
        .band(gamma)
        .into_iter()
        .map(|p| observe(scene, p, lex, &sensor).caption)
        .collect();
    ReferenceSet::new(captions).map_err(stage("annotate"))
}

/// Uniformly random feasible actions, stop included.
pub fn random_policy_rollout(env: &EpisodeEnv<'_>, start: Pose, cfg: &TrainConfig, seed: u64) -> Episode {
    run_episode(env, &mut RandomController, start, cfg, seed).expect("every pose admits stop")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StopAlways,
    Random,
    Il,
    IlRl,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::StopAlways => "stop_always",
            Method::Random => "random",
            Method::Il => "il",
            Method::IlRl => "il_rl",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub method: Method,
    pub scene_seed: u64,
    pub start_index: usize,
    pub episode_seed: u64,
    pub start_x: usize,
    pub start_y: usize,
    pub start_h: u8,
    pub final_x: usize,
    pub final_y: usize,
    pub final_h: u8,
    pub termination: Termination,
    pub nos: usize,
    pub sol: f64,
    pub return_sum: f64,
    pub caption: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub episodes: usize,
    pub nos: f64,
    pub sol: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl MethodSummary {
    /// Means over the given records, in record order.
    pub fn from_records(method: Method, records: &[&EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / n;
        MethodSummary {
            method,
            episodes: records.len(),
            nos: mean(&|r| r.nos as f64),
            sol: mean(&|r| r.sol),
            bleu1: mean(&|r| r.bleu1),
            bleu2: mean(&|r| r.bleu2),
            bleu3: mean(&|r| r.bleu3),
            bleu4: mean(&|r| r.bleu4),
            meteor_lite: mean(&|r| r.meteor_lite),
            rouge_l: mean(&|r| r.rouge_l),
            cider: mean(&|r| r.cider),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summaries: Vec<MethodSummary>,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn records(&self, method: Method) -> Vec<&EpisodeRecord> {
        self.episodes.iter().filter(|r| r.method == method).collect()
    }

    pub fn summary_csv(&self) -> String {
        to_csv(&self.summaries)
    }

    pub fn episodes_csv(&self) -> String {
        to_csv(&self.episodes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn merge(reports: Vec<EvalReport>) -> EvalReport {
        let mut out = EvalReport {
            summaries: vec![],
            episodes: vec![],
        };
        for r in reports {
            out.summaries.extend(r.summaries);
            out.episodes.extend(r.episodes);
        }
        out
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
}

/// Test scenes with their starts, references and shared sensing setup.
pub struct EvalSuite<'a> {
    pub scenes: Vec<&'a Scene>,
    pub starts: Vec<Vec<Pose>>,
    pub refs: Vec<ReferenceSet>,
    pub lex: &'a Lexicon,
    pub sensor: SensorConfig,
    pub scoring: ScoringConfig,
    pub episode: TrainConfig,
    pub seed: u64,
}

impl<'a> EvalSuite<'a> {
    /// Test scenes of `data` with up to `starts_per_scene` starts each and
    /// their ground-truth references.
    pub fn new(data: &'a Dataset, lex: &'a Lexicon, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let sensor = cfg.sensor();
        let scoring = cfg.scoring(lex);
        let mut scenes = Vec::new();
        let mut starts = Vec::new();
        for s in &data.split.starts {
            let scene = data.scene(s.scene_seed).ok_or(HarnessError::Stage {
                stage: "evaluate",
                message: format!("unknown test scene {}", s.scene_seed),
            })?;
            scenes.push(scene);
            starts.push(s.test.iter().take(cfg.starts_per_scene.unwrap_or(usize::MAX)).copied().collect());
        }
        let refs = scenes
            .par_iter()
            .map(|scene| {
                let smap = score_map(scene, lex, &scoring, &sensor);
                ground_truth_refs(scene, &smap, lex, &sensor, cfg.gamma)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalSuite {
            scenes,
            starts,
            refs,
            lex,
            sensor,
            scoring,
            episode: cfg.eval_config(),
            seed: cfg.seed,
        })
    }

    pub fn episode_seed(&self, scene: &Scene, start_index: usize) -> u64 {
        rng::mix(&[rng::TAG_ROLLOUT, self.seed, scene.seed(), start_index as u64])
    }
}

/// Runs `method` from every test start (greedy for learned policies) and
/// scores the final captions against the scene references.
pub fn evaluate(method: Method, params: Option<&PolicyParams>, suite: &EvalSuite<'_>) -> Result<EvalReport, HarnessError> {
    if matches!(method, Method::Il | Method::IlRl) && params.is_none() {
        return Err(HarnessError::Stage {
            stage: "evaluate",
            message: format!("method {method} needs parameters"),
        });
    }
    let jobs: Vec<(usize, usize)> = suite
        .starts
        .iter()
        .enumerate()
        .flat_map(|(s, st)| (0..st.len()).map(move |i| (s, i)))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(s, i)| {
            let scene = suite.scenes[s];
            let env = EpisodeEnv {
                scene,
                lex: suite.lex,
                sensor: &suite.sensor,
                scoring: &suite.scoring,
            };
            let mut controller: Box<dyn Controller> = match method {
                Method::StopAlways => Box::new(StopController),
                Method::Random => Box::new(RandomController),
                Method::Il | Method::IlRl => Box::new(LearnedController::new(params.unwrap(), RolloutMode::Greedy)),
            };
            run_episode(&env, controller.as_mut(), suite.starts[s][i], &suite.episode, suite.episode_seed(scene, i))
        })
        .collect::<Result<Vec<Episode>, _>>()
        .map_err(stage("evaluate"))?;

    let corpus: Vec<(Vec<String>, ReferenceSet)> = jobs
        .iter()
        .zip(&episodes)
        .map(|(&(s, _), e)| (e.final_observation.caption.clone(), suite.refs[s].clone()))
        .collect();
    let cider_scores = if corpus.len() >= 2 {
        cider(&corpus).map_err(stage("evaluate"))?.per_item
    } else {
        vec![0.0; corpus.len()]
    };

    let records: Vec<EpisodeRecord> = jobs
        .iter()
        .zip(&episodes)
        .zip(cider_scores)
        .map(|((&(s, i), e), cider)| {
            let m = caption_metrics(&e.final_observation.caption, &suite.refs[s], suite.lex);
            EpisodeRecord {
                method,
                scene_seed: e.scene_seed,
                start_index: i,
                episode_seed: e.episode_seed,
                start_x: e.start.x,
                start_y: e.start.y,
                start_h: e.start.h,
                final_x: e.final_pose.x,
                final_y: e.final_pose.y,
                final_h: e.final_pose.h,
                termination: e.termination,
                nos: e.nos(),
                sol: e.final_score,
                return_sum: e.rewards().iter().sum(),
                caption: e.final_observation.caption.join(" "),
                bleu1: m.bleu[0],
                bleu2: m.bleu[1],
                bleu3: m.bleu[2],
                bleu4: m.bleu[3],
                meteor_lite: m.meteor_lite,
                rouge_l: m.rouge_l,
                cider,
            }
        })
        .collect();
    let summary = MethodSummary::from_records(method, &records.iter().collect::<Vec<_>>());
    Ok(EvalReport {
        summaries: vec![summary],
        episodes: records,
    })
}

pub enum Overlay<'a> {
    None,
    /// Per-cell best score as deciles of `s_max`.
    Heat(&'a ScoreMap),
    /// Step digits along the path, `S` at the first pose and `E` at the last.
    Trajectory(&'a [Pose]),
}

/// Fixed-width map, one header line then rows from the top (largest y).
/// Obstacles are `#`, object cells show the category initial, free cells `.`.
pub fn render_ascii(scene: &Scene, overlay: &Overlay<'_>) -> String {
    let (w, h) = (scene.width(), scene.height());
    let mut grid: Vec<char> = (0..w * h)
        .map(|i| {
            let c = Cell::new(i % w, i / w);
            match scene.object_at(c) {
                Some(k) => scene.objects()[k].category.chars().next().unwrap_or('?'),
                None if scene.kind(c) == CellKind::Obstacle => '#',
                None => '.',
            }
        })
        .collect();
    match overlay {
        Overlay::None => {}
        Overlay::Heat(smap) => {
            for (i, v) in smap.cell_max(w, h).into_iter().enumerate() {
                if let Some(v) = v {
                    let d = if smap.s_max > 0.0 { (10.0 * v / smap.s_max).floor() as i64 } else { 0 };
                    grid[i] = char::from_digit(d.clamp(0, 9) as u32, 10).unwrap();
                }
            }
        }
        Overlay::Trajectory(path) => {
            for (t, p) in path.iter().enumerate() {
                grid[p.y * w + p.x] = char::from_digit((t % 10) as u32, 10).unwrap();
            }
            if let (Some(first), Some(last)) = (path.first(), path.last()) {
                grid[first.y * w + first.x] = 'S';
                grid[last.y * w + last.x] = 'E';
            }
        }
    }
    let mut out = format!("scene {} {} {}x{}\n", scene.seed(), scene.room_type(), w, h);
    for y in (0..h).rev() {
        out.extend(&grid[y * w..(y + 1) * w]);
        out.push('\n');
    }
    out
}

/// Seeds resolved from the master seed, written next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub lexicon: u64,
    pub scenes: Vec<u64>,
    pub demos: u64,
    pub init: u64,
    pub il_shuffle: u64,
    pub rl: u64,
    pub annotation: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingLog {
    pub demos: usize,
    pub il_losses: Vec<f64>,
    pub rl_mean_returns: Vec<f64>,
    pub rl_baseline: f64,
}

pub const STAGES: [&str; 6] = ["generate", "annotate", "demos", "train-il", "train-rl", "evaluate"];

pub struct RunOutcome {
    pub plan: Vec<String>,
    pub report: Option<EvalReport>,
    pub training: Option<TrainingLog>,
}

fn plan(cfg: &ExperimentConfig, out: &Path) -> Vec<String> {
    let types = cfg.room_types.len();
    vec![
        format!(
            "generate: {} scenes ({} types x {}), split {}/{}/{} per type",
            types * cfg.scenes_per_type,
            types,
            cfg.scenes_per_type,
            cfg.split.train,
            cfg.split.validation,
            cfg.split.test
        ),
        format!("annotate: references for {} test scenes at gamma {}", types * cfg.split.test, cfg.gamma),
        format!("demos: {} per training scene, max length {}", cfg.demos_per_scene, cfg.max_demo_len),
        format!("train-il: {} epochs, batch {}, lr {}", cfg.il.epochs, cfg.il.batch, cfg.il.lr),
        format!("train-rl: {} iterations, batch {}, lr {}", cfg.rl_iterations, cfg.rl.batch, cfg.rl.lr),
        format!(
            "evaluate: stop_always, random, il, il_rl from {} test starts per scene",
            cfg.starts_per_scene.map_or("all".to_string(), |n| format!("up to {n}"))
        ),
        format!("output: {}", out.display()),
    ]
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

/// Everything produced by the training stages.
pub struct Trained {
    pub demos: Vec<Demonstration>,
    pub il: PolicyParams,
    pub il_rl: PolicyParams,
    pub log: TrainingLog,
}

/// Demonstrations, imitation learning and REINFORCE on the training scenes.
pub fn train_pipeline(cfg: &ExperimentConfig, data: &Dataset, lex: &Lexicon) -> Result<Trained, HarnessError> {
    let sensor = cfg.sensor();
    let scoring = cfg.scoring(lex);
    let train = data.subset(&data.split.train);
    let demos = make_demos(&train, lex, &scoring, &sensor, &cfg.demo_config()).map_err(stage("demos"))?;
    let trajectories: Vec<Trajectory> = demos
        .par_iter()
        .map(|d| {
            let scene = train.iter().find(|s| s.seed() == d.scene_seed).expect("demo scene in training set");
            prepare_demo(d, scene, lex, &sensor)
        })
        .collect();
    let shape = PolicyShape::for_lexicon(lex, cfg.hidden, cfg.lang_dim);
    let init = PolicyParams::init(shape, cfg.init_seed());
    let il = train_il(&init, &trajectories, &cfg.il_config()).map_err(stage("train-il"))?;
    let rl = train_rl(&il.params, &train, lex, &sensor, &scoring, &cfg.rl_config(), cfg.rl_iterations).map_err(stage("train-rl"))?;
    Ok(Trained {
        log: TrainingLog {
            demos: demos.len(),
            il_losses: il.losses,
            rl_mean_returns: rl.mean_returns,
            rl_baseline: rl.baseline,
        },
        demos,
        il: il.params,
        il_rl: rl.params,
    })
}

/// Evaluates every method on the test split.
pub fn evaluate_all(suite: &EvalSuite<'_>, il: &PolicyParams, il_rl: &PolicyParams) -> Result<EvalReport, HarnessError> {
    Ok(EvalReport::merge(vec![
        evaluate(Method::StopAlways, None, suite)?,
        evaluate(Method::Random, None, suite)?,
        evaluate(Method::Il, Some(il), suite)?,
        evaluate(Method::IlRl, Some(il_rl), suite)?,
    ]))
}

/// generate -> annotate -> demos -> train-il -> train-rl -> evaluate, with
/// artifacts under `out`. A dry run returns the plan and writes nothing.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, dry_run: bool) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let plan = plan(cfg, out);
    if dry_run {
        return Ok(RunOutcome {
            plan,
            report: None,
            training: None,
        });
    }
    let lex = cfg.lexicon()?;
    let data = make_splits(cfg)?;
    write(&out.join("config.json"), to_pretty(cfg))?;
    write(&out.join("lexicon.json"), lex.to_json())?;
    write(&out.join("split.json"), to_pretty(&data.split))?;
    for (i, s) in data.scenes.iter().enumerate() {
        write(&out.join(format!("scenes/scene_{i:03}.json")), s.to_json_pretty())?;
    }
    let suite = EvalSuite::new(&data, &lex, cfg)?;
    let refs: Vec<_> = suite.scenes.iter().map(|s| s.seed()).zip(&suite.refs).collect();
    write(&out.join("references.json"), to_pretty(&refs))?;

    let trained = train_pipeline(cfg, &data, &lex)?;
    let mut jsonl = String::new();
    for d in &trained.demos {
        jsonl.push_str(&serde_json::to_string(d).expect("demo serializes"));
        jsonl.push('\n');
    }
    write(&out.join("demos.jsonl"), jsonl)?;
    write(&out.join("checkpoints/il.json"), trained.il.to_json())?;
    write(&out.join("checkpoints/il_rl.json"), trained.il_rl.to_json())?;
    write(&out.join("training.json"), to_pretty(&trained.log))?;

    let report = evaluate_all(&suite, &trained.il, &trained.il_rl)?;
    write(&out.join("reports/summary.csv"), report.summary_csv())?;
    write(&out.join("reports/episodes.csv"), report.episodes_csv())?;
    write(&out.join("reports/report.json"), report.to_json())?;
    let seeds = SeedRecord {
        master: cfg.seed,
        lexicon: cfg.lexicon_seed(),
        scenes: data.scenes.iter().map(Scene::seed).collect(),
        demos: cfg.demo_config().seed,
        init: cfg.init_seed(),
        il_shuffle: cfg.il_config().seed,
        rl: cfg.rl_config().seed,
        annotation: ANNOTATION_SEED,
    };
    write(&out.join("seeds.json"), to_pretty(&seeds))?;
    let mut text = String::new();
    for s in &report.summaries {
        let _ = writeln!(text, "{:<12} NoS {:>6.2}  SoL {:.4}  CIDEr {:.3}", s.method.label(), s.nos, s.sol, s.cider);
    }
    write(&out.join("reports/summary.txt"), text)?;
    Ok(RunOutcome {
        plan,
        report: Some(report),
        training: Some(trained.log),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridscene::SceneObject;

    #[test]
    fn empty_scene_renders_border() {
        let ring: Vec<Cell> = (0..5)
            .flat_map(|y| (0..4).map(move |x| Cell::new(x, y)))
            .filter(|c| c.x == 0 || c.y == 0 || c.x == 3 || c.y == 4)
            .collect();
        let scene = Scene::new(4, 5, &ring, vec![], RoomType::Kitchen, 1).unwrap();
        let text = render_ascii(&scene, &Overlay::None);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(&lines[1..], ["####", "#..#", "#..#", "#..#", "####"]);
    }

    #[test]
    fn trajectory_marks_start_and_end() {
        let obj = SceneObject {
            id: 0,
            category: "sofa".into(),
            footprint: vec![Cell::new(2, 2)],
            salience: 1.0,
        };
        let scene = Scene::new(3, 3, &[], vec![obj], RoomType::LivingRoom, 2).unwrap();
        let path = [Pose { x: 0, y: 0, h: 0 }, Pose { x: 1, y: 0, h: 0 }, Pose { x: 2, y: 0, h: 2 }];
        let text = render_ascii(&scene, &Overlay::Trajectory(&path));
        assert_eq!(text.lines().skip(1).collect::<Vec<_>>(), ["..s", "...", "S1E"]);
    }

    #[test]
    fn config_requires_consistent_split() {
        let cfg = ExperimentConfig {
            scenes_per_type: 5,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn dry_run_writes_nothing() {
        let dir = std::env::temp_dir().join("esd-dry-run-probe");
        let _ = fs::remove_dir_all(&dir);
        let outcome = run_experiment(&ExperimentConfig::default(), &dir, true).unwrap();
        assert!(outcome.report.is_none());
        assert_eq!(outcome.plan.len(), STAGES.len() + 1);
        assert!(!dir.exists());
    }
}
