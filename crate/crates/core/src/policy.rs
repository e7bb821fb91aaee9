//! Recurrent navigation policy with hand-derived backpropagation through
//! time.
//!
//! State vector: `s_t = [hist_t ; W_L * bow_t]`, where `hist_t` holds the
//! maximum detection confidence per object category and `bow_t` is the
//! caption's bag of words. Cell: `h_t = tanh(W_s s_t + W_h h_{t-1} + b)`,
//! logits `W_o h_t + b_o`, softmax restricted to feasible actions.
//!
//! Imitation learning minimizes the summed negative log-likelihood of
//! demonstrated actions. REINFORCE minimizes
//! `-sum_t (R_t - baseline) * log pi(a_t)` with a moving-average baseline.
//! Both share one weighted-NLL gradient routine.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demogen::Demonstration;
use crate::gridscene::{Action, ActionMask, Pose, Scene, NUM_ACTIONS};
use crate::lexicon::Lexicon;
use crate::perception::{observe, Observation, SensorConfig};
use crate::rng;
use crate::scoring::{viewpoint_score, ScoringConfig};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LANG_DIM: usize = 16;
pub const INIT_SCALE: f64 = 0.1;
pub const CHECKPOINT_FORMAT: &str = "esd-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no feasible action in mask")]
    EmptyMask,
    #[error("divergence detected: {0}")]
    DivergenceDetected(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("scene {0} not found")]
    UnknownScene(u64),
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-scale..=scale)).collect(),
        }
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    /// `self += a * b^T`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        for (row, &ai) in self.data.chunks_exact_mut(self.cols).zip(a) {
            if ai == 0.0 {
                continue;
            }
            for (r, &bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }

    fn add_vec(&mut self, a: &[f64]) {
        for (r, &x) in self.data.iter_mut().zip(a) {
            *r += x;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub n_categories: usize,
    pub bow_dim: usize,
    pub lang_dim: usize,
    pub hidden: usize,
}

impl PolicyShape {
    pub fn for_lexicon(lex: &Lexicon, hidden: usize, lang_dim: usize) -> Self {
        PolicyShape {
            n_categories: lex.num_categories(),
            bow_dim: lex.bow_dim(),
            lang_dim,
            hidden,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n_categories + self.lang_dim
    }
}

/// All trainable parameters. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    /// Language embedding, `lang_dim x bow_dim`.
    pub w_l: Tensor,
    pub w_s: Tensor,
    pub w_h: Tensor,
    pub b: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

pub const TENSOR_NAMES: [&str; 6] = ["w_l", "w_s", "w_h", "b", "w_o", "b_o"];

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        let h = shape.hidden;
        PolicyParams {
            shape,
            w_l: Tensor::zeros(shape.lang_dim, shape.bow_dim),
            w_s: Tensor::zeros(h, shape.state_dim()),
            w_h: Tensor::zeros(h, h),
            b: Tensor::zeros(h, 1),
            w_o: Tensor::zeros(NUM_ACTIONS, h),
            b_o: Tensor::zeros(NUM_ACTIONS, 1),
        }
    }

    /// Weights uniform in `[-0.1, 0.1]`, biases zero.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut rng = rng::stream(&[rng::TAG_INIT, seed]);
        let h = shape.hidden;
        PolicyParams {
            shape,
            w_l: Tensor::uniform(shape.lang_dim, shape.bow_dim, INIT_SCALE, &mut rng),
            w_s: Tensor::uniform(h, shape.state_dim(), INIT_SCALE, &mut rng),
            w_h: Tensor::uniform(h, h, INIT_SCALE, &mut rng),
            b: Tensor::zeros(h, 1),
            w_o: Tensor::uniform(NUM_ACTIONS, h, INIT_SCALE, &mut rng),
            b_o: Tensor::zeros(NUM_ACTIONS, 1),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.w_l, &self.w_s, &self.w_h, &self.b, &self.w_o, &self.b_o]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_l,
            &mut self.w_s,
            &mut self.w_h,
            &mut self.b,
            &mut self.w_o,
            &mut self.b_o,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn get(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.data.len() {
                return t.data[i];
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.data.len() {
                t.data[i] = v;
                return;
            }
            i -= t.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += alpha * b;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.tensors())
                .map(|(n, t)| NamedTensor {
                    name: n.to_string(),
                    tensor: t.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        let mut params = PolicyParams::zeros(doc.shape);
        if doc.tensors.len() != TENSOR_NAMES.len() {
            return Err(PolicyError::Checkpoint("wrong tensor count".into()));
        }
        for ((name, slot), nt) in TENSOR_NAMES.iter().zip(params.tensors_mut()).zip(doc.tensors) {
            if nt.name != *name || nt.tensor.rows != slot.rows || nt.tensor.cols != slot.cols || nt.tensor.data.len() != slot.data.len() {
                return Err(PolicyError::Checkpoint(format!("tensor `{}` does not match shape header", nt.name)));
            }
            *slot = nt.tensor;
        }
        if !params.is_finite() {
            return Err(PolicyError::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn check_lexicon(&self, lex: &Lexicon) -> Result<(), PolicyError> {
        if self.shape.n_categories != lex.num_categories() || self.shape.bow_dim != lex.bow_dim() {
            return Err(PolicyError::ShapeMismatch(format!(
                "checkpoint expects {} categories / {} BoW slots, lexicon has {} / {}",
                self.shape.n_categories,
                self.shape.bow_dim,
                lex.num_categories(),
                lex.bow_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    shape: PolicyShape,
    tensors: Vec<NamedTensor>,
}

/// Observation features that do not depend on parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub hist: Vec<f64>,
    pub bow: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
}

pub type Trajectory = Vec<StepInput>;

/// Per-category maximum detection confidence.
pub fn category_histogram(obs: &Observation, lex: &Lexicon) -> Vec<f64> {
    let mut hist = vec![0.0f64; lex.num_categories()];
    for d in &obs.detections {
        if let Some(i) = lex.category_index(&d.category) {
            hist[i] = hist[i].max(d.confidence);
        }
    }
    hist
}

fn assemble_state(params: &PolicyParams, hist: &[f64], bow: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(params.shape.state_dim());
    s.extend_from_slice(hist);
    s.extend(params.w_l.matvec(bow));
    s
}

/// `[hist ; W_L * bow(caption)]`.
pub fn state_vector(obs: &Observation, lex: &Lexicon, params: &PolicyParams) -> Vec<f64> {
    assemble_state(params, &category_histogram(obs, lex), &lex.bow(&obs.caption))
}

/// Softmax over mask-true entries; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, PolicyError> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(PolicyError::EmptyMask);
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(probs)
}

/// One recurrent step: new hidden state and action distribution.
pub fn policy_step(params: &PolicyParams, h_prev: &[f64], s: &[f64], mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    if !mask.iter().any(|&m| m) {
        return Err(PolicyError::EmptyMask);
    }
    let mut z = params.w_s.matvec(s);
    for ((zi, hi), bi) in z.iter_mut().zip(params.w_h.matvec(h_prev)).zip(&params.b.data) {
        *zi += hi + bi;
    }
    let h: Vec<f64> = z.into_iter().map(f64::tanh).collect();
    let mut logits = params.w_o.matvec(&h);
    for (l, b) in logits.iter_mut().zip(&params.b_o.data) {
        *l += b;
    }
    let probs = masked_softmax(&logits, mask)?;
    Ok((h, probs))
}

struct StepCache {
    s: Vec<f64>,
    h_prev: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

fn forward(params: &PolicyParams, traj: &[StepInput]) -> Result<Vec<StepCache>, PolicyError> {
    let mut h_prev = vec![0.0; params.shape.hidden];
    let mut caches = Vec::with_capacity(traj.len());
    for step in traj {
        let s = assemble_state(params, &step.hist, &step.bow);
        let (h, probs) = policy_step(params, &h_prev, &s, &step.mask)?;
        caches.push(StepCache {
            s,
            h_prev: std::mem::replace(&mut h_prev, h.clone()),
            h,
            probs,
        });
    }
    Ok(caches)
}

/// `-sum_t w_t log pi(a_t)` for one trajectory, accumulating its gradient.
fn weighted_nll_backward(
    params: &PolicyParams,
    traj: &[StepInput],
    weights: &[f64],
    grad: &mut PolicyParams,
) -> Result<f64, PolicyError> {
    let caches = forward(params, traj)?;
    let n_cat = params.shape.n_categories;
    let mut loss = 0.0;
    let mut dh_next = vec![0.0; params.shape.hidden];
    for t in (0..traj.len()).rev() {
        let (step, cache, w) = (&traj[t], &caches[t], weights[t]);
        let p_a = cache.probs[step.action];
        loss -= w * p_a.ln();

        let mut g = cache.probs.clone();
        g[step.action] -= 1.0;
        g.iter_mut().for_each(|v| *v *= w);

        grad.w_o.add_outer(&g, &cache.h);
        grad.b_o.add_vec(&g);
        let mut dh = params.w_o.matvec_t(&g);
        for (d, n) in dh.iter_mut().zip(&dh_next) {
            *d += n;
        }
        let dz: Vec<f64> = dh.iter().zip(&cache.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        grad.w_s.add_outer(&dz, &cache.s);
        grad.w_h.add_outer(&dz, &cache.h_prev);
        grad.b.add_vec(&dz);
        let ds = params.w_s.matvec_t(&dz);
        grad.w_l.add_outer(&ds[n_cat..], &step.bow);
        dh_next = params.w_h.matvec_t(&dz);
    }
    Ok(loss)
}

/// Weighted NLL and its gradient over a batch, reduced in batch order.
pub fn weighted_loss_and_grad(
    params: &PolicyParams,
    batch: &[Trajectory],
    weights: &[Vec<f64>],
) -> Result<(f64, PolicyParams), PolicyError> {
    let parts: Vec<Result<(f64, PolicyParams), PolicyError>> = batch
        .par_iter()
        .zip(weights.par_iter())
        .map(|(traj, w)| {
            let mut g = PolicyParams::zeros(params.shape);
            let l = weighted_nll_backward(params, traj, w, &mut g)?;
            Ok((l, g))
        })
        .collect();
    let mut grad = PolicyParams::zeros(params.shape);
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.axpy(1.0, &g);
    }
    Ok((loss, grad))
}

/// Summed negative log-likelihood of the demonstrated actions under
/// teacher forcing, and its BPTT gradient.
pub fn il_loss_and_grad(params: &PolicyParams, batch: &[Trajectory]) -> Result<(f64, PolicyParams), PolicyError> {
    let weights: Vec<Vec<f64>> = batch.iter().map(|t| vec![1.0; t.len()]).collect();
    weighted_loss_and_grad(params, batch, &weights)
}

/// Loss only, for finite-difference checks.
pub fn weighted_loss(params: &PolicyParams, batch: &[Trajectory], weights: &[Vec<f64>]) -> Result<f64, PolicyError> {
    let mut loss = 0.0;
    for (traj, w) in batch.iter().zip(weights) {
        for (cache, (step, wt)) in forward(params, traj)?.iter().zip(traj.iter().zip(w)) {
            loss -= wt * cache.probs[step.action].ln();
        }
    }
    Ok(loss)
}

/// Replays a demonstration's observations into policy inputs.
pub fn prepare_demo(demo: &Demonstration, scene: &Scene, lex: &Lexicon, sensor: &SensorConfig) -> Trajectory {
    let sensor = sensor.with_episode(demo.episode_seed);
    demo.poses
        .iter()
        .zip(&demo.actions)
        .map(|(&pose, &a)| {
            let obs = observe(scene, pose, lex, &sensor);
            StepInput {
                hist: category_histogram(&obs, lex),
                bow: lex.bow(&obs.caption),
                mask: scene.feasible_actions(pose).to_vec(),
                action: a.index(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta: f64,
    pub rho: f64,
    pub horizon: usize,
    pub baseline_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale the gradient to at most this norm before each step.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta: 0.99,
            rho: 0.01,
            horizon: 40,
            baseline_decay: 0.9,
            batch: 16,
            epochs: 1,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.lr.is_nan() || self.lr <= 0.0 || !(self.beta > 0.0 && self.beta < 1.0) || self.batch == 0 || self.horizon == 0 {
            return Err(PolicyError::ShapeMismatch(format!(
                "invalid training config: lr={} beta={} batch={} horizon={}",
                self.lr, self.beta, self.batch, self.horizon
            )));
        }
        Ok(())
    }
}

fn sgd_step(params: &mut PolicyParams, grad: &mut PolicyParams, cfg: &TrainConfig) -> Result<(), PolicyError> {
    if let Some(max) = cfg.clip_norm {
        let n = grad.norm();
        if n > max {
            grad.scale(max / n);
        }
    }
    params.axpy(-cfg.lr, grad);
    if !params.is_finite() {
        return Err(PolicyError::DivergenceDetected("non-finite parameters after update".into()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct IlOutcome {
    pub params: PolicyParams,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

/// Plain gradient descent over seeded shuffles of the demonstrations.
pub fn train_il(params: &PolicyParams, demos: &[Trajectory], cfg: &TrainConfig) -> Result<IlOutcome, PolicyError> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..demos.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(&[rng::TAG_SHUFFLE, cfg.seed, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Trajectory> = chunk.iter().map(|&i| demos[i].clone()).collect();
            let (loss, mut grad) = il_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() {
                return Err(PolicyError::DivergenceDetected(format!("IL loss {loss} in epoch {epoch}")));
            }
            losses.push(loss);
            sgd_step(&mut params, &mut grad, cfg)?;
        }
    }
    Ok(IlOutcome { params, losses })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    HorizonReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub pose: Pose,
    pub observation: Observation,
    /// Parameter-free part of the state: category histogram, BoW, mask.
    pub input: StepInput,
    pub action: Action,
    pub log_prob: f64,
    /// `p_t = score(obs after action t) - rho * t`.
    pub progress: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scene_seed: u64,
    pub episode_seed: u64,
    pub start: Pose,
    /// Score of the start observation; the progress value before any action.
    pub start_score: f64,
    pub steps: Vec<EpisodeStep>,
    pub termination: Termination,
    pub final_pose: Pose,
    pub final_observation: Observation,
    pub final_score: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of composite actions taken before stopping.
    pub fn nos(&self) -> usize {
        self.steps.iter().filter(|s| !s.action.is_stop()).count()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn final_progress(&self) -> f64 {
        self.steps.last().map_or(self.start_score, |s| s.progress)
    }

    pub fn trajectory(&self) -> Trajectory {
        self.steps.iter().map(|s| s.input.clone()).collect()
    }
}

/// Chooses actions during an episode.
pub trait Controller {
    /// Returns the action index and its log-probability.
    fn act(&mut self, hist: &[f64], bow: &[f64], mask: &ActionMask, rng: &mut dyn rand::RngCore) -> Result<(usize, f64), PolicyError>;
}

/// The learned policy, carrying its recurrent state.
pub struct LearnedController<'a> {
    params: &'a PolicyParams,
    hidden: Vec<f64>,
    mode: RolloutMode,
}

impl<'a> LearnedController<'a> {
    pub fn new(params: &'a PolicyParams, mode: RolloutMode) -> Self {
        LearnedController {
            params,
            hidden: vec![0.0; params.shape.hidden],
            mode,
        }
    }
}

/// Index of the largest probability; lowest index wins ties.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample_action(probs: &[f64], rng: &mut dyn rand::RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl Controller for LearnedController<'_> {
    fn act(&mut self, hist: &[f64], bow: &[f64], mask: &ActionMask, rng: &mut dyn rand::RngCore) -> Result<(usize, f64), PolicyError> {
        let s = assemble_state(self.params, hist, bow);
        let (h, probs) = policy_step(self.params, &self.hidden, &s, mask)?;
        self.hidden = h;
        let a = match self.mode {
            RolloutMode::Greedy => greedy_action(&probs),
            RolloutMode::Sample => sample_action(&probs, rng),
        };
        Ok((a, probs[a].ln()))
    }
}

/// Uniform over feasible actions, stop included.
pub struct RandomController;

impl Controller for RandomController {
    fn act(&mut self, _: &[f64], _: &[f64], mask: &ActionMask, rng: &mut dyn rand::RngCore) -> Result<(usize, f64), PolicyError> {
        let feasible: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| mask[i]).collect();
        if feasible.is_empty() {
            return Err(PolicyError::EmptyMask);
        }
        let a = feasible[rng.random_range(0..feasible.len())];
        Ok((a, -(feasible.len() as f64).ln()))
    }
}

/// Always stops immediately.
pub struct StopController;

impl Controller for StopController {
    fn act(&mut self, _: &[f64], _: &[f64], _: &ActionMask, _: &mut dyn rand::RngCore) -> Result<(usize, f64), PolicyError> {
        Ok((Action::STOP.index(), 0.0))
    }
}

/// Shared context for running episodes in one scene.
pub struct EpisodeEnv<'a> {
    pub scene: &'a Scene,
    pub lex: &'a Lexicon,
    pub sensor: &'a SensorConfig,
    pub scoring: &'a ScoringConfig,
}

/// Runs one episode from `start`. Rewards are `r_t = p_t - p_{t-1}` with
/// `p_t = score(obs after action t) - rho * t` and `p_{-1}` the start score.
pub fn run_episode(
    env: &EpisodeEnv<'_>,
    controller: &mut dyn Controller,
    start: Pose,
    cfg: &TrainConfig,
    episode_seed: u64,
) -> Result<Episode, PolicyError> {
    let sensor = env.sensor.with_episode(episode_seed);
    let mut rng = rng::stream(&[rng::TAG_ROLLOUT, env.scene.seed(), episode_seed]);
    let mut pose = start;
    let mut obs = observe(env.scene, pose, env.lex, &sensor);
    let start_score = viewpoint_score(&obs, env.lex, env.scoring);
    let mut score = start_score;
    let mut prev = start_score;
    let mut steps = Vec::new();
    let mut termination = Termination::HorizonReached;
    for t in 0..cfg.horizon {
        let hist = category_histogram(&obs, env.lex);
        let bow = env.lex.bow(&obs.caption);
        let mask = env.scene.feasible_actions(pose);
        let (a_idx, log_prob) = controller.act(&hist, &bow, &mask, &mut rng)?;
        let action = Action::from_index(a_idx).expect("controller returns a valid index");
        let next = env
            .scene
            .apply_action(pose, action)
            .map_err(|e| PolicyError::DivergenceDetected(e.to_string()))?;
        let next_obs = if next == pose { obs.clone() } else { observe(env.scene, next, env.lex, &sensor) };
        let next_score = if next == pose { score } else { viewpoint_score(&next_obs, env.lex, env.scoring) };
        let progress = next_score - cfg.rho * t as f64;
        let reward = progress - prev;
        prev = progress;
        steps.push(EpisodeStep {
            pose,
            observation: obs,
            input: StepInput {
                hist,
                bow,
                mask: mask.to_vec(),
                action: a_idx,
            },
            action,
            log_prob,
            progress,
            reward,
        });
        pose = next;
        obs = next_obs;
        score = next_score;
        if action.is_stop() {
            termination = Termination::Stopped;
            break;
        }
    }
    Ok(Episode {
        scene_seed: env.scene.seed(),
        episode_seed,
        start,
        start_score,
        steps,
        termination,
        final_pose: pose,
        final_observation: obs,
        final_score: score,
    })
}

/// Policy rollout in sample or greedy mode.
pub fn rollout(params: &PolicyParams, env: &EpisodeEnv<'_>, start: Pose, cfg: &TrainConfig, mode: RolloutMode, seed: u64) -> Result<Episode, PolicyError> {
    let mut c = LearnedController::new(params, mode);
    run_episode(env, &mut c, start, cfg, seed)
}

/// Discounted returns `R_t = sum_{t' >= t} beta^(t'-t) r_t'`.
pub fn returns(rewards: &[f64], beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + beta * acc;
        out[t] = acc;
    }
    out
}

/// One REINFORCE step on a batch of sampled episodes. Advantages use the
/// incoming baseline; the baseline is then moved toward the batch's mean
/// return `R_0`.
pub fn reinforce_update(
    params: &PolicyParams,
    episodes: &[Episode],
    baseline: f64,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, f64), PolicyError> {
    if episodes.is_empty() {
        return Ok((params.clone(), baseline));
    }
    let batch: Vec<Trajectory> = episodes.iter().map(Episode::trajectory).collect();
    let all_returns: Vec<Vec<f64>> = episodes.iter().map(|e| returns(&e.rewards(), cfg.beta)).collect();
    let weights: Vec<Vec<f64>> = all_returns
        .iter()
        .map(|r| r.iter().map(|rt| rt - baseline).collect())
        .collect();
    let (_, mut grad) = weighted_loss_and_grad(params, &batch, &weights)?;
    let mut next = params.clone();
    sgd_step(&mut next, &mut grad, cfg)?;
    let mean_return = all_returns.iter().map(|r| r.first().copied().unwrap_or(0.0)).sum::<f64>() / episodes.len() as f64;
    let baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_return;
    Ok((next, baseline))
}

#[derive(Clone, Debug)]
pub struct RlOutcome {
    pub params: PolicyParams,
    pub baseline: f64,
    /// Mean undiscounted return per iteration.
    pub mean_returns: Vec<f64>,
}

/// REINFORCE fine-tuning on random starts in `scenes`.
pub fn train_rl(
    params: &PolicyParams,
    scenes: &[Scene],
    lex: &Lexicon,
    sensor: &SensorConfig,
    scoring: &ScoringConfig,
    cfg: &TrainConfig,
    iterations: usize,
) -> Result<RlOutcome, PolicyError> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut baseline = 0.0;
    let mut mean_returns = Vec::with_capacity(iterations);
    if scenes.is_empty() {
        return Ok(RlOutcome {
            params,
            baseline,
            mean_returns,
        });
    }
    let viewpoints: Vec<Vec<Pose>> = scenes.iter().map(Scene::enumerate_viewpoints).collect();
    for it in 0..iterations {
        let mut rng = rng::stream(&[rng::TAG_RL, cfg.seed, it as u64]);
        let jobs: Vec<(usize, Pose, u64)> = (0..cfg.batch)
            .map(|_| {
                let s = rng.random_range(0..scenes.len());
                let p = viewpoints[s][rng.random_range(0..viewpoints[s].len())];
                (s, p, rng.random())
            })
            .collect();
        let episodes: Vec<Episode> = jobs
            .par_iter()
            .map(|&(s, start, seed)| {
                let env = EpisodeEnv {
                    scene: &scenes[s],
                    lex,
                    sensor,
                    scoring,
                };
                rollout(&params, &env, start, cfg, RolloutMode::Sample, seed)
            })
            .collect::<Result<_, _>>()?;
        mean_returns.push(episodes.iter().map(|e| e.rewards().iter().sum::<f64>()).sum::<f64>() / episodes.len() as f64);
        let (next, b) = reinforce_update(&params, &episodes, baseline, cfg)?;
        params = next;
        baseline = b;
    }
    Ok(RlOutcome {
        params,
        baseline,
        mean_returns,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Gradient magnitude at the entry with the largest relative error.
    pub worst_scale: f64,
    pub checked: usize,
}

/// Gradient entries with both magnitudes below this are compared in
/// absolute terms only.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

/// Compares the analytic gradient of the weighted NLL against central
/// finite differences over every parameter.
pub fn grad_check(params: &PolicyParams, batch: &[Trajectory], weights: &[Vec<f64>], eps: f64) -> Result<GradCheckReport, PolicyError> {
    let (_, grad) = weighted_loss_and_grad(params, batch, weights)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_scale: 0.0,
        checked: 0,
    };
    for i in 0..params.num_params() {
        let orig = params.get(i);
        probe.set(i, orig + eps);
        let up = weighted_loss(&probe, batch, weights)?;
        probe.set(i, orig - eps);
        let down = weighted_loss(&probe, batch, weights)?;
        probe.set(i, orig);
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad.get(i);
        let abs = (numeric - analytic).abs();
        let scale = numeric.abs().max(analytic.abs());
        let rel = if scale < GRAD_CHECK_FLOOR { 0.0 } else { abs / scale };
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_scale = scale;
        }
        report.checked += 1;
    }
    Ok(report)
}
