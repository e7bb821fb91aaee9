use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use esd_core::demogen::{make_demos, Demonstration};
use esd_core::gridscene::{Pose, Scene};
use esd_core::harness::{
    evaluate, make_splits, render_ascii, run_experiment, EvalReport, EvalSuite, ExperimentConfig, Method, Overlay,
};
use esd_core::langmetrics::{caption_metrics, cider, tokenize, ReferenceSet};
use esd_core::perception::observe;
use esd_core::policy::{
    prepare_demo, rollout, train_il, train_rl, EpisodeEnv, PolicyParams, PolicyShape, RolloutMode,
};
use esd_core::scoring::score_map;

#[derive(Parser)]
#[command(name = "esd", version, about = "Embodied scene description on grid scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset scenes and their split.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every viewpoint of a scene.
    ScoreMap {
        #[arg(long)]
        scene: PathBuf,
        /// Directory for score_map.csv and heat.txt; CSV to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the observation at a pose as JSON.
    Observe {
        #[arg(long)]
        scene: PathBuf,
        /// Pose as `x,y,h`.
        #[arg(long)]
        pose: String,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
    },
    /// Shortest-path demonstrations as JSON lines.
    Demos {
        /// Scene files or directories of scene files.
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Imitation learning from demonstrations.
    TrainIl {
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        demos: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// REINFORCE fine-tuning of a checkpoint.
    TrainRl {
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        /// Input checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// One episode of a checkpoint from a start pose.
    Rollout {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pose: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        /// Write the episode JSON here; prints the trajectory map either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate baselines and checkpoints on the test split.
    Eval {
        #[arg(long)]
        il: Option<PathBuf>,
        #[arg(long)]
        il_rl: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Caption metrics for JSON lines of `{"candidate", "references"}`.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        /// Directory for items.csv and aggregate.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ASCII map of a scene with an optional overlay.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        heat: bool,
        /// Episode JSON whose path is drawn.
        #[arg(long, conflicts_with = "heat")]
        episode: Option<PathBuf>,
    },
    /// The whole pipeline into a run directory.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Deserialize)]
struct MetricItem {
    candidate: String,
    references: Vec<String>,
}

#[derive(Serialize)]
struct MetricRow {
    item: usize,
    bleu1: f64,
    bleu2: f64,
    bleu3: f64,
    bleu4: f64,
    meteor_lite: f64,
    rouge_l: f64,
    cider: f64,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::from_json(&read(path)?).with_context(|| format!("parsing scene {}", path.display()))
}

/// Scene files, expanding directories to their sorted `*.json` entries.
fn load_scenes(paths: &[PathBuf]) -> Result<Vec<Scene>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no scene files found");
    }
    files.iter().map(|f| load_scene(f)).collect()
}

fn parse_pose(s: &str) -> Result<Pose> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("pose must be `x,y,h`, got `{s}`");
    }
    Ok(Pose {
        x: parts[0].parse().context("pose x")?,
        y: parts[1].parse().context("pose y")?,
        h: parts[2].parse().context("pose h")?,
    })
}

fn load_params(path: &Path) -> Result<PolicyParams> {
    PolicyParams::from_json(&read(path)?).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write(&out.join("summary.csv"), report.summary_csv())?;
    write(&out.join("episodes.csv"), report.episodes_csv())?;
    write(&out.join("report.json"), report.to_json())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::GenScenes { out } => {
            let data = make_splits(&cfg)?;
            for (i, s) in data.scenes.iter().enumerate() {
                write(&out.join(format!("scenes/scene_{i:03}.json")), s.to_json_pretty())?;
            }
            write(&out.join("split.json"), serde_json::to_string_pretty(&data.split)?)?;
            println!("{} scenes written to {}", data.scenes.len(), out.display());
        }
        Command::ScoreMap { scene, out } => {
            let scene = load_scene(&scene)?;
            let lex = cfg.lexicon()?;
            let smap = score_map(&scene, &lex, &cfg.scoring(&lex), &cfg.sensor());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["x", "y", "h", "score"])?;
            for (p, s) in smap.poses.iter().zip(&smap.scores) {
                w.write_record([p.x.to_string(), p.y.to_string(), p.h.to_string(), s.to_string()])?;
            }
            let table = w.into_inner().map_err(|e| anyhow!("{e}"))?;
            let heat = render_ascii(&scene, &Overlay::Heat(&smap));
            match out {
                Some(dir) => {
                    write(&dir.join("score_map.csv"), table)?;
                    write(&dir.join("heat.txt"), heat)?;
                }
                None => std::io::stdout().write_all(&table)?,
            }
        }
        Command::Observe {
            scene,
            pose,
            episode_seed,
        } => {
            let scene = load_scene(&scene)?;
            let pose = parse_pose(&pose)?;
            if !scene.is_valid_pose(pose) {
                bail!("pose {pose:?} is not a valid viewpoint");
            }
            let lex = cfg.lexicon()?;
            let obs = observe(&scene, pose, &lex, &cfg.sensor().with_episode(episode_seed));
            println!("{}", serde_json::to_string_pretty(&obs)?);
        }
        Command::Demos { scenes, out } => {
            let scenes = load_scenes(&scenes)?;
            let lex = cfg.lexicon()?;
            let demos = make_demos(&scenes, &lex, &cfg.scoring(&lex), &cfg.sensor(), &cfg.demo_config())?;
            let mut text = String::new();
            for d in &demos {
                text.push_str(&serde_json::to_string(d)?);
                text.push('\n');
            }
            write(&out, text)?;
            println!("{} demonstrations written to {}", demos.len(), out.display());
        }
        Command::TrainIl {
            scenes,
            demos,
            checkpoint,
            lr,
            epochs,
        } => {
            let scenes = load_scenes(&scenes)?;
            let lex = cfg.lexicon()?;
            let sensor = cfg.sensor();
            let mut trajectories = Vec::new();
            for (i, line) in read(&demos)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let d: Demonstration = serde_json::from_str(line).with_context(|| format!("demo line {}", i + 1))?;
                let scene = scenes
                    .iter()
                    .find(|s| s.seed() == d.scene_seed)
                    .ok_or_else(|| anyhow!("demo line {} refers to unknown scene {}", i + 1, d.scene_seed))?;
                if !d.verify(scene) {
                    bail!("demo line {} is not a valid path in scene {}", i + 1, d.scene_seed);
                }
                trajectories.push(prepare_demo(&d, scene, &lex, &sensor));
            }
            let mut tc = cfg.il_config();
            tc.lr = lr.unwrap_or(tc.lr);
            tc.epochs = epochs.unwrap_or(tc.epochs);
            let init = PolicyParams::init(PolicyShape::for_lexicon(&lex, cfg.hidden, cfg.lang_dim), cfg.init_seed());
            let outcome = train_il(&init, &trajectories, &tc)?;
            write(&checkpoint, outcome.params.to_json())?;
            println!(
                "trained on {} demos, final batch loss {:.4}",
                trajectories.len(),
                outcome.losses.last().copied().unwrap_or(0.0)
            );
        }
        Command::TrainRl {
            scenes,
            checkpoint,
            out,
            lr,
            iterations,
        } => {
            let scenes = load_scenes(&scenes)?;
            let lex = cfg.lexicon()?;
            let params = load_params(&checkpoint)?;
            params.check_lexicon(&lex)?;
            let mut tc = cfg.rl_config();
            tc.lr = lr.unwrap_or(tc.lr);
            let iterations = iterations.unwrap_or(cfg.rl_iterations);
            let outcome = train_rl(&params, &scenes, &lex, &cfg.sensor(), &cfg.scoring(&lex), &tc, iterations)?;
            write(&out, outcome.params.to_json())?;
            println!(
                "{} iterations, final mean return {:.4}, baseline {:.4}",
                iterations,
                outcome.mean_returns.last().copied().unwrap_or(0.0),
                outcome.baseline
            );
        }
        Command::Rollout {
            scene,
            checkpoint,
            pose,
            mode,
            episode_seed,
            out,
        } => {
            let scene = load_scene(&scene)?;
            let start = parse_pose(&pose)?;
            if !scene.is_valid_pose(start) {
                bail!("pose {start:?} is not a valid viewpoint");
            }
            let lex = cfg.lexicon()?;
            let params = load_params(&checkpoint)?;
            params.check_lexicon(&lex)?;
            let sensor = cfg.sensor();
            let scoring = cfg.scoring(&lex);
            let env = EpisodeEnv {
                scene: &scene,
                lex: &lex,
                sensor: &sensor,
                scoring: &scoring,
            };
            let mode = match mode {
                ModeArg::Greedy => RolloutMode::Greedy,
                ModeArg::Sample => RolloutMode::Sample,
            };
            let episode = rollout(&params, &env, start, &cfg.eval_config(), mode, episode_seed)?;
            let mut path: Vec<Pose> = episode.steps.iter().map(|s| s.pose).collect();
            path.push(episode.final_pose);
            print!("{}", render_ascii(&scene, &Overlay::Trajectory(&path)));
            println!(
                "NoS {}  SoL {:.4}  {:?}  \"{}\"",
                episode.nos(),
                episode.final_score,
                episode.termination,
                episode.final_observation.caption.join(" ")
            );
            if let Some(out) = out {
                write(&out, serde_json::to_string_pretty(&episode)?)?;
            }
        }
        Command::Eval { il, il_rl, out } => {
            let lex = cfg.lexicon()?;
            let data = make_splits(&cfg)?;
            let suite = EvalSuite::new(&data, &lex, &cfg)?;
            let mut reports = vec![
                evaluate(Method::StopAlways, None, &suite)?,
                evaluate(Method::Random, None, &suite)?,
            ];
            for (method, path) in [(Method::Il, il), (Method::IlRl, il_rl)] {
                if let Some(path) = path {
                    let params = load_params(&path)?;
                    params.check_lexicon(&lex)?;
                    reports.push(evaluate(method, Some(&params), &suite)?);
                }
            }
            let report = EvalReport::merge(reports);
            write_report(&out, &report)?;
            print!("{}", report.summary_csv());
        }
        Command::Metrics { input, out } => {
            let lex = cfg.lexicon()?;
            let mut corpus = Vec::new();
            for (i, line) in read(&input)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let item: MetricItem = serde_json::from_str(line).with_context(|| format!("metrics line {}", i + 1))?;
                let refs = ReferenceSet::new(item.references.iter().map(|r| tokenize(r)).collect())
                    .with_context(|| format!("metrics line {}", i + 1))?;
                corpus.push((tokenize(&item.candidate), refs));
            }
            let ciders = if corpus.len() >= 2 {
                cider(&corpus)?.per_item
            } else {
                vec![0.0; corpus.len()]
            };
            let rows: Vec<MetricRow> = corpus
                .iter()
                .zip(ciders)
                .enumerate()
                .map(|(i, ((cand, refs), cider))| {
                    let m = caption_metrics(cand, refs, &lex);
                    MetricRow {
                        item: i,
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
            let n = rows.len().max(1) as f64;
            let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
            let agg = [
                ("bleu1", mean(|r| r.bleu1)),
                ("bleu2", mean(|r| r.bleu2)),
                ("bleu3", mean(|r| r.bleu3)),
                ("bleu4", mean(|r| r.bleu4)),
                ("meteor_lite", mean(|r| r.meteor_lite)),
                ("rouge_l", mean(|r| r.rouge_l)),
                ("cider", mean(|r| r.cider)),
            ];
            let mut items = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                items.serialize(r)?;
            }
            let items = items.into_inner().map_err(|e| anyhow!("{e}"))?;
            let mut aggregate = csv::Writer::from_writer(Vec::new());
            aggregate.write_record(["metric", "mean"])?;
            for (k, v) in agg {
                aggregate.write_record([k.to_string(), v.to_string()])?;
            }
            let aggregate = aggregate.into_inner().map_err(|e| anyhow!("{e}"))?;
            match out {
                Some(dir) => {
                    write(&dir.join("items.csv"), items)?;
                    write(&dir.join("aggregate.csv"), aggregate)?;
                }
                None => {
                    let mut stdout = std::io::stdout();
                    stdout.write_all(&items)?;
                    stdout.write_all(b"\n")?;
                    stdout.write_all(&aggregate)?;
                }
            }
        }
        Command::Render { scene, heat, episode } => {
            let scene = load_scene(&scene)?;
            let text = if heat {
                let lex = cfg.lexicon()?;
                let smap = score_map(&scene, &lex, &cfg.scoring(&lex), &cfg.sensor());
                render_ascii(&scene, &Overlay::Heat(&smap))
            } else if let Some(path) = episode {
                let ep: esd_core::policy::Episode = serde_json::from_str(&read(&path)?).context("parsing episode")?;
                let mut poses: Vec<Pose> = ep.steps.iter().map(|s| s.pose).collect();
                poses.push(ep.final_pose);
                render_ascii(&scene, &Overlay::Trajectory(&poses))
            } else {
                render_ascii(&scene, &Overlay::None)
            };
            print!("{text}");
        }
        Command::Run { out, dry_run } => {
            let outcome = run_experiment(&cfg, &out, dry_run)?;
            for line in &outcome.plan {
                println!("{line}");
            }
            if let Some(report) = outcome.report {
                print!("{}", report.summary_csv());
            }
        }
    }
    Ok(())
}
