use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ivos_core::eval::{benchmark_object_scaling, run_robot_session, score_video, MetricReport, ObjectScore};
use ivos_core::io::{frame_file_name, read_dataset, read_mask, write_dataset};
use ivos_core::synth::{benchmark_scene, generate_scene, random_scene, synthetic_suite, Scene, SceneConfig};
use ivos_core::EngineConfig;
use ivos_service::ServiceConfig;

/// A command-line mistake, reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(name = "ivos", version, about = "Interactive video object segmentation engine")]
pub struct Cli {
    /// Worker threads for the compute pool (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes as PNG datasets plus a suite.json.
    GenData(GenDataArgs),
    /// Run the robot evaluator over a suite.
    Evaluate(EvaluateArgs),
    /// Time concurrent versus per-object decoding as the object count grows.
    Bench(BenchArgs),
    /// Serve the HTTP and WebSocket API.
    Serve(ServeArgs),
    /// Score a directory of predicted masks against ground truth.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with one scene config or an array of them (default: the shipped suite).
    #[arg(long, conflicts_with = "seed")]
    pub config: Option<PathBuf>,
    /// Draw random scenes from this seed instead of the shipped suite.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random scenes (with --seed).
    #[arg(long, default_value_t = 5, requires = "seed")]
    pub scenes: usize,
    /// Objects per random scene (with --seed).
    #[arg(long, default_value_t = 3, requires = "seed")]
    pub objects: usize,
    /// Frames per random scene (with --seed).
    #[arg(long, default_value_t = 24, requires = "seed")]
    pub frames: usize,
    /// Height and width of random scenes (with --seed).
    #[arg(long, default_value_t = 96, requires = "seed")]
    pub size: usize,
    /// Also write the 10-object benchmark scene.
    #[arg(long)]
    pub bench: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Suite: a JSON array of scene configs, or a directory written by gen-data.
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub frames_per_round: usize,
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Engine seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Summary CSV; `<stem>.json`, `<stem>.objects.csv` and `<stem>.timings.csv` are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Engine config JSON (missing fields take defaults).
    #[arg(long)]
    pub engine: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Object counts: `1..11` (inclusive), `1..=11`, `4` or `1,10,11`.
    #[arg(long, default_value = "1..11")]
    pub objects: String,
    /// Timed trials per count (median reported; at least 3).
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Output CSV; a JSON copy goes to `<stem>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene config JSON (default: the shipped benchmark scene).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Engine seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Engine config JSON (missing fields take defaults).
    #[arg(long)]
    pub engine: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config, TOML or JSON. IVOS_* environment variables override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Listen port (overrides config and environment).
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Engine seed (overrides config and environment).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of predicted `%05d.png` masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `%05d.png` masks.
    #[arg(long)]
    pub gt: PathBuf,
    /// Number of objects (default: the largest label in the ground truth).
    #[arg(long)]
    pub objects: Option<usize>,
    /// Per-object CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn read_configs(path: &Path) -> Result<Vec<SceneConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(ivos_core::Error::from)?;
    let configs = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    };
    Ok(configs.map_err(ivos_core::Error::from)?)
}

fn engine_config(path: Option<&Path>, seed: u64) -> Result<EngineConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(ivos_core::Error::from)?
        }
        None => EngineConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut configs = match (&a.config, a.seed) {
        (Some(p), _) => read_configs(p)?,
        (None, Some(seed)) => {
            if a.scenes == 0 || a.frames == 0 || a.size < 16 {
                return usage("--scenes and --frames must be positive and --size at least 16");
            }
            if a.objects == 0 || a.objects > ivos_core::video::DEFAULT_CAPACITY {
                return usage(format!("--objects must be in 1..={}", ivos_core::video::DEFAULT_CAPACITY));
            }
            (0..a.scenes)
                .map(|i| random_scene(&format!("scene{i:02}"), seed + i as u64, a.objects, a.frames, a.size, a.size))
                .collect()
        }
        (None, None) => synthetic_suite(),
    };
    if a.bench {
        configs.push(benchmark_scene());
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for cfg in &configs {
        let scene = generate_scene(cfg)?;
        write_dataset(&a.out.join(&cfg.name), &scene)?;
        println!("{}: {} frames, {} objects", cfg.name, cfg.num_frames, cfg.objects.len());
    }
    let suite = serde_json::to_string_pretty(&configs)?;
    std::fs::write(a.out.join("suite.json"), suite + "\n")?;
    Ok(())
}

fn load_suite(path: &Path) -> Result<Vec<Scene>> {
    if !path.exists() {
        return usage(format!("suite {} does not exist", path.display()));
    }
    if path.is_file() {
        return read_configs(path)?
            .iter()
            .map(|c| generate_scene(c).map_err(Into::into))
            .collect();
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scene.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return usage(format!("{} holds no scene directories", path.display()));
    }
    dirs.iter().map(|d| read_dataset(d).map_err(Into::into)).collect()
}

#[derive(Debug, Serialize)]
struct RoundSummary {
    round: usize,
    interacted: Vec<usize>,
    mean_j: f64,
    mean_f: f64,
    mean_jf: f64,
}

#[derive(Debug, Serialize)]
struct SceneSummary {
    scene: String,
    rounds: Vec<RoundSummary>,
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    frames_per_round: usize,
    rounds: usize,
    seed: u64,
    mean_j: f64,
    mean_f: f64,
    mean_jf: f64,
    scenes: Vec<SceneSummary>,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.frames_per_round == 0 || a.rounds == 0 {
        return usage("--frames-per-round and --rounds must be at least 1");
    }
    let scenes = load_suite(&a.suite)?;
    if let Some(s) = scenes.iter().find(|s| s.frames.len() < a.frames_per_round) {
        return usage(format!(
            "--frames-per-round {} exceeds the {} frames of {}",
            a.frames_per_round,
            s.frames.len(),
            s.config.name
        ));
    }
    let cfg = engine_config(a.engine.as_deref(), a.seed)?;
    let reports: Vec<MetricReport> = scenes
        .iter()
        .map(|s| run_robot_session(s, a.frames_per_round, a.rounds, &cfg))
        .collect::<Result<_, _>>()?;

    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let summary = EvaluationSummary {
        frames_per_round: a.frames_per_round,
        rounds: a.rounds,
        seed: a.seed,
        mean_j: mean(|r| r.final_round().mean_j),
        mean_f: mean(|r| r.final_round().mean_f),
        mean_jf: mean(|r| r.final_round().mean_jf),
        scenes: reports
            .iter()
            .map(|r| SceneSummary {
                scene: r.scene.clone(),
                rounds: r
                    .rounds
                    .iter()
                    .map(|x| RoundSummary {
                        round: x.round,
                        interacted: x.interacted.clone(),
                        mean_j: x.mean_j,
                        mean_f: x.mean_f,
                        mean_jf: x.mean_jf,
                    })
                    .collect(),
            })
            .collect(),
    };

    let mut csv = String::from("scene,frames_per_round,rounds,mean_j,mean_f,mean_jf\n");
    for r in &reports {
        let last = r.final_round();
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.scene, a.frames_per_round, a.rounds, last.mean_j, last.mean_f, last.mean_jf
        ));
    }
    csv.push_str(&format!(
        "mean,{},{},{:.6},{:.6},{:.6}\n",
        a.frames_per_round, a.rounds, summary.mean_j, summary.mean_f, summary.mean_jf
    ));
    let mut objects = format!("{}\n", ivos_core::eval::METRIC_CSV_HEADER);
    let mut timings = String::from("scene,round,interaction_ms,propagation_ms,repropagation_ms,over_budget\n");
    for r in &reports {
        objects.push_str(&r.csv_rows());
        for x in &r.rounds {
            timings.push_str(&format!(
                "{},{},{:.3},{:.3},{:.3},{}\n",
                r.scene, x.round, x.wall_ms.interaction_ms, x.wall_ms.propagation_ms, x.wall_ms.repropagation_ms, x.over_budget
            ));
        }
    }
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, &csv)?;
    std::fs::write(sibling(&a.out, ".json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    std::fs::write(sibling(&a.out, ".objects.csv"), objects)?;
    std::fs::write(sibling(&a.out, ".timings.csv"), timings)?;
    print!("{csv}");
    Ok(())
}

/// `1..11` and `1..=11` are both inclusive; also a single count or a comma list.
pub fn parse_objects(spec: &str) -> Result<Vec<usize>> {
    let num = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Usage(format!("bad object count {s:?} in --objects")).into())
    };
    let counts: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return usage(format!("empty range {spec:?}"));
        }
        (lo..=hi).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if counts.iter().any(|&n| n == 0) {
        return usage("object counts start at 1");
    }
    Ok(counts)
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.trials < 3 {
        return usage("--trials must be at least 3 so the median is meaningful");
    }
    let objects = parse_objects(&a.objects)?;
    let scene_cfg = match &a.scene {
        Some(p) => {
            let mut v = read_configs(p)?;
            if v.len() != 1 {
                return usage("--scene must hold exactly one scene config");
            }
            v.remove(0)
        }
        None => benchmark_scene(),
    };
    let cfg = engine_config(a.engine.as_deref(), a.seed)?;
    let scene = generate_scene(&scene_cfg)?;
    let report = benchmark_object_scaling(&scene, &objects, a.trials, &cfg)?;
    ensure_parent(&a.out)?;
    let csv = report.to_csv();
    std::fs::write(&a.out, &csv)?;
    std::fs::write(sibling(&a.out, ".json"), serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{csv}");
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::load(a.config.as_deref())?;
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(s) = a.seed {
        cfg.engine.seed = s;
    }
    cfg.validate()?;
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    rt.block_on(ivos_service::serve(cfg))?;
    Ok(())
}

fn mask_indices(dir: &Path) -> Result<Vec<usize>> {
    if !dir.is_dir() {
        return usage(format!("{} is not a directory", dir.display()));
    }
    let mut idx: Vec<usize> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".png")?.parse().ok()
        })
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Serialize)]
struct MetricsSummary {
    frames: usize,
    objects: usize,
    mean_j: f64,
    mean_f: f64,
    mean_jf: f64,
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let frames = mask_indices(&a.gt)?;
    if frames.is_empty() {
        return usage(format!("no masks in {}", a.gt.display()));
    }
    if mask_indices(&a.pred)? != frames {
        bail!(ivos_core::Error::InvalidArgument("prediction and ground-truth frame sets differ".into()));
    }
    let load = |dir: &Path| -> Result<Vec<_>> {
        frames
            .iter()
            .map(|&t| read_mask(&dir.join(frame_file_name(t)), t, 0).map_err(Into::into))
            .collect()
    };
    let (pred, gt) = (load(&a.pred)?, load(&a.gt)?);
    let m = a
        .objects
        .unwrap_or_else(|| gt.iter().map(|g| g.max_label() as usize).max().unwrap_or(0));
    let scores: Vec<ObjectScore> = score_video(&pred, &gt, m)?.into_iter().flatten().collect();
    let n = scores.len().max(1) as f64;
    let mean_j = if scores.is_empty() { 1.0 } else { scores.iter().map(|s| s.j).sum::<f64>() / n };
    let mean_f = if scores.is_empty() { 1.0 } else { scores.iter().map(|s| s.f).sum::<f64>() / n };
    if let Some(out) = &a.out {
        let mut csv = String::from("frame,object,j,f\n");
        for s in &scores {
            csv.push_str(&format!("{},{},{:.6},{:.6}\n", s.frame, s.object, s.j, s.f));
        }
        ensure_parent(out)?;
        std::fs::write(out, csv)?;
    }
    let summary = MetricsSummary {
        frames: frames.len(),
        objects: m,
        mean_j,
        mean_f,
        mean_jf: (mean_j + mean_f) / 2.0,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
