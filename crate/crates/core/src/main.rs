use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use orgnav::gridworld::{generate_scene, SceneTemplate};
use orgnav::harness::{
    build_worlds, evaluate_checkpoint, load_checkpoint, render_trajectory, run_episode, save_checkpoint,
    save_scene_dir, train_navigation, train_tpn, Ablation, Adaptation, EpisodeResult, HarnessError, MetricsReport,
    NavAgent, SceneSuite, Split, TrainConfig, LONG_EPISODE_MIN_OPTIMAL,
};
use orgnav::harness::episode_seed;
use orgnav::navpolicy::SelectMode;

#[derive(Parser)]
#[command(name = "orgnav", version, about = "Train and evaluate object-relation navigation agents in a gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scene files from a template, or the standard train/val/test suite.
    GenScenes(GenScenes),
    /// Stage one: train the navigation network.
    TrainNav(TrainArgs),
    /// Stage two: train the tentative policy network against a frozen navigator.
    TrainTpn(TrainTpnArgs),
    /// Evaluate a checkpoint on a scene split.
    Eval(EvalArgs),
    /// Draw one evaluation episode as SVG and ASCII.
    Render(RenderArgs),
}

#[derive(Args)]
struct Shared {
    #[arg(long)]
    seed: Option<u64>,
    /// TOML or JSON training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenScenes {
    #[command(flatten)]
    shared: Shared,
    /// JSON scene template; without it the built-in suite is written.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    /// Suite directory with train/, val/ and test/; defaults to the built-in suite.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Repeatable: `--ablation no-org --ablation no-il` is the baseline.
    #[arg(long)]
    ablation: Vec<Ablation>,
}

#[derive(Args)]
struct TrainTpnArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Stage-one checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Val,
    Test,
}

impl From<EvalSplit> for Split {
    fn from(s: EvalSplit) -> Split {
        match s {
            EvalSplit::Val => Split::Val,
            EvalSplit::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    #[arg(long, value_enum, default_value = "off")]
    adapt: Switch,
    #[arg(long, default_value_t = 250)]
    episodes_per_scene: usize,
    /// Optimal-length threshold of the long-episode split.
    #[arg(long, default_value_t = LONG_EPISODE_MIN_OPTIMAL)]
    long_min: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    #[arg(long, value_enum, default_value = "off")]
    adapt: Switch,
    #[arg(long, default_value_t = 0)]
    scene_index: usize,
    #[arg(long, default_value_t = 0)]
    episode: usize,
}

fn load_config(shared: &Shared) -> Result<TrainConfig, HarnessError> {
    let mut cfg = match &shared.config {
        Some(path) => TrainConfig::from_text(&fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_suite(dir: Option<&Path>, cfg: &TrainConfig) -> Result<SceneSuite, HarnessError> {
    match dir {
        Some(d) => SceneSuite::load(d),
        None => SceneSuite::generate(&cfg.suite),
    }
}

fn apply_train_flags(cfg: &mut TrainConfig, args: &TrainArgs, tpn: bool) {
    if let Some(e) = args.episodes {
        if tpn {
            cfg.tpn_episodes = e;
        } else {
            cfg.nav_episodes = e;
        }
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    for &a in &args.ablation {
        cfg.apply_ablation(a);
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn gen_scenes(args: &GenScenes) -> Result<(), HarnessError> {
    let cfg = load_config(&args.shared)?;
    match &args.template {
        Some(path) => {
            let template = SceneTemplate::from_json(&fs::read_to_string(path)?)?;
            let scenes = (0..args.count as u64)
                .map(|i| generate_scene(cfg.seed.wrapping_add(i), &template))
                .collect::<Result<Vec<_>, _>>()?;
            save_scene_dir(&args.shared.out, &scenes)?;
            println!("wrote {} scenes to {}", scenes.len(), args.shared.out.display());
        }
        None => {
            let mut suite_cfg = cfg.suite.clone();
            if let Some(seed) = args.shared.seed {
                suite_cfg.seed = seed;
            }
            let suite = SceneSuite::generate(&suite_cfg)?;
            suite.save(&args.shared.out)?;
            println!(
                "wrote {}/{}/{} train/val/test scenes to {}",
                suite.train.len(),
                suite.val.len(),
                suite.test.len(),
                args.shared.out.display()
            );
        }
    }
    Ok(())
}

fn train_nav(args: &TrainArgs) -> Result<(), HarnessError> {
    let mut cfg = load_config(&args.shared)?;
    apply_train_flags(&mut cfg, args, false);
    let suite = load_suite(args.scenes.as_deref(), &cfg)?;
    let out = train_navigation(&cfg, &suite)?;
    fs::create_dir_all(&args.shared.out)?;
    let path = args.shared.out.join("nav.ckpt");
    save_checkpoint(&path, &out.checkpoint)?;
    write_json(&args.shared.out.join("nav_log.json"), &out.log)?;
    let rate = out.log.train_successes as f64 / out.log.episodes.max(1) as f64;
    println!(
        "trained {} episodes ({} updates), training success {:.1}%, validation {:?}; checkpoint {}",
        out.log.episodes,
        out.log.updates.len(),
        100.0 * rate,
        out.checkpoint.meta.val_success,
        path.display()
    );
    Ok(())
}

fn train_tpn_cmd(args: &TrainTpnArgs) -> Result<(), HarnessError> {
    let nav = load_checkpoint(&args.checkpoint)?;
    let mut cfg = match &args.train.shared.config {
        Some(_) => load_config(&args.train.shared)?,
        None => {
            let mut c = nav.meta.config.clone();
            if let Some(seed) = args.train.shared.seed {
                c.seed = seed;
            }
            c
        }
    };
    apply_train_flags(&mut cfg, &args.train, true);
    let suite = load_suite(args.train.scenes.as_deref(), &cfg)?;
    let out = train_tpn(&cfg, &nav, &suite)?;
    fs::create_dir_all(&args.train.shared.out)?;
    let path = args.train.shared.out.join("full.ckpt");
    save_checkpoint(&path, &out.checkpoint)?;
    write_json(&args.train.shared.out.join("tpn_log.json"), &out.log)?;
    println!(
        "trained TPN on {} episodes ({} updates), probe loss {:?} -> {:?}; checkpoint {}",
        out.log.episodes,
        out.log.updates,
        out.log.initial_probe_loss,
        out.log.final_probe_loss,
        path.display()
    );
    Ok(())
}

fn write_episodes(path: &Path, results: &[EpisodeResult]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Config(e.to_string()))?;
    for r in results {
        w.serialize(r).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), HarnessError> {
    let cfg = load_config(&args.shared)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let suite = load_suite(args.scenes.as_deref(), &cfg)?;
    let worlds = build_worlds(suite.split(args.split.into()), 0.0)?;
    if worlds.is_empty() {
        return Err(HarnessError::EmptySceneSet(Split::from(args.split).as_str()));
    }
    let adapt = matches!(args.adapt, Switch::On);
    let results = evaluate_checkpoint(&ckpt, &worlds, args.episodes_per_scene, adapt, cfg.seed)?;
    let report = MetricsReport::from_results(&results, args.long_min);
    fs::create_dir_all(&args.shared.out)?;
    fs::write(args.shared.out.join("metrics.json"), report.summary_json())?;
    write_json(&args.shared.out.join("report.json"), &report)?;
    write_episodes(&args.shared.out.join("episodes.csv"), &results)?;
    print!("{}", report.table());
    info!("wrote metrics to {}", args.shared.out.display());
    Ok(())
}

fn render(args: &RenderArgs) -> Result<(), HarnessError> {
    let cfg = load_config(&args.shared)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let suite = load_suite(args.scenes.as_deref(), &cfg)?;
    let scenes = suite.split(args.split.into());
    let scene = scenes
        .get(args.scene_index)
        .ok_or_else(|| HarnessError::Render(format!("scene index {} out of {}", args.scene_index, scenes.len())))?;
    let worlds = build_worlds(std::slice::from_ref(scene), 0.0)?;
    let mcfg = &ckpt.meta.config;
    let mut agent = NavAgent::new(&ckpt.nav, mcfg.use_graph, SelectMode::Greedy, cfg.seed);
    if matches!(args.adapt, Switch::On) {
        agent = agent.with_adaptation(Adaptation { tpn: ckpt.require_tpn()?, learning_rate: mcfg.adapt_learning_rate });
    }
    let seed = episode_seed(cfg.seed, args.scene_index, args.episode);
    let (_, trace) = run_episode(&worlds[0], seed, &mut agent, mcfg.deadlock)?;
    let drawing = render_trajectory(scene, &trace)?;
    fs::create_dir_all(&args.shared.out)?;
    let path = args.shared.out.join("trajectory.svg");
    fs::write(&path, &drawing.svg)?;
    print!("{}", drawing.ascii);
    println!("svg: {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenScenes(a) => gen_scenes(a),
        Command::TrainNav(a) => train_nav(a),
        Command::TrainTpn(a) => train_tpn_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
