use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aps_core::checkpoint::{Checkpoint, FinetuneState};
use aps_core::rewards::RewardMode;
use aps_core::trainer::{self, bundled_config, evaluate_gpi, MetricsRow, Phase, PretrainRun, RunConfig};
use aps_core::Error;

const METRICS_FILE: &str = "metrics.csv";
const CONFIG_FILE: &str = "run.cfg";
const PRETRAIN_CKPT: &str = "ckpt_pretrain.bin";
const FINETUNE_CKPT: &str = "ckpt_finetune.bin";

#[derive(Parser)]
#[command(name = "aps", version, about = "Reward-free pretraining and fine-tuning on key-and-door gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain without rewards; writes ckpt_pretrain.bin and metrics.csv.
    Pretrain(PretrainArgs),
    /// Infer the task, evaluate zero-shot, fine-tune and evaluate again.
    Finetune(FinetuneArgs),
    /// Pretrain and fine-tune in one go.
    Run(RunArgs),
    /// Evaluate a fine-tuned checkpoint.
    Eval(EvalArgs),
    /// Summarize zero-shot and fine-tuned success rates across runs.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Bundled config name (e.g. hard_aps) or path to a key = value file.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// aps, apt or visr.
    #[arg(long)]
    mode: Option<String>,
    /// easy, hard or a map file path.
    #[arg(long)]
    map: Option<String>,
    /// Pretraining steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Run directory. Defaults to $APS_OUT_DIR/<level>_<mode>_s<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Continue from ckpt_pretrain.bin in the run directory.
    #[arg(long)]
    resume: bool,
    /// Stop and checkpoint once this many steps have been taken.
    #[arg(long)]
    until: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Run directory holding ckpt_pretrain.bin.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to start from instead of <out>/ckpt_pretrain.bin.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Fine-tuning steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding ckpt_finetune.bin.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u32>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories (searched recursively for metrics.csv).
    #[arg(required = false)]
    dirs: Vec<PathBuf>,
    /// Also write the table to this directory as plot.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config { .. }) => 2,
            CliError::Core(Error::BadMagic { .. } | Error::VersionMismatch { .. }) => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn build_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        None => RunConfig::default(),
        Some(name) => match bundled_config(name) {
            Some(c) => c,
            None => {
                let text = fs::read_to_string(name).map_err(|e| {
                    CliError::Core(Error::Config {
                        key: "config".into(),
                        message: format!("`{name}` is neither a bundled config nor a readable file: {e}"),
                    })
                })?;
                RunConfig::from_text(&text)?
            }
        },
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.mode {
        cfg.set("mode", m)?;
    }
    if let Some(m) = &args.map {
        cfg.map = m.clone();
    }
    if let Some(s) = args.steps {
        cfg.pretrain_steps = s;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir(out: &OutArgs, cfg: &RunConfig) -> PathBuf {
    out.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os("APS_OUT_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(format!("{}_{}_s{}", cfg.level(), cfg.mode, cfg.seed))
    })
}

struct MetricsFile {
    file: fs::File,
}

impl MetricsFile {
    fn create(dir: &Path) -> CliResult<Self> {
        let mut file = fs::File::create(dir.join(METRICS_FILE))?;
        writeln!(file, "{}", trainer::CSV_HEADER)?;
        Ok(Self { file })
    }

    fn append(dir: &Path) -> CliResult<Self> {
        let path = dir.join(METRICS_FILE);
        if !path.exists() {
            return Self::create(dir);
        }
        Ok(Self {
            file: OpenOptions::new().append(true).open(path)?,
        })
    }

    fn write(&mut self, row: &MetricsRow) -> CliResult<()> {
        writeln!(self.file, "{}", row.to_csv())?;
        Ok(())
    }
}

fn pretrain_loop(run: &mut PretrainRun, until: u64, dir: &Path, metrics: &mut MetricsFile) -> CliResult<()> {
    let until = until.min(run.config.pretrain_steps);
    while run.step_count() < until {
        if let Some(row) = run.step()? {
            metrics.write(&row)?;
        }
    }
    Checkpoint::Pretrain(Box::new(run.clone())).save(&dir.join(PRETRAIN_CKPT))?;
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs) -> CliResult<()> {
    let (mut run, dir, mut metrics) = if args.resume {
        let dir = args
            .out
            .out
            .clone()
            .ok_or_else(|| CliError::Usage("--resume needs --out".into()))?;
        let mut run = match Checkpoint::load(&dir.join(PRETRAIN_CKPT))? {
            Checkpoint::Pretrain(run) => *run,
            Checkpoint::Finetune(_) => {
                return Err(CliError::Runtime("checkpoint is already fine-tuned".into()))
            }
        };
        if let Some(s) = args.config.steps {
            run.config.pretrain_steps = s;
        }
        let metrics = MetricsFile::append(&dir)?;
        (run, dir, metrics)
    } else {
        let cfg = build_config(&args.config)?;
        let dir = run_dir(&args.out, &cfg);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
        let metrics = MetricsFile::create(&dir)?;
        (PretrainRun::new(cfg)?, dir, metrics)
    };
    let until = args.until.unwrap_or(u64::MAX);
    pretrain_loop(&mut run, until, &dir, &mut metrics)?;
    println!(
        "pretrained {} steps ({}); checkpoint {}",
        run.step_count(),
        run.config.mode,
        dir.join(PRETRAIN_CKPT).display()
    );
    Ok(())
}

fn finetune_from(run: PretrainRun, dir: &Path, metrics: &mut MetricsFile) -> CliResult<()> {
    if !run.is_finished() {
        return Err(CliError::Runtime(format!(
            "pretraining stopped at step {} of {}; resume it first",
            run.step_count(),
            run.config.pretrain_steps
        )));
    }
    let cfg = run.config.clone();
    let (agent, env, mut rng) = run.into_parts();
    let outcome = trainer::adapt(agent, &env, &cfg, &mut rng)?;
    for row in &outcome.rows {
        metrics.write(row)?;
    }
    let state = FinetuneState {
        config: cfg,
        env,
        agent: outcome.agent,
        w_task: outcome.w_task,
        policies: outcome.policies,
        rng,
        zero_shot: outcome.zero_shot,
        finetuned: outcome.finetuned,
    };
    Checkpoint::Finetune(Box::new(state)).save(&dir.join(FINETUNE_CKPT))?;
    println!(
        "zero_shot success_rate={} fine-tuned success_rate={}",
        outcome.zero_shot.success_rate, outcome.finetuned.success_rate
    );
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> CliResult<()> {
    let path = args.checkpoint.unwrap_or_else(|| args.out.join(PRETRAIN_CKPT));
    let mut run = match Checkpoint::load(&path)? {
        Checkpoint::Pretrain(run) => *run,
        Checkpoint::Finetune(_) => {
            return Err(CliError::Runtime("expected a pretraining checkpoint".into()))
        }
    };
    if let Some(s) = args.steps {
        run.config.finetune_steps = s;
    }
    fs::create_dir_all(&args.out)?;
    let mut metrics = MetricsFile::append(&args.out)?;
    finetune_from(run, &args.out, &mut metrics)
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let cfg = build_config(&args.config)?;
    let dir = run_dir(&args.out, &cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    let mut metrics = MetricsFile::create(&dir)?;
    let mut run = PretrainRun::new(cfg)?;
    pretrain_loop(&mut run, u64::MAX, &dir, &mut metrics)?;
    finetune_from(run, &dir, &mut metrics)
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let path = args.checkpoint.unwrap_or_else(|| args.out.join(FINETUNE_CKPT));
    let state = match Checkpoint::load(&path)? {
        Checkpoint::Finetune(s) => *s,
        Checkpoint::Pretrain(_) => {
            return Err(CliError::Runtime(
                "evaluation needs a fine-tuned checkpoint; run `finetune` first".into(),
            ))
        }
    };
    let episodes = args.episodes.unwrap_or(state.config.eval_episodes);
    let r = evaluate_gpi(
        &state.agent.successor,
        &state.w_task,
        &state.policies,
        &state.env,
        episodes,
        state.config.eval_epsilon,
        state.config.seed,
    )?;
    println!(
        "episodes={} success_rate={} mean_return={}",
        r.episodes, r.success_rate, r.mean_return
    );
    Ok(())
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> CliResult<()> {
    if dir.join(METRICS_FILE).is_file() {
        found.push(dir.to_path_buf());
    }
    if dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for e in entries {
            find_metrics(&e, found)?;
        }
    }
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Default)]
struct Group {
    zero_shot: BTreeMap<u64, f64>,
    finetuned: BTreeMap<u64, f64>,
}

fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    let mut dirs = Vec::new();
    for d in &args.dirs {
        find_metrics(d, &mut dirs)?;
    }
    let mut groups: BTreeMap<(RewardMode, String), Group> = BTreeMap::new();
    for dir in &dirs {
        let level = match fs::read_to_string(dir.join(CONFIG_FILE)) {
            Ok(text) => RunConfig::from_text(&text)?.level(),
            Err(_) => "unknown".to_string(),
        };
        let rows = trainer::parse_csv(&fs::read_to_string(dir.join(METRICS_FILE))?)?;
        for r in rows {
            let Some(rate) = r.success_rate else { continue };
            let g = groups.entry((r.mode, level.clone())).or_default();
            match r.phase {
                Phase::ZeroShot => {
                    g.zero_shot.insert(r.seed, rate);
                }
                Phase::Finetuned => {
                    g.finetuned.insert(r.seed, rate);
                }
                _ => {}
            }
        }
    }
    groups.retain(|_, g| !g.finetuned.is_empty() || !g.zero_shot.is_empty());
    if groups.is_empty() {
        return Err(CliError::Usage("no completed runs found".into()));
    }
    let mut table = String::from("mode\tlevel\tseeds\tzero_shot_mean\tzero_shot_sd\tfinetuned_mean\tfinetuned_sd\n");
    for ((mode, level), g) in &groups {
        let zs: Vec<f64> = g.zero_shot.values().copied().collect();
        let ft: Vec<f64> = g.finetuned.values().copied().collect();
        let fmt = |xs: &[f64]| {
            if xs.is_empty() {
                ("".to_string(), "".to_string())
            } else {
                let (m, s) = mean_sd(xs);
                (format!("{m:.9}"), format!("{s:.9}"))
            }
        };
        let (zm, zsd) = fmt(&zs);
        let (fm, fsd) = fmt(&ft);
        let seeds = zs.len().max(ft.len());
        table.push_str(&format!("{mode}\t{level}\t{seeds}\t{zm}\t{zsd}\t{fm}\t{fsd}\n"));
    }
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("plot.txt"), &table)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
