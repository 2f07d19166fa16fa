mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use etp_core::export::export_maps;
use etp_core::nn::{read_checkpoint, write_checkpoint, Checkpoint};
use etp_core::ravens::{
    dataset_digest, episode, evaluate_policy, oracle, read_dataset, seeds, write_dataset, Episode, EvalReport, Scene, Task,
    TEST_OFFSET,
};
use etp_core::train::{model_from_checkpoint, train_config_of, TrainConfig, Trainer};
use etp_core::transporter::{ModelConfig, PlaceHead, Transporter};
use etp_core::verify::{run_suite, PropertyResult, SuiteConfig};
use serde::Serialize;

use config::RunConfig;

/// Invalid invocation or configuration; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

const EXIT_USAGE: u8 = 1;
const EXIT_SUITE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "etp", version, about = "Equivariant Transporter: data generation, training, evaluation and verification")]
struct Cli {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate oracle demonstrations.
    Gen(GenArgs),
    /// Behavior-clone a model from a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the oracle) on unseen scenes.
    Eval(EvalArgs),
    /// Run the equivariance property suite.
    Verify(VerifyArgs),
    /// Write pick and place heatmaps for one scene.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Head {
    Equivariant,
    Baseline,
}

impl From<Head> for PlaceHead {
    fn from(h: Head) -> Self {
        match h {
            Head::Equivariant => PlaceHead::Equivariant,
            Head::Baseline => PlaceHead::Baseline,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Policy {
    /// Best checkpoint given by `--checkpoint`.
    Model,
    /// Expert actions read from the scene.
    Oracle,
    /// Freshly initialized model.
    Untrained,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset produced by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use only the first N episodes of the dataset.
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    val_episodes: Option<usize>,
    #[arg(long, value_enum)]
    place_head: Option<Head>,
    /// Stop once validation success reaches this rate.
    #[arg(long)]
    stop_at: Option<f64>,
    /// Best-by-validation checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV (step, pick, angle, place).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the final training state here.
    #[arg(long)]
    last: Option<PathBuf>,
    /// Continue from a checkpoint written with `--last`. An existing `--out`
    /// file from the same run restores the best state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    policy: Policy,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Group order of the untrained policy.
    #[arg(long)]
    n: Option<usize>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random instances per property.
    #[arg(long, default_value_t = 5)]
    instances: usize,
    /// Break kernel tying in every equivariant layer (negative control).
    #[arg(long)]
    untied: bool,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scene seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<Task>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, flags: RunConfig) -> anyhow::Result<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.overlay(flags))
}

fn warn_all(cfg: &RunConfig) -> anyhow::Result<()> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn required<T>(v: Option<T>, flag: &str) -> anyhow::Result<T> {
    match v {
        Some(v) => Ok(v),
        None => usage(format!("--{flag} is required")),
    }
}

fn read_ckpt(path: &Path) -> anyhow::Result<Checkpoint> {
    let f = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Ok(read_checkpoint(BufReader::new(f))?)
}

fn write_ckpt(path: &Path, ckpt: &Checkpoint) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct GenSummary {
    task: Task,
    episodes: usize,
    seed: u64,
    digest: String,
    path: PathBuf,
}

fn cmd_gen(cfg: Option<&Path>, args: GenArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        cfg,
        RunConfig {
            task: args.task,
            demos: args.demos,
            seed: args.seed,
            out: args.out,
            ..RunConfig::default()
        },
    )?;
    warn_all(&cfg)?;
    let task = cfg.task.unwrap_or(Task::InsertL);
    let seed = cfg.seed.unwrap_or(0);
    let demos = cfg.demos.unwrap_or(10);
    let out = required(cfg.out, "out")?;
    let episodes: Vec<Episode> = seeds(seed, 0, demos).into_iter().map(|s| episode(task, s)).collect();
    let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(f);
    write_dataset(&mut w, &episodes)?;
    w.flush()?;
    print_json(&GenSummary {
        task,
        episodes: episodes.len(),
        seed,
        digest: dataset_digest(&episodes)?,
        path: out,
    })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    task: Task,
    n: usize,
    place_head: PlaceHead,
    demos: usize,
    steps: u64,
    curve: &'a [etp_core::train::ValidationPoint],
    best: Option<etp_core::train::ValidationPoint>,
    first_checkpoint_at_0_9: Option<usize>,
    checkpoint: PathBuf,
}

fn load_dataset(path: &Path) -> anyhow::Result<Vec<Episode>> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    Ok(read_dataset(BufReader::new(f))?)
}

fn cmd_train(cfg: Option<&Path>, args: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        cfg,
        RunConfig {
            task: args.task,
            seed: args.seed,
            n: args.n,
            demos: args.demos,
            steps: args.steps,
            lr: args.lr,
            eval_every: args.eval_every,
            val_episodes: args.val_episodes,
            place_head: args.place_head.map(Into::into),
            stop_at: args.stop_at,
            data: args.data,
            out: args.out,
            log: args.log,
            ..RunConfig::default()
        },
    )?;
    let data = required(cfg.data.clone(), "data")?;
    let out = required(cfg.out.clone(), "out")?;
    let mut episodes = load_dataset(&data)?;
    let Some(first) = episodes.first() else {
        return usage("dataset holds no episodes");
    };
    let task = first.task;
    if let Some(e) = episodes.iter().find(|e| e.task != task) {
        return usage(format!("dataset mixes tasks {task} and {}", e.task));
    }
    if cfg.task.is_some_and(|t| t != task) {
        return usage(format!("dataset holds {task} episodes, not {}", cfg.task.unwrap()));
    }
    if let Some(d) = cfg.demos {
        if d > episodes.len() {
            return usage(format!("--demos {d} exceeds the {} episodes in the dataset", episodes.len()));
        }
        episodes.truncate(d);
    }

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(&read_ckpt(path)?)?;
            if t.config.task != task {
                return usage(format!("checkpoint was trained on {}, dataset holds {task}", t.config.task));
            }
            if cfg.n.is_some_and(|n| n != t.model.config.n) || cfg.place_head.is_some_and(|h| h != t.model.config.place_head) {
                return usage("--n and --place-head cannot change when resuming");
            }
            if let Some(s) = cfg.steps {
                t.config.steps = s;
            }
            if cfg.stop_at.is_some() {
                t.config.stop_at = cfg.stop_at;
            }
            if out.exists() && !t.restore_best(&read_ckpt(&out)?)? {
                eprintln!("warning: {} is not this run's best state; best tracking restarts", out.display());
            }
            warn_all(&RunConfig {
                n: Some(t.model.config.n),
                ..cfg.clone()
            })?;
            t
        }
        None => {
            let defaults = TrainConfig::default();
            let model = ModelConfig {
                n: cfg.n.unwrap_or(ModelConfig::default().n),
                place_head: cfg.place_head.unwrap_or(PlaceHead::Equivariant),
                ..ModelConfig::default()
            };
            warn_all(&RunConfig {
                n: Some(model.n),
                ..cfg.clone()
            })?;
            let train = TrainConfig {
                task,
                seed: cfg.seed.unwrap_or(defaults.seed),
                demos: episodes.len(),
                steps: cfg.steps.unwrap_or(defaults.steps),
                lr: cfg.lr.unwrap_or(defaults.lr),
                eval_every: cfg.eval_every.unwrap_or(defaults.eval_every),
                val_episodes: cfg.val_episodes.unwrap_or(defaults.val_episodes),
                test_episodes: cfg.episodes.unwrap_or(defaults.test_episodes),
                stop_at: cfg.stop_at,
            };
            Trainer::new(model, train)?
        }
    };
    let overlap = trainer.config.validation_seeds();
    if let Some(e) = episodes.iter().find(|e| overlap.contains(&e.seed)) {
        return usage(format!("training seed {} is also a validation seed", e.seed));
    }

    let mut log = match &cfg.log {
        Some(path) => {
            let fresh = args.resume.is_none() || !path.exists();
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(path)
                .with_context(|| format!("opening log {}", path.display()))?;
            let mut w = BufWriter::new(f);
            if fresh {
                writeln!(w, "step,pick,angle,place")?;
            }
            Some(w)
        }
        None => None,
    };
    let demos: Vec<_> = episodes.into_iter().map(|e| e.demo).collect();
    let start = Instant::now();
    let mut io_err = None;
    trainer.run(
        &demos,
        |row| {
            if let Some(w) = log.as_mut() {
                let l = &row.losses;
                if let Err(e) = writeln!(w, "{},{},{},{}", row.step, l.pick, l.angle, l.place) {
                    io_err.get_or_insert(e);
                }
            }
        },
        |p| eprintln!("step {:>5}  validation success {:.2}  ({:.1}s)", p.step, p.success_rate, start.elapsed().as_secs_f64()),
    )?;
    if let Some(e) = io_err {
        return Err(e).context("writing metrics log");
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    eprintln!("trained {} steps in {:.1}s", trainer.step, start.elapsed().as_secs_f64());

    write_ckpt(&out, &trainer.best_checkpoint()?)?;
    if let Some(last) = &args.last {
        write_ckpt(last, &trainer.checkpoint()?)?;
    }
    print_json(&TrainSummary {
        task,
        n: trainer.model.config.n,
        place_head: trainer.model.config.place_head,
        demos: demos.len(),
        steps: trainer.step,
        curve: &trainer.curve,
        best: trainer.best,
        first_checkpoint_at_0_9: trainer.first_reaching(0.9),
        checkpoint: out,
    })
}

fn cmd_eval(cfg: Option<&Path>, args: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        cfg,
        RunConfig {
            task: args.task,
            episodes: args.episodes,
            seed: args.seed,
            n: args.n,
            checkpoint: args.checkpoint,
            out: args.out,
            ..RunConfig::default()
        },
    )?;
    warn_all(&cfg)?;
    let defaults = TrainConfig::default();
    let report: EvalReport = match args.policy {
        Policy::Model => {
            let path = required(cfg.checkpoint.clone(), "checkpoint")?;
            let ckpt = read_ckpt(&path)?;
            let train = train_config_of(&ckpt)?;
            let (model, _) = model_from_checkpoint(&ckpt)?;
            let task = cfg.task.unwrap_or(train.task);
            let test = seeds(cfg.seed.unwrap_or(train.seed), TEST_OFFSET, cfg.episodes.unwrap_or(train.test_episodes));
            Trainer::evaluate(&model, task, &test)?
        }
        Policy::Oracle | Policy::Untrained => {
            let task = cfg.task.unwrap_or(Task::InsertL);
            let seed = cfg.seed.unwrap_or(defaults.seed);
            let test = seeds(seed, TEST_OFFSET, cfg.episodes.unwrap_or(defaults.test_episodes));
            if args.policy == Policy::Oracle {
                evaluate_policy(task, &test, |_, scene: &Scene| {
                    let d = oracle(scene);
                    Ok((d.pick, d.place))
                })?
            } else {
                let model = ModelConfig {
                    n: cfg.n.unwrap_or(ModelConfig::default().n),
                    ..ModelConfig::default()
                };
                Trainer::evaluate(&Transporter::new(model, seed)?, task, &test)?
            }
        }
    };
    match &cfg.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            eprintln!("success rate {:.3} over {} episodes", report.success_rate, report.episodes);
            Ok(())
        }
        None => print_json(&report),
    }
}

fn print_table(results: &[PropertyResult]) {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
    println!("{:<width$}  {:>11}  {:>9}  {:>9}  result", "property", "residual", "tolerance", "instances");
    for r in results {
        println!(
            "{:<width$}  {:>11.3e}  {:>9.0e}  {:>9}  {}",
            r.name,
            r.residual,
            r.tolerance,
            r.instances,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
}

fn cmd_verify(cfg: Option<&Path>, args: VerifyArgs) -> anyhow::Result<bool> {
    let cfg = load_config(
        cfg,
        RunConfig {
            n: args.n,
            seed: args.seed,
            ..RunConfig::default()
        },
    )?;
    if args.instances == 0 {
        return usage("instances must be positive");
    }
    warn_all(&cfg)?;
    let suite = SuiteConfig {
        n: cfg.n.unwrap_or(4),
        seed: cfg.seed.unwrap_or(0),
        untied: args.untied,
        instances: args.instances,
    };
    let start = Instant::now();
    let results = run_suite(&suite)?;
    print_table(&results);
    eprintln!("{} properties in {:.1}s", results.len(), start.elapsed().as_secs_f64());
    if let Some(path) = &args.json {
        fs::write(path, serde_json::to_vec_pretty(&results)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} properties failed", results.len());
    }
    Ok(failed == 0)
}

fn cmd_export(cfg: Option<&Path>, args: ExportArgs) -> anyhow::Result<()> {
    let cfg = load_config(
        cfg,
        RunConfig {
            checkpoint: args.checkpoint,
            seed: args.seed,
            task: args.task,
            out: args.out,
            ..RunConfig::default()
        },
    )?;
    warn_all(&cfg)?;
    let path = required(cfg.checkpoint, "checkpoint")?;
    let out = required(cfg.out, "out")?;
    let ckpt = read_ckpt(&path)?;
    let task = match cfg.task {
        Some(t) => t,
        None => train_config_of(&ckpt)?.task,
    };
    let (model, _) = model_from_checkpoint(&ckpt)?;
    let seed = cfg.seed.unwrap_or(TEST_OFFSET);
    let scene = Scene::generate(seed, task);
    let (pick, place) = model.maps(&scene.image)?;
    let sidecar = export_maps(&out, task.name(), seed, &pick, &place)?;
    println!("{}", sidecar.display());
    Ok(())
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("ETP_THREADS") else {
        return Ok(());
    };
    let threads: usize = match v.trim().parse() {
        Ok(t) if t > 0 => t,
        _ => return usage(format!("ETP_THREADS must be a positive integer, got {v:?}")),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, a)?,
        Command::Train(a) => cmd_train(cfg, a)?,
        Command::Eval(a) => cmd_eval(cfg, a)?,
        Command::Verify(a) => return cmd_verify(cfg, a),
        Command::Export(a) => cmd_export(cfg, a)?,
    }
    Ok(true)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use etp_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Format(_) | E::Json(_) => EXIT_IO,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_SUITE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
