//! `taskarith`: command-line front end.
//!
//! Settings resolve in three layers: built-in defaults, then the
//! `key = value` file given by `--config`, then `--set key=value` pairs and
//! the explicit flags of each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use taskarith::arith::{
    apply_task_vectors, build_zeroshot_head, extract_task_vector, group_by_class,
    line_search_lambda, zeroshot_head_snapshot, CoefficientGrid, TaskVector,
};
use taskarith::checkpoint::{load_tvf, meta_keys, save_tvf, WeightSnapshot};
use taskarith::disentangle::{self, region_mean, render_heatmap, GridSpec};
use taskarith::experiments::{self, ExperimentPlan};
use taskarith::fixtures;
use taskarith::nn::ModelConfig;
use taskarith::taskgen::{load_dataset_file, sample_task, Split, TaskSpec};
use taskarith::train::{self, finetune, linear_probe, pretrain, random_head, write_loss_csv, FinetuneRegime, PretrainScheme};
use taskarith::{Error, Result, SeededRng};

#[derive(Parser, Debug)]
#[command(name = "taskarith", version, about = "Task vectors, task addition and weight disentanglement")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Plan file with `key = value` settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TaskArg {
    /// Task id from the configured suite (`task0`, `task1`, ...).
    #[arg(long)]
    task: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train an encoder and write θ_pre.
    Pretrain {
        #[arg(long, default_value = "supervised")]
        scheme: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Loss log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit a linear head over a frozen encoder.
    Probe {
        #[arg(long)]
        pre: PathBuf,
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Fine-tune an encoder from θ_pre; writes the encoder to --out and the
    /// head next to it.
    Finetune {
        #[arg(long)]
        pre: PathBuf,
        /// Starting head; required for aligned, random when omitted for full.
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, default_value = "aligned")]
        regime: String,
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        head_out: Option<PathBuf>,
    },
    /// Write τ = θ_ft − θ_pre.
    Extract {
        #[arg(long)]
        ft: PathBuf,
        #[arg(long)]
        pre: PathBuf,
        /// Accept a fine-tune whose base hash does not match.
        #[arg(long)]
        force: bool,
    },
    /// θ_pre + Σ λ_t τ_t.
    Merge {
        #[arg(long)]
        pre: PathBuf,
        /// `path` or `path:λ`; vectors without λ use --lambda.
        #[arg(long = "vector", required = true)]
        vectors: Vec<String>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Uniform-λ line search; prints `λ normalized absolute` per grid value.
    Search {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long = "vector", required = true)]
        vectors: Vec<PathBuf>,
        /// Heads in the same order as the vectors.
        #[arg(long = "head", required = true)]
        heads: Vec<PathBuf>,
        /// `a,b,c` or `lo:hi:count`.
        #[arg(long, conflicts_with = "grid_default")]
        grid: Option<String>,
        /// The 21 values 0, 0.05, ..., 1 (also the default).
        #[arg(long)]
        grid_default: bool,
    },
    /// Accuracy of an encoder with a head on one task's eval split.
    Eval {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[command(flatten)]
        task: TaskArg,
    },
    /// Disentanglement-error grid for two task vectors; --out is the file
    /// prefix for `.csv`, `.pgm` and `-box.csv`.
    WdGrid {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long = "vector", num_args = 2, required = true)]
        vectors: Vec<PathBuf>,
        #[arg(long = "head", num_args = 2, required = true)]
        heads: Vec<PathBuf>,
        /// `lo:hi`.
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Zero-shot head from class-labelled embeddings in dataset format.
    Zshead {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        no_normalize: bool,
    },
    /// λ sweep of every scheme and regime in the plan.
    SweepLambda,
    /// Task-count sweep of every scheme and regime in the plan.
    SweepTasks,
    /// Every study of the plan.
    RunPlan,
    /// Re-hash the golden fixtures.
    VerifyFixtures {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Regenerate one golden fixture.
    MakeFixture { name: String },
}

fn plan_from(cli: &Cli) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("--set expects key=value, got {kv:?}")))?;
        plan.apply(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        plan.seed = seed;
    }
    Ok(plan)
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn find_task(plan: &ExperimentPlan, id: &str) -> Result<TaskSpec> {
    plan.suite()?
        .into_iter()
        .find(|t| t.task_id == id)
        .ok_or_else(|| Error::InvalidParameter(format!("no task {id:?} in the configured suite")))
}

/// Model config recorded in a checkpoint, else the plan's.
fn config_of(snapshot: &WeightSnapshot, plan: &ExperimentPlan) -> ModelConfig {
    ModelConfig::from_meta(snapshot).unwrap_or_else(|_| plan.config.clone())
}

fn task_of_vector(plan: &ExperimentPlan, v: &TaskVector) -> Result<TaskSpec> {
    find_task(plan, v.task_id())
}

fn single_accuracy(head: &WeightSnapshot, task: &str) -> Result<f64> {
    head.meta_value(meta_keys::ACCURACY)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::InvalidParameter(format!("head for {task} records no accuracy")))
}

fn write_log(path: &Path, log: &[train::LossRecord]) -> Result<()> {
    write_loss_csv(path, log)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn save(snapshot: &WeightSnapshot, path: &Path) -> Result<()> {
    save_tvf(snapshot, path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run(cli: &Cli) -> Result<()> {
    let plan = plan_from(cli)?;
    let rng = SeededRng::new(plan.seed);
    match &cli.command {
        Command::Pretrain {
            scheme,
            iterations,
            lr,
            log,
        } => {
            let scheme: PretrainScheme = scheme.parse()?;
            let mut optim = plan.pretrain.clone();
            if let Some(n) = iterations {
                optim.iterations = *n;
                optim.warmup_steps = n / 10;
            }
            if let Some(lr) = lr {
                optim.lr = *lr;
            }
            let (corpus, labels) = experiments::pretraining_data(&plan)?;
            let outcome = pretrain(&plan.config, scheme, &optim, &corpus, labels, &rng)?;
            let out = out_or(cli, "pretrained.tvf");
            save(&outcome.snapshot, &out)?;
            write_log(&log.clone().unwrap_or_else(|| sibling(&out, ".loss.csv")), &outcome.log)?;
            println!(
                "{scheme}: objective {} -> {}, encoder hash {}",
                outcome.initial_objective,
                outcome.final_objective,
                outcome.snapshot.encoder_hash()
            );
        }
        Command::Probe { pre, task, lr } => {
            let pre = load_tvf(pre)?;
            let task = find_task(&plan, &task.task)?;
            let optim = plan.probe.with_lr(lr.unwrap_or(plan.probe.lr));
            let outcome = linear_probe(&config_of(&pre, &plan), &pre, &task, &optim, &rng)?;
            let out = out_or(cli, &format!("probe.{}.tvf", task.task_id));
            save(&outcome.head, &out)?;
            write_log(&sibling(&out, ".loss.csv"), &outcome.log)?;
            println!("{} probe accuracy {}", task.task_id, outcome.accuracy);
        }
        Command::Finetune {
            pre,
            head,
            regime,
            task,
            lr,
            head_out,
        } => {
            let pre = load_tvf(pre)?;
            let regime: FinetuneRegime = regime.parse()?;
            let task = find_task(&plan, &task.task)?;
            let config = config_of(&pre, &plan);
            let head = match (head, regime) {
                (Some(p), _) => load_tvf(p)?,
                (None, FinetuneRegime::Full) => random_head(&config, &task, &rng)?,
                (None, FinetuneRegime::Aligned) => {
                    return Err(Error::InvalidParameter("aligned fine-tuning needs --head (a probed head)".into()))
                }
            };
            let optim = plan.finetune.with_lr(lr.unwrap_or(plan.finetune.lr));
            let outcome = finetune(&config, &pre, &head, &task, regime, &optim, &rng)?;
            let out = out_or(cli, &format!("{regime}.{}.encoder.tvf", task.task_id));
            save(&outcome.encoder, &out)?;
            save(&outcome.head, &head_out.clone().unwrap_or_else(|| sibling(&out, ".head.tvf")))?;
            write_log(&sibling(&out, ".loss.csv"), &outcome.log)?;
            println!("{} {regime} accuracy {}", task.task_id, outcome.accuracy);
        }
        Command::Extract { ft, pre, force } => {
            let v = extract_task_vector(&load_tvf(ft)?, &load_tvf(pre)?, *force)?;
            save(&v.to_snapshot()?, &out_or(cli, "vector.tvf"))?;
            println!("{} |τ| = {}", v.task_id(), v.l2_norm());
        }
        Command::Merge { pre, vectors, lambda } => {
            let pre = load_tvf(pre)?;
            let mut loaded = Vec::new();
            for spec in vectors {
                let (path, l) = match spec.rsplit_once(':') {
                    Some((p, l)) if l.parse::<f64>().is_ok() => (p, l.parse().unwrap()),
                    _ => (spec.as_str(), *lambda),
                };
                loaded.push((TaskVector::from_snapshot(&load_tvf(path)?)?, l));
            }
            let weighted: Vec<(&TaskVector, f64)> = loaded.iter().map(|(v, l)| (v, *l)).collect();
            let merged = apply_task_vectors(&pre, &weighted)?;
            save(&merged, &out_or(cli, "merged.tvf"))?;
        }
        Command::Search {
            pre,
            vectors,
            heads,
            grid,
            grid_default: _,
        } => {
            if vectors.len() != heads.len() {
                return Err(Error::InvalidParameter("pass one --head per --vector".into()));
            }
            let pre = load_tvf(pre)?;
            let config = config_of(&pre, &plan);
            let grid = match grid {
                Some(g) => CoefficientGrid::parse(g)?,
                None => CoefficientGrid::default(),
            };
            let vs = vectors
                .iter()
                .map(|p| TaskVector::from_snapshot(&load_tvf(p)?))
                .collect::<Result<Vec<_>>>()?;
            let mut head_map = BTreeMap::new();
            let mut single = BTreeMap::new();
            let mut tasks = Vec::new();
            for (v, h) in vs.iter().zip(heads) {
                let head = load_tvf(h)?;
                single.insert(v.task_id().to_string(), single_accuracy(&head, v.task_id())?);
                head_map.insert(v.task_id().to_string(), head);
                tasks.push(task_of_vector(&plan, v)?);
            }
            let refs: Vec<&TaskVector> = vs.iter().collect();
            let report = line_search_lambda(&config, &pre, &refs, &head_map, &tasks, &single, &grid)?;
            for p in &report.curve {
                println!("{} {} {}", p.lambda, p.normalized_avg, p.absolute_avg);
            }
            let out = out_or(cli, "search.csv");
            report.write_csv(&out)?;
            eprintln!("λ* = {} (normalized {}), report {}", report.lambda(), report.normalized_avg(), out.display());
        }
        Command::Eval { encoder, head, task } => {
            let encoder = load_tvf(encoder)?;
            let task = find_task(&plan, &task.task)?;
            let eval = sample_task(&task, Split::Eval, task.eval_count)?;
            let acc = train::accuracy(&config_of(&encoder, &plan), &encoder, &load_tvf(head)?, &eval)?;
            println!("{}", acc);
        }
        Command::WdGrid {
            pre,
            vectors,
            heads,
            range,
            resolution,
            samples,
        } => {
            let pre = load_tvf(pre)?;
            let config = config_of(&pre, &plan);
            let mut spec = GridSpec {
                seed: plan.seed,
                ..plan.xi.clone()
            };
            if let Some(r) = range {
                let (lo, hi) = r
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidParameter(format!("--range expects lo:hi, got {r:?}")))?;
                spec.lambda_min = lo.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad range {r:?}")))?;
                spec.lambda_max = hi.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad range {r:?}")))?;
            }
            if let Some(r) = resolution {
                spec.resolution = *r;
            }
            if let Some(s) = samples {
                spec.samples_per_task = *s;
            }
            let v = [
                TaskVector::from_snapshot(&load_tvf(&vectors[0])?)?,
                TaskVector::from_snapshot(&load_tvf(&vectors[1])?)?,
            ];
            let h = [load_tvf(&heads[0])?, load_tvf(&heads[1])?];
            let t = [task_of_vector(&plan, &v[0])?, task_of_vector(&plan, &v[1])?];
            let grid = disentangle::grid(&config, &pre, [&v[0], &v[1]], [&h[0], &h[1]], [&t[0], &t[1]], &spec)?;
            let prefix = out_or(cli, "xi");
            let with = |suffix: &str| {
                let mut s = prefix.clone().into_os_string();
                s.push(suffix);
                PathBuf::from(s)
            };
            render_heatmap(&grid, with(".csv"), with(".pgm"), Some(&with("-box.csv")))?;
            for (name, b) in [("[0,1]^2", (0.0, 1.0)), ("[-1,1]^2", (-1.0, 1.0))] {
                if let Ok(m) = region_mean(&grid, b, b) {
                    println!("mean xi over {name}: {m}");
                }
            }
        }
        Command::Zshead { embeddings, no_normalize } => {
            let data = load_dataset_file(embeddings)?;
            let grouped = group_by_class(&data.train, data.num_classes);
            let w = build_zeroshot_head(&grouped, data.input_dim, !no_normalize)?;
            save(&zeroshot_head_snapshot(&w)?, &out_or(cli, "zeroshot-head.tvf"))?;
        }
        Command::SweepLambda => {
            let plan = with_out_dir(plan, cli);
            for c in experiments::run_lambda_sweep(&plan)? {
                println!("{}-{}: λ* = {}, probing {}", c.scheme.name(), c.regime.name(), c.selected, c.probe_normalized);
                for (l, n, a) in &c.points {
                    println!("  {l} {n} {a}");
                }
            }
        }
        Command::SweepTasks => {
            let plan = with_out_dir(plan, cli);
            for s in experiments::run_task_count_sweep(&plan)? {
                println!("{}-{}:", s.scheme.name(), s.regime.name());
                for n in &s.per_n {
                    println!("  n={} mean {} min {} max {} ({} combinations)", n.n, n.mean, n.min, n.max, n.combinations);
                }
            }
        }
        Command::RunPlan => {
            let plan = with_out_dir(plan, cli);
            experiments::run_plan(&plan)?;
            let summary = plan.out_dir.join("reports").join("summary.csv");
            print!("{}", std::fs::read_to_string(&summary).map_err(|e| Error::Io { path: summary, source: e })?);
        }
        Command::VerifyFixtures { dir } => {
            let report = fixtures::verify_fixtures(dir.clone().unwrap_or_else(|| PathBuf::from("fixtures")))?;
            print!("{report}");
            if !report.passed() {
                return Err(Error::InvalidParameter(format!(
                    "{} fixture(s) failed verification",
                    report.failures().count()
                )));
            }
        }
        Command::MakeFixture { name } => {
            let file = fixtures::FIXTURES
                .iter()
                .find(|(n, _, _)| n == name)
                .map(|(_, f, _)| *f)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown fixture {name:?}")))?;
            let out = out_or(cli, file);
            let bytes = fixtures::generate(name)?;
            std::fs::write(&out, bytes).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        }
    }
    Ok(())
}

fn with_out_dir(mut plan: ExperimentPlan, cli: &Cli) -> ExperimentPlan {
    if let Some(out) = &cli.out {
        plan.out_dir = out.clone();
    }
    plan
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if std::env::args_os().len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        eprintln!("{}", cmd.render_usage());
        eprintln!("Run `taskarith --help` for the list of subcommands.");
        return ExitCode::from(1);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
