//! `riskbench`: drive the workbench from the shell.
//!
//! Every command prints one JSON document to stdout. Failures print an
//! error document `{code, message, detail}` and exit with a nonzero code.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riskbench_core::learner::SolverMode;
use riskbench_core::source::{generate_synthetic, write_pool_csv, CsvSource, DataSource, EntityPool};
use riskbench_core::{workflow, Error, ErrorDocument, ErrorKind, FeatureRegistry, FitConfig, FitControl, ProjectConfig, ProjectId, ProjectStore, Result, RiskModel};
use serde::Serialize;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid command line
  3  not found
  4  conflict (name already taken)
  5  validation failed
  6  project busy (locked by another writer)
  7  exact search infeasible at this scale
  8  cancelled";

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Internal => 1,
        ErrorKind::NotFound => 3,
        ErrorKind::Conflict => 4,
        ErrorKind::Validation => 5,
        ErrorKind::Busy => 6,
        ErrorKind::InfeasibleScale => 7,
        ErrorKind::Cancelled => 8,
    }
}

#[derive(Parser)]
#[command(name = "riskbench", version, about = "Build, fit and validate sparse integer risk scores", after_help = EXIT_CODES)]
struct Cli {
    /// Root directory of the project store.
    #[arg(long, env = "RISKBENCH_STORE", default_value = "store", global = true)]
    store: PathBuf,
    /// Feature registry (TOML).
    #[arg(long, env = "RISKBENCH_REGISTRY", default_value = "config/features.toml", global = true)]
    registry: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Registered features.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Create and inspect projects.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Build and list datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Fit and inspect models.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Evaluate a model on a dataset.
    #[command(subcommand)]
    Validate(ValidateCmd),
    /// Synthetic entity pools.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// List registered features.
    List,
}

#[derive(Subcommand)]
enum ProjectCmd {
    /// Create a project from a goal and input features.
    Create {
        #[arg(long)]
        goal: String,
        #[arg(long)]
        name: String,
        /// Input feature ids, comma separated, in column order.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<String>,
    },
    /// List projects, optionally for one goal.
    List {
        #[arg(long)]
        goal: Option<String>,
    },
    /// Show one project (`goal/name`).
    Show { project: ProjectId },
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Entity table (CSV with an `entity_id` column).
    #[arg(long, env = "RISKBENCH_SOURCE", conflicts_with = "synth_seed")]
    source: Option<PathBuf>,
    /// Seed of a synthetic pool used instead of an entity table.
    #[arg(long, env = "RISKBENCH_SYNTH_SEED")]
    synth_seed: Option<u64>,
    /// Size of the synthetic pool.
    #[arg(long, env = "RISKBENCH_SYNTH_SIZE", default_value_t = 1000)]
    synth_size: usize,
}

impl SourceArgs {
    fn open(&self, registry: &FeatureRegistry) -> Result<Arc<dyn DataSource>> {
        match (&self.source, self.synth_seed) {
            (Some(path), _) => Ok(Arc::new(CsvSource::open(path)?)),
            (None, Some(seed)) => Ok(Arc::new(generate_synthetic(seed, self.synth_size, registry, None)?)),
            (None, None) => Err(Error::validation("give either --source or --synth-seed")),
        }
    }
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Build a dataset from entity records.
    Create {
        #[arg(long)]
        project: ProjectId,
        #[arg(long)]
        name: String,
        #[command(flatten)]
        source: SourceArgs,
        /// Restrict the dataset to these entities, in this order.
        #[arg(long, value_delimiter = ',')]
        entity_ids: Option<Vec<String>>,
    },
    /// List a project's datasets.
    List {
        #[arg(long)]
        project: ProjectId,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Exact,
    Heuristic,
    Auto,
}

impl From<SolverArg> for SolverMode {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Exact => SolverMode::Exact,
            SolverArg::Heuristic => SolverMode::Heuristic,
            SolverArg::Auto => SolverMode::Auto,
        }
    }
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Fit a model; progress lines go to stderr.
    Fit {
        #[arg(long)]
        project: ProjectId,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        name: String,
        /// Fit configuration (JSON); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        model_size: Option<usize>,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List a project's models.
    List {
        #[arg(long)]
        project: ProjectId,
    },
    /// Model document and scoring table.
    Show {
        #[arg(long)]
        project: ProjectId,
        #[arg(long)]
        name: String,
    },
}

#[derive(Subcommand)]
enum ValidateCmd {
    /// Threshold report for a model on a dataset.
    Run {
        #[arg(long)]
        project: ProjectId,
        #[arg(long)]
        model: String,
        #[arg(long)]
        dataset: String,
        /// Project holding the dataset, when not `--project`.
        #[arg(long)]
        dataset_project: Option<ProjectId>,
        /// Thresholds in (0, 1), comma separated; default 0.05..0.95.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Write a synthetic entity table as CSV.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        /// Model whose risk draws the goal label.
        #[arg(long)]
        planted: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "RISKBENCH_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[command(flatten)]
    source: SourceArgs,
}

fn print<T: Serialize>(doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

fn open_store(cli: &Cli) -> Result<ProjectStore> {
    let registry = FeatureRegistry::load(&cli.registry)?;
    ProjectStore::open(&cli.store, Arc::new(registry))
}

fn fit_config(config: Option<&Path>) -> Result<FitConfig> {
    match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read fit config: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Error::validation(format!("fit config: {e}")))
        }
        None => Ok(FitConfig::default()),
    }
}

/// Runs the fit on a worker thread and reports progress on stderr until it
/// finishes.
fn fit_with_progress(store: &ProjectStore, project: &ProjectId, dataset: &str, name: &str, cfg: &FitConfig) -> Result<RiskModel> {
    let control = FitControl::new();
    std::thread::scope(|s| {
        let worker = s.spawn(|| workflow::fit_and_save(store, project, dataset, name, cfg, &control));
        let mut stderr = std::io::stderr();
        while !worker.is_finished() {
            std::thread::sleep(Duration::from_millis(250));
            let p = control.progress();
            let incumbent = p.incumbent_objective.map_or("-".to_owned(), |v| format!("{v:.6}"));
            let _ = writeln!(stderr, "progress candidates={} incumbent={incumbent}", p.candidates_evaluated);
        }
        worker.join().expect("fit thread panicked").map(|(model, _)| model)
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Features(FeaturesCmd::List) => print(&FeatureRegistry::load(&cli.registry)?.list()),
        Command::Project(cmd) => {
            let store = open_store(&cli)?;
            match cmd {
                ProjectCmd::Create { goal, name, inputs } => {
                    let config = ProjectConfig {
                        name: name.clone(),
                        goal: goal.clone(),
                        inputs: inputs.clone(),
                    };
                    print(&store.create_project(&config)?)
                }
                ProjectCmd::List { goal } => print(&store.list_projects(goal.as_deref())?),
                ProjectCmd::Show { project } => {
                    print(&riskbench_core::store::ProjectSummary::from(store.project(project)?))
                }
            }
        }
        Command::Dataset(cmd) => {
            let store = open_store(&cli)?;
            match cmd {
                DatasetCmd::Create {
                    project,
                    name,
                    source,
                    entity_ids,
                } => {
                    let source = source.open(store.registry())?;
                    print(&workflow::create_dataset(&store, source.as_ref(), project, name, entity_ids.as_deref())?)
                }
                DatasetCmd::List { project } => print(&store.list_datasets(project)?),
            }
        }
        Command::Model(cmd) => {
            let store = open_store(&cli)?;
            match cmd {
                ModelCmd::Fit {
                    project,
                    dataset,
                    name,
                    config,
                    time_limit,
                    model_size,
                    solver,
                    seed,
                } => {
                    let mut cfg = fit_config(config.as_deref())?;
                    if let Some(t) = time_limit {
                        cfg.time_limit_seconds = *t;
                    }
                    if let Some(k) = model_size {
                        cfg.max_model_size = *k;
                    }
                    if let Some(s) = solver {
                        cfg.solver_mode = (*s).into();
                    }
                    if let Some(s) = seed {
                        cfg.random_seed = *s;
                    }
                    print(&fit_with_progress(&store, project, dataset, name, &cfg)?)
                }
                ModelCmd::List { project } => print(&store.list_models(project)?),
                ModelCmd::Show { project, name } => print(&workflow::model_view(&store, project, name)?),
            }
        }
        Command::Validate(ValidateCmd::Run {
            project,
            model,
            dataset,
            dataset_project,
            thresholds,
        }) => {
            let store = open_store(&cli)?;
            print(&workflow::validate_stored(
                &store,
                project,
                model,
                dataset_project.as_ref(),
                dataset,
                thresholds.as_deref(),
            )?)
        }
        Command::Synth(SynthCmd::Generate { seed, n, planted, out }) => {
            let registry = FeatureRegistry::load(&cli.registry)?;
            let planted = planted.as_ref().map(RiskModel::read).transpose()?;
            let pool: EntityPool = generate_synthetic(*seed, *n, &registry, planted.as_ref())?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_pool_csv(&pool, &registry, &mut buf)?;
                    std::fs::write(path, buf)?;
                    print(&serde_json::json!({ "entities": pool.len() }))
                }
                None => write_pool_csv(&pool, &registry, std::io::stdout().lock()),
            }
        }
        Command::Serve(args) => {
            let store = open_store(&cli)?;
            let source = args.source.open(store.registry())?;
            let state = riskbench_server::AppState::new(store, source);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(args.listen).await?;
                print(&serde_json::json!({ "listening": listener.local_addr()?.to_string() }))?;
                riskbench_server::serve(listener, state).await?;
                Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.kind() == ErrorKind::Internal {
                eprintln!("error: {e}");
            }
            let _ = print(&ErrorDocument::from(&e));
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
