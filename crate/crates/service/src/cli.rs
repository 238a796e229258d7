use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fsdiag_core::ensemble::argmaxes;
use fsdiag_core::eval::{run_eval, EvalProtocol};
use fsdiag_core::feature_store::{load_manifest, Dataset};
use fsdiag_core::learner_recommender::{recommend_learners, LearnerRecommendConfig};
use fsdiag_core::sampling::DEFAULT_SAMPLING_RATIO;
use fsdiag_core::session::{read_edit_log, Session};
use fsdiag_core::shot_recommender::{recommend_shots, ShotRecommendConfig};
use fsdiag_core::solver::SolverConfig;
use fsdiag_core::synthetic::{generate, SyntheticConfig};
use fsdiag_core::{Error, Result};

pub const DEFAULT_PORT: u16 = 8017;

#[derive(Debug, Parser)]
#[command(name = "fsdiag", version, about = "Diagnose and tune ensembles of few-shot learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a manifest and every file it references.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Recommend a learner subset.
    RecommendLearners(RecommendArgs),
    /// Recommend a shot set for the selected learners.
    RecommendShots {
        #[command(flatten)]
        common: RecommendArgs,
        /// Number of shots wanted; defaults to the current shot count.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Per-sample ensemble predictions.
    Predict(SessionArgs),
    /// Four-arm evaluation against ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SAMPLING_RATIO)]
        ratio: f64,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Solver configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of static UI assets served next to the API.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Write a synthetic learner pool with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated learner ids to select; all learners by default.
    #[arg(long, value_delimiter = ',')]
    pub learners: Option<Vec<String>>,
    /// Edit log (JSON lines) replayed after the selection.
    #[arg(long)]
    pub edits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, default_value_t = DEFAULT_SAMPLING_RATIO)]
    pub ratio: f64,
    /// Solver configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn read_solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    let Some(path) = path else {
        return Ok(SolverConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config: SolverConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn open_session(args: &SessionArgs) -> Result<Session> {
    let mut session = Session::from_manifest(&args.manifest, args.seed)?;
    let indices = match &args.learners {
        None => (0..session.learners().len()).collect::<Vec<_>>(),
        Some(ids) => ids
            .iter()
            .map(|id| session.learner_index(id))
            .collect::<Result<Vec<_>>>()?,
    };
    session.select_only(&indices)?;
    if let Some(path) = &args.edits {
        session.apply_edits(&read_edit_log(path)?)?;
    }
    Ok(session)
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Runs every subcommand except `serve` and returns its JSON output.
pub fn execute(command: &Command) -> Result<Value> {
    match command {
        Command::Validate { manifest } => {
            let m = load_manifest(manifest)?;
            let data = Dataset::load(&m)?;
            Ok(json!({
                "num_samples": data.num_samples,
                "classes": data.class_names,
                "learners": data.learner_ids,
                "shots": data.initial_shots.len(),
                "ground_truth": data.has_ground_truth(),
                "label_embeddings": data.label_embeddings.is_some(),
            }))
        }
        Command::RecommendLearners(args) => {
            let session = open_session(&args.session)?;
            let config = LearnerRecommendConfig {
                solver: read_solver_config(args.config.as_deref())?,
                ratio: args.ratio,
                seed: Some(args.session.seed),
                ..Default::default()
            };
            Ok(to_json(&recommend_learners(&session, &config)?))
        }
        Command::RecommendShots { common, budget } => {
            let session = open_session(&common.session)?;
            let config = ShotRecommendConfig {
                solver: read_solver_config(common.config.as_deref())?,
                ratio: common.ratio,
                seed: Some(common.session.seed),
                budget: *budget,
            };
            Ok(to_json(&recommend_shots(&session, &config)?))
        }
        Command::Predict(args) => {
            let session = open_session(args)?;
            let table = session.predictions()?;
            let classes = argmaxes(&table.ensemble);
            let rows: Vec<Value> = classes
                .iter()
                .enumerate()
                .map(|(i, &c)| json!({ "sample": i, "class": c, "margin": table.ensemble_margins[i] }))
                .collect();
            Ok(json!({
                "state_hash": session.state_hash(),
                "accuracy": session.accuracy()?,
                "predictions": rows,
            }))
        }
        Command::Eval {
            manifest,
            seed,
            ratio,
            budget,
            trials,
            config,
        } => {
            let solver = read_solver_config(config.as_deref())?;
            let protocol = EvalProtocol {
                trials: *trials,
                seed: *seed,
                learners: LearnerRecommendConfig {
                    solver: solver.clone(),
                    ratio: *ratio,
                    ..Default::default()
                },
                shots: ShotRecommendConfig {
                    solver,
                    ratio: *ratio,
                    budget: *budget,
                    ..Default::default()
                },
            };
            Ok(to_json(&run_eval(manifest, &protocol)?))
        }
        Command::Synth { out, seed, samples } => {
            let mut config = SyntheticConfig::default();
            if let Some(n) = samples {
                config.num_samples = *n;
            }
            let pool = generate(&config, *seed)?;
            let manifest = pool.write_to_dir(out)?;
            Ok(json!({
                "manifest": manifest,
                "corrupted_learners": pool.corrupted.iter().map(|&k| pool.dataset.learner_ids[k].clone()).collect::<Vec<_>>(),
                "mislabeled_shots": pool.mislabeled,
            }))
        }
        Command::Serve { .. } => Err(Error::InvalidArgument("serve is not a batch command".into())),
    }
}

/// Binds and serves until interrupted.
pub async fn serve(host: &str, port: u16, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = crate::api::router(Arc::default(), static_dir);
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
