//! `lsdm`: data generation, training, evaluation, verification and a
//! client for the synthesis service.
//!
//! `synth` and `edit` talk to a running service given by `--server`; without
//! it they start one in-process on a loopback port for the given checkpoint.
//! Log verbosity comes from `LSDM_LOG` (`error` to `trace`, default `warn`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use lsdm_client::Client;
use lsdm_core::api::GenerationResponse;
use lsdm_core::config::load_train_config;
use lsdm_core::edit::{evaluate_editing, EditOp};
use lsdm_core::gpnet::GpNet;
use lsdm_core::synth::{gen_dataset, load_dataset, save_dataset, Interaction, SynthConfig, Vocabulary};
use lsdm_core::theory::run_verification;
use lsdm_core::train::{
    ablation_csv, ablation_markdown, evaluate, prepare, run_ablation_matrix, save_model, train, TrainConfig,
};
use lsdm_server::AppState;

#[derive(Parser)]
#[command(name = "lsdm", version, about = "Language-driven scene synthesis with guiding points")]
struct Cli {
    /// Random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (JSON lines).
    GenData {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        points: usize,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Held-out set for per-epoch guiding-point MSE.
        #[arg(long)]
        heldout: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path (defaults to `--out`, else stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also score the three editing operations on the first 10 items.
        #[arg(long)]
        editing: bool,
    },
    /// Synthesize an object for a scene and a prompt.
    Synth {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// A dataset file or a single interaction as JSON.
        #[arg(long)]
        scene: PathBuf,
        /// Item of a dataset file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        prompt: String,
        /// Base URL of a running service.
        #[arg(long)]
        server: Option<String>,
    },
    /// Edit an object of a scene.
    Edit {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// replace, alter_shape or displace.
        #[arg(long)]
        op: EditOp,
        #[arg(long)]
        prompt: String,
        /// `target` or `obj{k}`.
        #[arg(long, default_value = "target")]
        target_id: String,
        #[arg(long)]
        server: Option<String>,
    },
    /// Run the theory checks.
    Verify,
    /// Train and evaluate the ablation matrix.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Extra point counts for the full model.
        #[arg(long, value_delimiter = ',')]
        points: Vec<usize>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = std::env::var("LSDM_LOG")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<Interaction>, Failure> {
    load_dataset(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// A dataset file (item `index`) or a single interaction in JSON.
fn read_scene(path: &Path, index: usize) -> Result<Interaction, Failure> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Ok(item) = serde_json::from_str::<Interaction>(&text) {
        return Ok(item);
    }
    let data = read_dataset(path)?;
    let len = data.len();
    data.into_iter()
        .nth(index)
        .ok_or_else(|| format!("{} has {len} interactions, no index {index}", path.display()).into())
}

fn train_config(cli: &Cli) -> Result<TrainConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => load_train_config(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<PathBuf, Failure> {
    cli.out.clone().ok_or_else(|| "--out is required".into())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::GenData { count, points } => {
            let out = require_out(&cli)?;
            let cfg = SynthConfig {
                points: *points,
                ..SynthConfig::default()
            };
            let data = gen_dataset(cli.seed.unwrap_or(0), *count, &cfg)?;
            save_dataset(&out, &data)?;
            eprintln!("wrote {} interactions to {}", data.len(), out.display());
        }
        Command::Train { data, heldout } => {
            let out = require_out(&cli)?;
            let cfg = train_config(&cli)?;
            let train_ex = prepare(&read_dataset(data)?, cfg.hyper.points)?;
            let held = match heldout {
                Some(p) => Some(prepare(&read_dataset(p)?, cfg.hyper.points)?),
                None => None,
            };
            let (mut model, log) = train(&train_ex, &cfg, Vocabulary::grammar(), held.as_deref())?;
            let hash = save_model(&mut model, &out)?;
            fs::write(out.join("train_log.jsonl"), log.to_jsonl())?;
            println!("{hash}");
        }
        Command::Eval {
            checkpoint,
            data,
            report,
            editing,
        } => {
            let model = load_model(checkpoint)?;
            let items = read_dataset(data)?;
            let examples = prepare(&items, model.hyper().points)?;
            let seed = cli.seed.unwrap_or(0);
            let eval = evaluate(&model, &examples, seed)?;
            let mut json = serde_json::json!({ "synthesis": eval });
            if *editing {
                let rows = evaluate_editing(&model, &items[..items.len().min(10)], seed)?;
                let map: serde_json::Map<String, serde_json::Value> = rows
                    .into_iter()
                    .map(|(op, r)| (op.to_string(), serde_json::to_value(r).expect("serializable")))
                    .collect();
                json["editing"] = map.into();
            }
            let target = report.as_deref().or(cli.out.as_deref());
            write_output(target, &serde_json::to_string_pretty(&json)?)?;
        }
        Command::Synth {
            checkpoint,
            scene,
            index,
            prompt,
            server,
        } => {
            let item = read_scene(scene, *index)?;
            let resp = with_service(checkpoint.as_deref(), server.as_deref(), |client| async move {
                let id = client.create_session(&item).await?;
                Ok(client.synthesize(&id, prompt, cli.seed).await?)
            })?;
            write_output(cli.out.as_deref(), &serde_json::to_string_pretty(&resp)?)?;
        }
        Command::Edit {
            checkpoint,
            scene,
            index,
            op,
            prompt,
            target_id,
            server,
        } => {
            let item = read_scene(scene, *index)?;
            let resp = with_service(checkpoint.as_deref(), server.as_deref(), |client| async move {
                let id = client.create_session(&item).await?;
                Ok(client.edit(&id, *op, prompt, target_id, cli.seed).await?)
            })?;
            write_output(cli.out.as_deref(), &serde_json::to_string_pretty(&resp)?)?;
        }
        Command::Verify => {
            let outcomes = run_verification(cli.seed.unwrap_or(0));
            let mut failed = false;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed |= !o.passed;
            }
            if failed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Ablate {
            data,
            test,
            seeds,
            points,
        } => {
            let out = require_out(&cli)?;
            let cfg = train_config(&cli)?;
            let rows = run_ablation_matrix(
                &read_dataset(data)?,
                &read_dataset(test)?,
                &cfg,
                points,
                seeds,
                &Vocabulary::grammar(),
            )?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("ablation.csv"), ablation_csv(&rows))?;
            fs::write(out.join("ablation.md"), ablation_markdown(&rows))?;
            fs::write(out.join("ablation_rows.json"), serde_json::to_string_pretty(&rows)?)?;
            print!("{}", ablation_markdown(&rows));
        }
        Command::Serve { host, port, checkpoint } => {
            let state = Arc::new(AppState::from_checkpoint(checkpoint)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), *port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                lsdm_server::serve(listener, state).await
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_model(dir: &Path) -> Result<GpNet, Failure> {
    if !dir.exists() {
        return Err(format!("checkpoint not found: {}", dir.display()).into());
    }
    GpNet::load(dir).map_err(|e| format!("loading checkpoint {}: {e}", dir.display()).into())
}

/// Runs `f` against `server`, or against an in-process service for `checkpoint`.
fn with_service<F, Fut>(checkpoint: Option<&Path>, server: Option<&str>, f: F) -> Result<GenerationResponse, Failure>
where
    F: FnOnce(Client) -> Fut,
    Fut: std::future::Future<Output = Result<GenerationResponse, Failure>>,
{
    let rt = tokio::runtime::Runtime::new()?;
    if let Some(url) = server {
        return rt.block_on(f(Client::new(url)));
    }
    let dir = checkpoint.ok_or("either --checkpoint or --server is required")?;
    if !dir.exists() {
        return Err(format!("checkpoint not found: {}", dir.display()).into());
    }
    let state = Arc::new(AppState::from_checkpoint(dir)?);
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
        let addr = listener.local_addr()?;
        let service = tokio::spawn(lsdm_server::serve(listener, state));
        let result = f(Client::new(format!("http://{addr}"))).await;
        service.abort();
        result
    })
}
