//! `vlaudit` subcommands. Each command body is a plain function so tests can
//! call it without spawning a process.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tokio::net::TcpListener;
use vlaudit_core::eval::{
    export_snapshot, import_snapshot, make_tasks, score_coherency, AnswerSheet, CoherencyScore,
    TaskBundle,
};
use vlaudit_core::geometry::{self, ClassHierarchy, DEFAULT_IOU_THRESHOLD};
use vlaudit_core::store::load_embeddings;

use crate::{AppState, Config};

#[derive(Debug, Parser)]
#[command(name = "vlaudit", version, about = "Slice discovery server and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "VLAUDIT_CONFIG")]
        config: PathBuf,
    },
    /// Validate a VLSL corpus and its manifest.
    IngestCheck(CorpusArgs),
    /// Fetch a session snapshot from a running server as canonical JSON.
    Export {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long)]
        session: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate coherency and representativeness tasks from a snapshot.
    MakeTasks {
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an answer sheet against a task bundle.
    Score {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        answers: PathBuf,
    },
    /// Turn detection boxes into square crop directives.
    PrepCrops {
        /// BoxRecord JSONL.
        #[arg(long)]
        boxes: PathBuf,
        /// JSON object mapping class id to parent class id.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        /// Padding colour as `r,g,b`.
        #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
        pad_color: [u8; 3],
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou: f64,
        /// CropDirective JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub vlsl: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [r, g, b] = parts.as_slice() else {
        return Err(format!("expected r,g,b, got {s:?}"));
    };
    let channel = |c: &str| {
        c.parse::<u8>()
            .map_err(|e| format!("bad channel {c:?}: {e}"))
    };
    Ok([channel(r)?, channel(g)?, channel(b)?])
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config } => serve(&config).await,
        Command::IngestCheck(corpus) => {
            let report = ingest_check(&corpus.vlsl, &corpus.manifest)?;
            println!("{report}");
            Ok(())
        }
        Command::Export {
            server,
            session,
            out,
        } => {
            let json = export(&server, &session).await?;
            emit(out.as_deref(), &json)
        }
        Command::MakeTasks {
            snapshot,
            corpus,
            seed,
            out,
        } => {
            let bundle = tasks(&snapshot, &corpus.vlsl, &corpus.manifest, seed)?;
            emit(out.as_deref(), &pretty(&bundle)?)
        }
        Command::Score { tasks, answers } => {
            let score = score(&tasks, &answers)?;
            println!("{}", pretty(&score)?.trim_end());
            Ok(())
        }
        Command::PrepCrops {
            boxes,
            hierarchy,
            pad_color,
            iou,
            out,
        } => {
            let count = prep_crops(&boxes, hierarchy.as_deref(), pad_color, iou, out.as_deref())?;
            eprintln!("wrote {count} crop directives");
            Ok(())
        }
    }
}

async fn serve(config_path: &Path) -> anyhow::Result<()> {
    let config = Config::load(config_path)?;
    let state = Arc::new(AppState::from_config(&config)?);
    let listener = TcpListener::bind(config.bind)
        .await
        .with_context(|| format!("binding {}", config.bind))?;
    tracing::info!(
        addr = %listener.local_addr()?,
        images = state.store.matrix.len(),
        dim = state.store.matrix.dim(),
        "listening"
    );
    crate::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

pub fn ingest_check(vlsl: &Path, manifest: &Path) -> anyhow::Result<String> {
    let corpus = load_embeddings(vlsl, manifest)?;
    Ok(format!(
        "ok: {} images, dim {}",
        corpus.matrix.len(),
        corpus.matrix.dim()
    ))
}

/// Downloads a snapshot, validates it, and re-serializes it canonically.
pub async fn export(server: &str, session: &str) -> anyhow::Result<String> {
    let url = format!(
        "{}/sessions/{session}/snapshot",
        server.trim_end_matches('/')
    );
    let response = reqwest::get(&url)
        .await
        .with_context(|| format!("GET {url}"))?;
    let status = response.status();
    let body = response.text().await?;
    if !status.is_success() {
        bail!("GET {url} returned {status}: {body}");
    }
    Ok(export_snapshot(&import_snapshot(&body)?)?)
}

pub fn tasks(
    snapshot: &Path,
    vlsl: &Path,
    manifest: &Path,
    seed: u64,
) -> anyhow::Result<TaskBundle> {
    let text = std::fs::read_to_string(snapshot)
        .with_context(|| format!("reading {}", snapshot.display()))?;
    let snapshot = import_snapshot(&text)?;
    let corpus = load_embeddings(vlsl, manifest)?;
    Ok(make_tasks(&snapshot, &corpus.matrix, seed)?)
}

pub fn score(tasks: &Path, answers: &Path) -> anyhow::Result<CoherencyScore> {
    let bundle: TaskBundle = read_json(tasks)?;
    let sheet: AnswerSheet = read_json(answers)?;
    Ok(score_coherency(&bundle.coherency, &sheet.selections)?)
}

pub fn prep_crops(
    boxes: &Path,
    hierarchy: Option<&Path>,
    pad_color: [u8; 3],
    iou: f64,
    out: Option<&Path>,
) -> anyhow::Result<usize> {
    let records = geometry::read_boxes(BufReader::new(
        File::open(boxes).with_context(|| format!("opening {}", boxes.display()))?,
    ))?;
    let hierarchy: ClassHierarchy = match hierarchy {
        Some(path) => read_json(path)?,
        None => ClassHierarchy::new(),
    };
    let directives = geometry::prepare_crops(&records, &hierarchy, iou, pad_color)?;
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            geometry::write_directives(&mut w, &directives)?;
            w.flush()?;
        }
        None => geometry::write_directives(std::io::stdout().lock(), &directives)?,
    }
    Ok(directives.len())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}
