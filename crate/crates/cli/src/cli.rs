//! Argument parsing and the subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracemem_core::eval::{self, EvalOptions};
use tracemem_core::ingest::IngestOptions;
use tracemem_core::{Engine, EvidenceBundle, RetrievalConfig, SessionRecord};

use crate::server::{self, AppState, QueryResponse, API_VERSION};
use crate::settings::{EmbedderKind, LlmKind, Settings};

#[derive(Debug, Parser)]
#[command(name = "tracemem", version, about = "Graph-structured conversational memory")]
pub struct Cli {
    /// Settings file (TOML, or JSON with a .json extension).
    #[arg(long, global = true, env = "TRACEMEM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Memory graph snapshot used by ingest, query, stats and serve.
    #[arg(long, global = true, env = "TRACEMEM_STORE")]
    pub store: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,

    #[arg(long, global = true, value_enum, env = "TRACEMEM_LLM")]
    pub llm: Option<LlmKind>,
    #[arg(long, global = true, env = "TRACEMEM_LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,
    #[arg(long, global = true, env = "TRACEMEM_LLM_MODEL")]
    pub llm_model: Option<String>,
    #[arg(long, global = true, env = "TRACEMEM_LLM_API_KEY", hide_env_values = true)]
    pub llm_api_key: Option<String>,

    #[arg(long, global = true, value_enum, env = "TRACEMEM_EMBEDDER")]
    pub embedder: Option<EmbedderKind>,
    #[arg(long, global = true, env = "TRACEMEM_EMBED_DIM")]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true, env = "TRACEMEM_EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,
    #[arg(long, global = true, env = "TRACEMEM_EMBED_MODEL")]
    pub embed_model: Option<String>,
    #[arg(long, global = true, env = "TRACEMEM_EMBED_API_KEY", hide_env_values = true)]
    pub embed_api_key: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add sessions to the store. Accepts a session, an array of sessions,
    /// or an evaluation corpus.
    Ingest {
        file: PathBuf,
        /// Conversation to take from a corpus with more than one.
        #[arg(long)]
        conversation: Option<String>,
        /// Keep every turn of every segment.
        #[arg(long)]
        no_selective: bool,
    },
    /// Retrieve evidence for a question.
    Query {
        text: String,
        /// Also compose an answer from the evidence.
        #[arg(long)]
        generate: bool,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Score retrieval (and optionally answers) on a corpus.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        generate: bool,
        /// Ask the judge prompt for a verdict per answer; implies --generate.
        #[arg(long)]
        judge: bool,
        /// Write the JSON report here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
    /// Copy the store to or from a snapshot file.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
    /// Print graph statistics for the store.
    Stats,
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "TRACEMEM_BIND")]
        bind: Option<String>,
        #[arg(long, env = "TRACEMEM_API_KEY", hide_env_values = true)]
        api_key: Option<String>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum SnapshotAction {
    /// Write the store to PATH.
    Save { path: PathBuf },
    /// Replace the store with the graph in PATH.
    Load { path: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RetrievalArgs {
    /// Every edge weight 1 instead of query similarity.
    #[arg(long)]
    pub uniform_weights: bool,
    /// Run PageRank on the whole graph instead of the seed neighborhood.
    #[arg(long)]
    pub full_graph: bool,
    /// Use all segment turns rather than the retained ones.
    #[arg(long)]
    pub no_selective: bool,
    /// Leave relation triplets out of the evidence.
    #[arg(long)]
    pub no_triplets: bool,
    /// Seeds per node type.
    #[arg(long)]
    pub k: Option<usize>,
    /// Turns to return.
    #[arg(long)]
    pub top_m: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

impl RetrievalArgs {
    pub fn apply(&self, base: &RetrievalConfig) -> anyhow::Result<RetrievalConfig> {
        let mut c = base.clone();
        c.uniform_weights |= self.uniform_weights;
        c.full_graph |= self.full_graph;
        c.disable_selective_filter |= self.no_selective;
        c.disable_triplet_enrichment |= self.no_triplets;
        if let Some(v) = self.k {
            c.k_seed = v;
        }
        if let Some(v) = self.top_m {
            c.top_m_turns = v;
        }
        if let Some(v) = self.damping {
            c.damping = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            c.tolerance = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl Cli {
    /// File settings with environment and flag overrides applied.
    pub fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        if let Some(v) = &self.store {
            s.store = Some(v.clone());
        }
        if let Some(v) = self.llm {
            s.llm.kind = v;
        }
        if let Some(v) = &self.llm_endpoint {
            s.llm.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.llm_model {
            s.llm.model = Some(v.clone());
        }
        if let Some(v) = &self.llm_api_key {
            s.llm.api_key = Some(v.clone());
        }
        if let Some(v) = self.embedder {
            s.embedder.kind = v;
        }
        if let Some(v) = self.embed_dim {
            s.embedder.dim = v;
        }
        if let Some(v) = &self.embed_endpoint {
            s.embedder.endpoint = Some(v.clone());
        }
        if let Some(v) = &self.embed_model {
            s.embedder.model = Some(v.clone());
        }
        if let Some(v) = &self.embed_api_key {
            s.embedder.api_key = Some(v.clone());
        }
        Ok(s)
    }
}

/// Engine over the store file, or an empty graph when the file is absent.
fn open_engine(s: &Settings) -> anyhow::Result<Engine> {
    let engine = Engine::new(Arc::new(s.gateway()?), s.embedder()?);
    let path = s.store_path();
    if path.exists() {
        engine
            .load_snapshot(&path)
            .with_context(|| format!("loading store {}", path.display()))?;
    }
    Ok(engine)
}

/// Sessions from a session record, an array of them, or a corpus.
pub fn read_sessions(path: &Path, conversation: Option<&str>) -> anyhow::Result<Vec<SessionRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    let located = |e: serde_path_to_error::Error<serde_json::Error>| anyhow::anyhow!("{}: {}", e.path(), e.inner());
    match &value {
        serde_json::Value::Object(m) if m.contains_key("conversations") => {
            let corpus = eval::parse_corpus(&text)?;
            let conv = match conversation {
                Some(id) => corpus
                    .conversation(id)
                    .with_context(|| format!("no conversation {id:?} in the corpus"))?,
                None if corpus.conversations.len() == 1 => &corpus.conversations[0],
                None => bail!(
                    "the corpus has {} conversations; pick one with --conversation",
                    corpus.conversations.len()
                ),
            };
            Ok(conv.sessions.clone())
        }
        serde_json::Value::Array(_) => serde_path_to_error::deserialize(value).map_err(located),
        _ => Ok(vec![serde_path_to_error::deserialize(value).map_err(located)?]),
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn print_bundle(bundle: &EvidenceBundle) {
    if bundle.ranked_turns.is_empty() {
        println!("no turns retrieved");
    }
    for (i, r) in bundle.ranked_turns.iter().enumerate() {
        let t = &r.turn;
        println!(
            "{:>2}. [{}:{} | {} | {}] {}  ({:.4})",
            i + 1,
            t.session_id,
            t.turn_id,
            t.timestamp.as_deref().unwrap_or("-"),
            t.speaker,
            t.text,
            r.score
        );
    }
    if !bundle.triplets.is_empty() {
        println!("\nfacts:");
        for f in &bundle.triplets {
            println!("  {} / {} / {}", f.subject, f.relation, f.object);
        }
    }
    let s = &bundle.subgraph_stats;
    println!(
        "\nsubgraph: {} nodes, {} edges, {} iterations{}",
        s.nodes,
        s.edges,
        s.iterations,
        if s.converged { "" } else { " (not converged)" }
    );
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = cli.settings()?;
    match &cli.command {
        Command::Ingest {
            file,
            conversation,
            no_selective,
        } => {
            let sessions = read_sessions(file, conversation.as_deref())?;
            let engine = open_engine(&settings)?;
            let opts = IngestOptions {
                disable_selective_filter: *no_selective,
            };
            let mut reports = Vec::new();
            for s in &sessions {
                let r = engine
                    .ingest(s, opts)
                    .with_context(|| format!("ingesting session {}", s.session_id))?;
                if !cli.json {
                    println!(
                        "{}: {} turns, {} segments, {} retained, {} triplets{}",
                        r.session_id,
                        r.turn_count,
                        r.segment_count,
                        r.retained_count,
                        r.triplet_count,
                        if r.fallbacks.is_empty() {
                            String::new()
                        } else {
                            format!(", fallbacks: {}", r.fallbacks.join(", "))
                        }
                    );
                }
                reports.push(r);
            }
            // Nothing is written unless every session went in.
            let path = settings.store_path();
            engine
                .save_snapshot(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            if cli.json {
                print_json(&reports)?;
            } else {
                println!("store {} now holds {} turns", path.display(), engine.stats().turns);
            }
        }
        Command::Query {
            text,
            generate,
            retrieval,
        } => {
            let cfg = retrieval.apply(&settings.retrieval)?;
            let engine = open_engine(&settings)?;
            let outcome = engine.retrieve(text, &cfg)?;
            let answer = if *generate {
                Some(engine.answer(text, &outcome.bundle)?)
            } else {
                None
            };
            if cli.json {
                let b = outcome.bundle;
                print_json(&QueryResponse {
                    api_version: API_VERSION,
                    ranked_turns: b.ranked_turns,
                    triplets: b.triplets,
                    subgraph_stats: b.subgraph_stats,
                    answer,
                })?;
            } else {
                print_bundle(&outcome.bundle);
                if let Some(a) = answer {
                    println!("\nanswer: {a}");
                }
            }
        }
        Command::Eval {
            corpus,
            generate,
            judge,
            out,
            retrieval,
        } => {
            let cfg = retrieval.apply(&settings.retrieval)?;
            let corpus = eval::load_corpus(corpus).with_context(|| format!("loading {}", corpus.display()))?;
            let gateway = settings.gateway()?;
            let embedder = settings.embedder()?;
            let opts = EvalOptions {
                retrieval: cfg,
                generate: *generate || *judge,
                judge: *judge,
            };
            let run = eval::run_eval(&corpus, &gateway, embedder.as_ref(), &opts)?;
            if let Some(p) = out {
                std::fs::write(p, run.report.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
            if cli.json {
                let mut o = std::io::stdout().lock();
                o.write_all(&run.report.to_json())?;
                writeln!(o)?;
                eprintln!(
                    "pagerank mean {:.3} ms, max {:.3} ms; wall {:.1} ms",
                    run.timing.mean_pagerank_ms, run.timing.max_pagerank_ms, run.timing.wall_ms
                );
            } else {
                print!("{}", eval::render_table(&run.report, Some(&run.timing)));
            }
        }
        Command::Snapshot { action } => {
            let engine = open_engine(&settings)?;
            match action {
                SnapshotAction::Save { path } => {
                    engine
                        .save_snapshot(path)
                        .with_context(|| format!("writing {}", path.display()))?;
                    if !cli.json {
                        println!("saved {} turns to {}", engine.stats().turns, path.display());
                    }
                }
                SnapshotAction::Load { path } => {
                    let stats = engine
                        .load_snapshot(path)
                        .with_context(|| format!("loading {}", path.display()))?;
                    let store = settings.store_path();
                    engine
                        .save_snapshot(&store)
                        .with_context(|| format!("writing {}", store.display()))?;
                    if !cli.json {
                        println!("store {} replaced: {} turns", store.display(), stats.turns);
                    }
                }
            }
            if cli.json {
                print_json(&engine.stats())?;
            }
        }
        Command::Stats => {
            let engine = open_engine(&settings)?;
            let s = engine.stats();
            if cli.json {
                print_json(&s)?;
            } else {
                println!("turns           {}", s.turns);
                println!("segments        {}", s.segments);
                println!("entities        {}", s.entities);
                println!("relation edges  {}", s.relation_edges);
                println!("mention edges   {}", s.mention_edges);
                println!("hierarchy edges {}", s.hierarchy_edges);
                println!("mean degree     {:.3}", s.mean_entity_degree);
            }
        }
        Command::Serve {
            bind,
            api_key,
            retrieval,
        } => {
            let defaults = retrieval.apply(&settings.retrieval)?;
            let engine = Arc::new(open_engine(&settings)?);
            let key = api_key.clone().or_else(|| settings.api_key.clone());
            let bind = bind.clone().unwrap_or_else(|| settings.bind().to_string());
            let state = Arc::new(AppState::new(engine, Some(settings.store_path()), key, defaults));
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(server::serve(state, &bind))?;
        }
    }
    Ok(())
}
