//! Corpus loading, retrieval metrics and the evaluation driver.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{self, AnswerError};
use crate::embed::Embedder;
use crate::graph::store::MemoryStore;
use crate::graph::{GraphStats, MemoryGraph};
use crate::ingest::{IngestOptions, Ingestor};
use crate::llm::LlmGateway;
use crate::model::{RetrievalConfig, SessionRecord, TurnRef};
use crate::retrieval::{self, turn_coverage};

pub const CORPUS_VERSION: u32 = 1;
pub const RECALL_KS: [usize; 3] = [3, 5, 10];

#[derive(Debug, Error)]
pub enum CorpusFormatError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("corpus version {found} is not supported (expected {CORPUS_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CorpusFormatError {
    CorpusFormatError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub conversation_id: String,
    pub sessions: Vec<SessionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub question_id: String,
    pub conversation_id: String,
    pub query: String,
    pub reference_answer: String,
    /// Written as `[session_id, turn_id]` pairs.
    #[serde(with = "pairs")]
    pub gold_turns: Vec<TurnRef>,
    pub gold_sessions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

mod pairs {
    use super::TurnRef;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(refs: &[TurnRef], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<(&str, u32)> = refs.iter().map(|r| (r.session_id.as_str(), r.turn_id)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<TurnRef>, D::Error> {
        let v: Vec<(String, u32)> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|(s, t)| TurnRef::new(s, t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub version: u32,
    pub conversations: Vec<Conversation>,
    pub questions: Vec<Question>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>, questions: Vec<Question>) -> Self {
        Self {
            version: CORPUS_VERSION,
            conversations,
            questions,
        }
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conversation_id == id)
    }

    pub fn validate(&self) -> Result<(), CorpusFormatError> {
        if self.version != CORPUS_VERSION {
            return Err(CorpusFormatError::Version { found: self.version });
        }
        let mut conv_ids = BTreeSet::new();
        for (ci, c) in self.conversations.iter().enumerate() {
            let at = format!("conversations[{ci}]");
            if c.conversation_id.trim().is_empty() {
                return Err(schema(format!("{at}.conversation_id"), "empty id"));
            }
            if !conv_ids.insert(c.conversation_id.as_str()) {
                return Err(schema(
                    format!("{at}.conversation_id"),
                    format!("duplicate id {:?}", c.conversation_id),
                ));
            }
            let mut sessions = BTreeSet::new();
            for (si, s) in c.sessions.iter().enumerate() {
                let at = format!("{at}.sessions[{si}]");
                if !sessions.insert(s.session_id.as_str()) {
                    return Err(schema(
                        format!("{at}.session_id"),
                        format!("duplicate id {:?}", s.session_id),
                    ));
                }
                s.to_turns().map_err(|e| schema(at.clone(), e.to_string()))?;
            }
        }
        let mut question_ids = BTreeSet::new();
        for (qi, q) in self.questions.iter().enumerate() {
            let at = format!("questions[{qi}]");
            if !question_ids.insert(q.question_id.as_str()) {
                return Err(schema(
                    format!("{at}.question_id"),
                    format!("duplicate id {:?}", q.question_id),
                ));
            }
            if q.query.trim().is_empty() {
                return Err(schema(format!("{at}.query"), "empty query"));
            }
            let conv = self.conversation(&q.conversation_id).ok_or_else(|| {
                schema(
                    format!("{at}.conversation_id"),
                    format!("unknown conversation {:?}", q.conversation_id),
                )
            })?;
            for (gi, g) in q.gold_turns.iter().enumerate() {
                let session = conv.sessions.iter().find(|s| s.session_id == g.session_id);
                match session {
                    None => {
                        return Err(schema(
                            format!("{at}.gold_turns[{gi}]"),
                            format!("unknown session {:?}", g.session_id),
                        ))
                    }
                    Some(s) if g.turn_id as usize >= s.turns.len() => {
                        return Err(schema(
                            format!("{at}.gold_turns[{gi}]"),
                            format!("session {:?} has no turn {}", g.session_id, g.turn_id),
                        ))
                    }
                    Some(_) => {}
                }
                if !q.gold_sessions.contains(&g.session_id) {
                    return Err(schema(
                        format!("{at}.gold_sessions"),
                        format!("missing {:?}, which holds a gold turn", g.session_id),
                    ));
                }
            }
            for (gi, s) in q.gold_sessions.iter().enumerate() {
                if !conv.sessions.iter().any(|x| &x.session_id == s) {
                    return Err(schema(
                        format!("{at}.gold_sessions[{gi}]"),
                        format!("unknown session {s:?}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusFormatError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let corpus: Corpus = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusFormatError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusFormatError> {
    let mut text = serde_json::to_string_pretty(corpus).expect("corpus serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Fraction of `gold` found in the first `k` entries of `retrieved`.
/// `None` when there is no gold to find.
pub fn recall_at_k<T: Ord>(retrieved: &[T], gold: &BTreeSet<T>, k: usize) -> Option<f64> {
    if gold.is_empty() || k == 0 {
        return None;
    }
    let top: BTreeSet<&T> = retrieved.iter().take(k).collect();
    let hits = gold.iter().filter(|g| top.contains(g)).count();
    Some(hits as f64 / gold.len() as f64)
}

/// 1 when any gold item is in the first `k`, else 0.
pub fn hit_at_k<T: Ord>(retrieved: &[T], gold: &BTreeSet<T>, k: usize) -> Option<f64> {
    recall_at_k(retrieved, gold, k).map(|r| if r > 0.0 { 1.0 } else { 0.0 })
}

/// Sessions of the ranked turns, first occurrence order.
pub fn session_ranking(turns: &[TurnRef]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    turns
        .iter()
        .filter(|t| seen.insert(t.session_id.as_str()))
        .map(|t| t.session_id.clone())
        .collect()
}

fn f1_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Harmonic mean of token precision and recall over multisets. Tokens are
/// whitespace-split, lowercased, with surrounding punctuation removed.
pub fn token_f1(prediction: &str, reference: &str) -> f64 {
    let pred = f1_tokens(prediction);
    let refs = f1_tokens(reference);
    if pred.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &refs {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    // 2PR / (P + R) with P = c/|pred| and R = c/|ref| reduces to this.
    2.0 * common as f64 / (pred.len() + refs.len()) as f64
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub retrieval: RetrievalConfig,
    /// Generate an answer per question and score it with token F1.
    pub generate: bool,
    /// Also ask the judge prompt for a verdict. Implies `generate`.
    pub judge: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_calls: u64,
}

impl TokenUsage {
    fn add(&mut self, o: &TokenUsage) {
        self.input_tokens += o.input_tokens;
        self.output_tokens += o.output_tokens;
        self.llm_calls += o.llm_calls;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub k: usize,
    /// Gold fraction.
    pub session: f64,
    pub turn: f64,
    /// Hit rate, as some benchmarks report it.
    pub session_hit: f64,
    pub turn_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub conversation_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub ranked_turns: Vec<TurnRef>,
    pub ranked_sessions: Vec<String>,
    /// Turn-level gold fraction per k; empty when the question has no gold turns.
    pub turn_recall: BTreeMap<usize, f64>,
    pub session_recall: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judged_correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pagerank_ms: f64,
    #[serde(skip)]
    judge_attempted: bool,
    #[serde(skip)]
    judge_failed: bool,
}

/// Deterministic part of an evaluation run. Wall-clock figures live in
/// [`EvalTiming`] so two runs over the same inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config: RetrievalConfig,
    pub questions: usize,
    pub failed_questions: usize,
    /// Questions without gold turns, left out of the turn-level means.
    pub skipped_turn_level: usize,
    pub skipped_session_level: usize,
    pub recall: Vec<RecallRow>,
    pub mean_turn_coverage: f64,
    pub token_usage: BTreeMap<String, TokenUsage>,
    pub total_tokens: TokenUsage,
    pub structured_attempts: u64,
    pub structured_failures: u64,
    pub error_rate: f64,
    pub ingest_errors: BTreeMap<String, String>,
    pub graphs: BTreeMap<String, GraphStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_accuracy: Option<f64>,
    pub per_question: Vec<QuestionResult>,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<&RecallRow> {
        self.recall.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::graph::snapshot::to_stable_json(self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub mean_pagerank_ms: f64,
    pub max_pagerank_ms: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub timing: EvalTiming,
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (s / n as f64, n)
    }
}

fn evaluate_question(
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
    graph: &MemoryGraph,
    q: &Question,
    opts: &EvalOptions,
) -> QuestionResult {
    let mut r = QuestionResult {
        question_id: q.question_id.clone(),
        conversation_id: q.conversation_id.clone(),
        category: q.category.clone(),
        ranked_turns: vec![],
        ranked_sessions: vec![],
        turn_recall: BTreeMap::new(),
        session_recall: BTreeMap::new(),
        turn_coverage: None,
        answer: None,
        token_f1: None,
        judged_correct: None,
        error: None,
        pagerank_ms: 0.0,
        judge_attempted: false,
        judge_failed: false,
    };
    let outcome = match retrieval::retrieve(graph, embedder, &q.query, &opts.retrieval) {
        Ok(o) => o,
        Err(e) => {
            r.error = Some(e.to_string());
            return r;
        }
    };
    r.pagerank_ms = outcome.pagerank_ms;
    r.ranked_turns = outcome.bundle.ranked_turns.iter().map(|t| t.turn.turn_ref()).collect();
    r.ranked_sessions = session_ranking(&r.ranked_turns);
    let gold_turns: BTreeSet<TurnRef> = q.gold_turns.iter().cloned().collect();
    let gold_sessions: BTreeSet<String> = q.gold_sessions.iter().cloned().collect();
    for k in RECALL_KS {
        if let Some(x) = recall_at_k(&r.ranked_turns, &gold_turns, k) {
            r.turn_recall.insert(k, x);
        }
        if let Some(x) = recall_at_k(&r.ranked_sessions, &gold_sessions, k) {
            r.session_recall.insert(k, x);
        }
    }
    r.turn_coverage = turn_coverage(&outcome.subgraph_turns(), &gold_turns);

    if opts.generate || opts.judge {
        match answer::answer(gateway, &q.query, &outcome.bundle) {
            Ok(a) => {
                r.token_f1 = Some(token_f1(&a, &q.reference_answer));
                if opts.judge {
                    match answer::judge(gateway, &q.query, &q.reference_answer, &a) {
                        Ok(v) => {
                            r.judge_attempted = true;
                            r.judged_correct = Some(v);
                        }
                        Err(AnswerError::JudgeUnparseable(_)) => {
                            r.judge_attempted = true;
                            r.judge_failed = true;
                            r.error = Some("judge output unparseable".into());
                        }
                        Err(e) => r.error = Some(e.to_string()),
                    }
                }
                r.answer = Some(a);
            }
            Err(e) => r.error = Some(e.to_string()),
        }
    }
    r
}

#[cfg(feature = "parallel")]
fn evaluate_all(
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
    graph: &MemoryGraph,
    questions: &[&Question],
    opts: &EvalOptions,
) -> Vec<QuestionResult> {
    use rayon::prelude::*;
    questions
        .par_iter()
        .map(|q| evaluate_question(gateway, embedder, graph, q, opts))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all(
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
    graph: &MemoryGraph,
    questions: &[&Question],
    opts: &EvalOptions,
) -> Vec<QuestionResult> {
    questions
        .iter()
        .map(|q| evaluate_question(gateway, embedder, graph, q, opts))
        .collect()
}

/// Builds one graph per conversation from its sessions in order, then
/// answers every question against its conversation's graph. Provider and
/// retrieval failures are recorded on the question and do not stop the run.
pub fn run_eval(
    corpus: &Corpus,
    gateway: &LlmGateway,
    embedder: &dyn Embedder,
    opts: &EvalOptions,
) -> Result<EvalRun, CorpusFormatError> {
    corpus.validate()?;
    let started = web_time::Instant::now();
    let ingest_opts = IngestOptions {
        disable_selective_filter: opts.retrieval.disable_selective_filter,
    };
    let ingestor = Ingestor::new(gateway, embedder, ingest_opts);

    let mut token_usage = BTreeMap::new();
    let mut ingest_errors = BTreeMap::new();
    let mut graphs = BTreeMap::new();
    let mut attempts = 0u64;
    let mut failures = 0u64;
    let mut results = Vec::new();

    for conv in &corpus.conversations {
        let store = MemoryStore::new(MemoryGraph::new(embedder.dim()));
        for s in &conv.sessions {
            let key = format!("{}/{}", conv.conversation_id, s.session_id);
            match ingestor.ingest_record(&store, s) {
                Ok(rep) => {
                    attempts += rep.structured_attempts;
                    failures += rep.structured_failures;
                    token_usage.insert(
                        key,
                        TokenUsage {
                            input_tokens: rep.input_tokens,
                            output_tokens: rep.output_tokens,
                            llm_calls: rep.llm_calls,
                        },
                    );
                }
                Err(e) => {
                    ingest_errors.insert(key, e.to_string());
                }
            }
        }
        let graph = store.read();
        graphs.insert(conv.conversation_id.clone(), graph.stats());
        let questions: Vec<&Question> = corpus
            .questions
            .iter()
            .filter(|q| q.conversation_id == conv.conversation_id)
            .collect();
        results.extend(evaluate_all(gateway, embedder, &graph, &questions, opts));
    }
    results.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    for r in &results {
        if r.judge_attempted {
            attempts += 1;
            failures += r.judge_failed as u64;
        }
    }
    let retrieved: Vec<&QuestionResult> = results
        .iter()
        .filter(|r| !r.ranked_turns.is_empty() || r.turn_coverage.is_some())
        .collect();
    let mut recall = Vec::new();
    for k in RECALL_KS {
        let per = |f: &dyn Fn(&QuestionResult) -> Option<f64>| mean(results.iter().filter_map(f)).0;
        recall.push(RecallRow {
            k,
            session: per(&|r| r.session_recall.get(&k).copied()),
            turn: per(&|r| r.turn_recall.get(&k).copied()),
            session_hit: per(&|r| r.session_recall.get(&k).map(|&x| if x > 0.0 { 1.0 } else { 0.0 })),
            turn_hit: per(&|r| r.turn_recall.get(&k).map(|&x| if x > 0.0 { 1.0 } else { 0.0 })),
        });
    }
    let skipped_turn_level = corpus.questions.iter().filter(|q| q.gold_turns.is_empty()).count();
    let skipped_session_level = corpus.questions.iter().filter(|q| q.gold_sessions.is_empty()).count();
    let (mean_turn_coverage, _) = mean(results.iter().filter_map(|r| r.turn_coverage));
    let (f1, n_f1) = mean(results.iter().filter_map(|r| r.token_f1));
    let (acc, n_acc) = mean(results.iter().filter_map(|r| r.judged_correct.map(|v| v as u8 as f64)));
    let (mean_pr, _) = mean(retrieved.iter().map(|r| r.pagerank_ms));
    let max_pr = retrieved.iter().map(|r| r.pagerank_ms).fold(0.0, f64::max);
    let mut total_tokens = TokenUsage::default();
    for u in token_usage.values() {
        total_tokens.add(u);
    }

    let report = EvalReport {
        label: opts.retrieval.label(),
        config: opts.retrieval.clone(),
        questions: results.len(),
        failed_questions: results.iter().filter(|r| r.error.is_some()).count(),
        skipped_turn_level,
        skipped_session_level,
        recall,
        mean_turn_coverage,
        token_usage,
        total_tokens,
        structured_attempts: attempts,
        structured_failures: failures,
        error_rate: crate::llm::error_rate(failures, attempts),
        ingest_errors,
        graphs,
        token_f1: (n_f1 > 0).then_some(f1),
        judge_accuracy: (n_acc > 0).then_some(acc),
        per_question: results,
    };
    let timing = EvalTiming {
        mean_pagerank_ms: mean_pr,
        max_pagerank_ms: max_pr,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(EvalRun { report, timing })
}

/// Fixed-width summary: recall at both granularities for each k, then the
/// run-level figures.
pub fn render_table(report: &EvalReport, timing: Option<&EvalTiming>) -> String {
    let mut out = String::new();
    let pct = |x: f64| format!("{:>7.2}", 100.0 * x);
    let _ = writeln!(out, "config: {}", report.label);
    let _ = writeln!(out, "{:<14}{:^24}|{:^24}", "", "Session-level", "Turn-level");
    let mut header = format!("{:<14}", "metric");
    for k in RECALL_KS {
        header.push_str(&format!(" {:>7}", format!("R@{k}")));
    }
    header.push('|');
    for k in RECALL_KS {
        header.push_str(&format!(" {:>7}", format!("R@{k}")));
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for (name, sess, turn) in [
        (
            "gold-frac",
            (|r: &RecallRow| r.session) as fn(&RecallRow) -> f64,
            (|r: &RecallRow| r.turn) as fn(&RecallRow) -> f64,
        ),
        ("hit-rate", |r: &RecallRow| r.session_hit, |r: &RecallRow| r.turn_hit),
    ] {
        let mut line = format!("{name:<14}");
        for r in &report.recall {
            line.push_str(&format!(" {}", pct(sess(r))));
        }
        line.push('|');
        for r in &report.recall {
            line.push_str(&format!(" {}", pct(turn(r))));
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<22}{:>10}", "questions", report.questions);
    let _ = writeln!(out, "{:<22}{:>10}", "failed", report.failed_questions);
    let _ = writeln!(
        out,
        "{:<22}{:>10}",
        "turn coverage %",
        pct(report.mean_turn_coverage).trim()
    );
    let _ = writeln!(out, "{:<22}{:>10}", "error rate %", pct(report.error_rate).trim());
    let _ = writeln!(out, "{:<22}{:>10}", "input tokens", report.total_tokens.input_tokens);
    let _ = writeln!(out, "{:<22}{:>10}", "output tokens", report.total_tokens.output_tokens);
    if let Some(f1) = report.token_f1 {
        let _ = writeln!(out, "{:<22}{:>10}", "token F1 %", pct(f1).trim());
    }
    if let Some(a) = report.judge_accuracy {
        let _ = writeln!(out, "{:<22}{:>10}", "judge accuracy %", pct(a).trim());
    }
    if let Some(t) = timing {
        let _ = writeln!(out, "{:<22}{:>10.3}", "pagerank ms (mean)", t.mean_pagerank_ms);
        let _ = writeln!(out, "{:<22}{:>10.3}", "pagerank ms (max)", t.max_pagerank_ms);
    }
    out
}
