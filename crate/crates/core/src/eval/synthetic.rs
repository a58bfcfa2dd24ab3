//! Planted-fact corpus: filler chat with one-line facts about invented people
//! spread across sessions, plus a scripted provider that extracts exactly
//! those facts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{Conversation, Corpus, Question};
use crate::embed::{content_tokens, HashEmbedder};
use crate::llm::mock::{MockProvider, MockReply};
use crate::llm::TemplateId;
use crate::model::{SessionRecord, TurnRecord, TurnRef};

pub const USER: &str = "Jordan";
pub const ASSISTANT: &str = "Assistant";
const CONVERSATION: &str = "planted";

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFact {
    pub name: String,
    pub relative: String,
    pub relation: String,
    pub object: String,
    pub text: String,
    pub query: String,
    pub at: TurnRef,
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub corpus: Corpus,
    pub facts: Vec<PlantedFact>,
}

// (relation, sentence lead, question, object suffix)
const KINDS: &[(&str, &str, &str, &str)] = &[
    ("works at", "My friend", "Where does {} work these days?", " Labs"),
    ("lives in", "My cousin", "Which town does {} live in?", "ville"),
    ("plays", "My brother", "What instrument does {} play?", " horn"),
    ("studies", "My niece", "What subject does {} study?", "ology"),
    ("adopted", "My neighbour", "What pet did {} adopt?", " the parrot"),
];

const FILLER_USER: &[&str] = &[
    "Good morning, how are you today?",
    "The weather has been grey all week.",
    "I made pancakes for breakfast.",
    "Traffic was terrible on the way home.",
    "Can you recommend a good podcast?",
    "I finally cleaned the garage yesterday.",
    "The new season of that show starts soon.",
    "I should drink more water.",
];

const FILLER_ASSISTANT: &[&str] = &[
    "That sounds nice, tell me more.",
    "I'm glad to hear that!",
    "Happy to help with anything you need.",
    "Interesting, what happened next?",
    "That makes sense.",
    "Thanks for sharing that with me.",
];

/// Deterministic pronounceable words; no two indices collide.
fn pseudo_word(i: usize) -> String {
    const ONSET: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWEL: &[&str] = &["a", "e", "i", "o", "u"];
    let syll = ONSET.len() * VOWEL.len();
    let mut n = i * 7919 % (syll * syll * syll);
    let mut w = String::new();
    for _ in 0..3 {
        let s = n % syll;
        n /= syll;
        w.push_str(ONSET[s / VOWEL.len()]);
        w.push_str(VOWEL[s % VOWEL.len()]);
    }
    let mut c = w.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

/// Draws pseudo words whose buckets under the default hash embedder are not
/// already taken, so a planted name or object never shares a feature with
/// the fixed template text or with another fact.
struct WordSource {
    embedder: HashEmbedder,
    taken: BTreeSet<usize>,
    next: usize,
}

impl WordSource {
    fn new() -> Self {
        let embedder = HashEmbedder::default();
        let mut text: Vec<String> = vec![
            format!("{USER} {ASSISTANT} has shared family news"),
            format!("Small talk between {USER} and the assistant."),
            format!("{USER}'s who Mentioned by {USER}: it. The user, who talks about friends and family."),
            "The information provided is not enough".into(),
        ];
        text.extend(FILLER_USER.iter().chain(FILLER_ASSISTANT).map(|s| s.to_string()));
        for (relation, lead, question, suffix) in KINDS {
            text.push(format!(
                "{relation} {lead} {question} {suffix} has {}",
                lead.trim_start_matches("My ")
            ));
        }
        let taken = text
            .iter()
            .flat_map(|t| content_tokens(t))
            .map(|t| embedder.bucket(&t))
            .collect();
        Self {
            embedder,
            taken,
            next: 1,
        }
    }

    /// Next word `w` whose leading token in `w + suffix` has a free bucket.
    /// Suffix words such as "Labs" are template text and already taken.
    fn draw(&mut self, suffix: &str) -> String {
        loop {
            let w = pseudo_word(self.next);
            self.next += 1;
            let token = content_tokens(&format!("{w}{suffix}")).remove(0);
            if self.taken.insert(self.embedder.bucket(&token)) {
                return w;
            }
        }
    }
}

/// `facts` facts dealt round-robin over `sessions` sessions; each fact sits
/// on a user turn at position 1, 4, 7, ... of its session.
pub fn planted_corpus(sessions: usize, facts: usize) -> PlantedCorpus {
    assert!(sessions > 0);
    let mut source = WordSource::new();
    let slots = facts.div_ceil(sessions).max(1);
    let len = (3 * slots + 2).max(10);
    let mut planted = Vec::new();
    let mut by_turn: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in 0..facts {
        let (s, slot) = (f % sessions, f / sessions);
        let (relation, lead, question, suffix) = KINDS[f % KINDS.len()];
        let name = source.draw("");
        let object = format!("{}{}", source.draw(suffix), suffix);
        let turn = 1 + 3 * slot;
        by_turn.insert((s, turn), planted.len());
        planted.push(PlantedFact {
            relative: lead.trim_start_matches("My ").to_string(),
            text: format!("{lead} {name} {relation} {object}."),
            query: question.replace("{}", &name),
            name,
            relation: relation.to_string(),
            object,
            at: TurnRef::new(session_name(s), turn as u32),
        });
    }
    let mut records = Vec::new();
    for s in 0..sessions {
        let turns = (0..len)
            .map(|t| {
                if let Some(&f) = by_turn.get(&(s, t)) {
                    return TurnRecord {
                        speaker: USER.into(),
                        text: planted[f].text.clone(),
                        timestamp: None,
                    };
                }
                let user = t % 3 != 2;
                let pool = if user { FILLER_USER } else { FILLER_ASSISTANT };
                TurnRecord {
                    speaker: if user { USER } else { ASSISTANT }.into(),
                    text: pool[(s * 7 + t * 3) % pool.len()].into(),
                    timestamp: None,
                }
            })
            .collect();
        records.push(SessionRecord {
            session_id: session_name(s),
            date: Some(format!("2024-01-{:02}", 1 + s % 28)),
            turns,
        });
    }
    let questions = planted
        .iter()
        .enumerate()
        .map(|(i, f)| Question {
            question_id: format!("q{i:03}"),
            conversation_id: CONVERSATION.into(),
            query: f.query.clone(),
            reference_answer: f.object.clone(),
            gold_turns: vec![f.at.clone()],
            gold_sessions: vec![f.at.session_id.clone()],
            category: Some(f.relation.clone()),
        })
        .collect();
    PlantedCorpus {
        corpus: Corpus::new(
            vec![Conversation {
                conversation_id: CONVERSATION.into(),
                sessions: records,
            }],
            questions,
        ),
        facts: planted,
    }
}

fn session_name(s: usize) -> String {
    format!("s{s:02}")
}

/// `(index, text)` for lines shaped like `<prefix><index><sep><speaker>: <text>`.
fn indexed_lines<'a>(block: &'a str, prefix: &str, sep: &str) -> Vec<(usize, &'a str)> {
    block
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix(prefix)?;
            let (idx, rest) = rest.split_once(sep)?;
            let (_, text) = rest.split_once(": ")?;
            Some((idx.trim().parse().ok()?, text))
        })
        .collect()
}

impl PlantedCorpus {
    /// Splits every session in half, keeps only fact turns, and extracts
    /// each fact as `name | relation | object` plus a `Jordan | has <relative> | name` link.
    pub fn provider(&self) -> MockProvider {
        let facts: Arc<BTreeMap<String, PlantedFact>> =
            Arc::new(self.facts.iter().map(|f| (f.text.clone(), f.clone())).collect());
        let by_name: Arc<BTreeMap<String, PlantedFact>> =
            Arc::new(self.facts.iter().map(|f| (f.name.clone(), f.clone())).collect());
        let bind = |p: &crate::llm::PromptInstance, k: &str| p.placeholder_bindings.get(k).cloned().unwrap_or_default();

        let f_filter = facts.clone();
        let f_summary = facts.clone();
        let f_triplets = facts.clone();
        let f_entities = facts;
        MockProvider::new()
            .with_handler(TemplateId::Segmentation, move |p| {
                let n = bind(p, "numbered_messages_str").lines().count();
                let half = n.div_ceil(2);
                let a: Vec<usize> = (0..half).collect();
                let b: Vec<usize> = (half..n).collect();
                let parts: Vec<Vec<usize>> = [a, b].into_iter().filter(|v| !v.is_empty()).collect();
                Some(MockReply::text(serde_json::to_string(&parts).unwrap()))
            })
            .with_handler(TemplateId::SelectiveFilter, move |p| {
                let keep: Vec<usize> = indexed_lines(&bind(p, "formatted_conv"), "[", "] ")
                    .into_iter()
                    .filter(|(_, t)| f_filter.contains_key(*t))
                    .map(|(i, _)| i)
                    .collect();
                Some(MockReply::text(serde_json::to_string(&keep).unwrap()))
            })
            .with_handler(TemplateId::SegmentSummary, move |p| {
                let content = bind(p, "segment_content");
                let news: Vec<&str> = content
                    .lines()
                    .filter_map(|l| l.split_once(": ").map(|x| x.1))
                    .filter(|t| f_summary.contains_key(*t))
                    .collect();
                Some(MockReply::text(if news.is_empty() {
                    format!("Small talk between {USER} and the assistant.")
                } else {
                    format!("{USER} shared family news. {}", news.join(" "))
                }))
            })
            .with_handler(TemplateId::TripletExtraction, move |p| {
                let mut out = Vec::new();
                for (i, t) in indexed_lines(&bind(p, "segment_text"), "Message ", ": ") {
                    if let Some(f) = f_triplets.get(t) {
                        out.push(format!("{}|{}|{}|{i}", f.name, f.relation, f.object));
                        out.push(format!("{USER}|has {}|{}|{i}", f.relative, f.name));
                    }
                }
                Some(MockReply::text(out.join("\n")))
            })
            .with_handler(TemplateId::EntityDescription, move |p| {
                let mut out = Vec::new();
                let mut user_turns = Vec::new();
                for (i, t) in indexed_lines(&bind(p, "segment"), "Turn ", ": ") {
                    if let Some(f) = f_entities.get(t) {
                        out.push(format!(
                            "{} | {USER}'s {}, who {} {}. | {i}",
                            f.name, f.relative, f.relation, f.object
                        ));
                        out.push(format!(
                            "{} | Mentioned by {USER}: {} {} it. | {i}",
                            f.object, f.name, f.relation
                        ));
                        user_turns.push(i.to_string());
                    }
                }
                if !user_turns.is_empty() {
                    out.push(format!(
                        "{USER} | The user, who talks about friends and family. | {}",
                        user_turns.join(",")
                    ));
                }
                Some(MockReply::text(out.join("\n")))
            })
            .with_handler(TemplateId::AnswerGeneration, move |p| {
                let query = bind(p, "query");
                let context = bind(p, "context");
                let hit = by_name
                    .values()
                    .find(|f| query.contains(&f.name) && context.contains(&f.text));
                Some(MockReply::text(match hit {
                    Some(f) => f.object.clone(),
                    None => "The information provided is not enough".into(),
                }))
            })
            .with_handler(TemplateId::Judge, move |p| {
                let yes = bind(p, "response")
                    .to_lowercase()
                    .contains(&bind(p, "answer").to_lowercase());
                Some(MockReply::text(if yes { "[[yes]]" } else { "[[no]]" }))
            })
    }
}
