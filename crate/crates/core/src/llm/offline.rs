//! Rule-based provider that needs no network. Good enough to drive the
//! pipeline end to end on plain first-person chat logs; not a substitute for
//! a real model.

use std::collections::BTreeMap;

use crate::embed::content_tokens;

use super::{rough_token_count, ChatProvider, CompletionResult, PromptInstance, ProviderError, TemplateId};

const TOPIC_SHIFT_CUES: &[&str] = &[
    "on a different note",
    "on another note",
    "by the way",
    "changing the subject",
    "change of topic",
    "unrelated,",
    "anyway,",
    "also,",
    "different topic",
];

const FIRST_PERSON: &[&str] = &[
    "i", "i'm", "im", "i've", "i'd", "i'll", "my", "me", "mine", "we", "our", "us",
];

const NOT_ENOUGH: &str = "The information provided is not enough";

/// Phrase patterns: (lowercased prefix after the subject, relation).
const PATTERNS: &[(&str, &str)] = &[
    ("i'm moving to ", "is moving to"),
    ("i am moving to ", "is moving to"),
    ("i live in ", "lives in"),
    ("i'm living in ", "lives in"),
    ("i moved to ", "moved to"),
    ("i'm from ", "is from"),
    ("i am from ", "is from"),
    ("i work at ", "works at"),
    ("i work for ", "works at"),
    ("i study at ", "studies at"),
    ("i'm studying ", "studies"),
    ("i love ", "likes"),
    ("i like ", "likes"),
    ("i enjoy ", "enjoys"),
    ("i prefer ", "prefers"),
    ("i hate ", "dislikes"),
    ("i dislike ", "dislikes"),
    ("i'm interested in ", "is interested in"),
    ("i'm planning to ", "is planning to"),
    ("i plan to ", "is planning to"),
    ("i want to ", "wants to"),
    ("i'm thinking of ", "is considering"),
    ("i'm considering ", "is considering"),
    ("i have a ", "has"),
    ("i have an ", "has"),
    ("i own a ", "has"),
    ("i own an ", "has"),
    ("i drive a ", "drives"),
    ("i play ", "plays"),
    ("my name is ", "is named"),
    ("i'm allergic to ", "is allergic to"),
];

const CLAUSE_BREAKS: &[&str] = &[
    " because ",
    " but ",
    " and ",
    " so ",
    " which ",
    " since ",
    " as a ",
    " as an ",
    " with ",
    " this ",
    " next ",
    " every ",
    " on ",
];

#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineProvider;

impl OfflineProvider {
    pub fn new() -> Self {
        Self
    }
}

/// A prompt line of the form `<label> <index>: <speaker>: <text>` or
/// `[<index>] <speaker>: <text>`.
#[derive(Debug, Clone, PartialEq)]
struct Line {
    index: usize,
    speaker: String,
    text: String,
}

fn parse_lines(block: &str) -> Vec<Line> {
    block.lines().filter_map(parse_line).collect()
}

fn parse_line(line: &str) -> Option<Line> {
    let line = line.trim();
    let (index, rest) = if let Some(r) = line.strip_prefix('[') {
        let close = r.find(']')?;
        (r[..close].trim().parse().ok()?, r[close + 1..].trim_start())
    } else {
        let (head, rest) = line.split_once(':')?;
        let idx = head.split_whitespace().last()?.parse().ok()?;
        (idx, rest.trim_start())
    };
    let (speaker, text) = rest.split_once(':')?;
    Some(Line {
        index,
        speaker: speaker.trim().to_string(),
        text: text.trim().to_string(),
    })
}

fn sentences(text: &str) -> Vec<&str> {
    text.split_inclusive(['.', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

fn is_first_person(text: &str) -> bool {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .any(|w| FIRST_PERSON.contains(&w.to_lowercase().as_str()))
}

fn segmentation(block: &str) -> String {
    let lines = parse_lines(block);
    let mut segments: Vec<Vec<usize>> = Vec::new();
    for l in &lines {
        let lower = l.text.to_lowercase();
        let shift = TOPIC_SHIFT_CUES.iter().any(|c| lower.starts_with(c));
        match segments.last_mut() {
            Some(seg) if !shift => seg.push(l.index),
            _ => segments.push(vec![l.index]),
        }
    }
    serde_json::to_string(&segments).expect("index lists serialize")
}

fn selective_filter(block: &str) -> String {
    let keep: Vec<usize> = parse_lines(block)
        .into_iter()
        .filter(|l| {
            let assistant = l.speaker.eq_ignore_ascii_case("assistant");
            let lower = l.text.to_lowercase();
            if assistant {
                lower.contains("your ") || lower.contains("you mentioned")
            } else {
                is_first_person(&l.text) || l.text.trim_end().ends_with('?')
            }
        })
        .map(|l| l.index)
        .collect();
    serde_json::to_string(&keep).expect("index list serializes")
}

fn summary(block: &str) -> String {
    let firsts: Vec<String> = block
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() {
                return None;
            }
            let (speaker, text) = l.split_once(':').unwrap_or(("", l));
            let s = sentences(text).first().copied().unwrap_or(text.trim()).to_string();
            Some(if speaker.is_empty() {
                s
            } else {
                format!("{} said: {}", speaker.trim(), s)
            })
        })
        .collect();
    let joined = firsts.join(" ");
    let mut out: String = joined.chars().take(512).collect();
    if out.trim().is_empty() {
        out = "Short exchange.".into();
    }
    out
}

fn clean_object(raw: &str) -> Option<String> {
    let mut obj = raw;
    for brk in CLAUSE_BREAKS {
        if let Some(i) = obj.to_ascii_lowercase().find(brk) {
            obj = &obj[..i];
        }
    }
    let obj = obj.trim().trim_end_matches(['.', ',', '!', '?', ';', ':']).trim();
    let lower = obj.to_ascii_lowercase();
    let obj = ["a ", "an ", "the "]
        .iter()
        .find(|a| lower.starts_with(*a))
        .map_or(obj, |a| &obj[a.len()..])
        .trim();
    (!obj.is_empty() && obj.split_whitespace().count() <= 6).then(|| obj.to_string())
}

/// Heuristic triplets for one utterance.
fn utterance_triplets(speaker: &str, text: &str) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for sentence in sentences(text) {
        let lower = sentence.to_ascii_lowercase();
        // "I'm a designer at Apple." / "I am a nurse at St. Mary's."
        for lead in ["i'm a ", "i'm an ", "i am a ", "i am an "] {
            if let Some(pos) = lower.find(lead) {
                let rest = &sentence[pos + lead.len()..];
                let rest_lower = rest.to_ascii_lowercase();
                if let Some(at) = rest_lower.find(" at ") {
                    if let Some(role) = clean_object(&rest[..at]) {
                        out.push((speaker.into(), "has role".into(), role));
                    }
                    if let Some(org) = clean_object(&rest[at + 4..]) {
                        out.push((speaker.into(), "works at".into(), org));
                    }
                } else if let Some(what) = clean_object(rest) {
                    out.push((speaker.into(), "is a".into(), what));
                }
            }
        }
        for (prefix, rel) in PATTERNS {
            if let Some(pos) = lower.find(prefix) {
                let at_word_start = pos == 0 || !lower.as_bytes()[pos - 1].is_ascii_alphanumeric();
                if !at_word_start {
                    continue;
                }
                let rest = &sentence[pos + prefix.len()..];
                if *rel == "works at" {
                    if let Some(as_pos) = rest.to_ascii_lowercase().find(" as a") {
                        let role_part = &rest[as_pos..];
                        let role = role_part.trim_start_matches(" as an ").trim_start_matches(" as a ");
                        if let Some(role) = clean_object(role) {
                            out.push((speaker.into(), "has role".into(), role));
                        }
                    }
                }
                if let Some(obj) = clean_object(rest) {
                    out.push((speaker.into(), rel.to_string(), obj));
                }
            }
        }
    }
    out
}

fn triplets(block: &str) -> String {
    let mut found: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for l in parse_lines(block) {
        for t in utterance_triplets(&l.speaker, &l.text) {
            let entry = found.entry(t.clone()).or_insert_with(|| {
                order.push(t);
                Vec::new()
            });
            if !entry.contains(&l.index) {
                entry.push(l.index);
            }
        }
    }
    order
        .iter()
        .map(|t| {
            let idx: Vec<String> = found[t].iter().map(|i| i.to_string()).collect();
            format!("{}|{}|{}|{}", t.0, t.1, t.2, idx.join(","))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn entity_descriptions(block: &str, entity_list: &str) -> String {
    let lines = parse_lines(block);
    let mut out = Vec::new();
    for entity in entity_list.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let needle = entity.to_lowercase();
        let cited: Vec<&Line> = lines
            .iter()
            .filter(|l| l.speaker.to_lowercase() == needle || l.text.to_lowercase().contains(&needle))
            .collect();
        if cited.is_empty() {
            continue;
        }
        let desc: Vec<String> = cited
            .iter()
            .take(2)
            .map(|l| {
                let s = sentences(&l.text)
                    .into_iter()
                    .find(|s| l.speaker.to_lowercase() == needle || s.to_lowercase().contains(&needle))
                    .unwrap_or(&l.text)
                    .replace('|', "/");
                format!("{} said: {}", l.speaker, s)
            })
            .collect();
        let idx: Vec<String> = cited.iter().map(|l| l.index.to_string()).collect();
        out.push(format!("{entity} | {} | {}", desc.join(" "), idx.join(",")));
    }
    out.join("\n")
}

fn answer(context: &str, query: &str) -> String {
    let q: Vec<String> = content_tokens(query);
    let best = context
        .lines()
        .filter_map(|l| l.strip_prefix('[').and_then(|r| r.split_once("]: ")).map(|(_, t)| t))
        .map(|text| {
            let toks = content_tokens(text);
            let overlap = q.iter().filter(|t| toks.contains(t)).count();
            (overlap, text)
        })
        .filter(|(o, _)| *o > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.len().cmp(&a.1.len())));
    match best {
        Some((_, text)) => text.to_string(),
        None => NOT_ENOUGH.to_string(),
    }
}

fn judge(reference: &str, response: &str) -> String {
    let norm = |s: &str| content_tokens(s).join(" ");
    if !reference.trim().is_empty() && norm(response).contains(&norm(reference)) {
        "[[yes]]".into()
    } else {
        "[[no]]".into()
    }
}

impl ChatProvider for OfflineProvider {
    fn complete(&self, prompt: &PromptInstance, _temperature: f64) -> Result<CompletionResult, ProviderError> {
        let b = |k: &str| prompt.placeholder_bindings.get(k).map(String::as_str).unwrap_or("");
        let text = match prompt.template_id {
            TemplateId::Segmentation => segmentation(b("numbered_messages_str")),
            TemplateId::SelectiveFilter => selective_filter(b("formatted_conv")),
            TemplateId::SegmentSummary => summary(b("segment_content")),
            TemplateId::TripletExtraction => triplets(b("segment_text")),
            TemplateId::EntityDescription => entity_descriptions(b("segment"), b("entity_list")),
            TemplateId::AnswerGeneration => answer(b("context"), b("query")),
            TemplateId::Judge => judge(b("answer"), b("response")),
        };
        Ok(CompletionResult {
            input_tokens: rough_token_count(&prompt.rendered_text),
            output_tokens: rough_token_count(&text),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: TemplateId, bindings: &[(&str, &str)]) -> String {
        let p = PromptInstance::render(id, bindings).unwrap();
        OfflineProvider.complete(&p, 0.0).unwrap().text
    }

    const HIKE: &str = "Message 0: user: Hey, how are you?
Message 1: assistant: I'm good, thanks! Just finishing up some work.
Message 2: user: Speaking of work, did you see the email about the project deadline?
Message 3: assistant: Yeah, it's been moved to next Friday.
Message 4: user: Okay, that gives us more time. I'll update the project plan.
Message 5: assistant: Perfect, thanks.
Message 6: user: On a different note, are you free this weekend? I was thinking of going hiking.
Message 7: assistant: Oh, that sounds great! I'm free on Saturday.";

    #[test]
    fn segments_on_topic_cue() {
        assert_eq!(
            run(TemplateId::Segmentation, &[("numbered_messages_str", HIKE)]),
            "[[0,1,2,3,4,5],[6,7]]"
        );
    }

    #[test]
    fn filter_keeps_first_person_and_questions() {
        let conv = "[0] user: What's photosynthesis?\n[1] assistant: Photosynthesis is the process where plants convert sunlight.";
        assert_eq!(run(TemplateId::SelectiveFilter, &[("formatted_conv", conv)]), "[0]");
    }

    #[test]
    fn extracts_role_and_employer() {
        let seg = "Message 0: An: I'm a designer at Apple.\nMessage 1: Binh: I work at Microsoft as a PM.\nMessage 2: An: I love cross-company projects.";
        let out = run(TemplateId::TripletExtraction, &[("segment_text", seg)]);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines.contains(&"An|has role|designer|0"), "{out}");
        assert!(lines.contains(&"An|works at|Apple|0"), "{out}");
        assert!(lines.contains(&"Binh|works at|Microsoft|1"), "{out}");
        assert!(lines.contains(&"Binh|has role|PM|1"), "{out}");
        assert!(lines.contains(&"An|likes|cross-company projects|2"), "{out}");
    }

    #[test]
    fn merges_repeated_facts() {
        let seg = "Message 0: Sam: I live in Tokyo.\nMessage 2: Sam: Yes, I live in Tokyo with my sister.";
        let out = run(TemplateId::TripletExtraction, &[("segment_text", seg)]);
        assert!(out.lines().any(|l| l == "Sam|lives in|Tokyo|0,2"), "{out}");
    }

    #[test]
    fn describes_listed_entities() {
        let seg = "Turn 0: Sam: I live in Tokyo.\nTurn 1: assistant: Nice.";
        let out = run(
            TemplateId::EntityDescription,
            &[("segment", seg), ("entity_list", "Sam, Tokyo, Paris")],
        );
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2, "{out}");
        assert!(lines[0].starts_with("Sam | ") && lines[0].ends_with("| 0"));
        assert!(lines[1].starts_with("Tokyo | "));
    }

    #[test]
    fn answers_from_best_overlap_or_declines() {
        let ctx = "Conversation excerpts:\n[s1 | - | Sam]: I live in Tokyo.\n[s1 | - | Sam]: I like tea.";
        assert_eq!(
            run(
                TemplateId::AnswerGeneration,
                &[("context", ctx), ("query", "Where does Sam live?")]
            ),
            "I live in Tokyo."
        );
        assert_eq!(
            run(TemplateId::AnswerGeneration, &[("context", ""), ("query", "Where?")]),
            NOT_ENOUGH
        );
    }

    #[test]
    fn judges_by_containment() {
        let j = |a: &str, r: &str| run(TemplateId::Judge, &[("question", "q"), ("answer", a), ("response", r)]);
        assert_eq!(j("Tokyo", "She lives in Tokyo."), "[[yes]]");
        assert_eq!(j("Tokyo", "Paris"), "[[no]]");
    }
}
