use std::sync::Arc;

use tracemem_core::ingest::IngestOptions;
use tracemem_core::llm::offline::OfflineProvider;
use tracemem_core::model::TurnRecord;
use tracemem_core::{Engine, HashEmbedder, LlmGateway, RetrievalConfig, SessionRecord};

fn turn(speaker: &str, text: &str) -> TurnRecord {
    TurnRecord {
        speaker: speaker.into(),
        text: text.into(),
        timestamp: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = LlmGateway::new(Arc::new(OfflineProvider::new()));
    let engine = Engine::new(Arc::new(gateway), Arc::new(HashEmbedder::default()));

    engine.ingest(
        &SessionRecord {
            session_id: "s1".into(),
            date: Some("2024-03-02".into()),
            turns: vec![
                turn("Maya", "I adopted a border collie named Pixel."),
                turn("Theo", "What does Pixel like to do?"),
                turn("Maya", "I play frisbee with her in the park every morning."),
                turn("Theo", "By the way, how is the new job?"),
                turn("Maya", "I work at the Lindqvist bakery in Oslo now."),
            ],
        },
        IngestOptions::default(),
    )?;

    let query = "Where does Maya work?";
    let outcome = engine.retrieve(query, &RetrievalConfig::default())?;
    for r in &outcome.bundle.ranked_turns {
        println!("{:.4}  {}: {}", r.score, r.turn.speaker, r.turn.text);
    }
    for t in &outcome.bundle.triplets {
        println!("fact: {} / {} / {}", t.subject, t.relation, t.object);
    }
    println!("answer: {}", engine.answer(query, &outcome.bundle)?);
    Ok(())
}
