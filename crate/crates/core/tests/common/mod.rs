#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use tracemem_core::embed::{cosine, Embedder, Embedding, HashEmbedder};
use tracemem_core::graph::{MemoryGraph, ResolvedTriplet};
use tracemem_core::model::{SegmentId, SegmentRecord, Turn, TurnRef};
use tracemem_core::retrieval::{NodeKey, Subgraph};

pub const VOCAB: &[&str] = &[
    "bakery", "rye", "loaf", "station", "hiking", "trail", "guitar", "lesson", "tokyo", "paris", "sister", "brother",
    "office", "deadline", "garden", "tomato", "novel", "library", "coffee", "tea", "marathon", "knee", "doctor",
    "piano", "recital", "boat", "lake", "camera", "lens", "recipe", "curry", "puppy", "vet", "budget", "rent",
    "concert",
];

const NAMES: &[&str] = &[
    "Ana", "Bo", "Cleo", "Dev", "Eli", "Fay", "Gus", "Hana", "Ivo", "Jun", "Kai", "Lev", "Mia", "Noor", "Oli",
];

pub fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random well-formed memory graph built through the public mutation API.
pub fn random_memory_graph(rng: &mut ChaCha8Rng, emb: &HashEmbedder, max_sessions: usize) -> MemoryGraph {
    let mut g = MemoryGraph::new(emb.dim());
    let sessions = rng.gen_range(1..=max_sessions);
    let mut retained_all: Vec<TurnRef> = Vec::new();
    for s in 0..sessions {
        let sid = format!("s{s}");
        let n = rng.gen_range(2..=8u32);
        let cut = rng.gen_range(1..=n);
        let parts: Vec<Vec<u32>> = [(0..cut).collect::<Vec<_>>(), (cut..n).collect()]
            .into_iter()
            .filter(|p| !p.is_empty())
            .collect();
        for (ordinal, members) in parts.iter().enumerate() {
            let retained: Vec<u32> = members.iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
            let seg = SegmentRecord::new(
                SegmentId::for_session(&sid, ordinal),
                sid.clone(),
                members.clone(),
                retained.clone(),
                words(rng, 2, 6),
            )
            .unwrap();
            let e = emb.embed(&seg.summary).unwrap();
            let seg_id = seg.segment_id.clone();
            g.add_segment(seg, e).unwrap();
            for &t in &retained {
                let text = words(rng, 2, 8);
                let turn = Turn::new(
                    sid.clone(),
                    t,
                    if t % 2 == 0 { "user" } else { "assistant" },
                    text.clone(),
                    None,
                )
                .unwrap();
                g.add_turn(turn, emb.embed(&text).unwrap()).unwrap();
                let r = TurnRef::new(sid.clone(), t);
                g.link_hierarchy(&r, &seg_id).unwrap();
                retained_all.push(r);
            }
        }
    }
    if retained_all.is_empty() {
        return g;
    }
    let mentions = rng.gen_range(0..=2 * retained_all.len());
    for _ in 0..mentions {
        let name = *NAMES.choose(rng).unwrap();
        let t = retained_all.choose(rng).unwrap().clone();
        g.upsert_entity(emb, name, &words(rng, 1, 5), &BTreeSet::from([t]))
            .unwrap();
    }
    let relations = rng.gen_range(0..=retained_all.len());
    for _ in 0..relations {
        let t = retained_all.choose(rng).unwrap().clone();
        g.add_relation_edge(
            emb,
            &ResolvedTriplet {
                subject: NAMES.choose(rng).unwrap().to_string(),
                relation: words(rng, 1, 2),
                object: NAMES.choose(rng).unwrap().to_string(),
                source_turns: BTreeSet::from([t]),
            },
        )
        .unwrap();
    }
    g
}

/// Solves `x = (1-d) s + d (P^T x + (sum of dangling x) s)` by Gaussian
/// elimination with partial pivoting on a dense matrix built from scratch.
pub fn dense_ppr(n: usize, edges: &[(usize, usize, f64)], seed: &[f64], d: f64) -> Vec<f64> {
    let mut w = vec![vec![0.0; n]; n];
    for &(a, b, x) in edges {
        w[a][b] += x;
        if a != b {
            w[b][a] += x;
        }
    }
    // m[v][u] = coefficient of x_u in the row for x_v.
    let mut m = vec![vec![0.0; n + 1]; n];
    for v in 0..n {
        m[v][v] = 1.0;
        m[v][n] = (1.0 - d) * seed[v];
    }
    for u in 0..n {
        let out: f64 = w[u].iter().sum();
        for v in 0..n {
            if out > 0.0 {
                m[v][u] -= d * w[u][v] / out;
            } else {
                m[v][u] -= d * seed[v];
            }
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for j in col..=n {
            m[col][j] /= p;
        }
        for r in 0..n {
            if r != col && m[r][col] != 0.0 {
                let f = m[r][col];
                for j in col..=n {
                    m[r][j] -= f * m[col][j];
                }
            }
        }
    }
    (0..n).map(|v| m[v][n]).collect()
}

fn sim(q: &Embedding, e: &Embedding) -> f64 {
    cosine(q, e).unwrap()
}

/// Edge list of `sub` rebuilt from the graph's own adjacency, weighted as
/// documented: mentions by the entity, relations by the relation,
/// hierarchy by the mean over the turn's entities; all clamped at zero and
/// floored. `None` for the query means every weight is 1.
pub fn oracle_edges(g: &MemoryGraph, sub: &Subgraph, q: Option<&Embedding>, floor: f64) -> Vec<(usize, usize, f64)> {
    let idx = |k: &NodeKey| sub.nodes.iter().position(|n| n == k);
    let clamp = |x: f64| x.max(0.0).max(floor);
    let mut out = Vec::new();
    for t in g.turns() {
        let tr = t.turn.turn_ref();
        let Some(ti) = idx(&NodeKey::Turn(tr.clone())) else {
            continue;
        };
        if let Some(seg) = &t.turn.segment_id {
            if let Some(si) = idx(&NodeKey::Segment(seg.clone())) {
                let w = match q {
                    None => 1.0,
                    Some(q) => {
                        let es: Vec<f64> = g
                            .entities()
                            .iter()
                            .filter(|e| e.turn_ids.contains(&tr))
                            .map(|e| sim(q, &e.embedding))
                            .collect();
                        if es.is_empty() {
                            floor
                        } else {
                            clamp(es.iter().sum::<f64>() / es.len() as f64)
                        }
                    }
                };
                out.push((ti, si, w));
            }
        }
        for e in g.entities() {
            if e.turn_ids.contains(&tr) {
                if let Some(ei) = idx(&NodeKey::Entity(e.entity_id)) {
                    out.push((ti, ei, q.map_or(1.0, |q| clamp(sim(q, &e.embedding)))));
                }
            }
        }
    }
    for r in g.relations() {
        if let (Some(a), Some(b)) = (idx(&NodeKey::Entity(r.subject)), idx(&NodeKey::Entity(r.object))) {
            out.push((a, b, q.map_or(1.0, |q| clamp(sim(q, &r.embedding)))));
        }
    }
    out
}

/// Seed vector recomputed from the node representations.
pub fn oracle_seed(g: &MemoryGraph, sub: &Subgraph, q: &Embedding) -> Vec<f64> {
    let raw: Vec<f64> = sub
        .nodes
        .iter()
        .map(|n| {
            let e = match n {
                NodeKey::Segment(s) => &g.segment(s).unwrap().embedding,
                NodeKey::Turn(t) => &g.turn(t).unwrap().embedding,
                NodeKey::Entity(e) => &g.entity(*e).unwrap().embedding,
            };
            sim(q, e).max(0.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct HubFixture {
    pub graph: MemoryGraph,
    pub embedder: HashEmbedder,
    pub query: &'static str,
    pub gold: TurnRef,
    pub distractor: TurnRef,
}

/// One segment whose summary matches the query. The gold turn shares no
/// words with the query but mentions an entity whose description does. The
/// distractor echoes the query and, like several filler turns, mentions only
/// a hub entity unrelated to the query.
pub fn hub_fixture() -> HubFixture {
    let emb = HashEmbedder::new(256);
    let mut g = MemoryGraph::new(256);
    let sid = "s1";
    let texts = [
        "Got it from the corner shop near the station.",
        "Which bakery sells the rye loaf, you asked?",
        "Jordan watered the garden.",
        "Jordan fixed the bike chain.",
        "Jordan booked a dentist visit.",
        "Jordan painted the fence.",
        "Jordan cooked curry tonight.",
    ];
    let n = texts.len() as u32;
    let seg = SegmentRecord::new(
        SegmentId::for_session(sid, 0),
        sid,
        (0..n).collect(),
        (0..n).collect(),
        "Asking which bakery sells rye bread.",
    )
    .unwrap();
    let e = emb.embed(&seg.summary).unwrap();
    let seg_id = seg.segment_id.clone();
    g.add_segment(seg, e).unwrap();
    for (i, text) in texts.iter().enumerate() {
        let turn = Turn::new(sid, i as u32, "Jordan", *text, None).unwrap();
        g.add_turn(turn, emb.embed(text).unwrap()).unwrap();
        g.link_hierarchy(&TurnRef::new(sid, i as u32), &seg_id).unwrap();
    }
    g.upsert_entity(
        &emb,
        "Crumb and Co",
        "A bakery by the station.",
        &BTreeSet::from([TurnRef::new(sid, 0)]),
    )
    .unwrap();
    let hub_turns: BTreeSet<TurnRef> = (1..n).map(|i| TurnRef::new(sid, i)).collect();
    g.upsert_entity(&emb, "Jordan", "The user.", &hub_turns).unwrap();
    HubFixture {
        graph: g,
        embedder: emb,
        query: "Which bakery sells the rye loaf?",
        gold: TurnRef::new(sid, 0),
        distractor: TurnRef::new(sid, 1),
    }
}

/// Dense power iteration with the same update and stopping rule as the
/// engine: `x' = (1-d) s + d (P^T x + (dangling mass) s)` from `x = s`.
pub fn dense_power(
    n: usize,
    edges: &[(usize, usize, f64)],
    seed: &[f64],
    d: f64,
    tol: f64,
    max_it: usize,
) -> (Vec<f64>, usize) {
    let mut w = vec![vec![0.0; n]; n];
    for &(a, b, x) in edges {
        w[a][b] += x;
        if a != b {
            w[b][a] += x;
        }
    }
    let out: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let mut x = seed.to_vec();
    let mut it = 0;
    while it < max_it {
        let dangling: f64 = (0..n).filter(|&u| out[u] == 0.0).map(|u| x[u]).sum();
        let next: Vec<f64> = (0..n)
            .map(|v| {
                let inflow: f64 = (0..n).filter(|&u| out[u] > 0.0).map(|u| x[u] * w[u][v] / out[u]).sum();
                (1.0 - d) * seed[v] + d * (inflow + dangling * seed[v])
            })
            .collect();
        let change: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        it += 1;
        if change < tol {
            break;
        }
    }
    (x, it)
}
