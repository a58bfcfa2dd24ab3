//! Personalized PageRank over an undirected weighted graph given as an edge
//! list, with query-derived restart distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PageRankError {
    #[error("seed vector has {got} entries for {nodes} nodes")]
    SeedLength { got: usize, nodes: usize },
    #[error("seed vector is not a distribution (sum {sum}, min {min})")]
    SeedNotNormalized { sum: f64, min: f64 },
    #[error("edge ({0}, {1}) points outside the graph")]
    EdgeOutOfRange(usize, usize),
    #[error("edge ({0}, {1}) has weight {2}, expected a finite non-negative value")]
    BadWeight(usize, usize, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankParams {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// L1 change of each iteration.
    pub residuals: Vec<f64>,
    /// Score sum after each iteration.
    pub mass: Vec<f64>,
}

/// Row-normalized adjacency: `rows[u]` lists `(v, P(u -> v))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub dangling: Vec<usize>,
}

/// Each undirected edge `(a, b, w)` contributes `w` to both `a -> b` and
/// `b -> a`; a self-loop contributes `w` once. Parallel edges add up.
pub fn transition(n: usize, edges: &[(usize, usize, f64)]) -> Result<Transition, PageRankError> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        if a >= n || b >= n {
            return Err(PageRankError::EdgeOutOfRange(a, b));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(PageRankError::BadWeight(a, b, w));
        }
        rows[a].push((b, w));
        if a != b {
            rows[b].push((a, w));
        }
    }
    let mut dangling = Vec::new();
    for (u, row) in rows.iter_mut().enumerate() {
        row.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for &(v, w) in row.iter() {
            match merged.last_mut() {
                Some((lv, lw)) if *lv == v => *lw += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, w)| w).sum();
        if total > 0.0 {
            for (_, w) in merged.iter_mut() {
                *w /= total;
            }
        } else {
            merged.clear();
            dangling.push(u);
        }
        *row = merged;
    }
    Ok(Transition { rows, dangling })
}

fn check_seed(n: usize, seed: &[f64]) -> Result<(), PageRankError> {
    if seed.len() != n {
        return Err(PageRankError::SeedLength {
            got: seed.len(),
            nodes: n,
        });
    }
    let sum: f64 = seed.iter().sum();
    let min = seed.iter().copied().fold(f64::INFINITY, f64::min);
    if n > 0 && ((sum - 1.0).abs() > 1e-12 || !(min >= 0.0)) {
        return Err(PageRankError::SeedNotNormalized { sum, min });
    }
    Ok(())
}

/// `PR' = (1 - d) seed + d (P^T PR + m seed)` where `m` is the mass held by
/// dangling nodes. Starts from `seed`; stops once the L1 change drops below
/// the tolerance or the iteration budget runs out.
pub fn personalized_pagerank(
    n: usize,
    edges: &[(usize, usize, f64)],
    seed: &[f64],
    params: PageRankParams,
) -> Result<ScoreVector, PageRankError> {
    check_seed(n, seed)?;
    let t = transition(n, edges)?;
    let d = params.damping;
    let mut pr = seed.to_vec();
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut mass = Vec::new();
    let mut converged = n == 0;
    let mut iterations = 0;
    while !converged && iterations < params.max_iterations {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (u, row) in t.rows.iter().enumerate() {
            let p = pr[u];
            if p == 0.0 {
                continue;
            }
            for &(v, w) in row {
                next[v] += p * w;
            }
        }
        let dangling: f64 = t.dangling.iter().map(|&u| pr[u]).sum();
        for v in 0..n {
            next[v] = (1.0 - d) * seed[v] + d * (next[v] + dangling * seed[v]);
        }
        let change: f64 = pr.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pr, &mut next);
        iterations += 1;
        residuals.push(change);
        mass.push(pr.iter().sum());
        converged = change < params.tolerance;
    }
    Ok(ScoreVector {
        scores: pr,
        iterations,
        converged,
        residuals,
        mass,
    })
}
