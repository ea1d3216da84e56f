//! Specialization, co-activation and saturation over routed experts.

use std::collections::{BTreeMap, BTreeSet};

use super::traces::TraceSet;
use crate::error::{Error, Result};
use crate::trainer::RouteRecord;

/// Fraction of the occurrences of `token` that were routed to `expert`.
pub fn specialization(
    traces: &TraceSet,
    layer: usize,
    step: u64,
    token: usize,
    expert: usize,
) -> Result<f64> {
    let (mut hits, mut seen) = (0u64, 0u64);
    for r in traces.slice(step, layer)? {
        if r.token == token {
            seen += 1;
            hits += r.experts.contains(&expert) as u64;
        }
    }
    if seen == 0 {
        return Err(Error::Undefined(format!(
            "token {token} does not occur at layer {layer}, step {step}"
        )));
    }
    Ok(hits as f64 / seen as f64)
}

/// Per-token (hits of `expert`, occurrences).
fn token_hits(records: &[RouteRecord], expert: usize) -> BTreeMap<usize, (u64, u64)> {
    let mut m: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = m.entry(r.token).or_default();
        e.0 += r.experts.contains(&expert) as u64;
        e.1 += 1;
    }
    m
}

/// The `n` tokens most specialized to `expert`, ties by ascending token id.
/// Tokens never routed to the expert are not listed.
pub fn top_specialized_tokens(
    traces: &TraceSet,
    layer: usize,
    step: u64,
    expert: usize,
    n: usize,
) -> Result<Vec<usize>> {
    let mut scored: Vec<(usize, u64, u64)> = token_hits(traces.slice(step, layer)?, expert)
        .into_iter()
        .filter(|(_, (hits, _))| *hits > 0)
        .map(|(t, (h, s))| (t, h, s))
        .collect();
    // compare h1/s1 with h2/s2 exactly by cross-multiplying
    scored.sort_by(|a, b| (b.1 * a.2).cmp(&(a.1 * b.2)).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(n).map(|(t, _, _)| t).collect())
}

/// Activation counts per expert and co-selection counts per ordered pair.
#[derive(Debug, Clone, Default)]
pub struct PairCounts {
    pub active: BTreeMap<usize, u64>,
    pub pairs: BTreeMap<(usize, usize), u64>,
}

impl PairCounts {
    pub fn from_records(records: &[RouteRecord]) -> Self {
        let mut c = PairCounts::default();
        for r in records {
            for &i in &r.experts {
                *c.active.entry(i).or_insert(0) += 1;
                for &j in &r.experts {
                    if i != j {
                        *c.pairs.entry((i, j)).or_insert(0) += 1;
                    }
                }
            }
        }
        c
    }

    pub fn score(&self, i: usize, j: usize) -> Option<f64> {
        let ni = *self.active.get(&i)?;
        let both = if i == j {
            ni
        } else {
            self.pairs.get(&(i, j)).copied().unwrap_or(0)
        };
        Some(both as f64 / ni as f64)
    }
}

/// Share of the records selecting `i` that also select `j`.
pub fn coactivation(traces: &TraceSet, layer: usize, step: u64, i: usize, j: usize) -> Result<f64> {
    let (mut with_i, mut both) = (0u64, 0u64);
    for r in traces.slice(step, layer)? {
        if r.experts.contains(&i) {
            with_i += 1;
            both += r.experts.contains(&j) as u64;
        }
    }
    if with_i == 0 {
        return Err(Error::Undefined(format!(
            "expert {i} is never selected at layer {layer}, step {step}"
        )));
    }
    Ok(both as f64 / with_i as f64)
}

/// Pairwise co-activation among a subset of experts; `scores[a][b]` is the
/// score from `experts[a]` to `experts[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub experts: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
    /// Fewer experts were active than requested.
    pub truncated: bool,
}

impl Heatmap {
    /// Largest off-diagonal entry, if there are at least two experts.
    pub fn peak(&self) -> Option<f64> {
        let n = self.experts.len();
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| self.scores[a][b])
            .reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_expert,col_expert,score\n");
        for (a, &i) in self.experts.iter().enumerate() {
            for (b, &j) in self.experts.iter().enumerate() {
                out.push_str(&format!("{i},{j},{}\n", self.scores[a][b]));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("row_expert,col_expert,score") {
            return Err(Error::Parse {
                offset: 0,
                detail: "expected header row_expert,col_expert,score".into(),
            });
        }
        let mut cells = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for (n, line) in lines.enumerate() {
            let bad = |d: &str| Error::Contract(format!("heatmap line {}: {d}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad("expected 3 fields"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("bad row id"))?;
            let j: usize = f[1].parse().map_err(|_| bad("bad column id"))?;
            let s: f64 = f[2].parse().map_err(|_| bad("bad score"))?;
            ids.insert(i);
            cells.insert((i, j), s);
        }
        let experts: Vec<usize> = ids.into_iter().collect();
        let scores = experts
            .iter()
            .map(|&i| {
                experts
                    .iter()
                    .map(|&j| {
                        cells
                            .get(&(i, j))
                            .copied()
                            .ok_or_else(|| Error::Contract(format!("heatmap misses cell ({i},{j})")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Heatmap {
            experts,
            scores,
            truncated: false,
        })
    }
}

/// The `n` active experts with the highest best off-diagonal score (ties by
/// ascending id), labelled in ascending id order.
pub fn coactivation_heatmap(traces: &TraceSet, layer: usize, step: u64, n: usize) -> Result<Heatmap> {
    let counts = PairCounts::from_records(traces.slice(step, layer)?);
    let active: Vec<usize> = counts.active.keys().copied().collect();
    let best = |i: usize| {
        active
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| counts.score(i, j).expect("i is active"))
            .fold(0.0, f64::max)
    };
    let mut ranked: Vec<(usize, f64)> = active.iter().map(|&i| (i, best(i))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut experts: Vec<usize> = ranked.iter().take(n).map(|r| r.0).collect();
    experts.sort_unstable();
    let scores = experts
        .iter()
        .map(|&i| {
            experts
                .iter()
                .map(|&j| counts.score(i, j).expect("i is active"))
                .collect()
        })
        .collect();
    Ok(Heatmap {
        truncated: active.len() < n,
        experts,
        scores,
    })
}

/// The `k` highest-gate experts of a record, ties by ascending id.
fn top_k_experts(r: &RouteRecord, k: usize) -> BTreeSet<usize> {
    let mut pairs: Vec<(usize, f64)> = r.experts.iter().copied().zip(r.gates.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.into_iter().take(k).map(|p| p.0).collect()
}

fn aligned(records: &[RouteRecord]) -> Vec<&RouteRecord> {
    let mut v: Vec<&RouteRecord> = records.iter().collect();
    v.sort_by_key(|r| (r.seq, r.pos));
    v
}

/// Mean share of a token's top-`k_eval` experts at `step` that are also
/// among its top-`k_eval` at `final_step`. When `k_eval` exceeds the traced
/// width, every traced expert is compared and the width is the divisor.
pub fn saturation(
    traces: &TraceSet,
    layer: usize,
    step: u64,
    final_step: u64,
    k_eval: usize,
) -> Result<f64> {
    if k_eval == 0 {
        return Err(Error::contract("k_eval must be positive"));
    }
    let a = aligned(traces.slice(step, layer)?);
    let b = aligned(traces.slice(final_step, layer)?);
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "step {step} traces {} tokens, step {final_step} traces {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Undefined("empty trace slice".into()));
    }
    let k = k_eval.min(traces.width().unwrap_or(0));
    if k == 0 {
        return Err(Error::Undefined("records list no routed experts".into()));
    }
    let mut overlap = 0usize;
    for (x, y) in a.iter().zip(&b) {
        if (x.seq, x.pos, x.token) != (y.seq, y.pos, y.token) {
            return Err(Error::contract(format!(
                "token sets differ: step {step} has token {} at ({}, {}), step {final_step} has token {} at ({}, {})",
                x.token, x.seq, x.pos, y.token, y.seq, y.pos
            )));
        }
        overlap += top_k_experts(x, k).intersection(&top_k_experts(y, k)).count();
    }
    // one division keeps the mean independent of summation order
    Ok(overlap as f64 / (k * a.len()) as f64)
}
