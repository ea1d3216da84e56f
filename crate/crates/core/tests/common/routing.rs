//! Random traces and brute-force recounts of the routing metrics, built on
//! dense indicator matrices rather than the library's count maps.

use std::collections::HashMap;

use moelab::trainer::RouteRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomTrace {
    pub records: Vec<RouteRecord>,
    pub n_experts: usize,
    pub width: usize,
    pub steps: Vec<u64>,
    pub layers: Vec<usize>,
}

/// At most 1000 records; every (step, layer) routes the same tokens.
pub fn random_trace(seed: u64) -> RandomTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_experts = rng.gen_range(2..=16);
    let width = rng.gen_range(1..=n_experts.min(8));
    let n_steps = rng.gen_range(1..=3);
    let layers: Vec<usize> = (0..rng.gen_range(1..=2)).map(|l| l + 1).collect();
    let steps: Vec<u64> = (1..=n_steps).map(|s| s * 10).collect();
    let per_slice = 1000 / (n_steps as usize * layers.len());
    let n_tokens = rng.gen_range(1..=per_slice);
    let vocab = rng.gen_range(1..=20);
    let seqs = rng.gen_range(1..=4);
    let tokens: Vec<usize> = (0..n_tokens).map(|_| rng.gen_range(0..vocab)).collect();
    // skew routing so some experts are rare or absent
    let weights: Vec<f64> = (0..n_experts).map(|_| rng.gen::<f64>().powi(3)).collect();
    let mut records = Vec::new();
    for &step in &steps {
        for &layer in &layers {
            for (i, &token) in tokens.iter().enumerate() {
                let mut ids: Vec<usize> = (0..n_experts).collect();
                ids.shuffle(&mut rng);
                ids.sort_by(|&a, &b| {
                    (weights[b] * rng.gen::<f64>()).total_cmp(&(weights[a] * rng.gen::<f64>()))
                });
                ids.truncate(width);
                let mut gates: Vec<f64> = (0..width).map(|_| rng.gen_range(0.0..1.0)).collect();
                gates.sort_by(|a, b| b.total_cmp(a));
                records.push(RouteRecord {
                    step,
                    layer,
                    seq: i % seqs,
                    pos: i / seqs,
                    token,
                    experts: ids,
                    gates,
                });
            }
        }
    }
    RandomTrace {
        records,
        n_experts,
        width,
        steps,
        layers,
    }
}

fn slice<'a>(records: &'a [RouteRecord], step: u64, layer: usize) -> Vec<&'a RouteRecord> {
    records
        .iter()
        .filter(|r| r.step == step && r.layer == layer)
        .collect()
}

/// Row per record, column per expert.
fn indicators(records: &[&RouteRecord], n_experts: usize) -> Vec<Vec<u8>> {
    records
        .iter()
        .map(|r| {
            let mut row = vec![0u8; n_experts];
            for &e in &r.experts {
                row[e] = 1;
            }
            row
        })
        .collect()
}

pub fn brute_specialization(
    records: &[RouteRecord],
    n_experts: usize,
    step: u64,
    layer: usize,
    token: usize,
    expert: usize,
) -> Option<f64> {
    let s = slice(records, step, layer);
    let ind = indicators(&s, n_experts);
    let rows: Vec<usize> = (0..s.len()).filter(|&i| s[i].token == token).collect();
    if rows.is_empty() {
        return None;
    }
    let hits: u32 = rows.iter().map(|&i| ind[i][expert] as u32).sum();
    Some(hits as f64 / rows.len() as f64)
}

pub fn brute_coactivation(
    records: &[RouteRecord],
    n_experts: usize,
    step: u64,
    layer: usize,
    i: usize,
    j: usize,
) -> Option<f64> {
    let s = slice(records, step, layer);
    let ind = indicators(&s, n_experts);
    let ni: u32 = ind.iter().map(|r| r[i] as u32).sum();
    if ni == 0 {
        return None;
    }
    let nij: u32 = ind.iter().map(|r| (r[i] * r[j]) as u32).sum();
    Some(nij as f64 / ni as f64)
}

pub fn brute_saturation(
    records: &[RouteRecord],
    step: u64,
    final_step: u64,
    layer: usize,
    k: usize,
) -> f64 {
    let top = |r: &RouteRecord| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..r.experts.len()).collect();
        idx.sort_by(|&a, &b| {
            r.gates[b]
                .partial_cmp(&r.gates[a])
                .unwrap()
                .then(r.experts[a].cmp(&r.experts[b]))
        });
        idx.iter().take(k).map(|&i| r.experts[i]).collect()
    };
    let fin: HashMap<(usize, usize), &RouteRecord> = slice(records, final_step, layer)
        .into_iter()
        .map(|r| ((r.seq, r.pos), r))
        .collect();
    let cur = slice(records, step, layer);
    let kk = k.min(cur[0].experts.len());
    let mut common_total = 0usize;
    for r in &cur {
        let f = fin[&(r.seq, r.pos)];
        assert_eq!(f.token, r.token);
        let (a, b) = (top(r), top(f));
        let common = a.iter().filter(|e| b.contains(e)).count();
        common_total += common;
    }
    common_total as f64 / (kk * cur.len()) as f64
}
