mod common;

use common::model::degenerate_pair;
use moelab::model::{
    count_params, expert_forward, forward, layer_prefix, moe_forward, route, ExpertFfn,
    ModelConfig, MoeLayer, MoeTransformer, ParamStore, ParamVars, SharedGating,
};
use moelab::objectives::{training_objective, ObjectiveConfig};
use moelab::tensor::gradcheck::{check_gradients_sampled, Case};
use moelab::tensor::{Graph, Tensor};
use moelab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn small_cfg(n_experts: usize, k_active: usize, n_shared: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        hidden_size: hidden,
        dense_ffn_hidden: 6,
        moe_ffn_hidden: 5,
        n_experts,
        k_active,
        n_shared,
        n_heads: 1,
        vocab_size: 16,
        max_seq_len: 16,
        ..ModelConfig::toy()
    }
}

fn random_ffn(rng: &mut ChaCha8Rng, h: usize, f: usize) -> ExpertFfn {
    ExpertFfn {
        w_gate: random(rng, &[h, f], 0.7),
        w_up: random(rng, &[h, f], 0.7),
        w_down: random(rng, &[f, h], 0.7),
    }
}

fn random_layer(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> MoeLayer {
    let h = cfg.hidden_size;
    MoeLayer {
        router: random(rng, &[h, cfg.n_scored()], 1.0),
        shared: (0..cfg.n_shared)
            .map(|_| random_ffn(rng, h, cfg.moe_ffn_hidden))
            .collect(),
        routed: (0..cfg.n_routed())
            .map(|_| random_ffn(rng, h, cfg.moe_ffn_hidden))
            .collect(),
    }
}

// ---- straight-line reference -------------------------------------------

fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), k);
    (0..n)
        .map(|j| (0..k).map(|p| x[p] * w.data()[p * n + j]).sum())
        .collect()
}

fn naive_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn naive_rms(x: &[f64], gain: &Tensor, eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain.data()).map(|(v, g)| v * r * g).collect()
}

fn naive_ffn(x: &[f64], e: &ExpertFfn) -> Vec<f64> {
    let a = vecmat(x, &e.w_gate);
    let b = vecmat(x, &e.w_up);
    let act: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
        .collect();
    vecmat(&act, &e.w_down)
}

/// Every expert runs on every token; selection happens afterwards.
fn naive_moe_token(x: &[f64], layer: &MoeLayer, cfg: &ModelConfig) -> Vec<f64> {
    let gates = naive_softmax(&vecmat(x, &layer.router));
    let off = cfg.routed_offset();
    let all: Vec<Vec<f64>> = layer.routed.iter().map(|e| naive_ffn(x, e)).collect();
    let mut order: Vec<usize> = (0..cfg.n_routed()).collect();
    order.sort_by(|&a, &b| {
        gates[off + b]
            .partial_cmp(&gates[off + a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; x.len()];
    for (s, e) in layer.shared.iter().enumerate() {
        let w = match cfg.shared_gating {
            SharedGating::FixedUnit => 1.0,
            SharedGating::RouterScored => gates[s],
        };
        for (o, y) in out.iter_mut().zip(naive_ffn(x, e)) {
            *o += w * y;
        }
    }
    for &e in order.iter().take(cfg.k_routed()) {
        for (o, y) in out.iter_mut().zip(&all[e]) {
            *o += gates[off + e] * y;
        }
    }
    out
}

fn naive_rope(x: &mut [f64], pos: usize, cfg: &ModelConfig) {
    let dh = cfg.head_dim();
    for h in 0..cfg.n_heads {
        for i in 0..dh / 2 {
            let theta = pos as f64 * cfg.rope_base.powf(-2.0 * i as f64 / dh as f64);
            let (a, b) = (x[h * dh + 2 * i], x[h * dh + 2 * i + 1]);
            x[h * dh + 2 * i] = a * theta.cos() - b * theta.sin();
            x[h * dh + 2 * i + 1] = a * theta.sin() + b * theta.cos();
        }
    }
}

fn naive_forward(cfg: &ModelConfig, p: &ParamStore, tokens: &[usize]) -> Vec<Vec<f64>> {
    let t_len = tokens.len();
    let dh = cfg.head_dim();
    let mut h: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| p.get("embed").unwrap().row(t).to_vec())
        .collect();
    for layer in 0..cfg.n_layers {
        let pre = layer_prefix(layer);
        let w = |n: &str| p.get(&format!("{pre}.{n}")).unwrap();
        let a: Vec<Vec<f64>> = h
            .iter()
            .map(|x| naive_rms(x, w("attn_norm"), cfg.norm_eps))
            .collect();
        let mut q: Vec<Vec<f64>> = a.iter().map(|x| vecmat(x, w("attn.wq"))).collect();
        let mut k: Vec<Vec<f64>> = a.iter().map(|x| vecmat(x, w("attn.wk"))).collect();
        let v: Vec<Vec<f64>> = a.iter().map(|x| vecmat(x, w("attn.wv"))).collect();
        if cfg.rope {
            for t in 0..t_len {
                naive_rope(&mut q[t], t, cfg);
                naive_rope(&mut k[t], t, cfg);
            }
        }
        for t in 0..t_len {
            let mut att = vec![0.0; cfg.hidden_size];
            for head in 0..cfg.n_heads {
                let cols = head * dh..(head + 1) * dh;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| {
                        cols.clone().map(|c| q[t][c] * k[s][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let pr = naive_softmax(&scores);
                for (s, ps) in pr.iter().enumerate() {
                    for c in cols.clone() {
                        att[c] += ps * v[s][c];
                    }
                }
            }
            let o = vecmat(&att, w("attn.wo"));
            h[t].iter_mut().zip(o).for_each(|(x, y)| *x += y);
        }
        let moe = cfg
            .is_moe_layer(layer)
            .then(|| MoeLayer::from_store(p, layer, cfg).unwrap());
        for t in 0..t_len {
            let f = naive_rms(&h[t], w("ffn_norm"), cfg.norm_eps);
            let y = match &moe {
                Some(layer) => naive_moe_token(&f, layer, cfg),
                None => naive_ffn(
                    &f,
                    &ExpertFfn {
                        w_gate: w("ffn.w_gate").clone(),
                        w_up: w("ffn.w_up").clone(),
                        w_down: w("ffn.w_down").clone(),
                    },
                ),
            };
            h[t].iter_mut().zip(y).for_each(|(x, y)| *x += y);
        }
    }
    h.iter()
        .map(|x| vecmat(&naive_rms(x, p.get("final_norm").unwrap(), cfg.norm_eps), p.get("unembed").unwrap()))
        .collect()
}

// ---- route / moe_forward ------------------------------------------------

#[test]
fn route_selects_largest_softmax_entries_without_renormalizing() {
    let cfg = small_cfg(4, 2, 0, 2);
    let ln = |v: f64| v.ln();
    let layer = MoeLayer {
        router: Tensor::from_rows(&[vec![ln(1.0), ln(2.0), ln(3.0), ln(4.0)], vec![0.0; 4]])
            .unwrap(),
        shared: vec![],
        routed: (0..4)
            .map(|_| random_ffn(&mut ChaCha8Rng::seed_from_u64(0), 2, 5))
            .collect(),
    };
    let x = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let r = route(&x, &layer, &cfg).unwrap();
    assert_eq!(r.selected, vec![vec![3, 2]]);
    assert!((r.selected_gates[0][0] - 0.4).abs() < 1e-15);
    assert!((r.selected_gates[0][1] - 0.3).abs() < 1e-15);
    assert!((r.gates.data().iter().sum::<f64>() - 1.0).abs() < 1e-15);

    let flat = MoeLayer {
        router: Tensor::zeros(&[2, 4]),
        ..layer
    };
    let r = route(&x, &flat, &cfg).unwrap();
    assert_eq!(r.selected, vec![vec![0, 1]]);
    assert_eq!(r.selected_gates, vec![vec![0.25, 0.25]]);
}

#[test]
fn selected_gates_dominate_unselected() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = small_cfg(8, 3, 1, 4);
    let layer = random_layer(&mut rng, &cfg);
    let x = random(&mut rng, &[10, 4], 1.0);
    let r = route(&x, &layer, &cfg).unwrap();
    for t in 0..10 {
        let row = r.gates.row(t);
        let min_sel = r.selected_gates[t].iter().copied().fold(f64::INFINITY, f64::min);
        for e in 0..cfg.n_routed() {
            if !r.selected[t].contains(&e) {
                assert!(row[e] <= min_sel);
            }
        }
        for (&e, &gv) in r.selected[t].iter().zip(&r.selected_gates[t]) {
            assert_eq!(row[e], gv);
        }
    }
}

#[test]
fn single_expert_moe_is_its_ffn() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small_cfg(1, 1, 0, 4);
    let layer = random_layer(&mut rng, &cfg);
    let x = random(&mut rng, &[3, 4], 1.0);
    let (out, r) = moe_forward(&x, &layer, &cfg).unwrap();
    assert!(r.selected_gates.iter().all(|g| g == &vec![1.0]));
    assert!(out.bit_eq(&expert_forward(&x, &layer.routed[0]).unwrap()));
}

#[test]
fn all_shared_moe_sums_shared_experts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_cfg(2, 2, 2, 4);
    cfg.validate().unwrap();
    let layer = random_layer(&mut rng, &cfg);
    let x = random(&mut rng, &[3, 4], 1.0);
    let (out, r) = moe_forward(&x, &layer, &cfg).unwrap();
    assert!(r.selected.iter().all(Vec::is_empty));
    let e0 = expert_forward(&x, &layer.shared[0]).unwrap();
    let e1 = expert_forward(&x, &layer.shared[1]).unwrap();
    let want: Vec<f64> = e0.data().iter().zip(e1.data()).map(|(a, b)| a + b).collect();
    assert_eq!(out.data(), want.as_slice());
}

#[test]
fn moe_forward_matches_brute_force_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for gating in [SharedGating::FixedUnit, SharedGating::RouterScored] {
        for (n_experts, k, shared) in [(4, 2, 0), (6, 3, 2), (5, 2, 1)] {
            let cfg = ModelConfig {
                shared_gating: gating,
                ..small_cfg(n_experts, k, shared, 4)
            };
            let layer = random_layer(&mut rng, &cfg);
            let x = random(&mut rng, &[2, 4], 1.0);
            let (out, _) = moe_forward(&x, &layer, &cfg).unwrap();
            for t in 0..2 {
                let want = naive_moe_token(x.row(t), &layer, &cfg);
                for (a, b) in out.row(t).iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{gating:?} {n_experts}/{k}/{shared}");
                }
            }
        }
    }
}

#[test]
fn moe_output_equivariant_under_expert_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = small_cfg(6, 3, 1, 4);
    let layer = random_layer(&mut rng, &cfg);
    let x = random(&mut rng, &[7, 4], 1.0);
    let (out, r) = moe_forward(&x, &layer, &cfg).unwrap();

    let perm = [3, 0, 4, 1, 2];
    let n = cfg.n_routed();
    let mut router = vec![0.0; 4 * n];
    for row in 0..4 {
        for (new, &old) in perm.iter().enumerate() {
            router[row * n + new] = layer.router.data()[row * n + old];
        }
    }
    let relabeled = MoeLayer {
        router: Tensor::new(vec![4, n], router).unwrap(),
        shared: layer.shared.clone(),
        routed: perm.iter().map(|&old| layer.routed[old].clone()).collect(),
    };
    let (out2, r2) = moe_forward(&x, &relabeled, &cfg).unwrap();
    assert!(out.max_abs_diff(&out2) < 1e-12);
    for t in 0..7 {
        let mapped: Vec<usize> = r2.selected[t].iter().map(|&e| perm[e]).collect();
        assert_eq!(mapped, r.selected[t]);
    }
}

// ---- full model ---------------------------------------------------------

#[test]
fn forward_matches_straight_line_reference() {
    for gating in [SharedGating::FixedUnit, SharedGating::RouterScored] {
        let cfg = ModelConfig {
            n_layers: 2,
            hidden_size: 8,
            dense_ffn_hidden: 12,
            moe_ffn_hidden: 6,
            n_experts: 4,
            k_active: 2,
            n_shared: 1,
            n_heads: 2,
            vocab_size: 16,
            max_seq_len: 16,
            shared_gating: gating,
            init_std: 0.3,
            ..ModelConfig::toy()
        };
        let params = ParamStore::init(&cfg, 9).unwrap();
        let tokens = [3, 15, 0, 7, 7, 2, 11];
        let (logits, routing) = forward(&tokens, &cfg, &params).unwrap();
        assert_eq!(logits.shape(), &[7, 16]);
        assert_eq!(routing.len(), 1);
        assert_eq!(routing[0].0, 1);
        let want = naive_forward(&cfg, &params, &tokens);
        for t in 0..7 {
            for (a, b) in logits.row(t).iter().zip(&want[t]) {
                assert!((a - b).abs() < 1e-10, "{gating:?} t={t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn forward_is_causal() {
    let cfg = ModelConfig::toy();
    let params = ParamStore::init(&cfg, 1).unwrap();
    let tokens: Vec<usize> = (0..12).map(|i| (i * 7) % 64).collect();
    let (base, _) = forward(&tokens, &cfg, &params).unwrap();
    for p in [0, 5, 11] {
        let mut changed = tokens.clone();
        changed[p] = (changed[p] + 1) % 64;
        let (other, _) = forward(&changed, &cfg, &params).unwrap();
        for t in 0..p {
            assert!(base
                .row(t)
                .iter()
                .zip(other.row(t))
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_ne!(base.row(p), other.row(p));
    }
}

#[test]
fn forward_rejects_bad_input() {
    let cfg = ModelConfig::toy();
    let params = ParamStore::init(&cfg, 1).unwrap();
    assert!(matches!(
        forward(&[1, 64], &cfg, &params),
        Err(Error::Index { .. })
    ));
    let long = vec![0; cfg.max_seq_len + 1];
    assert!(matches!(
        forward(&long, &cfg, &params),
        Err(Error::Contract(_))
    ));
}

#[test]
fn forward_shape_for_any_length() {
    let cfg = ModelConfig::toy();
    let params = ParamStore::init(&cfg, 1).unwrap();
    for t in [1, 2, 17, 64] {
        let tokens: Vec<usize> = (0..t).map(|i| i % 64).collect();
        let (logits, _) = forward(&tokens, &cfg, &params).unwrap();
        assert_eq!(logits.shape(), &[t, 64]);
    }
}

#[test]
fn degenerate_moe_equals_dense_bit_exactly() {
    let (mc, mp, dc, dp) = degenerate_pair(5);
    let tokens: Vec<usize> = (0..20).map(|i| (i * 13 + 5) % 64).collect();
    let (a, _) = forward(&tokens, &mc, &mp).unwrap();
    let (b, routing) = forward(&tokens, &dc, &dp).unwrap();
    assert!(routing.is_empty());
    assert!(a.bit_eq(&b));
}

#[test]
fn unselected_experts_get_no_gradient() {
    let cfg = ModelConfig {
        n_experts: 8,
        k_active: 2,
        n_shared: 1,
        ..ModelConfig::toy()
    };
    let params = ParamStore::init(&cfg, 2).unwrap();
    let model = MoeTransformer::new(cfg.clone()).unwrap();
    let tokens = [1, 2, 3];
    let mut g = Graph::new();
    let vars = params.attach(&mut g, true);
    let out = model.forward_graph(&mut g, &vars, &tokens, 3).unwrap();
    let loss = training_objective(&mut g, &out, &[2, 3, 4], &cfg, &ObjectiveConfig::default())
        .unwrap();
    let grads = g.backward(loss.total).unwrap();
    let used: Vec<usize> = out.routing[0].moe.routing.selected.concat();
    let mut checked = 0;
    for e in 0..cfg.n_routed() {
        for w in ["w_gate", "w_up", "w_down"] {
            let v = vars.get(&format!("layers.01.moe.expert.{e:02}.{w}")).unwrap();
            let norm = grads
                .get(v)
                .map_or(0.0, |t| t.data().iter().map(|x| x.abs()).sum());
            if used.contains(&e) {
                assert!(norm > 0.0);
            } else {
                assert_eq!(norm, 0.0);
                checked += 1;
            }
        }
    }
    assert!(checked > 0, "every expert was selected; pick fewer tokens");
    let shared = vars.get("layers.01.moe.shared.00.w_up").unwrap();
    assert!(grads.get(shared).unwrap().data().iter().any(|&x| x != 0.0));
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        init_std: 0.2,
        ..ModelConfig::toy()
    };
    let params = ParamStore::init(&cfg, 4).unwrap();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let tokens = [4, 9, 33, 1, 60, 12, 7, 7];
    let targets = [9, 33, 1, 60, 12, 7, 7, 2];
    let model = MoeTransformer::new(cfg.clone()).unwrap();
    let case = Case::new("toy_model", inputs, |g, xs| {
        let vars = ParamVars::new(names.iter().cloned().zip(xs.iter().copied()).collect());
        let out = model.forward_graph(g, &vars, &tokens, 4)?;
        Ok(training_objective(g, &out, &targets, &cfg, &ObjectiveConfig::default())?.total)
    });
    let report = check_gradients_sampled(&case, 400, 17).unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn count_params_matches_enumeration_for_toy() {
    let cfg = ModelConfig::toy();
    let store = ParamStore::init(&cfg, 0).unwrap();
    assert_eq!(count_params(&cfg).total, store.total_len() as u64);
}
