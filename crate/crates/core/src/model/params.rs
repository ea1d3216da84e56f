use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub fn layer_prefix(layer: usize) -> String {
    format!("layers.{layer:02}")
}

/// Names and shapes of every parameter array, in a fixed order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, v) = (cfg.hidden_size, cfg.vocab_size);
    let mut out = vec![("embed".to_string(), vec![v, h])];
    let ffn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, width: usize| {
        out.push((format!("{prefix}.w_gate"), vec![h, width]));
        out.push((format!("{prefix}.w_up"), vec![h, width]));
        out.push((format!("{prefix}.w_down"), vec![width, h]));
    };
    for layer in 0..cfg.n_layers {
        let p = layer_prefix(layer);
        out.push((format!("{p}.attn_norm"), vec![h]));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{p}.attn.{w}"), vec![h, h]));
        }
        out.push((format!("{p}.ffn_norm"), vec![h]));
        if cfg.is_moe_layer(layer) {
            out.push((format!("{p}.moe.router"), vec![h, cfg.n_scored()]));
            for s in 0..cfg.n_shared {
                ffn(&mut out, &format!("{p}.moe.shared.{s:02}"), cfg.moe_ffn_hidden);
            }
            for e in 0..cfg.n_routed() {
                ffn(&mut out, &format!("{p}.moe.expert.{e:02}"), cfg.moe_ffn_hidden);
            }
        } else {
            ffn(&mut out, &format!("{p}.ffn"), cfg.dense_ffn_hidden);
        }
    }
    out.push(("final_norm".to_string(), vec![h]));
    out.push(("unembed".to_string(), vec![h, v]));
    out
}

/// Stable 64-bit seed for one named parameter.
pub fn param_seed(name: &str, seed: u64) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer mixed with the run seed
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = hash ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named parameter arrays of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    /// Norm gains start at one; every other array is drawn from a normal
    /// distribution truncated at three standard deviations.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let std = cfg.init_std;
        let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::config("init_std", e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (name, shape) in param_shapes(cfg) {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("norm") {
                vec![1.0; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(param_seed(&name, seed));
                (0..n)
                    .map(|_| loop {
                        let x: f64 = normal.sample(&mut rng);
                        if x.abs() <= 3.0 * std {
                            break x;
                        }
                    })
                    .collect()
            };
            entries.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ParamStore { entries })
    }

    pub fn from_entries(entries: BTreeMap<String, Tensor>) -> Self {
        ParamStore { entries }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Register every array as a graph leaf.
    pub fn attach(&self, g: &mut Graph, requires_grad: bool) -> ParamVars {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), g.leaf(t.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Graph handles for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn new(vars: BTreeMap<String, Var>) -> Self {
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::count_params;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig::toy();
        let a = ParamStore::init(&cfg, 7).unwrap();
        let b = ParamStore::init(&cfg, 7).unwrap();
        let c = ParamStore::init(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (name, t) in a.iter() {
            if name.ends_with("norm") {
                assert!(t.data().iter().all(|&v| v == 1.0));
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= 0.06));
            }
        }
    }

    #[test]
    fn seeds_differ_per_name() {
        assert_ne!(param_seed("embed", 0), param_seed("unembed", 0));
        assert_ne!(param_seed("embed", 0), param_seed("embed", 1));
    }

    #[test]
    fn shape_enumeration_matches_count() {
        for cfg in [
            ModelConfig::toy(),
            ModelConfig {
                n_experts: 1,
                k_active: 1,
                n_shared: 0,
                ..ModelConfig::toy()
            },
            ModelConfig {
                shared_gating: crate::model::SharedGating::RouterScored,
                ..ModelConfig::toy()
            },
        ] {
            let store = ParamStore::init(&cfg, 0).unwrap();
            let total = store.total_len() as u64;
            // group expert arrays by their owning expert
            let mut experts: BTreeMap<String, u64> = BTreeMap::new();
            let mut non_expert = 0u64;
            for (name, t) in store.iter() {
                if name.contains(".moe.expert.") || name.contains(".moe.shared.") {
                    let owner = name.rsplit_once('.').unwrap().0.to_string();
                    *experts.entry(owner).or_default() += t.len() as u64;
                } else {
                    non_expert += t.len() as u64;
                }
            }
            assert_eq!(experts.len(), cfg.n_experts * cfg.n_moe_layers());
            let sizes: Vec<u64> = experts.values().copied().collect();
            assert!(sizes.windows(2).all(|w| w[0] == w[1]));
            let active = non_expert + sizes[0] * (cfg.k_active * cfg.n_moe_layers()) as u64;
            assert_eq!(count_params(&cfg), crate::model::ParamCount { total, active });
        }
    }
}
