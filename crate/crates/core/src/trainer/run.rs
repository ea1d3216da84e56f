//! The training loop and its run directory:
//!
//! ```text
//! out/
//!   manifest.json                 run summary, written after every checkpoint
//!   loss.csv                      step,lr,ce,lb,rz,total
//!   checkpoints/step_000050/      model checkpoint + validation.json
//!   traces/step_000050.jsonl      validation-batch routing
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use super::config::TrainConfig;
use super::corpus::Corpus;
use super::schedule::wsd_lr;
use super::trace::{routing_trace, write_trace, RouteRecord, ValidationBatch, VALIDATION_FILE};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelConfig, MoeTransformer, ParamStore};
use crate::objectives::{training_objective, ObjectiveConfig};
use crate::tensor::Graph;

pub const RUN_MANIFEST: &str = "manifest.json";
pub const LOSS_LOG: &str = "loss.csv";
pub const LOSS_HEADER: &str = "step,lr,ce,lb,rz,total";
const RUN_FORMAT: &str = "moelab-run-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
}

impl TrainSpec {
    pub fn toy() -> Self {
        TrainSpec {
            model: ModelConfig::toy(),
            train: TrainConfig::toy(),
            objective: ObjectiveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.objective.validate()?;
        if self.train.seq_len > self.model.max_seq_len {
            return Err(Error::config("seq_len", "exceeds model max_seq_len"));
        }
        Ok(())
    }
}

/// One line of the loss log. `lb` and `rz` are layer means; both are 0 for
/// a model without MoE layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    pub lb: f64,
    pub rz: f64,
    pub total: f64,
}

impl LossRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.ce, self.lb, self.rz, self.total
        )
    }
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(Error::Row {
            path: path.to_path_buf(),
            line: 1,
            detail: format!("expected header `{LOSS_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |detail: String| Error::Row {
                path: path.to_path_buf(),
                line: i + 2,
                detail,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
            Ok(LossRow {
                step: f[0].parse().map_err(|e| bad(format!("`{}`: {e}", f[0])))?,
                lr: num(f[1])?,
                ce: num(f[2])?,
                lb: num(f[3])?,
                rz: num(f[4])?,
                total: num(f[5])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFile {
    pub step: u64,
    /// Relative to the run directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub complete: bool,
    pub total_steps: u64,
    pub steps_done: u64,
    pub seed: u64,
    pub moe_layers: Vec<usize>,
    pub n_routed: usize,
    pub k_routed: usize,
    pub train_tokens: usize,
    pub validation_tokens: usize,
    pub checkpoints: Vec<StepFile>,
    pub traces: Vec<StepFile>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST);
        let raw = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(RUN_MANIFEST);
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(RUN_MANIFEST, e))?;
        fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn final_step(&self) -> Option<u64> {
        self.checkpoints.last().map(|c| c.step)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub manifest: RunManifest,
    pub losses: Vec<LossRow>,
    pub params: ParamStore,
}

pub fn step_name(step: u64) -> String {
    format!("step_{step:06}")
}

pub fn checkpoint_dir(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("checkpoints").join(step_name(step))
}

pub fn trace_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join("traces").join(format!("{}.jsonl", step_name(step)))
}

/// Held-out tail of the corpus and the training prefix before it.
fn split_corpus<'a>(corpus: &'a Corpus, cfg: &TrainConfig) -> Result<(&'a [u32], ValidationBatch)> {
    let val_len = cfg.val_sequences * cfg.seq_len;
    if corpus.len() < val_len + cfg.seq_len + 1 {
        return Err(Error::contract(format!(
            "corpus has {} tokens; need at least {} for {} validation sequences plus one training window",
            corpus.len(),
            val_len + cfg.seq_len + 1,
            cfg.val_sequences
        )));
    }
    let (train, val) = corpus.tokens.split_at(corpus.len() - val_len);
    let sequences = val
        .chunks_exact(cfg.seq_len)
        .map(|c| c.iter().map(|&t| t as usize).collect())
        .collect();
    Ok((
        train,
        ValidationBatch {
            seq_len: cfg.seq_len,
            sequences,
        },
    ))
}

/// Train from scratch, writing checkpoints, traces and the loss log under
/// `run_dir`. `on_step` sees every logged row as it is produced.
pub fn train(
    spec: &TrainSpec,
    corpus: &Corpus,
    run_dir: &Path,
    mut on_step: impl FnMut(&LossRow),
) -> Result<TrainSummary> {
    spec.validate()?;
    let cfg = &spec.train;
    if corpus.vocab_size as usize > spec.model.vocab_size {
        return Err(Error::config(
            "vocab_size",
            format!(
                "corpus vocab {} exceeds model vocab {}",
                corpus.vocab_size, spec.model.vocab_size
            ),
        ));
    }
    let (train_tokens, validation) = split_corpus(corpus, cfg)?;
    let model = MoeTransformer::new(spec.model.clone())?;
    let mut params = ParamStore::init(&spec.model, cfg.seed)?;
    let adam_cfg = AdamConfig {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let mut adam = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let io = |p: &Path, e| Error::io(p.display().to_string(), e);
    for sub in ["checkpoints", "traces"] {
        let d = run_dir.join(sub);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| io(&d, e))?;
        }
        fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
    }
    let log_path = run_dir.join(LOSS_LOG);
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| io(&log_path, e))?);
    writeln!(log, "{LOSS_HEADER}").map_err(|e| io(&log_path, e))?;

    let mut manifest = RunManifest {
        format: RUN_FORMAT.into(),
        complete: false,
        total_steps: cfg.total_steps,
        steps_done: 0,
        seed: cfg.seed,
        moe_layers: (0..spec.model.n_layers)
            .filter(|&l| spec.model.is_moe_layer(l))
            .collect(),
        n_routed: spec.model.n_routed(),
        k_routed: spec.model.k_routed(),
        train_tokens: train_tokens.len(),
        validation_tokens: validation.sequences.len() * cfg.seq_len,
        checkpoints: Vec::new(),
        traces: Vec::new(),
    };
    let checkpoint_steps = cfg.checkpoint_steps();
    let validation_json =
        serde_json::to_vec(&validation).map_err(|e| Error::json(VALIDATION_FILE, e))?;
    let window = cfg.seq_len + 1;
    let mut losses = Vec::with_capacity(cfg.total_steps as usize);

    for step in 1..=cfg.total_steps {
        let lr = wsd_lr(step, cfg)?;
        let mut inputs = Vec::with_capacity(cfg.batch_size * cfg.seq_len);
        let mut targets = Vec::with_capacity(cfg.batch_size * cfg.seq_len);
        for _ in 0..cfg.batch_size {
            let o = rng.gen_range(0..=train_tokens.len() - window);
            let w = &train_tokens[o..o + window];
            inputs.extend(w[..cfg.seq_len].iter().map(|&t| t as usize));
            targets.extend(w[1..].iter().map(|&t| t as usize));
        }

        let mut g = Graph::new();
        let vars = params.attach(&mut g, true);
        let out = model.forward_graph(&mut g, &vars, &inputs, cfg.seq_len)?;
        let loss = training_objective(&mut g, &out, &targets, &spec.model, &spec.objective)?;
        let terms = loss.terms(&g);
        let mut grads = g.backward(loss.total)?;
        let mut by_name = BTreeMap::new();
        for (name, v) in vars.iter() {
            if let Some(t) = grads.take(v) {
                by_name.insert(name.to_string(), t);
            }
        }
        drop(g);
        clip_global_norm(&mut by_name, cfg.grad_clip);
        adam_step(&mut params, &by_name, &mut adam, lr, &adam_cfg)?;

        let row = LossRow {
            step,
            lr,
            ce: terms.ce,
            lb: terms.lb,
            rz: terms.rz,
            total: terms.total,
        };
        writeln!(log, "{}", row.to_csv()).map_err(|e| io(&log_path, e))?;
        on_step(&row);
        losses.push(row);
        manifest.steps_done = step;

        if cfg.is_trace_step(step) {
            let records = routing_trace(&model, &params, &validation, step)?;
            let path = trace_path(run_dir, step);
            write_trace(&path, &records)?;
            manifest.traces.push(StepFile {
                step,
                path: format!("traces/{}.jsonl", step_name(step)),
            });
        }
        if checkpoint_steps.contains(&step) {
            log.flush().map_err(|e| io(&log_path, e))?;
            let ck = Checkpoint {
                step,
                config: spec.model.clone(),
                params: params.clone(),
            };
            ck.save(
                &checkpoint_dir(run_dir, step),
                &[(VALIDATION_FILE, validation_json.as_slice())],
            )?;
            manifest.checkpoints.push(StepFile {
                step,
                path: format!("checkpoints/{}", step_name(step)),
            });
            manifest.save(run_dir)?;
        }
    }
    log.flush().map_err(|e| io(&log_path, e))?;
    manifest.complete = true;
    manifest.save(run_dir)?;
    Ok(TrainSummary {
        manifest,
        losses,
        params,
    })
}

/// Recompute the validation routing trace of a checkpoint from its
/// directory alone.
pub fn trace_from_checkpoint(dir: &Path) -> Result<Vec<RouteRecord>> {
    let ck = Checkpoint::load(dir)?;
    let path = dir.join(VALIDATION_FILE);
    let raw = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let batch: ValidationBatch =
        serde_json::from_slice(&raw).map_err(|e| Error::json(path.display().to_string(), e))?;
    let model = MoeTransformer::new(ck.config)?;
    routing_trace(&model, &ck.params, &batch, ck.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::corpus::synthetic_corpus;
    use crate::trainer::trace::read_trace;

    fn quick_spec() -> TrainSpec {
        TrainSpec {
            train: TrainConfig {
                batch_size: 2,
                seq_len: 8,
                total_steps: 20,
                checkpoint_count: 4,
                trace_cadence: 3,
                val_sequences: 2,
                ..TrainConfig::toy()
            },
            ..TrainSpec::toy()
        }
    }

    #[test]
    fn run_directory_contract() {
        let spec = quick_spec();
        let corpus = synthetic_corpus(64, 400, 0.9, 1);
        let dir = tempfile::tempdir().unwrap();
        let mut seen = 0;
        let summary = train(&spec, &corpus, dir.path(), |_| seen += 1).unwrap();
        assert_eq!(seen, 20);

        let m = RunManifest::load(dir.path()).unwrap();
        assert!(m.complete);
        assert_eq!(m, summary.manifest);
        let ck: Vec<u64> = m.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(ck, vec![5, 10, 15, 20]);
        let tr: Vec<u64> = m.traces.iter().map(|c| c.step).collect();
        assert_eq!(tr, vec![3, 5, 6, 9, 10, 12, 15, 18, 20]);

        let rows = read_loss_log(&dir.path().join(LOSS_LOG)).unwrap();
        assert_eq!(rows.len(), 20);
        assert_eq!(rows, summary.losses);
        let obj = &spec.objective;
        for r in &rows {
            assert!((r.total - (r.ce + obj.gamma * r.lb + obj.eta * r.rz)).abs() < 1e-12);
        }

        let last = checkpoint_dir(dir.path(), 20);
        let from_file = read_trace(&trace_path(dir.path(), 20)).unwrap();
        assert_eq!(trace_from_checkpoint(&last).unwrap(), from_file);
        assert_eq!(from_file.len(), m.moe_layers.len() * m.validation_tokens);
    }

    #[test]
    fn corpus_too_small_is_a_contract_error() {
        let spec = quick_spec();
        let corpus = synthetic_corpus(64, 20, 0.9, 1);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            train(&spec, &corpus, dir.path(), |_| {}),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn corpus_vocab_must_fit_model() {
        let spec = quick_spec();
        let corpus = synthetic_corpus(65, 400, 0.9, 1);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            train(&spec, &corpus, dir.path(), |_| {}),
            Err(Error::Config { .. })
        ));
    }
}
