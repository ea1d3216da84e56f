//! Routing traces as JSON Lines, one record per (token, MoE layer).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MoeTransformer, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRecord {
    pub step: u64,
    pub layer: usize,
    pub seq: usize,
    pub pos: usize,
    pub token: usize,
    /// Routed expert ids by descending gate; shared experts are omitted.
    pub experts: Vec<usize>,
    pub gates: Vec<f64>,
}

/// Fixed batch of held-out sequences routed at every trace step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationBatch {
    pub seq_len: usize,
    pub sequences: Vec<Vec<usize>>,
}

pub const VALIDATION_FILE: &str = "validation.json";

impl ValidationBatch {
    pub fn tokens(&self) -> Vec<usize> {
        self.sequences.concat()
    }
}

/// Route `batch` through the model; records come out ordered by
/// (layer, sequence, position).
pub fn routing_trace(
    model: &MoeTransformer,
    params: &ParamStore,
    batch: &ValidationBatch,
    step: u64,
) -> Result<Vec<RouteRecord>> {
    let tokens = batch.tokens();
    let (_, routing) = model.forward_batch(params, &tokens, batch.seq_len)?;
    let mut out = Vec::with_capacity(routing.len() * tokens.len());
    for (layer, r) in routing {
        for (row, &token) in tokens.iter().enumerate() {
            out.push(RouteRecord {
                step,
                layer,
                seq: row / batch.seq_len,
                pos: row % batch.seq_len,
                token,
                experts: r.selected[row].clone(),
                gates: r.selected_gates[row].clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_trace(path: &Path, records: &[RouteRecord]) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::json(ctx(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_trace(path: &Path) -> Result<Vec<RouteRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RouteRecord = serde_json::from_str(&line).map_err(|e| Error::Row {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        if rec.experts.len() != rec.gates.len() {
            return Err(Error::Row {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "experts and gates differ in length".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn trace_is_ordered_and_round_trips() {
        let cfg = ModelConfig::toy();
        let params = ParamStore::init(&cfg, 0).unwrap();
        let model = MoeTransformer::new(cfg.clone()).unwrap();
        let batch = ValidationBatch {
            seq_len: 5,
            sequences: vec![vec![1, 2, 3, 4, 5], vec![9, 8, 7, 6, 5]],
        };
        let recs = routing_trace(&model, &params, &batch, 7).unwrap();
        assert_eq!(recs.len(), cfg.n_moe_layers() * 10);
        let keys: Vec<_> = recs.iter().map(|r| (r.layer, r.seq, r.pos)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for r in &recs {
            assert_eq!(r.experts.len(), cfg.k_routed());
            assert!(r.gates.windows(2).all(|w| w[0] >= w[1]));
            assert!(r.experts.iter().all(|&e| e < cfg.n_routed()));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trace(&path, &recs).unwrap();
        assert_eq!(read_trace(&path).unwrap(), recs);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(
            &path,
            "{\"step\":1,\"layer\":1,\"seq\":0,\"pos\":0,\"token\":3,\"experts\":[2],\"gates\":[0.5]}\n{oops}\n",
        )
        .unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Row { line: 2, .. })));
    }
}
