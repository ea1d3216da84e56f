use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{read_trace, RouteRecord, RunManifest};

/// Routing records indexed by (step, layer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    width: Option<usize>,
    slices: BTreeMap<(u64, usize), Vec<RouteRecord>>,
}

impl TraceSet {
    /// Every record must list the same number of routed experts, without
    /// repeats, alongside one gate per expert.
    pub fn from_records(records: impl IntoIterator<Item = RouteRecord>) -> Result<Self> {
        let mut set = TraceSet::default();
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, r: RouteRecord) -> Result<()> {
        if r.experts.len() != r.gates.len() {
            return Err(Error::contract("record experts and gates differ in length"));
        }
        let mut ids = r.experts.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract(format!(
                "record at step {} layer {} repeats an expert",
                r.step, r.layer
            )));
        }
        match self.width {
            None => self.width = Some(r.experts.len()),
            Some(w) if w != r.experts.len() => {
                return Err(Error::contract(format!(
                    "record lists {} experts, trace set width is {w}",
                    r.experts.len()
                )))
            }
            _ => {}
        }
        self.slices.entry((r.step, r.layer)).or_default().push(r);
        Ok(())
    }

    /// All traces listed in a run directory's manifest.
    pub fn load_run(run_dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(run_dir)?;
        let mut set = TraceSet::default();
        for t in &manifest.traces {
            for r in read_trace(&run_dir.join(&t.path))? {
                set.push(r)?;
            }
        }
        Ok(set)
    }

    /// Routed experts per record; `None` for an empty set.
    pub fn width(&self) -> Option<usize> {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.slices.keys().copied()
    }

    pub fn steps(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.slices.keys().map(|k| k.0).collect();
        s.dedup();
        s
    }

    pub fn layers(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.slices.keys().map(|k| k.1).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn final_step(&self) -> Option<u64> {
        self.slices.keys().map(|k| k.0).max()
    }

    pub fn contains(&self, step: u64, layer: usize) -> bool {
        self.slices.contains_key(&(step, layer))
    }

    /// Records at one (step, layer); the error lists what is available.
    pub fn slice(&self, step: u64, layer: usize) -> Result<&[RouteRecord]> {
        self.slices
            .get(&(step, layer))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                let avail: Vec<String> = self
                    .keys()
                    .map(|(s, l)| format!("(layer {l}, step {s})"))
                    .collect();
                Error::Undefined(format!(
                    "no trace for layer {layer} at step {step}; available: {}",
                    if avail.is_empty() { "none".into() } else { avail.join(", ") }
                ))
            })
    }

    /// Occurrences of each token id at one (step, layer).
    pub fn token_counts(&self, step: u64, layer: usize) -> Result<BTreeMap<usize, u64>> {
        let mut counts = BTreeMap::new();
        for r in self.slice(step, layer)? {
            *counts.entry(r.token).or_insert(0) += 1;
        }
        Ok(counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, layer: usize, pos: usize, token: usize, experts: &[usize]) -> RouteRecord {
        RouteRecord {
            step,
            layer,
            seq: 0,
            pos,
            token,
            gates: (0..experts.len()).map(|i| 1.0 / (i + 2) as f64).collect(),
            experts: experts.to_vec(),
        }
    }

    #[test]
    fn width_and_repeats_are_checked() {
        assert!(TraceSet::from_records([rec(1, 0, 0, 1, &[0, 1]), rec(1, 0, 1, 1, &[2])]).is_err());
        assert!(TraceSet::from_records([rec(1, 0, 0, 1, &[3, 3])]).is_err());
    }

    #[test]
    fn missing_slice_lists_available_pairs() {
        let ts = TraceSet::from_records([rec(5, 1, 0, 1, &[0])]).unwrap();
        let err = ts.slice(6, 1).unwrap_err().to_string();
        assert!(err.contains("(layer 1, step 5)"), "{err}");
        assert_eq!(ts.final_step(), Some(5));
    }

    #[test]
    fn token_counts_match_multiplicities() {
        let ts = TraceSet::from_records([
            rec(1, 0, 0, 4, &[0]),
            rec(1, 0, 1, 4, &[1]),
            rec(1, 0, 2, 9, &[0]),
        ])
        .unwrap();
        assert_eq!(ts.token_counts(1, 0).unwrap(), BTreeMap::from([(4, 2), (9, 1)]));
    }
}
