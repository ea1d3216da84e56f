//! Metric trajectories across checkpoints as a long-form table.

use super::metrics::{coactivation_heatmap, saturation, specialization, top_specialized_tokens};
use super::traces::TraceSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Each expert's `top_n` tokens at the final step, scored at every step.
    Specialization { top_n: usize },
    /// Largest off-diagonal co-activation among the `n` heatmap experts.
    Coactivation { n: usize },
    /// Overlap with the final step's top-`k_eval` selections.
    Saturation { k_eval: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub layer: usize,
    pub step: u64,
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gap {
    pub layer: usize,
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesTable {
    pub rows: Vec<SeriesRow>,
    pub gaps: Vec<Gap>,
}

impl SeriesTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,step,label,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.layer, r.step, r.label, r.value));
        }
        out
    }

    /// Values of one label at one layer, in step order.
    pub fn values(&self, layer: usize, label: &str) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer && r.label == label)
            .map(|r| (r.step, r.value))
            .collect()
    }
}

/// Evaluate `metric` at every requested (layer, step). The reference step
/// for specialization and saturation is the last step of the trace set.
/// Requested pairs without traces go to the gap report.
pub fn series(metric: Metric, traces: &TraceSet, layers: &[usize], steps: &[u64]) -> Result<SeriesTable> {
    let final_step = traces
        .final_step()
        .ok_or_else(|| Error::Undefined("empty trace set".into()))?;
    let mut table = SeriesTable::default();
    for &layer in layers {
        if !traces.contains(final_step, layer) {
            for &step in steps {
                table.gaps.push(Gap {
                    layer,
                    step,
                    reason: format!("no trace at reference step {final_step}"),
                });
            }
            continue;
        }
        let pinned: Vec<(usize, usize)> = match metric {
            Metric::Specialization { top_n } => {
                let n_experts = traces
                    .slice(final_step, layer)?
                    .iter()
                    .flat_map(|r| r.experts.iter().copied())
                    .max()
                    .map_or(0, |m| m + 1);
                let mut v = Vec::new();
                for e in 0..n_experts {
                    for t in top_specialized_tokens(traces, layer, final_step, e, top_n)? {
                        v.push((e, t));
                    }
                }
                v
            }
            _ => Vec::new(),
        };
        for &step in steps {
            if !traces.contains(step, layer) {
                table.gaps.push(Gap {
                    layer,
                    step,
                    reason: "no trace".into(),
                });
                continue;
            }
            let mut push = |label: String, value: f64| {
                table.rows.push(SeriesRow {
                    layer,
                    step,
                    label,
                    value,
                })
            };
            match metric {
                Metric::Specialization { .. } => {
                    for &(e, t) in &pinned {
                        let v = specialization(traces, layer, step, t, e)?;
                        push(format!("expert={e};token={t}"), v);
                    }
                }
                Metric::Coactivation { n } => {
                    if let Some(p) = coactivation_heatmap(traces, layer, step, n)?.peak() {
                        push("peak".into(), p);
                    }
                }
                Metric::Saturation { k_eval } => {
                    let v = saturation(traces, layer, step, final_step, k_eval)?;
                    push(format!("k={k_eval}"), v);
                }
            }
        }
    }
    Ok(table)
}
