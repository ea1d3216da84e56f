//! Dense `f64` tensors and a recording graph for reverse-mode gradients.

mod array;
pub mod gradcheck;
mod graph;
mod kernels;

pub use array::Tensor;
pub use graph::{Gradients, Graph, Var};

/// The `k` largest entries of `values`, ordered by descending value. Exact
/// ties go to the lower index, so the result is a pure function of the input.
pub fn top_k(values: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ascending index order among equal values
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    let picked = order.iter().map(|&i| values[i]).collect();
    (order, picked)
}
