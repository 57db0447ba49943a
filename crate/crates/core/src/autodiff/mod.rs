//! Reverse-mode automatic differentiation and its finite-difference check.

mod gradcheck;
mod graph;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck};
pub use graph::{same_padding_left, BatchStats, Gradients, Graph, Var, PROB_FLOOR};
