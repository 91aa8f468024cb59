//! Grammar-constrained structural tree editing.
//!
//! Trees are edited by a small set of typed actions (delete, add, copy,
//! stop). An exact tree-edit oracle produces shortest action scripts, and a
//! neural editor learns to produce them from a tree-structured edit
//! representation.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod edits;
pub mod grammar;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod selfcheck;
pub mod sexpr;
pub mod training;
pub mod tree;

pub use grammar::{parse_grammar, Grammar};
pub use sexpr::parse_tree;
pub use tree::{structural_eq, subtree_memory, NodeId, Tree};

/// Parameters and tensors in double precision, the default for training.
pub type Editor64 = model::Editor<f64>;
/// Single-precision editor, for speed where tolerances allow.
pub type Editor32 = model::Editor<f32>;

/// Maps `f` over `items` on up to `threads` scoped threads. Results keep
/// input order, so output never depends on the thread count.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|k| s.spawn(move || items.iter().enumerate().skip(k).step_by(threads).map(|(i, x)| (i, f(x))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every index mapped")).collect()
}
