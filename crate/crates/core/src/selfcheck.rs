//! Smoke suite behind `treedit selfcheck`: finite-difference checks of every
//! tape op and of the full training loss, and the shortest-script dynamic
//! program against exhaustive search on small random pairs.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{harvest_vocab, small_tree, Category, Generator};
use crate::grammar::Grammar;
use crate::model::{Editor, EditorConfig, Episode, MemoryInfo, Sample, Vocab};
use crate::nn::gradcheck::{op_suite, GradReport, TOL};
use crate::oracle::{brute_force_dist, gold_script, tree_shortest_dist, BruteForce};
use crate::tree::SubtreeMemory;

/// Largest tree, in non-dummy nodes, handed to the exhaustive search.
pub const SMALL_TREE_NODES: usize = 8;
/// Search depth cap; the DP distance of such pairs stays far below it.
pub const BRUTE_FORCE_CAP: u32 = 20;

#[derive(Debug, Clone)]
pub struct OracleAgreement {
    pub pairs: usize,
    pub agreed: usize,
    /// First disagreement: source, target, DP distance, search result.
    pub first_mismatch: Option<(String, String, u32, BruteForce)>,
}

/// Compares the DP distance with exhaustive search on `pairs` random pairs.
pub fn oracle_agreement(seed: u64, pairs: usize) -> OracleAgreement {
    let g = Arc::new(Grammar::minilang());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleAgreement { pairs, agreed: 0, first_mismatch: None };
    for _ in 0..pairs {
        let a = small_tree(&g, &mut rng, SMALL_TREE_NODES);
        let b = small_tree(&g, &mut rng, SMALL_TREE_NODES);
        let m = SubtreeMemory::new(&a);
        let d = tree_shortest_dist(&a, &b, &m).map(|(d, _)| d).unwrap_or(u32::MAX);
        let bf = brute_force_dist(&a, &b, &m, BRUTE_FORCE_CAP);
        if bf == BruteForce::Distance(d) {
            out.agreed += 1;
        } else if out.first_mismatch.is_none() {
            out.first_mismatch = Some((a.to_sexpr(), b.to_sexpr(), d, bf));
        }
    }
    out
}

/// Gradient check of the summed loss of two corpus examples under a tiny
/// editor.
pub fn full_loss_check(seed: u64) -> GradReport {
    let g = Arc::new(Grammar::minilang());
    let mut gen = Generator::new(g.clone(), seed);
    let exs: Vec<_> = (0..2).map(|i| gen.example(Category::SHIPPED[(seed as usize + i) % Category::SHIPPED.len()])).collect();
    let vocab = Vocab::new(&g, &harvest_vocab(&exs));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Editor<f64> = Editor::new(EditorConfig::tiny(), g, vocab, &mut rng);
    let prepped: Vec<(Episode, MemoryInfo)> = exs
        .iter()
        .map(|x| {
            let memory = SubtreeMemory::new(&x.src);
            let info = MemoryInfo::new(&memory);
            let script = gold_script(&x.src, &x.tgt, Some(e.vocab.tokens())).expect("corpus pairs are learnable");
            let ep = Episode::from_script(&x.src, &script, &e.vocab, &memory, &info, true).expect("gold scripts lower");
            (ep, info)
        })
        .collect();
    let samples: Vec<Sample> = prepped.iter().map(|(ep, info)| Sample { enc: ep, memory: info, dec: None, supervise_from: 0 }).collect();
    e.grad_check_loss(&samples, Some(12), &mut rng)
}

#[derive(Debug, Clone)]
pub struct SelfCheckReport {
    pub ops: Vec<(String, GradReport)>,
    pub full_loss: GradReport,
    pub oracle: OracleAgreement,
    pub secs: f64,
}

impl SelfCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.ops.iter().map(|(_, r)| r.max_rel_err).fold(self.full_loss.max_rel_err, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_rel_err() < TOL && self.oracle.agreed == self.oracle.pairs
    }

    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (name, r) in &self.ops {
            s.push_str(&format!("grad op={name} checked={} max_rel_err={:.3e}\n", r.checked, r.max_rel_err));
        }
        s.push_str(&format!(
            "grad op=full_loss checked={} max_rel_err={:.3e}\n",
            self.full_loss.checked, self.full_loss.max_rel_err
        ));
        s.push_str(&format!("max_rel_err={:.3e}\n", self.max_rel_err()));
        s.push_str(&format!("oracle_pairs={} oracle_agreed={}\n", self.oracle.pairs, self.oracle.agreed));
        if let Some((a, b, d, bf)) = &self.oracle.first_mismatch {
            s.push_str(&format!("oracle_mismatch src={a} tgt={b} dp={d} search={bf:?}\n"));
        }
        s.push_str(&format!("status={}\n", if self.passes() { "ok" } else { "FAIL" }));
        s
    }
}

pub fn selfcheck(seed: u64, oracle_pairs: usize) -> SelfCheckReport {
    let clock = Instant::now();
    let ops = op_suite(3);
    let full_loss = full_loss_check(seed);
    let oracle = oracle_agreement(seed, oracle_pairs);
    SelfCheckReport { ops, full_loss, oracle, secs: clock.elapsed().as_secs_f64() }
}
