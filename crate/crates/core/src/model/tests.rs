use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prep::value_columns;
use super::*;
use crate::corpus::{harvest_vocab, Category, Example, Generator};
use crate::edits::{AddValue, EditAction, OpKind};
use crate::grammar::{parse_grammar, Grammar, Symbol};
use crate::nn::gradcheck::grad_check;
use crate::nn::{Tape, Tensor};
use crate::oracle::gold_script;
use crate::sexpr::parse_tree;
use crate::tree::{SubtreeMemory, Tree};

fn minilang() -> Arc<Grammar> {
    Arc::new(Grammar::minilang())
}

fn examples(n: usize, seed: u64) -> Vec<Example> {
    let mut g = Generator::new(minilang(), seed);
    (0..n).map(|i| g.example(Category::SHIPPED[i % Category::SHIPPED.len()])).collect()
}

fn editor(config: EditorConfig, exs: &[Example], seed: u64) -> Editor<f64> {
    let g = minilang();
    let vocab = Vocab::new(&g, &harvest_vocab(exs));
    Editor::new(config, g, vocab, &mut ChaCha8Rng::seed_from_u64(seed))
}

struct Prepped {
    ep: Episode,
    mem: MemoryInfo,
}

fn prep(e: &Editor<f64>, src: &Tree, script: &[EditAction], strict: bool) -> Prepped {
    let memory = SubtreeMemory::new(src);
    let mem = MemoryInfo::new(&memory);
    let ep = Episode::from_script(src, script, &e.vocab, &memory, &mem, strict).unwrap();
    Prepped { ep, mem }
}

fn prep_gold(e: &Editor<f64>, ex: &Example) -> Prepped {
    let script = gold_script(&ex.src, &ex.tgt, Some(e.vocab.tokens())).unwrap();
    prep(e, &ex.src, &script, true)
}

fn sample(p: &Prepped) -> Sample<'_> {
    Sample { enc: &p.ep, memory: &p.mem, dec: None, supervise_from: 0 }
}

#[test]
fn encoder_shapes_follow_the_config() {
    let exs = examples(4, 1);
    let e = editor(EditorConfig::default(), &exs, 0);
    let src = parse_tree(&minilang(), r#"(Assign (Name "x") (BinOp (Name "i") (Add) (Num "1")))"#).unwrap();
    assert_eq!(src.len(), 9);
    let mem = MemoryInfo::new(&SubtreeMemory::new(&src));
    let st = StepTree::new(&src, &e.vocab, &mem);
    let mut t = Tape::new(&e.store);
    let (h, pooled) = e.encode_for_test(&mut t, &[&st]);
    assert_eq!(t.shape(h), (9, 128));
    assert_eq!(t.shape(pooled), (1, 128));
    let f = e.encode_edit(&prep_gold(&e, &exs[0]).ep, &prep_gold(&e, &exs[0]).mem);
    assert_eq!(f.shape(), (1, 512));
}

#[test]
fn pooled_vector_is_the_mean_of_node_vectors() {
    let exs = examples(2, 2);
    let e = editor(EditorConfig::tiny(), &exs, 1);
    let p = prep_gold(&e, &exs[0]);
    let mut t = Tape::new(&e.store);
    let (h, pooled) = e.encode_for_test(&mut t, &[&p.ep.trees[0]]);
    let hv = t.value(h);
    for c in 0..hv.cols() {
        let mean = (0..hv.rows()).map(|r| hv.get(r, c)).sum::<f64>() / hv.rows() as f64;
        assert!((mean - t.value(pooled).get(0, c)).abs() < 1e-12);
    }
}

/// A grammar whose only tree is a single childless root.
fn leaf_grammar() -> Arc<Grammar> {
    Arc::new(parse_grammar("root s;\ns = Leaf()\n").unwrap())
}

#[test]
fn single_node_tree_is_its_gru_updated_embedding() {
    let g = leaf_grammar();
    let vocab = Vocab::new(&g, &[]);
    let e: Editor<f64> = Editor::new(EditorConfig::tiny(), g.clone(), vocab, &mut ChaCha8Rng::seed_from_u64(5));
    let tree = parse_tree(&g, "(Leaf)").unwrap();
    let mem = MemoryInfo::new(&SubtreeMemory::new(&tree));
    let st = StepTree::new(&tree, &e.vocab, &mem);
    assert!(st.edges.is_empty());
    let mut t = Tape::new(&e.store);
    let (h, pooled) = e.encode_for_test(&mut t, &[&st]);
    // Reference: GRU steps fed the message bias (the message of no edges).
    let mut u = Tape::new(&e.store);
    let emb = u.param(e.store.id("emb.rule").unwrap());
    let mut x = u.slice_rows(emb, 0, 1);
    let msg_b = u.param(e.store.id("ggnn.msg.b").unwrap());
    let gru = crate::nn::cells::Gru {
        wx: e.store.id("ggnn.gru.wx").unwrap(),
        wh: e.store.id("ggnn.gru.wh").unwrap(),
        bx: e.store.id("ggnn.gru.bx").unwrap(),
        bh: e.store.id("ggnn.gru.bh").unwrap(),
        dim: e.config.node_dim,
    };
    for _ in 0..e.config.ggnn_steps {
        x = gru.step(&mut u, msg_b, x);
    }
    assert_eq!(t.value(h), u.value(x));
    assert_eq!(t.value(pooled), u.value(x));
}

#[test]
fn completed_leaf_tree_only_allows_stop() {
    let g = leaf_grammar();
    let e: Editor<f64> = Editor::new(EditorConfig::tiny(), g.clone(), Vocab::new(&g, &[]), &mut ChaCha8Rng::seed_from_u64(0));
    let tree = parse_tree(&g, "(Leaf)").unwrap();
    let mem = MemoryInfo::new(&SubtreeMemory::new(&tree));
    let st = StepTree::new(&tree, &e.vocab, &mem);
    assert_eq!(st.op_mask(), [false, false, false, true]);
    let mut state = e.initial_state();
    let f = Tensor::zeros(1, e.config.edit_repr_dim);
    let c = e.greedy_step(&st, &mem, &f, &mut state);
    assert_eq!(c.op, OpKind::Stop);
    assert_eq!(c.op_probs, vec![0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn permuting_nodes_keeps_the_pooled_vector() {
    let exs = examples(3, 3);
    let e = editor(EditorConfig::tiny(), &exs, 2);
    let p = prep_gold(&e, &exs[1]);
    let st = &p.ep.trees[0];
    let n = st.len();
    // Reverse the row order.
    let perm: Vec<usize> = (0..n).rev().collect();
    let mut q = st.clone();
    for (old, &new) in perm.iter().enumerate() {
        q.init[new] = st.init[old];
    }
    q.edges = st.edges.iter().map(|&(s, d, ty)| (perm[s as usize] as u32, perm[d as usize] as u32, ty)).collect();
    q.edges.reverse();
    let mut t = Tape::new(&e.store);
    let (_, a) = e.encode_for_test(&mut t, &[st]);
    let (_, b) = e.encode_for_test(&mut t, &[&q]);
    for (x, y) in t.value(a).data().iter().zip(t.value(b).data()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn op_field_offers_four_productions() {
    let g = minilang();
    let vocab = Vocab::new(&g, &[]);
    let op_ty = g.find_type("op").unwrap();
    let tree = parse_tree(&g, r#"(Assign (Name "x") (Num "1"))"#).unwrap();
    let mem = MemoryInfo::new(&SubtreeMemory::new(&tree));
    let cols = value_columns(&g, &vocab, &mem, OpKind::Add, Symbol::Type(op_ty));
    assert_eq!(cols.len(), 4);
    assert!(cols.iter().all(|&c| g.production(crate::grammar::ProdId(c)).head == op_ty));
}

#[test]
fn head_distributions_are_normalized_over_legal_support() {
    let exs = examples(8, 4);
    let e = editor(EditorConfig::tiny(), &exs, 3);
    for ex in &exs {
        let p = prep_gold(&e, ex);
        let f = e.encode_edit(&p.ep, &p.mem);
        let mut r = Rollout::new(&e, &ex.src, f);
        for _ in 0..3 {
            if r.done() {
                break;
            }
            let mem = r.memory_info().clone();
            let st = StepTree::new(r.tree(), &e.vocab, &mem);
            let (a, c) = r.predict();
            let check = |p: &[f64], ok: &dyn Fn(usize) -> bool| {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.iter().enumerate().all(|(i, &x)| x >= 0.0 && (ok(i) || x == 0.0)));
            };
            let mask = st.op_mask();
            check(&c.op_probs, &|i| mask[i]);
            if c.op != OpKind::Stop {
                let ok = st.node_ok(c.op).to_vec();
                check(&c.node_probs, &|i| ok[i]);
            }
            r.execute(&a).unwrap();
        }
    }
}

#[test]
fn untrained_rollouts_terminate_with_valid_trees() {
    let exs = examples(16, 5);
    let e = editor(EditorConfig::tiny(), &exs, 4);
    for ex in &exs {
        let p = prep_gold(&e, ex);
        let f = e.encode_edit(&p.ep, &p.mem);
        let mut r = Rollout::new(&e, &ex.src, f);
        while !r.done() {
            let (a, _) = r.predict();
            r.execute(&a).unwrap();
            if a != EditAction::Stop {
                r.tree().validate().unwrap();
            }
        }
        assert!(r.script().len() <= 70);
        let res = r.finish();
        if res.stopped {
            assert_eq!(res.script.last(), Some(&EditAction::Stop));
        }
    }
}

#[test]
fn stop_only_script_encodes_deterministically() {
    let exs = examples(2, 6);
    let e = editor(EditorConfig::default(), &exs, 7);
    let p = prep(&e, &exs[0].src, &[EditAction::Stop], true);
    let a = e.encode_edit(&p.ep, &p.mem);
    let b = e.encode_edit(&p.ep, &p.mem);
    assert_eq!(a.shape(), (1, 512));
    assert_eq!(a, b);
}

#[test]
fn one_changed_value_changes_the_edit_vector() {
    let g = minilang();
    let src = parse_tree(&g, r#"(Assign (Name "x") (BinOp (Name "i") (Add) (Num "1")))"#).unwrap();
    let oper = src.preorder()[6];
    let del = EditAction::Delete(oper);
    let mut collisions = 0;
    for seed in 0..100 {
        let ident = g.find_terminal("ident").unwrap();
        let vocab = Vocab::new(&g, &[(ident, "x".into())]);
        let e: Editor<f64> = Editor::new(EditorConfig::tiny(), g.clone(), vocab, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut vecs = Vec::new();
        for ctor in ["Sub", "Mul"] {
            let p = g.find_constructor(g.find_type("op").unwrap(), ctor).unwrap();
            let memory = SubtreeMemory::new(&src);
            let after = crate::edits::apply(&src, &memory, &del).unwrap();
            let dummy = after.get(after.root()).children[1][0];
            let dummy = after.get(dummy).children[1][0];
            let add = EditAction::Add { anchor: dummy, value: AddValue::Rule(p) };
            let pr = prep(&e, &src, &[del.clone(), add, EditAction::Stop], true);
            vecs.push(e.encode_edit(&pr.ep, &pr.mem));
        }
        if vecs[0] == vecs[1] {
            collisions += 1;
        }
    }
    assert!(collisions <= 1, "{collisions} collisions");
}

#[test]
fn batching_matches_single_examples() {
    let exs = examples(5, 8);
    let e = editor(EditorConfig::tiny(), &exs, 9);
    let ps: Vec<Prepped> = exs.iter().map(|x| prep_gold(&e, x)).collect();
    let samples: Vec<Sample> = ps.iter().map(sample).collect();
    let joint = e.loss(&samples);
    let mut sum = 0.0;
    for s in &samples {
        sum += e.loss(std::slice::from_ref(s)).total();
    }
    assert!((joint.total() - sum).abs() < 1e-9 * sum.abs().max(1.0), "{} vs {sum}", joint.total());
    let pairs: Vec<(&Episode, &MemoryInfo)> = ps.iter().map(|p| (&p.ep, &p.mem)).collect();
    let many = e.encode_edits_many(&pairs);
    for (p, m) in ps.iter().zip(&many) {
        let one = e.encode_edit(&p.ep, &p.mem);
        for (a, b) in one.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn threads_do_not_change_gradients() {
    let exs = examples(6, 10);
    let e = editor(EditorConfig::tiny(), &exs, 11);
    let ps: Vec<Prepped> = exs.iter().map(|x| prep_gold(&e, x)).collect();
    let samples: Vec<Sample> = ps.iter().map(sample).collect();
    let (g1, l1) = e.batch_grads(&samples, 2, 1, None);
    let (g3, l3) = e.batch_grads(&samples, 2, 3, None);
    assert_eq!(l1, l3);
    for id in e.store.ids() {
        assert_eq!(g1.get(id), g3.get(id));
    }
}

#[test]
fn dropout_is_seeded_and_thread_independent() {
    let exs = examples(6, 10);
    let e = editor(EditorConfig::tiny(), &exs, 11);
    let ps: Vec<Prepped> = exs.iter().map(|x| prep_gold(&e, x)).collect();
    let samples: Vec<Sample> = ps.iter().map(sample).collect();
    let d = Some(Dropout { rate: 0.5, seed: 3 });
    let (g1, l1) = e.batch_grads(&samples, 2, 1, d);
    let (g3, l3) = e.batch_grads(&samples, 2, 3, d);
    assert_eq!(l1, l3);
    for id in e.store.ids() {
        assert_eq!(g1.get(id), g3.get(id));
    }
    let (_, plain) = e.batch_grads(&samples, 2, 1, None);
    let (_, zero) = e.batch_grads(&samples, 2, 1, Some(Dropout { rate: 0.0, seed: 3 }));
    assert_eq!(plain, zero);
    assert_ne!(plain, l1);
}

#[test]
fn stop_only_example_has_only_an_operator_term() {
    let exs = examples(2, 12);
    let e = editor(EditorConfig::tiny(), &exs, 13);
    let p = prep(&e, &exs[0].src, &[EditAction::Stop], true);
    let l = e.loss(&[sample(&p)]);
    assert_eq!(l.steps, 1);
    assert!(l.op > 0.0);
    assert_eq!((l.node, l.value), (0.0, 0.0));
}

#[test]
fn full_loss_passes_grad_check_on_two_examples() {
    let exs = examples(2, 14);
    let e = editor(EditorConfig::tiny(), &exs, 15);
    let ps: Vec<Prepped> = exs.iter().map(|x| prep_gold(&e, x)).collect();
    let samples: Vec<Sample> = ps.iter().map(sample).collect();
    let report = grad_check(
        &e.store,
        |t| e.loss_var_for_test(t, &samples),
        1e-5,
        Some(12),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let exs = examples(4, 16);
    let e = editor(EditorConfig::tiny(), &exs, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_editor(&path, &e).unwrap();
    let back: Editor<f64> = load_editor(&path).unwrap();
    assert_eq!(back.vocab, e.vocab);
    assert_eq!(back.meta(), e.meta());
    let p = prep_gold(&e, &exs[2]);
    assert_eq!(back.encode_edit(&p.ep, &p.mem), e.encode_edit(&p.ep, &p.mem));
    std::fs::write(&path, b"nope").unwrap();
    assert!(load_editor::<f64>(&path).is_err());
}

#[test]
fn strict_lowering_rejects_unknown_tokens() {
    let g = minilang();
    let e: Editor<f64> = Editor::new(EditorConfig::tiny(), g.clone(), Vocab::new(&g, &[]), &mut ChaCha8Rng::seed_from_u64(0));
    let src = parse_tree(&g, r#"(Assign (Name "x") (Num "1"))"#).unwrap();
    let tgt = parse_tree(&g, r#"(Assign (Name "x") (Num "2"))"#).unwrap();
    let script = gold_script(&src, &tgt, None).unwrap();
    let memory = SubtreeMemory::new(&src);
    let mem = MemoryInfo::new(&memory);
    assert!(matches!(Episode::from_script(&src, &script, &e.vocab, &memory, &mem, true), Err(PrepError::Unrepresentable { .. })));
    let lenient = Episode::from_script(&src, &script, &e.vocab, &memory, &mem, false).unwrap();
    assert!(lenient.targets.iter().any(|t| t.value == Some(ValueTarget::Token(0))));
}

proptest! {
    #[test]
    fn argmax_ignores_a_constant_shift(row in prop::collection::vec(-5.0f64..5.0, 1..12), mask_bits in any::<u16>(), shift in -100.0f64..100.0) {
        let allowed = |i: usize| i == 0 || mask_bits & (1 << (i % 16)) != 0;
        let shifted: Vec<f64> = row.iter().map(|x| x + shift).collect();
        let a = Tensor::<f64>::argmax_masked(&row, allowed);
        let b = Tensor::<f64>::argmax_masked(&shifted, allowed);
        // Shifting can only break exact ties through rounding.
        if a != b {
            let (a, b) = (a.unwrap(), b.unwrap());
            prop_assert!((row[a] - row[b]).abs() < 1e-9);
        }
    }
}

