use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prep::{value_columns, Episode, MemoryInfo, StepTree};
use super::{EditorConfig, Vocab};
use crate::edits::OpKind;
use crate::grammar::{Grammar, Symbol};
use crate::nn::cells::{BiLstm, Gru, Lstm};
use crate::nn::gradcheck::GradReport;
use crate::nn::tape::{masked_softmax, ZERO_ROW};
use crate::nn::{Grads, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

const EDGE_TYPES: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<S: Scalar, R: Rng + ?Sized>(s: &mut ParamStore<S>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
        Linear { w: s.matrix(&format!("{name}.w"), fan_in, fan_out, rng), b: s.bias(&format!("{name}.b"), fan_out) }
    }

    fn apply<S: Scalar>(&self, t: &mut Tape<S>, x: Var) -> Var {
        t.linear(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    rule_emb: ParamId,
    token_emb: ParamId,
    dummy_emb: ParamId,
    op_emb: ParamId,
    field_emb: ParamId,
    msg: Linear,
    gru: Gru,
    history: Lstm,
    op_head: Linear,
    node_head: Linear,
    value_head: Linear,
    value_bil: ParamId,
    act_stop: Linear,
    act_delete: Linear,
    act_add: Linear,
    act_copy: Linear,
    edit_lstm: BiLstm,
}

/// Network parameters with the grammar and vocabulary they were built for.
#[derive(Debug, Clone)]
pub struct Editor<S: Scalar> {
    pub config: EditorConfig,
    pub grammar: Arc<Grammar>,
    pub vocab: Vocab,
    pub store: ParamStore<S>,
    p: Params,
}

/// One training sequence. The encoder reads `enc` (a gold script with its
/// states); the decoder is teacher-forced through `dec`, or through `enc`
/// itself when `dec` is `None`. Losses count from step `supervise_from`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub enc: &'a Episode,
    pub memory: &'a MemoryInfo,
    pub dec: Option<&'a Episode>,
    pub supervise_from: usize,
}

impl Sample<'_> {
    fn decoded(&self) -> &Episode {
        self.dec.unwrap_or(self.enc)
    }
}

/// Summed cross-entropies of a batch, before any averaging.
/// Training-time inverted dropout on the edit vector and the decoder
/// states. Masks are drawn from `seed`, so a batch is reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

impl Dropout {
    fn mask<S: Scalar>(&self, rng: &mut ChaCha8Rng, (r, c): (usize, usize)) -> Tensor<S> {
        let keep = 1.0 - self.rate;
        let data = (0..r * c).map(|_| if rng.random_bool(keep) { S::c(1.0 / keep) } else { S::zero() }).collect();
        Tensor::from_vec(r, c, data)
    }

    fn apply<S: Scalar>(&self, t: &mut Tape<S>, rng: &mut ChaCha8Rng, x: Var) -> Var {
        let m = self.mask(rng, t.shape(x));
        let m = t.constant(m);
        t.mul(x, m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub op: f64,
    pub node: f64,
    pub value: f64,
    pub steps: usize,
    pub examples: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.op + self.node + self.value
    }

    /// Mean total loss per example.
    pub fn per_example(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.total() / self.examples as f64
        }
    }

    pub fn add(&mut self, o: &LossParts) {
        self.op += o.op;
        self.node += o.node;
        self.value += o.value;
        self.steps += o.steps;
        self.examples += o.examples;
    }
}

/// Greedy decision at one state plus the distributions it came from.
#[derive(Debug, Clone)]
pub struct StepChoice {
    pub op: OpKind,
    pub node: Option<usize>,
    /// Candidate column: productions, token rows, then memory entries.
    pub value: Option<usize>,
    pub op_probs: Vec<f64>,
    pub node_probs: Vec<f64>,
    pub value_probs: Vec<f64>,
}

/// Recurrent state carried between decoding steps.
#[derive(Debug, Clone)]
pub struct DecodeState<S> {
    pub h: Tensor<S>,
    pub c: Tensor<S>,
    /// Memory root encodings, taken from the first encoded tree.
    pub mem_roots: Option<Tensor<S>>,
}

struct Encoded {
    h: Var,
    pooled: Var,
    offsets: Vec<usize>,
}

impl<S: Scalar> Editor<S> {
    pub fn new<R: Rng + ?Sized>(config: EditorConfig, grammar: Arc<Grammar>, vocab: Vocab, rng: &mut R) -> Editor<S> {
        config.validate().expect("valid editor config");
        let c = &config;
        let d = c.node_dim;
        let mut s = ParamStore::new();
        let st = &mut s;
        let p = Params {
            rule_emb: st.embedding("emb.rule", vocab.prod_count(), c.rule_emb_dim, rng),
            token_emb: st.embedding("emb.token", vocab.token_rows(), d, rng),
            dummy_emb: st.embedding("emb.dummy", 1, d, rng),
            op_emb: st.embedding("emb.op", OpKind::ALL.len(), c.op_emb_dim, rng),
            field_emb: st.embedding("emb.field", vocab.field_rows(), c.field_emb_dim, rng),
            msg: Linear::new(st, "ggnn.msg", EDGE_TYPES * d, d, rng),
            gru: Gru::new(st, "ggnn.gru", d, rng),
            history: Lstm::new(st, "history", d + c.edit_repr_dim, c.history_dim, rng),
            op_head: Linear::new(st, "head.op", c.history_dim, OpKind::ALL.len(), rng),
            node_head: Linear::new(st, "head.node", c.history_dim + c.op_emb_dim, d, rng),
            value_head: Linear::new(st, "head.value", c.history_dim + d + c.field_emb_dim, c.value_hidden_dim, rng),
            value_bil: st.matrix("head.value.bil", c.value_hidden_dim, d, rng),
            act_stop: Linear::new(st, "act.stop", c.op_emb_dim, c.action_repr_dim, rng),
            act_delete: Linear::new(st, "act.delete", c.op_emb_dim + d + c.field_emb_dim, c.action_repr_dim, rng),
            act_add: Linear::new(st, "act.add", c.op_emb_dim + 2 * d + c.field_emb_dim, c.action_repr_dim, rng),
            act_copy: Linear::new(st, "act.copy", c.op_emb_dim + 2 * d + c.field_emb_dim, c.action_repr_dim, rng),
            edit_lstm: BiLstm::new(st, "edit", c.action_repr_dim, c.edit_enc_lstm_dim, rng),
        };
        Editor { config, grammar, vocab, store: s, p }
    }

    /// Number of candidate columns before the memory block.
    pub fn static_candidates(&self) -> usize {
        self.vocab.prod_count() + self.vocab.token_rows()
    }

    fn embed_table(&self, t: &mut Tape<S>) -> Var {
        let r = t.param(self.p.rule_emb);
        let k = t.param(self.p.token_emb);
        let d = t.param(self.p.dummy_emb);
        t.concat_rows(&[r, k, d])
    }

    /// Gated graph network over several trees at once.
    fn encode_trees(&self, t: &mut Tape<S>, trees: &[&StepTree]) -> Encoded {
        let mut init = Vec::new();
        let mut edges = Vec::new();
        let mut offsets = vec![0];
        for tr in trees {
            let base = init.len() as u32;
            init.extend_from_slice(&tr.init);
            edges.extend(tr.edges.iter().map(|&(s, d, ty)| (s + base, d + base, ty)));
            offsets.push(init.len());
        }
        let table = self.embed_table(t);
        let mut h = t.gather_rows(table, init);
        for _ in 0..self.config.ggnn_steps {
            let agg = t.edge_aggregate(h, edges.clone(), EDGE_TYPES);
            let m = self.p.msg.apply(t, agg);
            h = self.p.gru.step(t, m, h);
        }
        let pooled = t.segment_mean(h, offsets.clone());
        Encoded { h, pooled, offsets }
    }

    /// Candidate table: production embeddings, token embeddings, then the
    /// given memory roots.
    fn candidates(&self, t: &mut Tape<S>, mem_roots: Var) -> Var {
        let r = t.param(self.p.rule_emb);
        let k = t.param(self.p.token_emb);
        t.concat_rows(&[r, k, mem_roots])
    }

    /// Edit vectors for several gold episodes. `tree_base[i]` is the index
    /// of episode `i`'s first tree in `enc`; `mem_base[i]` the column of its
    /// first memory entry in `cand`.
    fn encode_edits(&self, t: &mut Tape<S>, enc: &Encoded, cand: Var, eps: &[&Episode], tree_base: &[usize], mem_base: &[usize]) -> Var {
        let c = &self.config;
        let op_emb = t.param(self.p.op_emb);
        let field_emb = t.param(self.p.field_emb);
        // Rows of each operator group, remembering where every action lands.
        let mut groups: [Vec<(usize, usize, Option<usize>)>; 4] = Default::default();
        let mut place = Vec::new();
        for (i, ep) in eps.iter().enumerate() {
            for (s, tg) in ep.targets.iter().enumerate() {
                let g = tg.op.index();
                let node = tg.node.map_or(0, |r| enc.offsets[tree_base[i] + s] + r);
                let val = tg.value.map(|v| v.column(&self.vocab, mem_base[i]));
                place.push((g, groups[g].len()));
                groups[g].push((node, tg.field, val));
            }
        }
        let mut outs = Vec::new();
        let mut starts = [0usize; 4];
        let mut total = 0;
        for op in OpKind::ALL {
            let g = &groups[op.index()];
            starts[op.index()] = total;
            if g.is_empty() {
                continue;
            }
            let ops = t.gather_rows(op_emb, vec![op.index(); if op == OpKind::Stop { 1 } else { g.len() }]);
            let out = match op {
                OpKind::Stop => {
                    let one = self.p.act_stop.apply(t, ops);
                    t.gather_rows(one, vec![0; g.len()])
                }
                _ => {
                    let n = t.gather_rows(enc.h, g.iter().map(|x| x.0).collect());
                    let f = t.gather_rows(field_emb, g.iter().map(|x| x.1).collect());
                    let lin = match op {
                        OpKind::Delete => self.p.act_delete,
                        OpKind::Add => self.p.act_add,
                        _ => self.p.act_copy,
                    };
                    let x = if op == OpKind::Delete {
                        t.concat_cols(&[ops, n, f])
                    } else {
                        let v = t.gather_rows(cand, g.iter().map(|x| x.2.expect("add/copy value")).collect());
                        t.concat_cols(&[ops, n, f, v])
                    };
                    lin.apply(t, x)
                }
            };
            total += g.len();
            outs.push(out);
        }
        let all = t.concat_rows(&outs);
        let order: Vec<usize> = place.iter().map(|&(g, k)| starts[g] + k).collect();
        let acts = t.gather_rows(all, order);
        // Batched bidirectional scan over variable-length sequences.
        let lens: Vec<usize> = eps.iter().map(|e| e.len()).collect();
        let mut base = Vec::with_capacity(eps.len());
        let mut acc = 0;
        for &l in &lens {
            base.push(acc);
            acc += l;
        }
        let b = eps.len();
        let tmax = lens.iter().copied().max().unwrap_or(0);
        let mut finals = Vec::new();
        for (dir, lstm) in [(false, self.p.edit_lstm.fwd), (true, self.p.edit_lstm.bwd)] {
            let xw = lstm.project(t, acts);
            let (mut h, mut cs) = lstm.zero_state(t, b);
            let mut hs = Vec::with_capacity(tmax);
            for tau in 0..tmax {
                let idx = (0..b)
                    .map(|i| match (tau < lens[i], dir) {
                        (false, _) => ZERO_ROW,
                        (true, false) => base[i] + tau,
                        (true, true) => base[i] + lens[i] - 1 - tau,
                    })
                    .collect();
                let x = t.gather_rows(xw, idx);
                (h, cs) = lstm.cell(t, x, h, cs);
                hs.push(h);
            }
            let stacked = t.concat_rows(&hs);
            finals.push(t.gather_rows(stacked, (0..b).map(|i| (lens[i] - 1) * b + i).collect()));
        }
        debug_assert_eq!(c.edit_repr_dim, 2 * c.edit_enc_lstm_dim);
        t.concat_cols(&finals)
    }

    /// Summed teacher-forced cross-entropy over `samples`, multiplied by
    /// `scale`, as a tape scalar.
    fn loss_var(&self, t: &mut Tape<S>, samples: &[Sample], scale: f64, dropout: Option<Dropout>) -> (Var, [Var; 3], usize) {
        let drop = dropout.filter(|d| d.rate > 0.0);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(drop.map_or(0, |d| d.seed));
        let b = samples.len();
        let mut trees: Vec<&StepTree> = Vec::new();
        let mut enc_base = Vec::with_capacity(b);
        let mut dec_base = Vec::with_capacity(b);
        for s in samples {
            enc_base.push(trees.len());
            trees.extend(s.enc.trees.iter());
            match s.dec {
                None => dec_base.push(enc_base[enc_base.len() - 1]),
                Some(d) => {
                    dec_base.push(trees.len());
                    trees.extend(d.trees.iter());
                }
            }
        }
        let enc = self.encode_trees(t, &trees);
        let mut mem_rows = Vec::new();
        let mut mem_base = Vec::with_capacity(b);
        for (i, s) in samples.iter().enumerate() {
            mem_base.push(self.static_candidates() + mem_rows.len());
            let off = enc.offsets[enc_base[i]];
            mem_rows.extend(s.memory.rows.iter().map(|&r| off + r));
        }
        let roots = t.gather_rows(enc.h, mem_rows);
        let cand = self.candidates(t, roots);
        let eps: Vec<&Episode> = samples.iter().map(|s| s.enc).collect();
        let mut f = self.encode_edits(t, &enc, cand, &eps, &enc_base, &mem_base);
        if let Some(d) = drop {
            f = d.apply(t, &mut drop_rng, f);
        }

        // History recurrence over decoded states.
        let d = self.config.node_dim;
        let hist = self.p.history;
        let wx = t.param(hist.wx);
        let wx_g = t.slice_rows(wx, 0, d);
        let wx_f = t.slice_rows(wx, d, self.config.edit_repr_dim);
        let pg = t.matmul(enc.pooled, wx_g);
        let fw = t.matmul(f, wx_f);
        let bias = t.param(hist.b);
        let fw = t.add_row(fw, bias);
        let lens: Vec<usize> = samples.iter().map(|s| s.decoded().len()).collect();
        let tmax = lens.iter().copied().max().unwrap_or(0);
        let (mut h, mut c) = hist.zero_state(t, b);
        let mut hs = Vec::with_capacity(tmax);
        for tau in 0..tmax {
            let idx = (0..b).map(|i| if tau < lens[i] { dec_base[i] + tau } else { ZERO_ROW }).collect();
            let g = t.gather_rows(pg, idx);
            let xw = t.add(g, fw);
            (h, c) = hist.cell(t, xw, h, c);
            hs.push(h);
        }
        let stacked = t.concat_rows(&hs);

        // Supervised steps in sample order.
        struct Step<'a> {
            row: usize,
            tree: &'a StepTree,
            node_off: usize,
            mem_base: usize,
            memory: &'a MemoryInfo,
            target: super::Target,
        }
        let mut steps = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let ep = s.decoded();
            for tau in s.supervise_from..ep.len() {
                steps.push(Step {
                    row: tau * b + i,
                    tree: &ep.trees[tau],
                    node_off: enc.offsets[dec_base[i] + tau],
                    mem_base: mem_base[i],
                    memory: s.memory,
                    target: ep.targets[tau],
                });
            }
        }
        let mut sv = t.gather_rows(stacked, steps.iter().map(|s| s.row).collect());
        if let Some(d) = drop {
            sv = d.apply(t, &mut drop_rng, sv);
        }

        let op_logits = self.p.op_head.apply(t, sv);
        let mut mask = Vec::with_capacity(steps.len() * 4);
        for s in &steps {
            mask.extend_from_slice(&s.tree.op_mask());
        }
        let op_loss = t.softmax_ce(op_logits, &mask, steps.iter().map(|s| s.target.op.index()).collect());

        let n_all = *enc.offsets.last().expect("offsets");
        let node_steps: Vec<usize> = (0..steps.len()).filter(|&k| steps[k].target.op != OpKind::Stop).collect();
        let node_loss = if node_steps.is_empty() {
            t.constant(Tensor::scalar(S::zero()))
        } else {
            let s_n = t.gather_rows(sv, node_steps.clone());
            let op_emb = t.param(self.p.op_emb);
            let e = t.gather_rows(op_emb, node_steps.iter().map(|&k| steps[k].target.op.index()).collect());
            let x = t.concat_cols(&[s_n, e]);
            let pre = self.p.node_head.apply(t, x);
            let q = t.tanh(pre);
            let scores = t.matmul_nt(q, enc.h);
            let mut mask = vec![false; node_steps.len() * n_all];
            let mut targets = Vec::with_capacity(node_steps.len());
            for (j, &k) in node_steps.iter().enumerate() {
                let st = &steps[k];
                for (r, &ok) in st.tree.node_ok(st.target.op).iter().enumerate() {
                    mask[j * n_all + st.node_off + r] = ok;
                }
                targets.push(st.node_off + st.target.node.expect("non-stop node"));
            }
            t.softmax_ce(scores, &mask, targets)
        };

        let val_steps: Vec<usize> = (0..steps.len()).filter(|&k| steps[k].target.value.is_some()).collect();
        let value_loss = if val_steps.is_empty() {
            t.constant(Tensor::scalar(S::zero()))
        } else {
            let s_v = t.gather_rows(sv, val_steps.clone());
            let nodes = t.gather_rows(enc.h, val_steps.iter().map(|&k| steps[k].node_off + steps[k].target.node.unwrap()).collect());
            let field_emb = t.param(self.p.field_emb);
            let fe = t.gather_rows(field_emb, val_steps.iter().map(|&k| steps[k].target.field).collect());
            let x = t.concat_cols(&[s_v, nodes, fe]);
            let pre = self.p.value_head.apply(t, x);
            let hv = t.tanh(pre);
            let bil = t.param(self.p.value_bil);
            let q = t.matmul(hv, bil);
            let scores = t.matmul_nt(q, cand);
            let ncol = t.shape(cand).0;
            let mut mask = vec![false; val_steps.len() * ncol];
            let mut targets = Vec::with_capacity(val_steps.len());
            let stat = self.static_candidates();
            for (j, &k) in val_steps.iter().enumerate() {
                let st = &steps[k];
                let row = st.target.node.unwrap();
                let acc = st.tree.accepts[row].expect("operated node has a slot");
                for col in value_columns(&self.grammar, &self.vocab, st.memory, st.target.op, acc) {
                    let col = if col >= stat { col - stat + st.mem_base } else { col };
                    mask[j * ncol + col] = true;
                }
                targets.push(st.target.value.unwrap().column(&self.vocab, st.mem_base));
            }
            t.softmax_ce(scores, &mask, targets)
        };
        let a = t.add(op_loss, node_loss);
        let total = t.add(a, value_loss);
        let scaled = t.scale(total, S::c(scale));
        (scaled, [op_loss, node_loss, value_loss], steps.len())
    }

    fn parts(t: &Tape<S>, vars: [Var; 3], steps: usize, examples: usize) -> LossParts {
        LossParts {
            op: t.scalar(vars[0]).f64(),
            node: t.scalar(vars[1]).f64(),
            value: t.scalar(vars[2]).f64(),
            steps,
            examples,
        }
    }

    /// Loss of `samples` without gradients.
    pub fn loss(&self, samples: &[Sample]) -> LossParts {
        if samples.is_empty() {
            return LossParts::default();
        }
        let mut t = Tape::new(&self.store);
        let (_, vars, steps) = self.loss_var(&mut t, samples, 1.0, None);
        Self::parts(&t, vars, steps, samples.len())
    }

    /// Gradients of `scale` times the summed loss of `samples`.
    pub fn loss_grads(&self, samples: &[Sample], scale: f64, dropout: Option<Dropout>) -> (Grads<S>, LossParts) {
        if samples.is_empty() {
            return (Grads::zeros_like(&self.store), LossParts::default());
        }
        let mut t = Tape::new(&self.store);
        let (loss, vars, steps) = self.loss_var(&mut t, samples, scale, dropout);
        let g = t.backward(loss).expect("scalar loss");
        (g, Self::parts(&t, vars, steps, samples.len()))
    }

    /// Mean-over-examples gradients of a batch. The batch is cut into fixed
    /// chunks whose gradients are summed in chunk order, so the result does
    /// not depend on `threads`. Chunk `k` draws its dropout masks from
    /// `seed + k`.
    pub fn batch_grads(&self, samples: &[Sample], chunk: usize, threads: usize, dropout: Option<Dropout>) -> (Grads<S>, LossParts) {
        let scale = 1.0 / samples.len().max(1) as f64;
        let chunks: Vec<(u64, &[Sample])> = samples.chunks(chunk.max(1)).enumerate().map(|(k, c)| (k as u64, c)).collect();
        let results = crate::par_map(&chunks, threads, |&(k, c)| {
            let d = dropout.map(|d| Dropout { seed: d.seed.wrapping_add(k), ..d });
            self.loss_grads(c, scale, d)
        });
        let mut grads = Grads::zeros_like(&self.store);
        let mut parts = LossParts::default();
        for (g, p) in &results {
            grads.merge(g);
            parts.add(p);
        }
        (grads, parts)
    }

    /// Total loss of many samples, evaluated chunk-wise.
    pub fn eval_loss(&self, samples: &[Sample], chunk: usize, threads: usize) -> LossParts {
        let chunks: Vec<&[Sample]> = samples.chunks(chunk.max(1)).collect();
        let mut parts = LossParts::default();
        for p in crate::par_map(&chunks, threads, |c| self.loss(c)) {
            parts.add(&p);
        }
        parts
    }

    /// `f_delta` of one gold episode whose copies refer to `memory`.
    pub fn encode_edit(&self, ep: &Episode, memory: &MemoryInfo) -> Tensor<S> {
        self.encode_edits_many(&[(ep, memory)]).pop().expect("one episode")
    }

    /// `f_delta` of several episodes in one pass, one row each.
    pub fn encode_edits_many(&self, eps: &[(&Episode, &MemoryInfo)]) -> Vec<Tensor<S>> {
        let mut t = Tape::new(&self.store);
        let mut trees: Vec<&StepTree> = Vec::new();
        let mut tree_base = Vec::new();
        for (ep, _) in eps {
            tree_base.push(trees.len());
            trees.extend(ep.trees.iter());
        }
        let enc = self.encode_trees(&mut t, &trees);
        let mut rows = Vec::new();
        let mut mem_base = Vec::new();
        for (i, (_, m)) in eps.iter().enumerate() {
            mem_base.push(self.static_candidates() + rows.len());
            rows.extend(m.rows.iter().map(|&r| enc.offsets[tree_base[i]] + r));
        }
        let roots = t.gather_rows(enc.h, rows);
        let cand = self.candidates(&mut t, roots);
        let list: Vec<&Episode> = eps.iter().map(|e| e.0).collect();
        let f = self.encode_edits(&mut t, &enc, cand, &list, &tree_base, &mem_base);
        let v = t.value(f);
        (0..v.rows()).map(|r| Tensor::row_vector(v.row(r).to_vec())).collect()
    }

    pub fn initial_state(&self) -> DecodeState<S> {
        let h = self.config.history_dim;
        DecodeState { h: Tensor::zeros(1, h), c: Tensor::zeros(1, h), mem_roots: None }
    }

    /// Encodes `tree`, advances the history and picks each head's argmax
    /// over its legal support. The first call also fixes the memory roots.
    pub fn greedy_step(&self, tree: &StepTree, memory: &MemoryInfo, f: &Tensor<S>, state: &mut DecodeState<S>) -> StepChoice {
        let mut t = Tape::new(&self.store);
        let enc = self.encode_trees(&mut t, &[tree]);
        let roots = match &state.mem_roots {
            Some(r) => t.constant(r.clone()),
            None => {
                let r = t.gather_rows(enc.h, memory.rows.clone());
                state.mem_roots = Some(t.value(r).clone());
                r
            }
        };
        let fv = t.constant(f.clone());
        let x = t.concat_cols(&[enc.pooled, fv]);
        let hist = self.p.history;
        let xw = hist.project(&mut t, x);
        let h0 = t.constant(state.h.clone());
        let c0 = t.constant(state.c.clone());
        let (h, c) = hist.cell(&mut t, xw, h0, c0);
        state.h = t.value(h).clone();
        state.c = t.value(c).clone();

        let op_mask = tree.op_mask();
        let op_logits = self.p.op_head.apply(&mut t, h);
        let op_probs = probs(t.value(op_logits).row(0), |i| op_mask[i]);
        let op = OpKind::ALL[argmax(t.value(op_logits).row(0), |i| op_mask[i])];
        let mut choice = StepChoice { op, node: None, value: None, op_probs, node_probs: Vec::new(), value_probs: Vec::new() };
        if op == OpKind::Stop {
            return choice;
        }
        let op_emb = t.param(self.p.op_emb);
        let e = t.gather_rows(op_emb, vec![op.index()]);
        let x = t.concat_cols(&[h, e]);
        let pre = self.p.node_head.apply(&mut t, x);
        let q = t.tanh(pre);
        let scores = t.matmul_nt(q, enc.h);
        let ok = tree.node_ok(op);
        choice.node_probs = probs(t.value(scores).row(0), |i| ok[i]);
        let row = argmax(t.value(scores).row(0), |i| ok[i]);
        choice.node = Some(row);
        if op == OpKind::Delete {
            return choice;
        }
        let n = t.gather_rows(enc.h, vec![row]);
        let field_emb = t.param(self.p.field_emb);
        let fe = t.gather_rows(field_emb, vec![tree.field[row]]);
        let x = t.concat_cols(&[h, n, fe]);
        let pre = self.p.value_head.apply(&mut t, x);
        let hv = t.tanh(pre);
        let bil = t.param(self.p.value_bil);
        let qv = t.matmul(hv, bil);
        let cand = self.candidates(&mut t, roots);
        let scores = t.matmul_nt(qv, cand);
        let acc: Symbol = tree.accepts[row].expect("anchor has a slot");
        let legal = value_columns(&self.grammar, &self.vocab, memory, op, acc);
        let mut allowed = vec![false; t.shape(cand).0];
        for c in legal {
            allowed[c] = true;
        }
        choice.value_probs = probs(t.value(scores).row(0), |i| allowed[i]);
        choice.value = Some(argmax(t.value(scores).row(0), |i| allowed[i]));
        choice
    }

    /// An editor with the right parameter layout and arbitrary values,
    /// to be overwritten from a checkpoint.
    pub(crate) fn skeleton(config: EditorConfig, grammar: Arc<Grammar>, vocab: Vocab) -> Editor<S> {
        Editor::new(config, grammar, vocab, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

#[cfg(test)]
impl<S: Scalar> Editor<S> {
    pub(crate) fn encode_for_test(&self, t: &mut Tape<S>, trees: &[&StepTree]) -> (Var, Var) {
        let e = self.encode_trees(t, trees);
        (e.h, e.pooled)
    }

    pub(crate) fn loss_var_for_test(&self, t: &mut Tape<S>, samples: &[Sample]) -> Var {
        self.loss_var(t, samples, 1.0, None).0
    }
}

fn probs<S: Scalar>(row: &[S], allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let r: Vec<f64> = row.iter().map(|x| x.f64()).collect();
    masked_softmax(&r, allowed)
}

/// First index of the largest legal logit.
fn argmax<S: Scalar>(row: &[S], allowed: impl Fn(usize) -> bool) -> usize {
    Tensor::<S>::argmax_masked(row, allowed).expect("non-empty legal support")
}

impl Editor<f64> {
    /// Finite-difference check of the full summed loss of `samples`, on at
    /// most `max_per_param` random coordinates per parameter.
    pub fn grad_check_loss<R: Rng + ?Sized>(&self, samples: &[Sample], max_per_param: Option<usize>, rng: &mut R) -> GradReport {
        crate::nn::gradcheck::grad_check(&self.store, |t| self.loss_var(t, samples, 1.0, None).0, crate::nn::gradcheck::H, max_per_param, rng)
    }
}
