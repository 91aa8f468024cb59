//! Shortest edit scripts between trees.
//!
//! [`Solver`] runs the per-field alignment DP over interned subtree shapes:
//! deleting a source child costs 1, building a target child costs its
//! cheapest construction (copy a same-constructor memory subtree and repair
//! it, or add the root and build its children), and matching a pair of
//! children recurses. Scripts are emitted left-to-right, top-down by
//! replaying the backtrace on a working copy of the source tree.
//!
//! [`brute_force_dist`] is an independent A* search over concrete tree
//! states, used to check the DP.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use thiserror::Error;

use crate::edits::{apply_mut, legal_actions, AddValue, EditAction, EditError, EditScript};
use crate::grammar::{Cardinality, Grammar, ProdId, TerminalId};
use crate::tree::{structural_eq, NodeId, NodeKind, SubtreeMemory, Tree};

const INF: u32 = u32::MAX / 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("root constructors differ; the root cannot be edited")]
    RootMismatch,
    #[error("target token {token:?} is outside the vocabulary and the source tokens")]
    UnlearnableExample { token: String },
    #[error("emitted action failed to apply: {0}")]
    Internal(EditError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Shape {
    kind: NodeKind,
    /// Real (non-dummy) children per field.
    fields: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Delete(usize),
    Build(usize),
    Match(usize, usize),
}

pub struct Solver<'a> {
    g: &'a Grammar,
    memory: &'a SubtreeMemory,
    shapes: Vec<Shape>,
    index: HashMap<Shape, u32>,
    /// Memory entries whose root is a non-terminal, by production, in entry order.
    mem_by_prod: HashMap<ProdId, Vec<(usize, u32)>>,
    /// First memory entry holding each token shape.
    mem_tokens: HashMap<u32, usize>,
    dist_memo: HashMap<(u32, u32), u32>,
    build_memo: HashMap<u32, u32>,
    vocab: Option<HashSet<(TerminalId, String)>>,
}

impl<'a> Solver<'a> {
    /// `vocab`, when given, restricts which tokens may be added; tokens of
    /// the memory's source tree are always reachable by copy.
    pub fn new(memory: &'a SubtreeMemory, vocab: Option<&[(TerminalId, String)]>) -> Solver<'a> {
        let src = memory.source();
        let mut s = Solver {
            g: src.grammar(),
            memory,
            shapes: Vec::new(),
            index: HashMap::new(),
            mem_by_prod: HashMap::new(),
            mem_tokens: HashMap::new(),
            dist_memo: HashMap::new(),
            build_memo: HashMap::new(),
            vocab: vocab.map(|v| v.iter().cloned().collect()),
        };
        for (e, &id) in memory.entries().iter().enumerate() {
            let sh = s.intern(src, id);
            match src.kind(id) {
                NodeKind::NonTerminal(p) => s.mem_by_prod.entry(*p).or_default().push((e, sh)),
                NodeKind::Terminal { .. } => {
                    s.mem_tokens.entry(sh).or_insert(e);
                }
                NodeKind::Dummy => {}
            }
        }
        s
    }

    fn intern(&mut self, t: &Tree, id: NodeId) -> u32 {
        let n = t.get(id);
        let fields = n
            .children
            .iter()
            .map(|f| {
                f.iter()
                    .filter(|&&c| !t.is_dummy(c))
                    .map(|&c| self.intern(t, c))
                    .collect()
            })
            .collect();
        let shape = Shape { kind: n.kind.clone(), fields };
        if let Some(&i) = self.index.get(&shape) {
            return i;
        }
        let i = self.shapes.len() as u32;
        self.shapes.push(shape.clone());
        self.index.insert(shape, i);
        i
    }

    fn cards(&self, kind: &NodeKind) -> Vec<Cardinality> {
        match kind {
            NodeKind::NonTerminal(p) => self.g.production(*p).fields.iter().map(|f| f.cardinality).collect(),
            _ => Vec::new(),
        }
    }

    /// Edit distance between two same-constructor subtrees.
    fn dist(&mut self, a: u32, b: u32) -> u32 {
        if a == b {
            return 0;
        }
        if let Some(&d) = self.dist_memo.get(&(a, b)) {
            return d;
        }
        let (ka, kb) = (&self.shapes[a as usize].kind, &self.shapes[b as usize].kind);
        let d = match (ka, kb) {
            (NodeKind::NonTerminal(p), NodeKind::NonTerminal(q)) if p == q => {
                let cards = self.cards(ka);
                let mut total = 0u32;
                for (fi, card) in cards.into_iter().enumerate() {
                    let src = self.shapes[a as usize].fields[fi].clone();
                    let tgt = self.shapes[b as usize].fields[fi].clone();
                    let table = self.field_table(card, &src, &tgt);
                    total = total.saturating_add(table[src.len()][tgt.len()]).min(INF);
                }
                total
            }
            _ => INF,
        };
        self.dist_memo.insert((a, b), d);
        d
    }

    fn matched(&mut self, s: u32, t: u32) -> u32 {
        match (&self.shapes[s as usize].kind, &self.shapes[t as usize].kind) {
            (NodeKind::NonTerminal(p), NodeKind::NonTerminal(q)) if p == q => self.dist(s, t),
            _ if s == t => 0,
            _ => INF,
        }
    }

    /// Cheapest construction of `b` at an empty position.
    fn build(&mut self, b: u32) -> u32 {
        if let Some(&c) = self.build_memo.get(&b) {
            return c;
        }
        let c = match self.shapes[b as usize].kind.clone() {
            NodeKind::Dummy => 0,
            NodeKind::Terminal { .. } => 1,
            NodeKind::NonTerminal(p) => {
                let kids: Vec<u32> = self.shapes[b as usize].fields.concat();
                let mut best = 1u32;
                for k in kids {
                    best = best.saturating_add(self.build(k));
                }
                let cands = self.mem_by_prod.get(&p).cloned().unwrap_or_default();
                for (_, m) in cands {
                    best = best.min(1u32.saturating_add(self.dist(m, b)));
                }
                best.min(INF)
            }
        };
        self.build_memo.insert(b, c);
        c
    }

    fn field_table(&mut self, card: Cardinality, src: &[u32], tgt: &[u32]) -> Vec<Vec<u32>> {
        let (m, n) = (src.len(), tgt.len());
        let mut d = vec![vec![INF; n + 1]; m + 1];
        d[0][0] = 0;
        for i in 1..=m {
            d[i][0] = d[i - 1][0] + 1;
        }
        let guarded = card != Cardinality::Sequential && m > 0;
        for j in 1..=n {
            d[0][j] = if guarded { INF } else { d[0][j - 1].saturating_add(self.build(tgt[j - 1])).min(INF) };
        }
        for i in 1..=m {
            for j in 1..=n {
                let v3 = d[i - 1][j - 1].saturating_add(self.matched(src[i - 1], tgt[j - 1]));
                let v2 = d[i][j - 1].saturating_add(self.build(tgt[j - 1]));
                let v1 = d[i - 1][j] + 1;
                d[i][j] = v3.min(v2).min(v1).min(INF);
            }
        }
        d
    }

    /// Alignment path from (0, 0) to (m, n). Ties prefer match, then build,
    /// then delete.
    fn backtrace(&mut self, card: Cardinality, src: &[u32], tgt: &[u32]) -> Vec<Step> {
        let d = self.field_table(card, src, tgt);
        let (mut i, mut j) = (src.len(), tgt.len());
        let mut steps = Vec::new();
        while i > 0 || j > 0 {
            let here = d[i][j];
            if i > 0 && j > 0 && d[i - 1][j - 1].saturating_add(self.matched(src[i - 1], tgt[j - 1])) == here {
                steps.push(Step::Match(i - 1, j - 1));
                i -= 1;
                j -= 1;
            } else if j > 0 && d[i][j - 1].saturating_add(self.build(tgt[j - 1])) == here {
                steps.push(Step::Build(j - 1));
                j -= 1;
            } else {
                steps.push(Step::Delete(i - 1));
                i -= 1;
            }
        }
        steps.reverse();
        steps
    }

    /// Shortest edit distance from `src` to `tgt` (Stop excluded).
    pub fn distance(&mut self, src: &Tree, tgt: &Tree) -> Result<u32, OracleError> {
        let (a, b) = (self.intern(src, src.root()), self.intern(tgt, tgt.root()));
        let d = self.dist(a, b);
        if d >= INF {
            return Err(OracleError::RootMismatch);
        }
        Ok(d)
    }

    /// A shortest script from `src` to `tgt`, without the trailing stop.
    pub fn script(&mut self, src: &Tree, tgt: &Tree) -> Result<EditScript, OracleError> {
        self.distance(src, tgt)?;
        let b = self.intern(tgt, tgt.root());
        let mut work = src.clone();
        let mut out = Vec::new();
        let root = work.root();
        self.emit_pair(&mut work, root, b, &mut out)?;
        Ok(out)
    }

    fn act(&self, work: &mut Tree, a: EditAction, out: &mut EditScript) -> Result<Option<NodeId>, OracleError> {
        let r = apply_mut(work, self.memory, &a).map_err(OracleError::Internal)?;
        out.push(a);
        Ok(r)
    }

    fn emit_pair(&mut self, work: &mut Tree, node: NodeId, b: u32, out: &mut EditScript) -> Result<(), OracleError> {
        let cards = self.cards(&self.shapes[b as usize].kind.clone());
        for (fi, card) in cards.into_iter().enumerate() {
            let src_ids: Vec<NodeId> = work.get(node).children[fi]
                .iter()
                .copied()
                .filter(|&c| !work.is_dummy(c))
                .collect();
            let src: Vec<u32> = src_ids.iter().map(|&c| self.intern(work, c)).collect();
            let tgt = self.shapes[b as usize].fields[fi].clone();
            let steps = self.backtrace(card, &src, &tgt);
            let mut cursor = 0usize;
            for step in steps {
                match step {
                    Step::Delete(i) => {
                        self.act(work, EditAction::Delete(src_ids[i]), out)?;
                    }
                    Step::Build(j) => {
                        let anchor = work.get(node).children[fi][cursor];
                        self.emit_build(work, anchor, tgt[j], out)?;
                        cursor += 1;
                    }
                    Step::Match(i, j) => {
                        if matches!(work.kind(src_ids[i]), NodeKind::NonTerminal(_)) {
                            self.emit_pair(work, src_ids[i], tgt[j], out)?;
                        }
                        cursor += 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn emit_build(&mut self, work: &mut Tree, anchor: NodeId, b: u32, out: &mut EditScript) -> Result<(), OracleError> {
        match self.shapes[b as usize].kind.clone() {
            NodeKind::Dummy => Ok(()),
            NodeKind::Terminal { kind, token } => {
                let a = match self.mem_tokens.get(&b) {
                    Some(&entry) => EditAction::Copy { anchor, entry },
                    None => {
                        if let Some(v) = &self.vocab {
                            if !v.contains(&(kind, token.clone())) {
                                return Err(OracleError::UnlearnableExample { token });
                            }
                        }
                        EditAction::Add { anchor, value: AddValue::Token(token) }
                    }
                };
                self.act(work, a, out)?;
                Ok(())
            }
            NodeKind::NonTerminal(p) => {
                let best = self.build(b);
                let cands = self.mem_by_prod.get(&p).cloned().unwrap_or_default();
                for (entry, m) in cands {
                    if 1u32.saturating_add(self.dist(m, b)) == best {
                        let new = self.act(work, EditAction::Copy { anchor, entry }, out)?.expect("copy creates a node");
                        return self.emit_pair(work, new, b, out);
                    }
                }
                let new = self
                    .act(work, EditAction::Add { anchor, value: AddValue::Rule(p) }, out)?
                    .expect("add creates a node");
                let fields = self.shapes[b as usize].fields.clone();
                for (fi, kids) in fields.into_iter().enumerate() {
                    for (j, k) in kids.into_iter().enumerate() {
                        let anchor = work.get(new).children[fi][j];
                        self.emit_build(work, anchor, k, out)?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Shortest distance from `src` to `tgt` with copies drawn from `memory`.
pub fn tree_shortest_dist(src: &Tree, tgt: &Tree, memory: &SubtreeMemory) -> Result<(u32, EditScript), OracleError> {
    let mut s = Solver::new(memory, None);
    let d = s.distance(src, tgt)?;
    let script = s.script(src, tgt)?;
    Ok((d, script))
}

/// The training target for a pair: a shortest script from `src` plus Stop,
/// copying from `src`'s own memory.
pub fn gold_script(src: &Tree, tgt: &Tree, vocab: Option<&[(TerminalId, String)]>) -> Result<EditScript, OracleError> {
    let memory = SubtreeMemory::new(src);
    gold_script_from(src, tgt, &memory, vocab)
}

/// Like [`gold_script`] but for an intermediate state `cur`, with memory
/// taken from the episode's initial tree.
pub fn gold_script_from(
    cur: &Tree,
    tgt: &Tree,
    memory: &SubtreeMemory,
    vocab: Option<&[(TerminalId, String)]>,
) -> Result<EditScript, OracleError> {
    let mut s = Solver::new(memory, vocab);
    let mut script = s.script(cur, tgt)?;
    script.push(EditAction::Stop);
    Ok(script)
}

/// The expert action at `cur`: Stop when the target is reached, else the
/// first action of a shortest script.
pub fn dynamic_oracle(
    cur: &Tree,
    tgt: &Tree,
    memory: &SubtreeMemory,
    vocab: Option<&[(TerminalId, String)]>,
) -> Result<EditAction, OracleError> {
    if structural_eq(cur, tgt) {
        return Ok(EditAction::Stop);
    }
    let script = gold_script_from(cur, tgt, memory, vocab)?;
    Ok(script.into_iter().next().expect("script ends in stop"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteForce {
    Distance(u32),
    Exceeded,
}

/// Exact minimum number of non-stop actions turning `src` into a tree
/// structurally equal to `tgt`, by A* search over tree states. Only values
/// whose constructor or token occurs in `tgt` are ever added or copied; a
/// node absent from the target would have to be deleted again.
pub fn brute_force_dist(src: &Tree, tgt: &Tree, memory: &SubtreeMemory, cap: u32) -> BruteForce {
    let goal = tgt.to_sexpr();
    let mut labels: HashSet<NodeKind> = HashSet::new();
    for id in tgt.preorder() {
        labels.insert(tgt.kind(id).clone());
    }
    let vocab: Vec<(TerminalId, String)> = tgt.tokens();
    let useful = |a: &EditAction| match a {
        EditAction::Add { value: AddValue::Rule(p), .. } => labels.contains(&NodeKind::NonTerminal(*p)),
        EditAction::Add { anchor: _, value: AddValue::Token(tok) } => {
            labels.iter().any(|k| matches!(k, NodeKind::Terminal { token, .. } if token == tok))
        }
        EditAction::Copy { entry, .. } => labels.contains(memory.kind(*entry)),
        EditAction::Delete(_) => true,
        EditAction::Stop => false,
    };

    let mut best: HashMap<String, u32> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut states: Vec<Tree> = vec![src.clone()];
    let bound = Bound { memory };
    let h0 = bound.remaining(src, tgt);
    best.insert(src.to_sexpr(), 0);
    heap.push(Reverse((h0, 0u32, 0usize)));
    while let Some(Reverse((f, gcost, si))) = heap.pop() {
        if f > cap {
            return BruteForce::Exceeded;
        }
        let t = states[si].clone();
        let key = t.to_sexpr();
        if best.get(&key).is_some_and(|&b| b < gcost) {
            continue;
        }
        if key == goal {
            return BruteForce::Distance(gcost);
        }
        for a in legal_actions(&t, memory, &vocab) {
            if !useful(&a) {
                continue;
            }
            let mut next = t.clone();
            if apply_mut(&mut next, memory, &a).is_err() {
                continue;
            }
            let k = next.to_sexpr();
            let ng = gcost + 1;
            if best.get(&k).is_some_and(|&b| b <= ng) {
                continue;
            }
            best.insert(k, ng);
            let h = bound.remaining(&next, tgt);
            states.push(next);
            heap.push(Reverse((ng + h, ng, states.len() - 1)));
        }
    }
    BruteForce::Exceeded
}

/// Admissible estimate of the remaining actions. Fields are independent;
/// a mismatched single slot needs a delete plus a fresh construction, and a
/// construction starts with either an add (then each child is built) or a
/// copy (then the copy is repaired).
struct Bound<'a> {
    memory: &'a SubtreeMemory,
}

impl Bound<'_> {
    fn remaining(&self, cur: &Tree, tgt: &Tree) -> u32 {
        self.pair(cur, cur.root(), tgt, tgt.root())
    }

    fn pair(&self, a: &Tree, x: NodeId, b: &Tree, y: NodeId) -> u32 {
        let (nx, ny) = (a.get(x), b.get(y));
        if nx.kind != ny.kind {
            return INF;
        }
        let NodeKind::NonTerminal(p) = nx.kind else { return 0 };
        let g = a.grammar();
        let mut total = 0;
        for (fi, decl) in g.production(p).fields.iter().enumerate() {
            let sx: Vec<NodeId> = nx.children[fi].iter().copied().filter(|&c| !a.is_dummy(c)).collect();
            let sy: Vec<NodeId> = ny.children[fi].iter().copied().filter(|&c| !b.is_dummy(c)).collect();
            total += match decl.cardinality {
                Cardinality::Sequential => {
                    let same = sx.len() == sy.len()
                        && sx.iter().zip(&sy).all(|(&c, &d)| crate::tree::subtree_eq(a, c, b, d));
                    if same {
                        0
                    } else if sx.is_empty() {
                        sy.iter().map(|&d| self.build(b, d)).sum()
                    } else {
                        (sx.len().abs_diff(sy.len()) as u32).max(1)
                    }
                }
                _ => match (sx.first(), sy.first()) {
                    (None, None) => 0,
                    (None, Some(&d)) => self.build(b, d),
                    (Some(_), None) => 1,
                    (Some(&c), Some(&d)) => {
                        let rebuild = 1 + self.build(b, d);
                        if crate::tree::subtree_eq(a, c, b, d) {
                            0
                        } else if a.kind(c) == b.kind(d) {
                            self.pair(a, c, b, d).min(rebuild)
                        } else {
                            rebuild
                        }
                    }
                },
            };
        }
        total.min(INF)
    }

    fn build(&self, b: &Tree, y: NodeId) -> u32 {
        let n = b.get(y);
        match n.kind {
            NodeKind::Dummy => 0,
            NodeKind::Terminal { .. } => 1,
            NodeKind::NonTerminal(_) => {
                let mut best = 1 + n
                    .children
                    .iter()
                    .flatten()
                    .map(|&c| self.build(b, c))
                    .sum::<u32>();
                let src = self.memory.source();
                for &e in self.memory.entries() {
                    if src.kind(e) == &n.kind {
                        best = best.min(1 + self.pair(src, e, b, y));
                    }
                }
                best
            }
        }
    }
}
