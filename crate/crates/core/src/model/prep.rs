//! Trees and scripts lowered to the integer data the network consumes:
//! embedding rows, typed edges, legality masks and per-step targets.

use std::collections::HashMap;

use thiserror::Error;

use super::Vocab;
use crate::edits::{apply_mut, kind_fits, AddValue, EditAction, EditError, OpKind};
use crate::grammar::{Cardinality, Grammar, Symbol};
use crate::tree::{NodeId, NodeKind, SubtreeMemory, Tree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrepError {
    #[error("step {step}: {error}")]
    Edit { step: usize, error: EditError },
    #[error("step {step}: action outside the model's candidate space ({reason})")]
    Unrepresentable { step: usize, reason: String },
}

/// Copy memory of an episode, located in the rows of its initial tree.
#[derive(Debug, Clone)]
pub struct MemoryInfo {
    pub rows: Vec<usize>,
    pub kinds: Vec<NodeKind>,
}

impl MemoryInfo {
    pub fn new(memory: &SubtreeMemory) -> MemoryInfo {
        let src = memory.source();
        let row: HashMap<NodeId, usize> = src.preorder().into_iter().enumerate().map(|(i, id)| (id, i)).collect();
        MemoryInfo {
            rows: memory.entries().iter().map(|id| row[id]).collect(),
            kinds: (0..memory.len()).map(|e| memory.kind(e).clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fitting<'a>(&'a self, g: &'a Grammar, accepts: Symbol) -> impl Iterator<Item = usize> + 'a {
        self.kinds.iter().enumerate().filter(move |(_, k)| kind_fits(g, k, accepts)).map(|(i, _)| i)
    }
}

/// One tree state: nodes in pre-order (dummies included) with everything
/// the heads need to score and mask them.
#[derive(Debug, Clone)]
pub struct StepTree {
    pub nodes: Vec<NodeId>,
    /// Row of the initial embedding table: productions, then tokens (UNK
    /// first), then the dummy row.
    pub init: Vec<usize>,
    pub edges: Vec<(u32, u32, u8)>,
    /// Field id of each node's slot.
    pub field: Vec<usize>,
    pub accepts: Vec<Option<Symbol>>,
    pub del_ok: Vec<bool>,
    pub add_ok: Vec<bool>,
    pub copy_ok: Vec<bool>,
}

impl StepTree {
    pub fn new(t: &Tree, vocab: &Vocab, memory: &MemoryInfo) -> StepTree {
        let g = t.grammar();
        let graph = t.as_graph();
        let n = graph.nodes.len();
        let prods = vocab.prod_count();
        let dummy_row = prods + vocab.token_rows();
        let mut s = StepTree {
            nodes: graph.nodes.clone(),
            init: Vec::with_capacity(n),
            edges: graph.edges.iter().map(|e| (e.src as u32, e.dst as u32, e.ty.index() as u8)).collect(),
            field: Vec::with_capacity(n),
            accepts: Vec::with_capacity(n),
            del_ok: Vec::with_capacity(n),
            add_ok: Vec::with_capacity(n),
            copy_ok: Vec::with_capacity(n),
        };
        for &id in &graph.nodes {
            let kind = t.kind(id);
            s.init.push(match kind {
                NodeKind::NonTerminal(p) => p.0,
                NodeKind::Terminal { kind, token } => prods + vocab.token_id(*kind, token),
                NodeKind::Dummy => dummy_row,
            });
            let pos = t.position(id);
            let slot = pos.map(|(p, f, _)| match t.kind(p) {
                NodeKind::NonTerminal(prod) => (*prod, f),
                _ => unreachable!("only non-terminals have children"),
            });
            s.field.push(vocab.field_id(slot));
            let decl = t.slot_field(id);
            s.accepts.push(decl.map(|d| d.accepts));
            let dummy = kind.is_dummy();
            s.del_ok.push(decl.is_some() && !dummy);
            let anchor = decl.is_some_and(|d| dummy || d.cardinality == Cardinality::Sequential);
            let (add, copy) = match decl {
                Some(d) if anchor => {
                    let add = match d.accepts {
                        Symbol::Type(ty) => !g.productions_of(ty).is_empty(),
                        Symbol::Terminal(k) => !vocab.tokens_of_kind(k).is_empty(),
                    };
                    (add, memory.fitting(g, d.accepts).next().is_some())
                }
                _ => (false, false),
            };
            s.add_ok.push(add);
            s.copy_ok.push(copy);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ok(&self, op: OpKind) -> &[bool] {
        match op {
            OpKind::Delete => &self.del_ok,
            OpKind::Add => &self.add_ok,
            OpKind::Copy => &self.copy_ok,
            OpKind::Stop => &[],
        }
    }

    /// Operators with at least one legal node; Stop is always legal.
    pub fn op_mask(&self) -> [bool; 4] {
        [self.del_ok.iter().any(|&b| b), self.add_ok.iter().any(|&b| b), self.copy_ok.iter().any(|&b| b), true]
    }

    pub fn row_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }
}

/// Legal value columns for `op` at a slot accepting `accepts`. Columns are
/// productions, then token rows, then memory entries.
pub fn value_columns(g: &Grammar, vocab: &Vocab, memory: &MemoryInfo, op: OpKind, accepts: Symbol) -> Vec<usize> {
    let prods = vocab.prod_count();
    match (op, accepts) {
        (OpKind::Add, Symbol::Type(ty)) => g.productions_of(ty).iter().map(|p| p.0).collect(),
        (OpKind::Add, Symbol::Terminal(k)) => vocab.tokens_of_kind(k).iter().map(|&t| prods + t).collect(),
        (OpKind::Copy, a) => memory.fitting(g, a).map(|e| prods + vocab.token_rows() + e).collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueTarget {
    Rule(usize),
    /// Token row; 0 is UNK.
    Token(usize),
    Mem(usize),
}

impl ValueTarget {
    /// Column in the candidate table, with this episode's memory starting at
    /// `mem_base`.
    pub fn column(self, vocab: &Vocab, mem_base: usize) -> usize {
        match self {
            ValueTarget::Rule(p) => p,
            ValueTarget::Token(t) => vocab.prod_count() + t,
            ValueTarget::Mem(e) => mem_base + e,
        }
    }
}

/// An action lowered against the tree it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub op: OpKind,
    /// Row of the operated node; `None` for Stop.
    pub node: Option<usize>,
    /// Field id of the operated node's slot (root field for Stop).
    pub field: usize,
    pub value: Option<ValueTarget>,
}

/// Tree states paired with one action each. For a gold script the action
/// is the one executed; for collected demonstrations it is the expert label.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trees: Vec<StepTree>,
    pub targets: Vec<Target>,
}

impl Episode {
    /// Lowers each `(state, action)` pair. With `strict`, every action must
    /// be inside the model's masked candidate space.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a Tree, &'a EditAction)>,
        vocab: &Vocab,
        memory: &MemoryInfo,
        strict: bool,
    ) -> Result<Episode, PrepError> {
        let mut ep = Episode { trees: Vec::new(), targets: Vec::new() };
        for (step, (t, a)) in pairs.into_iter().enumerate() {
            let st = StepTree::new(t, vocab, memory);
            let target = lower(t, &st, a, vocab, memory, strict).map_err(|e| match e {
                Lowering::Edit(error) => PrepError::Edit { step, error },
                Lowering::Outside(reason) => PrepError::Unrepresentable { step, reason },
            })?;
            ep.trees.push(st);
            ep.targets.push(target);
        }
        Ok(ep)
    }

    /// Replays `script` from `g1`, recording the pre-action state of every
    /// action.
    pub fn from_script(
        g1: &Tree,
        script: &[EditAction],
        vocab: &Vocab,
        memory: &SubtreeMemory,
        info: &MemoryInfo,
        strict: bool,
    ) -> Result<Episode, PrepError> {
        let mut states = Vec::with_capacity(script.len());
        let mut cur = g1.clone();
        for (step, a) in script.iter().enumerate() {
            states.push(cur.clone());
            apply_mut(&mut cur, memory, a).map_err(|error| PrepError::Edit { step, error })?;
        }
        Episode::from_pairs(states.iter().zip(script), vocab, info, strict)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(StepTree::len).sum()
    }
}

enum Lowering {
    Edit(EditError),
    Outside(String),
}

fn lower(t: &Tree, st: &StepTree, a: &EditAction, vocab: &Vocab, memory: &MemoryInfo, strict: bool) -> Result<Target, Lowering> {
    let g = t.grammar();
    let op = a.op();
    let Some(id) = a.target() else {
        return Ok(Target { op, node: None, field: vocab.field_id(None), value: None });
    };
    let row = st.row_of(id).ok_or(Lowering::Edit(EditError::UnknownNode(id)))?;
    let value = match a {
        EditAction::Add { value: AddValue::Rule(p), .. } => Some(ValueTarget::Rule(p.0)),
        EditAction::Add { value: AddValue::Token(s), .. } => {
            let Some(Symbol::Terminal(kind)) = st.accepts[row] else {
                return Err(Lowering::Edit(EditError::TypeMismatch { node: id }));
            };
            let tok = vocab.token_id(kind, s);
            if tok == 0 && strict {
                return Err(Lowering::Outside(format!("token {s:?} is not in the vocabulary")));
            }
            Some(ValueTarget::Token(tok))
        }
        EditAction::Copy { entry, .. } => Some(ValueTarget::Mem(*entry)),
        _ => None,
    };
    let target = Target { op, node: Some(row), field: st.field[row], value };
    if strict {
        if !st.node_ok(op)[row] {
            return Err(Lowering::Outside(format!("{op:?} is not legal at row {row}")));
        }
        if let (Some(v), Some(acc)) = (value, st.accepts[row]) {
            let col = v.column(vocab, vocab.prod_count() + vocab.token_rows());
            if !value_columns(g, vocab, memory, op, acc).contains(&col) {
                return Err(Lowering::Outside(format!("value {v:?} does not fit row {row}")));
            }
        }
    }
    Ok(target)
}
