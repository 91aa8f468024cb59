//! Grammar-typed ASTs with dummy placeholders.
//!
//! A [`Tree`] is an arena of nodes addressed by [`NodeId`]. Ids come from a
//! monotone counter and are never reused, so the id of an untouched node is
//! stable across edits. Terminal tokens are child nodes of their owning
//! non-terminal. Every empty single/optional slot holds a `Dummy`, and every
//! sequential field ends in a `Dummy`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{Cardinality, FieldDecl, Grammar, ProdId, Symbol, TerminalId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    NonTerminal(ProdId),
    Terminal { kind: TerminalId, token: String },
    Dummy,
}

impl NodeKind {
    pub fn is_dummy(&self) -> bool {
        matches!(self, NodeKind::Dummy)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Parent node and the index of the parent's field holding this node.
    pub parent: Option<(NodeId, usize)>,
    /// Children grouped by field, in production field order.
    pub children: Vec<Vec<NodeId>>,
}

/// An owned, id-free subtree. Used to build trees and to carry copies.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fragment {
    pub kind: NodeKind,
    pub children: Vec<Vec<Fragment>>,
}

impl Fragment {
    pub fn dummy() -> Fragment {
        Fragment {
            kind: NodeKind::Dummy,
            children: Vec::new(),
        }
    }

    pub fn token(kind: TerminalId, token: impl Into<String>) -> Fragment {
        Fragment {
            kind: NodeKind::Terminal {
                kind,
                token: token.into(),
            },
            children: Vec::new(),
        }
    }

    /// Builds a complete non-terminal from its real children; dummies are
    /// inserted for empty single/optional fields and at the end of every
    /// sequential field.
    pub fn node(g: &Grammar, prod: ProdId, fields: Vec<Vec<Fragment>>) -> Fragment {
        let p = g.production(prod);
        assert_eq!(p.fields.len(), fields.len(), "arity of {}", p.constructor);
        let children = p
            .fields
            .iter()
            .zip(fields)
            .map(|(f, mut kids)| {
                match f.cardinality {
                    Cardinality::Sequential => kids.push(Fragment::dummy()),
                    _ if kids.is_empty() => kids.push(Fragment::dummy()),
                    _ => {}
                }
                kids
            })
            .collect();
        Fragment {
            kind: NodeKind::NonTerminal(prod),
            children,
        }
    }

    /// Number of non-dummy nodes.
    pub fn count_nodes(&self) -> usize {
        match self.kind {
            NodeKind::Dummy => 0,
            _ => {
                1 + self
                    .children
                    .iter()
                    .flatten()
                    .map(Fragment::count_nodes)
                    .sum::<usize>()
            }
        }
    }
}

/// A freshly derived node for `prod`: one dummy per single/optional field and
/// a lone dummy in every sequential field.
pub fn instantiate(g: &Grammar, prod: ProdId) -> Fragment {
    let fields = g.production(prod).fields.len();
    Fragment::node(g, prod, vec![Vec::new(); fields])
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("node {0:?} is not live in this tree")]
    UnknownNode(NodeId),
    #[error("root must be a production of the grammar's root type")]
    BadRoot,
    #[error("node {node:?}: constructor `{ctor}` expects {expected} fields, found {found}")]
    FieldCount {
        node: NodeId,
        ctor: String,
        expected: usize,
        found: usize,
    },
    #[error("node {node:?}: field `{field}` has an invalid child list ({detail})")]
    Cardinality {
        node: NodeId,
        field: String,
        detail: String,
    },
    #[error("node {node:?}: child in field `{field}` does not match accepted type `{expected}`")]
    TypeMismatch {
        node: NodeId,
        field: String,
        expected: String,
    },
    #[error("node {0:?}: terminal or dummy node has children")]
    LeafWithChildren(NodeId),
    #[error("node {0:?}: parent link is inconsistent")]
    ParentLink(NodeId),
    #[error("node {0:?} is indexed but unreachable from the root")]
    Unreachable(NodeId),
}

#[derive(Debug, Clone)]
pub struct Tree {
    grammar: Arc<Grammar>,
    nodes: Vec<Option<Node>>,
    root: NodeId,
}

impl Tree {
    /// Builds a tree from a fragment, assigning ids in pre-order, and
    /// validates it.
    pub fn from_fragment(grammar: Arc<Grammar>, frag: &Fragment) -> Result<Tree, TreeError> {
        let t = Tree::from_fragment_unchecked(grammar, frag);
        t.validate()?;
        Ok(t)
    }

    pub(crate) fn from_fragment_unchecked(grammar: Arc<Grammar>, frag: &Fragment) -> Tree {
        let mut t = Tree {
            grammar,
            nodes: Vec::new(),
            root: NodeId(0),
        };
        t.root = t.graft(frag, None);
        t
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn grammar_arc(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// The id the next created node will receive.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.len() as u32)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0 as usize).and_then(Option::as_ref)
    }

    /// Panicking accessor for ids known to be live.
    pub fn get(&self, id: NodeId) -> &Node {
        self.node(id)
            .unwrap_or_else(|| panic!("node {id:?} is not live"))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.get(id).kind
    }

    /// Live node ids in pre-order (fields in order, children left to right).
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.preorder_from(self.root, &mut out);
        out
    }

    pub fn preorder_from(&self, id: NodeId, out: &mut Vec<NodeId>) {
        out.push(id);
        for field in &self.get(id).children {
            for &c in field {
                self.preorder_from(c, out);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parent, field index and index within the field.
    pub fn position(&self, id: NodeId) -> Option<(NodeId, usize, usize)> {
        let (p, f) = self.node(id)?.parent?;
        let idx = self.get(p).children[f].iter().position(|&c| c == id)?;
        Some((p, f, idx))
    }

    /// The declaration of the field holding `id`, or `None` for the root.
    pub fn slot_field(&self, id: NodeId) -> Option<&FieldDecl> {
        let (p, f) = self.node(id)?.parent?;
        match self.get(p).kind {
            NodeKind::NonTerminal(prod) => Some(&self.grammar.production(prod).fields[f]),
            _ => None,
        }
    }

    pub fn is_dummy(&self, id: NodeId) -> bool {
        self.kind(id).is_dummy()
    }

    /// Tokens of all terminal nodes, in pre-order.
    pub fn tokens(&self) -> Vec<(TerminalId, String)> {
        self.preorder()
            .into_iter()
            .filter_map(|id| match &self.get(id).kind {
                NodeKind::Terminal { kind, token } => Some((*kind, token.clone())),
                _ => None,
            })
            .collect()
    }

    /// Owned copy of the subtree rooted at `id`.
    pub fn fragment(&self, id: NodeId) -> Fragment {
        let n = self.get(id);
        Fragment {
            kind: n.kind.clone(),
            children: n
                .children
                .iter()
                .map(|f| f.iter().map(|&c| self.fragment(c)).collect())
                .collect(),
        }
    }

    /// Non-dummy nodes in the subtree rooted at `id`.
    pub fn count_nodes(&self, id: NodeId) -> usize {
        let n = self.get(id);
        if n.kind.is_dummy() {
            return 0;
        }
        1 + n
            .children
            .iter()
            .flatten()
            .map(|&c| self.count_nodes(c))
            .sum::<usize>()
    }

    // ---- mutation helpers (crate-internal; public API is value-semantic) ----

    /// Inserts `frag` with fresh pre-order ids, returning the new root id.
    pub(crate) fn graft(&mut self, frag: &Fragment, parent: Option<(NodeId, usize)>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Some(Node {
            id,
            kind: frag.kind.clone(),
            parent,
            children: Vec::new(),
        }));
        let mut children = Vec::with_capacity(frag.children.len());
        for (fi, field) in frag.children.iter().enumerate() {
            let ids: Vec<NodeId> = field.iter().map(|c| self.graft(c, Some((id, fi)))).collect();
            children.push(ids);
        }
        self.nodes[id.0 as usize].as_mut().unwrap().children = children;
        id
    }

    pub(crate) fn remove_subtree(&mut self, id: NodeId) {
        let kids: Vec<NodeId> = self.get(id).children.iter().flatten().copied().collect();
        for c in kids {
            self.remove_subtree(c);
        }
        self.nodes[id.0 as usize] = None;
    }

    /// Replaces the child at `(parent, field, idx)` with `frag`; the old
    /// subtree is dropped.
    pub(crate) fn replace_at(&mut self, parent: NodeId, field: usize, idx: usize, frag: &Fragment) -> NodeId {
        let old = self.get(parent).children[field][idx];
        self.remove_subtree(old);
        let new = self.graft(frag, Some((parent, field)));
        self.node_mut(parent).children[field][idx] = new;
        new
    }

    pub(crate) fn insert_at(&mut self, parent: NodeId, field: usize, idx: usize, frag: &Fragment) -> NodeId {
        let new = self.graft(frag, Some((parent, field)));
        self.node_mut(parent).children[field].insert(idx, new);
        new
    }

    pub(crate) fn remove_at(&mut self, parent: NodeId, field: usize, idx: usize) {
        let old = self.node_mut(parent).children[field].remove(idx);
        self.remove_subtree(old);
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id.0 as usize].as_mut().expect("live node")
    }

    /// Checks every structural invariant: field arity, cardinality/dummy
    /// rules, child types, parent links and index/reachability agreement.
    pub fn validate(&self) -> Result<(), TreeError> {
        let g = &*self.grammar;
        let root = self.node(self.root).ok_or(TreeError::UnknownNode(self.root))?;
        if root.parent.is_some() {
            return Err(TreeError::ParentLink(self.root));
        }
        match root.kind {
            NodeKind::NonTerminal(p) if g.production(p).head == g.root_type() => {}
            _ => return Err(TreeError::BadRoot),
        }
        let reachable: HashSet<NodeId> = self.preorder().into_iter().collect();
        for n in self.nodes.iter().flatten() {
            if !reachable.contains(&n.id) {
                return Err(TreeError::Unreachable(n.id));
            }
        }
        for &id in &reachable {
            let n = self.get(id);
            let prod = match n.kind {
                NodeKind::NonTerminal(p) => g.production(p),
                _ => {
                    if n.children.iter().any(|f| !f.is_empty()) {
                        return Err(TreeError::LeafWithChildren(id));
                    }
                    continue;
                }
            };
            if prod.fields.len() != n.children.len() {
                return Err(TreeError::FieldCount {
                    node: id,
                    ctor: prod.constructor.clone(),
                    expected: prod.fields.len(),
                    found: n.children.len(),
                });
            }
            for (fi, (decl, kids)) in prod.fields.iter().zip(&n.children).enumerate() {
                let card_err = |detail: &str| TreeError::Cardinality {
                    node: id,
                    field: decl.name.clone(),
                    detail: detail.to_string(),
                };
                match decl.cardinality {
                    Cardinality::Single | Cardinality::Optional => {
                        if kids.len() != 1 {
                            return Err(card_err("expected exactly one child or dummy"));
                        }
                    }
                    Cardinality::Sequential => {
                        let Some((&last, init)) = kids.split_last() else {
                            return Err(card_err("missing trailing dummy"));
                        };
                        if !self.is_dummy(last) {
                            return Err(card_err("last child must be a dummy"));
                        }
                        if init.iter().any(|&c| self.is_dummy(c)) {
                            return Err(card_err("dummy before the end of a sequence"));
                        }
                    }
                }
                for &c in kids {
                    let child = self.node(c).ok_or(TreeError::UnknownNode(c))?;
                    if child.parent != Some((id, fi)) {
                        return Err(TreeError::ParentLink(c));
                    }
                    let ok = match (&child.kind, decl.accepts) {
                        (NodeKind::Dummy, _) => true,
                        (NodeKind::NonTerminal(p), Symbol::Type(t)) => g.production(*p).head == t,
                        (NodeKind::Terminal { kind, .. }, Symbol::Terminal(k)) => *kind == k,
                        _ => false,
                    };
                    if !ok {
                        return Err(TreeError::TypeMismatch {
                            node: id,
                            field: decl.name.clone(),
                            expected: g.symbol_name(decl.accepts).to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// A copy with every dummy removed. The result may have empty
    /// single-cardinality fields and is meant for output and comparison.
    pub fn clear_dummies(&self) -> Tree {
        let mut t = self.clone();
        let ids: Vec<NodeId> = t.preorder();
        for id in ids {
            if t.is_dummy(id) {
                let (p, f, i) = t.position(id).expect("dummy is never the root");
                t.node_mut(p).children[f].remove(i);
                t.nodes[id.0 as usize] = None;
            }
        }
        t
    }

    /// Extended graph view used by the tree encoder.
    pub fn as_graph(&self) -> TreeGraph {
        let nodes = self.preorder();
        let mut row = vec![usize::MAX; self.nodes.len()];
        for (i, id) in nodes.iter().enumerate() {
            row[id.0 as usize] = i;
        }
        let mut edges = Vec::new();
        for (i, &id) in nodes.iter().enumerate() {
            let kids: Vec<usize> = self
                .get(id)
                .children
                .iter()
                .flatten()
                .map(|c| row[c.0 as usize])
                .collect();
            for &k in &kids {
                edges.push(Edge { src: i, dst: k, ty: EdgeType::ParentToChild });
                edges.push(Edge { src: k, dst: i, ty: EdgeType::ChildToParent });
            }
            for w in kids.windows(2) {
                edges.push(Edge { src: w[0], dst: w[1], ty: EdgeType::NextSibling });
                edges.push(Edge { src: w[1], dst: w[0], ty: EdgeType::PrevSibling });
            }
        }
        TreeGraph { nodes, edges }
    }

    /// Canonical text of the subtree at `id` with dummies dropped and
    /// terminal kinds spelled out; equal keys mean structurally equal subtrees.
    pub fn canonical_key(&self, id: NodeId) -> String {
        let mut s = String::new();
        self.write_key(id, &mut s);
        s
    }

    fn write_key(&self, id: NodeId, out: &mut String) {
        let n = self.get(id);
        match &n.kind {
            NodeKind::Dummy => {}
            NodeKind::Terminal { kind, token } => {
                let _ = write!(out, "{}:{:?}", kind.0, token);
            }
            NodeKind::NonTerminal(p) => {
                let _ = write!(out, "({}", p.0);
                for field in &n.children {
                    out.push('[');
                    for &c in field {
                        if !self.is_dummy(c) {
                            self.write_key(c, out);
                            out.push(' ');
                        }
                    }
                    out.push(']');
                }
                out.push(')');
            }
        }
    }

    /// S-expression rendering, see [`crate::sexpr`].
    pub fn to_sexpr(&self) -> String {
        crate::sexpr::write_tree(self, self.root)
    }

    pub fn subtree_sexpr(&self, id: NodeId) -> String {
        crate::sexpr::write_tree(self, id)
    }
}

/// True iff the dummy-cleared trees agree in constructors, tokens and child
/// order. Node ids are ignored.
pub fn structural_eq(a: &Tree, b: &Tree) -> bool {
    subtree_eq(a, a.root(), b, b.root())
}

pub fn subtree_eq(a: &Tree, x: NodeId, b: &Tree, y: NodeId) -> bool {
    let (nx, ny) = (a.get(x), b.get(y));
    if nx.kind != ny.kind {
        return false;
    }
    if nx.children.len() != ny.children.len() {
        return false;
    }
    for (fx, fy) in nx.children.iter().zip(&ny.children) {
        let rx = fx.iter().filter(|&&c| !a.is_dummy(c));
        let mut ry = fy.iter().filter(|&&c| !b.is_dummy(c));
        for &cx in rx {
            match ry.next() {
                Some(&cy) if subtree_eq(a, cx, b, cy) => {}
                _ => return false,
            }
        }
        if ry.next().is_some() {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeType {
    ParentToChild,
    ChildToParent,
    NextSibling,
    PrevSibling,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::ParentToChild,
        EdgeType::ChildToParent,
        EdgeType::NextSibling,
        EdgeType::PrevSibling,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

/// Nodes (pre-order, dummies included) and typed edges between their rows.
#[derive(Debug, Clone)]
pub struct TreeGraph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl TreeGraph {
    pub fn row_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    pub fn count(&self, ty: EdgeType) -> usize {
        self.edges.iter().filter(|e| e.ty == ty).count()
    }
}

/// The copyable subtrees of an initial tree: every non-dummy node in
/// pre-order, deduplicated by structural equality (first occurrence wins).
#[derive(Debug, Clone)]
pub struct SubtreeMemory {
    source: Tree,
    entries: Vec<NodeId>,
    keys: Vec<String>,
}

impl SubtreeMemory {
    pub fn new(t: &Tree) -> SubtreeMemory {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        let mut keys = Vec::new();
        for id in t.preorder() {
            if t.is_dummy(id) {
                continue;
            }
            let key = t.canonical_key(id);
            if seen.insert(key.clone()) {
                entries.push(id);
                keys.push(key);
            }
        }
        SubtreeMemory {
            source: t.clone(),
            entries,
            keys,
        }
    }

    /// The tree the memory was taken from.
    pub fn source(&self) -> &Tree {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Root node of entry `i` inside [`SubtreeMemory::source`].
    pub fn entry(&self, i: usize) -> NodeId {
        self.entries[i]
    }

    pub fn entries(&self) -> &[NodeId] {
        &self.entries
    }

    pub fn key(&self, i: usize) -> &str {
        &self.keys[i]
    }

    pub fn kind(&self, i: usize) -> &NodeKind {
        self.source.kind(self.entries[i])
    }

    pub fn fragment(&self, i: usize) -> Fragment {
        self.source.fragment(self.entries[i])
    }

    /// Index of the entry structurally equal to `key`, if any.
    pub fn find_key(&self, key: &str) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }
}

pub fn subtree_memory(t: &Tree) -> SubtreeMemory {
    SubtreeMemory::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse_tree;

    fn g() -> Arc<Grammar> {
        Arc::new(Grammar::minilang())
    }

    fn t(src: &str) -> Tree {
        parse_tree(&g(), src).unwrap()
    }

    fn prod(g: &Grammar, ctor: &str) -> ProdId {
        g.productions().iter().find(|p| p.constructor == ctor).unwrap().id
    }

    /// Independent recount: every node except the root has exactly one
    /// incoming parent edge; siblings pair up per parent.
    fn edge_oracle(t: &Tree) -> (usize, usize) {
        let mut pc = 0;
        let mut sib = 0;
        for id in t.preorder() {
            let k: usize = t.get(id).children.iter().map(Vec::len).sum();
            pc += k;
            sib += k.saturating_sub(1);
        }
        (pc, sib)
    }

    #[test]
    fn instantiate_fills_dummies() {
        let g = g();
        let idx = instantiate(&g, prod(&g, "Index"));
        assert_eq!(idx.children.len(), 2);
        assert!(idx.children.iter().all(|f| f.len() == 1 && f[0].kind.is_dummy()));

        let add = instantiate(&g, prod(&g, "Add"));
        assert!(add.children.is_empty());

        let call = instantiate(&g, prod(&g, "Call"));
        assert_eq!(call.children[0], vec![Fragment::dummy()]);
        assert_eq!(call.children[1], vec![Fragment::dummy()]);
    }

    #[test]
    fn clear_dummies_cases() {
        let a = t(r#"(Assign (Name "x") (Num "1"))"#);
        assert!(structural_eq(&a, &a.clear_dummies()));
        assert_eq!(a.clear_dummies().to_sexpr(), a.to_sexpr());

        let b = t(r#"(Assign (Name "x") _)"#);
        let cleared = b.clear_dummies();
        assert!(cleared.get(cleared.root()).children[1].is_empty());

        let c = t(r#"(Assign (Name "x") (Call "f" [(Name "e")]))"#);
        let cleared = c.clear_dummies();
        let call = cleared.get(cleared.root()).children[1][0];
        assert_eq!(cleared.get(call).children[1].len(), 1);
    }

    #[test]
    fn structural_eq_ignores_ids_not_tokens() {
        let a = t(r#"(Assign (Name "x") (Num "1"))"#);
        assert!(structural_eq(&a, &a));
        let mut shifted = a.clone();
        // Rebuild with different ids by grafting behind a throwaway node.
        let frag = a.fragment(a.root());
        shifted.nodes.push(None);
        shifted.nodes.push(None);
        let r = shifted.graft(&frag, None);
        shifted.root = r;
        assert_ne!(shifted.root(), a.root());
        assert!(structural_eq(&a, &shifted));

        let b = t(r#"(Assign (Name "x") (Num "2"))"#);
        assert!(!structural_eq(&a, &b));
    }

    #[test]
    fn graph_of_single_node_tree() {
        let g = Arc::new(crate::grammar::parse_grammar("root s;\ns = Leaf()\n").unwrap());
        let t = parse_tree(&g, "(Leaf)").unwrap();
        let gr = t.as_graph();
        assert_eq!(gr.nodes.len(), 1);
        assert!(gr.edges.is_empty());
    }

    #[test]
    fn graph_edge_counts() {
        let a = t(r#"(Assign (Name "x") (Name "y"))"#);
        let gr = a.as_graph();
        // Assign, Name, "x", Name, "y"
        assert_eq!(gr.nodes.len(), 5);
        assert_eq!(gr.count(EdgeType::ParentToChild), 4);
        assert_eq!(gr.count(EdgeType::ChildToParent), 4);
        assert_eq!(gr.count(EdgeType::NextSibling), 1);
        assert_eq!(gr.count(EdgeType::PrevSibling), 1);
        let (pc, sib) = edge_oracle(&a);
        assert_eq!(pc, 4);
        assert_eq!(sib, 1);
    }

    #[test]
    fn sequential_sibling_chain() {
        let a = t(r#"(Assign (Name "x") (Call "f" [(Name "a") (Name "b")]))"#);
        let gr = a.as_graph();
        let call = a.get(a.root()).children[1][0];
        let args = &a.get(call).children[1];
        assert_eq!(args.len(), 3);
        let rows: Vec<usize> = args.iter().map(|&c| gr.row_of(c).unwrap()).collect();
        let nexts: HashSet<(usize, usize)> = gr
            .edges
            .iter()
            .filter(|e| e.ty == EdgeType::NextSibling)
            .map(|e| (e.src, e.dst))
            .collect();
        assert!(nexts.contains(&(rows[0], rows[1])));
        assert!(nexts.contains(&(rows[1], rows[2])));
        let (pc, sib) = edge_oracle(&a);
        assert_eq!(gr.count(EdgeType::ParentToChild), pc);
        assert_eq!(gr.count(EdgeType::NextSibling), sib);
        assert_eq!(pc, gr.nodes.len() - 1);
    }

    #[test]
    fn memory_includes_tokens_and_dedups() {
        let g = Arc::new(crate::grammar::parse_grammar(
            "root s;\nterminal int;\ns = Wrap(e body)\ne = Num(int value)\n",
        ).unwrap());
        let t1 = parse_tree(&g, r#"(Wrap (Num "1"))"#).unwrap();
        let m = subtree_memory(&t1);
        // Wrap(..), Num("1"), "1"
        assert_eq!(m.len(), 3);
        let num = m.entries()[1];
        assert_eq!(t1.count_nodes(num), 2);

        let dup = t(r#"(Assign (Name "i") (Name "i"))"#);
        let m = subtree_memory(&dup);
        // Assign, Name("i"), "i"
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn memory_holds_copyable_expression() {
        let src = t(r#"(Assign (Name "x") (Call "elementAt" [(Name "list") (BinOp (Name "i") (Add) (Num "1"))]))"#);
        let m = subtree_memory(&src);
        let want = t(r#"(Assign (Name "x") (BinOp (Name "i") (Add) (Num "1")))"#);
        let rhs = want.get(want.root()).children[1][0];
        assert!(m.find_key(&want.canonical_key(rhs)).is_some());
    }

    fn count_oracle(f: &Fragment) -> usize {
        if f.kind.is_dummy() {
            0
        } else {
            let mut n = 1;
            for field in &f.children {
                for c in field {
                    n += count_oracle(c);
                }
            }
            n
        }
    }

    #[test]
    fn count_nodes_cases() {
        assert_eq!(Fragment::dummy().count_nodes(), 0);
        let a = t(r#"(Assign (Num "1") (BinOp (Name "i") (Add) (Num "1")))"#);
        let lhs = a.get(a.root()).children[0][0];
        let rhs = a.get(a.root()).children[1][0];
        assert_eq!(a.count_nodes(lhs), 2);
        // BinOp, Name, "i", Add, Num, "1"
        assert_eq!(a.count_nodes(rhs), 6);
        assert_eq!(count_oracle(&a.fragment(rhs)), 6);
        assert_eq!(a.count_nodes(a.root()), 9);
    }

    #[test]
    fn validator_rejects_broken_trees() {
        let g = g();
        let assign = prod(&g, "Assign");
        let name = prod(&g, "Name");
        let x = Fragment::token(g.find_terminal("ident").unwrap(), "x");
        let bad_seq = Fragment {
            kind: NodeKind::NonTerminal(assign),
            children: vec![
                vec![Fragment::node(&g, name, vec![vec![x.clone()]])],
                vec![],
            ],
        };
        assert!(matches!(
            Tree::from_fragment(g.clone(), &bad_seq),
            Err(TreeError::Cardinality { .. })
        ));
        let wrong_type = Fragment {
            kind: NodeKind::NonTerminal(assign),
            children: vec![vec![x.clone()], vec![Fragment::dummy()]],
        };
        assert!(matches!(
            Tree::from_fragment(g.clone(), &wrong_type),
            Err(TreeError::TypeMismatch { .. })
        ));
        let bad_root = Fragment::node(&g, name, vec![vec![x]]);
        assert_eq!(Tree::from_fragment(g, &bad_root).unwrap_err(), TreeError::BadRoot);
    }
}
