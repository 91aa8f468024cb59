//! Edit actions and their application.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::grammar::{Cardinality, Grammar, ProdId, Symbol, TerminalId};
use crate::tree::{instantiate, Fragment, NodeId, NodeKind, SubtreeMemory, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AddValue {
    Rule(ProdId),
    Token(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EditAction {
    Delete(NodeId),
    Add { anchor: NodeId, value: AddValue },
    Copy { anchor: NodeId, entry: usize },
    Stop,
}

/// Operator of an action, used as a class label by the editor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Delete = 0,
    Add = 1,
    Copy = 2,
    Stop = 3,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Delete, OpKind::Add, OpKind::Copy, OpKind::Stop];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl EditAction {
    pub fn op(&self) -> OpKind {
        match self {
            EditAction::Delete(_) => OpKind::Delete,
            EditAction::Add { .. } => OpKind::Add,
            EditAction::Copy { .. } => OpKind::Copy,
            EditAction::Stop => OpKind::Stop,
        }
    }

    /// The node the action points at, if any.
    pub fn target(&self) -> Option<NodeId> {
        match self {
            EditAction::Delete(n) => Some(*n),
            EditAction::Add { anchor, .. } | EditAction::Copy { anchor, .. } => Some(*anchor),
            EditAction::Stop => None,
        }
    }
}

pub type EditScript = Vec<EditAction>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EditError {
    #[error("node {0:?} does not exist in the current tree")]
    UnknownNode(NodeId),
    #[error("illegal target {node:?}: {reason}")]
    IllegalTarget { node: NodeId, reason: &'static str },
    #[error("value does not fit the field at {node:?}")]
    TypeMismatch { node: NodeId },
    #[error("memory entry {0} does not exist")]
    UnknownEntry(usize),
    #[error("action after stop")]
    ActionAfterStop,
}

/// Applies `a` to `t` in place. Returns the id of the node created by an
/// add or copy.
pub fn apply_mut(t: &mut Tree, memory: &SubtreeMemory, a: &EditAction) -> Result<Option<NodeId>, EditError> {
    match a {
        EditAction::Stop => {
            *t = t.clear_dummies();
            Ok(None)
        }
        EditAction::Delete(n) => {
            let n = *n;
            if !t.contains(n) {
                return Err(EditError::UnknownNode(n));
            }
            let (p, f, i) = t.position(n).ok_or(EditError::IllegalTarget {
                node: n,
                reason: "the root cannot be deleted",
            })?;
            if t.is_dummy(n) {
                return Err(EditError::IllegalTarget {
                    node: n,
                    reason: "dummies cannot be deleted",
                });
            }
            let card = t.slot_field(n).expect("non-root").cardinality;
            match card {
                Cardinality::Sequential => t.remove_at(p, f, i),
                _ => {
                    t.replace_at(p, f, i, &Fragment::dummy());
                }
            }
            Ok(None)
        }
        EditAction::Add { anchor, value } => {
            let (p, f, i, card, accepts) = slot(t, *anchor)?;
            let frag = match (value, accepts) {
                (AddValue::Rule(prod), Symbol::Type(ty)) => {
                    let g = t.grammar();
                    if prod.0 >= g.productions().len() || g.production(*prod).head != ty {
                        return Err(EditError::TypeMismatch { node: *anchor });
                    }
                    instantiate(g, *prod)
                }
                (AddValue::Token(tok), Symbol::Terminal(kind)) => Fragment::token(kind, tok.clone()),
                _ => return Err(EditError::TypeMismatch { node: *anchor }),
            };
            Ok(Some(place(t, p, f, i, card, &frag)))
        }
        EditAction::Copy { anchor, entry } => {
            let (p, f, i, card, accepts) = slot(t, *anchor)?;
            if *entry >= memory.len() {
                return Err(EditError::UnknownEntry(*entry));
            }
            if !kind_fits(t.grammar(), memory.kind(*entry), accepts) {
                return Err(EditError::TypeMismatch { node: *anchor });
            }
            let frag = memory.fragment(*entry);
            Ok(Some(place(t, p, f, i, card, &frag)))
        }
    }
}

pub fn apply(t: &Tree, memory: &SubtreeMemory, a: &EditAction) -> Result<Tree, EditError> {
    let mut out = t.clone();
    apply_mut(&mut out, memory, a)?;
    Ok(out)
}

pub(crate) fn kind_fits(g: &Grammar, kind: &NodeKind, accepts: Symbol) -> bool {
    match (kind, accepts) {
        (NodeKind::NonTerminal(p), Symbol::Type(t)) => g.production(*p).head == t,
        (NodeKind::Terminal { kind, .. }, Symbol::Terminal(k)) => *kind == k,
        _ => false,
    }
}

/// Validates an add/copy anchor and returns where the new node goes.
fn slot(t: &Tree, anchor: NodeId) -> Result<(NodeId, usize, usize, Cardinality, Symbol), EditError> {
    if !t.contains(anchor) {
        return Err(EditError::UnknownNode(anchor));
    }
    let (p, f, i) = t.position(anchor).ok_or(EditError::IllegalTarget {
        node: anchor,
        reason: "the root has no enclosing field",
    })?;
    let decl = t.slot_field(anchor).expect("non-root");
    if decl.cardinality != Cardinality::Sequential && !t.is_dummy(anchor) {
        return Err(EditError::IllegalTarget {
            node: anchor,
            reason: "single and optional fields only accept values at a dummy",
        });
    }
    Ok((p, f, i, decl.cardinality, decl.accepts))
}

fn place(t: &mut Tree, p: NodeId, f: usize, i: usize, card: Cardinality, frag: &Fragment) -> NodeId {
    match card {
        Cardinality::Sequential => t.insert_at(p, f, i, frag),
        _ => t.replace_at(p, f, i, frag),
    }
}

/// Candidate tokens for a terminal position: `vocab` first, then tokens of
/// the initial tree, without repeats.
pub fn token_candidates(vocab: &[(TerminalId, String)], memory: &SubtreeMemory, kind: TerminalId) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let from_tree = memory.source().tokens();
    for (k, tok) in vocab.iter().chain(from_tree.iter()) {
        if *k == kind && seen.insert(tok.as_str()) {
            out.push(tok.clone());
        }
    }
    out
}

/// Every action that applies cleanly to `t`, with add tokens drawn from
/// [`token_candidates`]. Order: deletes, adds, copies (each by pre-order of
/// the target node), then stop.
pub fn legal_actions(t: &Tree, memory: &SubtreeMemory, vocab: &[(TerminalId, String)]) -> Vec<EditAction> {
    let g = t.grammar();
    let order = t.preorder();
    let mut dels = Vec::new();
    let mut adds = Vec::new();
    let mut copies = Vec::new();
    for &id in &order {
        let Some(decl) = t.slot_field(id) else { continue };
        let dummy = t.is_dummy(id);
        if !dummy {
            dels.push(EditAction::Delete(id));
        }
        if !dummy && decl.cardinality != Cardinality::Sequential {
            continue;
        }
        match decl.accepts {
            Symbol::Type(ty) => {
                for &p in g.productions_of(ty) {
                    adds.push(EditAction::Add { anchor: id, value: AddValue::Rule(p) });
                }
            }
            Symbol::Terminal(kind) => {
                for tok in token_candidates(vocab, memory, kind) {
                    adds.push(EditAction::Add { anchor: id, value: AddValue::Token(tok) });
                }
            }
        }
        for e in 0..memory.len() {
            if kind_fits(g, memory.kind(e), decl.accepts) {
                copies.push(EditAction::Copy { anchor: id, entry: e });
            }
        }
    }
    dels.extend(adds);
    dels.extend(copies);
    dels.push(EditAction::Stop);
    dels
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("action {index}: {error}")]
pub struct ReplayError {
    pub index: usize,
    pub error: EditError,
}

/// Applies a script from `t0`, with copy memory taken from `t0`.
pub fn replay(t0: &Tree, script: &[EditAction]) -> Result<Tree, ReplayError> {
    let memory = SubtreeMemory::new(t0);
    replay_with(t0, &memory, script)
}

pub fn replay_with(t0: &Tree, memory: &SubtreeMemory, script: &[EditAction]) -> Result<Tree, ReplayError> {
    let mut t = t0.clone();
    let mut stopped = false;
    for (index, a) in script.iter().enumerate() {
        if stopped {
            return Err(ReplayError { index, error: EditError::ActionAfterStop });
        }
        apply_mut(&mut t, memory, a).map_err(|error| ReplayError { index, error })?;
        stopped = matches!(a, EditAction::Stop);
    }
    Ok(t)
}

// ---- id-independent script text ----

/// A root-relative address such as `rhs/args[1]`; the root itself is `.`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePath(pub Vec<(String, Option<usize>)>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(".");
        }
        for (i, (name, idx)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(name)?;
            if let Some(k) = idx {
                write!(f, "[{k}]")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: path `{path}` does not resolve")]
    BadPath { line: usize, path: String },
    #[error("line {line}: {error}")]
    Apply { line: usize, error: EditError },
}

pub fn path_of(t: &Tree, id: NodeId) -> NodePath {
    let mut segs = Vec::new();
    let mut cur = id;
    while let Some((p, f, i)) = t.position(cur) {
        let decl = t.slot_field(cur).expect("non-root");
        let idx = (decl.cardinality == Cardinality::Sequential).then_some(i);
        segs.push((decl.name.clone(), idx));
        cur = p;
        let _ = f;
    }
    segs.reverse();
    NodePath(segs)
}

pub fn resolve_path(t: &Tree, path: &NodePath) -> Option<NodeId> {
    let g = t.grammar();
    let mut cur = t.root();
    for (name, idx) in &path.0 {
        let NodeKind::NonTerminal(p) = t.kind(cur) else { return None };
        let prod = g.production(*p);
        let fi = prod.fields.iter().position(|f| &f.name == name)?;
        let seq = prod.fields[fi].cardinality == Cardinality::Sequential;
        let kids = &t.get(cur).children[fi];
        cur = match (seq, idx) {
            (true, Some(k)) => *kids.get(*k)?,
            (false, None) => kids[0],
            _ => return None,
        };
    }
    Some(cur)
}

pub fn parse_path(s: &str) -> Option<NodePath> {
    if s == "." {
        return Some(NodePath(Vec::new()));
    }
    let mut out = Vec::new();
    for seg in s.split('/') {
        match seg.split_once('[') {
            Some((name, rest)) => {
                let k = rest.strip_suffix(']')?.parse().ok()?;
                out.push((name.to_string(), Some(k)));
            }
            None => out.push((seg.to_string(), None)),
        }
        if out.last()?.0.is_empty() {
            return None;
        }
    }
    Some(NodePath(out))
}

/// Renders one action against the tree it applies to.
pub fn action_line(t: &Tree, a: &EditAction) -> String {
    let g = t.grammar();
    match a {
        EditAction::Delete(n) => format!("DEL {}", path_of(t, *n)),
        EditAction::Add { anchor, value: AddValue::Rule(p) } => {
            format!("ADD {} RULE {}", path_of(t, *anchor), g.production(*p).constructor)
        }
        EditAction::Add { anchor, value: AddValue::Token(tok) } => {
            format!("ADD {} TOK {}", path_of(t, *anchor), quote(tok))
        }
        EditAction::Copy { anchor, entry } => format!("CPY {} {}", path_of(t, *anchor), entry),
        EditAction::Stop => "STOP".to_string(),
    }
}

fn quote(tok: &str) -> String {
    let mut s = String::from("\"");
    for ch in tok.chars() {
        if ch == '"' || ch == '\\' {
            s.push('\\');
        }
        s.push(ch);
    }
    s.push('"');
    s
}

fn unquote(s: &str) -> Option<String> {
    let inner = s.strip_prefix('"')?.strip_suffix('"')?;
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next()? {
                e @ ('"' | '\\') => out.push(e),
                _ => return None,
            },
            '"' => return None,
            c => out.push(c),
        }
    }
    Some(out)
}

/// Renders a script, one line per action, replaying it to compute paths.
pub fn script_to_text(t0: &Tree, script: &[EditAction]) -> Result<String, ReplayError> {
    let memory = SubtreeMemory::new(t0);
    let mut t = t0.clone();
    let mut out = String::new();
    for (index, a) in script.iter().enumerate() {
        out.push_str(&action_line(&t, a));
        out.push('\n');
        apply_mut(&mut t, &memory, a).map_err(|error| ReplayError { index, error })?;
    }
    Ok(out)
}

/// Parses script text, resolving each path against the tree produced by
/// the preceding lines. Blank lines and `#` comments are skipped.
pub fn parse_script(t0: &Tree, text: &str) -> Result<EditScript, ScriptError> {
    let memory = SubtreeMemory::new(t0);
    let mut t = t0.clone();
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let syntax = |m: &str| ScriptError::Syntax { line, message: m.to_string() };
        let (op, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let rest = rest.trim();
        let node_at = |t: &Tree, p: &str| {
            parse_path(p)
                .and_then(|path| resolve_path(t, &path))
                .ok_or_else(|| ScriptError::BadPath { line, path: p.to_string() })
        };
        let a = match op {
            "STOP" if rest.is_empty() => EditAction::Stop,
            "DEL" => EditAction::Delete(node_at(&t, rest)?),
            "CPY" => {
                let (p, e) = rest.rsplit_once(char::is_whitespace).ok_or_else(|| syntax("expected `CPY <path> <index>`"))?;
                let entry = e.parse().map_err(|_| syntax("bad memory index"))?;
                EditAction::Copy { anchor: node_at(&t, p.trim())?, entry }
            }
            "ADD" => {
                let (p, tail) = rest.split_once(char::is_whitespace).ok_or_else(|| syntax("expected `ADD <path> RULE|TOK ...`"))?;
                let anchor = node_at(&t, p)?;
                let (kind, val) = tail.trim().split_once(char::is_whitespace).ok_or_else(|| syntax("missing value"))?;
                let val = val.trim();
                let value = match kind {
                    "RULE" => {
                        let Some(Symbol::Type(ty)) = t.slot_field(anchor).map(|f| f.accepts) else {
                            return Err(ScriptError::Apply { line, error: EditError::TypeMismatch { node: anchor } });
                        };
                        let p = t.grammar().find_constructor(ty, val).ok_or_else(|| syntax("unknown constructor for this field"))?;
                        AddValue::Rule(p)
                    }
                    "TOK" => AddValue::Token(unquote(val).ok_or_else(|| syntax("malformed token literal"))?),
                    _ => return Err(syntax("expected RULE or TOK")),
                };
                EditAction::Add { anchor, value }
            }
            _ => return Err(syntax("unknown action")),
        };
        apply_mut(&mut t, &memory, &a).map_err(|error| ScriptError::Apply { line, error })?;
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse_tree;
    use crate::tree::{structural_eq, subtree_memory};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn g() -> Arc<Grammar> {
        Arc::new(Grammar::minilang())
    }

    fn t(src: &str) -> Tree {
        parse_tree(&g(), src).unwrap()
    }

    fn rhs(t: &Tree) -> NodeId {
        t.get(t.root()).children[1][0]
    }

    fn ctor(g: &Grammar, name: &str) -> ProdId {
        g.productions().iter().find(|p| p.constructor == name).unwrap().id
    }

    const FIG: &str = r#"(Assign (Name "x") (Call "elementAt" [(Name "list") (BinOp (Name "i") (Add) (Num "1"))]))"#;

    #[test]
    fn delete_leaves_dummy_in_single_field() {
        let t0 = t(FIG);
        let m = subtree_memory(&t0);
        let t1 = apply(&t0, &m, &EditAction::Delete(rhs(&t0))).unwrap();
        assert!(t1.is_dummy(rhs(&t1)));
        assert!(t1.validate().is_ok());
        assert_eq!(t1.to_sexpr(), r#"(Assign (Name "x") _)"#);
    }

    #[test]
    fn add_instantiates_with_fresh_dummies() {
        let g = g();
        let t0 = t(FIG);
        let m = subtree_memory(&t0);
        let t1 = apply(&t0, &m, &EditAction::Delete(rhs(&t0))).unwrap();
        let add = EditAction::Add { anchor: rhs(&t1), value: AddValue::Rule(ctor(&g, "Index")) };
        let mut t2 = t1.clone();
        let new = apply_mut(&mut t2, &m, &add).unwrap().unwrap();
        assert_eq!(new, rhs(&t2));
        assert!(new.0 >= t1.next_id().0);
        let kids = &t2.get(new).children;
        assert!(kids.iter().all(|f| f.len() == 1 && t2.is_dummy(f[0])));
        // untouched nodes keep their ids
        assert_eq!(t2.get(t2.root()).children[0], t0.get(t0.root()).children[0]);
    }

    #[test]
    fn stop_on_complete_tree_is_identity() {
        let t0 = t(FIG);
        let out = replay(&t0, &[EditAction::Stop]).unwrap();
        assert!(structural_eq(&out, &t0));
        assert_eq!(out.to_sexpr(), t0.to_sexpr());
    }

    #[test]
    fn copy_places_subtree_in_one_step() {
        let t0 = t(r#"(Assign (Name "x") (BinOp (Name "i") (Add) (Num "1")))"#);
        let m = subtree_memory(&t0);
        let binop = (0..m.len()).find(|&i| matches!(m.kind(i), NodeKind::NonTerminal(p) if t0.grammar().production(*p).constructor == "BinOp")).unwrap();
        let t1 = apply(&t0, &m, &EditAction::Delete(t0.get(t0.root()).children[0][0])).unwrap();
        let lhs = t1.get(t1.root()).children[0][0];
        let t2 = apply(&t1, &m, &EditAction::Copy { anchor: lhs, entry: binop }).unwrap();
        assert_eq!(t2.to_sexpr(), r#"(Assign (BinOp (Name "i") (Add) (Num "1")) (BinOp (Name "i") (Add) (Num "1")))"#);
        assert!(t2.validate().is_ok());
    }

    #[test]
    fn figure_script_by_text() {
        let t0 = t(FIG);
        let m = subtree_memory(&t0);
        let binop = (0..m.len())
            .find(|&i| m.key(i) == t0.canonical_key(t0.get(rhs(&t0)).children[1][1]))
            .unwrap();
        let text = format!(
            "DEL rhs\nADD rhs RULE Index\nADD rhs/obj RULE Name\nADD rhs/obj/id TOK \"list\"\nCPY rhs/index {binop}\nSTOP\n"
        );
        let script = parse_script(&t0, &text).unwrap();
        assert_eq!(script.len(), 6);
        let out = replay(&t0, &script).unwrap();
        assert_eq!(out.to_sexpr(), r#"(Assign (Name "x") (Index (Name "list") (BinOp (Name "i") (Add) (Num "1"))))"#);
        assert_eq!(script_to_text(&t0, &script).unwrap(), text);
    }

    #[test]
    fn errors_are_typed() {
        let g = g();
        let t0 = t(FIG);
        let m = subtree_memory(&t0);
        assert!(matches!(
            apply(&t0, &m, &EditAction::Delete(t0.root())),
            Err(EditError::IllegalTarget { .. })
        ));
        assert!(matches!(
            apply(&t0, &m, &EditAction::Delete(NodeId(999))),
            Err(EditError::UnknownNode(_))
        ));
        let add_full = EditAction::Add { anchor: rhs(&t0), value: AddValue::Rule(ctor(&g, "Num")) };
        assert!(matches!(apply(&t0, &m, &add_full), Err(EditError::IllegalTarget { .. })));
        let t1 = apply(&t0, &m, &EditAction::Delete(rhs(&t0))).unwrap();
        let wrong = EditAction::Add { anchor: rhs(&t1), value: AddValue::Rule(ctor(&g, "Add")) };
        assert!(matches!(apply(&t1, &m, &wrong), Err(EditError::TypeMismatch { .. })));
        let tok = EditAction::Add { anchor: rhs(&t1), value: AddValue::Token("y".into()) };
        assert!(matches!(apply(&t1, &m, &tok), Err(EditError::TypeMismatch { .. })));
        let r = replay(&t0, &[EditAction::Delete(rhs(&t0)), EditAction::Delete(rhs(&t0))]);
        assert_eq!(r.unwrap_err().index, 1);
        let r = replay(&t0, &[EditAction::Stop, EditAction::Stop]);
        assert_eq!(r.unwrap_err().error, EditError::ActionAfterStop);
    }

    #[test]
    fn single_node_tree_only_stops() {
        let g = Arc::new(crate::grammar::parse_grammar("root s;\ns = Leaf()\n").unwrap());
        let t0 = parse_tree(&g, "(Leaf)").unwrap();
        let m = subtree_memory(&t0);
        assert_eq!(legal_actions(&t0, &m, &[]), vec![EditAction::Stop]);
    }

    #[test]
    fn sequential_insert_positions() {
        let t0 = t(r#"(Assign (Name "x") (Call "f" [(Name "e")]))"#);
        let m = subtree_memory(&t0);
        let call = rhs(&t0);
        let args = t0.get(call).children[1].clone();
        let acts = legal_actions(&t0, &m, &[]);
        for &a in &args {
            assert!(acts.iter().any(|x| matches!(x, EditAction::Add { anchor, .. } if *anchor == a)));
        }
        let name = ctor(t0.grammar(), "Num");
        let before_e = apply(&t0, &m, &EditAction::Add { anchor: args[0], value: AddValue::Rule(name) }).unwrap();
        assert_eq!(before_e.to_sexpr(), r#"(Assign (Name "x") (Call "f" [(Num _) (Name "e")]))"#);
        let append = apply(&t0, &m, &EditAction::Add { anchor: args[1], value: AddValue::Rule(name) }).unwrap();
        assert_eq!(append.to_sexpr(), r#"(Assign (Name "x") (Call "f" [(Name "e") (Num _)]))"#);
    }

    /// Every conceivable action over a bounded value space, used as the
    /// apply-success reference.
    fn all_candidates(t: &Tree, m: &SubtreeMemory, vocab: &[(TerminalId, String)]) -> Vec<EditAction> {
        let g = t.grammar();
        let mut toks: Vec<(TerminalId, String)> = vocab.to_vec();
        toks.extend(m.source().tokens());
        let mut out = Vec::new();
        for id in t.preorder().into_iter().chain([NodeId(9999)]) {
            out.push(EditAction::Delete(id));
            for p in g.productions() {
                out.push(EditAction::Add { anchor: id, value: AddValue::Rule(p.id) });
            }
            // Tokens are typed by their terminal kind; only offer them where
            // that kind (or a non-terminal) is expected.
            let slot_kind = t.node(id).and_then(|_| t.slot_field(id)).map(|f| f.accepts);
            for (k, tok) in &toks {
                if matches!(slot_kind, Some(Symbol::Terminal(sk)) if sk != *k) {
                    continue;
                }
                out.push(EditAction::Add { anchor: id, value: AddValue::Token(tok.clone()) });
            }
            for e in 0..m.len() + 1 {
                out.push(EditAction::Copy { anchor: id, entry: e });
            }
        }
        out.push(EditAction::Stop);
        out
    }

    fn vocab(g: &Grammar) -> Vec<(TerminalId, String)> {
        let id = g.find_terminal("ident").unwrap();
        let int = g.find_terminal("int").unwrap();
        vec![(id, "z".into()), (int, "7".into())]
    }

    #[test]
    fn legal_set_on_fresh_index_fragment() {
        let g = g();
        let t0 = t(r#"(Assign (Name "x") (Num "1"))"#);
        let m = subtree_memory(&t0);
        let t1 = apply(&t0, &m, &EditAction::Delete(rhs(&t0))).unwrap();
        let t2 = apply(&t1, &m, &EditAction::Add { anchor: rhs(&t1), value: AddValue::Rule(ctor(&g, "Index")) }).unwrap();
        let acts = legal_actions(&t2, &m, &[]);
        // deletes: Name, "x", Index; stop
        assert_eq!(acts.iter().filter(|a| a.op() == OpKind::Delete).count(), 3);
        // two expr dummies, 6 productions each; memory: Assign, Name(x), "x", Num(1), "1" -> 2 expr entries each
        assert_eq!(acts.iter().filter(|a| a.op() == OpKind::Add).count(), 12);
        assert_eq!(acts.iter().filter(|a| a.op() == OpKind::Copy).count(), 4);
        assert_eq!(acts.last(), Some(&EditAction::Stop));
    }

    fn arb_tree() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            prop_oneof![Just("x"), Just("i")].prop_map(|t| format!("(Name \"{t}\")")),
            (0u8..3).prop_map(|d| format!("(Num \"{d}\")")),
        ];
        let e = leaf.prop_recursive(2, 8, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("(BinOp {a} (Add) {b})")),
                prop::collection::vec(inner.clone(), 0..2).prop_map(|xs| format!("(Call \"f\" [{}])", xs.join(" "))),
                inner.prop_map(|a| format!("(Neg {a})")),
            ]
        });
        (e.clone(), e).prop_map(|(a, b)| format!("(Assign {a} {b})"))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn random_walks_preserve_validity(src in arb_tree(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..8)) {
            let g = g();
            let t0 = t(&src);
            let m = subtree_memory(&t0);
            let v = vocab(&g);
            let mut cur = t0.clone();
            for pick in picks {
                let acts: Vec<_> = legal_actions(&cur, &m, &v).into_iter().filter(|a| *a != EditAction::Stop).collect();
                if acts.is_empty() { break; }
                let a = pick.get(&acts);
                cur = apply(&cur, &m, a).unwrap();
                prop_assert!(cur.validate().is_ok(), "{:?}", cur.validate());
            }
        }

        #[test]
        fn legal_iff_applies(src in arb_tree(), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..3)) {
            let g = g();
            let t0 = t(&src);
            let m = subtree_memory(&t0);
            let v = vocab(&g);
            let mut cur = t0.clone();
            for pick in picks {
                let acts: Vec<_> = legal_actions(&cur, &m, &v).into_iter().filter(|a| *a != EditAction::Stop).collect();
                if acts.is_empty() { break; }
                cur = apply(&cur, &m, pick.get(&acts)).unwrap();
            }
            let legal: HashSet<EditAction> = legal_actions(&cur, &m, &v).into_iter().collect();
            for a in all_candidates(&cur, &m, &v) {
                let ok = apply(&cur, &m, &a).is_ok();
                prop_assert_eq!(ok, legal.contains(&a), "{:?}", a);
            }
        }

        #[test]
        fn delete_then_readd_is_identity(src in arb_tree()) {
            let t0 = t(&src);
            let m = subtree_memory(&t0);
            // Every single-field child can be restored by deleting and copying it back.
            for id in t0.preorder() {
                let Some(f) = t0.slot_field(id) else { continue };
                if f.cardinality != Cardinality::Single || t0.is_dummy(id) { continue; }
                let (p, fi, _) = t0.position(id).unwrap();
                let t1 = apply(&t0, &m, &EditAction::Delete(id)).unwrap();
                let hole = t1.get(p).children[fi][0];
                let entry = m.find_key(&t0.canonical_key(id)).unwrap();
                let t2 = apply(&t1, &m, &EditAction::Copy { anchor: hole, entry }).unwrap();
                prop_assert!(structural_eq(&t0, &t2));
            }
        }

        #[test]
        fn paths_resolve_to_their_node(src in arb_tree()) {
            let t0 = t(&src);
            for id in t0.preorder() {
                let p = path_of(&t0, id);
                prop_assert_eq!(parse_path(&p.to_string()), Some(p.clone()));
                prop_assert_eq!(resolve_path(&t0, &p), Some(id));
            }
        }
    }
}
