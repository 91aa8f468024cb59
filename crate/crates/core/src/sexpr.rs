//! Text form of trees.
//!
//! ```text
//! (Assign (Name "x") (Call "f" [(Num "1") (Name "y")]))
//! ```
//!
//! A non-terminal is `(Ctor child...)` with one child per field. Tokens are
//! double-quoted with `\"` and `\\` escapes. An empty single/optional slot is
//! written `_`. Sequential fields are bracketed and their trailing dummy is
//! implicit, so a tree and its dummy-cleared copy print identically.

use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{Cardinality, Grammar, Symbol};
use crate::tree::{Fragment, NodeId, NodeKind, Tree, TreeError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SexprError {
    #[error("at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("at byte {pos}: no constructor `{ctor}` for type `{ty}`")]
    UnknownConstructor { pos: usize, ctor: String, ty: String },
    #[error(transparent)]
    Invalid(#[from] TreeError),
}

pub fn write_tree(t: &Tree, id: NodeId) -> String {
    let mut out = String::new();
    write_node(t, id, &mut out);
    out
}

fn write_node(t: &Tree, id: NodeId, out: &mut String) {
    let n = t.get(id);
    match &n.kind {
        NodeKind::Dummy => out.push('_'),
        NodeKind::Terminal { token, .. } => write_token(token, out),
        NodeKind::NonTerminal(p) => {
            let prod = t.grammar().production(*p);
            out.push('(');
            out.push_str(&prod.constructor);
            for (decl, kids) in prod.fields.iter().zip(&n.children) {
                out.push(' ');
                let real: Vec<NodeId> = kids.iter().copied().filter(|&c| !t.is_dummy(c)).collect();
                match decl.cardinality {
                    Cardinality::Sequential => {
                        out.push('[');
                        for (i, c) in real.iter().enumerate() {
                            if i > 0 {
                                out.push(' ');
                            }
                            write_node(t, *c, out);
                        }
                        out.push(']');
                    }
                    _ => match real.first() {
                        Some(&c) => write_node(t, c, out),
                        None => out.push('_'),
                    },
                }
            }
            out.push(')');
        }
    }
}

fn write_token(tok: &str, out: &mut String) {
    out.push('"');
    for ch in tok.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
}

/// Parses a whole tree whose root has the grammar's root type.
pub fn parse_tree(g: &Arc<Grammar>, text: &str) -> Result<Tree, SexprError> {
    let frag = parse_fragment(g, text, Symbol::Type(g.root_type()))?;
    Ok(Tree::from_fragment(g.clone(), &frag)?)
}

/// Parses one node accepted by `expected`.
pub fn parse_fragment(g: &Grammar, text: &str, expected: Symbol) -> Result<Fragment, SexprError> {
    let mut p = Parser { g, src: text.as_bytes(), text, pos: 0 };
    let f = p.node(expected)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    g: &'a Grammar,
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> SexprError {
        SexprError::Syntax {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), SexprError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", b as char)))
        }
    }

    fn node(&mut self, expected: Symbol) -> Result<Fragment, SexprError> {
        match (self.peek(), expected) {
            (Some(b'_'), _) => {
                self.pos += 1;
                Ok(Fragment::dummy())
            }
            (Some(b'"'), Symbol::Terminal(kind)) => {
                let tok = self.string()?;
                Ok(Fragment::token(kind, tok))
            }
            (Some(b'('), Symbol::Type(ty)) => {
                self.pos += 1;
                let start = self.pos;
                let ctor = self.ident()?;
                let prod = self.g.find_constructor(ty, &ctor).ok_or_else(|| {
                    SexprError::UnknownConstructor {
                        pos: start,
                        ctor: ctor.clone(),
                        ty: self.g.type_name(ty).to_string(),
                    }
                })?;
                let fields = self.g.production(prod).fields.clone();
                let mut kids = Vec::with_capacity(fields.len());
                for f in &fields {
                    match f.cardinality {
                        Cardinality::Sequential => {
                            self.expect(b'[')?;
                            let mut seq = Vec::new();
                            while self.peek() != Some(b']') {
                                if self.peek().is_none() {
                                    return Err(self.err("unterminated sequence"));
                                }
                                let c = self.node(f.accepts)?;
                                if c.kind.is_dummy() {
                                    return Err(self.err("`_` inside a sequence"));
                                }
                                seq.push(c);
                            }
                            self.pos += 1;
                            kids.push(seq);
                        }
                        _ => {
                            let c = self.node(f.accepts)?;
                            kids.push(if c.kind.is_dummy() { Vec::new() } else { vec![c] });
                        }
                    }
                }
                self.expect(b')')?;
                Ok(Fragment::node(self.g, prod, kids))
            }
            (Some(_), Symbol::Terminal(k)) => Err(self.err(&format!(
                "expected a `{}` token",
                self.g.terminal_name(k)
            ))),
            (Some(_), Symbol::Type(t)) => Err(self.err(&format!(
                "expected a `{}` node",
                self.g.type_name(t)
            ))),
            (None, _) => Err(self.err("unexpected end of input")),
        }
    }

    fn ident(&mut self) -> Result<String, SexprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a constructor name"));
        }
        Ok(self.text[start..self.pos].to_string())
    }

    fn string(&mut self) -> Result<String, SexprError> {
        self.expect(b'"')?;
        let mut out = String::new();
        let mut chars = self.text[self.pos..].char_indices();
        while let Some((i, ch)) = chars.next() {
            match ch {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e @ ('"' | '\\'))) => out.push(e),
                    _ => {
                        self.pos += i;
                        return Err(self.err("bad escape"));
                    }
                },
                c => out.push(c),
            }
        }
        self.pos = self.src.len();
        Err(self.err("unterminated string"))
    }
}
