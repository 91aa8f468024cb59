//! ASDL-style grammars: node types, constructors with ordered fields, and
//! terminal kinds.
//!
//! The concrete syntax is line oriented:
//!
//! ```text
//! root stmt;
//! terminal ident;
//! stmt = Assign(expr lhs, expr rhs)
//! expr = Call(ident func, expr* args)
//! ```
//!
//! A `?` suffix on a field type marks it optional, `*` marks it sequential.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// The fixed toy grammar used by the corpus generator and the acceptance tests.
pub const MINILANG: &str = "root stmt;
terminal ident;
terminal int;
stmt = Assign(expr lhs, expr rhs)
expr = Name(ident id)
expr = Num(int value)
expr = BinOp(expr left, op oper, expr right)
expr = Call(ident func, expr* args)
expr = Index(expr obj, expr index)
expr = Neg(expr operand)
op = Add()
op = Sub()
op = Mul()
op = Div()
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cardinality {
    Single,
    Optional,
    Sequential,
}

impl Cardinality {
    fn suffix(self) -> &'static str {
        match self {
            Cardinality::Single => "",
            Cardinality::Optional => "?",
            Cardinality::Sequential => "*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TerminalId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProdId(pub usize);

/// What a field accepts: a non-terminal type or a terminal kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Type(TypeId),
    Terminal(TerminalId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub accepts: Symbol,
    pub cardinality: Cardinality,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub id: ProdId,
    pub head: TypeId,
    pub constructor: String,
    pub fields: Vec<FieldDecl>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown type reference `{name}` at line {line}")]
    UnknownType { line: usize, name: String },
    #[error("duplicate constructor `{constructor}` for type `{head}` at line {line}")]
    DuplicateConstructor {
        line: usize,
        head: String,
        constructor: String,
    },
    #[error("duplicate field `{field}` in constructor `{constructor}` at line {line}")]
    DuplicateField {
        line: usize,
        constructor: String,
        field: String,
    },
    #[error("duplicate terminal kind `{name}` at line {line}")]
    DuplicateTerminal { line: usize, name: String },
    #[error("`{name}` is declared both as a terminal kind and as a type")]
    TerminalTypeClash { name: String },
    #[error("missing root")]
    MissingRoot,
    #[error("root type `{name}` has no productions")]
    RootWithoutProductions { name: String },
}

/// A validated, immutable grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    types: Vec<String>,
    terminals: Vec<String>,
    productions: Vec<Production>,
    root: TypeId,
    by_head: Vec<Vec<ProdId>>,
}

impl Grammar {
    pub fn minilang() -> Grammar {
        parse_grammar(MINILANG).expect("MiniLang fixture parses")
    }

    pub fn root_type(&self) -> TypeId {
        self.root
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        &self.types[t.0]
    }

    pub fn terminal_kinds(&self) -> &[String] {
        &self.terminals
    }

    pub fn terminal_name(&self, t: TerminalId) -> &str {
        &self.terminals[t.0]
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, p: ProdId) -> &Production {
        &self.productions[p.0]
    }

    pub fn productions_of(&self, t: TypeId) -> &[ProdId] {
        &self.by_head[t.0]
    }

    pub fn find_type(&self, name: &str) -> Option<TypeId> {
        self.types.iter().position(|n| n == name).map(TypeId)
    }

    pub fn find_terminal(&self, name: &str) -> Option<TerminalId> {
        self.terminals.iter().position(|n| n == name).map(TerminalId)
    }

    /// Looks up a constructor among the productions of `head`.
    pub fn find_constructor(&self, head: TypeId, ctor: &str) -> Option<ProdId> {
        self.by_head[head.0]
            .iter()
            .copied()
            .find(|p| self.productions[p.0].constructor == ctor)
    }

    /// Productions that may derive a child of `field`, in declaration order.
    /// Empty for terminal-kind fields.
    pub fn candidate_productions(&self, field: &FieldDecl) -> Vec<&Production> {
        match field.accepts {
            Symbol::Type(t) => self.by_head[t.0]
                .iter()
                .map(|p| &self.productions[p.0])
                .collect(),
            Symbol::Terminal(_) => Vec::new(),
        }
    }

    /// All `(production, field index)` pairs in declaration order. Used as
    /// the edge-type vocabulary by the model.
    pub fn all_fields(&self) -> Vec<(ProdId, usize)> {
        self.productions
            .iter()
            .flat_map(|p| (0..p.fields.len()).map(move |i| (p.id, i)))
            .collect()
    }

    pub fn symbol_name(&self, s: Symbol) -> &str {
        match s {
            Symbol::Type(t) => self.type_name(t),
            Symbol::Terminal(t) => self.terminal_name(t),
        }
    }

    /// Renders the grammar in the concrete syntax accepted by [`parse_grammar`].
    pub fn to_text(&self) -> String {
        let mut out = format!("root {};\n", self.type_name(self.root));
        for t in &self.terminals {
            out.push_str(&format!("terminal {t};\n"));
        }
        for p in &self.productions {
            let fields: Vec<String> = p
                .fields
                .iter()
                .map(|f| {
                    format!(
                        "{}{} {}",
                        self.symbol_name(f.accepts),
                        f.cardinality.suffix(),
                        f.name
                    )
                })
                .collect();
            out.push_str(&format!(
                "{} = {}({})\n",
                self.type_name(p.head),
                p.constructor,
                fields.join(", ")
            ));
        }
        out
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

struct RawField {
    ty: String,
    card: Cardinality,
    name: String,
}

struct RawProduction {
    line: usize,
    head: String,
    ctor: String,
    fields: Vec<RawField>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Column (1-based) of `sub`, which must be a subslice of `line`.
fn col_of(line: &str, sub: &str) -> usize {
    let off = (sub.as_ptr() as usize).wrapping_sub(line.as_ptr() as usize);
    if off <= line.len() {
        off + 1
    } else {
        1
    }
}

fn parse_directive<'a>(raw: &'a str, lineno: usize, keyword: &str) -> Result<&'a str, GrammarError> {
    let rest = raw.trim()[keyword.len()..].trim();
    let rest = rest
        .strip_suffix(';')
        .ok_or_else(|| syntax(lineno, raw.len().max(1), "expected `;`"))?
        .trim();
    if !is_ident(rest) {
        return Err(syntax(
            lineno,
            col_of(raw, rest),
            format!("expected identifier after `{keyword}`"),
        ));
    }
    Ok(rest)
}

fn parse_production(raw: &str, lineno: usize) -> Result<RawProduction, GrammarError> {
    let (head, rhs) = raw
        .split_once('=')
        .ok_or_else(|| syntax(lineno, 1, "expected `root`, `terminal` or `type = Ctor(...)`"))?;
    let head = head.trim();
    if !is_ident(head) {
        return Err(syntax(lineno, 1, "expected type name before `=`"));
    }
    let rhs = rhs.trim().trim_end_matches(';').trim();
    let open = rhs
        .find('(')
        .ok_or_else(|| syntax(lineno, col_of(raw, rhs), "expected `(` after constructor"))?;
    let ctor = rhs[..open].trim();
    if !is_ident(ctor) {
        return Err(syntax(lineno, col_of(raw, rhs), "expected constructor name"));
    }
    let body = rhs[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| syntax(lineno, raw.len().max(1), "expected `)` at end of production"))?;
    let mut fields = Vec::new();
    if !body.trim().is_empty() {
        for part in body.split(',') {
            let part = part.trim();
            let mut words = part.split_whitespace();
            let (ty, name) = match (words.next(), words.next(), words.next()) {
                (Some(t), Some(n), None) => (t, n),
                _ => {
                    return Err(syntax(
                        lineno,
                        col_of(raw, part),
                        format!("expected `type name` in field list, found `{part}`"),
                    ))
                }
            };
            let (ty, card) = if let Some(t) = ty.strip_suffix('?') {
                (t, Cardinality::Optional)
            } else if let Some(t) = ty.strip_suffix('*') {
                (t, Cardinality::Sequential)
            } else {
                (ty, Cardinality::Single)
            };
            if !is_ident(ty) || !is_ident(name) {
                return Err(syntax(lineno, col_of(raw, part), format!("malformed field `{part}`")));
            }
            fields.push(RawField {
                ty: ty.to_string(),
                card,
                name: name.to_string(),
            });
        }
    }
    Ok(RawProduction {
        line: lineno,
        head: head.to_string(),
        ctor: ctor.to_string(),
        fields,
    })
}

/// Parses and validates grammar source text.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut root: Option<(usize, String)> = None;
    let mut terminals: Vec<String> = Vec::new();
    let mut raws: Vec<RawProduction> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("root ") || line == "root" {
            let name = parse_directive(raw, lineno, "root")?;
            if root.is_some() {
                return Err(syntax(lineno, 1, "duplicate `root` directive"));
            }
            root = Some((lineno, name.to_string()));
        } else if line.starts_with("terminal ") || line == "terminal" {
            let name = parse_directive(raw, lineno, "terminal")?;
            if terminals.iter().any(|t| t == name) {
                return Err(GrammarError::DuplicateTerminal {
                    line: lineno,
                    name: name.to_string(),
                });
            }
            terminals.push(name.to_string());
        } else {
            raws.push(parse_production(raw, lineno)?);
        }
    }

    let (_, root_name) = root.ok_or(GrammarError::MissingRoot)?;

    // Types are declared by heading at least one production.
    let mut types: Vec<String> = Vec::new();
    let mut type_index: HashMap<String, TypeId> = HashMap::new();
    for r in &raws {
        if !type_index.contains_key(&r.head) {
            if terminals.contains(&r.head) {
                return Err(GrammarError::TerminalTypeClash { name: r.head.clone() });
            }
            type_index.insert(r.head.clone(), TypeId(types.len()));
            types.push(r.head.clone());
        }
    }
    let root = *type_index
        .get(&root_name)
        .ok_or(GrammarError::RootWithoutProductions { name: root_name })?;

    let mut productions: Vec<Production> = Vec::with_capacity(raws.len());
    let mut by_head: Vec<Vec<ProdId>> = vec![Vec::new(); types.len()];
    for r in raws {
        let head = type_index[&r.head];
        if by_head[head.0]
            .iter()
            .any(|p: &ProdId| productions[p.0].constructor == r.ctor)
        {
            return Err(GrammarError::DuplicateConstructor {
                line: r.line,
                head: r.head,
                constructor: r.ctor,
            });
        }
        let mut fields: Vec<FieldDecl> = Vec::with_capacity(r.fields.len());
        for f in r.fields {
            if fields.iter().any(|g| g.name == f.name) {
                return Err(GrammarError::DuplicateField {
                    line: r.line,
                    constructor: r.ctor,
                    field: f.name,
                });
            }
            let accepts = if let Some(&t) = type_index.get(&f.ty) {
                Symbol::Type(t)
            } else if let Some(k) = terminals.iter().position(|t| *t == f.ty) {
                Symbol::Terminal(TerminalId(k))
            } else {
                return Err(GrammarError::UnknownType {
                    line: r.line,
                    name: f.ty,
                });
            };
            fields.push(FieldDecl {
                name: f.name,
                accepts,
                cardinality: f.card,
            });
        }
        let id = ProdId(productions.len());
        by_head[head.0].push(id);
        productions.push(Production {
            id,
            head,
            constructor: r.ctor,
            fields,
        });
    }

    Ok(Grammar {
        types,
        terminals,
        productions,
        root,
        by_head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minilang_counts() {
        let g = Grammar::minilang();
        // stmt, expr, op
        assert_eq!(g.type_count(), 3);
        assert_eq!(g.productions().len(), 11);
        assert_eq!(g.terminal_kinds().len(), 2);
        assert_eq!(g.type_name(g.root_type()), "stmt");
    }

    #[test]
    fn minilang_round_trips_bit_exact() {
        let g = Grammar::minilang();
        assert_eq!(g.to_text(), MINILANG);
        assert_eq!(parse_grammar(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn candidate_productions_follow_declaration_order() {
        let g = Grammar::minilang();
        let assign = &g.productions()[0];
        let lhs = &assign.fields[0];
        let ctors: Vec<_> = g
            .candidate_productions(lhs)
            .iter()
            .map(|p| p.constructor.as_str())
            .collect();
        assert_eq!(ctors, ["Name", "Num", "BinOp", "Call", "Index", "Neg"]);

        let binop = g.find_constructor(g.find_type("expr").unwrap(), "BinOp").unwrap();
        let oper = &g.production(binop).fields[1];
        assert_eq!(g.candidate_productions(oper).len(), 4);

        let name = g.find_constructor(g.find_type("expr").unwrap(), "Name").unwrap();
        let id = &g.production(name).fields[0];
        assert!(g.candidate_productions(id).is_empty());
    }

    #[test]
    fn empty_text_is_missing_root() {
        assert_eq!(parse_grammar(""), Err(GrammarError::MissingRoot));
    }

    #[test]
    fn unknown_type_reference() {
        let err = parse_grammar("root s;\ns = A(foo x)\n").unwrap_err();
        assert!(matches!(err, GrammarError::UnknownType { ref name, line: 2 } if name == "foo"));
    }

    #[test]
    fn duplicate_constructor_and_field() {
        let err = parse_grammar("root s;\ns = A()\ns = A()\n").unwrap_err();
        assert!(matches!(err, GrammarError::DuplicateConstructor { line: 3, .. }));
        let err = parse_grammar("root s;\ns = A(s x, s x)\n").unwrap_err();
        assert!(matches!(err, GrammarError::DuplicateField { .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_grammar("root s;\ns = A(s)\n").unwrap_err();
        match err {
            GrammarError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse_grammar("root s\n").unwrap_err(),
            GrammarError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn optional_and_comments() {
        let g = parse_grammar("# toy\nroot s;\nterminal id;\n\ns = A(id? name, s* rest)\n").unwrap();
        let a = &g.productions()[0];
        assert_eq!(a.fields[0].cardinality, Cardinality::Optional);
        assert_eq!(a.fields[1].cardinality, Cardinality::Sequential);
        assert_eq!(parse_grammar(&g.to_text()).unwrap(), g);
    }

    #[test]
    fn root_must_have_productions() {
        let err = parse_grammar("root t;\nterminal t;\n").unwrap_err();
        assert!(matches!(err, GrammarError::RootWithoutProductions { .. }));
    }
}
