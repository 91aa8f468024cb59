//! Synthetic MiniLang edit pairs and their line-oriented file format.
//!
//! Each example plants one rewrite at a random expression slot of a random
//! statement. Every example of a category carries the same edit intent on a
//! different tree.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edits::EditAction;
use crate::grammar::{Grammar, ProdId, TerminalId};
use crate::oracle::gold_script;
use crate::sexpr::{parse_tree, SexprError};
use crate::tree::{structural_eq, Fragment, NodeKind, Tree};

pub const IDENTS: &[&str] = &["x", "y", "z", "i", "j", "k", "n", "list", "arr", "a", "b", "tmp"];
pub const FUNCS: &[&str] = &["f", "g", "print", "log", "check", "elementAt", "max", "min"];
pub const INTS: &[&str] = &["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];

/// Height of a statement in non-terminal levels, the root counting as one.
pub const MAX_DEPTH: usize = 5;
pub const MAX_SEQ: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    CallToIndex,
    OperandSwap,
    DoubleNeg,
    MulOne,
    AddZero,
    RenameCallAppend,
    WrapCheck,
    NegateOperand,
    Identity,
}

impl Category {
    /// The rules used by default; `Identity` exists for tests.
    pub const SHIPPED: [Category; 8] = [
        Category::CallToIndex,
        Category::OperandSwap,
        Category::DoubleNeg,
        Category::MulOne,
        Category::AddZero,
        Category::RenameCallAppend,
        Category::WrapCheck,
        Category::NegateOperand,
    ];

    /// Categories whose gold operator sequence does not depend on the tree.
    pub const STRUCTURE_INVARIANT: [Category; 2] = [Category::CallToIndex, Category::OperandSwap];

    pub fn name(self) -> &'static str {
        match self {
            Category::CallToIndex => "call_to_index",
            Category::OperandSwap => "operand_swap",
            Category::DoubleNeg => "double_neg",
            Category::MulOne => "mul_one",
            Category::AddZero => "add_zero",
            Category::RenameCallAppend => "rename_call_append",
            Category::WrapCheck => "wrap_check",
            Category::NegateOperand => "negate_operand",
            Category::Identity => "identity",
        }
    }

    /// Operator kinds of every gold script in a structure-invariant
    /// category, Stop included. `R` is a rule add, `T` a token add.
    pub fn template(self) -> Option<&'static str> {
        match self {
            Category::CallToIndex => Some("DRCCS"),
            Category::OperandSwap => Some("DCDCS"),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::SHIPPED
            .iter()
            .chain([Category::Identity].iter())
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// One-letter operator kinds of a script, as used by [`Category::template`].
pub fn kind_string(script: &[EditAction]) -> String {
    script
        .iter()
        .map(|a| match a {
            EditAction::Delete(_) => 'D',
            EditAction::Add { value: crate::edits::AddValue::Rule(_), .. } => 'R',
            EditAction::Add { .. } => 'T',
            EditAction::Copy { .. } => 'C',
            EditAction::Stop => 'S',
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Example {
    pub src: Tree,
    pub tgt: Tree,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub oneshot: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Sizes { train: 2000, dev: 250, test: 250, oneshot: 400 }
    }
}

impl FromStr for Sizes {
    type Err = String;

    /// `train,dev,test[,oneshot]`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad size `{p}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [train, dev, test] => Ok(Sizes { train, dev, test, oneshot: 0 }),
            [train, dev, test, oneshot] => Ok(Sizes { train, dev, test, oneshot }),
            _ => Err("expected train,dev,test[,oneshot]".to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub oneshot: Vec<Example>,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &Vec<Example>); 4] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("oneshot", &self.oneshot),
        ]
    }
}

/// Draws all four splits from one seeded stream. Category counts within a
/// split are exact: an even share each, the remainder going to the first
/// categories in `rules`.
pub fn generate(g: &Arc<Grammar>, seed: u64, sizes: Sizes, rules: &[Category]) -> Splits {
    assert!(!rules.is_empty(), "rule set must not be empty");
    let mut gen = Generator::new(g.clone(), seed);
    let mut split = |n: usize| gen.split(n, rules);
    Splits {
        train: split(sizes.train),
        dev: split(sizes.dev),
        test: split(sizes.test),
        oneshot: split(sizes.oneshot),
    }
}

pub struct Generator {
    g: Arc<Grammar>,
    rng: ChaCha8Rng,
    p: Prods,
}

struct Prods {
    assign: ProdId,
    name: ProdId,
    num: ProdId,
    binop: ProdId,
    call: ProdId,
    index: ProdId,
    neg: ProdId,
    ops: [ProdId; 4],
    ident: TerminalId,
    int: TerminalId,
}

impl Prods {
    fn new(g: &Grammar) -> Prods {
        let ty = |n: &str| g.find_type(n).expect("MiniLang type");
        let (stmt, expr, op) = (ty("stmt"), ty("expr"), ty("op"));
        let c = |t, n: &str| g.find_constructor(t, n).expect("MiniLang constructor");
        Prods {
            assign: c(stmt, "Assign"),
            name: c(expr, "Name"),
            num: c(expr, "Num"),
            binop: c(expr, "BinOp"),
            call: c(expr, "Call"),
            index: c(expr, "Index"),
            neg: c(expr, "Neg"),
            ops: [c(op, "Add"), c(op, "Sub"), c(op, "Mul"), c(op, "Div")],
            ident: g.find_terminal("ident").expect("ident"),
            int: g.find_terminal("int").expect("int"),
        }
    }
}

/// A statement with one expression position left open for the rewrite.
struct Context {
    /// Builds the statement around the given expression.
    parts: Vec<Frame>,
    other: Fragment,
    hole_on_lhs: bool,
}

enum Frame {
    BinLeft(usize, Fragment),
    BinRight(Fragment, usize),
    CallArg(String, Vec<Fragment>, usize),
    IndexObj(Fragment),
    IndexIdx(Fragment),
    Neg,
}

impl Generator {
    pub fn new(g: Arc<Grammar>, seed: u64) -> Generator {
        let p = Prods::new(&g);
        Generator { g, rng: ChaCha8Rng::seed_from_u64(seed), p }
    }

    fn split(&mut self, n: usize, rules: &[Category]) -> Vec<Example> {
        let k = rules.len();
        let mut cats = Vec::with_capacity(n);
        for (i, &c) in rules.iter().enumerate() {
            let count = n / k + usize::from(i < n % k);
            cats.extend(std::iter::repeat_n(c, count));
        }
        cats.shuffle(&mut self.rng);
        cats.into_iter().map(|c| self.example(c)).collect()
    }

    /// One example of `cat`, resampling until the rewrite applies cleanly.
    pub fn example(&mut self, cat: Category) -> Example {
        loop {
            if let Some(ex) = self.try_example(cat) {
                return ex;
            }
        }
    }

    fn try_example(&mut self, cat: Category) -> Option<Example> {
        let hole_depth = self.rng.random_range(0..=2usize);
        let ctx = self.context(hole_depth);
        // levels left below the hole: root + frames + this expression
        let budget = MAX_DEPTH - 1 - ctx.parts.len();
        let (before, after) = self.rewrite(cat, budget)?;
        let src = self.plug(&ctx, before);
        let tgt = self.plug(&ctx, after);
        let src = Tree::from_fragment(self.g.clone(), &src).ok()?;
        let tgt = Tree::from_fragment(self.g.clone(), &tgt).ok()?;
        if (cat == Category::Identity) != structural_eq(&src, &tgt) {
            return None;
        }
        if height(&src) > MAX_DEPTH || height(&tgt) > MAX_DEPTH {
            return None;
        }
        if let Some(tpl) = cat.template() {
            let script = gold_script(&src, &tgt, None).ok()?;
            if kind_string(&script) != tpl {
                return None;
            }
        }
        Some(Example { src, tgt, category: cat })
    }

    fn pick<'s>(&mut self, pool: &[&'s str]) -> &'s str {
        pool.choose(&mut self.rng).expect("non-empty pool")
    }

    fn name(&mut self, s: &str) -> Fragment {
        Fragment::node(&self.g, self.p.name, vec![vec![Fragment::token(self.p.ident, s)]])
    }

    fn num(&mut self, s: &str) -> Fragment {
        Fragment::node(&self.g, self.p.num, vec![vec![Fragment::token(self.p.int, s)]])
    }

    fn leaf(&mut self) -> Fragment {
        if self.rng.random_bool(0.6) {
            let s = self.pick(IDENTS);
            self.name(s)
        } else {
            let s = self.pick(INTS);
            self.num(s)
        }
    }

    fn binop(&mut self, l: Fragment, op: usize, r: Fragment) -> Fragment {
        let o = Fragment::node(&self.g, self.p.ops[op], vec![]);
        Fragment::node(&self.g, self.p.binop, vec![vec![l], vec![o], vec![r]])
    }

    fn call(&mut self, f: &str, args: Vec<Fragment>) -> Fragment {
        Fragment::node(&self.g, self.p.call, vec![vec![Fragment::token(self.p.ident, f)], args])
    }

    fn index(&mut self, o: Fragment, i: Fragment) -> Fragment {
        Fragment::node(&self.g, self.p.index, vec![vec![o], vec![i]])
    }

    fn neg(&mut self, e: Fragment) -> Fragment {
        Fragment::node(&self.g, self.p.neg, vec![vec![e]])
    }

    /// A random expression at most `levels` non-terminal levels high.
    fn expr(&mut self, levels: usize) -> Fragment {
        if levels <= 1 || self.rng.random_bool(0.55) {
            return self.leaf();
        }
        match self.rng.random_range(0..4) {
            0 => {
                let l = self.expr(levels - 1);
                let op = self.rng.random_range(0..4);
                let r = self.expr(levels - 1);
                self.binop(l, op, r)
            }
            1 => {
                let f = self.pick(FUNCS);
                let n = self.rng.random_range(0..=MAX_SEQ);
                let args = (0..n).map(|_| self.expr(levels - 1)).collect();
                self.call(f, args)
            }
            2 => {
                let o = self.expr(levels - 1);
                let i = self.expr(levels - 1);
                self.index(o, i)
            }
            _ => {
                let e = self.expr(levels - 1);
                self.neg(e)
            }
        }
    }

    fn context(&mut self, depth: usize) -> Context {
        let hole_on_lhs = self.rng.random_bool(0.3);
        let other = self.expr(3);
        let mut parts = Vec::new();
        for _ in 0..depth {
            let f = match self.rng.random_range(0..5) {
                0 => {
                    let op = self.rng.random_range(0..4);
                    let r = self.expr(2);
                    Frame::BinLeft(op, r)
                }
                1 => {
                    let l = self.expr(2);
                    let op = self.rng.random_range(0..4);
                    Frame::BinRight(l, op)
                }
                2 => {
                    let f = self.pick(FUNCS);
                    let n = self.rng.random_range(0..MAX_SEQ);
                    let others = (0..n).map(|_| self.expr(2)).collect();
                    let at = self.rng.random_range(0..=n);
                    Frame::CallArg(f.to_string(), others, at)
                }
                3 => {
                    if self.rng.random_bool(0.5) {
                        Frame::IndexObj(self.expr(2))
                    } else {
                        Frame::IndexIdx(self.expr(2))
                    }
                }
                _ => Frame::Neg,
            };
            parts.push(f);
        }
        Context { parts, other, hole_on_lhs }
    }

    fn plug(&mut self, ctx: &Context, e: Fragment) -> Fragment {
        let mut cur = e;
        for f in ctx.parts.iter().rev() {
            cur = match f {
                Frame::BinLeft(op, r) => self.binop(cur, *op, r.clone()),
                Frame::BinRight(l, op) => self.binop(l.clone(), *op, cur),
                Frame::CallArg(name, others, at) => {
                    let mut args = others.clone();
                    args.insert(*at, cur);
                    self.call(name, args)
                }
                Frame::IndexObj(i) => self.index(cur, i.clone()),
                Frame::IndexIdx(o) => self.index(o.clone(), cur),
                Frame::Neg => self.neg(cur),
            };
        }
        let (l, r) = if ctx.hole_on_lhs { (cur, ctx.other.clone()) } else { (ctx.other.clone(), cur) };
        Fragment::node(&self.g, self.p.assign, vec![vec![l], vec![r]])
    }

    /// Source and target expressions for one rule, at most `levels` high.
    fn rewrite(&mut self, cat: Category, levels: usize) -> Option<(Fragment, Fragment)> {
        let sub = levels.saturating_sub(1).clamp(1, 2);
        Some(match cat {
            Category::CallToIndex => {
                let o = self.expr(sub);
                let i = self.expr(sub);
                let before = self.call("elementAt", vec![o.clone(), i.clone()]);
                (before, self.index(o, i))
            }
            Category::OperandSwap => {
                let a = self.expr(sub);
                let b = self.expr(sub);
                if a.kind == b.kind || matches!((&a.kind, &b.kind), (NodeKind::NonTerminal(x), NodeKind::NonTerminal(y)) if x == y) {
                    return None;
                }
                let op = self.rng.random_range(0..4);
                let before = self.binop(a.clone(), op, b.clone());
                (before, self.binop(b, op, a))
            }
            Category::DoubleNeg => {
                let e = self.expr(levels.saturating_sub(2).max(1));
                let inner = self.neg(e.clone());
                (self.neg(inner), e)
            }
            Category::MulOne => {
                let e = self.expr(sub);
                let one = self.num("1");
                (self.binop(e.clone(), 2, one), e)
            }
            Category::AddZero => {
                let e = self.expr(sub);
                let zero = self.num("0");
                (self.binop(e.clone(), 0, zero), e)
            }
            Category::RenameCallAppend => {
                let n = self.rng.random_range(0..MAX_SEQ);
                let args: Vec<Fragment> = (0..n).map(|_| self.expr(sub)).collect();
                let k = self.pick(INTS);
                let lit = self.num(k);
                let mut after_args = args.clone();
                after_args.push(lit);
                (self.call("print", args), self.call("log", after_args))
            }
            Category::WrapCheck => {
                let e = self.expr(sub);
                let wrapped = self.call("check", vec![e.clone()]);
                (e, wrapped)
            }
            Category::NegateOperand => {
                let a = self.expr(sub);
                let b = self.expr(sub);
                let op = self.rng.random_range(0..4);
                let nb = self.neg(b.clone());
                (self.binop(a.clone(), op, b), self.binop(a, op, nb))
            }
            Category::Identity => {
                let e = self.expr(levels);
                (e.clone(), e)
            }
        })
    }
}

/// Height in non-terminal levels (terminals and dummies do not count).
pub fn height(t: &Tree) -> usize {
    fn go(t: &Tree, id: crate::tree::NodeId) -> usize {
        match t.kind(id) {
            NodeKind::NonTerminal(_) => 1 + t.get(id).children.iter().flatten().map(|&c| go(t, c)).max().unwrap_or(0),
            _ => 0,
        }
    }
    go(t, t.root())
}

/// Closed token vocabulary: every (kind, token) in the given examples,
/// sorted.
pub fn harvest_vocab(examples: &[Example]) -> Vec<(TerminalId, String)> {
    let mut v: Vec<(TerminalId, String)> = examples
        .iter()
        .flat_map(|e| e.src.tokens().into_iter().chain(e.tgt.tokens()))
        .collect();
    v.sort();
    v.dedup();
    v
}

// ---- small random pairs ----

fn small_expr<R: rand::Rng + ?Sized>(rng: &mut R, budget: u32) -> String {
    let leaf = |rng: &mut R| {
        if rng.random_bool(0.5) {
            format!("(Name \"{}\")", ["x", "i"][rng.random_range(0..2)])
        } else {
            format!("(Num \"{}\")", ["0", "1"][rng.random_range(0..2)])
        }
    };
    if budget == 0 || rng.random_range(0..7) < 3 {
        return leaf(rng);
    }
    match rng.random_range(0..4) {
        0 => {
            let op = ["Add", "Mul"][rng.random_range(0..2)];
            format!("(BinOp {} ({op}) {})", small_expr(rng, budget - 1), small_expr(rng, budget - 1))
        }
        1 => {
            let n = rng.random_range(0..3);
            let args: Vec<String> = (0..n).map(|_| small_expr(rng, budget - 1)).collect();
            format!("(Call \"f\" [{}])", args.join(" "))
        }
        2 => format!("(Index {} {})", small_expr(rng, budget - 1), small_expr(rng, budget - 1)),
        _ => format!("(Neg {})", small_expr(rng, budget - 1)),
    }
}

/// A random `Assign` over a tiny alphabet with at most `max_nodes`
/// non-dummy nodes, for exhaustive-search cross-checks.
pub fn small_tree<R: rand::Rng + ?Sized>(g: &Arc<Grammar>, rng: &mut R, max_nodes: usize) -> Tree {
    loop {
        let text = format!("(Assign {} {})", small_expr(rng, 2), small_expr(rng, 2));
        let t = parse_tree(g, &text).expect("generated trees are well formed");
        if t.count_nodes(t.root()) <= max_nodes {
            return t;
        }
    }
}

// ---- file format ----

#[derive(Serialize, Deserialize)]
struct Record {
    src: String,
    tgt: String,
    category: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {error}")]
    Tree { line: usize, error: SexprError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn to_line(e: &Example) -> String {
    let r = Record {
        src: e.src.to_sexpr(),
        tgt: e.tgt.to_sexpr(),
        category: e.category.name().to_string(),
    };
    serde_json::to_string(&r).expect("record serializes")
}

pub fn write_examples<W: Write>(mut w: W, examples: &[Example]) -> std::io::Result<()> {
    for e in examples {
        writeln!(w, "{}", to_line(e))?;
    }
    Ok(())
}

pub fn save(path: &Path, examples: &[Example]) -> Result<(), CorpusError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_examples(&mut w, examples)?;
    w.flush()?;
    Ok(())
}

/// Reads examples; errors carry the 1-based line number. Blank lines are
/// ignored.
pub fn read_examples<R: BufRead>(g: &Arc<Grammar>, r: R) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let category = rec.category.parse().map_err(|message| CorpusError::Malformed { line: line_no, message })?;
        let src = parse_tree(g, &rec.src).map_err(|error| CorpusError::Tree { line: line_no, error })?;
        let tgt = parse_tree(g, &rec.tgt).map_err(|error| CorpusError::Tree { line: line_no, error })?;
        out.push(Example { src, tgt, category });
    }
    Ok(out)
}

pub fn load(g: &Arc<Grammar>, path: &Path) -> Result<Vec<Example>, CorpusError> {
    let f = std::fs::File::open(path)?;
    read_examples(g, std::io::BufReader::new(f))
}
