//! The `treedit` command line. [`run`] returns the process exit code: 0 on
//! success, 1 on a usage error, 2 on a data or validation error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::corpus::{self, Category, Example, Sizes};
use crate::edits::{action_line, parse_script, replay, script_to_text};
use crate::eval::{eval_gold, eval_oneshot, nearest_neighbors, ONESHOT_SEEDS};
use crate::grammar::{parse_grammar, Grammar, MINILANG};
use crate::model::{load_editor, save_editor, Editor};
use crate::nn::Scalar;
use crate::oracle::gold_script;
use crate::sexpr::parse_tree;
use crate::training::{imitation_iteration, new_editor, prepare, train_supervised, Strategy, TrainConfig};
use crate::tree::{SubtreeMemory, Tree};

#[derive(Parser, Debug)]
#[command(name = "treedit", version, about = "Grammar-constrained tree edits and a neural tree editor")]
struct Cli {
    /// Seed for every random choice. Overrides `seed` in a training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Grammar utilities.
    Grammar {
        #[command(subcommand)]
        cmd: GrammarCmd,
    },
    /// Shortest edit script between two trees.
    Diff {
        /// Grammar file, or `minilang` for the built-in grammar.
        grammar: String,
        src: PathBuf,
        tgt: PathBuf,
    },
    /// Applies a script to a tree and prints the result.
    Apply { grammar: String, src: PathBuf, script: PathBuf },
    /// Like `apply`, printing every intermediate tree with its validation.
    Replay { grammar: String, src: PathBuf, script: PathBuf },
    /// Generates the synthetic corpus as `train/dev/test/oneshot.jsonl`.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// `train,dev,test[,oneshot]`
        #[arg(long, default_value = "2000,250,250,400")]
        sizes: Sizes,
        /// Comma-separated categories; all shipped rules by default.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<Category>,
    },
    /// Trains an editor on `<data>/train.jsonl`, selecting on `<data>/dev.jsonl`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML training config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out-ckpt")]
        out_ckpt: PathBuf,
        /// Run imitation rounds after supervised training.
        #[arg(long)]
        imitate: Option<Strategy>,
        /// Mixture coefficient for DAgger rounds.
        #[arg(long)]
        beta: Option<f64>,
        /// Overrides the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Grammar file, or `minilang`.
        #[arg(long, default_value = "minilang")]
        grammar: String,
    },
    /// Evaluates a checkpoint.
    Eval {
        protocol: Protocol,
        #[arg(long)]
        ckpt: PathBuf,
        /// A dataset file, or a directory holding `test.jsonl` (gold) or
        /// `oneshot.jsonl` (oneshot).
        #[arg(long)]
        data: PathBuf,
        /// Also print the per-category table.
        #[arg(long)]
        table: bool,
        /// Seeds per category for the one-shot protocol.
        #[arg(long, default_value_t = ONESHOT_SEEDS)]
        seeds: usize,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
    },
    /// Nearest neighbours of one example by edit-vector cosine similarity.
    Neighbors {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "query-index")]
        query_index: usize,
        #[arg(short = 'k', default_value_t = 5)]
        k: usize,
    },
    /// Gradient checks and the oracle cross-check.
    Selfcheck {
        /// Random pairs compared against exhaustive search.
        #[arg(long, default_value_t = 200)]
        pairs: usize,
    },
}

#[derive(Subcommand, Debug)]
enum GrammarCmd {
    /// Parses a grammar file and prints its normalized form.
    Check { file: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Protocol {
    Gold,
    Oneshot,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Precision {
    F32,
    F64,
}

/// A failure already rendered for the user, with its exit code.
struct Fail(i32, String);

fn data_err(msg: impl std::fmt::Display) -> Fail {
    Fail(2, msg.to_string())
}

type Out = Result<String, Fail>;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn dispatch(cli: Cli) -> Out {
    let seed = cli.seed;
    let threads = cli.threads.max(1);
    match cli.cmd {
        Cmd::Grammar { cmd: GrammarCmd::Check { file } } => {
            let g = load_grammar_file(&file)?;
            Ok(format!(
                "ok types={} productions={} terminals={}\n{}",
                g.type_count(),
                g.productions().len(),
                g.terminal_kinds().len(),
                g.to_text()
            ))
        }
        Cmd::Diff { grammar, src, tgt } => {
            let g = grammar_arg(&grammar)?;
            let (a, b) = (read_tree(&g, &src)?, read_tree(&g, &tgt)?);
            let script = gold_script(&a, &b, None).map_err(data_err)?;
            let text = script_to_text(&a, &script).map_err(data_err)?;
            Ok(format!("distance={}\n{text}", script.len() - 1))
        }
        Cmd::Apply { grammar, src, script } => {
            let g = grammar_arg(&grammar)?;
            let t0 = read_tree(&g, &src)?;
            let s = parse_script(&t0, &read(&script)?).map_err(|e| data_err(format!("{}: {e}", script.display())))?;
            let out = replay(&t0, &s).map_err(data_err)?;
            Ok(format!("{}\n", out.to_sexpr()))
        }
        Cmd::Replay { grammar, src, script } => {
            let g = grammar_arg(&grammar)?;
            let t0 = read_tree(&g, &src)?;
            let s = parse_script(&t0, &read(&script)?).map_err(|e| data_err(format!("{}: {e}", script.display())))?;
            replay_trace(&t0, &s)
        }
        Cmd::Gen { out, sizes, rules } => {
            let g = Arc::new(Grammar::minilang());
            let rules = if rules.is_empty() { Category::SHIPPED.to_vec() } else { rules };
            let splits = corpus::generate(&g, seed.unwrap_or(0), sizes, &rules);
            fs::create_dir_all(&out).map_err(|e| data_err(format!("{}: {e}", out.display())))?;
            let mut s = String::new();
            for (name, xs) in splits.named() {
                let path = out.join(format!("{name}.jsonl"));
                corpus::save(&path, xs).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
                let _ = writeln!(s, "split={name} examples={} path={}", xs.len(), path.display());
            }
            Ok(s)
        }
        Cmd::Train { data, config, out_ckpt, imitate, beta, epochs, grammar } => {
            let mut cfg = match config {
                Some(p) => toml::from_str::<TrainConfig>(&read(&p)?).map_err(|e| data_err(format!("{}: {e}", p.display())))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.threads = threads;
            cfg.validate().map_err(|e| Fail(1, e))?;
            let g = grammar_arg(&grammar)?;
            let train = load_data(&g, &data.join("train.jsonl"))?;
            let dev = load_data(&g, &data.join("dev.jsonl"))?;
            if cfg.single_precision {
                train_cmd::<f32>(&g, &train, &dev, &cfg, imitate, &out_ckpt)
            } else {
                train_cmd::<f64>(&g, &train, &dev, &cfg, imitate, &out_ckpt)
            }
        }
        Cmd::Eval { protocol, ckpt, data, table, seeds, precision } => match precision {
            Precision::F32 => eval_cmd::<f32>(protocol, &ckpt, &data, table, seeds, threads),
            Precision::F64 => eval_cmd::<f64>(protocol, &ckpt, &data, table, seeds, threads),
        },
        Cmd::Neighbors { ckpt, data, query_index, k } => {
            let e: Editor<f64> = load_editor(&ckpt).map_err(|err| data_err(format!("{}: {err}", ckpt.display())))?;
            let pool = load_data(&e.grammar, &data)?;
            if query_index >= pool.len() {
                return Err(data_err(format!("query index {query_index} is outside the {} examples", pool.len())));
            }
            let ranked = nearest_neighbors(&e, &pool, query_index, k, threads).map_err(data_err)?;
            let mut s = format!("query={query_index} category={}\n", pool[query_index].category);
            for (rank, (i, sim)) in ranked.iter().enumerate() {
                let _ = writeln!(s, "rank={} index={i} similarity={sim:.6} category={}", rank + 1, pool[*i].category);
            }
            Ok(s)
        }
        Cmd::Selfcheck { pairs } => {
            let r = crate::selfcheck::selfcheck(seed.unwrap_or(0), pairs);
            let mut s = r.lines();
            let _ = writeln!(s, "secs={:.1}", r.secs);
            if r.passes() {
                Ok(s)
            } else {
                Err(Fail(2, s))
            }
        }
    }
}

fn read(p: &Path) -> Result<String, Fail> {
    fs::read_to_string(p).map_err(|e| data_err(format!("{}: {e}", p.display())))
}

fn load_grammar_file(p: &Path) -> Result<Grammar, Fail> {
    parse_grammar(&read(p)?).map_err(|e| data_err(format!("{}: {e}", p.display())))
}

fn grammar_arg(arg: &str) -> Result<Arc<Grammar>, Fail> {
    if arg == "minilang" {
        return Ok(Arc::new(parse_grammar(MINILANG).expect("built-in grammar parses")));
    }
    load_grammar_file(Path::new(arg)).map(Arc::new)
}

fn read_tree(g: &Arc<Grammar>, p: &Path) -> Result<Tree, Fail> {
    parse_tree(g, read(p)?.trim()).map_err(|e| data_err(format!("{}: {e}", p.display())))
}

fn load_data(g: &Arc<Grammar>, p: &Path) -> Result<Vec<Example>, Fail> {
    corpus::load(g, p).map_err(|e| data_err(format!("{}: {e}", p.display())))
}

fn replay_trace(t0: &Tree, script: &[crate::edits::EditAction]) -> Out {
    let memory = SubtreeMemory::new(t0);
    let mut t = t0.clone();
    let mut s = format!("step=0 tree={}\n", t.to_sexpr());
    for (i, a) in script.iter().enumerate() {
        let line = action_line(&t, a);
        crate::edits::apply_mut(&mut t, &memory, a).map_err(|e| data_err(format!("action {}: {e}", i + 1)))?;
        let valid = match t.validate() {
            Ok(()) => "ok".to_string(),
            Err(e) => return Err(data_err(format!("action {} left an invalid tree: {e}", i + 1))),
        };
        let _ = writeln!(s, "step={} action={line} valid={valid} tree={}", i + 1, t.to_sexpr());
    }
    let _ = writeln!(s, "result={}", t.to_sexpr());
    Ok(s)
}

fn train_cmd<S: Scalar>(
    g: &Arc<Grammar>,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    imitate: Option<Strategy>,
    out: &Path,
) -> Out {
    let mut log = |l: &str| println!("{l}");
    let mut e: Editor<S> = new_editor(g, train, cfg);
    let (tr, st) = prepare(&e, train, cfg.threads).map_err(data_err)?;
    let (dv, _) = prepare(&e, dev, cfg.threads).map_err(data_err)?;
    println!("kept={} unlearnable={} unrepresentable={}", st.kept, st.unlearnable, st.unrepresentable);
    let sum = train_supervised(&mut e, &tr, &dv, cfg, &mut log).map_err(data_err)?;
    println!("best_epoch={} best_dev_loss={:.6}", sum.best_epoch, sum.best_dev_loss);
    if let Some(strategy) = imitate {
        for round in 1..=cfg.imitation_iterations {
            imitation_iteration(&mut e, &tr, &dv, dev, strategy, cfg, round, &mut log).map_err(data_err)?;
        }
    }
    save_editor(out, &e).map_err(|err| data_err(format!("{}: {err}", out.display())))?;
    let r = eval_gold(&e, dev, cfg.threads).map_err(data_err)?;
    Ok(format!("dev_accuracy={:.6}\ncheckpoint={}\n", r.accuracy(), out.display()))
}

fn eval_cmd<S: Scalar>(protocol: Protocol, ckpt: &Path, data: &Path, table: bool, seeds: usize, threads: usize) -> Out {
    let e: Editor<S> = load_editor(ckpt).map_err(|err| data_err(format!("{}: {err}", ckpt.display())))?;
    let path = if data.is_dir() {
        data.join(if protocol == Protocol::Gold { "test.jsonl" } else { "oneshot.jsonl" })
    } else {
        data.to_path_buf()
    };
    let ds = load_data(&e.grammar, &path)?;
    match protocol {
        Protocol::Gold => {
            let r = eval_gold(&e, &ds, threads).map_err(data_err)?;
            Ok(if table { format!("{}{}", r.lines(), r.table()) } else { r.lines() })
        }
        Protocol::Oneshot => {
            let r = eval_oneshot(&e, &ds, seeds, threads).map_err(data_err)?;
            for c in &r.skipped {
                eprintln!("warning: category {c} has a single example and is skipped");
            }
            Ok(if table { format!("{}{}", r.lines(), r.table()) } else { r.lines() })
        }
    }
}
