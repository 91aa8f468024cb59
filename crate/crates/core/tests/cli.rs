//! End-to-end runs of the `treedit` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn treedit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treedit")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const SRC: &str = r#"(Assign (Name "x") (Call "elementAt" [(Name "list") (BinOp (Name "i") (Add) (Num "1"))]))"#;
const TGT: &str = r#"(Assign (Name "x") (Index (Name "list") (BinOp (Name "i") (Add) (Num "1"))))"#;

#[test]
fn diff_of_identical_trees_is_a_bare_stop() {
    let d = TempDir::new().unwrap();
    write(d.path(), "a", SRC);
    let o = treedit(&["diff", "minilang", "a", "a"], d.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o), "distance=0\nSTOP\n");
}

#[test]
fn apply_of_a_diff_reaches_the_target() {
    let d = TempDir::new().unwrap();
    write(d.path(), "a", SRC);
    write(d.path(), "b", TGT);
    let o = treedit(&["diff", "minilang", "a", "b"], d.path());
    let text = stdout(&o);
    assert!(text.starts_with("distance=4\n"), "{text}");
    write(d.path(), "s", text.split_once('\n').unwrap().1);
    let o = treedit(&["apply", "minilang", "a", "s"], d.path());
    assert!(o.status.success());
    write(d.path(), "out", stdout(&o).trim());
    let o = treedit(&["diff", "minilang", "out", "b"], d.path());
    assert_eq!(stdout(&o), "distance=0\nSTOP\n");
    let o = treedit(&["replay", "minilang", "a", "s"], d.path());
    let trace = stdout(&o);
    assert_eq!(trace.matches("valid=ok").count(), 5);
    assert!(trace.ends_with(&format!("result={TGT}\n")));
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let d = TempDir::new().unwrap();
    assert_eq!(treedit(&["frobnicate"], d.path()).status.code(), Some(1));
    assert_eq!(treedit(&["diff", "minilang", "a"], d.path()).status.code(), Some(1));
    assert_eq!(treedit(&["diff", "minilang", "missing", "missing"], d.path()).status.code(), Some(2));
    write(d.path(), "bad", "(Assign (Name \"x\")");
    let o = treedit(&["diff", "minilang", "bad", "bad"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad"), "errors name the file");
    write(d.path(), "g", "root s;\ns = Wrap(nope x)\n");
    let o = treedit(&["grammar", "check", "g"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(treedit(&["--help"], d.path()).status.code(), Some(0));
}

#[test]
fn grammar_check_prints_the_normalized_grammar() {
    let d = TempDir::new().unwrap();
    write(d.path(), "g", "root s;\n# comment\nterminal int;\ns = Wrap(e body)\ne = Num(int value)\n");
    let o = treedit(&["grammar", "check", "g"], d.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("ok types=2 productions=2 terminals=1\n"), "{out}");
    write(d.path(), "g2", out.split_once('\n').unwrap().1);
    assert_eq!(stdout(&treedit(&["grammar", "check", "g2"], d.path())), out, "normal form is a fixed point");
}

#[test]
fn trained_checkpoint_evaluates_without_the_training_data() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    assert!(treedit(&["gen", "--out", "data", "--sizes", "24,8,8,12", "--seed", "5"], p).status.success());
    write(
        p,
        "cfg.toml",
        "epochs = 1\nbatch_size = 4\n[model]\nnode_dim = 8\nseq_enc_dim = 4\nhistory_dim = 8\nop_emb_dim = 4\nfield_emb_dim = 4\nrule_emb_dim = 8\nvalue_hidden_dim = 8\nedit_repr_dim = 8\naction_repr_dim = 8\nedit_enc_lstm_dim = 4\nggnn_steps = 2\n",
    );
    let o = treedit(&["train", "--data", "data", "--config", "cfg.toml", "--out-ckpt", "m.ckpt"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("phase=supervised epoch=1 "));
    std::fs::rename(p.join("data/test.jsonl"), p.join("test.jsonl")).unwrap();
    std::fs::remove_dir_all(p.join("data")).unwrap();
    let o = treedit(&["eval", "gold", "--ckpt", "m.ckpt", "--data", "test.jsonl", "--table"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("accuracy=") && out.contains("total=8") && out.contains("category\tcorrect"));
    let o = treedit(&["neighbors", "--ckpt", "m.ckpt", "--data", "test.jsonl", "--query-index", "0", "-k", "20"], p);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("rank=").count(), 7, "k beyond the pool gives the full ranking");
    let o = treedit(&["neighbors", "--ckpt", "m.ckpt", "--data", "test.jsonl", "--query-index", "99"], p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_config_rejects_unknown_keys_and_bad_beta() {
    let d = TempDir::new().unwrap();
    let p = d.path();
    assert!(treedit(&["gen", "--out", "data", "--sizes", "4,2,2"], p).status.success());
    write(p, "cfg.toml", "epochz = 1\n");
    assert_eq!(treedit(&["train", "--data", "data", "--config", "cfg.toml", "--out-ckpt", "m"], p).status.code(), Some(2));
    assert_eq!(treedit(&["train", "--data", "data", "--out-ckpt", "m", "--beta", "2"], p).status.code(), Some(1));
    assert_eq!(treedit(&["train", "--data", "data", "--out-ckpt", "m", "--imitate", "sideways"], p).status.code(), Some(1));
}
