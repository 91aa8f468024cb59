//! Prints every failing test example of a checkpoint with gold and
//! predicted scripts. Args: ckpt [category]

use std::sync::Arc;

use treedit::corpus::{generate, Category, Sizes};
use treedit::edits::script_to_text;
use treedit::model::{load_editor, Editor};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let e: Editor<f32> = load_editor(std::path::Path::new(&args[1])).unwrap();
    let only: Option<Category> = args.get(2).map(|c| c.parse().unwrap());
    let g = Arc::new(treedit::Grammar::minilang());
    let s = generate(&g, 1, Sizes::default(), &Category::SHIPPED);
    let fs = treedit::eval::encode_many(&e, &s.test, 16, 1).unwrap();
    for (ex, f) in s.test.iter().zip(&fs) {
        if only.is_some_and(|c| c != ex.category) {
            continue;
        }
        let out = e.rollout(f, &ex.src);
        if treedit::structural_eq(&out.tree, &ex.tgt) {
            continue;
        }
        let gold = treedit::oracle::gold_script(&ex.src, &ex.tgt, Some(e.vocab.tokens())).unwrap();
        println!("== {}\n src {}\n tgt {}\n got {}", ex.category, ex.src.to_sexpr(), ex.tgt.to_sexpr(), out.tree.to_sexpr());
        println!("gold:\n{}pred:\n{}", script_to_text(&ex.src, &gold).unwrap(), script_to_text(&ex.src, &out.script).unwrap());
    }
}
