use std::sync::Arc;
use treedit::corpus::{generate, Category, Sizes};
use treedit::oracle::gold_script;

fn main() {
    let g = Arc::new(treedit::Grammar::minilang());
    let s = generate(&g, 1, Sizes::default(), &Category::SHIPPED);
    let (mut nodes, mut len, mut maxlen, mut maxn) = (0usize, 0usize, 0usize, 0usize);
    for e in &s.train {
        let n = e.src.len();
        nodes += n;
        maxn = maxn.max(n);
        let l = gold_script(&e.src, &e.tgt, None).unwrap().len();
        len += l;
        maxlen = maxlen.max(l);
    }
    let k = s.train.len() as f64;
    println!("mean nodes {:.1} max {} mean len {:.2} max {}", nodes as f64 / k, maxn, len as f64 / k, maxlen);
    for e in s.train.iter().take(5) {
        println!("{}", treedit::corpus::to_line(e));
    }
}
