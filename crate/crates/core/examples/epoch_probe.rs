//! Per-epoch dev loss, dev accuracy and test accuracy for one schedule.
//! Args: epochs lr batch lr_decay dropout seed

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treedit::corpus::{generate, Category, Sizes};
use treedit::eval::eval_gold;
use treedit::model::{Editor, Sample};
use treedit::nn::Adam;
use treedit::training::*;

fn main() {
    let a: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let cfg = TrainConfig {
        epochs: a[0] as usize,
        lr: a[1],
        batch_size: a[2] as usize,
        lr_decay: a[3],
        dropout: a[4],
        seed: a[5] as u64,
        ..TrainConfig::default()
    };
    let g = Arc::new(treedit::Grammar::minilang());
    let s = generate(&g, 1, Sizes::default(), &Category::SHIPPED);
    let mut e: Editor<f32> = new_editor(&g, &s.train, &cfg);
    let (tr, _) = prepare(&e, &s.train, 1).unwrap();
    let (dv, _) = prepare(&e, &s.dev, 1).unwrap();
    let samples: Vec<Sample> = tr.iter().map(Prepared::sample).collect();
    let mut adam = Adam::new(&e.store, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 1..=cfg.epochs {
        adam.config.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        let st = supervised_epoch(&mut e, &samples, &mut adam, &mut rng, &cfg).unwrap();
        let dl = dev_loss(&e, &dv, &cfg);
        let da = eval_gold(&e, &s.dev, 1).unwrap();
        let ta = eval_gold(&e, &s.test, 1).unwrap();
        let cats: Vec<String> = ta.per_category.iter().map(|(c, (k, n))| format!("{}={:.2}", c.name(), *k as f64 / *n as f64)).collect();
        println!(
            "epoch={epoch} train={:.4} dev_loss={dl:.4} dev_acc={:.3} test_acc={:.3} {}",
            st.loss,
            da.accuracy(),
            ta.accuracy(),
            cats.join(" ")
        );
    }
}
