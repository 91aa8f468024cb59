//! Supervised training on gold scripts, and one round of imitation learning
//! with either DAgger-style mixture rollouts or post-refinement.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;
use crate::edits::{apply, apply_mut, script_to_text, action_line, EditAction, EditScript};
use crate::eval::{eval_gold, EvalError, GoldReport};
use crate::model::{Dropout, Editor, EditorConfig, Episode, MemoryInfo, PrepError, Rollout, Sample};
use crate::nn::{Adam, AdamConfig, AdamError, Scalar, Tensor};
use crate::oracle::{dynamic_oracle, gold_script, OracleError};
use crate::tree::{structural_eq, SubtreeMemory, Tree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Dropout rate on the edit vector and decoder states while training.
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    pub seed: u64,
    /// Probability of executing the expert's action at a DAgger step.
    pub beta: f64,
    pub imitation_iterations: usize,
    /// Retraining epochs after each round of demonstration collection.
    pub imitation_epochs: usize,
    /// Gold examples mixed in per collected trajectory.
    pub aggregate_ratio: f64,
    /// Examples per forward pass inside a batch. Fixed so results do not
    /// depend on `threads`.
    pub chunk: usize,
    pub threads: usize,
    /// Train in single precision; checkpoints are stored in double either way.
    pub single_precision: bool,
    pub model: EditorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.9,
            dropout: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
            seed: 0,
            beta: 0.5,
            imitation_iterations: 1,
            imitation_epochs: 5,
            aggregate_ratio: 1.0,
            chunk: 8,
            threads: 1,
            single_precision: true,
            model: EditorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.batch_size == 0 || self.chunk == 0 {
            return Err("batch_size and chunk must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.aggregate_ratio < 0.0 || !(0.0..1.0).contains(&self.dropout) {
            return Err("lr must be positive, lr_decay in (0, 1], aggregate_ratio non-negative and dropout in [0, 1)".into());
        }
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, clip: self.clip }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Optimizer(#[from] AdamError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("example {index}: expert failed: {error}")]
    Expert { index: usize, error: OracleError },
    #[error("example {index}: demonstration {step} is illegal in its state")]
    IllegalDemonstration { index: usize, step: usize },
    #[error("example {index}: {error}")]
    Prep { index: usize, error: PrepError },
}

/// A training example with its gold script lowered for the editor.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub index: usize,
    pub src: Tree,
    pub tgt: Tree,
    pub memory: SubtreeMemory,
    pub info: MemoryInfo,
    pub gold: EditScript,
    pub episode: Episode,
}

impl Prepared {
    pub fn sample(&self) -> Sample<'_> {
        Sample { enc: &self.episode, memory: &self.info, dec: None, supervise_from: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrepStats {
    pub kept: usize,
    /// A target token is neither in the vocabulary nor in the source.
    pub unlearnable: usize,
    /// The gold script leaves the editor's candidate space.
    pub unrepresentable: usize,
}

fn prepare_one<S: Scalar>(editor: &Editor<S>, index: usize, e: &Example) -> Result<Option<Prepared>, TrainError> {
    let gold = match gold_script(&e.src, &e.tgt, Some(editor.vocab.tokens())) {
        Ok(s) => s,
        Err(OracleError::UnlearnableExample { .. }) => return Ok(None),
        Err(error) => return Err(TrainError::Expert { index, error }),
    };
    let memory = SubtreeMemory::new(&e.src);
    let info = MemoryInfo::new(&memory);
    let episode = match Episode::from_script(&e.src, &gold, &editor.vocab, &memory, &info, true) {
        Ok(ep) => ep,
        Err(PrepError::Unrepresentable { .. }) => return Ok(None),
        Err(error) => return Err(TrainError::Prep { index, error }),
    };
    Ok(Some(Prepared { index, src: e.src.clone(), tgt: e.tgt.clone(), memory, info, gold, episode }))
}

/// Computes gold scripts under the editor's vocabulary. Examples the editor
/// cannot express are dropped and counted.
pub fn prepare<S: Scalar>(editor: &Editor<S>, data: &[Example], threads: usize) -> Result<(Vec<Prepared>, PrepStats), TrainError> {
    let indexed: Vec<(usize, &Example)> = data.iter().enumerate().collect();
    let results = crate::par_map(&indexed, threads, |(i, e)| (*i, prepare_one(editor, *i, e)));
    let mut out = Vec::new();
    let mut stats = PrepStats::default();
    for (i, r) in results {
        match r? {
            Some(p) => out.push(p),
            None => {
                let e = &data[i];
                if gold_script(&e.src, &e.tgt, Some(editor.vocab.tokens())).is_err() {
                    stats.unlearnable += 1;
                } else {
                    stats.unrepresentable += 1;
                }
            }
        }
    }
    stats.kept = out.len();
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    /// Mean summed cross-entropy per example.
    pub loss: f64,
    pub op: f64,
    pub node: f64,
    pub value: f64,
    pub steps: usize,
    pub examples: usize,
    pub batches: usize,
    /// Mean pre-clip gradient norm over batches.
    pub grad_norm: f64,
}

/// One pass over `samples` in a shuffled order with an Adam step per batch.
pub fn supervised_epoch<S: Scalar>(
    editor: &mut Editor<S>,
    samples: &[Sample],
    adam: &mut Adam<S>,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
) -> Result<EpochStats, TrainError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut st = EpochStats::default();
    for batch in order.chunks(cfg.batch_size) {
        let b: Vec<Sample> = batch.iter().map(|&i| samples[i]).collect();
        let dropout = (cfg.dropout > 0.0).then(|| Dropout { rate: cfg.dropout, seed: rng.random() });
        let (grads, parts) = editor.batch_grads(&b, cfg.chunk, cfg.threads, dropout);
        st.grad_norm += adam.step(&mut editor.store, &grads)?;
        st.op += parts.op;
        st.node += parts.node;
        st.value += parts.value;
        st.steps += parts.steps;
        st.examples += parts.examples;
        st.batches += 1;
    }
    let n = st.examples.max(1) as f64;
    st.loss = (st.op + st.node + st.value) / n;
    st.op /= n;
    st.node /= n;
    st.value /= n;
    st.grad_norm /= st.batches.max(1) as f64;
    Ok(st)
}

/// Mean per-example dev cross-entropy, the model-selection criterion.
pub fn dev_loss<S: Scalar>(editor: &Editor<S>, dev: &[Prepared], cfg: &TrainConfig) -> f64 {
    let samples: Vec<Sample> = dev.iter().map(Prepared::sample).collect();
    editor.eval_loss(&samples, cfg.chunk, cfg.threads).per_example()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    pub dev_losses: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the starting point.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// Trains for `epochs` epochs over `samples` and restores the parameters
/// with the lowest dev loss, the starting point included.
fn fit<S: Scalar>(
    editor: &mut Editor<S>,
    samples: &[Sample],
    dev: &[Prepared],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    tag: &str,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary, TrainError> {
    let mut adam = Adam::new(&editor.store, cfg.adam());
    let start = dev_loss(editor, dev, cfg);
    let mut best = (start, 0, editor.store.clone());
    let mut summary = TrainSummary { dev_losses: vec![start], ..TrainSummary::default() };
    log(&format!("phase={tag} epoch=0 dev_loss={start:.6}"));
    for epoch in 1..=epochs {
        let clock = Instant::now();
        adam.config.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        let st = supervised_epoch(editor, samples, &mut adam, rng, cfg)?;
        let dl = dev_loss(editor, dev, cfg);
        log(&format!(
            "phase={tag} epoch={epoch} train_loss={:.6} op={:.6} node={:.6} value={:.6} grad_norm={:.4} dev_loss={dl:.6} secs={:.1}",
            st.loss,
            st.op,
            st.node,
            st.value,
            st.grad_norm,
            clock.elapsed().as_secs_f64()
        ));
        summary.epochs.push(st);
        summary.dev_losses.push(dl);
        if dl < best.0 {
            best = (dl, epoch, editor.store.clone());
        }
    }
    summary.best_epoch = best.1;
    summary.best_dev_loss = best.0;
    editor.store = best.2;
    Ok(summary)
}

/// Supervised teacher-forced training on gold scripts.
pub fn train_supervised<S: Scalar>(
    editor: &mut Editor<S>,
    train: &[Prepared],
    dev: &[Prepared],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<TrainSummary, TrainError> {
    let samples: Vec<Sample> = train.iter().map(Prepared::sample).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    fit(editor, &samples, dev, cfg.epochs, cfg, &mut rng, "supervised", log)
}

const SHUFFLE_STREAM: u64 = 0x51f7_1e5d_0000_0001;
const MIXTURE_STREAM: u64 = 0x3a9c_77e1_0000_0002;
const AGGREGATE_STREAM: u64 = 0x0bd1_4c2f_0000_0003;

/// One state-action pair: the state is the source tree after `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub prefix: EditScript,
    pub action: EditAction,
}

/// Demonstrations collected along one rollout. The visited states are the
/// prefixes of `executed`; `labels[i]` is the expert action at the state
/// after `executed[..first + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub example: usize,
    pub executed: EditScript,
    pub first: usize,
    pub labels: Vec<EditAction>,
}

impl Trajectory {
    pub fn demonstrations(&self) -> Vec<Demonstration> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, a)| Demonstration { prefix: self.executed[..self.first + i].to_vec(), action: a.clone() })
            .collect()
    }

    /// Pre-action trees of the visited states, one per executed action plus
    /// the final tree.
    fn states(&self, p: &Prepared) -> Vec<Tree> {
        let mut out = Vec::with_capacity(self.executed.len() + 1);
        let mut cur = p.src.clone();
        out.push(cur.clone());
        for a in &self.executed {
            apply_mut(&mut cur, &p.memory, a).expect("executed actions replay");
            out.push(cur.clone());
        }
        out
    }

    /// The decoder episode for retraining: executed actions stand in as
    /// targets before `first` (they carry no loss), expert labels after.
    fn episode<S: Scalar>(&self, editor: &Editor<S>, p: &Prepared) -> Result<Episode, TrainError> {
        let states = self.states(p);
        let n = self.first + self.labels.len();
        let actions: Vec<&EditAction> = self.executed[..self.first].iter().chain(&self.labels).collect();
        Episode::from_pairs(states[..n].iter().zip(actions), &editor.vocab, &p.info, true)
            .map_err(|error| TrainError::Prep { index: p.index, error })
    }

    /// One line per demonstration: source, prefix script and expert action.
    pub fn records(&self, p: &Prepared) -> String {
        let states = self.states(p);
        let mut s = String::new();
        for (i, d) in self.demonstrations().iter().enumerate() {
            let prefix = script_to_text(&p.src, &d.prefix).unwrap_or_default();
            let rec = serde_json::json!({
                "example": self.example,
                "src": p.src.to_sexpr(),
                "prefix": prefix,
                "action": action_line(&states[self.first + i], &d.action),
            });
            let _ = writeln!(s, "{rec}");
        }
        s
    }
}

fn expert<S: Scalar>(editor: &Editor<S>, p: &Prepared, cur: &Tree) -> Result<EditAction, TrainError> {
    let a = dynamic_oracle(cur, &p.tgt, &p.memory, Some(editor.vocab.tokens()))
        .map_err(|error| TrainError::Expert { index: p.index, error })?;
    Ok(a)
}

fn check_legal(p: &Prepared, cur: &Tree, a: &EditAction, step: usize) -> Result<(), TrainError> {
    apply(cur, &p.memory, a).map(|_| ()).map_err(|_| TrainError::IllegalDemonstration { index: p.index, step })
}

/// Rolls out a per-step mixture: with probability `beta` the expert's
/// action is executed, else the learner's greedy one. The expert's action
/// is recorded at every visited state.
pub fn dagger_sampling<S: Scalar>(
    editor: &Editor<S>,
    p: &Prepared,
    f: &Tensor<S>,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory, TrainError> {
    let mut r = Rollout::new(editor, &p.src, f.clone());
    let mut labels = Vec::new();
    while !r.done() {
        let (learner, _) = r.predict();
        let gold = expert(editor, p, r.tree())?;
        check_legal(p, r.tree(), &gold, labels.len())?;
        let exec = if rng.random_bool(beta) { gold.clone() } else { learner };
        labels.push(gold);
        r.execute(&exec).expect("both policies emit legal actions");
    }
    Ok(Trajectory { example: p.index, executed: r.script().to_vec(), first: 0, labels })
}

/// The learner runs until it predicts Stop. If its tree is then correct
/// nothing is collected; otherwise the expert finishes the edit from there
/// and only its actions are labelled.
pub fn postrefine_sampling<S: Scalar>(editor: &Editor<S>, p: &Prepared, f: &Tensor<S>) -> Result<Option<Trajectory>, TrainError> {
    let mut r = Rollout::new(editor, &p.src, f.clone());
    while !r.done() {
        let (a, _) = r.predict();
        if matches!(a, EditAction::Stop) {
            break;
        }
        r.execute(&a).expect("masked choices are legal");
    }
    let learner = r.script().to_vec();
    let mut cur = r.tree().clone();
    if structural_eq(&cur, &p.tgt) {
        return Ok(None);
    }
    let mut labels = Vec::new();
    loop {
        let a = expert(editor, p, &cur)?;
        check_legal(p, &cur, &a, learner.len() + labels.len())?;
        apply_mut(&mut cur, &p.memory, &a).expect("checked above");
        let stop = matches!(a, EditAction::Stop);
        labels.push(a);
        if stop {
            break;
        }
    }
    let mut executed = learner;
    let first = executed.len();
    executed.extend(labels.iter().cloned());
    Ok(Some(Trajectory { example: p.index, executed, first, labels }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Dagger,
    PostRefine,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dagger" => Ok(Strategy::Dagger),
            "postrefine" => Ok(Strategy::PostRefine),
            _ => Err(format!("unknown strategy `{s}`; expected dagger or postrefine")),
        }
    }
}

/// Collects trajectories over `train` in parallel. Each example draws its
/// mixture coins from its own stream, so results do not depend on threads.
pub fn collect<S: Scalar>(
    editor: &Editor<S>,
    train: &[Prepared],
    strategy: Strategy,
    cfg: &TrainConfig,
    round: usize,
) -> Result<Vec<Trajectory>, TrainError> {
    let groups: Vec<&[Prepared]> = train.chunks(16).collect();
    let fs: Vec<Tensor<S>> = crate::par_map(&groups, cfg.threads, |g| {
        let eps: Vec<(&Episode, &MemoryInfo)> = g.iter().map(|p| (&p.episode, &p.info)).collect();
        editor.encode_edits_many(&eps)
    })
    .into_iter()
    .flatten()
    .collect();
    let jobs: Vec<(&Prepared, &Tensor<S>)> = train.iter().zip(&fs).collect();
    let out = crate::par_map(&jobs, cfg.threads, |(p, f)| match strategy {
        Strategy::Dagger => {
            let stream = cfg.seed ^ MIXTURE_STREAM ^ ((round as u64) << 40) ^ (p.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            dagger_sampling(editor, p, f, cfg.beta, &mut rng).map(Some)
        }
        Strategy::PostRefine => postrefine_sampling(editor, p, f),
    });
    Ok(out.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImitationReport {
    pub before: GoldReport,
    pub after: GoldReport,
    pub trajectories: usize,
    pub demonstrations: usize,
    pub gold_mixed_in: usize,
    pub retrain: TrainSummary,
}

impl ImitationReport {
    pub fn lines(&self, round: usize) -> String {
        format!(
            "phase=imitation round={round} trajectories={} demonstrations={} gold_mixed_in={} \
             accuracy_before={:.6} accuracy_after={:.6} mean_length_before={:.6} mean_length_after={:.6} \
             add_delete_loops_before={} add_delete_loops_after={}",
            self.trajectories,
            self.demonstrations,
            self.gold_mixed_in,
            self.before.accuracy(),
            self.after.accuracy(),
            self.before.mean_length,
            self.after.mean_length,
            self.before.add_delete_loops,
            self.after.add_delete_loops,
        )
    }
}

/// One round: collect demonstrations on `train`, mix in gold examples at
/// `aggregate_ratio` per trajectory, retrain with dev-loss selection, and
/// measure on `eval` before and after.
pub fn imitation_iteration<S: Scalar>(
    editor: &mut Editor<S>,
    train: &[Prepared],
    dev: &[Prepared],
    eval: &[Example],
    strategy: Strategy,
    cfg: &TrainConfig,
    round: usize,
    log: &mut dyn FnMut(&str),
) -> Result<ImitationReport, TrainError> {
    let before = eval_gold(editor, eval, cfg.threads)?;
    let trajs = collect(editor, train, strategy, cfg, round)?;
    let demonstrations = trajs.iter().map(|t| t.labels.len()).sum();
    let by_index: std::collections::HashMap<usize, &Prepared> = train.iter().map(|p| (p.index, p)).collect();
    let mut episodes = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let p = by_index[&t.example];
        episodes.push((p, t.episode(editor, p)?, t.first));
    }
    let n_gold = ((trajs.len() as f64 * cfg.aggregate_ratio).round() as usize).min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AGGREGATE_STREAM ^ round as u64);
    let gold_idx = rand::seq::index::sample(&mut rng, train.len(), n_gold).into_vec();
    let mut samples: Vec<Sample> =
        episodes.iter().map(|(p, ep, first)| Sample { enc: &p.episode, memory: &p.info, dec: Some(ep), supervise_from: *first }).collect();
    samples.extend(gold_idx.iter().map(|&i| train[i].sample()));
    let retrain = if samples.is_empty() {
        TrainSummary::default()
    } else {
        // Pick the schedule up where supervised training left it; a fresh full
        // learning rate knocks a converged model off its minimum.
        let rcfg = TrainConfig { lr: cfg.lr * cfg.lr_decay.powi(cfg.epochs as i32), ..cfg.clone() };
        fit(editor, &samples, dev, cfg.imitation_epochs, &rcfg, &mut rng, "imitation", log)?
    };
    let after = eval_gold(editor, eval, cfg.threads)?;
    let report = ImitationReport { before, after, trajectories: trajs.len(), demonstrations, gold_mixed_in: n_gold, retrain };
    log(&report.lines(round));
    Ok(report)
}

/// A fresh editor whose vocabulary is harvested from `train`.
pub fn new_editor<S: Scalar>(g: &std::sync::Arc<crate::Grammar>, train: &[Example], cfg: &TrainConfig) -> Editor<S> {
    let vocab = crate::model::Vocab::new(g, &crate::corpus::harvest_vocab(train));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Editor::new(cfg.model, g.clone(), vocab, &mut rng)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::{Category, Generator};
    use crate::edits::replay_with;
    use crate::grammar::{parse_grammar, Grammar};
    use crate::model::Vocab;
    use crate::sexpr::parse_tree;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { model: EditorConfig::tiny(), batch_size: 4, chunk: 4, single_precision: false, ..TrainConfig::default() }
    }

    fn setup(n: usize, seed: u64) -> (Editor<f64>, Vec<Prepared>) {
        let g = Arc::new(Grammar::minilang());
        let mut gen = Generator::new(g.clone(), seed);
        let exs: Vec<Example> = (0..n).map(|i| gen.example(Category::SHIPPED[i % 8])).collect();
        let e: Editor<f64> = new_editor(&g, &exs, &tiny_cfg());
        let (ps, st) = prepare(&e, &exs, 1).unwrap();
        assert_eq!(st.kept, n);
        (e, ps)
    }

    fn f_of(e: &Editor<f64>, p: &Prepared) -> Tensor<f64> {
        e.encode_edit(&p.episode, &p.info)
    }

    #[test]
    fn beta_one_follows_the_expert_to_the_target() {
        let (e, ps) = setup(16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in &ps {
            let t = dagger_sampling(&e, p, &f_of(&e, p), 1.0, &mut rng).unwrap();
            assert_eq!(t.executed, t.labels);
            assert_eq!(t.executed.len(), p.gold.len(), "the expert path is a shortest script");
            let out = replay_with(&p.src, &p.memory, &t.executed).unwrap();
            assert!(structural_eq(&out, &p.tgt));
        }
    }

    #[test]
    fn expert_trajectories_cost_the_same_as_gold_samples() {
        let (e, ps) = setup(16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in &ps {
            let t = dagger_sampling(&e, p, &f_of(&e, p), 1.0, &mut rng).unwrap();
            let ep = t.episode(&e, p).unwrap();
            let demo = Sample { enc: &p.episode, memory: &p.info, dec: Some(&ep), supervise_from: t.first };
            let (a, b) = (e.loss(&[demo]).total(), e.loss(&[p.sample()]).total());
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn beta_zero_is_the_learner_with_expert_labels() {
        let (e, ps) = setup(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in &ps {
            let f = f_of(&e, p);
            let t = dagger_sampling(&e, p, &f, 0.0, &mut rng).unwrap();
            assert_eq!(t.executed, e.rollout(&f, &p.src).script);
            assert_eq!(t.labels.len(), t.executed.len());
            assert!(!t.labels.is_empty(), "at least the initial state is labelled");
            for d in t.demonstrations() {
                let state = replay_with(&p.src, &p.memory, &d.prefix).unwrap();
                assert!(apply(&state, &p.memory, &d.action).is_ok());
                let want = dynamic_oracle(&state, &p.tgt, &p.memory, Some(e.vocab.tokens())).unwrap();
                assert_eq!(d.action, want);
            }
        }
    }

    #[test]
    fn postrefine_labels_only_the_expert_suffix() {
        let (e, ps) = setup(8, 3);
        let mut seen = 0;
        for p in &ps {
            let Some(t) = postrefine_sampling(&e, p, &f_of(&e, p)).unwrap() else { continue };
            seen += 1;
            assert_eq!(&t.executed[t.first..], &t.labels[..]);
            assert!(t.demonstrations().iter().all(|d| d.prefix.len() >= t.first));
            assert_eq!(t.labels.last(), Some(&EditAction::Stop));
            let g_t = replay_with(&p.src, &p.memory, &t.executed[..t.first]).unwrap();
            let out = replay_with(&g_t, &p.memory, &t.labels).unwrap();
            assert!(structural_eq(&out, &p.tgt));
        }
        assert!(seen > 0, "an untrained learner gets something wrong");
    }

    /// A grammar with a single complete tree: the only legal action is Stop,
    /// so every learner is already correct.
    fn leaf_world() -> (Editor<f64>, Vec<Prepared>, Vec<Example>) {
        let g = Arc::new(parse_grammar("root s;\ns = Leaf()\n").unwrap());
        let t = parse_tree(&g, "(Leaf)").unwrap();
        let exs = vec![Example { src: t.clone(), tgt: t, category: Category::Identity }];
        let vocab = Vocab::new(&g, &[]);
        let e = Editor::new(EditorConfig::tiny(), g, vocab, &mut ChaCha8Rng::seed_from_u64(0));
        let (ps, _) = prepare(&e, &exs, 1).unwrap();
        (e, ps, exs)
    }

    #[test]
    fn postrefine_on_a_correct_learner_collects_and_changes_nothing() {
        let (mut e, ps, exs) = leaf_world();
        assert!(postrefine_sampling(&e, &ps[0], &f_of(&e, &ps[0])).unwrap().is_none());
        let before = e.store.clone();
        let r = imitation_iteration(&mut e, &ps, &ps, &exs, Strategy::PostRefine, &tiny_cfg(), 1, &mut |_| {}).unwrap();
        assert_eq!((r.trajectories, r.demonstrations, r.gold_mixed_in), (0, 0, 0));
        for id in before.ids() {
            assert_eq!(before.get(id), e.store.get(id));
        }
        assert_eq!(r.before.accuracy(), 1.0);
    }

    #[test]
    fn supervised_loss_falls_over_three_epochs() {
        let (mut e, ps) = setup(24, 4);
        let cfg = TrainConfig { epochs: 3, lr: 5e-3, ..tiny_cfg() };
        let sum = train_supervised(&mut e, &ps, &ps[..8], &cfg, &mut |_| {}).unwrap();
        let l: Vec<f64> = sum.epochs.iter().map(|s| s.loss).collect();
        assert!(l.iter().all(|x| x.is_finite()));
        assert!(l[2] < l[0], "{l:?}");
    }

    #[test]
    fn dagger_collection_is_reproducible_and_thread_independent() {
        let (e, ps) = setup(8, 5);
        let cfg = tiny_cfg();
        let a = collect(&e, &ps, Strategy::Dagger, &cfg, 1).unwrap();
        let b = collect(&e, &ps, Strategy::Dagger, &TrainConfig { threads: 3, ..cfg }, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn imitation_retraining_runs_on_collected_states() {
        let (mut e, ps) = setup(8, 6);
        let exs: Vec<Example> =
            ps.iter().map(|p| Example { src: p.src.clone(), tgt: p.tgt.clone(), category: Category::Identity }).collect();
        let cfg = TrainConfig { imitation_epochs: 1, ..tiny_cfg() };
        let r = imitation_iteration(&mut e, &ps, &ps, &exs, Strategy::Dagger, &cfg, 1, &mut |_| {}).unwrap();
        assert_eq!(r.trajectories, ps.len());
        assert_eq!(r.gold_mixed_in, ps.len());
        assert!(r.demonstrations >= ps.len());
        assert_eq!(r.retrain.dev_losses.len(), 2);
    }

    #[test]
    fn records_are_one_json_object_per_demonstration() {
        let (e, ps) = setup(2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = dagger_sampling(&e, &ps[0], &f_of(&e, &ps[0]), 1.0, &mut rng).unwrap();
        let text = t.records(&ps[0]);
        assert_eq!(text.lines().count(), t.labels.len());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["src"].is_string() && v["prefix"].is_string() && v["action"].is_string());
        }
    }

    #[test]
    fn config_reads_partial_toml_and_checks_beta() {
        let c: TrainConfig = toml::from_str("epochs = 3\nbeta = 0.25\n[model]\nggnn_steps = 2\n").unwrap();
        assert_eq!((c.epochs, c.beta, c.model.ggnn_steps), (3, 0.25, 2));
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
        assert!(toml::from_str::<TrainConfig>("epoch = 3\n").is_err());
        assert!(TrainConfig { beta: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
