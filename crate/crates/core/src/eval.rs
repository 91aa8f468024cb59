//! Evaluation protocols: gold-setting exact match, one-shot transfer within
//! a category, and nearest neighbours in edit-representation space.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{Category, Example};
use crate::model::{Editor, Episode, MemoryInfo};
use crate::nn::{Scalar, Tensor};
use crate::oracle::{gold_script, OracleError};
use crate::tree::{structural_eq, SubtreeMemory};

/// An example lowered for the edit encoder. The gold script is computed
/// under the editor's vocabulary when possible, so `f_delta` reads the same
/// kind of script it was trained on; otherwise the unrestricted script is
/// used and out-of-vocabulary tokens are read as UNK.
pub struct Encoded {
    pub memory: SubtreeMemory,
    pub info: MemoryInfo,
    pub episode: Episode,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("example {index}: {error}")]
    Oracle { index: usize, error: OracleError },
    #[error("example {index}: {message}")]
    Prep { index: usize, message: String },
    #[error("the neighbour pool is empty")]
    EmptyPool,
}

pub fn encode_example<S: Scalar>(editor: &Editor<S>, index: usize, e: &Example) -> Result<Encoded, EvalError> {
    let memory = SubtreeMemory::new(&e.src);
    let info = MemoryInfo::new(&memory);
    let script = match gold_script(&e.src, &e.tgt, Some(editor.vocab.tokens())) {
        Ok(s) => s,
        Err(OracleError::UnlearnableExample { .. }) => {
            gold_script(&e.src, &e.tgt, None).map_err(|error| EvalError::Oracle { index, error })?
        }
        Err(error) => return Err(EvalError::Oracle { index, error }),
    };
    let episode = Episode::from_script(&e.src, &script, &editor.vocab, &memory, &info, false)
        .map_err(|err| EvalError::Prep { index, message: err.to_string() })?;
    Ok(Encoded { memory, info, episode })
}

/// Edit representations of many examples, computed `chunk` at a time.
pub fn encode_many<S: Scalar>(
    editor: &Editor<S>,
    examples: &[Example],
    chunk: usize,
    threads: usize,
) -> Result<Vec<Tensor<S>>, EvalError> {
    let indexed: Vec<(usize, &Example)> = examples.iter().enumerate().collect();
    let encoded = crate::par_map(&indexed, threads, |(i, e)| encode_example(editor, *i, e));
    let encoded: Vec<Encoded> = encoded.into_iter().collect::<Result<_, _>>()?;
    let groups: Vec<&[Encoded]> = encoded.chunks(chunk.max(1)).collect();
    let fs = crate::par_map(&groups, threads, |g| {
        let eps: Vec<(&Episode, &MemoryInfo)> = g.iter().map(|x| (&x.episode, &x.info)).collect();
        editor.encode_edits_many(&eps)
    });
    Ok(fs.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Outcome {
    pub correct: bool,
    /// Executed actions, not counting the final Stop.
    pub length: usize,
    pub add_delete_loops: usize,
}

fn attempt<S: Scalar>(editor: &Editor<S>, f: &Tensor<S>, e: &Example) -> Outcome {
    let r = editor.rollout(f, &e.src);
    let length = r.script.iter().filter(|a| !matches!(a, crate::edits::EditAction::Stop)).count();
    Outcome { correct: structural_eq(&r.tree, &e.tgt), length, add_delete_loops: r.add_delete_loops }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldReport {
    pub total: usize,
    pub correct: usize,
    pub mean_length: f64,
    pub add_delete_loops: usize,
    /// `(correct, total)` per category.
    pub per_category: BTreeMap<Category, (usize, usize)>,
}

impl GoldReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn lines(&self) -> String {
        format!(
            "accuracy={:.6}\ncorrect={}\ntotal={}\nmean_length={:.6}\nadd_delete_loops={}\n",
            self.accuracy(),
            self.correct,
            self.total,
            self.mean_length,
            self.add_delete_loops
        )
    }

    pub fn table(&self) -> String {
        let mut s = String::from("category\tcorrect\ttotal\taccuracy\n");
        for (c, (k, n)) in &self.per_category {
            s.push_str(&format!("{}\t{k}\t{n}\t{:.6}\n", c.name(), *k as f64 / (*n).max(1) as f64));
        }
        s
    }
}

/// Exact-match accuracy when each example is edited under its own `f_delta`.
pub fn eval_gold<S: Scalar>(editor: &Editor<S>, data: &[Example], threads: usize) -> Result<GoldReport, EvalError> {
    let fs = encode_many(editor, data, 16, threads)?;
    let jobs: Vec<(&Tensor<S>, &Example)> = fs.iter().zip(data).collect();
    let outcomes = crate::par_map(&jobs, threads, |(f, e)| attempt(editor, f, e));
    let mut r = GoldReport { total: data.len(), ..GoldReport::default() };
    let mut len_sum = 0usize;
    for (o, e) in outcomes.iter().zip(data) {
        let entry = r.per_category.entry(e.category).or_default();
        entry.1 += 1;
        if o.correct {
            r.correct += 1;
            entry.0 += 1;
        }
        len_sum += o.length;
        r.add_delete_loops += o.add_delete_loops;
    }
    r.mean_length = if data.is_empty() { 0.0 } else { len_sum as f64 / data.len() as f64 };
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryScore {
    pub category: Category,
    pub examples: usize,
    pub seeds: usize,
    /// Mean over seeds of the per-seed accuracy on the other examples.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OneShotReport {
    pub categories: Vec<CategoryScore>,
    pub skipped: Vec<Category>,
}

impl OneShotReport {
    /// Unweighted mean over categories.
    pub fn macro_accuracy(&self) -> f64 {
        if self.categories.is_empty() {
            return 0.0;
        }
        self.categories.iter().map(|c| c.accuracy).sum::<f64>() / self.categories.len() as f64
    }

    /// Mean over categories weighted by their example counts.
    pub fn micro_accuracy(&self) -> f64 {
        let n: usize = self.categories.iter().map(|c| c.examples).sum();
        if n == 0 {
            return 0.0;
        }
        self.categories.iter().map(|c| c.accuracy * c.examples as f64).sum::<f64>() / n as f64
    }

    pub fn lines(&self) -> String {
        let mut s = format!(
            "macro_accuracy={:.6}\nmicro_accuracy={:.6}\ncategories={}\n",
            self.macro_accuracy(),
            self.micro_accuracy(),
            self.categories.len()
        );
        for c in &self.skipped {
            s.push_str(&format!("skipped={}\n", c.name()));
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::from("category\texamples\tseeds\taccuracy\n");
        for c in &self.categories {
            s.push_str(&format!("{}\t{}\t{}\t{:.6}\n", c.category.name(), c.examples, c.seeds, c.accuracy));
        }
        s
    }
}

pub const ONESHOT_SEEDS: usize = 100;

/// For every category, the first `min(seeds, N)` examples in turn supply
/// `f_delta` for editing each of the category's other examples. Categories
/// with one example cannot be scored and are listed as skipped.
pub fn eval_oneshot<S: Scalar>(
    editor: &Editor<S>,
    data: &[Example],
    seeds: usize,
    threads: usize,
) -> Result<OneShotReport, EvalError> {
    let mut groups: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, e) in data.iter().enumerate() {
        groups.entry(e.category).or_default().push(i);
    }
    let mut report = OneShotReport::default();
    for (cat, idx) in groups {
        if idx.len() < 2 {
            report.skipped.push(cat);
            continue;
        }
        let n_seeds = seeds.min(idx.len());
        let seed_examples: Vec<Example> = idx[..n_seeds].iter().map(|&i| data[i].clone()).collect();
        let fs = encode_many(editor, &seed_examples, 16, threads)?;
        let jobs: Vec<(usize, usize)> = (0..n_seeds).flat_map(|s| (0..idx.len()).filter(move |&j| j != s).map(move |j| (s, j))).collect();
        let hits = crate::par_map(&jobs, threads, |&(s, j)| attempt(editor, &fs[s], &data[idx[j]]).correct);
        let per_seed = idx.len() - 1;
        let mut sum = 0.0;
        for s in 0..n_seeds {
            let k = hits[s * per_seed..(s + 1) * per_seed].iter().filter(|&&h| h).count();
            sum += k as f64 / per_seed as f64;
        }
        report.categories.push(CategoryScore { category: cat, examples: idx.len(), seeds: n_seeds, accuracy: sum / n_seeds as f64 });
    }
    Ok(report)
}

pub fn cosine<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.f64(), y.f64());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let d = (aa * bb).sqrt();
    if d == 0.0 {
        0.0
    } else {
        ab / d
    }
}

/// Pool indices ranked by cosine similarity to `query`, most similar
/// first; ties go to the lower index. `exclude` drops the query itself.
pub fn rank_neighbors<S: Scalar>(
    query: &Tensor<S>,
    pool: &[Tensor<S>],
    exclude: Option<usize>,
    k: usize,
) -> Result<Vec<(usize, f64)>, EvalError> {
    let mut scored: Vec<(usize, f64)> =
        pool.iter().enumerate().filter(|(i, _)| Some(*i) != exclude).map(|(i, f)| (i, cosine(query, f))).collect();
    if scored.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Top-`k` neighbours of `pool[query]` among the rest of `pool`.
pub fn nearest_neighbors<S: Scalar>(
    editor: &Editor<S>,
    pool: &[Example],
    query: usize,
    k: usize,
    threads: usize,
) -> Result<Vec<(usize, f64)>, EvalError> {
    if pool.len() < 2 {
        return Err(EvalError::EmptyPool);
    }
    let fs = encode_many(editor, pool, 16, threads)?;
    rank_neighbors(&fs[query], &fs, Some(query), k)
}

/// Share of examples whose nearest neighbour has the same category.
pub fn top1_category_match<S: Scalar>(fs: &[Tensor<S>], data: &[Example]) -> f64 {
    let mut hits = 0;
    for (i, f) in fs.iter().enumerate() {
        if let Ok(r) = rank_neighbors(f, fs, Some(i), 1) {
            hits += usize::from(data[r[0].0].category == data[i].category);
        }
    }
    hits as f64 / fs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::row_vector(v.to_vec())
    }

    #[test]
    fn duplicate_ranks_first_with_similarity_one() {
        let pool = vec![t(&[1.0, 2.0]), t(&[0.0, 1.0]), t(&[1.0, 2.0]), t(&[-1.0, 0.0])];
        let r = rank_neighbors(&pool[0], &pool, Some(0), 10).unwrap();
        assert_eq!(r[0].0, 2);
        assert!((r[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(r.len(), 3, "k beyond the pool gives the full ranking");
    }

    #[test]
    fn ties_break_by_index() {
        let pool = vec![t(&[1.0, 0.0]), t(&[2.0, 0.0]), t(&[3.0, 0.0])];
        let r = rank_neighbors(&t(&[1.0, 0.0]), &pool, None, 3).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pool = vec![t(&[1.0])];
        assert!(matches!(rank_neighbors(&pool[0], &pool, Some(0), 1), Err(EvalError::EmptyPool)));
    }

    #[test]
    fn micro_is_example_weighted() {
        let r = OneShotReport {
            categories: vec![
                CategoryScore { category: Category::OperandSwap, examples: 30, seeds: 30, accuracy: 1.0 },
                CategoryScore { category: Category::CallToIndex, examples: 10, seeds: 10, accuracy: 0.0 },
            ],
            skipped: vec![],
        };
        assert!((r.macro_accuracy() - 0.5).abs() < 1e-12);
        assert!((r.micro_accuracy() - 0.75).abs() < 1e-12);
    }
}
