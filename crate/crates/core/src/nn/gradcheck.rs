//! Central finite differences against the tape's reverse pass.

use rand::seq::index::sample;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cells::{Gru, Lstm};
use super::tape::ZERO_ROW;
use super::{ParamId, ParamStore, Tape, Tensor, Var};

/// Denominator floor for the relative error of near-zero gradients. Central
/// differences of a summed loss carry roundoff near 1e-9, so smaller floors
/// report noise; a dropped gradient of 1e-5 still shows as an error of 0.1.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Coordinates compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `backward` with central differences of step `h` on every
/// coordinate, or on `max_per_param` random coordinates of larger tensors.
pub fn grad_check<R: Rng + ?Sized>(
    store: &ParamStore<f64>,
    program: impl Fn(&mut Tape<f64>) -> Var,
    h: f64,
    max_per_param: Option<usize>,
    rng: &mut R,
) -> GradReport {
    let grads = {
        let mut tape = Tape::new(store);
        let loss = program(&mut tape);
        tape.backward(loss).expect("scalar loss")
    };
    let eval = |s: &ParamStore<f64>| {
        let mut tape = Tape::new(s);
        let loss = program(&mut tape);
        tape.scalar(loss)
    };
    let mut work = store.clone();
    let mut report = GradReport { checked: 0, max_rel_err: 0.0, worst: None };
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = match max_per_param {
            Some(k) if n > k => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let numeric = central(&mut work, id, i, h, &eval);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = e;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    report
}

fn central(store: &mut ParamStore<f64>, id: ParamId, i: usize, h: f64, eval: &impl Fn(&ParamStore<f64>) -> f64) -> f64 {
    let x = store.get(id).data()[i];
    store.get_mut(id).data_mut()[i] = x + h;
    let up = eval(store);
    store.get_mut(id).data_mut()[i] = x - h;
    let down = eval(store);
    store.get_mut(id).data_mut()[i] = x;
    (up - down) / (2.0 * h)
}


/// Reduces any matrix to a scalar through fixed, non-uniform weights so that
/// every output coordinate gets a distinct cotangent.
fn reduce(t: &mut Tape<f64>, v: Var) -> Var {
    let (r, c) = t.shape(v);
    let w = Tensor::from_vec(r, c, (0..r * c).map(|i| ((i as f64) * 0.37 + 0.11).sin()).collect());
    let w = t.constant(w);
    let m = t.mul(v, w);
    t.sum(m)
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Central-difference step and pass threshold used by the op suite.
pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

struct Suite {
    seeds: u64,
    out: Vec<(String, GradReport)>,
}

impl Suite {
    /// Runs `program` on fresh random params for each seed and keeps the
    /// worst report.
    fn check(&mut self, name: &str, shapes: &[(usize, usize)], program: impl Fn(&mut Tape<f64>, &[ParamId]) -> Var) {
        let mut worst: Option<GradReport> = None;
        for seed in 0..self.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let ids: Vec<ParamId> =
                shapes.iter().enumerate().map(|(i, &(r, c))| store.add(&format!("p{i}"), rand_tensor(&mut rng, r, c))).collect();
            let report = grad_check(&store, |t| program(t, &ids), H, None, &mut rng);
            if worst.as_ref().is_none_or(|w| report.max_rel_err > w.max_rel_err) {
                worst = Some(report);
            }
        }
        self.out.push((name.to_string(), worst.expect("at least one seed")));
    }
}

/// Gradient checks of every tape op and of the recurrent cells, each over
/// `seeds` random initialisations. Returns the worst report per op.
pub fn op_suite(seeds: u64) -> Vec<(String, GradReport)> {
    let mut s = Suite { seeds: seeds.max(1), out: Vec::new() };
    s.check("matmul", &[(3, 4), (4, 2)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.matmul(a, b);
        reduce(t, y)
    });
    s.check("matmul_nt", &[(3, 4), (5, 4)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.matmul_nt(a, b);
        reduce(t, y)
    });
    s.check("matmul_tn", &[(4, 3), (4, 2)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.matmul_t(a, true, b, false);
        reduce(t, y)
    });
    s.check("matmul_tt", &[(4, 3), (2, 4)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.matmul_t(a, true, b, true);
        reduce(t, y)
    });
    s.check("row_times_matrix", &[(1, 6), (6, 3)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.matmul(a, b);
        reduce(t, y)
    });
    let shapes = &[(3, 4), (3, 4), (1, 4)];
    s.check("add", shapes, |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.add(a, b);
        reduce(t, y)
    });
    s.check("sub", shapes, |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.sub(a, b);
        reduce(t, y)
    });
    s.check("mul", shapes, |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.mul(a, b);
        reduce(t, y)
    });
    s.check("mul_self", shapes, |t, p| {
        let a = t.param(p[0]);
        let y = t.mul(a, a);
        reduce(t, y)
    });
    s.check("add_row", shapes, |t, p| {
        let (a, r) = (t.param(p[0]), t.param(p[2]));
        let y = t.add_row(a, r);
        reduce(t, y)
    });
    s.check("scale", shapes, |t, p| {
        let a = t.param(p[0]);
        let y = t.scale(a, -2.5);
        reduce(t, y)
    });
    s.check("one_minus", shapes, |t, p| {
        let a = t.param(p[0]);
        let y = t.one_minus(a);
        reduce(t, y)
    });
    s.check("tanh", shapes, |t, p| {
        let a = t.param(p[0]);
        let y = t.tanh(a);
        reduce(t, y)
    });
    s.check("sigmoid", shapes, |t, p| {
        let a = t.param(p[0]);
        let y = t.sigmoid(a);
        reduce(t, y)
    });
    s.check("concat_cols", &[(3, 2), (3, 4)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.concat_cols(&[a, b, a]);
        reduce(t, y)
    });
    s.check("concat_rows", &[(2, 3), (4, 3)], |t, p| {
        let (a, b) = (t.param(p[0]), t.param(p[1]));
        let y = t.concat_rows(&[b, a, b]);
        reduce(t, y)
    });
    s.check("slices", &[(5, 6)], |t, p| {
        let a = t.param(p[0]);
        let x = t.slice_cols(a, 1, 3);
        let y = t.slice_rows(x, 2, 2);
        reduce(t, y)
    });
    s.check("gather_rows", &[(4, 3)], |t, p| {
        let a = t.param(p[0]);
        let y = t.gather_rows(a, vec![2, 0, ZERO_ROW, 2, 3]);
        reduce(t, y)
    });
    s.check("edge_aggregate", &[(4, 3)], |t, p| {
        let a = t.param(p[0]);
        let y = t.edge_aggregate(a, vec![(0, 1, 0), (1, 0, 1), (2, 1, 0), (3, 3, 2), (0, 3, 3)], 4);
        reduce(t, y)
    });
    s.check("segment_mean", &[(6, 3)], |t, p| {
        let a = t.param(p[0]);
        let y = t.segment_mean(a, vec![0, 2, 2, 6]);
        reduce(t, y)
    });
    s.check("sum", &[(3, 3)], |t, p| {
        let a = t.param(p[0]);
        t.sum(a)
    });
    let mask = [true, true, false, true, false, true, true, true];
    s.check("softmax_ce", &[(2, 4)], |t, p| {
        let a = t.param(p[0]);
        t.softmax_ce(a, &mask, vec![3, 1])
    });
    // Near one-hot saturation: a large logit on the target.
    s.check("softmax_ce_saturated", &[(2, 4)], |t, p| {
        let a = t.param(p[0]);
        let big = t.constant(Tensor::from_f64(2, 4, &[0.0, 0.0, 0.0, 12.0, 0.0, 12.0, 0.0, 0.0]));
        let z = t.add(a, big);
        t.softmax_ce(z, &mask, vec![3, 1])
    });
    let mut worst: Option<GradReport> = None;
    for seed in 0..s.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", 3, 4, &mut rng);
        let gru = Gru::new(&mut store, "gru", 4, &mut rng);
        let x = store.add("x", rand_tensor(&mut rng, 6, 3));
        for id in store.ids().collect::<Vec<_>>() {
            let r = rand_tensor(&mut rng, store.get(id).rows(), store.get(id).cols());
            *store.get_mut(id) = r;
        }
        let report = grad_check(
            &store,
            |t| {
                let xs = t.param(x);
                let steps: Vec<Var> = (0..3).map(|i| t.slice_rows(xs, 2 * i, 2)).collect();
                let hs = lstm.scan(t, &steps);
                let h = *hs.last().unwrap();
                let m = gru.step(t, hs[0], h);
                reduce(t, m)
            },
            H,
            None,
            &mut rng,
        );
        if worst.as_ref().is_none_or(|w| report.max_rel_err > w.max_rel_err) {
            worst = Some(report);
        }
    }
    s.out.push(("lstm_scan_gru".to_string(), worst.expect("at least one seed")));
    s.out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        let reports = op_suite(5);
        assert!(reports.len() >= 20);
        for (name, r) in &reports {
            assert!(r.passes(TOL), "{name}: {r:?}");
            assert!(r.checked > 0, "{name}");
        }
    }

    #[test]
    fn zero_parameter_program_reports_nothing() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = grad_check(
            &store,
            |t| {
                let c = t.constant(Tensor::scalar(3.0));
                t.sum(c)
            },
            H,
            None,
            &mut rng,
        );
        assert_eq!(r, GradReport { checked: 0, max_rel_err: 0.0, worst: None });
    }

    #[test]
    fn sum_of_matvec_matches_outer_product() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_f64(2, 3, &[0.1, -0.2, 0.3, 0.5, 0.0, -1.0]));
        let mut t = Tape::new(&store);
        let x = t.constant(Tensor::from_f64(1, 2, &[2.0, -3.0]));
        let wv = t.param(w);
        let y = t.matmul(x, wv);
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 2.0, 2.0, -3.0, -3.0, -3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = grad_check(
            &store,
            |t| {
                let x = t.constant(Tensor::from_f64(1, 2, &[2.0, -3.0]));
                let wv = t.param(w);
                let y = t.matmul(x, wv);
                t.sum(y)
            },
            H,
            None,
            &mut rng,
        );
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
