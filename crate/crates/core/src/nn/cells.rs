//! Recurrent cells built from tape ops. Inputs are batched by rows.

use rand::Rng;

use super::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// LSTM with gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Lstm {
            wx: store.matrix(&format!("{name}.wx"), input, 4 * hidden, rng),
            wh: store.matrix(&format!("{name}.wh"), hidden, 4 * hidden, rng),
            b: store.bias(&format!("{name}.b"), 4 * hidden),
            hidden,
        }
    }

    /// Input contribution `x * Wx + b`, computable for many steps at once.
    pub fn project<S: Scalar>(&self, t: &mut Tape<S>, x: Var) -> Var {
        t.linear(x, self.wx, self.b)
    }

    /// One step from a projected input.
    pub fn cell<S: Scalar>(&self, t: &mut Tape<S>, xw: Var, h: Var, c: Var) -> (Var, Var) {
        let d = self.hidden;
        let wh = t.param(self.wh);
        let hw = t.matmul(h, wh);
        let z = t.add(xw, hw);
        let zi = t.slice_cols(z, 0, d);
        let zf = t.slice_cols(z, d, d);
        let zg = t.slice_cols(z, 2 * d, d);
        let zo = t.slice_cols(z, 3 * d, d);
        let i = t.sigmoid(zi);
        let f = t.sigmoid(zf);
        let g = t.tanh(zg);
        let o = t.sigmoid(zo);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c2 = t.add(fc, ig);
        let tc = t.tanh(c2);
        let h2 = t.mul(o, tc);
        (h2, c2)
    }

    pub fn zero_state<S: Scalar>(&self, t: &mut Tape<S>, batch: usize) -> (Var, Var) {
        let h = t.constant(Tensor::zeros(batch, self.hidden));
        let c = t.constant(Tensor::zeros(batch, self.hidden));
        (h, c)
    }

    /// Hidden states after each step, starting from zeros.
    pub fn scan<S: Scalar>(&self, t: &mut Tape<S>, steps: &[Var]) -> Vec<Var> {
        let Some(&first) = steps.first() else { return Vec::new() };
        let (mut h, mut c) = self.zero_state(t, t.shape(first).0);
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            let xw = self.project(t, x);
            (h, c) = self.cell(t, xw, h, c);
            out.push(h);
        }
        out
    }
}

/// Two LSTMs reading a sequence in opposite directions.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// Final forward state joined with the final backward state.
    pub fn encode<S: Scalar>(&self, t: &mut Tape<S>, steps: &[Var]) -> Var {
        let f = self.fwd.scan(t, steps);
        let rev: Vec<Var> = steps.iter().rev().copied().collect();
        let b = self.bwd.scan(t, &rev);
        t.concat_cols(&[*f.last().expect("non-empty sequence"), *b.last().expect("non-empty sequence")])
    }
}

/// Gated recurrent unit: `h' = (1 - z) * n + z * h`.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub dim: usize,
}

impl Gru {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, dim: usize, rng: &mut R) -> Self {
        Gru {
            wx: store.matrix(&format!("{name}.wx"), dim, 3 * dim, rng),
            wh: store.matrix(&format!("{name}.wh"), dim, 3 * dim, rng),
            bx: store.bias(&format!("{name}.bx"), 3 * dim),
            bh: store.bias(&format!("{name}.bh"), 3 * dim),
            dim,
        }
    }

    pub fn step<S: Scalar>(&self, t: &mut Tape<S>, x: Var, h: Var) -> Var {
        let d = self.dim;
        let gx = t.linear(x, self.wx, self.bx);
        let gh = t.linear(h, self.wh, self.bh);
        let xz = t.slice_cols(gx, 0, 2 * d);
        let hz = t.slice_cols(gh, 0, 2 * d);
        let zr = t.add(xz, hz);
        let zr = t.sigmoid(zr);
        let z = t.slice_cols(zr, 0, d);
        let r = t.slice_cols(zr, d, d);
        let xn = t.slice_cols(gx, 2 * d, d);
        let hn = t.slice_cols(gh, 2 * d, d);
        let rhn = t.mul(r, hn);
        let n = t.add(xn, rhn);
        let n = t.tanh(n);
        let omz = t.one_minus(z);
        let a = t.mul(omz, n);
        let b = t.mul(z, h);
        t.add(a, b)
    }
}
