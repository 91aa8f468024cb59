use super::Scalar;

/// Dense row-major matrix. Vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape {rows}x{cols} does not match {} values", data.len());
        Tensor { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Tensor::from_vec(rows, cols, data.iter().map(|&x| S::c(x)).collect())
    }

    pub fn scalar(x: S) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn row_vector(data: Vec<S>) -> Self {
        let n = data.len();
        Tensor::from_vec(1, n, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: S) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum_sq(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `c (+)= op(a) * op(b)`, where `op` optionally transposes.
    pub fn gemm_into(a: &Tensor<S>, ta: bool, b: &Tensor<S>, tb: bool, c: &mut Tensor<S>) {
        let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        assert_eq!(k, kb, "inner dimensions differ: {:?}{} x {:?}{}", a.shape(), if ta { "T" } else { "" }, b.shape(), if tb { "T" } else { "" });
        assert_eq!(c.shape(), (m, n));
        if m == 0 || n == 0 || k == 0 {
            return;
        }
        if m == 1 {
            // A single row: a is contiguous either way.
            let x = &a.data[..k];
            let out = &mut c.data[..n];
            if tb {
                for (j, o) in out.iter_mut().enumerate() {
                    let w = &b.data[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for p in 0..k {
                        acc += x[p] * w[p];
                    }
                    *o += acc;
                }
            } else {
                for (p, &xp) in x.iter().enumerate() {
                    if xp == S::zero() {
                        continue;
                    }
                    let w = &b.data[p * n..(p + 1) * n];
                    for (o, &wj) in out.iter_mut().zip(w) {
                        *o += xp * wj;
                    }
                }
            }
            return;
        }
        let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
        let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
        // SAFETY: shapes were checked above; c is a distinct allocation.
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                S::one(),
                c.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    pub fn matmul(&self, b: &Tensor<S>) -> Tensor<S> {
        let mut c = Tensor::zeros(self.rows, b.cols);
        Tensor::gemm_into(self, false, b, false, &mut c);
        c
    }

    pub fn transpose(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Largest entry index per row among `allowed` columns.
    pub fn argmax_masked(row: &[S], allowed: impl Fn(usize) -> bool) -> Option<usize> {
        let mut best: Option<(usize, S)> = None;
        for (i, &v) in row.iter().enumerate() {
            if allowed(i) && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let mut c = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                c.data_mut()[i * b.cols() + j] = s;
            }
        }
        c
    }

    fn seq(r: usize, c: usize, k: f64) -> Tensor<f64> {
        Tensor::from_vec(r, c, (0..r * c).map(|i| ((i as f64) * k).sin()).collect())
    }

    #[test]
    fn gemm_variants_match_naive() {
        for &(m, k, n) in &[(1, 5, 3), (4, 3, 2), (7, 9, 6), (1, 1, 1), (3, 1, 4)] {
            let a = seq(m, k, 0.7);
            let b = seq(k, n, 1.3);
            let want = naive(&a, &b);
            let close = |x: &Tensor<f64>| x.data().iter().zip(want.data()).all(|(p, q)| (p - q).abs() < 1e-12);
            assert!(close(&a.matmul(&b)));
            let mut c = Tensor::zeros(m, n);
            Tensor::gemm_into(&a.transpose(), true, &b, false, &mut c);
            assert!(close(&c));
            let mut c = Tensor::zeros(m, n);
            Tensor::gemm_into(&a, false, &b.transpose(), true, &mut c);
            assert!(close(&c));
            let mut c = Tensor::zeros(m, n);
            Tensor::gemm_into(&a.transpose(), true, &b.transpose(), true, &mut c);
            assert!(close(&c));
        }
    }

    #[test]
    fn f32_gemm_agrees() {
        let a: Tensor<f32> = Tensor::from_f64(3, 4, &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12.]);
        let b: Tensor<f32> = Tensor::from_f64(4, 2, &[1., 0., 0., 1., 1., 0., 0., 1.]);
        assert_eq!(a.matmul(&b).data(), &[4., 6., 12., 14., 20., 22.]);
    }

    #[test]
    fn masked_argmax() {
        let r = [0.5, 3.0, 2.0, 3.0];
        assert_eq!(Tensor::<f64>::argmax_masked(&r, |_| true), Some(1));
        assert_eq!(Tensor::<f64>::argmax_masked(&r, |i| i != 1), Some(3));
        assert_eq!(Tensor::<f64>::argmax_masked(&r, |_| false), None);
    }
}
