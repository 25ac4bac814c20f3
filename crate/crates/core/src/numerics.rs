//! Dense row-major matrices with explicit forward/backward pairs.
//!
//! There is no tape: every differentiable operation comes with a `*_backward`
//! function that maps the upstream gradient to gradients of its inputs, and
//! the model composes these by hand. All arithmetic is `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: (i, r.len()),
                    right: (0, cols),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// `1 x n` row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        self.same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    fn same_shape(&self, op: &'static str, other: &Tensor2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// `a · b`.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    gemm_nn(a, b, &mut out);
    Ok(out)
}

/// Gradients of `y = a · b`: returns `(dOut · bᵀ, aᵀ · dOut)`.
pub fn matmul_backward(a: &Tensor2D, b: &Tensor2D, d_out: &Tensor2D) -> Result<(Tensor2D, Tensor2D)> {
    if a.cols != b.rows || d_out.shape() != (a.rows, b.cols) {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok((matmul_nt(d_out, b)?, matmul_tn(a, d_out)?))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.cols {
        return Err(Error::Dimension {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ar, b.row(j));
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    let mut out = Tensor2D::zeros(a.cols, b.cols);
    matmul_tn_acc(a, b, &mut out)?;
    Ok(out)
}

/// `out += aᵀ · b`. Used to accumulate weight gradients in place.
pub fn matmul_tn_acc(a: &Tensor2D, b: &Tensor2D, out: &mut Tensor2D) -> Result<()> {
    if a.rows != b.rows || out.shape() != (a.cols, b.cols) {
        return Err(Error::Dimension {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = b.cols;
    for k in 0..a.rows {
        let ar = a.row(k);
        let br = b.row(k);
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Ok(())
}

/// `out += a · b`.
pub fn matmul_acc(a: &Tensor2D, b: &Tensor2D, out: &mut Tensor2D) -> Result<()> {
    if a.cols != b.rows || out.shape() != (a.rows, b.cols) {
        return Err(Error::Dimension {
            op: "matmul_acc",
            left: a.shape(),
            right: b.shape(),
        });
    }
    gemm_nn(a, b, out);
    Ok(())
}

fn gemm_nn(a: &Tensor2D, b: &Tensor2D, out: &mut Tensor2D) {
    let n = b.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds a `1 x cols` bias to every row.
pub fn add_bias(x: &Tensor2D, bias: &Tensor2D) -> Result<Tensor2D> {
    let mut out = x.clone();
    add_bias_in_place(&mut out, bias)?;
    Ok(out)
}

pub fn add_bias_in_place(x: &mut Tensor2D, bias: &Tensor2D) -> Result<()> {
    if bias.rows != 1 || bias.cols != x.cols {
        return Err(Error::Dimension {
            op: "add_bias",
            left: x.shape(),
            right: bias.shape(),
        });
    }
    for r in 0..x.rows {
        for (v, b) in x.row_mut(r).iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(())
}

/// Gradient of the bias in `add_bias`: column sums of `d_out`.
pub fn add_bias_backward(d_out: &Tensor2D) -> Tensor2D {
    let mut db = Tensor2D::zeros(1, d_out.cols);
    bias_grad_acc(d_out, &mut db);
    db
}

pub(crate) fn bias_grad_acc(d_out: &Tensor2D, db: &mut Tensor2D) {
    for r in 0..d_out.rows {
        for (g, d) in db.data.iter_mut().zip(d_out.row(r)) {
            *g += d;
        }
    }
}

pub fn relu(x: &Tensor2D) -> Tensor2D {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// ReLU backward; the subgradient at 0 is taken as 0.
pub fn relu_backward(x: &Tensor2D, d_out: &Tensor2D) -> Result<Tensor2D> {
    x.same_shape("relu_backward", d_out)?;
    let data = x
        .data
        .iter()
        .zip(&d_out.data)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect();
    Ok(Tensor2D {
        rows: x.rows,
        cols: x.cols,
        data,
    })
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor2D) -> Tensor2D {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// Sigmoid backward expressed through the forward output `y`.
pub fn sigmoid_backward(y: &Tensor2D, d_out: &Tensor2D) -> Result<Tensor2D> {
    y.same_shape("sigmoid_backward", d_out)?;
    let data = y
        .data
        .iter()
        .zip(&d_out.data)
        .map(|(&s, &d)| d * s * (1.0 - s))
        .collect();
    Ok(Tensor2D {
        rows: y.rows,
        cols: y.cols,
        data,
    })
}

/// Row-wise softmax, max-shifted for stability.
pub fn softmax_rows(x: &Tensor2D) -> Result<Tensor2D> {
    if x.cols == 0 {
        return Err(Error::Dimension {
            op: "softmax_rows",
            left: x.shape(),
            right: (x.rows, 1),
        });
    }
    let mut out = x.clone();
    for r in 0..x.rows {
        let row = out.row_mut(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - m);
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Softmax backward through the forward output `y`:
/// `dx = y ⊙ (dy − rowsum(dy ⊙ y))`.
pub fn softmax_rows_backward(y: &Tensor2D, d_out: &Tensor2D) -> Result<Tensor2D> {
    y.same_shape("softmax_rows_backward", d_out)?;
    let mut dx = Tensor2D::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yr = y.row(r);
        let dr = d_out.row(r);
        let s = dot(yr, dr);
        for ((o, &yv), &dv) in dx.row_mut(r).iter_mut().zip(yr).zip(dr) {
            *o = yv * (dv - s);
        }
    }
    Ok(dx)
}

/// A trainable tensor together with its accumulated gradient.
///
/// Gradients add up across every branch that touches the value; callers
/// reset them explicitly with [`GradSlot::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSlot {
    pub value: Tensor2D,
    pub grad: Tensor2D,
}

impl GradSlot {
    pub fn new(value: Tensor2D) -> Self {
        let grad = Tensor2D::zeros(value.rows, value.cols);
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &Tensor2D) -> Result<()> {
        self.grad.add_assign(g)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Compares an analytic gradient with central differences of `f` at `x`.
///
/// Returns `max |fd − g| / max(1e-12, |fd| + |g|)` over all entries.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor2D, analytic: &Tensor2D, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor2D) -> f64,
{
    if x.shape() != analytic.shape() {
        return Err(Error::Dimension {
            op: "finite_diff_check",
            left: x.shape(),
            right: analytic.shape(),
        });
    }
    if !(h > 0.0) {
        return Err(Error::Verification(alloc::format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Verification(alloc::format!(
                "non-finite function value around entry {i}"
            )));
        }
        let fd = (fp - fm) / (2.0 * h);
        let g = analytic.data[i];
        let rel = (fd - g).abs() / (fd.abs() + g.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2D {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2D::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn identity_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random(&mut rng, 3, 4);
        assert_eq!(matmul(&Tensor2D::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Tensor2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor2D::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = matmul(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
        assert!(add_bias(&Tensor2D::zeros(2, 3), &Tensor2D::zeros(1, 2)).is_err());
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let w = random(&mut rng, 3, 2);
        // L = sum(w ⊙ (a·b)), so dL/dy = w
        let (da, db) = matmul_backward(&a, &b, &w).unwrap();
        let loss = |a: &Tensor2D, b: &Tensor2D| -> f64 {
            let y = matmul(a, b).unwrap();
            y.data().iter().zip(w.data()).map(|(p, q)| p * q).sum()
        };
        let ea = finite_diff_check(|x| loss(x, &b), &a, &da, 1e-5).unwrap();
        let eb = finite_diff_check(|x| loss(&a, x), &b, &db, 1e-5).unwrap();
        assert!(ea < 1e-6 && eb < 1e-6, "{ea} {eb}");
    }

    #[test]
    fn transpose_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 5);
        let b = random(&mut rng, 5, 4);
        let lhs = matmul(&a, &b).unwrap().transpose();
        let rhs = matmul(&b.transpose(), &a.transpose()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(matmul_nt(&a, &b.transpose()).unwrap(), matmul(&a, &b).unwrap());
    }

    #[test]
    fn activations_basic_cases() {
        let x = Tensor2D::row_vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&Tensor2D::row_vector(&[0.0])).data(), &[0.5]);
        let s = softmax_rows(&Tensor2D::zeros(1, 3)).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(softmax_rows(&Tensor2D::zeros(2, 0)).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_sigmoid_is_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = random(&mut rng, 4, 7);
        x.scale(30.0);
        let s = softmax_rows(&x).unwrap();
        for r in 0..4 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let y = sigmoid(&x);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn activation_backwards_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = random(&mut rng, 3, 4);
            let w = random(&mut rng, 3, 4);
            let wsum = |y: &Tensor2D| -> f64 { y.data().iter().zip(w.data()).map(|(p, q)| p * q).sum() };

            let g = sigmoid_backward(&sigmoid(&x), &w).unwrap();
            assert!(finite_diff_check(|t| wsum(&sigmoid(t)), &x, &g, 1e-5).unwrap() < 1e-4);

            let g = softmax_rows_backward(&softmax_rows(&x).unwrap(), &w).unwrap();
            assert!(finite_diff_check(|t| wsum(&softmax_rows(t).unwrap()), &x, &g, 1e-5).unwrap() < 1e-4);

            if x.data().iter().all(|v| v.abs() > 1e-3) {
                let g = relu_backward(&x, &w).unwrap();
                assert!(finite_diff_check(|t| wsum(&relu(t)), &x, &g, 1e-5).unwrap() < 1e-4);
            }

            let b = random(&mut rng, 1, 4);
            let gb = add_bias_backward(&w);
            assert!(finite_diff_check(|t| wsum(&add_bias(&x, t).unwrap()), &b, &gb, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn finite_diff_check_reference_cases() {
        let x = Tensor2D::row_vector(&[3.0]);
        let err = finite_diff_check(
            |t| t.data().iter().map(|v| v * v).sum(),
            &x,
            &Tensor2D::row_vector(&[6.0]),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);

        let z = Tensor2D::zeros(2, 2);
        assert_eq!(finite_diff_check(|_| 4.0, &z, &z, 1e-5).unwrap(), 0.0);

        let neg = Tensor2D::row_vector(&[-1.0, -0.5, -2.0]);
        let e = finite_diff_check(|t| relu(t).sum(), &neg, &Tensor2D::zeros(1, 3), 1e-5).unwrap();
        assert_eq!(e, 0.0);

        assert!(finite_diff_check(|_| f64::NAN, &x, &x, 1e-5).is_err());
        assert!(finite_diff_check(|_| 0.0, &x, &x, 0.0).is_err());
    }

    #[test]
    fn grad_slot_accumulates_and_resets() {
        let mut s = GradSlot::new(Tensor2D::zeros(2, 2));
        s.accumulate(&Tensor2D::filled(2, 2, 1.0)).unwrap();
        s.accumulate(&Tensor2D::filled(2, 2, 0.5)).unwrap();
        assert_eq!(s.grad.data(), &[1.5; 4]);
        s.zero_grad();
        assert_eq!(s.grad.sum(), 0.0);
        assert!(s.accumulate(&Tensor2D::zeros(1, 2)).is_err());
    }
}
