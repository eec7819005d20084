//! Dense row-major `f64` tensors.

use std::fmt;
use std::sync::Arc;

/// Immutable dense tensor. Cloning is cheap: the buffer is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Panics when `data.len()` disagrees with the shape product.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "tensor shape {shape:?} needs {n} elements, got {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer, new shape.
    pub fn reshape(&self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, self.len(), "cannot reshape {:?} into {shape:?}", self.shape);
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    /// Number of rows when viewed as a matrix whose last axis is the column axis.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.len() / self.cols().max(1),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::new(&self.shape, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "elementwise op on mismatched shapes {:?} and {:?}",
            self.shape, other.shape
        );
        Tensor::new(
            &self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

/// `out[n,m] = op(a)[n,k] * op(b)[k,m]` on raw matrices.
pub(crate) fn matmul_raw(
    a: &[f64],
    a_shape: (usize, usize),
    ta: bool,
    b: &[f64],
    b_shape: (usize, usize),
    tb: bool,
) -> (Vec<f64>, usize, usize) {
    let (n, k) = if ta { (a_shape.1, a_shape.0) } else { a_shape };
    let (k2, m) = if tb { (b_shape.1, b_shape.0) } else { b_shape };
    assert_eq!(k, k2, "matmul inner dimensions differ: {n}x{k} * {k2}x{m}");
    let mut out = vec![0.0; n * m];
    match (ta, tb) {
        (false, false) => {
            for (i, row) in out.chunks_exact_mut(m.max(1)).enumerate().take(n) {
                for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if av != 0.0 {
                        axpy(row, av, &b[p * m..(p + 1) * m]);
                    }
                }
            }
        }
        (true, false) => {
            // a is stored [k, n]: accumulate outer products row by row.
            for p in 0..k {
                let arow = &a[p * n..(p + 1) * n];
                let brow = &b[p * m..(p + 1) * m];
                for (i, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        axpy(&mut out[i * m..(i + 1) * m], av, brow);
                    }
                }
            }
        }
        (false, true) => {
            // b is stored [m, k]: every entry is a dot of two contiguous rows.
            for i in 0..n {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..m {
                    out[i * m + j] = dot(arow, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (true, true) => {
            let at = transpose_raw(a, a_shape.0, a_shape.1);
            for i in 0..n {
                let arow = &at[i * k..(i + 1) * k];
                for j in 0..m {
                    out[i * m + j] = dot(arow, &b[j * k..(j + 1) * k]);
                }
            }
        }
    }
    (out, n, m)
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (xs, ys) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += xs[l] * ys[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_shares_buffer() {
        let t = Tensor::new(&[2, 3], (0..6).map(f64::from).collect());
        let r = t.reshape(&[3, 2]);
        assert_eq!(r.data(), t.data());
        assert_eq!(r.shape(), &[3, 2]);
    }

    #[test]
    #[should_panic(expected = "needs 6 elements")]
    fn shape_mismatch_panics() {
        Tensor::new(&[2, 3], vec![1.0; 5]);
    }

    #[test]
    fn raw_matmul_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let (ab, _, _) = matmul_raw(&a, (2, 2), false, &b, (2, 2), false);
        assert_eq!(ab, vec![19.0, 22.0, 43.0, 50.0]);
        let (atb, _, _) = matmul_raw(&a, (2, 2), true, &b, (2, 2), false);
        assert_eq!(atb, vec![26.0, 30.0, 38.0, 44.0]);
        let (abt, _, _) = matmul_raw(&a, (2, 2), false, &b, (2, 2), true);
        assert_eq!(abt, vec![17.0, 23.0, 39.0, 53.0]);
    }
}
