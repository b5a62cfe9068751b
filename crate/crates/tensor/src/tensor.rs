use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return dim_err(
                "tensor",
                format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            shape.to_vec(),
            values.iter().map(|&x| F::from_f64_lossy(x)).collect(),
        )
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("from_rows", "ragged rows");
        }
        let data = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| F::from_f64_lossy(x)))
            .collect();
        Self::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return dim_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    pub fn as_matrix_dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn row(&self, i: usize) -> &[F] {
        let (_, c) = self.as_matrix_dims();
        &self.data[i * c..(i + 1) * c]
    }

    /// Index of the largest element per row (ties: lowest index).
    pub fn argmax_rows(&self) -> Vec<usize> {
        let (r, c) = self.as_matrix_dims();
        (0..r).map(|i| argmax(&self.data[i * c..(i + 1) * c])).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from_f64_lossy(x.as_f64())).collect(),
        }
    }
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

// Dense kernels. Single-threaded, so results are reproducible run to run.

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    F::gemm_acc(m, k, n, a, k as isize, 1, b, n as isize, 1, c);
}

/// c[m×k] += g[m×n] · b[k×n]ᵀ
pub(crate) fn gemm_nt<F: Scalar>(g: &[F], b: &[F], c: &mut [F], m: usize, n: usize, k: usize) {
    F::gemm_acc(m, n, k, g, n as isize, 1, b, 1, n as isize, c);
}

/// c[k×n] += a[m×k]ᵀ · g[m×n]
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], g: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    F::gemm_acc(k, m, n, a, 1, k as isize, g, n as isize, 1, c);
}
