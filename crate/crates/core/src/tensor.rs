//! Dense row-major `f32` arrays and the handful of kernels the detection
//! heads are built from.
//!
//! Every kernel is a pure function. There is no broadcasting: operands must
//! agree exactly in shape or the call fails with [`Error::Dimension`].
//! Reductions accumulate in `f64` and store the result as `f32`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Parameter(format!(
                "tensor shape must be non-empty with positive dimensions, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Parameter(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform samples in `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(shape: &[usize], scale: f32, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.gen_range(-scale..scale);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(op, &self.shape, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols())
    }

    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols() + c]
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f32) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Self> {
        let (r, c) = self.dims2("add_row")?;
        if bias.numel() != c {
            return Err(Error::dim("add_row", &self.shape, &bias.shape));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Self::new(vec![r, c], out)
    }

    /// Stacks matrices vertically; all parts must share the column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_rows needs at least one tensor".into()))?;
        let (_, c) = first.dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.dims2("concat_rows")?;
            if pc != c {
                return Err(Error::dim("concat_rows", &first.shape, &p.shape));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Self::new(vec![rows, c], data)
    }

    /// Splits a matrix into consecutive row blocks of the given sizes.
    pub fn split_rows(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let (r, c) = self.dims2("split_rows")?;
        if sizes.iter().sum::<usize>() != r {
            return Err(Error::dim("split_rows", &self.shape, sizes));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let t = Self::new(vec![n, c], self.data[start * c..(start + n) * c].to_vec());
                start += n;
                t
            })
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2("select_rows")?;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Parameter(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(vec![indices.len(), c], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::dim("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Standard matrix product with `f64` accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2("matmul")?;
    let (k2, c) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        let arow = a.row(i);
        for j in 0..c {
            let mut acc = 0.0f64;
            for (p, &av) in arow.iter().enumerate() {
                acc += av as f64 * b.data[p * c + j] as f64;
            }
            out[i * c + j] = acc as f32;
        }
    }
    Tensor::new(vec![r, c], out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_t(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2("matmul_t")?;
    let (c, k2) = b.dims2("matmul_t")?;
    if k != k2 {
        return Err(Error::dim("matmul_t", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(r * c);
    for arow in a.row_iter() {
        for brow in b.row_iter() {
            out.push(dot(arow, brow) as f32);
        }
    }
    Tensor::new(vec![r, c], out)
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Row-wise softmax. The row maximum is subtracted first so large logits
/// cannot overflow.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2("softmax_rows")?;
    let mut out = Vec::with_capacity(r * c);
    for row in m.row_iter() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Tensor::new(vec![r, c], out)
}

/// `softmax(q·kᵀ / √d) · v`, single head.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2("scaled_dot_attention")?;
    let (m, dk) = k.dims2("scaled_dot_attention")?;
    let (mv, _) = v.dims2("scaled_dot_attention")?;
    if d != dk {
        return Err(Error::dim("scaled_dot_attention", q.shape(), k.shape()));
    }
    if m != mv {
        return Err(Error::dim("scaled_dot_attention", k.shape(), v.shape()));
    }
    let logits = matmul(q, &k.transpose()?)?.scale(1.0 / (d as f32).sqrt());
    matmul(&softmax_rows(&logits)?, v)
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Normalizes each row to zero mean and unit (population) variance.
pub fn layer_norm(x: &Tensor, eps: f32) -> Result<Tensor> {
    let (r, c) = x.dims2("layer_norm")?;
    let mut out = Vec::with_capacity(r * c);
    for row in x.row_iter() {
        let n = c as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps as f64).sqrt();
        out.extend(row.iter().map(|&v| ((v as f64 - mean) * inv) as f32));
    }
    Tensor::new(vec![r, c], out)
}

/// [`layer_norm`] followed by a per-column gain and bias.
pub fn layer_norm_affine(x: &Tensor, eps: f32, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, c) = x.dims2("layer_norm_affine")?;
    if gain.numel() != c || bias.numel() != c {
        return Err(Error::dim("layer_norm_affine", x.shape(), gain.shape()));
    }
    let mut out = layer_norm(x, eps)?;
    for row in out.data.chunks_exact_mut(c) {
        for ((o, g), b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
            *o = *o * g + b;
        }
    }
    Ok(out)
}

/// Element-wise maximum plus a mask that is `1` where `b` won and `0` where
/// `a` won. Ties go to `a`.
pub fn elementwise_max(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    if a.shape != b.shape {
        return Err(Error::dim("elementwise_max", &a.shape, &b.shape));
    }
    let mut values = Vec::with_capacity(a.numel());
    let mut mask = Vec::with_capacity(a.numel());
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if y > x {
            values.push(y);
            mask.push(1.0);
        } else {
            values.push(x);
            mask.push(0.0);
        }
    }
    Ok((
        Tensor::new(a.shape.clone(), values)?,
        Tensor::new(a.shape.clone(), mask)?,
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(v: f32) -> f32 {
    (1.0 / (1.0 + (-(v as f64)).exp())) as f32
}

/// `x · w + b` for a weight of shape `in × out` and a bias of length `out`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = matmul(x, w)?;
    match b {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}
