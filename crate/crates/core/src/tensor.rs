//! Dense row-major `f64` tensors, the handful of linear-algebra kernels the
//! pipeline needs (each with a closed-form backward), a central-difference
//! gradient oracle, and the `BROT` binary file format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{BroError, Result};

const MAGIC: &[u8; 4] = b"BROT";
const FORMAT_VERSION: u8 = 1;

/// Dense n-dimensional array of 64-bit floats in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(BroError::Shape {
                shape,
                reason: "extents must be a non-empty list of positive integers".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(BroError::Shape {
                shape,
                reason: format!("expected {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; for internal construction with known-good extents.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid shape {shape:?}"
        );
        Self::from_parts(shape.to_vec(), vec![value; shape.iter().product()])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(BroError::Shape {
                shape: vec![r, c],
                reason: "ragged rows".into(),
            });
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(BroError::Shape {
                shape: self.shape.clone(),
                reason: "expected a matrix".into(),
            }),
        }
    }

    /// `(D, H, W)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[d, h, w] => Ok((d, h, w)),
            _ => Err(BroError::Shape {
                shape: self.shape.clone(),
                reason: "expected a D×H×W feature map".into(),
            }),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(BroError::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// In-place `self += k * other`.
    pub fn add_scaled(&mut self, other: &Self, k: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(BroError::Dimension {
                op: "add_scaled",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Flat inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(BroError::Dimension {
                op: "dot",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Matrix transpose.
pub fn transpose(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = m.data[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

/// Standard matrix product `a × b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2()?;
    let (k2, c) = b.dims2()?;
    if k != k2 {
        return Err(BroError::Dimension {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * c..(p + 1) * c];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// `a × bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, k) = a.dims2()?;
    let (c, k2) = b.dims2()?;
    if k != k2 {
        return Err(BroError::Dimension {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..c {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * c + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// `aᵀ × b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, r) = a.dims2()?;
    let (k2, c) = b.dims2()?;
    if k != k2 {
        return Err(BroError::Dimension {
            op: "matmul_tn",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; r * c];
    for p in 0..k {
        let brow = &b.data[p * c..(p + 1) * c];
        for i in 0..r {
            let av = a.data[p * r + i];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Gradients of `a × b` given the upstream gradient of the product.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((matmul_nt(grad_out, b)?, matmul_tn(a, grad_out)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    let mut out = m.data.clone();
    for row in out.chunks_mut(c).take(r) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(Tensor::from_parts(m.shape.clone(), out))
}

/// Backward of [`softmax_rows`] expressed through its output `y`.
pub fn softmax_rows_backward(y: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
    let (_, c) = y.dims2()?;
    if y.shape != grad_y.shape {
        return Err(BroError::Dimension {
            op: "softmax_rows_backward",
            left: y.shape.clone(),
            right: grad_y.shape.clone(),
        });
    }
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out
        .chunks_mut(c)
        .zip(y.data.chunks(c))
        .zip(grad_y.data.chunks(c))
    {
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - inner);
        }
    }
    Ok(Tensor::from_parts(y.shape.clone(), out))
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &Tensor) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient of `‖m‖_F` scaled by `grad_norm`; zero at the origin.
pub fn frobenius_norm_backward(m: &Tensor, grad_norm: f64) -> Tensor {
    let n = frobenius_norm(m);
    if n == 0.0 {
        return Tensor::zeros(&m.shape);
    }
    m.scale(grad_norm / n)
}

/// D×H×W feature map to the (H·W)×D matrix with one row per pixel.
pub fn to_pixel_rows(t: &Tensor) -> Result<Tensor> {
    let (d, h, w) = t.dims3()?;
    transpose(&Tensor::from_parts(vec![d, h * w], t.data.clone()))
}

/// D×H×W feature map to the D×(H·W) matrix with one row per channel.
pub fn to_channel_rows(t: &Tensor) -> Result<Tensor> {
    let (d, h, w) = t.dims3()?;
    Ok(Tensor::from_parts(vec![d, h * w], t.data.clone()))
}

/// Inverse of [`to_pixel_rows`].
pub fn from_pixel_rows(m: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (p, d) = m.dims2()?;
    if p != h * w {
        return Err(BroError::Shape {
            shape: m.shape.clone(),
            reason: format!("{p} pixel rows cannot fill a {h}×{w} map"),
        });
    }
    let ch = transpose(m)?;
    Ok(Tensor::from_parts(vec![d, h, w], ch.data))
}

/// Inverse of [`to_channel_rows`].
pub fn from_channel_rows(m: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (d, p) = m.dims2()?;
    if p != h * w {
        return Err(BroError::Shape {
            shape: m.shape.clone(),
            reason: format!("channel rows of length {p} cannot fill a {h}×{w} map"),
        });
    }
    Ok(Tensor::from_parts(vec![d, h, w], m.data.clone()))
}

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every coordinate.
pub fn fd_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(BroError::config("h", "finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe)?;
        probe.data[i] = orig - h;
        let minus = f(&probe)?;
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(BroError::NonFinite(format!(
                "objective evaluated to {plus} / {minus} around coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(Tensor::from_parts(x.shape.clone(), grad))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor so two zero vectors compare equal.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape, b.shape, "relative_error shape mismatch");
    let diff: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = frobenius_norm(a).max(frobenius_norm(b)).max(1e-12);
    diff / scale
}

pub fn write_tensor<W: Write>(t: &Tensor, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for &e in &t.shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(9 + 8 * (t.shape.len() + t.data.len()));
    write_tensor(t, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads one tensor; `origin` only labels error messages.
pub fn read_tensor<R: Read>(r: &mut R, origin: &Path) -> Result<Tensor> {
    let bad = |reason: &str| BroError::format(origin, reason);
    let mut head = [0u8; 5];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic, expected BROT"));
    }
    if head[4] != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", head[4])));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated rank"))?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank == 0 || rank > 16 {
        return Err(bad(&format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated extents"))?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n > 0 && n < (1 << 32))
        .ok_or_else(|| bad(&format!("implausible extents {shape:?}")))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u64buf).map_err(|_| bad("truncated data"))?;
        data.push(f64::from_le_bytes(u64buf));
    }
    Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_tensor(t)).map_err(|e| BroError::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| BroError::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor, path)?;
    if !cursor.is_empty() {
        return Err(BroError::format(path, "trailing bytes after tensor"));
    }
    Ok(t)
}
