//! Differentiable primitives. Matrix ops take rank-2 tensors; the only broadcasting is a
//! single row applied across all rows (`add_row`, `mul_row`).

use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let xs = x.clone();
    Tensor::from_op(x.shape().to_vec(), data, &[x], move |g, y| {
        let dx = g
            .iter()
            .zip(xs.data())
            .zip(y)
            .map(|((g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(dx)]
    })
}

/// Naive `a (m x k) * b (k x n)` into a fresh buffer.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += aip * brow[j];
            }
        }
    }
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T (k x m)^T * b (k x n)` -> `m x n`, with `a` stored `k x m`.
fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += api * brow[j];
            }
        }
    }
    out
}

fn transpose_buf(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Window copied from a source tensor into an assembled matrix by [`Tensor::assemble`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    /// Index into the source list.
    pub source: usize,
    /// Flat offset of the block's first entry inside the source data.
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Destination top-left corner.
    pub at: (usize, usize),
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(self.shape().to_vec(), data, &[self, other], move |g, _| {
            let ga = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * k).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], move |g, _| {
            vec![Some(g.iter().map(|v| v * k).collect())]
        })
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + k).collect();
        Tensor::from_op(self.shape().to_vec(), data, &[self], |g, _| vec![Some(g.to_vec())])
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Adds a `1 x c` (or length-`c`) row to every row of an `r x c` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("add_row")?;
        if row.numel() != c {
            return Err(Error::shape("add_row", self.shape(), row.shape()));
        }
        let b = row.data();
        let data = (0..r * c).map(|i| self.data()[i] + b[i % c]).collect();
        Ok(Tensor::from_op(vec![r, c], data, &[self, row], move |g, _| {
            let mut gb = vec![0.0; c];
            for i in 0..r * c {
                gb[i % c] += g[i];
            }
            vec![Some(g.to_vec()), Some(gb)]
        }))
    }

    /// Multiplies every row of an `r x c` matrix elementwise by a length-`c` row.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("mul_row")?;
        if row.numel() != c {
            return Err(Error::shape("mul_row", self.shape(), row.shape()));
        }
        let b = row.data();
        let data = (0..r * c).map(|i| self.data()[i] * b[i % c]).collect();
        let (xs, bs) = (self.clone(), row.clone());
        Ok(Tensor::from_op(vec![r, c], data, &[self, row], move |g, _| {
            let b = bs.data();
            let x = xs.data();
            let gx = (0..r * c).map(|i| g[i] * b[i % c]).collect();
            let mut gb = vec![0.0; c];
            for i in 0..r * c {
                gb[i % c] += g[i] * x[i];
            }
            vec![Some(gx), Some(gb)]
        }))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let data = gemm(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(vec![m, n], data, &[self, other], move |g, _| {
            let ga = a.requires_grad().then(|| gemm_nt(g, b.data(), m, n, k));
            let gb = b.requires_grad().then(|| gemm_tn(a.data(), g, m, k, n));
            vec![ga, gb]
        }))
    }

    /// `self * other^T` with `self: m x k`, `other: n x k`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul_nt")?;
        let (n, k2) = other.matrix_dims("matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        let data = gemm_nt(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(vec![m, n], data, &[self, other], move |g, _| {
            let ga = a.requires_grad().then(|| gemm(g, b.data(), m, n, k));
            let gb = b.requires_grad().then(|| gemm_tn(g, a.data(), m, n, k));
            vec![ga, gb]
        }))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("transpose")?;
        let data = transpose_buf(self.data(), r, c);
        Ok(Tensor::from_op(vec![c, r], data, &[self], move |g, _| {
            vec![Some(transpose_buf(g, c, r))]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.data().to_vec(), &[self], |g, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", &[], &[]))?;
        let (_, c) = first.matrix_dims("concat_rows")?;
        let mut rows = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, pc) = p.matrix_dims("concat_rows")?;
            if pc != c {
                return Err(Error::shape("concat_rows", first.shape(), p.shape()));
            }
            rows.push(r);
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
        let total: usize = rows.iter().sum();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::from_op(vec![total, c], data, &refs, move |g, _| {
            let mut off = 0;
            rows.iter()
                .map(|r| {
                    let s = g[off..off + r * c].to_vec();
                    off += r * c;
                    Some(s)
                })
                .collect()
        }))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols", &[], &[]))?;
        let (r, _) = first.matrix_dims("concat_cols")?;
        let mut cols = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, c) = p.matrix_dims("concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", first.shape(), p.shape()));
            }
            cols.push(c);
        }
        let total: usize = cols.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &c) in parts.iter().zip(&cols) {
                data.extend_from_slice(&p.data()[i * c..(i + 1) * c]);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::from_op(vec![r, total], data, &refs, move |g, _| {
            let mut out: Vec<Vec<f64>> = cols.iter().map(|c| Vec::with_capacity(r * c)).collect();
            for i in 0..r {
                let mut off = i * total;
                for (o, &c) in out.iter_mut().zip(&cols) {
                    o.extend_from_slice(&g[off..off + c]);
                    off += c;
                }
            }
            out.into_iter().map(Some).collect()
        }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("slice_rows")?;
        if start + len > r {
            return Err(Error::shape("slice_rows", self.shape(), &[start + len, c]));
        }
        let data = self.data()[start * c..(start + len) * c].to_vec();
        Ok(Tensor::from_op(vec![len, c], data, &[self], move |g, _| {
            let mut gx = vec![0.0; r * c];
            gx[start * c..(start + len) * c].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", self.shape(), &[r, start + len]));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.data()[i * c + start..i * c + start + len]);
        }
        Ok(Tensor::from_op(vec![r, len], data, &[self], move |g, _| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            vec![Some(gx)]
        }))
    }

    /// Builds a zero `rows x cols` matrix and copies the listed windows into it.
    /// Overlapping destinations add.
    pub fn assemble(rows: usize, cols: usize, sources: &[Tensor], blocks: &[BlockRef]) -> Result<Tensor> {
        let mut data = vec![0.0; rows * cols];
        for b in blocks {
            let src = sources
                .get(b.source)
                .ok_or_else(|| Error::shape("assemble", &[b.source], &[sources.len()]))?;
            if b.offset + b.rows * b.cols > src.numel() || b.at.0 + b.rows > rows || b.at.1 + b.cols > cols {
                return Err(Error::shape("assemble", src.shape(), &[b.rows, b.cols]));
            }
            for i in 0..b.rows {
                for j in 0..b.cols {
                    data[(b.at.0 + i) * cols + b.at.1 + j] += src.data()[b.offset + i * b.cols + j];
                }
            }
        }
        let sizes: Vec<usize> = sources.iter().map(Tensor::numel).collect();
        let blocks = blocks.to_vec();
        let refs: Vec<&Tensor> = sources.iter().collect();
        Ok(Tensor::from_op(vec![rows, cols], data, &refs, move |g, _| {
            let mut out: Vec<Option<Vec<f64>>> = vec![None; sizes.len()];
            for b in &blocks {
                let gs = out[b.source].get_or_insert_with(|| vec![0.0; sizes[b.source]]);
                for i in 0..b.rows {
                    for j in 0..b.cols {
                        gs[b.offset + i * b.cols + j] += g[(b.at.0 + i) * cols + b.at.1 + j];
                    }
                }
            }
            out
        }))
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn square(&self) -> Tensor {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn gelu(&self) -> Tensor {
        unary(self, gelu, |x, _| gelu_grad(x))
    }

    /// Elementwise smooth-L1 with beta = 1.
    pub fn smooth_l1(&self) -> Tensor {
        unary(
            self,
            |x| if x.abs() < 1.0 { 0.5 * x * x } else { x.abs() - 0.5 },
            |x, _| if x.abs() < 1.0 { x } else { x.signum() },
        )
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Column means of an `r x c` matrix as a `1 x c` row.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("mean_rows")?;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += self.data()[i * c + j];
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        Ok(Tensor::from_op(vec![1, c], data, &[self], move |g, _| {
            let gx = (0..r * c).map(|i| g[i % c] / r as f64).collect();
            vec![Some(gx)]
        }))
    }

    /// Row-wise softmax. Columns with `mask[j] == false` get probability zero; rows with no
    /// valid column are all zero.
    pub fn softmax(&self, mask: Option<&[bool]>) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("softmax")?;
        if let Some(m) = mask {
            if m.len() != c {
                return Err(Error::shape("softmax", self.shape(), &[m.len()]));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data()[i * c..(i + 1) * c];
            let max = (0..c).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    z += e;
                }
            }
            data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= z);
        }
        Ok(Tensor::from_op(vec![r, c], data, &[self], move |g, y| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let yr = &y[i * c..(i + 1) * c];
                let gr = &g[i * c..(i + 1) * c];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    gx[i * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn log_softmax(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("log_softmax")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        Ok(Tensor::from_op(vec![r, c], data, &[self], move |g, y| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                for j in 0..c {
                    gx[i * c + j] = g[i * c + j] - y[i * c + j].exp() * gs;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Normalizes every row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("layer_norm")?;
        let mut data = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &self.data()[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                data[i * c + j] = (row[j] - mu) * s;
            }
        }
        Ok(Tensor::from_op(vec![r, c], data, &[self], move |g, y| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let gr = &g[i * c..(i + 1) * c];
                let yr = &y[i * c..(i + 1) * c];
                let mg = gr.iter().sum::<f64>() / c as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    gx[i * c + j] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d_h)) V`, split over `heads`
/// column groups. `key_mask` hides key rows.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, key_mask: Option<&[bool]>) -> Result<Tensor> {
    let (_, d) = q.matrix_dims("attention")?;
    let (tk, dk) = k.matrix_dims("attention")?;
    let (tv, dv) = v.matrix_dims("attention")?;
    if d != dk {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if tk != tv {
        return Err(Error::shape("attention", k.shape(), v.shape()));
    }
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::shape("attention", q.shape(), &[heads]));
    }
    let (dh, dvh) = (d / heads, dv / heads);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (q.slice_cols(h * dh, dh)?, k.slice_cols(h * dh, dh)?, v.slice_cols(h * dvh, dvh)?)
        };
        let w = qh.matmul_nt(&kh)?.scale(scale).softmax(key_mask)?;
        outs.push(w.matmul(&vh)?);
    }
    if heads == 1 {
        Ok(outs.pop().unwrap())
    } else {
        Tensor::concat_cols(&outs)
    }
}
