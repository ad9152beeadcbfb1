//! Pure forward kernels. The tape in [`super::tape`] records these and adds
//! the matching backward rules.

use super::{NumericError, Tensor};

/// Which slices of a matrix a softmax normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Each row sums to one.
    Rows,
    /// Each column sums to one.
    Cols,
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

pub fn softmax_axis(x: &Tensor, axis: Axis) -> Result<Tensor, NumericError> {
    let (rows, cols) = x.dims2()?;
    let mut out = x.clone();
    match axis {
        Axis::Rows => {
            for chunk in out.data_mut().chunks_mut(cols.max(1)) {
                softmax_in_place(chunk);
            }
        }
        Axis::Cols => {
            let mut column = vec![0.0; rows];
            for c in 0..cols {
                for (r, slot) in column.iter_mut().enumerate() {
                    *slot = x.get2(r, c);
                }
                softmax_in_place(&mut column);
                for (r, v) in column.iter().enumerate() {
                    out.data_mut()[r * cols + c] = *v;
                }
            }
        }
    }
    Ok(out)
}

/// Squared Euclidean distance `||x - y||²`.
pub fn sq_euclidean(x: &[f64], y: &[f64]) -> Result<f64, NumericError> {
    if x.len() != y.len() {
        return Err(NumericError::LengthMismatch(x.len(), y.len()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `log Σ exp(x)`. Entries may be `-inf` (masked states).
pub fn logsumexp(x: &[f64]) -> Result<f64, NumericError> {
    if x.is_empty() {
        return Err(NumericError::Empty("logsumexp"));
    }
    Ok(logsumexp_unchecked(x))
}

pub(crate) fn logsumexp_unchecked(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, NumericError> {
    let (m, n) = a.dims2()?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Concatenates rank-2 tensors with equal row counts along the feature axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
    let first = parts.first().ok_or(NumericError::Empty("concat_cols"))?;
    let (rows, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != rows {
            return Err(NumericError::ShapeMismatch {
                op: "concat_cols",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![rows, total], out)
}

/// Stacks rank-2 tensors with equal column counts.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumericError> {
    let first = parts.first().ok_or(NumericError::Empty("concat_rows"))?;
    let (_, cols) = first.dims2()?;
    let mut rows = 0;
    let mut out = Vec::new();
    for p in parts {
        let (r, c) = p.dims2()?;
        if c != cols {
            return Err(NumericError::ShapeMismatch {
                op: "concat_rows",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        rows += r;
        out.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, cols], out)
}

pub(crate) fn zip_same(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, NumericError> {
    if a.shape() != b.shape() {
        return Err(NumericError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    zip_same("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    zip_same("mul", a, b, |x, y| x * y)
}

pub fn abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    zip_same("abs_diff", a, b, |x, y| (x - y).abs())
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

/// Index of the first maximal row for each column (ties go to the lowest row).
pub(crate) fn argmax_rows_per_col(x: &Tensor) -> Result<Vec<usize>, NumericError> {
    let (rows, cols) = x.dims2()?;
    if rows == 0 {
        return Err(NumericError::Empty("max_pool"));
    }
    Ok((0..cols)
        .map(|c| {
            let mut best = 0;
            for r in 1..rows {
                if x.get2(r, c) > x.get2(best, c) {
                    best = r;
                }
            }
            best
        })
        .collect())
}

/// Column-wise max over rows, as a `1 × cols` matrix.
pub fn max_pool(x: &Tensor) -> Result<Tensor, NumericError> {
    let (_, cols) = x.dims2()?;
    let idx = argmax_rows_per_col(x)?;
    let data = idx.iter().enumerate().map(|(c, &r)| x.get2(r, c)).collect();
    Tensor::new(vec![1, cols], data)
}

/// Column-wise mean over rows, as a `1 × cols` matrix.
pub fn mean_pool(x: &Tensor) -> Result<Tensor, NumericError> {
    let (rows, cols) = x.dims2()?;
    if rows == 0 {
        return Err(NumericError::Empty("mean_pool"));
    }
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= rows as f64;
    }
    Tensor::new(vec![1, cols], out)
}

/// `out[t][l] = -||a[t] - b[l]||²` for every row pair.
pub fn neg_sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericError> {
    let (ta, da) = a.dims2()?;
    let (tb, db) = b.dims2()?;
    if da != db {
        return Err(NumericError::ShapeMismatch {
            op: "neg_sq_dist",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(ta * tb);
    for t in 0..ta {
        for l in 0..tb {
            out.push(-sq_euclidean(a.row(t), b.row(l))?);
        }
    }
    Tensor::new(vec![ta, tb], out)
}
