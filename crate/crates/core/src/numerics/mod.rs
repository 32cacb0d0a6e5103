//! Dense matrix kernels, seeded randomness, PCA, masked softmax and a
//! finite-difference gradient checker.

mod matrix;
#[doc(hidden)]
pub mod oracle;
mod pca;
mod rng;

pub use matrix::{dot, norm, squared_distance, Matrix};
pub use pca::{gaussian_random_projection, pca_fit_transform, RANDOM_PROJECTION_DIM};
pub use rng::{splitmix64, stable_hash, Rng};

use crate::error::{Error, Result};

/// Softmax of one row at `temperature`, writing 0 at masked positions.
///
/// `masked[i]` marks position `i` as excluded. Fails if every position is
/// masked.
pub fn masked_softmax_row(logits: &[f64], masked: &[bool], temperature: f64, out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (l, &m) in logits.iter().zip(masked) {
        if !m && *l > max {
            max = *l;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("softmax row is fully masked"));
    }
    let mut sum = 0.0;
    for ((o, l), &m) in out.iter_mut().zip(logits).zip(masked) {
        if m {
            *o = 0.0;
        } else {
            let e = ((l - max) / temperature).exp();
            *o = e;
            sum += e;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Row-wise softmax of `logits / temperature` with per-row masked columns.
///
/// `masked` holds one index set per row (an empty slice, or fewer sets than
/// rows, means no masking for the remaining rows).
pub fn masked_softmax(logits: &Matrix, masked: &[Vec<usize>], temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let c = logits.cols();
    let mut out = Matrix::zeros(logits.rows(), c);
    let mut mask = vec![false; c];
    for r in 0..logits.rows() {
        mask.iter_mut().for_each(|m| *m = false);
        if let Some(set) = masked.get(r) {
            for &i in set {
                if i >= c {
                    return Err(Error::invalid(format!("mask index {i} out of range for {c} columns")));
                }
                mask[i] = true;
            }
        }
        masked_softmax_row(logits.row(r), &mask, temperature, out.row_mut(r))?;
    }
    Ok(out)
}

/// Correctly rounded sum of finite values (Shewchuk's exact partials, as in
/// Python's `math.fsum`). The result does not depend on term order.
pub fn exact_sum(values: &[f64]) -> f64 {
    exact_sum_with(values, &mut Vec::new())
}

/// [`exact_sum`] with a caller-owned scratch buffer for the partials.
pub(crate) fn exact_sum_with(values: &[f64], partials: &mut Vec<f64>) -> f64 {
    partials.clear();
    for &v in values {
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round the partials (largest last) to a single value.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}

/// Central-difference gradient of `loss` at `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be > 0"));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe);
        probe[i] = orig - step;
        let down = loss(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss probing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}
