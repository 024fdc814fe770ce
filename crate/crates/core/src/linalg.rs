//! Small dense helpers over row-major `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[r] = row_r(matrix) · v` for a row-major `rows × v.len()` matrix.
pub fn matvec(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    debug_assert_eq!(matrix.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(matrix.chunks_exact(cols)) {
        *o = dot(row, v);
    }
}

/// `out = L z` for a row-major lower-triangular `d × d` factor.
pub fn lower_matvec(lower: &[f64], z: &[f64], out: &mut [f64]) {
    let d = z.len();
    for i in 0..d {
        out[i] = dot(&lower[i * d..i * d + i + 1], &z[..=i]);
    }
}

pub fn trace(square: &[f64], d: usize) -> f64 {
    (0..d).map(|i| square[i * d + i]).sum()
}

/// Lower-triangular factor `L` with `L Lᵀ = A` for a symmetric positive
/// semi-definite `A`.
///
/// Pivots within `pivot_tol` of zero are accepted and their column is
/// zeroed, so singular covariances (e.g. the all-zero matrix) factor fine.
/// Returns `None` when a pivot is below `-pivot_tol`.
pub fn semidefinite_cholesky(a: &[f64], d: usize, pivot_tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let row_j = j * d;
        let pivot = a[row_j + j] - dot(&l[row_j..row_j + j], &l[row_j..row_j + j]);
        if !pivot.is_finite() || pivot < -pivot_tol {
            return None;
        }
        if pivot <= pivot_tol {
            continue;
        }
        let diag = pivot.sqrt();
        l[row_j + j] = diag;
        for i in j + 1..d {
            let row_i = i * d;
            let s = a[row_i + j] - dot(&l[row_i..row_i + j], &l[row_j..row_j + j]);
            l[row_i + j] = s / diag;
        }
    }
    Some(l)
}

/// Pivot tolerance scaled to the largest diagonal entry.
pub fn pivot_tolerance(a: &[f64], d: usize) -> f64 {
    let max_diag = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max);
    1e-12 * max_diag
}

/// True iff `A + shift·I` admits a semi-definite factorization, i.e. the
/// smallest eigenvalue of `A` is at least `-shift` (up to rounding).
pub fn is_psd_with_shift(a: &[f64], d: usize, shift: f64) -> bool {
    let mut shifted = a.to_vec();
    for i in 0..d {
        shifted[i * d + i] += shift;
    }
    let tol = pivot_tolerance(&shifted, d);
    semidefinite_cholesky(&shifted, d, tol).is_some()
}

/// Max-shifted `log Σ exp(x_i)`.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}
