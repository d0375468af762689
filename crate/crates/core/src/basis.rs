//! Cubic B-spline design matrices, first-order random-walk penalties and the
//! zero-sum centering correction applied to spline coefficient draws.
//!
//! Covariates are min–max rescaled onto `[0, 1]` before evaluation. Interior
//! knots are equidistant on that interval and the boundary knots are repeated
//! (clamped) so the basis interpolates at both ends.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Polynomial degree of the spline basis.
pub const SPLINE_DEGREE: usize = 3;
/// Nonzero basis functions per evaluation point.
pub const SUPPORT: usize = SPLINE_DEGREE + 1;
/// Default number of basis functions per smooth covariate.
pub const DEFAULT_NUM_BASIS: usize = 23;

/// The nonzero window of one design-matrix row: columns `start..start + 4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    pub start: usize,
    pub values: [f64; SUPPORT],
}

impl BasisRow {
    pub fn dot(&self, coefs: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&coefs[self.start..self.start + SUPPORT])
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Clamped cubic B-spline basis evaluated at the observed values of one covariate.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    /// Column of the smooth covariate this basis expands.
    pub covariate_index: usize,
    knots: Vec<f64>,
    num_basis: usize,
    range: (f64, f64),
    rows: Vec<BasisRow>,
}

/// Clamped, equidistant knot vector on `[0, 1]` for `m` cubic basis functions.
fn clamped_knots(m: usize) -> Vec<f64> {
    let intervals = m - SPLINE_DEGREE;
    let mut knots = Vec::with_capacity(m + SUPPORT);
    knots.extend(std::iter::repeat(0.0).take(SPLINE_DEGREE));
    knots.extend((0..=intervals).map(|k| k as f64 / intervals as f64));
    knots.extend(std::iter::repeat(1.0).take(SPLINE_DEGREE));
    knots
}

fn rescale(x: f64, range: (f64, f64)) -> f64 {
    (x - range.0) / (range.1 - range.0)
}

/// Evaluates the four nonzero basis functions at `u ∈ [0, 1]`.
fn eval_unit(knots: &[f64], m: usize, u: f64) -> BasisRow {
    let intervals = m - SPLINE_DEGREE;
    let mut k = ((u * intervals as f64).floor() as usize).min(intervals - 1);
    // knots[k + 3] <= u < knots[k + 4], except at the right end
    while k > 0 && u < knots[k + SPLINE_DEGREE] {
        k -= 1;
    }
    while k + 1 < intervals && u >= knots[k + SPLINE_DEGREE + 1] {
        k += 1;
    }
    let span = k + SPLINE_DEGREE;

    let mut values = [0.0; SUPPORT];
    let mut left = [0.0; SUPPORT];
    let mut right = [0.0; SUPPORT];
    values[0] = 1.0;
    for j in 1..=SPLINE_DEGREE {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    BasisRow { start: k, values }
}

/// Builds the cubic B-spline design for covariate values `x` with `m` basis
/// functions whose knots span `range` (original units).
pub fn build_bspline_basis(x: &[f64], m: usize, range: (f64, f64)) -> Result<SplineBasis> {
    if m < SUPPORT {
        return Err(Error::InvalidBasis(format!(
            "a cubic basis needs at least {SUPPORT} functions, got {m}"
        )));
    }
    if !(range.0.is_finite() && range.1.is_finite()) || range.1 <= range.0 {
        return Err(Error::InvalidBasis(format!(
            "basis range must be finite and non-degenerate, got [{}, {}]",
            range.0, range.1
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "non-finite covariate value at row {i}"
        )));
    }
    if let Some(i) = x.iter().position(|&v| v < range.0 || v > range.1) {
        return Err(Error::Input(format!(
            "covariate value {} at row {i} lies outside the basis range [{}, {}]",
            x[i], range.0, range.1
        )));
    }
    let knots = clamped_knots(m);
    let rows = x
        .iter()
        .map(|&v| eval_unit(&knots, m, rescale(v, range).clamp(0.0, 1.0)))
        .collect();
    Ok(SplineBasis {
        covariate_index: 0,
        knots,
        num_basis: m,
        range,
        rows,
    })
}

impl SplineBasis {
    pub fn for_covariate(mut self, index: usize) -> Self {
        self.covariate_index = index;
        self
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Knot vector on the rescaled unit interval.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Original-scale covariate range the knots span.
    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn rows(&self) -> &[BasisRow] {
        &self.rows
    }

    /// Evaluates the basis at an arbitrary original-scale point. Points
    /// outside the training range are clamped to the nearest boundary; the
    /// returned flag reports whether that happened.
    pub fn evaluate(&self, x: f64) -> (BasisRow, bool) {
        let u = rescale(x, self.range);
        let clamped = !(0.0..=1.0).contains(&u);
        (
            eval_unit(&self.knots, self.num_basis, u.clamp(0.0, 1.0)),
            clamped,
        )
    }

    /// Dense `n × m` design matrix.
    pub fn design(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), self.num_basis);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, v) in row.values.iter().enumerate() {
                out[(i, row.start + k)] = *v;
            }
        }
        out
    }

    /// `B β`.
    pub fn apply(&self, coefs: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(coefs)).collect()
    }

    /// `B' 1`.
    pub fn column_sums(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_basis);
        for row in &self.rows {
            for (k, v) in row.values.iter().enumerate() {
                out[row.start + k] += v;
            }
        }
        out
    }

    /// `B' diag(w) B`, exploiting the four-wide band of each row.
    pub fn weighted_gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_basis, self.num_basis);
        for (row, &w) in self.rows.iter().zip(weights) {
            for a in 0..SUPPORT {
                let wa = w * row.values[a];
                for b in a..SUPPORT {
                    out[(row.start + a, row.start + b)] += wa * row.values[b];
                }
            }
        }
        for a in 0..self.num_basis {
            for b in 0..a {
                out[(a, b)] = out[(b, a)];
            }
        }
        out
    }

    /// `B' diag(w) r`.
    pub fn weighted_cross(&self, weights: &[f64], response: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_basis);
        for ((row, &w), &r) in self.rows.iter().zip(weights).zip(response) {
            let wr = w * r;
            for (k, v) in row.values.iter().enumerate() {
                out[row.start + k] += wr * v;
            }
        }
        out
    }
}

/// First-order random-walk penalty `K = Δ₁'Δ₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub matrix: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Rank of a first-order random-walk penalty.
    pub fn rank(&self) -> usize {
        self.dim() - 1
    }

    /// `β'Kβ`, evaluated as the sum of squared first differences.
    pub fn quadratic_form(&self, beta: &[f64]) -> f64 {
        beta.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
    }
}

/// `(m − 1) × m` first-difference matrix.
pub fn difference_matrix(m: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.saturating_sub(1), m);
    for r in 0..m.saturating_sub(1) {
        d[(r, r)] = -1.0;
        d[(r, r + 1)] = 1.0;
    }
    d
}

pub fn build_penalty(m: usize) -> Result<PenaltyMatrix> {
    if m < 2 {
        return Err(Error::InvalidDimension(format!(
            "a random-walk penalty needs at least 2 coefficients, got {m}"
        )));
    }
    let d = difference_matrix(m);
    Ok(PenaltyMatrix {
        order: 1,
        matrix: d.transpose() * d,
    })
}

/// Conditions a Gaussian draw `beta ~ N(μ, P⁻¹)` on `1'Bβ = 0`, given the
/// Cholesky factor of `P` and the column sums `B'1`.
pub(crate) fn center_with_factor(
    beta: &DVector<f64>,
    column_sums: &DVector<f64>,
    factor: &Cholesky<f64, Dyn>,
) -> Result<DVector<f64>> {
    let direction = factor.solve(column_sums);
    let scale = column_sums.dot(&direction);
    if !(scale.is_finite() && scale.abs() > f64::MIN_POSITIVE) {
        return Err(Error::DegenerateConstraint(format!(
            "1'B P⁻¹ B'1 = {scale}"
        )));
    }
    let violation = column_sums.dot(beta);
    Ok(beta - direction * (violation / scale))
}

/// Removes the component of `beta` that violates the zero-sum constraint on
/// fitted values, using the conditional-sampling correction for a draw with
/// precision matrix `precision`.
pub fn center_coefficients(
    beta: &DVector<f64>,
    basis: &SplineBasis,
    precision: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let m = basis.num_basis();
    if beta.len() != m || precision.nrows() != m || precision.ncols() != m {
        return Err(Error::Conformability(format!(
            "coefficients ({}) and precision ({}×{}) must match the basis size {m}",
            beta.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    let factor = Cholesky::new(precision.clone())
        .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
    center_with_factor(beta, &basis.column_sums(), &factor)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rows_are_local_partitions_of_unity(
            xs in proptest::collection::vec(0.0f64..=1.0, 1..40),
            m in 4usize..30,
        ) {
            let basis = build_bspline_basis(&xs, m, (0.0, 1.0)).unwrap();
            let dense = basis.design();
            for i in 0..xs.len() {
                let row = dense.row(i);
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(row.iter().filter(|v| **v != 0.0).count() <= 4);
                // local support: nonzeros only inside the window of the knot span
                let r = basis.rows()[i];
                for (rho, v) in row.iter().enumerate() {
                    if rho < r.start || rho >= r.start + SUPPORT {
                        prop_assert_eq!(*v, 0.0);
                    }
                    let knots = basis.knots();
                    if xs[i] < knots[rho] || xs[i] > knots[rho + SUPPORT] {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }
}
