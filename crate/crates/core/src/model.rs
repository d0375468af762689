//! Data and parameter types, the multinomial component likelihood, and the
//! multinomial-logit gating network with additive predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{build_bspline_basis, build_penalty, PenaltyMatrix, SplineBasis};
use crate::error::{Error, Result};

/// Smallest probability used when taking logs of component probabilities.
pub const THETA_FLOOR: f64 = 1e-300;

/// Which gating network is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Linear fixed effects plus penalized splines of the smooth covariates.
    #[serde(rename = "semi")]
    Semiparametric,
    /// Every covariate enters linearly.
    #[serde(rename = "param")]
    Parametric,
    /// Covariate-free latent class model (intercept-only gating).
    #[serde(rename = "blca")]
    Blca,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Semiparametric => "semi",
            Variant::Parametric => "param",
            Variant::Blca => "blca",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi" | "semiparametric" => Ok(Variant::Semiparametric),
            "param" | "parametric" => Ok(Variant::Parametric),
            "blca" => Ok(Variant::Blca),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `n` units with `Q` categorical responses and their covariates.
///
/// Response codes are stored zero-based: code `c` means the `(c + 1)`-th level
/// of its variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub response_names: Vec<String>,
    pub categories: Vec<usize>,
    responses: Vec<usize>,
    pub linear_names: Vec<String>,
    /// Intercept column followed by the linear covariates.
    pub linear: DMatrix<f64>,
    pub smooth_names: Vec<String>,
    pub smooth: DMatrix<f64>,
}

impl Dataset {
    /// Assembles and validates a dataset. `linear` holds the linear covariates
    /// without the intercept; the intercept column is prepended here.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ids: Vec<String>,
        response_names: Vec<String>,
        categories: Vec<usize>,
        responses: Vec<Vec<usize>>,
        linear_names: Vec<String>,
        linear: DMatrix<f64>,
        smooth_names: Vec<String>,
        smooth: DMatrix<f64>,
    ) -> Result<Self> {
        let n = responses.len();
        let q = categories.len();
        if ids.len() != n {
            return Err(Error::Conformability(format!(
                "{} ids for {n} response rows",
                ids.len()
            )));
        }
        if response_names.len() != q {
            return Err(Error::Conformability(format!(
                "{} response names for {q} variables",
                response_names.len()
            )));
        }
        if let Some(q0) = categories.iter().position(|&c| c < 1) {
            return Err(Error::Data(format!(
                "variable '{}' has no categories",
                response_names[q0]
            )));
        }
        let mut flat = Vec::with_capacity(n * q);
        for (i, row) in responses.iter().enumerate() {
            if row.len() != q {
                return Err(Error::Conformability(format!(
                    "row {i} has {} responses, expected {q}",
                    row.len()
                )));
            }
            for (qq, (&code, &c)) in row.iter().zip(&categories).enumerate() {
                if code >= c {
                    return Err(Error::Data(format!(
                        "row {i}, variable '{}': code {} outside 1..={c}",
                        response_names[qq],
                        code + 1
                    )));
                }
                flat.push(code);
            }
        }
        if linear.nrows() != n || smooth.nrows() != n {
            return Err(Error::Conformability(format!(
                "covariate matrices have {} and {} rows for {n} units",
                linear.nrows(),
                smooth.nrows()
            )));
        }
        if linear.ncols() != linear_names.len() || smooth.ncols() != smooth_names.len() {
            return Err(Error::Conformability(
                "covariate names do not match covariate columns".into(),
            ));
        }
        for (name, m) in [("linear", &linear), ("smooth", &smooth)] {
            if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite {name} covariate at row {}",
                    pos % n.max(1)
                )));
            }
        }
        let with_intercept = DMatrix::from_fn(n, linear.ncols() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                linear[(i, j - 1)]
            }
        });
        Ok(Dataset {
            ids,
            response_names,
            categories,
            responses: flat,
            linear_names,
            linear: with_intercept,
            smooth_names,
            smooth,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn q(&self) -> usize {
        self.categories.len()
    }

    /// Zero-based response codes of unit `i`.
    pub fn response(&self, i: usize) -> &[usize] {
        let q = self.q();
        &self.responses[i * q..(i + 1) * q]
    }

    /// One-hot expansion `y_iqc` of unit `i`, concatenated over variables.
    pub fn one_hot(&self, i: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.categories.iter().sum());
        for (&code, &c) in self.response(i).iter().zip(&self.categories) {
            out.extend((0..c).map(|k| u8::from(k == code)));
        }
        out
    }

    /// SHA-256 over responses and covariates, used to tie outputs to inputs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        for c in &self.categories {
            h.update((*c as u64).to_le_bytes());
        }
        for r in &self.responses {
            h.update((*r as u64).to_le_bytes());
        }
        for v in self.linear.iter().chain(self.smooth.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-component category probabilities `θ_gq`, one simplex per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub theta: Vec<Vec<f64>>,
}

impl ComponentParams {
    pub fn uniform(categories: &[usize]) -> Self {
        ComponentParams {
            theta: categories
                .iter()
                .map(|&c| vec![1.0 / c as f64; c])
                .collect(),
        }
    }

    pub fn flattened(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }

    pub fn is_simplex_valid(&self, tol: f64) -> bool {
        self.theta.iter().all(|p| {
            p.iter().all(|v| *v > 0.0 && v.is_finite())
                && (p.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// Gating coefficients for the `G − 1` non-baseline components. The baseline
/// (last) component has all coefficients fixed at zero and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingParams {
    /// `(G − 1) × p` fixed-effect coefficients.
    pub gamma: DMatrix<f64>,
    /// `beta[g][j]`: spline coefficients of component `g`, smooth covariate `j`.
    pub beta: Vec<Vec<DVector<f64>>>,
    /// `tau2[g][j] > 0`: random-walk variances.
    pub tau2: Vec<Vec<f64>>,
}

impl GatingParams {
    pub fn zeros(g: usize, design: &GatingDesign, tau2: f64) -> Self {
        let k = g.saturating_sub(1);
        GatingParams {
            gamma: DMatrix::zeros(k, design.num_fixed()),
            beta: (0..k)
                .map(|_| {
                    design
                        .smooth
                        .iter()
                        .map(|b| DVector::zeros(b.num_basis()))
                        .collect()
                })
                .collect(),
            tau2: (0..k).map(|_| vec![tau2; design.smooth.len()]).collect(),
        }
    }

    pub fn num_predictors(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Hyperparameters and model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Inverse-gamma shape for every `τ²_gj`.
    pub a: f64,
    /// Inverse-gamma scale for every `τ²_gj`.
    pub b: f64,
    /// Prior variance of the fixed effects.
    pub v: f64,
    /// Symmetric Dirichlet concentration for every `θ_gq`.
    pub delta: f64,
    /// Size of the normal scale mixture approximating the logistic errors.
    pub h: usize,
    /// Spline basis size per smooth covariate.
    pub m: usize,
    pub variant: Variant,
    /// Symmetric Dirichlet concentration of the mixture weights when the
    /// gating network carries no covariates.
    #[serde(default = "default_weight_concentration")]
    pub weight_concentration: f64,
}

fn default_weight_concentration() -> f64 {
    1.0
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            a: 1.0,
            b: 0.005,
            v: 100.0,
            delta: 1.0,
            h: 6,
            m: crate::basis::DEFAULT_NUM_BASIS,
            variant: Variant::Semiparametric,
            weight_concentration: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn with_variant(variant: Variant) -> Self {
        PriorConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("v", self.v),
            ("delta", self.delta),
            ("weight_concentration", self.weight_concentration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "prior {name} must be positive, got {v}"
                )));
            }
        }
        if self.h != 3 && self.h != 6 {
            return Err(Error::Config(format!(
                "logistic mixture size must be 3 or 6, got {}",
                self.h
            )));
        }
        if self.m < crate::basis::SUPPORT {
            return Err(Error::Config(format!(
                "spline basis size must be at least {}, got {}",
                crate::basis::SUPPORT,
                self.m
            )));
        }
        Ok(())
    }
}

/// How a smooth covariate enters the gating network of a given variant.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothTerm {
    /// Index into `GatingDesign::smooth`.
    Spline(usize),
    /// Column of the fixed design holding the rescaled covariate.
    Linear(usize),
    Absent,
}

/// Covariate design of the gating network for one model variant.
#[derive(Debug, Clone)]
pub struct GatingDesign {
    pub variant: Variant,
    pub fixed: DMatrix<f64>,
    pub fixed_names: Vec<String>,
    pub smooth: Vec<SplineBasis>,
    pub penalties: Vec<PenaltyMatrix>,
    /// Observed range of each smooth covariate (original units).
    pub smooth_ranges: Vec<(f64, f64)>,
    pub smooth_terms: Vec<SmoothTerm>,
    /// Original-scale values of each smooth covariate.
    pub smooth_values: Vec<Vec<f64>>,
}

fn observed_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

impl GatingDesign {
    /// Builds the design using `m` basis functions for every smooth covariate.
    pub fn build(data: &Dataset, variant: Variant, m: usize) -> Result<Self> {
        Self::build_with_sizes(data, variant, &vec![m; data.smooth.ncols()])
    }

    pub fn build_with_sizes(data: &Dataset, variant: Variant, sizes: &[usize]) -> Result<Self> {
        let n = data.n();
        let js = data.smooth.ncols();
        if sizes.len() != js {
            return Err(Error::Conformability(format!(
                "{} basis sizes for {js} smooth covariates",
                sizes.len()
            )));
        }
        let smooth_values: Vec<Vec<f64>> = (0..js)
            .map(|j| data.smooth.column(j).iter().copied().collect())
            .collect();
        let smooth_ranges: Vec<(f64, f64)> =
            smooth_values.iter().map(|v| observed_range(v)).collect();
        for (j, r) in smooth_ranges.iter().enumerate() {
            if n > 0 && r.1 <= r.0 {
                return Err(Error::Data(format!(
                    "smooth covariate '{}' is constant",
                    data.smooth_names[j]
                )));
            }
        }

        let mut fixed_names = vec!["(intercept)".to_string()];
        let (fixed, smooth, penalties, smooth_terms) = match variant {
            Variant::Semiparametric => {
                fixed_names.extend(data.linear_names.iter().cloned());
                let mut bases = Vec::with_capacity(js);
                let mut pens = Vec::with_capacity(js);
                for j in 0..js {
                    bases.push(
                        build_bspline_basis(&smooth_values[j], sizes[j], smooth_ranges[j])?
                            .for_covariate(j),
                    );
                    pens.push(build_penalty(sizes[j])?);
                }
                (
                    data.linear.clone(),
                    bases,
                    pens,
                    (0..js).map(SmoothTerm::Spline).collect(),
                )
            }
            Variant::Parametric => {
                fixed_names.extend(data.linear_names.iter().cloned());
                fixed_names.extend(data.smooth_names.iter().cloned());
                let p0 = data.linear.ncols();
                let fixed = DMatrix::from_fn(n, p0 + js, |i, c| {
                    if c < p0 {
                        data.linear[(i, c)]
                    } else {
                        let j = c - p0;
                        let (lo, hi) = smooth_ranges[j];
                        (smooth_values[j][i] - lo) / (hi - lo)
                    }
                });
                (
                    fixed,
                    Vec::new(),
                    Vec::new(),
                    (0..js).map(|j| SmoothTerm::Linear(p0 + j)).collect(),
                )
            }
            Variant::Blca => (
                DMatrix::from_element(n, 1, 1.0),
                Vec::new(),
                Vec::new(),
                vec![SmoothTerm::Absent; js],
            ),
        };
        Ok(GatingDesign {
            variant,
            fixed,
            fixed_names,
            smooth,
            penalties,
            smooth_ranges,
            smooth_terms,
            smooth_values,
        })
    }

    pub fn n(&self) -> usize {
        self.fixed.nrows()
    }

    pub fn num_fixed(&self) -> usize {
        self.fixed.ncols()
    }

    /// Rescales an original-scale value of smooth covariate `j` onto `[0, 1]`.
    pub fn rescale(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = self.smooth_ranges[j];
        (x - lo) / (hi - lo)
    }
}

/// Log-likelihood `Σ_q log θ_gq[y_iq]` of one unit under one component.
/// Returns `-inf` when an observed category has zero probability.
pub fn component_loglik(response: &[usize], params: &ComponentParams) -> f64 {
    response
        .iter()
        .zip(&params.theta)
        .map(|(&c, theta)| theta[c].ln())
        .sum()
}

/// Fixed part `X γ_g` of the predictor.
pub fn fixed_predictor(design: &GatingDesign, gamma: &DMatrix<f64>, g: usize) -> Vec<f64> {
    let x = &design.fixed;
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|c| x[(i, c)] * gamma[(g, c)]).sum())
        .collect()
}

/// `η_g = X γ_g + Σ_j B_j β_gj` for a non-baseline component `g`.
pub fn linear_predictor(
    design: &GatingDesign,
    gating: &GatingParams,
    g: usize,
) -> Result<Vec<f64>> {
    if g >= gating.num_predictors() {
        return Err(Error::Conformability(format!(
            "component {g} has no predictor ({} non-baseline components)",
            gating.num_predictors()
        )));
    }
    if gating.gamma.ncols() != design.num_fixed() {
        return Err(Error::Conformability(format!(
            "{} fixed coefficients for {} design columns",
            gating.gamma.ncols(),
            design.num_fixed()
        )));
    }
    let mut eta = fixed_predictor(design, &gating.gamma, g);
    if gating.beta[g].len() != design.smooth.len() {
        return Err(Error::Conformability(format!(
            "{} spline blocks for {} bases",
            gating.beta[g].len(),
            design.smooth.len()
        )));
    }
    for (basis, beta) in design.smooth.iter().zip(&gating.beta[g]) {
        if beta.len() != basis.num_basis() {
            return Err(Error::Conformability(format!(
                "{} spline coefficients for a basis of size {}",
                beta.len(),
                basis.num_basis()
            )));
        }
        for (e, row) in eta.iter_mut().zip(basis.rows()) {
            *e += row.dot(beta.as_slice());
        }
    }
    Ok(eta)
}

/// Log of the gating probabilities for predictors `eta` of the `G − 1`
/// non-baseline components; the baseline predictor is zero.
pub fn log_gating_probs(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().fold(0.0f64, |m, &e| m.max(e));
    let norm = (-max).exp() + eta.iter().map(|e| (e - max).exp()).sum::<f64>();
    let log_norm = max + norm.ln();
    eta.iter()
        .map(|e| e - log_norm)
        .chain(std::iter::once(-log_norm))
        .collect()
}

/// Multinomial-logit component weights `p_1..p_G` for one unit.
pub fn gating_probs(eta: &[f64]) -> Vec<f64> {
    log_gating_probs(eta).into_iter().map(f64::exp).collect()
}
