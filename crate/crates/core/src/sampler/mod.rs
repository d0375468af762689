//! Data-augmented Gibbs sampler for the gating-network mixture of experts.
//!
//! One sweep visits, for every non-baseline component `g`: the utilities
//! `z_g` and mixture indicators `r_g`, the spline coefficients `β_gj` (drawn
//! and then conditioned on the zero-sum constraint), the fixed effects `γ_g`
//! and the random-walk variances `τ²_gj`. It then draws the category
//! probabilities `θ` and finally the allocations `D`.
//!
//! The utilities of component `g` are drawn immediately before its gating
//! coefficients, given the allocations and the most recent predictors of all
//! other components, so the augmented variables are always consistent with
//! the allocations they encode.

mod store;

pub use store::{parse_block, Draw, DrawStore, StoreBlocks, StoreManifest};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{logistic_mixture, utility_from_uniform, AugmentedState, LogisticMixture};
use crate::basis::{center_with_factor, PenaltyMatrix, SplineBasis};
use crate::error::{Error, Result};
use crate::model::{
    log_gating_probs, ComponentParams, Dataset, GatingDesign, GatingParams, PriorConfig, Variant,
    THETA_FLOOR,
};

/// Initial value of every random-walk variance.
pub const INITIAL_TAU2: f64 = 0.1;

/// Run-length and seeding of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of mixture components `G`.
    pub g: usize,
    /// Total iterations `T`.
    pub iters: usize,
    /// Burn-in iterations `T0`.
    pub burnin: usize,
    pub seed: u64,
    pub thin: usize,
    pub prior: PriorConfig,
    /// Verify the per-iteration invariants (simplex, sign consistency, ...).
    #[serde(default)]
    pub check_invariants: bool,
}

impl ChainConfig {
    pub fn new(g: usize, iters: usize, burnin: usize, seed: u64, prior: PriorConfig) -> Self {
        ChainConfig {
            g,
            iters,
            burnin,
            seed,
            thin: 1,
            prior,
            check_invariants: cfg!(debug_assertions),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 1 {
            return Err(Error::Config(
                "number of components must be at least 1".into(),
            ));
        }
        if self.burnin >= self.iters {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burnin, self.iters
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        self.prior.validate()
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn retained(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

/// Counters for numerical safeguards triggered during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Precision matrices that needed a ridge before factorizing.
    pub ridge_retries: u64,
    /// Units whose allocation masses all underflowed.
    pub allocation_fallbacks: u64,
    /// Log-likelihood terms evaluated at the probability floor.
    pub theta_floor_hits: u64,
    /// Dirichlet draws with an entry that underflowed to zero.
    pub dirichlet_underflows: u64,
}

/// Gaussian draw from `N(P⁻¹ b, P⁻¹)` with the factor of `P` it used.
pub struct GaussianDraw {
    pub value: DVector<f64>,
    pub mean: DVector<f64>,
    pub factor: Cholesky<f64, Dyn>,
    pub ridged: bool,
}

/// Factorizes a posterior precision, retrying once with a small ridge.
pub fn factor_precision(precision: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(f) = Cholesky::new(precision.clone()) {
        return Ok((f, false));
    }
    let m = precision.nrows().max(1);
    let ridge = 1e-8 * precision.trace().abs() / m as f64;
    let mut ridged = precision;
    for k in 0..ridged.nrows() {
        ridged[(k, k)] += ridge;
    }
    Cholesky::new(ridged)
        .map(|f| (f, true))
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))
}

/// Draws from `N(P⁻¹ b, P⁻¹)` through the Cholesky factor of the precision.
pub fn draw_from_precision<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<GaussianDraw> {
    let (factor, ridged) = factor_precision(precision)?;
    let mean = factor.solve(b);
    let eps = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = factor
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(GaussianDraw {
        value: &mean + noise,
        mean,
        factor,
        ridged,
    })
}

/// Full conditional precision and linear term of `β_gj`:
/// `P = B'W⁻¹B + K/τ²`, `b = B'W⁻¹ target`.
pub fn spline_conditional(
    basis: &SplineBasis,
    penalty: &PenaltyMatrix,
    tau2: f64,
    inv_var: &[f64],
    target: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let precision = basis.weighted_gram(inv_var) + &penalty.matrix / tau2;
    (precision, basis.weighted_cross(inv_var, target))
}

/// Spline coefficient draw after conditioning on the zero-sum constraint.
pub struct SplineDraw {
    pub beta: DVector<f64>,
    pub unconstrained: DVector<f64>,
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub ridged: bool,
}

/// Draws `β_gj` from its Gaussian full conditional and centers it.
/// `target` is `z_g + log Σ_{l≠g} λ_l − η̃_{g,−j}` and `inv_var` holds
/// `1 / s²_{r_gi}`.
pub fn sample_spline_coeffs<R: Rng + ?Sized>(
    basis: &SplineBasis,
    penalty: &PenaltyMatrix,
    tau2: f64,
    inv_var: &[f64],
    target: &[f64],
    rng: &mut R,
) -> Result<SplineDraw> {
    let (precision, b) = spline_conditional(basis, penalty, tau2, inv_var, target);
    let draw = draw_from_precision(precision.clone(), &b, rng)?;
    let beta = center_with_factor(&draw.value, &basis.column_sums(), &draw.factor)?;
    Ok(SplineDraw {
        beta,
        unconstrained: draw.value,
        mean: draw.mean,
        precision,
        ridged: draw.ridged,
    })
}

/// Full conditional of `γ_g`: `P = X'W⁻¹X + I/v`, `b = X'W⁻¹ target` where
/// `target = z_g + log Σ_{l≠g} λ_l − (smooth part of η_g)`.
pub fn fixed_effects_conditional(
    x: &DMatrix<f64>,
    v: f64,
    inv_var: &[f64],
    target: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = x.ncols();
    let mut precision = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for i in 0..x.nrows() {
        let w = inv_var[i];
        for a in 0..p {
            let wa = w * x[(i, a)];
            b[a] += wa * target[i];
            for c in a..p {
                precision[(a, c)] += wa * x[(i, c)];
            }
        }
    }
    for a in 0..p {
        precision[(a, a)] += 1.0 / v;
        for c in 0..a {
            precision[(a, c)] = precision[(c, a)];
        }
    }
    (precision, b)
}

pub fn sample_fixed_effects<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    v: f64,
    inv_var: &[f64],
    target: &[f64],
    rng: &mut R,
) -> Result<GaussianDraw> {
    let (precision, b) = fixed_effects_conditional(x, v, inv_var, target);
    draw_from_precision(precision, &b, rng)
}

/// Shape and rate of the inverse-gamma full conditional of `τ²_gj`.
pub fn smoothing_variance_posterior(
    beta_centered: &[f64],
    penalty: &PenaltyMatrix,
    a: f64,
    b: f64,
) -> (f64, f64) {
    let quad = penalty.quadratic_form(beta_centered).max(0.0);
    (a + penalty.rank() as f64 / 2.0, b + 0.5 * quad)
}

/// Draws from `IG(shape, rate)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, 1): {e}")))?
        .sample(rng);
    Ok(rate / g)
}

pub fn sample_smoothing_variances<R: Rng + ?Sized>(
    beta_centered: &[f64],
    penalty: &PenaltyMatrix,
    prior: &PriorConfig,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = smoothing_variance_posterior(beta_centered, penalty, prior.a, prior.b);
    sample_inverse_gamma(shape, rate, rng)
}

/// Dirichlet parameters `δ + Σ_i D_gi y_iqc` for every component and variable.
pub fn dirichlet_posterior(
    alloc: &[usize],
    data: &Dataset,
    g: usize,
    delta: f64,
) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = (0..g)
        .map(|_| data.categories.iter().map(|&c| vec![delta; c]).collect())
        .collect();
    for (i, &k) in alloc.iter().enumerate() {
        for (q, &c) in data.response(i).iter().enumerate() {
            out[k][q][c] += 1.0;
        }
    }
    out
}

/// Draws one Dirichlet vector; zero entries produced by underflow are lifted
/// to the smallest positive double. Returns whether that happened.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<(Vec<f64>, bool)> {
    let mut out = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let g = Gamma::new(a, 1.0)
            .map_err(|e| Error::Numerical(format!("gamma({a}, 1): {e}")))?
            .sample(rng);
        out.push(g);
    }
    let total: f64 = out.iter().sum();
    let mut underflow = false;
    if !(total > 0.0) {
        underflow = true;
        out.iter_mut().for_each(|v| *v = 1.0);
    }
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
        if *v <= 0.0 {
            *v = f64::MIN_POSITIVE;
            underflow = true;
        }
    }
    if underflow {
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
    }
    Ok((out, underflow))
}

/// Draws `θ_gq` for every component from its Dirichlet full conditional.
pub fn sample_component_probs<R: Rng + ?Sized>(
    alloc: &[usize],
    data: &Dataset,
    g: usize,
    delta: f64,
    rng: &mut R,
) -> Result<(Vec<ComponentParams>, u64)> {
    let alphas = dirichlet_posterior(alloc, data, g, delta);
    let mut underflows = 0;
    let mut comps = Vec::with_capacity(g);
    for per_q in alphas {
        let mut theta = Vec::with_capacity(per_q.len());
        for alpha in per_q {
            let (p, u) = sample_dirichlet(&alpha, rng)?;
            underflows += u64::from(u);
            theta.push(p);
        }
        comps.push(ComponentParams { theta });
    }
    Ok((comps, underflows))
}

/// `log max(θ, floor)` tables indexed `[g][q][c]`.
pub fn log_theta_table(comps: &[ComponentParams]) -> Vec<Vec<Vec<f64>>> {
    comps
        .iter()
        .map(|c| {
            c.theta
                .iter()
                .map(|p| p.iter().map(|v| v.max(THETA_FLOOR).ln()).collect())
                .collect()
        })
        .collect()
}

/// Normalized allocation probabilities of one unit from log gating weights
/// and the log category-probability tables.
pub fn allocation_probs(
    log_weights: &[f64],
    log_theta: &[Vec<Vec<f64>>],
    response: &[usize],
) -> Option<Vec<f64>> {
    let mut out: Vec<f64> = log_weights
        .iter()
        .zip(log_theta)
        .map(|(lw, table)| {
            lw + response
                .iter()
                .zip(table)
                .map(|(&c, row)| row[c])
                .sum::<f64>()
        })
        .collect();
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    out.iter_mut().for_each(|v| *v /= total);
    Some(out)
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Draws the allocation of every unit. `log_weights[i]` are the log gating
/// probabilities of unit `i`. Units whose masses all underflow are allocated
/// uniformly; their count is returned alongside the labels.
pub fn sample_allocations<R: Rng + ?Sized>(
    data: &Dataset,
    log_weights: &[Vec<f64>],
    comps: &[ComponentParams],
    rng: &mut R,
) -> (Vec<usize>, u64) {
    let table = log_theta_table(comps);
    let g = comps.len();
    let mut fallbacks = 0;
    let alloc = (0..data.n())
        .map(
            |i| match allocation_probs(&log_weights[i], &table, data.response(i)) {
                Some(p) => sample_categorical(&p, rng),
                None => {
                    fallbacks += 1;
                    rng.random_range(0..g)
                }
            },
        )
        .collect();
    (alloc, fallbacks)
}

/// Complete-data log-likelihood `Σ_i log f(y_i | θ_{D_i})` with the
/// probability floor applied; also returns how many terms hit the floor.
pub fn allocation_loglik(data: &Dataset, comps: &[ComponentParams], alloc: &[usize]) -> (f64, u64) {
    let mut total = 0.0;
    let mut hits = 0;
    for (i, &k) in alloc.iter().enumerate() {
        for (&c, p) in data.response(i).iter().zip(&comps[k].theta) {
            let v = p[c];
            if v < THETA_FLOOR {
                hits += 1;
            }
            total += v.max(THETA_FLOOR).ln();
        }
    }
    (total, hits)
}

/// All parameter values of the current Gibbs iteration.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub gating: GatingParams,
    pub components: Vec<ComponentParams>,
    pub aug: AugmentedState,
    /// Mixture weights of the covariate-free variant.
    pub weights: Option<Vec<f64>>,
    fixed_part: Vec<Vec<f64>>,
    smooth_fit: Vec<Vec<Vec<f64>>>,
    eta: Vec<Vec<f64>>,
}

impl ModelState {
    /// Predictors `η_g` of the non-baseline components, indexed `[g][i]`.
    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    /// Log gating probabilities of unit `i`.
    pub fn log_weights(&self, i: usize) -> Vec<f64> {
        let row: Vec<f64> = self.eta.iter().map(|e| e[i]).collect();
        log_gating_probs(&row)
    }

    /// Recomputes the cached predictors from the gating parameters.
    pub fn refresh(&mut self, design: &GatingDesign) {
        let k = self.gating.num_predictors();
        let n = design.n();
        self.fixed_part = (0..k)
            .map(|g| crate::model::fixed_predictor(design, &self.gating.gamma, g))
            .collect();
        self.smooth_fit = (0..k)
            .map(|g| {
                design
                    .smooth
                    .iter()
                    .zip(&self.gating.beta[g])
                    .map(|(basis, beta)| basis.apply(beta.as_slice()))
                    .collect()
            })
            .collect();
        self.eta = (0..k)
            .map(|g| {
                (0..n)
                    .map(|i| {
                        self.fixed_part[g][i] + self.smooth_fit[g].iter().map(|f| f[i]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
    }
}

/// Gibbs sampler bound to one gating design and a fixed number of components.
pub struct GibbsSampler {
    design: GatingDesign,
    prior: PriorConfig,
    g: usize,
    mix: LogisticMixture,
    column_sums: Vec<DVector<f64>>,
    state: ModelState,
    pub diagnostics: Diagnostics,
    pub check_invariants: bool,
    iteration: usize,
}

impl GibbsSampler {
    /// Initializes with uniform random allocations, category probabilities
    /// from their prior, zero gating coefficients and `τ² = 0.1`.
    pub fn new<R: Rng + ?Sized>(
        data: &Dataset,
        design: GatingDesign,
        g: usize,
        prior: PriorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        prior.validate()?;
        if g < 1 {
            return Err(Error::Config(
                "number of components must be at least 1".into(),
            ));
        }
        if design.n() != data.n() {
            return Err(Error::Conformability(format!(
                "design has {} rows for {} units",
                design.n(),
                data.n()
            )));
        }
        if design.variant != prior.variant {
            return Err(Error::Config(format!(
                "design built for variant {} but prior requests {}",
                design.variant, prior.variant
            )));
        }
        let mix = logistic_mixture(prior.h)?;
        let alloc: Vec<usize> = (0..data.n()).map(|_| rng.random_range(0..g)).collect();
        let mut components = Vec::with_capacity(g);
        for _ in 0..g {
            let mut theta = Vec::with_capacity(data.q());
            for &c in &data.categories {
                theta.push(sample_dirichlet(&vec![prior.delta; c], rng)?.0);
            }
            components.push(ComponentParams { theta });
        }
        let gating = GatingParams::zeros(g, &design, INITIAL_TAU2);
        let weights = (prior.variant == Variant::Blca).then(|| vec![1.0 / g as f64; g]);
        let column_sums = design.smooth.iter().map(|b| b.column_sums()).collect();
        let mut state = ModelState {
            gating,
            components,
            aug: AugmentedState::new(data.n(), g, alloc),
            weights,
            fixed_part: Vec::new(),
            smooth_fit: Vec::new(),
            eta: Vec::new(),
        };
        state.refresh(&design);
        Ok(GibbsSampler {
            design,
            prior,
            g,
            mix,
            column_sums,
            state,
            diagnostics: Diagnostics::default(),
            check_invariants: cfg!(debug_assertions),
            iteration: 0,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    /// Mutable access for callers that set parameters directly; call
    /// [`ModelState::refresh`] through [`GibbsSampler::refresh`] afterwards.
    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn refresh(&mut self) {
        self.state.refresh(&self.design);
    }

    pub fn design(&self) -> &GatingDesign {
        &self.design
    }

    pub fn mixture(&self) -> &LogisticMixture {
        &self.mix
    }

    pub fn num_components(&self) -> usize {
        self.g
    }

    /// One full Gibbs sweep.
    pub fn sweep<R: Rng + ?Sized>(&mut self, data: &Dataset, rng: &mut R) -> Result<()> {
        self.iteration += 1;
        if self.g > 1 {
            match self.prior.variant {
                Variant::Blca => self.update_weights(rng)?,
                _ => {
                    for g in 0..self.g - 1 {
                        self.update_gating_component(g, rng)?;
                    }
                }
            }
        }
        let (comps, underflows) =
            sample_component_probs(&self.state.aug.alloc, data, self.g, self.prior.delta, rng)?;
        self.state.components = comps;
        self.diagnostics.dirichlet_underflows += underflows;

        let log_weights: Vec<Vec<f64>> = (0..data.n()).map(|i| self.state.log_weights(i)).collect();
        let (alloc, fallbacks) =
            sample_allocations(data, &log_weights, &self.state.components, rng);
        self.state.aug.alloc = alloc;
        self.diagnostics.allocation_fallbacks += fallbacks;

        if self.check_invariants {
            self.verify_invariants()?;
        }
        Ok(())
    }

    /// Log-likelihood of the current allocations, as fed to AICM.
    pub fn loglik(&mut self, data: &Dataset) -> f64 {
        let (ll, hits) = allocation_loglik(data, &self.state.components, &self.state.aug.alloc);
        self.diagnostics.theta_floor_hits += hits;
        ll
    }

    fn update_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mut alpha = vec![self.prior.weight_concentration; self.g];
        for &k in &self.state.aug.alloc {
            alpha[k] += 1.0;
        }
        let (w, underflow) = sample_dirichlet(&alpha, rng)?;
        self.diagnostics.dirichlet_underflows += u64::from(underflow);
        let base = w[self.g - 1].ln();
        for g in 0..self.g - 1 {
            self.state.gating.gamma[(g, 0)] = w[g].ln() - base;
        }
        self.state.weights = Some(w);
        self.state.refresh(&self.design);
        Ok(())
    }

    /// Utilities, mixture indicators, spline coefficients, fixed effects and
    /// smoothing variances of component `g`.
    fn update_gating_component<R: Rng + ?Sized>(&mut self, g: usize, rng: &mut R) -> Result<()> {
        let n = self.design.n();
        let k = self.g - 1;
        let state = &mut self.state;

        // offsets log Σ_{l≠g} λ_li with λ_G = 1
        let mut log_others = vec![0.0; n];
        for (i, lo) in log_others.iter_mut().enumerate() {
            let mut max = 0.0f64;
            for l in (0..k).filter(|&l| l != g) {
                max = max.max(state.eta[l][i]);
            }
            let mut total = (-max).exp();
            for l in (0..k).filter(|&l| l != g) {
                total += (state.eta[l][i] - max).exp();
            }
            *lo = max + total.ln();
        }

        let mut inv_var = vec![0.0; n];
        let mut working = vec![0.0; n];
        for i in 0..n {
            let allocated = state.aug.alloc[i] == g;
            let u: f64 = rng.sample(Open01);
            let z = utility_from_uniform(state.eta[g][i] - log_others[i], allocated, u);
            let h = self
                .mix
                .sample_indicator(z - state.eta[g][i] + log_others[i], rng);
            state.aug.z[g][i] = z;
            state.aug.r[g][i] = h as u8;
            inv_var[i] = 1.0 / self.mix.component_variance(h);
            working[i] = z + log_others[i];
        }
        if self.check_invariants {
            for i in 0..n {
                if (state.aug.z[g][i] > 0.0) != (state.aug.alloc[i] == g) {
                    return Err(Error::Numerical(format!(
                        "iteration {}: utility of unit {i}, component {g} is inconsistent with its allocation",
                        self.iteration
                    )));
                }
            }
        }

        let mut target = vec![0.0; n];
        for j in 0..self.design.smooth.len() {
            let basis = &self.design.smooth[j];
            for i in 0..n {
                target[i] = working[i] - state.eta[g][i] + state.smooth_fit[g][j][i];
            }
            let tau2 = state.gating.tau2[g][j];
            let draw = sample_spline_coeffs(
                basis,
                &self.design.penalties[j],
                tau2,
                &inv_var,
                &target,
                rng,
            )
            .map_err(|e| chain_abort(self.iteration, self.g, state, g, Some(j), e))?;
            self.diagnostics.ridge_retries += u64::from(draw.ridged);
            debug_assert!(self.column_sums[j].dot(&draw.beta).abs() < 1e-6 * n as f64 + 1e-8);
            let fit = basis.apply(draw.beta.as_slice());
            for i in 0..n {
                state.eta[g][i] += fit[i] - state.smooth_fit[g][j][i];
            }
            state.smooth_fit[g][j] = fit;
            state.gating.beta[g][j] = draw.beta;
        }

        for i in 0..n {
            target[i] = working[i] - (state.eta[g][i] - state.fixed_part[g][i]);
        }
        let draw = sample_fixed_effects(&self.design.fixed, self.prior.v, &inv_var, &target, rng)
            .map_err(|e| chain_abort(self.iteration, self.g, state, g, None, e))?;
        self.diagnostics.ridge_retries += u64::from(draw.ridged);
        for c in 0..draw.value.len() {
            state.gating.gamma[(g, c)] = draw.value[c];
        }
        let fixed = crate::model::fixed_predictor(&self.design, &state.gating.gamma, g);
        for i in 0..n {
            state.eta[g][i] += fixed[i] - state.fixed_part[g][i];
        }
        state.fixed_part[g] = fixed;

        for j in 0..self.design.smooth.len() {
            let tau2 = sample_smoothing_variances(
                state.gating.beta[g][j].as_slice(),
                &self.design.penalties[j],
                &self.prior,
                rng,
            )?;
            state.gating.tau2[g][j] = tau2;
        }
        Ok(())
    }

    fn verify_invariants(&self) -> Result<()> {
        let fail = |what: &str| {
            Err(Error::Numerical(format!(
                "iteration {}: invariant violated: {what}",
                self.iteration
            )))
        };
        if !self
            .state
            .components
            .iter()
            .all(|c| c.is_simplex_valid(1e-12))
        {
            return fail("category probabilities off the simplex");
        }
        if !self
            .state
            .gating
            .tau2
            .iter()
            .flatten()
            .all(|t| *t > 0.0 && t.is_finite())
        {
            return fail("non-positive smoothing variance");
        }
        if self.state.aug.alloc.iter().any(|&a| a >= self.g) {
            return fail("allocation label out of range");
        }
        if self.state.eta.iter().flatten().any(|e| !e.is_finite()) {
            return fail("non-finite predictor");
        }
        Ok(())
    }
}

/// Wraps a failed block update with enough state to diagnose it.
fn chain_abort(
    iteration: usize,
    num_components: usize,
    state: &ModelState,
    g: usize,
    j: Option<usize>,
    err: Error,
) -> Error {
    let block = match j {
        Some(j) => format!(
            "spline block (component {}, covariate {}), tau2 = {}",
            g + 1,
            j + 1,
            state.gating.tau2[g][j]
        ),
        None => format!("fixed effects of component {}", g + 1),
    };
    let sizes: Vec<usize> = (0..num_components)
        .map(|c| state.aug.alloc.iter().filter(|&&a| a == c).count())
        .collect();
    Error::Numerical(format!(
        "chain aborted at iteration {iteration} in {block}: {err}; component sizes {sizes:?}"
    ))
}

/// Runs a chain seeded from `config.seed`.
pub fn run_chain(data: &Dataset, config: &ChainConfig) -> Result<DrawStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_chain_with_rng(data, config, &mut rng)
}

pub fn run_chain_with_rng<R: Rng + ?Sized>(
    data: &Dataset,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<DrawStore> {
    config.validate()?;
    let design = GatingDesign::build(data, config.prior.variant, config.prior.m)?;
    let mut sampler = GibbsSampler::new(data, design, config.g, config.prior.clone(), rng)?;
    sampler.check_invariants = config.check_invariants;
    let mut draws = Vec::with_capacity(config.retained());
    for t in 1..=config.iters {
        sampler.sweep(data, rng)?;
        if t > config.burnin && (t - config.burnin) % config.thin == 0 {
            let loglik = sampler.loglik(data);
            if !loglik.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite log-likelihood at iteration {t}"
                )));
            }
            let mut draw = Draw::capture(sampler.state(), loglik);
            draw.iteration = t;
            draws.push(draw);
        }
    }
    Ok(DrawStore {
        config: config.clone(),
        dataset_digest: data.digest(),
        n: data.n(),
        categories: data.categories.clone(),
        fixed_names: sampler.design().fixed_names.clone(),
        basis_sizes: sampler
            .design()
            .smooth
            .iter()
            .map(|b| b.num_basis())
            .collect(),
        diagnostics: sampler.diagnostics.clone(),
        draws,
    })
}

#[cfg(test)]
mod tests;
