//! Latent-utility augmentation of the multinomial-logit gating network.
//!
//! For a non-baseline component `g` the allocation indicator is written as
//! `D_gi = 1(z_gi > 0)` with `z_gi = η_gi − log Σ_{l≠g} λ_li + ε_gi` and
//! logistic `ε_gi`. The logistic error is replaced by a zero-mean normal scale
//! mixture, and the mixture indicator `r_gi` is sampled as a second latent
//! variable, so every gating update becomes a weighted Gaussian regression.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Open01;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

// Weights and standard deviations minimizing KL(logistic || mixture); produced
// by scripts/fit_logistic_mixture.py.
const WEIGHTS_3: [f64; 3] = [
    3.88610898618521661e-01,
    5.27075245948309346e-01,
    8.43138554331690909e-02,
];
const SDS_3: [f64; 3] = [
    1.20092622625860668e+00,
    1.92865831307289737e+00,
    3.01971388851808342e+00,
];
const WEIGHTS_6: [f64; 6] = [
    1.11344588160696686e-01,
    1.66809574723434301e-01,
    3.89033042437795351e-01,
    2.77682930579188136e-01,
    5.29277591955708629e-02,
    2.20210490331471673e-03,
];
const SDS_6: [f64; 6] = [
    9.95972815505912656e-01,
    1.29446094202288631e+00,
    1.60065762570578651e+00,
    2.22222025873613127e+00,
    3.05781377788697339e+00,
    4.09953646497920765e+00,
];

/// Zero-mean normal scale mixture approximating the standard logistic law.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticMixture {
    weights: Vec<f64>,
    sds: Vec<f64>,
    log_kernel_scale: Vec<f64>,
    half_precision: Vec<f64>,
}

impl LogisticMixture {
    /// Builds a mixture from arbitrary weights and standard deviations.
    pub fn new(weights: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != sds.len() {
            return Err(Error::Config(
                "mixture weights and sds must be non-empty and aligned".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || sds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "mixture weights and sds must be positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_kernel_scale = weights
            .iter()
            .zip(&sds)
            .map(|(w, s)| (w / s).ln())
            .collect();
        let half_precision = sds.iter().map(|s| 0.5 / (s * s)).collect();
        Ok(LogisticMixture {
            weights,
            sds,
            log_kernel_scale,
            half_precision,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Variance `s_h²` of mixture component `h` (zero-based).
    pub fn component_variance(&self, h: usize) -> f64 {
        self.sds[h] * self.sds[h]
    }

    /// Overall variance `Σ w_h s_h²`.
    pub fn variance(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.sds)
            .map(|(w, s)| w * s * s)
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.sds)
            .map(|(w, s)| w * std_normal_cdf(x / s))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        self.weights
            .iter()
            .zip(&self.sds)
            .map(|(w, s)| w / (s * norm) * (-0.5 * (x / s).powi(2)).exp())
            .sum()
    }

    /// Posterior probabilities of the mixture components given residual `eps`.
    pub fn indicator_probs(&self, eps: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.fill_indicator_probs(eps, &mut out);
        out
    }

    fn fill_indicator_probs(&self, eps: f64, out: &mut [f64]) {
        let e2 = eps * eps;
        let mut max = f64::NEG_INFINITY;
        for (h, o) in out.iter_mut().enumerate() {
            *o = self.log_kernel_scale[h] - self.half_precision[h] * e2;
            max = max.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    /// Draws a zero-based mixture indicator for residual `eps`.
    pub fn sample_indicator<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> usize {
        let mut probs = [0.0; 8];
        let probs = &mut probs[..self.len()];
        self.fill_indicator_probs(eps, probs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (h, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return h;
            }
        }
        self.len() - 1
    }
}

/// Embedded mixture of size `h` (3 or 6).
pub fn logistic_mixture(h: usize) -> Result<LogisticMixture> {
    match h {
        3 => LogisticMixture::new(WEIGHTS_3.to_vec(), SDS_3.to_vec()),
        6 => LogisticMixture::new(WEIGHTS_6.to_vec(), SDS_6.to_vec()),
        other => Err(Error::Config(format!(
            "no logistic mixture with {other} components (supported: 3, 6)"
        ))),
    }
}

/// Standard logistic CDF.
pub fn logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Inverse-CDF draw of one utility:
/// `z = log(ρU + D) − log(1 − U + ρ(1 − D))` with `ρ = exp(log_rho)`,
/// evaluated in log space so that extreme predictors do not overflow.
pub fn utility_from_uniform(log_rho: f64, allocated: bool, u: f64) -> f64 {
    if allocated {
        softplus(log_rho + u.ln()) - (-u).ln_1p()
    } else {
        log_rho + u.ln() - log_add_exp((-u).ln_1p(), log_rho)
    }
}

/// `log Σ_{l≠g} λ_l` for one unit, where `eta` holds the `G − 1` non-baseline
/// predictors and the baseline contributes `λ_G = 1`.
pub fn log_sum_others(eta: &[f64], g: usize) -> f64 {
    let mut max = 0.0f64;
    for (l, &e) in eta.iter().enumerate() {
        if l != g {
            max = max.max(e);
        }
    }
    let mut total = (-max).exp();
    for (l, &e) in eta.iter().enumerate() {
        if l != g {
            total += (e - max).exp();
        }
    }
    max + total.ln()
}

/// Augmented variables of one sweep: utilities and mixture indicators for the
/// non-baseline components and the allocation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    /// `z[g][i]`.
    pub z: Vec<Vec<f64>>,
    /// `r[g][i]`, zero-based mixture indicator.
    pub r: Vec<Vec<u8>>,
    /// Allocation label of each unit; `D_gi = 1` iff `alloc[i] == g`.
    pub alloc: Vec<usize>,
}

impl AugmentedState {
    pub fn new(n: usize, g: usize, alloc: Vec<usize>) -> Self {
        let k = g.saturating_sub(1);
        AugmentedState {
            z: vec![vec![0.0; n]; k],
            r: vec![vec![0; n]; k],
            alloc,
        }
    }

    /// Dense `n × G` 0/1 allocation matrix.
    pub fn allocation_matrix(&self, g: usize) -> DMatrix<u8> {
        DMatrix::from_fn(self.alloc.len(), g, |i, c| u8::from(self.alloc[i] == c))
    }

    /// `z_gi > 0 ⇔ D_gi = 1` for every stored utility.
    pub fn sign_consistent(&self) -> bool {
        self.z.iter().enumerate().all(|(g, zg)| {
            zg.iter()
                .zip(&self.alloc)
                .all(|(z, &a)| (*z > 0.0) == (a == g))
        })
    }
}

/// Draws all utilities given `λ` (`n × G`, last column equal to one) and the
/// allocations. Returns an `n × (G − 1)` matrix.
pub fn sample_utilities<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    alloc: &[usize],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (n, g) = lambda.shape();
    if alloc.len() != n {
        return Err(Error::Conformability(format!(
            "{} allocations for {n} units",
            alloc.len()
        )));
    }
    let mut z = DMatrix::zeros(n, g.saturating_sub(1));
    for i in 0..n {
        let total: f64 = lambda.row(i).sum();
        for c in 0..g - 1 {
            let others = total - lambda[(i, c)];
            if !(others > 0.0 && others.is_finite()) {
                return Err(Error::Numerical(format!(
                    "unit {i}: sum of competing λ is {others}"
                )));
            }
            let u: f64 = rng.sample(Open01);
            let log_rho = lambda[(i, c)].ln() - others.ln();
            z[(i, c)] = utility_from_uniform(log_rho, alloc[i] == c, u);
        }
    }
    Ok(z)
}

/// Draws mixture indicators for utilities `z` and predictors `eta`, both
/// `n × (G − 1)`. Returns zero-based indicators.
pub fn sample_indicators<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    eta: &DMatrix<f64>,
    mix: &LogisticMixture,
    rng: &mut R,
) -> Result<DMatrix<u8>> {
    if z.shape() != eta.shape() {
        return Err(Error::Conformability(
            "utilities and predictors must have equal shape".into(),
        ));
    }
    let (n, k) = z.shape();
    let mut out = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            row[c] = eta[(i, c)];
        }
        for c in 0..k {
            let eps = z[(i, c)] - eta[(i, c)] + log_sum_others(&row, c);
            out[(i, c)] = mix.sample_indicator(eps, rng) as u8;
        }
    }
    Ok(out)
}
