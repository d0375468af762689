//! Simulation scenarios with covariate-dependent mixture weights and their
//! ground truth.
//!
//! Both scenarios draw two independent `Uniform[0, 1]` covariates per unit.
//! The log-odds of every non-baseline component against the last one are
//! additive in the covariates: `η_g = c_g + s_g1(x1) + s_g2(x2)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gating_probs, ComponentParams, Dataset};

/// Names of the two simulated covariates.
pub const COVARIATE_NAMES: [&str; 2] = ["x1", "x2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaFamily {
    /// Two components, one nonlinear predictor.
    G2,
    /// Six components, five predictors.
    G6,
    /// Every predictor identically zero.
    Flat,
}

/// A data-generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub g: usize,
    pub categories: Vec<usize>,
    pub theta: Vec<ComponentParams>,
    pub n: usize,
    pub family: EtaFamily,
}

fn logistic(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn params(rows: &[&[f64]]) -> ComponentParams {
    ComponentParams {
        theta: rows.iter().map(|r| r.to_vec()).collect(),
    }
}

/// Two components, five variables.
pub fn scenario_g2() -> Scenario {
    let theta = vec![
        params(&[
            &[0.7, 0.1, 0.2],
            &[0.2, 0.8],
            &[0.3, 0.6, 0.1],
            &[0.1, 0.1, 0.5, 0.3],
            &[0.1, 0.1, 0.8],
        ]),
        params(&[
            &[0.2, 0.7, 0.1],
            &[0.7, 0.3],
            &[0.1, 0.3, 0.6],
            &[0.5, 0.3, 0.1, 0.1],
            &[0.1, 0.8, 0.1],
        ]),
    ];
    Scenario {
        name: "g2".into(),
        g: 2,
        categories: vec![3, 2, 3, 4, 3],
        theta,
        n: 1000,
        family: EtaFamily::G2,
    }
}

/// Six components, twelve three-level variables in four blocks of three.
pub fn scenario_g6() -> Scenario {
    const A: [f64; 3] = [0.7, 0.1, 0.2];
    const B: [f64; 3] = [0.7, 0.2, 0.1];
    const C: [f64; 3] = [0.2, 0.1, 0.7];
    const D: [f64; 3] = [0.1, 0.2, 0.7];
    const E: [f64; 3] = [0.2, 0.7, 0.1];
    const F: [f64; 3] = [0.1, 0.7, 0.2];
    let blocks: [[[f64; 3]; 4]; 6] = [
        [A, A, A, A],
        [B, B, C, C],
        [D, D, E, E],
        [A, C, D, F],
        [F, F, F, F],
        [F, D, C, A],
    ];
    let theta = blocks
        .iter()
        .map(|b| ComponentParams {
            theta: b.iter().flat_map(|p| std::iter::repeat_n(p.to_vec(), 3)).collect(),
        })
        .collect();
    Scenario {
        name: "g6".into(),
        g: 6,
        categories: vec![3; 12],
        theta,
        n: 1000,
        family: EtaFamily::G6,
    }
}

/// Looks a scenario up by name (`g2` or `g6`).
pub fn scenario_by_name(name: &str) -> Result<Scenario> {
    match name {
        "g2" => Ok(scenario_g2()),
        "g6" => Ok(scenario_g6()),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}' (expected g2 or g6)"
        ))),
    }
}

impl Scenario {
    /// A scenario with all predictors zero, i.e. equal weights everywhere.
    pub fn flat(theta: Vec<ComponentParams>) -> Result<Self> {
        let categories: Vec<usize> = theta
            .first()
            .map(|c| c.theta.iter().map(Vec::len).collect())
            .unwrap_or_default();
        let s = Scenario {
            name: "flat".into(),
            g: theta.len(),
            categories,
            theta,
            n: 1000,
            family: EtaFamily::Flat,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 1 || self.theta.len() != self.g {
            return Err(Error::Config(format!(
                "scenario declares {} components but has {} probability tables",
                self.g,
                self.theta.len()
            )));
        }
        let expected = match self.family {
            EtaFamily::G2 => Some(2),
            EtaFamily::G6 => Some(6),
            EtaFamily::Flat => None,
        };
        if expected.is_some_and(|e| e != self.g) {
            return Err(Error::Config("predictor family does not match the component count".into()));
        }
        for c in &self.theta {
            let shape: Vec<usize> = c.theta.iter().map(Vec::len).collect();
            if shape != self.categories || !c.is_simplex_valid(1e-12) {
                return Err(Error::Config("invalid category probability table".into()));
            }
        }
        Ok(())
    }

    /// Intercept `c_g` of predictor `g` (zero-based, non-baseline).
    pub fn intercept(&self, g: usize) -> f64 {
        match (self.family, g) {
            (EtaFamily::G2, 0) => -0.5,
            (EtaFamily::G6, 0) => -0.5,
            (EtaFamily::G6, 1) => -0.8,
            _ => 0.0,
        }
    }

    /// Additive effect `s_gj` of covariate `j` on predictor `g` (zero-based).
    pub fn effect(&self, g: usize, j: usize, x: f64) -> f64 {
        use std::f64::consts::PI;
        match (self.family, g, j) {
            (EtaFamily::G2, 0, 0) => 2.0 * (3.0 * PI * x).sin() * (-x).exp(),
            (EtaFamily::G2, 0, 1) => 2.0 * (3.0 * x - 1.5).powi(2),
            (EtaFamily::G6, 0, 0) => 0.7 * (3.0 * PI * x).sin() * (-x).exp(),
            (EtaFamily::G6, 0, 1) => 0.7 * (3.0 * x - 1.5).powi(2),
            (EtaFamily::G6, 1, 0) => 0.5 * (-x * x).exp(),
            (EtaFamily::G6, 2, 0) => {
                0.5 * (6.0 * x - 1.0).sin() + (-16.0 * (3.0 * x - 0.5).powi(2)).exp()
            }
            (EtaFamily::G6, 2, 1) => logistic(-30.0 * (x - 0.3)),
            (EtaFamily::G6, 3, 0) => {
                let t = 2.5 * x + 0.5;
                let coef = [3.4827, -4.7422, 3.3035, -1.2605, 0.251, -0.0204];
                0.6 * coef
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * t.powi(k as i32 + 1))
                    .sum::<f64>()
            }
            (EtaFamily::G6, 3, 1) => 0.6 * logistic(-20.0 * (x - 0.4)),
            (EtaFamily::G6, 4, 0) => 0.5 * logistic(-10.0 * x),
            (EtaFamily::G6, 4, 1) => 0.5 * logistic(-50.0 * (x - 0.3)),
            _ => 0.0,
        }
    }

    /// Predictors `η_1..η_{G−1}` at `(x1, x2)`.
    pub fn eta(&self, x1: f64, x2: f64) -> Vec<f64> {
        (0..self.g - 1)
            .map(|g| self.intercept(g) + self.effect(g, 0, x1) + self.effect(g, 1, x2))
            .collect()
    }

    /// True effect `s_gj` on `grid`, centered by its mean over the observed
    /// covariate values `data_x` in the same way as the estimates.
    pub fn centered_effect(&self, g: usize, j: usize, grid: &[f64], data_x: &[f64]) -> Vec<f64> {
        let offset = data_x.iter().map(|&x| self.effect(g, j, x)).sum::<f64>() / data_x.len().max(1) as f64;
        grid.iter().map(|&x| self.effect(g, j, x) - offset).collect()
    }
}

/// Simulated data with the values that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub scenario: String,
    pub seed: u64,
    pub replicate: u64,
    pub data: Dataset,
    /// Zero-based true component of every unit.
    pub allocations: Vec<usize>,
    /// `eta[i][g]`: true predictors of unit `i`.
    pub eta: Vec<Vec<f64>>,
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Draws `n` units from `scenario` using stream 0 of `seed`.
pub fn generate(scenario: &Scenario, n: usize, seed: u64) -> Result<SyntheticDataset> {
    generate_replicate(scenario, n, seed, 0)
}

/// Draws replicate `replicate` of `scenario`; replicates use disjoint streams
/// of the same seed.
pub fn generate_replicate(
    scenario: &Scenario,
    n: usize,
    seed: u64,
    replicate: u64,
) -> Result<SyntheticDataset> {
    scenario.validate()?;
    if n < 1 {
        return Err(Error::Config("a simulated dataset needs at least one unit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut x = DMatrix::zeros(n, 2);
    let mut eta = Vec::with_capacity(n);
    let mut allocations = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for i in 0..n {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        let e = scenario.eta(x1, x2);
        let k = categorical(&gating_probs(&e), &mut rng);
        let y: Vec<usize> = scenario.theta[k]
            .theta
            .iter()
            .map(|p| categorical(p, &mut rng))
            .collect();
        eta.push(e);
        allocations.push(k);
        responses.push(y);
    }
    let width = n.to_string().len();
    let data = Dataset::new(
        (1..=n).map(|i| format!("{i:0width$}")).collect(),
        (1..=scenario.categories.len()).map(|q| format!("y{q}")).collect(),
        scenario.categories.clone(),
        responses,
        Vec::new(),
        DMatrix::zeros(n, 0),
        COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        x,
    )?;
    Ok(SyntheticDataset {
        scenario: scenario.name.clone(),
        seed,
        replicate,
        data,
        allocations,
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn table_entries() {
        let s = scenario_g2();
        assert_eq!(s.theta[0].theta[1], vec![0.2, 0.8]);
        s.validate().unwrap();
        let s6 = scenario_g6();
        s6.validate().unwrap();
        assert_eq!(s6.theta[4].theta[0], vec![0.1, 0.7, 0.2]);
        assert_eq!(s6.theta[3].theta[4], vec![0.2, 0.1, 0.7]);
        assert_eq!(s6.theta[5].theta[11], vec![0.7, 0.1, 0.2]);
    }

    #[test]
    fn g2_predictor_values() {
        let s = scenario_g2();
        let want = -2.0 * (-0.5f64).exp() - 0.5;
        assert!((s.eta(0.5, 0.5)[0] - want).abs() < 1e-12);
        assert!((want + 1.7131).abs() < 1e-4);
        for x in [0.0, 0.1, 0.37, 0.5] {
            assert!((s.effect(0, 1, x) - s.effect(0, 1, 1.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn g6_predictor_values() {
        let s = scenario_g6();
        for x2 in [0.0, 0.4, 1.0] {
            assert!((s.eta(0.0, x2)[1] + 0.3).abs() < 1e-12);
        }
        assert!((s.eta(0.0, 0.3)[4] - 0.5).abs() < 1e-12);
        assert_eq!(s.eta(0.2, 0.9).len(), 5);
    }

    #[test]
    fn predictors_match_closed_form() {
        use std::f64::consts::PI;
        let s = scenario_g6();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let t = 2.5 * a + 0.5;
            let e = s.eta(a, b);
            let lg = |z: f64| z.exp() / (1.0 + z.exp());
            let want = [
                0.7 * ((3.0 * PI * a).sin() * (-a).exp() + (3.0 * b - 1.5).powi(2)) - 0.5,
                0.5 * (-a * a).exp() - 0.8,
                0.5 * (6.0 * a - 1.0).sin() + (-16.0 * (3.0 * a - 0.5).powi(2)).exp() + lg(-30.0 * (b - 0.3)),
                0.6 * (3.4827 * t - 4.7422 * t.powi(2) + 3.3035 * t.powi(3) - 1.2605 * t.powi(4)
                    + 0.251 * t.powi(5)
                    - 0.0204 * t.powi(6)
                    + lg(-20.0 * (b - 0.4))),
                0.5 * (lg(-10.0 * a) + lg(-50.0 * (b - 0.3))),
            ];
            for (x, y) in e.iter().zip(want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generated_truth_is_recorded() {
        let s = scenario_g6();
        let d = generate(&s, 50, 4).unwrap();
        for i in 0..50 {
            let e = s.eta(d.data.smooth[(i, 0)], d.data.smooth[(i, 1)]);
            assert_eq!(e, d.eta[i]);
        }
        assert_eq!(d.data.n(), 50);
        assert_eq!(d.data.q(), 12);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = scenario_g2();
        assert_eq!(generate(&s, 40, 7).unwrap(), generate(&s, 40, 7).unwrap());
        assert_ne!(generate(&s, 40, 7).unwrap().data, generate(&s, 40, 8).unwrap().data);
        assert_ne!(
            generate_replicate(&s, 40, 7, 1).unwrap().data,
            generate_replicate(&s, 40, 7, 2).unwrap().data
        );
    }

    #[test]
    fn component_frequencies_match_mean_weights() {
        let s = scenario_g2();
        let n = 100_000;
        let d = generate(&s, n, 5).unwrap();
        let freq = d.allocations.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
        // independent Monte Carlo integral of the weight over the covariate square
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 400_000;
        let mut acc = 0.0;
        for _ in 0..m {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            acc += gating_probs(&s.eta(a, b))[0];
        }
        let p = acc / m as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "{freq} vs {p}");
    }

    #[test]
    fn flat_predictors_give_equal_weights() {
        let s = Scenario::flat(scenario_g2().theta).unwrap();
        let n = 20_000;
        let d = generate(&s, n, 6).unwrap();
        let freq = d.allocations.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn responses_follow_the_probability_tables() {
        let s = scenario_g2();
        let n = 100_000;
        let d = generate(&s, n, 8).unwrap();
        for g in 0..2 {
            let units: Vec<usize> = (0..n).filter(|&i| d.allocations[i] == g).collect();
            for (q, p) in s.theta[g].theta.iter().enumerate() {
                let mut counts = vec![0.0; p.len()];
                for &i in &units {
                    counts[d.data.response(i)[q]] += 1.0;
                }
                let total = units.len() as f64;
                let stat: f64 = counts
                    .iter()
                    .zip(p)
                    .map(|(o, pr)| (o - total * pr).powi(2) / (total * pr))
                    .sum();
                let chi = ChiSquared::new((p.len() - 1) as f64).unwrap();
                assert!(1.0 - chi.cdf(stat) > 0.001, "g{g} q{q}: {stat}");
            }
        }
    }

    #[test]
    fn centered_truth_averages_to_zero_on_the_data() {
        let s = scenario_g2();
        let x: Vec<f64> = (0..97).map(|i| (i as f64 * 0.618).fract()).collect();
        let c = s.centered_effect(0, 0, &x, &x);
        assert!(c.iter().sum::<f64>().abs() < 1e-10);
    }
}
