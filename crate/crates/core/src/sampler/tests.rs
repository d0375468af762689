use super::*;
use crate::basis::{build_bspline_basis, build_penalty};
use crate::model::gating_probs;
use nalgebra::DMatrix;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn tiny_dataset(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.random()).collect();
    let responses: Vec<Vec<usize>> = (0..n)
        .map(|_| vec![r.random_range(0..2), r.random_range(0..3)])
        .collect();
    Dataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        vec!["a".into(), "b".into()],
        vec![2, 3],
        responses,
        vec![],
        DMatrix::zeros(n, 0),
        vec!["x".into()],
        DMatrix::from_vec(n, 1, x),
    )
    .unwrap()
}

#[test]
fn spline_precision_loses_penalty_as_tau2_grows() {
    let basis = build_bspline_basis(&grid(20), 6, (0.0, 1.0)).unwrap();
    let penalty = build_penalty(6).unwrap();
    let w = vec![1.0; 20];
    let t = vec![0.0; 20];
    let (p, _) = spline_conditional(&basis, &penalty, 1e14, &w, &t);
    let gram = basis.weighted_gram(&w);
    assert!((p - gram).abs().max() < 1e-12);
}

#[test]
fn spline_mean_matches_dense_solve() {
    let x: Vec<f64> = (0..20).map(|i| ((i * 7919) % 20) as f64 / 19.0).collect();
    let basis = build_bspline_basis(&x, 5, (0.0, 1.0)).unwrap();
    let penalty = build_penalty(5).unwrap();
    let target: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
    let w = vec![1.0; 20];
    let tau2 = 0.8;
    let draw = sample_spline_coeffs(&basis, &penalty, tau2, &w, &target, &mut rng(1)).unwrap();

    let b = basis.design();
    let d = crate::basis::difference_matrix(5);
    let p = b.transpose() * &b + d.transpose() * &d / tau2;
    let rhs = b.transpose() * DVector::from_vec(target);
    let mean = p.clone().lu().solve(&rhs).unwrap();
    assert!((&draw.mean - mean).abs().max() < 1e-10);
    assert!((draw.precision - p).abs().max() < 1e-10);
    let sums = basis.column_sums();
    assert!(sums.dot(&draw.beta).abs() < 1e-9);
}

#[test]
fn spline_draw_covariance_matches_precision_inverse() {
    let basis = build_bspline_basis(&grid(30), 5, (0.0, 1.0)).unwrap();
    let penalty = build_penalty(5).unwrap();
    let w: Vec<f64> = (0..30).map(|i| 1.0 / (1.0 + (i % 4) as f64)).collect();
    let target = vec![0.3; 30];
    let (p, b) = spline_conditional(&basis, &penalty, 2.0, &w, &target);
    let cov = p.clone().try_inverse().unwrap();
    let mut r = rng(2);
    let reps = 40_000;
    let mut acc = DMatrix::<f64>::zeros(5, 5);
    let mean = p.clone().lu().solve(&b).unwrap();
    for _ in 0..reps {
        let d = draw_from_precision(p.clone(), &b, &mut r).unwrap();
        let e = &d.value - &mean;
        acc += &e * e.transpose();
    }
    acc /= reps as f64;
    for a in 0..5 {
        for c in 0..5 {
            let se = ((cov[(a, a)] * cov[(c, c)] + cov[(a, c)].powi(2)) / reps as f64).sqrt();
            assert!((acc[(a, c)] - cov[(a, c)]).abs() < 5.0 * se, "({a},{c})");
        }
    }
}

#[test]
fn fixed_effects_zero_target_gives_zero_mean() {
    let x = DMatrix::from_fn(15, 2, |i, c| if c == 0 { 1.0 } else { i as f64 / 14.0 });
    let (p, b) = fixed_effects_conditional(&x, 1e12, &[1.0; 15], &[0.0; 15]);
    let mean = p.lu().solve(&b).unwrap();
    assert!(mean.abs().max() < 1e-14);
}

#[test]
fn fixed_effects_without_data_is_prior() {
    let x = DMatrix::<f64>::zeros(0, 3);
    let (p, b) = fixed_effects_conditional(&x, 100.0, &[], &[]);
    assert_eq!(p, DMatrix::identity(3, 3) / 100.0);
    assert!(b.iter().all(|v| *v == 0.0));
    let mut r = rng(3);
    let reps = 20_000;
    let mut ss = 0.0;
    for _ in 0..reps {
        let d = sample_fixed_effects(&x, 100.0, &[], &[], &mut r).unwrap();
        ss += d.value[1].powi(2);
    }
    let var = ss / reps as f64;
    // sd of the sample variance of a N(0, 100) is 100 * sqrt(2 / reps)
    assert!((var - 100.0).abs() < 5.0 * 100.0 * (2.0 / reps as f64).sqrt());
}

#[test]
fn fixed_effects_mean_is_ridge_wls() {
    let n = 25;
    let x = DMatrix::from_fn(n, 3, |i, c| match c {
        0 => 1.0,
        1 => (i as f64 * 0.37).cos(),
        _ => (i % 5) as f64,
    });
    let w: Vec<f64> = (0..n).map(|i| 1.0 / (0.5 + (i % 3) as f64)).collect();
    let t: Vec<f64> = (0..n).map(|i| (i as f64).sqrt() - 2.0).collect();
    let v = 4.0;
    let draw = sample_fixed_effects(&x, v, &w, &t, &mut rng(4)).unwrap();

    let wm = DMatrix::from_diagonal(&DVector::from_vec(w));
    let lhs = x.transpose() * &wm * &x + DMatrix::identity(3, 3) / v;
    let rhs = x.transpose() * &wm * DVector::from_vec(t);
    let oracle = lhs.lu().solve(&rhs).unwrap();
    assert!((draw.mean - oracle).abs().max() < 1e-10);
}

#[test]
fn singular_precision_is_ridged_once() {
    let mut p = DMatrix::<f64>::identity(3, 3);
    p[(2, 2)] = 0.0;
    let (_, ridged) = factor_precision(p).unwrap();
    assert!(ridged);
    let mut neg = DMatrix::<f64>::identity(2, 2);
    neg[(1, 1)] = -1.0;
    assert!(matches!(factor_precision(neg), Err(Error::Numerical(_))));
}

#[test]
fn inverse_gamma_shape_for_default_prior() {
    let penalty = build_penalty(23).unwrap();
    let (shape, rate) = smoothing_variance_posterior(&[0.4; 23], &penalty, 1.0, 0.005);
    assert_eq!(shape, 12.0);
    assert!((rate - 0.005).abs() < 1e-15);
}

#[test]
fn inverse_gamma_rate_is_half_squared_differences() {
    let beta = [0.3, -1.2, 0.8, 2.5, -0.1, 0.05];
    let penalty = build_penalty(6).unwrap();
    let (shape, rate) = smoothing_variance_posterior(&beta, &penalty, 1.0, 0.005);
    let diffs: f64 = beta.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    assert_eq!(shape, 3.5);
    assert!((rate - (0.005 + 0.5 * diffs)).abs() < 1e-12);
}

#[test]
fn inverse_gamma_draws_have_the_right_mean() {
    let mut r = rng(5);
    let (shape, rate) = (12.0, 3.0);
    let reps = 100_000;
    let draws: Vec<f64> = (0..reps)
        .map(|_| sample_inverse_gamma(shape, rate, &mut r).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / reps as f64;
    let expect = rate / (shape - 1.0);
    let sd = expect / (shape - 2.0).sqrt();
    assert!((mean - expect).abs() < 4.0 * sd / (reps as f64).sqrt());
}

#[test]
fn dirichlet_counts_and_moments() {
    let data = Dataset::new(
        (0..4).map(|i| i.to_string()).collect(),
        vec!["v".into()],
        vec![3],
        vec![vec![0], vec![0], vec![1], vec![0]],
        vec![],
        DMatrix::zeros(4, 0),
        vec![],
        DMatrix::zeros(4, 0),
    )
    .unwrap();
    let alpha = dirichlet_posterior(&[0, 0, 0, 0], &data, 2, 1.0);
    assert_eq!(alpha[0][0], vec![4.0, 2.0, 1.0]);
    assert_eq!(alpha[1][0], vec![1.0, 1.0, 1.0]);

    let mut r = rng(6);
    let reps = 100_000;
    let mut sum = [0.0; 3];
    for _ in 0..reps {
        let (p, _) = sample_dirichlet(&alpha[0][0], &mut r).unwrap();
        for k in 0..3 {
            sum[k] += p[k];
        }
    }
    let a0: f64 = 7.0;
    for (k, a) in [4.0, 2.0, 1.0].into_iter().enumerate() {
        let m = a / a0;
        let sd = (m * (1.0 - m) / (a0 + 1.0)).sqrt();
        assert!((sum[k] / reps as f64 - m).abs() < 3.0 * sd / (reps as f64).sqrt());
    }
}

#[test]
fn dirichlet_underflow_is_lifted() {
    let (p, underflow) = sample_dirichlet(&[1e-300, 1e-300, 50.0], &mut rng(7)).unwrap();
    assert!(p.iter().all(|v| *v > 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(underflow);
}

#[test]
fn identical_thetas_reduce_to_gating() {
    let theta = ComponentParams {
        theta: vec![vec![0.2, 0.5, 0.3], vec![0.9, 0.1]],
    };
    let table = log_theta_table(&[theta.clone(), theta.clone(), theta]);
    let eta = [0.4, -1.3];
    let lw = log_gating_probs(&eta);
    let p = allocation_probs(&lw, &table, &[2, 1]).unwrap();
    for (a, b) in p.iter().zip(gating_probs(&eta)) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn dominant_component_is_selected() {
    let strong = ComponentParams {
        theta: vec![vec![1.0 - 1e-12, 1e-12]],
    };
    let weak = ComponentParams {
        theta: vec![vec![1e-12, 1.0 - 1e-12]],
    };
    let table = log_theta_table(&[weak, strong]);
    let p = allocation_probs(&log_gating_probs(&[0.0]), &table, &[0]).unwrap();
    assert!(p[1] > 1.0 - 1e-10);
}

#[test]
fn two_component_allocation_matches_scalar_product() {
    let t1 = ComponentParams {
        theta: vec![vec![0.7, 0.1, 0.2], vec![0.2, 0.8]],
    };
    let t2 = ComponentParams {
        theta: vec![vec![0.2, 0.7, 0.1], vec![0.7, 0.3]],
    };
    let eta = 0.9f64;
    let p1 = eta.exp() / (1.0 + eta.exp());
    let p2 = 1.0 / (1.0 + eta.exp());
    let y = [0, 1];
    let a = p1 * 0.7 * 0.8;
    let b = p2 * 0.2 * 0.3;
    let table = log_theta_table(&[t1, t2]);
    let p = allocation_probs(&log_gating_probs(&[eta]), &table, &y).unwrap();
    assert!((p[0] - a / (a + b)).abs() < 1e-12);
    assert!((p[1] - b / (a + b)).abs() < 1e-12);
}

#[test]
fn underflowing_masses_fall_back_to_uniform() {
    let data = tiny_dataset(3, 8);
    let zero = ComponentParams {
        theta: vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0]],
    };
    let comps = vec![zero.clone(), zero];
    let lw = vec![vec![f64::NEG_INFINITY, f64::NEG_INFINITY]; 3];
    let (alloc, fallbacks) = sample_allocations(&data, &lw, &comps, &mut rng(9));
    assert_eq!(fallbacks, 3);
    assert!(alloc.iter().all(|&a| a < 2));
}

#[test]
fn chain_is_deterministic_under_seed() {
    let data = tiny_dataset(30, 10);
    let mut prior = PriorConfig::default();
    prior.m = 6;
    let cfg = ChainConfig::new(2, 10, 0, 42, prior);
    let a = run_chain(&data, &cfg).unwrap();
    let b = run_chain(&data, &cfg).unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
    let its: Vec<usize> = a.draws.iter().map(|d| d.iteration).collect();
    assert_eq!(its, (1..=10).collect::<Vec<_>>());
    assert!(a.logliks().iter().all(|l| l.is_finite()));
}

#[test]
fn thinning_and_burnin_set_retained_count() {
    let data = tiny_dataset(15, 11);
    let mut prior = PriorConfig::with_variant(Variant::Parametric);
    prior.m = 5;
    let mut cfg = ChainConfig::new(3, 23, 5, 1, prior);
    cfg.thin = 4;
    let store = run_chain(&data, &cfg).unwrap();
    assert_eq!(store.len(), cfg.retained());
    assert_eq!(store.len(), 4);
    let its: Vec<usize> = store.draws.iter().map(|d| d.iteration).collect();
    assert_eq!(its, store.iterations().collect::<Vec<_>>());
}

#[test]
fn single_component_skips_gating() {
    let data = tiny_dataset(25, 12);
    let mut prior = PriorConfig::default();
    prior.m = 5;
    let cfg = ChainConfig::new(1, 4000, 0, 13, prior);
    let store = run_chain(&data, &cfg).unwrap();
    assert!(store.draws.iter().all(|d| d.gamma.nrows() == 0 && d.beta.is_empty()));
    assert!(store.draws.iter().all(|d| d.alloc.iter().all(|&a| a == 0)));
    // posterior mean of the first variable's probabilities is Dir(1 + counts)
    let mut counts = [1.0f64; 2];
    for i in 0..data.n() {
        counts[data.response(i)[0]] += 1.0;
    }
    let a0 = counts[0] + counts[1];
    let mean = store.draws.iter().map(|d| d.theta[0].theta[0][0]).sum::<f64>() / store.len() as f64;
    let m = counts[0] / a0;
    let sd = (m * (1.0 - m) / (a0 + 1.0)).sqrt();
    assert!((mean - m).abs() < 4.0 * sd / (store.len() as f64).sqrt());
}

#[test]
fn sweep_keeps_invariants_for_every_variant() {
    let data = tiny_dataset(40, 14);
    for variant in [Variant::Semiparametric, Variant::Parametric, Variant::Blca] {
        let mut prior = PriorConfig::with_variant(variant);
        prior.m = 6;
        prior.h = 3;
        let design = GatingDesign::build(&data, variant, 6).unwrap();
        let mut r = rng(15);
        let mut s = GibbsSampler::new(&data, design, 3, prior, &mut r).unwrap();
        s.check_invariants = true;
        for _ in 0..30 {
            s.sweep(&data, &mut r).unwrap();
            let st = s.state();
            assert!(st.components.iter().all(|c| c.is_simplex_valid(1e-12)));
            assert!(st.gating.tau2.iter().flatten().all(|t| *t > 0.0));
            if variant == Variant::Semiparametric {
                for (g, betas) in st.gating.beta.iter().enumerate() {
                    for (j, b) in betas.iter().enumerate() {
                        let sums = s.design().smooth[j].column_sums();
                        assert!(sums.dot(b).abs() < 1e-8, "component {g}");
                    }
                }
            }
            if variant == Variant::Blca {
                let w = st.weights.as_ref().unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let lw = st.log_weights(0);
                for (a, b) in lw.iter().zip(w) {
                    assert!((a.exp() - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn utilities_agree_with_allocations_after_each_block() {
    let data = tiny_dataset(30, 16);
    let mut prior = PriorConfig::default();
    prior.m = 5;
    let design = GatingDesign::build(&data, Variant::Semiparametric, 5).unwrap();
    let mut r = rng(17);
    let mut s = GibbsSampler::new(&data, design, 3, prior, &mut r).unwrap();
    s.check_invariants = false;
    for _ in 0..20 {
        let before = s.state().aug.alloc.clone();
        s.update_gating_component(0, &mut r).unwrap();
        s.update_gating_component(1, &mut r).unwrap();
        let st = s.state();
        for g in 0..2 {
            for i in 0..data.n() {
                assert_eq!(st.aug.z[g][i] > 0.0, before[i] == g);
            }
        }
        s.sweep(&data, &mut r).unwrap();
    }
}

#[test]
fn cached_predictor_matches_recomputation() {
    let data = tiny_dataset(30, 18);
    let mut prior = PriorConfig::default();
    prior.m = 7;
    let design = GatingDesign::build(&data, Variant::Semiparametric, 7).unwrap();
    let mut r = rng(19);
    let mut s = GibbsSampler::new(&data, design, 3, prior, &mut r).unwrap();
    for _ in 0..10 {
        s.sweep(&data, &mut r).unwrap();
    }
    for g in 0..2 {
        let direct = crate::model::linear_predictor(s.design(), &s.state().gating, g).unwrap();
        for (a, b) in direct.iter().zip(&s.state().eta()[g]) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let prior = PriorConfig::default();
    assert!(ChainConfig::new(0, 10, 0, 1, prior.clone()).validate().is_err());
    assert!(ChainConfig::new(2, 10, 10, 1, prior.clone()).validate().is_err());
    let mut c = ChainConfig::new(2, 10, 0, 1, prior);
    c.thin = 0;
    assert!(c.validate().is_err());
}

#[test]
fn store_round_trips_through_disk() {
    let data = tiny_dataset(12, 20);
    let mut prior = PriorConfig::default();
    prior.m = 5;
    let cfg = ChainConfig::new(3, 6, 2, 21, prior);
    let store = run_chain(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.write_dir(dir.path()).unwrap();
    let back = DrawStore::read_dir(dir.path()).unwrap();
    assert_eq!(store, back);
}

#[test]
fn store_rejects_inflated_manifest() {
    let data = tiny_dataset(12, 22);
    let mut prior = PriorConfig::with_variant(Variant::Blca);
    prior.m = 5;
    let cfg = ChainConfig::new(2, 4, 0, 23, prior);
    let store = run_chain(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.write_dir(dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"n\": 12", "\"n\": 1000000000000")).unwrap();
    assert!(matches!(DrawStore::read_dir(dir.path()), Err(Error::Data(_))));
}
