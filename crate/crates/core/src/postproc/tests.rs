use super::*;
use crate::model::{gating_probs, ComponentParams, Dataset, GatingParams, PriorConfig};
use crate::sampler::ChainConfig;
use rand_distr::{Distribution, Normal};

fn thetas(g: usize) -> Vec<ComponentParams> {
    // well separated probability tables, one per component
    (0..g)
        .map(|k| {
            let a = 0.1 + 0.8 * k as f64 / (g.max(2) - 1) as f64;
            ComponentParams {
                theta: vec![vec![a, 1.0 - a], vec![1.0 - a, a * 0.5, a * 0.5]],
            }
        })
        .collect()
}

fn dataset(n: usize) -> Dataset {
    Dataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        vec!["a".into(), "b".into()],
        vec![2, 3],
        (0..n).map(|i| vec![i % 2, i % 3]).collect(),
        vec![],
        DMatrix::zeros(n, 0),
        vec!["x".into()],
        DMatrix::from_fn(n, 1, |i, _| (i as f64 / (n - 1) as f64).powf(1.3)),
    )
    .unwrap()
}

/// Chain of `t` draws around the given tables with small noise, allocations
/// cycling through the components.
fn synthetic_store(g: usize, t: usize, n: usize, seed: u64) -> (DrawStore, GatingDesign) {
    let data = dataset(n);
    let mut prior = PriorConfig::default();
    prior.m = 6;
    let design = GatingDesign::build(&data, Variant::Semiparametric, 6).unwrap();
    let config = ChainConfig::new(g, t, 0, seed, prior);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let base = thetas(g);
    let draws = (0..t)
        .map(|s| {
            let theta = base
                .iter()
                .map(|c| ComponentParams {
                    theta: c
                        .theta
                        .iter()
                        .map(|p| {
                            let raw: Vec<f64> =
                                p.iter().map(|v| (v + noise.sample(&mut rng)).max(1e-3)).collect();
                            let tot: f64 = raw.iter().sum();
                            raw.into_iter().map(|v| v / tot).collect()
                        })
                        .collect(),
                })
                .collect();
            let mut gating = GatingParams::zeros(g, &design, 0.5);
            for k in 0..g.saturating_sub(1) {
                gating.gamma[(k, 0)] = k as f64 + noise.sample(&mut rng);
                gating.beta[k][0] = DVector::from_fn(6, |r, _| (r as f64 - 2.5) * (k as f64 + 1.0) * 0.1);
                gating.tau2[k][0] = 0.1 * (k + 1) as f64;
            }
            Draw {
                iteration: s + 1,
                gamma: gating.gamma,
                beta: gating.beta,
                tau2: gating.tau2,
                theta,
                alloc: (0..n).map(|i| ((i + s) % g) as u16).collect(),
                loglik: -100.0 - s as f64,
            }
        })
        .collect();
    let store = DrawStore {
        config,
        dataset_digest: data.digest(),
        n,
        categories: data.categories.clone(),
        fixed_names: design.fixed_names.clone(),
        basis_sizes: vec![6],
        diagnostics: Default::default(),
        draws,
    };
    (store, design)
}

fn probs_of(draw: &Draw, design: &GatingDesign, i: usize) -> Vec<f64> {
    let k = draw.gamma.nrows();
    let eta: Vec<f64> = (0..k)
        .map(|g| {
            let mut e: f64 = (0..draw.gamma.ncols()).map(|c| design.fixed[(i, c)] * draw.gamma[(g, c)]).sum();
            for (j, b) in design.smooth.iter().enumerate() {
                e += b.rows()[i].dot(draw.beta[g][j].as_slice());
            }
            e
        })
        .collect();
    gating_probs(&eta)
}

#[test]
fn kmeans_separates_obvious_clusters() {
    let pts: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i % 3) as f64 * 10.0 + (i as f64 * 0.01), 1.0])
        .collect();
    let fit = kmeans(&pts, 3, &KMeansConfig::with_seed(1)).unwrap();
    for i in 0..30 {
        assert_eq!(fit.labels[i], fit.labels[i % 3]);
    }
    assert!(is_permutation(&fit.labels[..3]));
    let again = kmeans(&pts, 3, &KMeansConfig::with_seed(1)).unwrap();
    assert_eq!(fit, again);
    assert!(kmeans(&pts, 31, &KMeansConfig::with_seed(1)).is_err());
}

#[test]
fn no_switching_means_identity() {
    let (store, _) = synthetic_store(3, 40, 9, 2);
    let r = relabel(&store).unwrap();
    assert_eq!(r.non_permutation_count, 0);
    assert!(r.permutation_log.iter().all(|z| z == &vec![0, 1, 2]));
    assert_eq!(r.draws, store);
}

#[test]
fn single_component_is_trivial() {
    let (store, _) = synthetic_store(1, 5, 6, 3);
    let r = relabel(&store).unwrap();
    assert_eq!(r.non_permutation_count, 0);
    assert_eq!(r.draws, store);
}

#[test]
fn fixed_permutation_on_every_third_iteration_is_undone() {
    let (store, design) = synthetic_store(3, 60, 9, 4);
    let sigma = [2usize, 0, 1];
    let mut switched = store.clone();
    for (s, d) in switched.draws.iter_mut().enumerate() {
        if s % 3 == 0 {
            *d = permute_draw(d, &sigma);
        }
    }
    let r = relabel(&switched).unwrap();
    assert_eq!(r.non_permutation_count, 0);
    for (s, z) in r.permutation_log.iter().enumerate() {
        let want: Vec<usize> = if s % 3 == 0 { invert_permutation(&sigma) } else { vec![0, 1, 2] };
        assert_eq!(z, &want);
    }
    for (a, b) in r.draws.draws.iter().zip(&store.draws) {
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.alloc, b.alloc);
        assert!((&a.gamma - &b.gamma).abs().max() < 1e-12);
        for i in 0..9 {
            for (p, q) in probs_of(a, &design, i).iter().zip(probs_of(b, &design, i)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn permuting_preserves_gating_probabilities() {
    let (store, design) = synthetic_store(4, 1, 7, 5);
    let d = &store.draws[0];
    for zeta in [[1usize, 0, 2, 3], [3, 2, 1, 0], [0, 3, 1, 2]] {
        let p = permute_draw(d, &zeta);
        assert_eq!(p.loglik, d.loglik);
        let inv = invert_permutation(&zeta);
        assert_eq!(invert_permutation(&inv), zeta.to_vec());
        for i in 0..7 {
            let old = probs_of(d, &design, i);
            let new = probs_of(&p, &design, i);
            for k in 0..4 {
                assert!((new[k] - old[inv[k]]).abs() < 1e-12);
            }
            assert_eq!(p.alloc[i] as usize, zeta[d.alloc[i] as usize]);
        }
    }
}

#[test]
fn map_rule_examples() {
    let m = DMatrix::from_row_slice(3, 3, &[10.0, 5.0, 0.0, 7.0, 7.0, 0.0, 2.0, 9.0, 9.0]);
    assert_eq!(map_from_counts(&m), vec![0, 0, 1]);
}

#[test]
fn map_equivariant_under_global_relabeling() {
    let (store, _) = synthetic_store(3, 11, 9, 6);
    let base = RelabeledDraws {
        draws: store.clone(),
        permutation_log: vec![],
        non_permutation_count: 0,
    };
    let sigma = [1usize, 2, 0];
    let mut moved = base.clone();
    for d in moved.draws.draws.iter_mut() {
        *d = permute_draw(d, &sigma);
    }
    let a = map_allocation(&base);
    let b = map_allocation(&moved);
    // ties break toward the smallest label, so compare on the frequency level
    let fa = allocation_frequencies(&base);
    let fb = allocation_frequencies(&moved);
    for i in 0..9 {
        for g in 0..3 {
            assert_eq!(fa[(i, g)], fb[(i, sigma[g])]);
        }
        if fa.row(i).iter().filter(|v| **v == fa[(i, a[i])]).count() == 1 {
            assert_eq!(b[i], sigma[a[i]]);
        }
    }
}

#[test]
fn nonempty_counts() {
    assert_eq!(count_nonempty(&[2, 2, 2], 4), 1);
    assert_eq!(count_nonempty(&[0, 1, 2, 3], 4), 4);
    assert_eq!(count_nonempty(&[0, 0, 2], 3), 2);
}

#[test]
fn nearest_rank_percentiles() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(percentile_sorted(&v, 0.0), 1.0);
    assert_eq!(percentile_sorted(&v, 50.0), 2.0);
    assert_eq!(percentile_sorted(&v, 97.5), 4.0);
    assert_eq!(percentile_sorted(&[3.0, 8.0], 2.5), 3.0);
    assert_eq!(percentile_sorted(&[3.0, 8.0], 97.5), 8.0);
}

fn with_betas(store: &DrawStore, betas: &[Vec<f64>]) -> RelabeledDraws {
    let mut s = store.clone();
    s.draws.truncate(betas.len());
    s.config.iters = betas.len();
    for (d, b) in s.draws.iter_mut().zip(betas) {
        d.beta[0][0] = DVector::from_vec(b.clone());
    }
    RelabeledDraws {
        draws: s,
        permutation_log: vec![],
        non_permutation_count: 0,
    }
}

#[test]
fn zero_and_constant_coefficients_give_zero_curves() {
    let (store, design) = synthetic_store(2, 4, 12, 7);
    let spec = BandSpec::default();
    let grid = covariate_grid(&design, 0, 101);
    for b in [vec![0.0; 6], vec![1.7; 6]] {
        let r = with_betas(&store, &[b.clone(), b.clone(), b]);
        let (band, clamped) = smooth_band(&r, &design, 0, 0, &grid, &spec).unwrap();
        assert_eq!(clamped, 0);
        for k in 0..101 {
            assert!(band.mean[k].abs() < 1e-12);
            assert!((band.upper[k] - band.lower[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn two_draw_band_is_the_envelope() {
    let (store, design) = synthetic_store(2, 2, 12, 8);
    let b1: Vec<f64> = (0..6).map(|r| (r as f64).sin()).collect();
    let b2: Vec<f64> = (0..6).map(|r| (r as f64 * 0.7).cos() * 2.0).collect();
    let r = with_betas(&store, &[b1, b2]);
    let grid = covariate_grid(&design, 0, 101);
    let (curves, _) = effect_draws(&r, &design, 0, 0, &grid).unwrap();
    let (band, _) = smooth_band(&r, &design, 0, 0, &grid, &BandSpec::default()).unwrap();
    for k in 0..101 {
        assert_eq!(band.lower[k], curves[0][k].min(curves[1][k]));
        assert_eq!(band.upper[k], curves[0][k].max(curves[1][k]));
        assert!(band.lower[k] <= band.mean[k] && band.mean[k] <= band.upper[k]);
    }
}

#[test]
fn centered_curves_average_to_zero_over_the_data() {
    let (store, design) = synthetic_store(3, 5, 12, 9);
    let r = RelabeledDraws {
        draws: store,
        permutation_log: vec![],
        non_permutation_count: 0,
    };
    let x = design.smooth_values[0].clone();
    let (curves, _) = effect_draws(&r, &design, 1, 0, &x).unwrap();
    for c in curves {
        assert!(c.iter().sum::<f64>().abs() < 1e-10);
    }
}

#[test]
fn out_of_range_grid_points_are_clamped() {
    let (store, design) = synthetic_store(2, 3, 12, 10);
    let r = RelabeledDraws {
        draws: store,
        permutation_log: vec![],
        non_permutation_count: 0,
    };
    let (curves, clamped) = effect_draws(&r, &design, 0, 0, &[-1.0, 0.0, 2.0, 1.0]).unwrap();
    assert_eq!(clamped, 2);
    assert_eq!(curves[0][0], curves[0][1]);
    assert_eq!(curves[0][2], curves[0][3]);
    assert!(effect_draws(&r, &design, 1, 0, &[0.5]).is_err());
}

#[test]
fn summary_is_consistent() {
    let (store, design) = synthetic_store(3, 20, 9, 11);
    let r = relabel(&store).unwrap();
    let s = FitSummary::build(&r, &design, &["x".into()], &BandSpec::default()).unwrap();
    assert!(s.map_partition.iter().all(|&c| (1..=3).contains(&c)));
    assert!(s.nonempty_components <= 3);
    assert_eq!(s.cluster_sizes.iter().sum::<usize>(), 9);
    assert_eq!(s.smooth_effects.len(), 2);
    assert_eq!(s.aicm, -s.aicm_deviance);
    for band in &s.smooth_effects {
        assert_eq!(band.covariate_name, "x");
        for k in 0..band.grid.len() {
            assert!(band.lower[k] <= band.mean[k] && band.mean[k] <= band.upper[k]);
        }
    }
    let json = serde_json::to_string(&s).unwrap();
    let back: FitSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, s);
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn relabeling_preserves_loglik(seed in 0u64..1000, g in 2usize..5) {
            let (store, _) = synthetic_store(g, 12, 8, seed);
            let r = relabel(&store).unwrap();
            prop_assert_eq!(r.draws.logliks(), store.logliks());
            for (z, d) in r.permutation_log.iter().zip(&r.draws.draws) {
                if is_permutation(z) {
                    let inv = invert_permutation(z);
                    let round: Vec<usize> = (0..g).map(|k| z[inv[k]]).collect();
                    prop_assert_eq!(round, (0..g).collect::<Vec<_>>());
                }
                prop_assert_eq!(d.gamma.nrows(), g - 1);
            }
        }

        #[test]
        fn bands_enclose_the_mean(seed in 0u64..1000, lo in 0.0f64..50.0, hi in 50.0f64..100.0) {
            let (mut store, design) = synthetic_store(2, 9, 10, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for d in store.draws.iter_mut() {
                d.beta[0][0] = DVector::from_fn(6, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            }
            let r = RelabeledDraws { draws: store, permutation_log: vec![], non_permutation_count: 0 };
            let spec = BandSpec { points: 21, lower: lo, upper: hi };
            let grid = covariate_grid(&design, 0, 21);
            let (band, _) = smooth_band(&r, &design, 0, 0, &grid, &spec).unwrap();
            for k in 0..21 {
                prop_assert!(band.lower[k] <= band.mean[k] && band.mean[k] <= band.upper[k]);
            }
        }
    }
}
