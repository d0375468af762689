//! Label-switching resolution, MAP allocation and posterior summaries.
//!
//! Draws are relabeled by clustering the per-iteration category-probability
//! vectors of all components with k-means. An iteration whose components fall
//! into distinct clusters is permuted accordingly and its gating coefficients
//! are re-expressed against the new baseline; any other iteration is kept as
//! drawn and counted.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aicm, max_weight_assignment};
use crate::model::{GatingDesign, SmoothTerm, Variant};
use crate::sampler::{Diagnostics, Draw, DrawStore};

/// Settings of the k-means step used for relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Extra attempts with fresh seeds when no restart converges.
    pub max_reseeds: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn with_seed(seed: u64) -> Self {
        KMeansConfig {
            restarts: 25,
            max_iter: 300,
            max_reseeds: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

/// One Lloyd run from a k-means++ start; `None` if it did not converge.
fn lloyd<R: Rng>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> Option<KMeansFit> {
    let dim = points[0].len();
    let mut centers = plus_plus_init(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            let wcss = points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| sq_dist(p, &centers[l]))
                .sum();
            return Some(KMeansFit {
                labels,
                centers,
                wcss,
            });
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // an emptied cluster restarts at the point farthest from its center
                let far = points
                    .iter()
                    .zip(&labels)
                    .map(|(p, &l)| sq_dist(p, &centers[l]))
                    .enumerate()
                    .fold((0, -1.0), |b, (i, d)| if d > b.1 { (i, d) } else { b })
                    .0;
                centers[c] = points[far].clone();
                labels[far] = usize::MAX;
            }
        }
    }
    None
}

/// k-means with k-means++ starts; the restart with the smallest within-cluster
/// sum of squares is kept. Deterministic for a given configuration.
pub fn kmeans(points: &[Vec<f64>], k: usize, config: &KMeansConfig) -> Result<KMeansFit> {
    if points.is_empty() || k == 0 || k > points.len() {
        return Err(Error::Input(format!(
            "k-means with {k} clusters on {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Input("k-means points must be finite and of equal length".into()));
    }
    for attempt in 0..=config.max_reseeds {
        let fits: Vec<Option<KMeansFit>> = (0..config.restarts.max(1))
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((attempt * config.restarts.max(1) + r) as u64);
                lloyd(points, k, config.max_iter, &mut rng)
            })
            .collect();
        let best = fits
            .into_iter()
            .flatten()
            .reduce(|a, b| if b.wcss < a.wcss { b } else { a });
        if let Some(fit) = best {
            return Ok(fit);
        }
    }
    Err(Error::Numerical(format!(
        "k-means did not converge within {} iterations",
        config.max_iter
    )))
}

/// Whether `labels` is a permutation of `0..labels.len()`.
pub fn is_permutation(labels: &[usize]) -> bool {
    let mut seen = vec![false; labels.len()];
    for &l in labels {
        if l >= labels.len() || seen[l] {
            return false;
        }
        seen[l] = true;
    }
    true
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (g, &k) in perm.iter().enumerate() {
        inv[k] = g;
    }
    inv
}

/// Draws after label-switching resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabeledDraws {
    pub draws: DrawStore,
    /// Cluster index `S_g` of every component, per retained iteration.
    pub permutation_log: Vec<Vec<usize>>,
    pub non_permutation_count: usize,
}

impl RelabeledDraws {
    pub fn num_components(&self) -> usize {
        self.draws.num_components()
    }
}

/// Reorders the components of one draw: new component `k` is old component
/// `inv[k]`, and gating coefficients are re-expressed against the new
/// baseline.
pub fn permute_draw(draw: &Draw, zeta: &[usize]) -> Draw {
    let g = zeta.len();
    let inv = invert_permutation(zeta);
    let base = inv[g - 1];
    let p = draw.gamma.ncols();
    let gamma_row = |c: usize| -> Vec<f64> {
        if c == g - 1 {
            vec![0.0; p]
        } else {
            draw.gamma.row(c).iter().copied().collect()
        }
    };
    let gamma_base = gamma_row(base);
    let mut gamma = DMatrix::zeros(g - 1, p);
    for k in 0..g - 1 {
        let src = gamma_row(inv[k]);
        for c in 0..p {
            gamma[(k, c)] = src[c] - gamma_base[c];
        }
    }
    let js = draw.beta.first().map_or(0, Vec::len);
    let beta_of = |c: usize, j: usize| -> DVector<f64> {
        if c == g - 1 {
            DVector::zeros(draw.beta[0][j].len())
        } else {
            draw.beta[c][j].clone()
        }
    };
    let beta = (0..g - 1)
        .map(|k| (0..js).map(|j| beta_of(inv[k], j) - beta_of(base, j)).collect())
        .collect();
    // the old baseline carries no variance of its own; when it becomes a
    // non-baseline component its coefficients are those of the new baseline
    // negated, so it inherits that component's variances
    let tau2 = (0..g - 1)
        .map(|k| {
            let src = if inv[k] == g - 1 { base } else { inv[k] };
            draw.tau2[src].clone()
        })
        .collect();
    Draw {
        iteration: draw.iteration,
        gamma,
        beta,
        tau2,
        theta: inv.iter().map(|&c| draw.theta[c].clone()).collect(),
        alloc: draw.alloc.iter().map(|&a| zeta[a as usize] as u16).collect(),
        loglik: draw.loglik,
    }
}

/// Resolves label switching with the default k-means settings seeded from
/// the chain seed.
pub fn relabel(store: &DrawStore) -> Result<RelabeledDraws> {
    relabel_with(store, &KMeansConfig::with_seed(store.config.seed))
}

pub fn relabel_with(store: &DrawStore, config: &KMeansConfig) -> Result<RelabeledDraws> {
    if store.is_empty() {
        return Err(Error::Input("cannot relabel an empty draw store".into()));
    }
    let g = store.num_components();
    let t = store.len();
    if g == 1 {
        return Ok(RelabeledDraws {
            draws: store.clone(),
            permutation_log: vec![vec![0]; t],
            non_permutation_count: 0,
        });
    }
    let points: Vec<Vec<f64>> = store
        .draws
        .iter()
        .flat_map(|d| d.theta.iter().map(|c| c.flattened()))
        .collect();
    let fit = kmeans(&points, g, config)?;

    // name clusters after the components they most often hold so that a
    // chain without label switching is left in its original order
    let mut counts = DMatrix::<i64>::zeros(g, g);
    for (idx, &c) in fit.labels.iter().enumerate() {
        counts[(idx % g, c)] += 1;
    }
    let assign = max_weight_assignment(&counts);
    let mut cluster_name = vec![0; g];
    for (comp, &cluster) in assign.iter().enumerate() {
        cluster_name[cluster] = comp;
    }

    let mut out = store.clone();
    let mut log = Vec::with_capacity(t);
    let mut non_perm = 0;
    for (s, draw) in out.draws.iter_mut().enumerate() {
        let zeta: Vec<usize> = (0..g).map(|k| cluster_name[fit.labels[s * g + k]]).collect();
        if is_permutation(&zeta) {
            *draw = permute_draw(draw, &zeta);
        } else {
            non_perm += 1;
        }
        log.push(zeta);
    }
    Ok(RelabeledDraws {
        draws: out,
        permutation_log: log,
        non_permutation_count: non_perm,
    })
}

/// `n × G` posterior allocation frequencies `Σ_t D_gi / T`.
pub fn allocation_frequencies(relabeled: &RelabeledDraws) -> DMatrix<f64> {
    let store = &relabeled.draws;
    let mut freq = DMatrix::zeros(store.n, store.num_components());
    for d in &store.draws {
        for (i, &a) in d.alloc.iter().enumerate() {
            freq[(i, a as usize)] += 1.0;
        }
    }
    freq / store.len().max(1) as f64
}

/// MAP partition: the component holding each unit most often, ties going to
/// the smallest label. Labels are zero-based.
pub fn map_allocation(relabeled: &RelabeledDraws) -> Vec<usize> {
    map_from_counts(&allocation_frequencies(relabeled))
}

pub fn map_from_counts(counts: &DMatrix<f64>) -> Vec<usize> {
    counts
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Number of components with at least one unit under a partition.
pub fn count_nonempty(partition: &[usize], g: usize) -> usize {
    let mut hit = vec![false; g];
    for &c in partition {
        if c < g {
            hit[c] = true;
        }
    }
    hit.into_iter().filter(|h| *h).count()
}

/// Nearest-rank percentile of sorted values, `p ∈ [0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Pointwise summary of one smooth effect `s_gj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBand {
    /// Zero-based component index (never the baseline).
    pub component: usize,
    /// Zero-based smooth-covariate index.
    pub covariate: usize,
    pub covariate_name: String,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Requested band: grid size and percentile levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub points: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec {
            points: 101,
            lower: 2.5,
            upper: 97.5,
        }
    }
}

impl BandSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::Config("a band grid needs at least two points".into()));
        }
        if !(0.0..=100.0).contains(&self.lower)
            || !(0.0..=100.0).contains(&self.upper)
            || self.lower > self.upper
        {
            return Err(Error::Config(format!(
                "invalid percentiles {} and {}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Evenly spaced grid over the observed range of smooth covariate `j`.
pub fn covariate_grid(design: &GatingDesign, j: usize, points: usize) -> Vec<f64> {
    let (lo, hi) = design.smooth_ranges[j];
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Evaluates centered draws of `s_gj` on `grid`: each curve has its mean over
/// the observed covariate values subtracted. Returns one curve per draw and
/// the number of grid points clamped into the training range.
pub fn effect_draws(
    relabeled: &RelabeledDraws,
    design: &GatingDesign,
    g: usize,
    j: usize,
    grid: &[f64],
) -> Result<(Vec<Vec<f64>>, usize)> {
    let store = &relabeled.draws;
    if g + 1 >= store.num_components() {
        return Err(Error::Input(format!(
            "component {} has no smooth effect (baseline or out of range)",
            g + 1
        )));
    }
    let term = design
        .smooth_terms
        .get(j)
        .ok_or_else(|| Error::Input(format!("no smooth covariate {}", j + 1)))?;
    match term {
        SmoothTerm::Spline(b) => {
            let basis = &design.smooth[*b];
            let mut clamped = 0;
            let rows: Vec<_> = grid
                .iter()
                .map(|&x| {
                    let (row, c) = basis.evaluate(x);
                    clamped += usize::from(c);
                    row
                })
                .collect();
            let sums = basis.column_sums();
            let n = basis.num_rows() as f64;
            let curves = store
                .draws
                .iter()
                .map(|d| {
                    let beta = d.beta[g][*b].as_slice();
                    let offset = sums.as_slice().iter().zip(beta).map(|(s, b)| s * b).sum::<f64>() / n;
                    rows.iter().map(|r| r.dot(beta) - offset).collect()
                })
                .collect();
            Ok((curves, clamped))
        }
        SmoothTerm::Linear(col) => {
            let values = &design.smooth_values[j];
            let center = values.iter().map(|&x| design.rescale(j, x)).sum::<f64>() / values.len() as f64;
            let (lo, hi) = design.smooth_ranges[j];
            let clamped = grid.iter().filter(|&&x| x < lo || x > hi).count();
            let curves = store
                .draws
                .iter()
                .map(|d| {
                    let slope = d.gamma[(g, *col)];
                    grid.iter()
                        .map(|&x| slope * (design.rescale(j, x.clamp(lo, hi)) - center))
                        .collect()
                })
                .collect();
            Ok((curves, clamped))
        }
        SmoothTerm::Absent => Err(Error::Input(format!(
            "variant {} has no smooth effects",
            design.variant
        ))),
    }
}

/// Mean curve and pointwise percentile band of `s_gj` on `grid`. Points
/// outside the training range are clamped; their count is returned.
pub fn smooth_band(
    relabeled: &RelabeledDraws,
    design: &GatingDesign,
    g: usize,
    j: usize,
    grid: &[f64],
    spec: &BandSpec,
) -> Result<(SmoothBand, usize)> {
    let (curves, clamped) = effect_draws(relabeled, design, g, j, grid)?;
    let t = curves.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; curves.len()];
    for k in 0..grid.len() {
        for (slot, c) in column.iter_mut().zip(&curves) {
            *slot = c[k];
        }
        let m = column.iter().sum::<f64>() / t;
        column.sort_by(f64::total_cmp);
        // nearest-rank percentiles of very skewed draws can miss the mean;
        // the band is widened to keep it
        lower.push(percentile_sorted(&column, spec.lower).min(m));
        upper.push(percentile_sorted(&column, spec.upper).max(m));
        mean.push(m);
    }
    Ok((
        SmoothBand {
            component: g,
            covariate: j,
            covariate_name: String::new(),
            grid: grid.to_vec(),
            mean,
            lower,
            upper,
        },
        clamped,
    ))
}

/// Bands for every non-baseline component and smooth covariate, on evenly
/// spaced grids over the observed covariate ranges. Empty for the
/// covariate-free variant.
pub fn smooth_summary(
    relabeled: &RelabeledDraws,
    design: &GatingDesign,
    names: &[String],
    spec: &BandSpec,
) -> Result<Vec<SmoothBand>> {
    spec.validate()?;
    if design.variant == Variant::Blca {
        return Ok(Vec::new());
    }
    let g = relabeled.num_components();
    let js = design.smooth_terms.len();
    let jobs: Vec<(usize, usize)> = (0..g.saturating_sub(1))
        .flat_map(|gg| (0..js).map(move |j| (gg, j)))
        .collect();
    jobs.into_par_iter()
        .map(|(gg, j)| {
            let grid = covariate_grid(design, j, spec.points);
            let (mut band, _) = smooth_band(relabeled, design, gg, j, &grid, spec)?;
            band.covariate_name = names.get(j).cloned().unwrap_or_default();
            Ok(band)
        })
        .collect()
}

/// Posterior means of every parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeans {
    /// `theta[g][q][c]`.
    pub theta: Vec<Vec<Vec<f64>>>,
    /// `gamma[g][p]` for the non-baseline components.
    pub gamma: Vec<Vec<f64>>,
    /// `beta[g][j][ρ]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    /// `tau2[g][j]`.
    pub tau2: Vec<Vec<f64>>,
}

pub fn posterior_means(relabeled: &RelabeledDraws) -> PosteriorMeans {
    let store = &relabeled.draws;
    let t = store.len().max(1) as f64;
    let first = &store.draws[0];
    let mut theta: Vec<Vec<Vec<f64>>> = first
        .theta
        .iter()
        .map(|c| c.theta.iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();
    let mut gamma = vec![vec![0.0; first.gamma.ncols()]; first.gamma.nrows()];
    let mut beta: Vec<Vec<Vec<f64>>> = first
        .beta
        .iter()
        .map(|bs| bs.iter().map(|b| vec![0.0; b.len()]).collect())
        .collect();
    let mut tau2: Vec<Vec<f64>> = first.tau2.iter().map(|v| vec![0.0; v.len()]).collect();
    for d in &store.draws {
        for (acc, c) in theta.iter_mut().zip(&d.theta) {
            for (a, p) in acc.iter_mut().zip(&c.theta) {
                a.iter_mut().zip(p).for_each(|(x, y)| *x += y / t);
            }
        }
        for (k, row) in gamma.iter_mut().enumerate() {
            row.iter_mut().enumerate().for_each(|(c, x)| *x += d.gamma[(k, c)] / t);
        }
        for (acc, bs) in beta.iter_mut().zip(&d.beta) {
            for (a, b) in acc.iter_mut().zip(bs) {
                a.iter_mut().zip(b.iter()).for_each(|(x, y)| *x += y / t);
            }
        }
        for (acc, v) in tau2.iter_mut().zip(&d.tau2) {
            acc.iter_mut().zip(v).for_each(|(x, y)| *x += y / t);
        }
    }
    PosteriorMeans {
        theta,
        gamma,
        beta,
        tau2,
    }
}

/// Summary of one fit. Contains nothing run-dependent beyond the inputs, so
/// equal data, configuration and seed give an identical document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub variant: Variant,
    pub components: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub retained: usize,
    pub dataset_digest: String,
    pub knots: usize,
    pub mixture_size: usize,
    /// `2 (l̄ − s²_l)`; larger is better.
    pub aicm: f64,
    /// `−2 (l̄ − s²_l)`; smaller is better.
    pub aicm_deviance: f64,
    pub loglik_mean: f64,
    pub loglik_variance: f64,
    pub nonempty_components: usize,
    pub cluster_sizes: Vec<usize>,
    /// One-based MAP label of every unit, in dataset order.
    pub map_partition: Vec<usize>,
    pub non_permutation_count: usize,
    pub fixed_names: Vec<String>,
    pub posterior_means: PosteriorMeans,
    pub percentiles: (f64, f64),
    pub smooth_effects: Vec<SmoothBand>,
    pub diagnostics: Diagnostics,
}

impl FitSummary {
    pub fn build(
        relabeled: &RelabeledDraws,
        design: &GatingDesign,
        smooth_names: &[String],
        spec: &BandSpec,
    ) -> Result<Self> {
        let store = &relabeled.draws;
        let ll = store.logliks();
        let score = aicm(&ll)?;
        let n = ll.len() as f64;
        let mean = ll.iter().sum::<f64>() / n;
        let var = ll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let g = store.num_components();
        let map = map_allocation(relabeled);
        let mut sizes = vec![0; g];
        for &c in &map {
            sizes[c] += 1;
        }
        Ok(FitSummary {
            variant: store.config.prior.variant,
            components: g,
            iters: store.config.iters,
            burnin: store.config.burnin,
            thin: store.config.thin,
            seed: store.config.seed,
            retained: store.len(),
            dataset_digest: store.dataset_digest.clone(),
            knots: store.config.prior.m,
            mixture_size: store.config.prior.h,
            aicm: score,
            aicm_deviance: -score,
            loglik_mean: mean,
            loglik_variance: var,
            nonempty_components: count_nonempty(&map, g),
            cluster_sizes: sizes,
            map_partition: map.iter().map(|c| c + 1).collect(),
            non_permutation_count: relabeled.non_permutation_count,
            fixed_names: store.fixed_names.clone(),
            posterior_means: posterior_means(relabeled),
            percentiles: (spec.lower, spec.upper),
            smooth_effects: smooth_summary(relabeled, design, smooth_names, spec)?,
            diagnostics: store.diagnostics.clone(),
        })
    }
}

#[cfg(test)]
mod tests;
