//! Model-selection and clustering-quality metrics.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// AIC Monte Carlo criterion `2 (l̄ − s²_l)` of a log-likelihood sequence,
/// with the `(count − 1)` variance denominator. Larger is better.
pub fn aicm(loglik: &[f64]) -> Result<f64> {
    if loglik.len() < 2 {
        return Err(Error::Input(format!(
            "AICM needs at least two log-likelihood values, got {}",
            loglik.len()
        )));
    }
    if let Some(v) = loglik.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite log-likelihood {v}")));
    }
    let n = loglik.len() as f64;
    let mean = loglik.iter().sum::<f64>() / n;
    let var = loglik.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(2.0 * (mean - var))
}

/// AICM on the deviance scale, `−2 (l̄ − s²_l)`. Smaller is better.
pub fn aicm_deviance(loglik: &[f64]) -> Result<f64> {
    aicm(loglik).map(|v| -v)
}

/// Contingency table of two labelings: the distinct labels of each (sorted)
/// and the count matrix indexed by their positions.
pub fn contingency(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Vec<usize>, DMatrix<usize>)> {
    if a.len() != b.len() {
        return Err(Error::Conformability(format!(
            "partitions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let index = |p: &[usize]| -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &v in p {
            m.entry(v).or_insert(0);
        }
        for (k, slot) in m.values_mut().enumerate() {
            *slot = k;
        }
        m
    };
    let (ia, ib) = (index(a), index(b));
    let mut table = DMatrix::zeros(ia.len(), ib.len());
    for (x, y) in a.iter().zip(b) {
        table[(ia[x], ib[y])] += 1;
    }
    Ok((ia.into_keys().collect(), ib.into_keys().collect(), table))
}

fn pairs(k: f64) -> f64 {
    k * (k - 1.0) / 2.0
}

/// Chance-corrected pair agreement `(index − expected) / (max − expected)`.
/// When both partitions are trivial (the denominator vanishes) they agree
/// perfectly and 1 is returned.
fn adjusted(index: f64, sum_a: f64, sum_b: f64, total: f64) -> f64 {
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom.abs() <= 1e-12 * total.max(1.0) {
        1.0
    } else {
        (index - expected) / denom
    }
}

/// Hubert–Arabie adjusted Rand index of two hard partitions. Labels are
/// arbitrary identifiers.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let (_, _, table) = contingency(a, b)?;
    if a.len() < 2 {
        return Err(Error::Input("ARI needs at least two units".into()));
    }
    let index: f64 = table.iter().map(|&c| pairs(c as f64)).sum();
    let rows: f64 = table.row_iter().map(|r| pairs(r.sum() as f64)).sum();
    let cols: f64 = table.column_iter().map(|c| pairs(c.sum() as f64)).sum();
    Ok(adjusted(index, rows, cols, pairs(a.len() as f64)))
}

fn check_soft(name: &str, m: &DMatrix<f64>) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "row {} of the {name} allocation matrix is not on the simplex",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Soft adjusted Rand index. Co-membership indicators of a unit pair are
/// replaced by their expectations `u_i·u_j` under the allocation
/// probabilities; on 0/1 matrices this is exactly [`ari`].
pub fn sari(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if u.nrows() != v.nrows() {
        return Err(Error::Conformability(format!(
            "allocation matrices have {} and {} rows",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.nrows() < 2 {
        return Err(Error::Input("sARI needs at least two units".into()));
    }
    check_soft("first", u)?;
    check_soft("second", v)?;
    let uu: Vec<f64> = u.row_iter().map(|r| r.norm_squared()).collect();
    let vv: Vec<f64> = v.row_iter().map(|r| r.norm_squared()).collect();
    // Σ_{i<j} a_ij b_ij = (‖U'V‖² − Σ_i |u_i|²|v_i|²) / 2
    let cross = u.transpose() * v;
    let diag: f64 = uu.iter().zip(&vv).map(|(a, b)| a * b).sum();
    let index = 0.5 * (cross.norm_squared() - diag);
    let sum_a = 0.5 * (u.row_sum().norm_squared() - uu.iter().sum::<f64>());
    let sum_b = 0.5 * (v.row_sum().norm_squared() - vv.iter().sum::<f64>());
    Ok(adjusted(index, sum_a, sum_b, pairs(u.nrows() as f64)))
}

/// One-hot matrix of a zero-based labeling with `g` columns.
pub fn one_hot(labels: &[usize], g: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), g, |i, k| f64::from(u8::from(labels[i] == k)))
}

/// A function tabulated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Conformability(format!(
                "{} grid points for {} values",
                grid.len(),
                values.len()
            )));
        }
        Ok(Curve { grid, values })
    }
}

/// Root average squared error between two curves on the same grid.
pub fn rase(estimated: &Curve, truth: &Curve) -> Result<f64> {
    if estimated.grid.is_empty() {
        return Err(Error::Input("RASE needs a non-empty grid".into()));
    }
    let same = estimated.grid.len() == truth.grid.len()
        && estimated
            .grid
            .iter()
            .zip(&truth.grid)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same || estimated.values.len() != truth.values.len() {
        return Err(Error::Conformability(
            "RASE curves are tabulated on different grids".into(),
        ));
    }
    let n = estimated.values.len() as f64;
    let ss: f64 = estimated
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((ss / n).sqrt())
}

/// Matches estimated labels to reference labels so that the number of
/// co-classified units is maximal. Returns `map[k]` = reference label of
/// estimated label `k`, for `k < g_est`; when `g_est > g_ref` the surplus
/// estimated labels map to fresh indices `g_ref, g_ref + 1, …`.
pub fn match_labels(estimated: &[usize], g_est: usize, reference: &[usize], g_ref: usize) -> Result<Vec<usize>> {
    if estimated.len() != reference.len() {
        return Err(Error::Conformability(format!(
            "partitions have lengths {} and {}",
            estimated.len(),
            reference.len()
        )));
    }
    if let Some(v) = estimated.iter().find(|&&v| v >= g_est) {
        return Err(Error::Input(format!("label {v} outside 0..{g_est}")));
    }
    if let Some(v) = reference.iter().find(|&&v| v >= g_ref) {
        return Err(Error::Input(format!("label {v} outside 0..{g_ref}")));
    }
    let size = g_est.max(g_ref);
    if size == 0 {
        return Ok(Vec::new());
    }
    let mut weights = DMatrix::<i64>::zeros(size, size);
    for (&e, &r) in estimated.iter().zip(reference) {
        weights[(e, r)] += 1;
    }
    let assignment = max_weight_assignment(&weights);
    Ok(assignment.into_iter().take(g_est).collect())
}

/// Assignment of rows to columns of a square matrix with maximal total
/// weight (Hungarian method with potentials, O(n³)). Returns `col[row]`.
pub fn max_weight_assignment(weights: &DMatrix<i64>) -> Vec<usize> {
    let n = weights.nrows();
    assert_eq!(n, weights.ncols(), "assignment needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let top = weights.iter().copied().max().unwrap_or(0);
    let cost = |i: usize, j: usize| top - weights[(i, j)];
    // one-based rows and columns; column 0 is a sentinel
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[owner[j] - 1] = j - 1;
    }
    col
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aicm_examples() {
        assert_eq!(aicm(&[-3.0, -3.0, -3.0]).unwrap(), -6.0);
        assert_eq!(aicm(&[0.0, 2.0]).unwrap(), -2.0);
        assert_eq!(aicm(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(aicm_deviance(&[1.0, 2.0, 3.0]).unwrap(), -2.0);
        assert!(aicm(&[1.0]).is_err());
        assert!(aicm(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        assert!((ari(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap() + 0.5).abs() < 1e-15);
        assert!(ari(&[1, 2], &[1, 2, 3]).is_err());
        assert_eq!(ari(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0);
    }

    #[test]
    fn sari_examples() {
        let a = one_hot(&[0, 0, 1, 1], 2);
        let b = one_hot(&[0, 1, 0, 1], 2);
        assert!((sari(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((sari(&a, &b).unwrap() + 0.5).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 1.0, 0.0]);
        assert!(sari(&bad, &bad).is_err());
    }

    #[test]
    fn sari_uniform_rows_match_pair_sum() {
        let u = DMatrix::from_element(6, 2, 0.5);
        let v = one_hot(&[0, 0, 0, 1, 1, 0], 2);
        let (mut idx, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for i in 0..6 {
            for j in i + 1..6 {
                let a = u.row(i).dot(&u.row(j));
                let b = v.row(i).dot(&v.row(j));
                idx += a * b;
                sa += a;
                sb += b;
            }
        }
        let e = sa * sb / 15.0;
        let oracle = (idx - e) / (0.5 * (sa + sb) - e);
        assert!((sari(&u, &v).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn rase_examples() {
        let g: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let a = Curve::new(g.clone(), vec![0.1, 0.4, -0.3, 2.0, 1.0]).unwrap();
        let b = Curve::new(g.clone(), a.values.iter().map(|v| v - 0.7).collect()).unwrap();
        assert_eq!(rase(&a, &a).unwrap(), 0.0);
        assert!((rase(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        let shifted = Curve::new(g.iter().map(|x| x + 0.1).collect(), a.values.clone()).unwrap();
        assert!(rase(&a, &shifted).is_err());
    }

    #[test]
    fn label_matching_recovers_permutation() {
        let truth = [0, 0, 1, 1, 2, 2, 2];
        let est = [2, 2, 0, 0, 1, 1, 0];
        let map = match_labels(&est, 3, &truth, 3).unwrap();
        assert_eq!(map, vec![1, 2, 0]);
        let more = match_labels(&[0, 1, 2, 3], 4, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(more.len(), 4);
        let mut sorted = more.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }
}
