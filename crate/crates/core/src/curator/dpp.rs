//! RBF similarity kernel and greedy log-det subset selection.

use crate::error::{Error, Result};

/// Symmetric `n x n` similarity matrix, row-major, with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    n: usize,
    data: Vec<f64>,
    pub sigma: f64,
}

impl Kernel {
    /// Wraps an arbitrary symmetric matrix.
    pub fn from_matrix(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!("kernel needs {} entries, got {}", n * n, data.len())));
        }
        for i in 0..n {
            for j in 0..i {
                if (data[i * n + j] - data[j * n + i]).abs() > 1e-12 {
                    return Err(Error::invalid("kernel is not symmetric"));
                }
            }
        }
        Ok(Kernel {
            n,
            data,
            sigma: f64::NAN,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_lengths(embeddings: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = embeddings.first() {
        if embeddings.iter().any(|e| e.len() != first.len()) {
            return Err(Error::invalid("embeddings differ in length"));
        }
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Upper-triangle pairwise Euclidean distances, row by row.
pub fn pairwise_distances(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_lengths(embeddings)?;
    let mut out = Vec::new();
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            out.push(sq_dist(&embeddings[i], &embeddings[j]).sqrt());
        }
    }
    Ok(out)
}

/// Median pairwise distance; falls back to the largest distance when the
/// median is zero and to 1 when every embedding coincides.
pub fn median_bandwidth(embeddings: &[Vec<f64>]) -> Result<f64> {
    let mut d = pairwise_distances(embeddings)?;
    if d.is_empty() {
        return Ok(1.0);
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    let max = d[n - 1];
    Ok(if median > 0.0 {
        median
    } else if max > 0.0 {
        max
    } else {
        1.0
    })
}

/// `L_ij = exp(-‖φ_i - φ_j‖² / (2 σ²))`, `L_ii = 1`.
pub fn build_kernel(embeddings: &[Vec<f64>], sigma: f64) -> Result<Kernel> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("kernel bandwidth must be positive"));
    }
    check_lengths(embeddings)?;
    let n = embeddings.len();
    let mut data = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = (-sq_dist(&embeddings[i], &embeddings[j]) / (2.0 * sigma * sigma)).exp();
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(Kernel { n, data, sigma })
}

/// Selected indices in pick order, with the log-det gain of each pick.
#[derive(Clone, Debug, PartialEq)]
pub struct DppSelection {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
}

impl DppSelection {
    /// `log det(L_S + εI)`.
    pub fn log_det(&self) -> f64 {
        self.gains.iter().sum()
    }
}

/// Greedy maximization of `log det(L_S + εI)`; returns `min(m, n)` indices.
pub fn dpp_select_greedy(kernel: &Kernel, m: usize, eps: f64) -> Result<DppSelection> {
    dpp_select_greedy_with_tol(kernel, m, eps, f64::NEG_INFINITY)
}

/// As [`dpp_select_greedy`], but stops early once the best remaining candidate
/// has a conditional variance `(L + εI)_ii - vᵀv - ε` below `redundancy_tol`,
/// i.e. it is (numerically) in the span of what is already selected.
pub fn dpp_select_greedy_with_tol(kernel: &Kernel, m: usize, eps: f64, redundancy_tol: f64) -> Result<DppSelection> {
    if m == 0 {
        return Err(Error::invalid("subset size must be at least 1"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("DPP regularizer must be positive"));
    }
    let n = kernel.n;
    let m = m.min(n);
    // Incremental Cholesky: c[i] holds row i of the factor restricted to the
    // selected columns; d2[i] the Schur complement of candidate i.
    let mut c: Vec<Vec<f64>> = vec![Vec::with_capacity(m); n];
    let mut d2: Vec<f64> = (0..n).map(|i| kernel.get(i, i) + eps).collect();
    let mut taken = vec![false; n];
    let mut sel = DppSelection {
        indices: Vec::with_capacity(m),
        gains: Vec::with_capacity(m),
    };
    while sel.indices.len() < m {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| d2[i] > d2[b]) {
                best = Some(i);
            }
        }
        let Some(j) = best else { break };
        if d2[j] - eps < redundancy_tol || d2[j] <= 0.0 {
            break;
        }
        taken[j] = true;
        sel.indices.push(j);
        sel.gains.push(d2[j].ln());
        let dj = d2[j].sqrt();
        let cj = c[j].clone();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dot: f64 = cj.iter().zip(&c[i]).map(|(a, b)| a * b).sum();
            let e = (kernel.get(j, i) - dot) / dj;
            c[i].push(e);
            d2[i] -= e * e;
        }
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn identity(n: usize) -> Kernel {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Kernel::from_matrix(n, data).unwrap()
    }

    #[test]
    fn identity_picks_in_index_order() {
        let s = dpp_select_greedy(&identity(5), 3, 1e-6).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2]);
        assert_eq!(dpp_select_greedy(&identity(2), 5, 1e-6).unwrap().indices.len(), 2);
    }

    #[test]
    fn duplicate_gain_closed_form() {
        // items 0 and 1 identical, item 2 orthogonal
        let eps = 1e-6;
        let k = Kernel::from_matrix(3, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = dpp_select_greedy(&k, 2, eps).unwrap();
        assert_eq!(s.indices, vec![0, 2]);
        // with 0 selected, the twin's pivot is (1 + eps) - 1/(1 + eps)
        let twin = (1.0 + eps) - 1.0 / (1.0 + eps);
        let sel = dpp_select_greedy(&Kernel::from_matrix(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(), 2, eps).unwrap();
        assert!((sel.gains[1] - twin.ln()).abs() < 1e-6);
        assert!(dpp_select_greedy_with_tol(&Kernel::from_matrix(2, vec![1.0; 4]).unwrap(), 2, eps, 1e-4)
            .unwrap()
            .indices
            .len()
            == 1);
    }

    #[test]
    fn log_det_matches_direct_determinant() {
        let emb: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.1]).collect();
        let k = build_kernel(&emb, 0.5).unwrap();
        let s = dpp_select_greedy(&k, 4, 1e-3).unwrap();
        let m = s.indices.len();
        let mut sub = vec![0.0; m * m];
        for (a, &i) in s.indices.iter().enumerate() {
            for (b, &j) in s.indices.iter().enumerate() {
                sub[a * m + b] = k.get(i, j) + if a == b { 1e-3 } else { 0.0 };
            }
        }
        assert!((linalg::log_det_spd(&sub, m).unwrap() - s.log_det()).abs() < 1e-10);
    }

    #[test]
    fn kernel_examples() {
        let same = build_kernel(&vec![vec![0.5, 1.0]; 3], 1.0).unwrap();
        assert!(same.as_slice().iter().all(|v| *v == 1.0));
        let sigma: f64 = 0.7;
        let k = build_kernel(&[vec![0.0], vec![sigma * 2f64.sqrt()]], sigma).unwrap();
        assert!((k.get(0, 1) - (-1.0f64).exp()).abs() < 1e-12);
        assert!(build_kernel(&[vec![0.0], vec![0.0, 1.0]], 1.0).is_err());
        assert!(build_kernel(&[vec![0.0]], 0.0).is_err());
        let wide = build_kernel(&[vec![0.0], vec![3.0]], 1e9).unwrap();
        assert!((wide.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_fallbacks() {
        assert_eq!(median_bandwidth(&vec![vec![1.0]; 4]).unwrap(), 1.0);
        assert_eq!(median_bandwidth(&[vec![0.0], vec![0.0], vec![0.0], vec![0.0], vec![2.0]]).unwrap(), 2.0);
        assert_eq!(median_bandwidth(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap(), 2.0);
    }
}
