//! Low-frequency DCT-II trajectory embedding.

use std::f64::consts::PI;

use crate::env::{Environment, Trajectory};
use crate::error::{Error, Result};

/// Orthonormal DCT-II basis row `k` at sample `t` for length `n`.
fn basis(n: usize, k: usize, t: usize) -> f64 {
    let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    s * (PI * (2 * t + 1) as f64 * k as f64 / (2 * n) as f64).cos()
}

/// Full orthonormal DCT-II of one signal.
pub fn dct_ii(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    (0..n)
        .map(|k| signal.iter().enumerate().map(|(t, x)| basis(n, k, t) * x).sum())
        .collect()
}

/// Per-step features `x_t = [ψ(s_t) / scales; a_t]` for `t = 0..T-1`.
pub fn step_features(env: &dyn Environment, traj: &Trajectory) -> Vec<Vec<f64>> {
    let scales = env.task_scales();
    traj.actions
        .iter()
        .zip(&traj.states)
        .map(|(a, s)| {
            let mut x: Vec<f64> = env.task_features(s).iter().zip(&scales).map(|(f, c)| f / c).collect();
            x.extend_from_slice(a);
            x
        })
        .collect()
}

/// Embeds per-step feature sequences by padding (repeating the final row) or
/// truncating to `T̃` rows, applying the DCT-II down each column and keeping
/// frequencies `1..=K`. The output is column-major: all `K` coefficients of
/// column 0, then column 1, and so on.
#[derive(Clone, Debug)]
pub struct DctEmbedder {
    t_tilde: usize,
    k_dct: usize,
    /// `basis[k - 1][t]` for the retained frequencies.
    rows: Vec<Vec<f64>>,
}

impl DctEmbedder {
    pub fn new(t_tilde: usize, k_dct: usize) -> Result<Self> {
        if k_dct == 0 || k_dct >= t_tilde {
            return Err(Error::invalid(format!(
                "need 1 <= K_dct < T̃, got K_dct = {k_dct}, T̃ = {t_tilde}"
            )));
        }
        let rows = (1..=k_dct)
            .map(|k| (0..t_tilde).map(|t| basis(t_tilde, k, t)).collect())
            .collect();
        Ok(DctEmbedder { t_tilde, k_dct, rows })
    }

    pub fn t_tilde(&self) -> usize {
        self.t_tilde
    }

    pub fn k_dct(&self) -> usize {
        self.k_dct
    }

    pub fn embed(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        let last = features.last().ok_or_else(|| Error::invalid("cannot embed an empty sequence"))?;
        let d = last.len();
        if features.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("per-step features differ in length"));
        }
        let row = |t: usize| if t < features.len() { &features[t] } else { last };
        let mut out = Vec::with_capacity(self.k_dct * d);
        for c in 0..d {
            for basis_row in &self.rows {
                out.push(basis_row.iter().enumerate().map(|(t, b)| b * row(t)[c]).sum());
            }
        }
        Ok(out)
    }

    pub fn embed_trajectory(&self, env: &dyn Environment, traj: &Trajectory) -> Result<Vec<f64>> {
        self.embed(&step_features(env, traj))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_columns_embed_to_zero() {
        let e = DctEmbedder::new(20, 8).unwrap();
        let phi = e.embed(&vec![vec![0.7, -3.0]; 20]).unwrap();
        assert_eq!(phi.len(), 16);
        assert!(phi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_frequency_input() {
        let n = 16;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|t| vec![(PI * (2 * t + 1) as f64 / (2 * n) as f64).cos()])
            .collect();
        let phi = DctEmbedder::new(n, 5).unwrap().embed(&x).unwrap();
        assert!((phi[0] - (n as f64 / 2.0).sqrt()).abs() < 1e-10);
        assert!(phi[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn padding_repeats_the_last_row() {
        let e = DctEmbedder::new(12, 4).unwrap();
        let short: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64]).collect();
        let mut long = short.clone();
        long.extend(std::iter::repeat_n(vec![7.0], 4));
        assert_eq!(e.embed(&short).unwrap(), e.embed(&long).unwrap());
        long.extend(std::iter::repeat_n(vec![-100.0], 3));
        assert_eq!(e.embed(&short).unwrap(), e.embed(&long).unwrap());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(DctEmbedder::new(8, 8).is_err());
        assert!(DctEmbedder::new(8, 0).is_err());
        assert!(DctEmbedder::new(8, 3).unwrap().embed(&[]).is_err());
    }
}
