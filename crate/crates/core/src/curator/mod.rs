//! Scoring and selection of successful rollouts.
//!
//! Deviation from the demonstration is measured as the nearest-neighbor
//! distance to the expert states in a normalized task subspace. Quantiles of the
//! per-rollout peak deviation define a tube `[r_min, r_max]`; rollouts that
//! stay inside it score highest. A DCT embedding plus an RBF kernel feed a greedy
//! DPP that drops redundant rollouts, and the proposal is refit to what remains.

mod dct;
mod dpp;

pub use dct::{dct_ii, step_features, DctEmbedder};
pub use dpp::{
    build_kernel, dpp_select_greedy, dpp_select_greedy_with_tol, median_bandwidth, pairwise_distances, DppSelection,
    Kernel,
};

use serde::{Deserialize, Serialize};

use crate::env::{Environment, State, Trajectory};
use crate::error::{Error, Result};
use crate::sampler::Proposal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuratorConfig {
    pub q_min: f64,
    pub q_max: f64,
    pub k_dct: usize,
    /// Padded embedding length; the environment horizon when unset.
    pub t_tilde: Option<usize>,
    /// Fixed RBF bandwidth; the median pairwise distance when unset.
    pub sigma_rbf: Option<f64>,
    /// DPP subset size as a fraction of the successes, rounded up.
    pub subset_fraction: f64,
    pub dpp_eps: f64,
    /// Stop selecting once the best candidate's conditional variance drops below this.
    pub redundancy_tol: f64,
    pub weight_temperature: f64,
}

impl Default for CuratorConfig {
    fn default() -> Self {
        CuratorConfig {
            q_min: 0.2,
            q_max: 0.8,
            k_dct: 8,
            t_tilde: None,
            sigma_rbf: None,
            subset_fraction: 0.8,
            dpp_eps: 1e-6,
            redundancy_tol: 1e-4,
            weight_temperature: 0.1,
        }
    }
}

impl CuratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.q_min && self.q_min < self.q_max && self.q_max <= 1.0) {
            return Err(Error::Config("curator needs 0 <= q_min < q_max <= 1".into()));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::Config("subset_fraction must be in (0, 1]".into()));
        }
        if !(self.dpp_eps > 0.0 && self.weight_temperature > 0.0) {
            return Err(Error::Config("dpp_eps and weight_temperature must be positive".into()));
        }
        if self.sigma_rbf.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("sigma_rbf must be positive".into()));
        }
        if self.k_dct == 0 {
            return Err(Error::Config("k_dct must be at least 1".into()));
        }
        Ok(())
    }

    /// `m = ceil(fraction * successes)`.
    pub fn subset_size(&self, successes: usize) -> usize {
        ((self.subset_fraction * successes as f64).ceil() as usize).clamp(1, successes.max(1))
    }
}

/// Fewer successes than this and the previous tube is reused.
pub const MIN_TUBE_SUCCESSES: usize = 5;

fn normalize(features: &[f64], scales: &[f64]) -> Vec<f64> {
    features.iter().zip(scales).map(|(f, s)| f / s).collect()
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("task scales must be positive and finite"));
    }
    Ok(())
}

/// `min_j ‖(ψ(s) - ψ(s^E_j)) / scales‖`.
pub fn manifold_distance<F>(s: &[f64], expert_states: &[State], psi: F, scales: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let manifold = ExpertManifold::from_states(expert_states, &psi, scales)?;
    Ok(manifold.distance_features(&psi(s)))
}

/// `max_t` of [`manifold_distance`] over every state of `traj`.
pub fn peak_deviation<F>(traj: &Trajectory, expert_states: &[State], psi: F, scales: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let manifold = ExpertManifold::from_states(expert_states, &psi, scales)?;
    Ok(traj
        .states
        .iter()
        .map(|s| manifold.distance_features(&psi(s)))
        .fold(0.0, f64::max))
}

/// Expert states pre-projected into the normalized task subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertManifold {
    points: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl ExpertManifold {
    pub fn from_states<F>(expert_states: &[State], psi: F, scales: &[f64]) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        if expert_states.is_empty() {
            return Err(Error::invalid("expert state sequence is empty"));
        }
        check_scales(scales)?;
        let points: Vec<Vec<f64>> = expert_states.iter().map(|s| normalize(&psi(s), scales)).collect();
        if points.iter().any(|p| p.len() != scales.len()) {
            return Err(Error::invalid("task features and scales differ in length"));
        }
        Ok(ExpertManifold {
            points,
            scales: scales.to_vec(),
        })
    }

    pub fn for_env(env: &dyn Environment, expert_states: &[State]) -> Result<Self> {
        Self::from_states(expert_states, |s| env.task_features(s), &env.task_scales())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance of raw (unnormalized) task features to the nearest expert point.
    pub fn distance_features(&self, features: &[f64]) -> f64 {
        let x = normalize(features, &self.scales);
        self.points
            .iter()
            .map(|p| p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    pub fn distance(&self, env: &dyn Environment, state: &[f64]) -> f64 {
        self.distance_features(&env.task_features(state))
    }

    /// `d_t` for every state of the trajectory.
    pub fn deviations(&self, env: &dyn Environment, traj: &Trajectory) -> Vec<f64> {
        traj.states.iter().map(|s| self.distance(env, s)).collect()
    }
}

/// Linear-interpolation quantile: `h = q (n - 1)`, interpolate between the
/// neighboring order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty list"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("quantile input contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= v.len() {
        return Ok(v[v.len() - 1]);
    }
    Ok(v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeBounds {
    pub r_min: f64,
    pub r_max: f64,
    pub iteration: usize,
}

impl TubeBounds {
    pub fn new(r_min: f64, r_max: f64, iteration: usize) -> Result<Self> {
        if !(r_min >= 0.0 && r_max >= r_min) {
            return Err(Error::invalid(format!("invalid tube [{r_min}, {r_max}]")));
        }
        Ok(TubeBounds { r_min, r_max, iteration })
    }

    pub fn contains(&self, d: f64) -> bool {
        (self.r_min..=self.r_max).contains(&d)
    }
}

/// Quantile tube over the successful peak deviations of one iteration.
///
/// With fewer than [`MIN_TUBE_SUCCESSES`] peaks the previous tube comes back
/// unchanged; without one that is [`Error::TubeUnavailable`].
pub fn compute_tube(
    peaks: &[f64],
    q_min: f64,
    q_max: f64,
    previous: Option<&TubeBounds>,
    iteration: usize,
) -> Result<TubeBounds> {
    if !(0.0 <= q_min && q_min < q_max && q_max <= 1.0) {
        return Err(Error::invalid(format!("need 0 <= q_min < q_max <= 1, got {q_min}, {q_max}")));
    }
    if peaks.len() < MIN_TUBE_SUCCESSES {
        return previous.copied().ok_or(Error::TubeUnavailable {
            successes: peaks.len(),
            required: MIN_TUBE_SUCCESSES,
        });
    }
    TubeBounds::new(quantile(peaks, q_min)?, quantile(peaks, q_max)?, iteration)
}

/// `(1/(T+1)) Σ_t [1 - ReLU(r_min - d_t) - ReLU(d_t - r_max)]`.
pub fn tube_reward(deviations: &[f64], tube: &TubeBounds) -> f64 {
    if deviations.is_empty() {
        return 0.0;
    }
    let total: f64 = deviations
        .iter()
        .map(|d| 1.0 - (tube.r_min - d).max(0.0) - (d - tube.r_max).max(0.0))
        .sum();
    total / deviations.len() as f64
}

/// `w_i = exp((R_i - max R) / temperature)`.
pub fn reward_to_weight(rewards: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("weight temperature must be positive"));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(rewards.iter().map(|r| ((r - max) / temperature).exp()).collect())
}

/// Weighted moment matching of a diagonal Gaussian:
/// `mu' = Σ w c / (Σ w + eps)`, `var' = Σ w (c - mu')² / (Σ w + eps) + delta`.
///
/// An empty selection leaves the distribution as is; both that and an all-zero
/// weight vector mark the result as stalled.
pub fn update_proposal(q: &Proposal, selected: &[&[f64]], weights: &[f64], eps: f64, delta: f64) -> Result<Proposal> {
    if !(eps >= 0.0 && delta >= 0.0) {
        return Err(Error::invalid("stability term and variance floor must be non-negative"));
    }
    if selected.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} selected samples but {} weights",
            selected.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let dim = q.mean.len();
    if selected.iter().any(|c| c.len() != dim) {
        return Err(Error::invalid("selected control points do not match the proposal dimension"));
    }
    if selected.is_empty() {
        return Ok(Proposal {
            iteration: q.iteration + 1,
            stalled: true,
            ..q.clone()
        });
    }
    let total: f64 = weights.iter().sum();
    let denom = total + eps;
    if denom == 0.0 {
        return Err(Error::invalid("all weights are zero and the stability term is zero"));
    }
    let mut mean = vec![0.0; dim];
    for (c, w) in selected.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(c.iter()) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= denom);
    let mut var = vec![0.0; dim];
    for (c, w) in selected.iter().zip(weights) {
        for ((s, v), m) in var.iter_mut().zip(c.iter()).zip(&mean) {
            *s += w * (v - m).powi(2);
        }
    }
    let std = var.into_iter().map(|s| (s / denom + delta).sqrt()).collect();
    Ok(Proposal {
        mean,
        std,
        points: q.points,
        dim: q.dim,
        iteration: q.iteration + 1,
        stalled: total == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvParams, EpisodeContext};

    fn ident(s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }

    fn traj_of(states: Vec<State>) -> Trajectory {
        Trajectory {
            actions: vec![vec![0.0]; states.len() - 1],
            context: EpisodeContext {
                start: states[0].clone(),
                params: EnvParams::default(),
            },
            states,
            success: true,
            origin: None,
            start_step: 0,
        }
    }

    #[test]
    fn distance_examples() {
        let experts = vec![vec![0.0], vec![1.0]];
        assert_eq!(manifold_distance(&[1.0], &experts, ident, &[1.0]).unwrap(), 0.0);
        assert!((manifold_distance(&[0.4], &experts, ident, &[1.0]).unwrap() - 0.4).abs() < 1e-15);
        assert!((manifold_distance(&[0.4], &experts, ident, &[2.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!(manifold_distance(&[0.4], &[], ident, &[1.0]).is_err());
        assert!(manifold_distance(&[0.4], &experts, ident, &[0.0]).is_err());
    }

    #[test]
    fn peak_examples() {
        let experts: Vec<State> = (0..5).map(|i| vec![i as f64, 0.0]).collect();
        let replay = traj_of(experts.clone());
        assert_eq!(peak_deviation(&replay, &experts, ident, &[1.0, 1.0]).unwrap(), 0.0);
        let mut spiked = experts.clone();
        spiked[2][1] = 0.5;
        let t = traj_of(spiked);
        assert!((peak_deviation(&t, &experts, ident, &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantile_examples() {
        let v = [0.3, 0.1, 0.5, 0.2, 0.4];
        assert_eq!(quantile(&v, 0.0).unwrap(), 0.1);
        assert_eq!(quantile(&v, 1.0).unwrap(), 0.5);
        assert!((quantile(&v, 0.8).unwrap() - 0.42).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.37).unwrap(), 7.0);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&v, 1.5).is_err());
    }

    #[test]
    fn tube_examples() {
        let prev = TubeBounds::new(0.1, 0.5, 0).unwrap();
        assert_eq!(compute_tube(&[1.0; 4], 0.2, 0.8, Some(&prev), 3).unwrap(), prev);
        assert!(matches!(
            compute_tube(&[1.0; 4], 0.2, 0.8, None, 0),
            Err(Error::TubeUnavailable { successes: 4, required: 5 })
        ));
        let flat = compute_tube(&[0.3; 6], 0.2, 0.8, None, 1).unwrap();
        assert_eq!((flat.r_min, flat.r_max, flat.iteration), (0.3, 0.3, 1));
        assert!(compute_tube(&[0.3; 6], 0.8, 0.2, None, 1).is_err());
    }

    #[test]
    fn reward_examples() {
        let tube = TubeBounds::new(1.0, 2.0, 0).unwrap();
        assert_eq!(tube_reward(&[1.0, 1.5, 2.0], &tube), 1.0);
        assert_eq!(tube_reward(&[3.0; 4], &tube), 0.0);
        assert_eq!(tube_reward(&[0.5; 4], &tube), 0.5);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(reward_to_weight(&[0.3, 0.3], 0.1).unwrap(), vec![1.0, 1.0]);
        let w = reward_to_weight(&[1.0, 0.0], 1.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        let w = reward_to_weight(&[1.0, 0.0], 1e12).unwrap();
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-9));
        assert!(reward_to_weight(&[1.0], 0.0).is_err());
    }

    fn proposal(dim: usize) -> Proposal {
        Proposal {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            points: 1,
            dim,
            iteration: 0,
            stalled: false,
        }
    }

    #[test]
    fn update_single_sample_by_hand() {
        let q = proposal(1);
        let c = [1.0];
        let out = update_proposal(&q, &[&c], &[1.0], 1e-3, 1e-3).unwrap();
        let mu = 1.0 / 1.001;
        assert_eq!(out.mean[0], mu);
        assert_eq!(out.std[0], ((1.0 - mu) * (1.0 - mu) / 1.001 + 1e-3).sqrt());
        assert_eq!(out.iteration, 1);
        assert!(!out.stalled);
    }

    #[test]
    fn update_degenerate_inputs() {
        let q = proposal(2);
        let out = update_proposal(&q, &[], &[], 1e-3, 1e-3).unwrap();
        assert!(out.stalled);
        assert_eq!((out.mean.clone(), out.std.clone()), (q.mean.clone(), q.std.clone()));

        let a = [1.0, 2.0];
        let b = [3.0, -1.0];
        let out = update_proposal(&q, &[&a, &b], &[0.0, 0.0], 1e-3, 1e-3).unwrap();
        assert!(out.stalled);
        assert_eq!(out.mean, vec![0.0, 0.0]);
        assert!(out.std.iter().all(|s| *s == 1e-3f64.sqrt()));

        assert!(update_proposal(&q, &[&a], &[-1.0], 1e-3, 1e-3).is_err());
        assert!(update_proposal(&q, &[&a], &[1.0, 1.0], 1e-3, 1e-3).is_err());
        assert!(update_proposal(&q, &[&a[..1]], &[1.0], 1e-3, 1e-3).is_err());
    }
}
