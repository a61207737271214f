//! Control-point plan parameterization and the Gaussian proposal over it.
//!
//! A plan of `T` actions is encoded by `M` control points placed at equally
//! spaced knot times `t_j = j (T - 1) / (M - 1)` and decoded by piecewise-linear
//! interpolation. Plans are sampled from a diagonal Gaussian over the flattened
//! (point-major) control-point vector, rolled out, and only successes are kept.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{randomize_env_params, rollout, Action, EnvParams, Environment, ParamRanges, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Rollouts per iteration, `N`.
    pub samples: usize,
    /// Control points per plan, `M`.
    pub control_points: usize,
    /// Initial std as a fraction of each action dimension's range, floored
    /// at `sqrt(delta)`.
    pub sigma0_frac: f64,
    /// Variance floor.
    pub delta: f64,
    /// Stability term in the moment-matching denominator.
    pub eps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            samples: 64,
            control_points: 12,
            sigma0_frac: 0.01,
            delta: 1e-3,
            eps: 1e-3,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.control_points < 2 {
            return Err(Error::Config("sampler needs samples >= 1 and control_points >= 2".into()));
        }
        if !(self.sigma0_frac >= 0.0 && self.delta >= 0.0 && self.eps >= 0.0) {
            return Err(Error::Config("sigma0_frac, delta and eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// `M x d_a` control points stored row-major (point-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    points: usize,
    dim: usize,
    values: Vec<f64>,
}

impl ControlPoints {
    pub fn new(points: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid(format!("need at least 2 control points, got {points}")));
        }
        if dim == 0 || values.len() != points * dim {
            return Err(Error::invalid(format!(
                "expected {points} x {dim} control values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control points must be finite"));
        }
        Ok(ControlPoints { points, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("control point rows differ in length"));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `vec(C)`, point-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

/// A fixed linear map from control points to a `T`-step plan, given as sparse
/// interpolation weights per step.
pub trait Decoder: Send + Sync {
    fn weights(&self, points: usize, horizon: usize) -> Vec<Vec<(usize, f64)>>;
}

/// Piecewise-linear interpolation on a uniform knot grid.
#[derive(Clone, Copy, Debug, Default)]
pub struct PiecewiseLinear;

impl PiecewiseLinear {
    /// Knot position (in control-point index units) of continuous time `time`.
    fn locate(points: usize, horizon: usize, time: f64) -> (usize, f64) {
        if horizon <= 1 {
            return (0, 0.0);
        }
        let u = time * (points - 1) as f64 / (horizon - 1) as f64;
        let j = (u.floor().max(0.0) as usize).min(points - 2);
        (j, u - j as f64)
    }

    /// Evaluate the interpolant at continuous time `time ∈ [0, T - 1]`.
    pub fn evaluate(&self, c: &ControlPoints, horizon: usize, time: f64) -> Vec<f64> {
        let (j, f) = Self::locate(c.points, horizon, time);
        c.row(j)
            .iter()
            .zip(c.row(j + 1))
            .map(|(a, b)| (1.0 - f) * a + f * b)
            .collect()
    }

    /// Knot times `t_j = j (T - 1) / (M - 1)`.
    pub fn knot_times(points: usize, horizon: usize) -> Vec<f64> {
        (0..points)
            .map(|j| (j * horizon.saturating_sub(1)) as f64 / (points - 1) as f64)
            .collect()
    }
}

impl Decoder for PiecewiseLinear {
    fn weights(&self, points: usize, horizon: usize) -> Vec<Vec<(usize, f64)>> {
        (0..horizon)
            .map(|t| {
                if horizon <= 1 {
                    return vec![(0, 1.0)];
                }
                // integer arithmetic keeps knots that land on steps exact
                let num = t * (points - 1);
                let den = horizon - 1;
                let j = (num / den).min(points - 2);
                let f = (num - j * den) as f64 / den as f64;
                vec![(j, 1.0 - f), (j + 1, f)]
            })
            .collect()
    }
}

/// Decode with the default piecewise-linear decoder.
pub fn decode(c: &ControlPoints, horizon: usize) -> Result<Vec<Action>> {
    decode_with(&PiecewiseLinear, c, horizon)
}

pub fn decode_with(decoder: &dyn Decoder, c: &ControlPoints, horizon: usize) -> Result<Vec<Action>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok(decoder
        .weights(c.points, horizon)
        .iter()
        .map(|ws| {
            let mut a = vec![0.0; c.dim];
            for &(j, w) in ws {
                for (acc, v) in a.iter_mut().zip(c.row(j)) {
                    *acc += w * v;
                }
            }
            a
        })
        .collect())
}

/// Least-squares control points for a demonstrated plan, with the residual
/// sum of squares `‖G(C) - A‖²`.
pub fn fit_control_points_with_residual(actions: &[Action], points: usize) -> Result<(ControlPoints, f64)> {
    if points < 2 {
        return Err(Error::invalid(format!("need at least 2 control points, got {points}")));
    }
    let horizon = actions.len();
    if horizon < points {
        return Err(Error::invalid(format!(
            "demonstration has {horizon} steps, fewer than {points} control points"
        )));
    }
    let dim = actions[0].len();
    if dim == 0 || actions.iter().any(|a| a.len() != dim) {
        return Err(Error::invalid("demonstration actions must share a non-zero dimension"));
    }
    let weights = PiecewiseLinear.weights(points, horizon);
    let mut gram = vec![0.0; points * points];
    let mut rhs = vec![0.0; points * dim];
    for (ws, a) in weights.iter().zip(actions) {
        for &(i, wi) in ws {
            for &(j, wj) in ws {
                gram[i * points + j] += wi * wj;
            }
            for (d, v) in a.iter().enumerate() {
                rhs[i * dim + d] += wi * v;
            }
        }
    }
    let l = linalg::cholesky(&gram, points)?;
    let mut values = vec![0.0; points * dim];
    let mut column = vec![0.0; points];
    for d in 0..dim {
        for j in 0..points {
            column[j] = rhs[j * dim + d];
        }
        linalg::cholesky_solve_in_place(&l, points, &mut column);
        for j in 0..points {
            values[j * dim + d] = column[j];
        }
    }
    let c = ControlPoints::new(points, dim, values)?;
    let residual = decode(&c, horizon)?
        .iter()
        .zip(actions)
        .flat_map(|(x, a)| x.iter().zip(a).map(|(p, q)| (p - q).powi(2)))
        .sum();
    Ok((c, residual))
}

pub fn fit_control_points(actions: &[Action], points: usize) -> Result<ControlPoints> {
    fit_control_points_with_residual(actions, points).map(|(c, _)| c)
}

/// Diagonal Gaussian over the flattened control-point vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub points: usize,
    pub dim: usize,
    pub iteration: usize,
    /// Set when the last update had nothing (or no weight) to fit to.
    pub stalled: bool,
}

impl Proposal {
    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }

    pub fn std_norm(&self) -> f64 {
        self.std.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn mean_points(&self) -> ControlPoints {
        ControlPoints::new(self.points, self.dim, self.mean.clone()).expect("proposal shape is valid")
    }

    /// Multiply every standard deviation by `factor`.
    pub fn widened(&self, factor: f64) -> Proposal {
        Proposal {
            std: self.std.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }
}

/// Initial spread: one value for every coordinate, or one per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialSpread {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

/// Center the proposal on the least-squares fit of `demo_actions`, with spread
/// `sigma0` floored at `sqrt(delta)`.
pub fn init_proposal(demo_actions: &[Action], points: usize, sigma0: &InitialSpread, delta: f64) -> Result<Proposal> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("variance floor must be non-negative"));
    }
    let c = fit_control_points(demo_actions, points)?;
    let n = c.as_slice().len();
    let raw = match sigma0 {
        InitialSpread::Scalar(s) => vec![*s; n],
        InitialSpread::PerCoordinate(v) if v.len() == n => v.clone(),
        InitialSpread::PerCoordinate(v) => {
            return Err(Error::invalid(format!("sigma0 has {} entries, expected {n}", v.len())))
        }
    };
    if raw.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("sigma0 must be finite and non-negative"));
    }
    let floor = delta.sqrt();
    Ok(Proposal {
        mean: c.as_slice().to_vec(),
        std: raw.into_iter().map(|s| s.max(floor)).collect(),
        points: c.points(),
        dim: c.dim(),
        iteration: 0,
        stalled: false,
    })
}

/// `n` draws `mu + sigma ⊙ z`, `z ~ N(0, I)`.
pub fn sample_batch<R: Rng + ?Sized>(q: &Proposal, n: usize, rng: &mut R) -> Vec<ControlPoints> {
    (0..n)
        .map(|_| {
            let values = q
                .mean
                .iter()
                .zip(&q.std)
                .map(|(m, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect();
            ControlPoints::new(q.points, q.dim, values).expect("proposal shape is valid")
        })
        .collect()
}

/// Successful rollouts of one iteration, each with the control points that
/// produced it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuccessBatch {
    members: Vec<(Trajectory, ControlPoints)>,
}

impl SuccessBatch {
    /// Keeps only successful trajectories.
    pub fn from_rollouts(rollouts: impl IntoIterator<Item = (Trajectory, ControlPoints)>) -> Self {
        SuccessBatch {
            members: rollouts.into_iter().filter(|(t, _)| t.success).collect(),
        }
    }

    pub fn members(&self) -> &[(Trajectory, ControlPoints)] {
        &self.members
    }

    pub fn into_members(self) -> Vec<(Trajectory, ControlPoints)> {
        self.members
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.members.iter().map(|(t, _)| t)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Physical parameters for the rollouts of a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamSource {
    Fixed(EnvParams),
    /// A fresh draw per rollout.
    Randomized(ParamRanges),
}

/// Where a batch of plans is executed.
#[derive(Clone, Copy)]
pub struct Scene<'a> {
    pub env: &'a dyn Environment,
    pub start: &'a [f64],
    pub params: ParamSource,
}

/// Decode and roll out every sample under its own parameters, in sample order.
pub fn rollout_samples(
    scene: &Scene<'_>,
    samples: &[ControlPoints],
    params: &[EnvParams],
) -> Result<Vec<Trajectory>> {
    if samples.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} parameter sets",
            samples.len(),
            params.len()
        )));
    }
    let horizon = scene.env.horizon();
    let jobs: Vec<_> = samples.iter().zip(params).collect();
    par::map(&jobs, |(c, p)| {
        let plan = decode(c, horizon)?;
        let mut traj = rollout(scene.env, scene.start, &plan, **p)?;
        traj.origin = Some(c.as_slice().to_vec());
        Ok(traj)
    })
    .into_iter()
    .collect()
}

/// Sample `n` plans, roll them all out, and keep the successes. Randomized
/// parameters are drawn from `rng` after the plans, one set per plan.
pub fn generate_success_batch<R: Rng + ?Sized>(
    scene: &Scene<'_>,
    q: &Proposal,
    n: usize,
    rng: &mut R,
) -> Result<SuccessBatch> {
    let samples = sample_batch(q, n, rng);
    let params = match scene.params {
        ParamSource::Fixed(p) => vec![p; n],
        ParamSource::Randomized(ranges) => (0..n)
            .map(|_| randomize_env_params(&ranges, rng))
            .collect::<Result<_>>()?,
    };
    let trajs = rollout_samples(scene, &samples, &params)?;
    Ok(SuccessBatch::from_rollouts(trajs.into_iter().zip(samples)))
}
