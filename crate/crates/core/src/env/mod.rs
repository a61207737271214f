//! Deterministic simulator interface and rollout helpers.
//!
//! An environment is an immutable description: `step` is a pure function of
//! `(state, action, params)`, so rollouts can be evaluated in any order on any
//! thread.

mod block;
mod reach;

pub use block::{BlockRotateConfig, PlanarBlockRotate};
pub use reach::{PointReach, PointReachConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseSequence};

/// Flat environment-defined state vector.
pub type State = Vec<f64>;
/// Flat environment-defined action vector.
pub type Action = Vec<f64>;

/// Physical parameters randomized per episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub mass: f64,
    pub friction_scale: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            mass: 1.0,
            friction_scale: 1.0,
        }
    }
}

/// Closed intervals for [`randomize_env_params`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub mass: [f64; 2],
    pub friction: [f64; 2],
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            mass: [0.5, 3.0],
            friction: [0.8, 1.2],
        }
    }
}

fn uniform_in<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Draw per-episode mass and friction scale uniformly from `ranges`.
pub fn randomize_env_params<R: Rng + ?Sized>(ranges: &ParamRanges, rng: &mut R) -> Result<EnvParams> {
    for (name, r) in [("mass", ranges.mass), ("friction", ranges.friction)] {
        if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
            return Err(Error::invalid(format!("{name} range {r:?} is not a valid interval")));
        }
    }
    Ok(EnvParams {
        mass: uniform_in(ranges.mass, rng),
        friction_scale: uniform_in(ranges.friction, rng),
    })
}

/// What an episode needs beyond its current state: where it started and
/// which physical parameters it runs under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeContext {
    pub start: State,
    pub params: EnvParams,
}

/// `states[t + 1] = step(states[t], actions[t])`, plus the success flag.
///
/// A trajectory produced by [`rollout_with_resume`] is a continuation: its
/// first state is the episode state at `start_step`, and its context still
/// refers to the episode start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub success: bool,
    /// Control-point vector that generated the plan, when sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
    pub context: EpisodeContext,
    #[serde(default)]
    pub start_step: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A demonstration as end-effector pose sequences relative to the world, with
/// the object's initial pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub object0: Pose,
    pub end_effectors: Vec<PoseSequence>,
}

/// Contract every simulator implements.
pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn horizon(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Symmetric per-dimension action bound; actions are clamped to `±limit`.
    fn action_limit(&self) -> Vec<f64>;

    /// Initial state with the object placed at `object`.
    fn reset(&self, object: &Pose) -> State;
    fn step(&self, state: &[f64], action: &[f64], params: &EnvParams) -> State;
    fn is_success(&self, traj: &Trajectory) -> bool;

    /// Task-relevant subspace ψ(s), unnormalized.
    fn task_features(&self, state: &[f64]) -> Vec<f64>;
    /// Per-component normalization scales for ψ.
    fn task_scales(&self) -> Vec<f64>;

    /// Current ψ concatenated with the episode-start ψ.
    fn observe(&self, state: &[f64], ctx: &EpisodeContext) -> Vec<f64> {
        let mut obs = self.task_features(state);
        obs.extend(self.task_features(&ctx.start));
        obs
    }

    /// End-effector poses in `state`, in the order used by the demo.
    fn end_effector_poses(&self, state: &[f64]) -> Vec<Pose>;
    /// Convert per-end-effector target sequences (`horizon + 1` poses each)
    /// into `horizon` actions.
    fn actions_from_targets(&self, targets: &[PoseSequence]) -> Result<Vec<Action>>;
    /// A hand-coded demonstration with `motion_steps + 1` poses per end effector
    /// that succeeds under nominal parameters once blended from reset.
    fn scripted_demo(&self, motion_steps: usize) -> Demo;

    fn action_range(&self) -> Vec<f64> {
        self.action_limit().iter().map(|l| 2.0 * l).collect()
    }
}

/// Serializable environment selection plus constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    PlanarBlockRotate(BlockRotateConfig),
    PointReach(PointReachConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::PlanarBlockRotate(BlockRotateConfig::default())
    }
}

impl EnvConfig {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "planar_block_rotate" => Ok(EnvConfig::PlanarBlockRotate(Default::default())),
            "point_reach" => Ok(EnvConfig::PointReach(Default::default())),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected planar_block_rotate or point_reach)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::PlanarBlockRotate(_) => "planar_block_rotate",
            EnvConfig::PointReach(_) => "point_reach",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::PlanarBlockRotate(c) => Box::new(PlanarBlockRotate::new(c.clone())?),
            EnvConfig::PointReach(c) => Box::new(PointReach::new(c.clone())?),
        })
    }
}

fn check_actions(env: &dyn Environment, actions: &[Action]) -> Result<()> {
    let da = env.action_dim();
    if let Some((t, a)) = actions.iter().enumerate().find(|(_, a)| a.len() != da) {
        return Err(Error::invalid(format!(
            "action {t} has dimension {}, expected {da}",
            a.len()
        )));
    }
    Ok(())
}

fn simulate(
    env: &dyn Environment,
    s0: &[f64],
    actions: impl Iterator<Item = Action>,
    params: &EnvParams,
) -> (Vec<State>, Vec<Action>) {
    let mut states = vec![s0.to_vec()];
    let mut taken = Vec::new();
    for a in actions {
        let next = env.step(states.last().unwrap(), &a, params);
        states.push(next);
        taken.push(a);
    }
    (states, taken)
}

/// Execute a full-horizon plan from `s0` and evaluate success.
pub fn rollout(env: &dyn Environment, s0: &[f64], actions: &[Action], params: EnvParams) -> Result<Trajectory> {
    if actions.len() != env.horizon() {
        return Err(Error::invalid(format!(
            "plan has {} actions, horizon is {}",
            actions.len(),
            env.horizon()
        )));
    }
    if s0.len() != env.state_dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, expected {}",
            s0.len(),
            env.state_dim()
        )));
    }
    check_actions(env, actions)?;
    let (states, actions) = simulate(env, s0, actions.iter().cloned(), &params);
    let mut traj = Trajectory {
        states,
        actions,
        success: false,
        origin: None,
        context: EpisodeContext {
            start: s0.to_vec(),
            params,
        },
        start_step: 0,
    };
    traj.success = env.is_success(&traj);
    Ok(traj)
}

/// From `s_t` at step `t`, apply `prefix` then `suffix`, and evaluate success
/// on the full continuation.
pub fn rollout_with_resume(
    env: &dyn Environment,
    ctx: &EpisodeContext,
    t: usize,
    s_t: &[f64],
    prefix: &[Action],
    suffix: &[Action],
) -> Result<Trajectory> {
    let remaining = env.horizon().checked_sub(t).ok_or_else(|| {
        Error::invalid(format!("step {t} is past the horizon {}", env.horizon()))
    })?;
    if prefix.len() + suffix.len() != remaining {
        return Err(Error::invalid(format!(
            "prefix ({}) + suffix ({}) must cover the remaining {remaining} steps",
            prefix.len(),
            suffix.len()
        )));
    }
    check_actions(env, prefix)?;
    check_actions(env, suffix)?;
    let plan = prefix.iter().chain(suffix).cloned();
    let (states, actions) = simulate(env, s_t, plan, &ctx.params);
    let mut traj = Trajectory {
        states,
        actions,
        success: false,
        origin: None,
        context: ctx.clone(),
        start_step: t,
    };
    traj.success = env.is_success(&traj);
    Ok(traj)
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Orientation success: `|wrap(theta_T - theta_des)| < eps_theta`, where
/// `theta_T` is read from the trajectory's final state by `angle_of`.
pub fn success_rotate(
    traj: &Trajectory,
    angle_of: impl Fn(&[f64]) -> f64,
    theta_des: f64,
    eps_theta: f64,
) -> bool {
    let theta_t = angle_of(traj.final_state());
    wrap_angle(theta_t - theta_des).abs() < eps_theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn angle_traj(theta: f64) -> Trajectory {
        Trajectory {
            states: vec![vec![theta]],
            actions: vec![],
            success: false,
            origin: None,
            context: EpisodeContext {
                start: vec![0.0],
                params: EnvParams::default(),
            },
            start_step: 0,
        }
    }

    #[test]
    fn rotate_predicate() {
        let first = |s: &[f64]| s[0];
        assert!(success_rotate(&angle_traj(1.2), first, 1.2, 0.1));
        // 1.3 - 1.2 rounds just above 0.1, so use an exactly representable case
        assert!(!success_rotate(&angle_traj(0.5), first, 0.25, 0.25));
        assert!(success_rotate(&angle_traj(1.25), first, 1.2, 0.1));
        // across the branch cut
        assert!(success_rotate(&angle_traj(PI - 0.01), first, -PI + 0.01, 0.1));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn param_ranges() {
        let point = ParamRanges {
            mass: [1.5, 1.5],
            friction: [0.9, 0.9],
        };
        let p = randomize_env_params(&point, &mut seed::rng(0)).unwrap();
        assert_eq!(p, EnvParams { mass: 1.5, friction_scale: 0.9 });

        let mut rng = seed::rng(3);
        for _ in 0..1000 {
            let p = randomize_env_params(&ParamRanges::default(), &mut rng).unwrap();
            assert!((0.5..=3.0).contains(&p.mass));
            assert!((0.8..=1.2).contains(&p.friction_scale));
        }
        let a = randomize_env_params(&ParamRanges::default(), &mut seed::rng(11)).unwrap();
        let b = randomize_env_params(&ParamRanges::default(), &mut seed::rng(11)).unwrap();
        assert_eq!(a, b);

        let bad = ParamRanges {
            mass: [2.0, 1.0],
            friction: [1.0, 1.0],
        };
        assert!(randomize_env_params(&bad, &mut rng).is_err());
    }
}
