//! Point mass steered by clamped displacements toward a goal.
//!
//! State: `[x, y, goal_x, goal_y]`. Action: `[dx, dy]` as normalized commands
//! in `[-1, 1]`; one unit is `a_max` per step. Success when the final
//! position is within `eps_p` of the goal. The object pose passed to `reset`
//! places the goal.

use serde::{Deserialize, Serialize};

use super::{Action, Demo, EnvParams, Environment, State, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointReachConfig {
    pub horizon: usize,
    pub a_max: f64,
    pub start: [f64; 2],
    pub eps_p: f64,
    pub position_scale: f64,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        PointReachConfig {
            horizon: 30,
            a_max: 0.1,
            start: [-0.6, -0.3],
            eps_p: 0.05,
            position_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointReach {
    cfg: PointReachConfig,
}

impl PointReach {
    pub fn new(cfg: PointReachConfig) -> Result<Self> {
        if !(cfg.a_max > 0.0 && cfg.eps_p > 0.0 && cfg.position_scale > 0.0) || cfg.horizon == 0 {
            return Err(Error::Config(
                "point_reach needs positive a_max, eps_p, position_scale and horizon".into(),
            ));
        }
        Ok(PointReach { cfg })
    }

    pub fn config(&self) -> &PointReachConfig {
        &self.cfg
    }
}

impl Environment for PointReach {
    fn name(&self) -> &'static str {
        "point_reach"
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_limit(&self) -> Vec<f64> {
        vec![1.0; 2]
    }

    fn reset(&self, object: &Pose) -> State {
        vec![
            self.cfg.start[0],
            self.cfg.start[1],
            object.translation[0],
            object.translation[1],
        ]
    }

    fn step(&self, state: &[f64], action: &[f64], _params: &EnvParams) -> State {
        let a = |i: usize| action[i].clamp(-1.0, 1.0) * self.cfg.a_max;
        vec![
            state[0] + a(0),
            state[1] + a(1),
            state[2],
            state[3],
        ]
    }

    fn is_success(&self, traj: &Trajectory) -> bool {
        let s = traj.final_state();
        (s[0] - s[2]).hypot(s[1] - s[3]) < self.cfg.eps_p
    }

    fn task_features(&self, state: &[f64]) -> Vec<f64> {
        state[..2].to_vec()
    }

    fn task_scales(&self) -> Vec<f64> {
        vec![self.cfg.position_scale; 2]
    }

    fn end_effector_poses(&self, state: &[f64]) -> Vec<Pose> {
        vec![Pose::planar(state[0], state[1], 0.0)]
    }

    fn actions_from_targets(&self, targets: &[PoseSequence]) -> Result<Vec<Action>> {
        let n = self.cfg.horizon + 1;
        match targets {
            [seq] if seq.len() == n => {
                let p = seq.poses();
                let k = 1.0 / self.cfg.a_max;
                Ok((0..self.cfg.horizon)
                    .map(|t| {
                        vec![
                            k * (p[t + 1].translation[0] - p[t].translation[0]),
                            k * (p[t + 1].translation[1] - p[t].translation[1]),
                        ]
                    })
                    .collect())
            }
            _ => Err(Error::invalid(format!(
                "point_reach needs one target sequence of {n} poses"
            ))),
        }
    }

    /// Straight line from the configured start to a goal at the origin.
    fn scripted_demo(&self, motion_steps: usize) -> Demo {
        let n = motion_steps.max(1);
        let [sx, sy] = self.cfg.start;
        let poses = (0..=n)
            .map(|t| {
                let s = t as f64 / n as f64;
                Pose::planar(sx * (1.0 - s), sy * (1.0 - s), 0.0)
            })
            .collect();
        Demo {
            object0: Pose::IDENTITY,
            end_effectors: vec![PoseSequence::new(poses).expect("non-empty")],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rollout;

    #[test]
    fn straight_plan_reaches_goal() {
        let env = PointReach::new(PointReachConfig::default()).unwrap();
        let s0 = env.reset(&Pose::from_translation([0.2, 0.1, 0.0]));
        let t = env.horizon() as f64 * env.config().a_max;
        let step = vec![(0.2 - s0[0]) / t, (0.1 - s0[1]) / t];
        let plan = vec![step; env.horizon()];
        let traj = rollout(&env, &s0, &plan, EnvParams::default()).unwrap();
        assert!(traj.success);
    }

    #[test]
    fn rollout_is_deterministic_and_validated() {
        let env = PointReach::new(PointReachConfig::default()).unwrap();
        let s0 = env.reset(&Pose::IDENTITY);
        let plan: Vec<Action> = (0..env.horizon()).map(|t| vec![0.01 * t as f64, -0.02]).collect();
        let a = rollout(&env, &s0, &plan, EnvParams::default()).unwrap();
        for _ in 0..100 {
            assert_eq!(rollout(&env, &s0, &plan, EnvParams::default()).unwrap(), a);
        }
        assert!(rollout(&env, &s0, &plan[1..], EnvParams::default()).is_err());
        let mut bad = plan.clone();
        bad[3] = vec![0.0];
        assert!(rollout(&env, &s0, &bad, EnvParams::default()).is_err());
    }
}
