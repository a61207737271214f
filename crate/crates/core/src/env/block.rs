//! Two end effectors rotating a rectangular block in the plane.
//!
//! Quasi-static contact: each step both end effectors move by their commanded
//! displacement. If both were within `contact_margin` of the block boundary at
//! the start of the step, the block follows the least-squares rigid planar
//! transform mapping the two old end-effector positions onto the new ones,
//! scaled by the slip factor `clamp(friction_scale, 0, 1)`. Otherwise the block
//! stays put. Losing contact mid-rotation therefore freezes the block; this is
//! a modelling stand-in, not a physical claim.
//!
//! State: `[block_x, block_y, block_theta, left_x, left_y, right_x, right_y]`.
//! Action: `[d_left_x, d_left_y, d_right_x, d_right_y]` as normalized commands
//! in `[-1, 1]`; one unit is `a_max` meters per step.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::{success_rotate, Action, Demo, EnvParams, Environment, State, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseSequence, Rotation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockRotateConfig {
    pub horizon: usize,
    /// Displacement of a unit command, meters per step.
    pub a_max: f64,
    pub contact_margin: f64,
    /// Block half extents along its local x and y axes.
    pub half_extents: [f64; 2],
    /// Required rotation relative to the episode-start block angle.
    pub theta_goal: f64,
    pub eps_theta: f64,
    pub home_left: [f64; 2],
    pub home_right: [f64; 2],
    /// Stand-off of the scripted grasp points outside the block faces.
    pub grasp_gap: f64,
    pub position_scale: f64,
    pub angle_scale: f64,
}

impl Default for BlockRotateConfig {
    fn default() -> Self {
        BlockRotateConfig {
            horizon: 60,
            a_max: 0.03,
            contact_margin: 0.02,
            half_extents: [0.10, 0.06],
            theta_goal: FRAC_PI_2,
            eps_theta: 0.1,
            home_left: [0.0, 0.2],
            home_right: [0.0, -0.2],
            grasp_gap: 0.005,
            position_scale: 0.05,
            angle_scale: 0.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanarBlockRotate {
    cfg: BlockRotateConfig,
}

const BLOCK: usize = 0;
const LEFT: usize = 3;
const RIGHT: usize = 5;

fn rot2(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl PlanarBlockRotate {
    pub fn new(cfg: BlockRotateConfig) -> Result<Self> {
        let positive = [
            ("a_max", cfg.a_max),
            ("contact_margin", cfg.contact_margin),
            ("half_extents[0]", cfg.half_extents[0]),
            ("half_extents[1]", cfg.half_extents[1]),
            ("eps_theta", cfg.eps_theta),
            ("position_scale", cfg.position_scale),
            ("angle_scale", cfg.angle_scale),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("planar_block_rotate.{name} must be positive, got {v}")));
        }
        if cfg.horizon < 2 {
            return Err(Error::Config("planar_block_rotate.horizon must be at least 2".into()));
        }
        Ok(PlanarBlockRotate { cfg })
    }

    pub fn config(&self) -> &BlockRotateConfig {
        &self.cfg
    }

    /// Distance from `p` to the block boundary (zero on it, positive inside or out).
    pub fn boundary_distance(&self, block: [f64; 3], p: [f64; 2]) -> f64 {
        let local = rot2(-block[2], [p[0] - block[0], p[1] - block[1]]);
        let [hx, hy] = self.cfg.half_extents;
        let ox = local[0].abs() - hx;
        let oy = local[1].abs() - hy;
        if ox <= 0.0 && oy <= 0.0 {
            (-ox).min(-oy)
        } else {
            (ox.max(0.0).powi(2) + oy.max(0.0).powi(2)).sqrt()
        }
    }

    fn in_contact(&self, block: [f64; 3], p: [f64; 2]) -> bool {
        self.boundary_distance(block, p) <= self.cfg.contact_margin
    }

    /// Desired final block angle for an episode starting at `start`.
    pub fn target_angle(&self, start: &[f64]) -> f64 {
        start[BLOCK + 2] + self.cfg.theta_goal
    }
}

impl Environment for PlanarBlockRotate {
    fn name(&self) -> &'static str {
        "planar_block_rotate"
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn state_dim(&self) -> usize {
        7
    }

    fn action_dim(&self) -> usize {
        4
    }

    fn action_limit(&self) -> Vec<f64> {
        vec![1.0; 4]
    }

    fn reset(&self, object: &Pose) -> State {
        let [hl, hr] = [self.cfg.home_left, self.cfg.home_right];
        vec![
            object.translation[0],
            object.translation[1],
            object.rotation.yaw(),
            hl[0],
            hl[1],
            hr[0],
            hr[1],
        ]
    }

    fn step(&self, state: &[f64], action: &[f64], params: &EnvParams) -> State {
        let a = |i: usize| action[i].clamp(-1.0, 1.0) * self.cfg.a_max;
        let block = [state[BLOCK], state[BLOCK + 1], state[BLOCK + 2]];
        let l0 = [state[LEFT], state[LEFT + 1]];
        let r0 = [state[RIGHT], state[RIGHT + 1]];
        let l1 = [l0[0] + a(0), l0[1] + a(1)];
        let r1 = [r0[0] + a(2), r0[1] + a(3)];

        let mut next_block = block;
        if self.in_contact(block, l0) && self.in_contact(block, r0) {
            let slip = params.friction_scale.clamp(0.0, 1.0);
            let d0 = [r0[0] - l0[0], r0[1] - l0[1]];
            let d1 = [r1[0] - l1[0], r1[1] - l1[1]];
            let cross = d0[0] * d1[1] - d0[1] * d1[0];
            let dot = d0[0] * d1[0] + d0[1] * d1[1];
            let phi = if cross == 0.0 && dot == 0.0 { 0.0 } else { cross.atan2(dot) };
            let c0 = [(l0[0] + r0[0]) / 2.0, (l0[1] + r0[1]) / 2.0];
            let c1 = [(l1[0] + r1[0]) / 2.0, (l1[1] + r1[1]) / 2.0];
            let turn = slip * phi;
            let arm = rot2(turn, [block[0] - c0[0], block[1] - c0[1]]);
            next_block = [
                c0[0] + slip * (c1[0] - c0[0]) + arm[0],
                c0[1] + slip * (c1[1] - c0[1]) + arm[1],
                block[2] + turn,
            ];
        }
        vec![
            next_block[0],
            next_block[1],
            next_block[2],
            l1[0],
            l1[1],
            r1[0],
            r1[1],
        ]
    }

    fn is_success(&self, traj: &Trajectory) -> bool {
        success_rotate(
            traj,
            |s| s[BLOCK + 2],
            self.target_angle(&traj.context.start),
            self.cfg.eps_theta,
        )
    }

    fn task_features(&self, state: &[f64]) -> Vec<f64> {
        state[..7].to_vec()
    }

    fn task_scales(&self) -> Vec<f64> {
        let p = self.cfg.position_scale;
        vec![p, p, self.cfg.angle_scale, p, p, p, p]
    }

    fn end_effector_poses(&self, state: &[f64]) -> Vec<Pose> {
        vec![
            Pose::planar(state[LEFT], state[LEFT + 1], 0.0),
            Pose::planar(state[RIGHT], state[RIGHT + 1], 0.0),
        ]
    }

    fn actions_from_targets(&self, targets: &[PoseSequence]) -> Result<Vec<Action>> {
        if targets.len() != 2 {
            return Err(Error::invalid(format!(
                "planar_block_rotate needs 2 end-effector sequences, got {}",
                targets.len()
            )));
        }
        let n = self.cfg.horizon + 1;
        if targets.iter().any(|s| s.len() != n) {
            return Err(Error::invalid(format!("target sequences must have {n} poses")));
        }
        let (l, r) = (targets[0].poses(), targets[1].poses());
        let k = 1.0 / self.cfg.a_max;
        Ok((0..self.cfg.horizon)
            .map(|t| {
                vec![
                    k * (l[t + 1].translation[0] - l[t].translation[0]),
                    k * (l[t + 1].translation[1] - l[t].translation[1]),
                    k * (r[t + 1].translation[0] - r[t].translation[0]),
                    k * (r[t + 1].translation[1] - r[t].translation[1]),
                ]
            })
            .collect())
    }

    /// Grasp the two long faces, hold briefly, rotate by `theta_goal` with an
    /// eased angle profile, then hold. Expressed with the block at the origin.
    fn scripted_demo(&self, motion_steps: usize) -> Demo {
        let radius = self.cfg.half_extents[1] + self.cfg.grasp_gap;
        let n = motion_steps.max(1);
        let lead = n / 10;
        let turn = (3 * n / 5).max(1);
        let angle = |t: usize| -> f64 {
            if t <= lead {
                0.0
            } else if t >= lead + turn {
                self.cfg.theta_goal
            } else {
                let s = (t - lead) as f64 / turn as f64;
                self.cfg.theta_goal * (1.0 - (PI * s).cos()) / 2.0
            }
        };
        let grasp = |side: f64| {
            let poses = (0..=n)
                .map(|t| {
                    let phi = angle(t);
                    let p = rot2(phi, [0.0, side * radius]);
                    Pose::new(Rotation::about_z(phi), [p[0], p[1], 0.0])
                })
                .collect();
            PoseSequence::new(poses).expect("non-empty")
        };
        Demo {
            object0: Pose::IDENTITY,
            end_effectors: vec![grasp(1.0), grasp(-1.0)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, EpisodeContext};

    fn env() -> PlanarBlockRotate {
        PlanarBlockRotate::new(BlockRotateConfig::default()).unwrap()
    }

    fn grasp_state(env: &PlanarBlockRotate, block: [f64; 3]) -> State {
        let r = env.cfg.half_extents[1] + env.cfg.grasp_gap;
        let l = rot2(block[2], [0.0, r]);
        let rr = rot2(block[2], [0.0, -r]);
        vec![
            block[0],
            block[1],
            block[2],
            block[0] + l[0],
            block[1] + l[1],
            block[0] + rr[0],
            block[1] + rr[1],
        ]
    }

    #[test]
    fn zero_actions_fail() {
        let env = env();
        let s0 = env.reset(&Pose::IDENTITY);
        let plan = vec![vec![0.0; 4]; env.horizon()];
        let traj = rollout(&env, &s0, &plan, EnvParams::default()).unwrap();
        assert!(!traj.success);
        assert!(traj.states.iter().all(|s| s == &s0));
    }

    #[test]
    fn free_block_does_not_move() {
        let env = env();
        let s0 = env.reset(&Pose::planar(0.0, 0.0, 0.3));
        let s1 = env.step(&s0, &[0.5, -0.2, 1.0, 0.0], &EnvParams::default());
        assert_eq!(&s1[..3], &s0[..3]);
        assert!((s1[3] - s0[3] - 0.015).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clamped() {
        let env = env();
        let s0 = env.reset(&Pose::IDENTITY);
        let s1 = env.step(&s0, &[4.0, -2.0, 0.0, 0.0], &EnvParams::default());
        assert!((s1[3] - s0[3] - 0.03).abs() < 1e-15);
        assert!((s1[4] - s0[4] + 0.03).abs() < 1e-15);
    }

    #[test]
    fn rigid_grasp_carries_the_block() {
        let env = env();
        let s = grasp_state(&env, [0.1, -0.05, 0.2]);
        // rotate both grasp points by 0.05 rad about a pivot and translate
        let pivot = [0.12, -0.02];
        let (dphi, shift) = (0.05, [0.004, -0.003]);
        let mv = |p: [f64; 2]| {
            let q = rot2(dphi, [p[0] - pivot[0], p[1] - pivot[1]]);
            [q[0] + pivot[0] + shift[0], q[1] + pivot[1] + shift[1]]
        };
        let l1 = mv([s[3], s[4]]);
        let r1 = mv([s[5], s[6]]);
        let a = [l1[0] - s[3], l1[1] - s[4], r1[0] - s[5], r1[1] - s[6]].map(|d| d / env.cfg.a_max);
        let next = env.step(&s, &a, &EnvParams::default());
        let b1 = mv([s[0], s[1]]);
        assert!((next[0] - b1[0]).abs() < 1e-6);
        assert!((next[1] - b1[1]).abs() < 1e-6);
        assert!((next[2] - (s[2] + dphi)).abs() < 1e-6);
    }

    #[test]
    fn slip_scales_the_rotation() {
        let env = env();
        let s = grasp_state(&env, [0.0, 0.0, 0.0]);
        let r = env.cfg.half_extents[1] + env.cfg.grasp_gap;
        let l1 = rot2(0.1, [0.0, r]);
        let r1 = rot2(0.1, [0.0, -r]);
        let a = [l1[0] - s[3], l1[1] - s[4], r1[0] - s[5], r1[1] - s[6]].map(|d| d / env.cfg.a_max);
        let slow = EnvParams { mass: 1.0, friction_scale: 0.8 };
        let next = env.step(&s, &a, &slow);
        assert!((next[2] - 0.08).abs() < 1e-12);
        let grippy = EnvParams { mass: 1.0, friction_scale: 1.2 };
        assert!((env.step(&s, &a, &grippy)[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn boundary_distance_inside_and_out() {
        let env = env();
        let b = [0.0, 0.0, 0.0];
        assert!((env.boundary_distance(b, [0.0, 0.07]) - 0.01).abs() < 1e-12);
        assert!((env.boundary_distance(b, [0.0, 0.05]) - 0.01).abs() < 1e-12);
        assert!((env.boundary_distance(b, [0.13, 0.10]) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn scripted_demo_succeeds_from_grasp() {
        let env = env();
        let demo = env.scripted_demo(env.horizon());
        let acts = env.actions_from_targets(&demo.end_effectors).unwrap();
        let s0 = grasp_state(&env, [0.0, 0.0, 0.0]);
        let traj = rollout(&env, &s0, &acts, EnvParams::default()).unwrap();
        assert!(traj.success, "final angle {}", traj.final_state()[2]);
        let slow = EnvParams { mass: 1.0, friction_scale: 0.8 };
        assert!(!rollout(&env, &s0, &acts, slow).unwrap().success);
    }

    #[test]
    fn success_is_relative_to_start_angle() {
        let env = env();
        let mut s = grasp_state(&env, [0.0, 0.0, 0.3]);
        let start = s.clone();
        s[2] = 0.3 + FRAC_PI_2 + 0.05;
        let traj = Trajectory {
            states: vec![start.clone(), s],
            actions: vec![vec![0.0; 4]],
            success: false,
            origin: None,
            context: EpisodeContext { start, params: EnvParams::default() },
            start_step: 0,
        };
        assert!(env.is_success(&traj));
    }
}
