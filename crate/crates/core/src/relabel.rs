//! Corrective action chunks at the riskiest states of the curated set.
//!
//! The states farthest from the expert manifold are picked (with a minimum
//! temporal gap inside each trajectory), and a short-horizon CEM optimizes the
//! next `H` actions there. Every candidate is scored on the full continuation:
//! the reference suffix is replayed after the chunk and the episode must still
//! succeed. Only chunks whose continuation succeeds are emitted.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curator::{ExpertManifold, TubeBounds};
use crate::env::{rollout_with_resume, Action, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::par;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelPoint {
    pub trajectory: usize,
    pub timestep: usize,
    pub risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabelTarget {
    pub point: RelabelPoint,
    pub observation: Vec<f64>,
    pub chunk: Vec<Action>,
    pub cost: f64,
    /// Cost of the unmodified reference chunk at the same state.
    pub reference_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    /// Initial std as a fraction of each action dimension's range.
    pub init_std_frac: f64,
    /// Fraction of the previous std kept at each refit; slows collapse.
    pub std_smoothing: f64,
    pub w_fail: f64,
    pub w_tube: f64,
    pub w_ref: f64,
    pub horizon: usize,
    pub k_rel: usize,
    /// Minimum step gap between points of one trajectory; defaults to `horizon`.
    pub min_sep: Option<usize>,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 64,
            elite_frac: 0.125,
            iterations: 30,
            init_std_frac: 0.25,
            std_smoothing: 0.5,
            w_fail: 1e3,
            w_tube: 10.0,
            w_ref: 1.0,
            horizon: 15,
            k_rel: 10,
            min_sep: None,
        }
    }
}

impl CemConfig {
    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).clamp(1, self.population.max(1))
    }

    pub fn min_sep(&self) -> usize {
        self.min_sep.unwrap_or(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(Error::Config("CEM needs population >= 1 and elite_frac in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.std_smoothing) {
            return Err(Error::Config("std_smoothing must be in [0, 1)".into()));
        }
        if [self.w_fail, self.w_tube, self.w_ref, self.init_std_frac]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::Config("CEM weights and init_std_frac must be non-negative".into()));
        }
        if self.horizon == 0 || self.min_sep() == 0 {
            return Err(Error::Config("relabel horizon and min_sep must be at least 1".into()));
        }
        Ok(())
    }
}

/// Greedy top-`k_rel` selection over per-trajectory risk sequences (`risks[i][t]`
/// is `d_t` of trajectory `i`). Timesteps are clipped to `horizon - chunk` so a
/// full chunk fits; points in one trajectory stay at least `min_sep` apart.
pub fn select_risky_states(
    risks: &[Vec<f64>],
    horizon: usize,
    chunk: usize,
    k_rel: usize,
    min_sep: usize,
) -> Result<Vec<RelabelPoint>> {
    if min_sep == 0 {
        return Err(Error::invalid("min_sep must be at least 1"));
    }
    if chunk == 0 || chunk > horizon {
        return Err(Error::invalid(format!("chunk of {chunk} steps does not fit horizon {horizon}")));
    }
    let last = horizon - chunk;
    let mut candidates: Vec<RelabelPoint> = risks
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.iter().enumerate().map(move |(t, &risk)| RelabelPoint {
                trajectory: i,
                timestep: t.min(last),
                risk,
            })
        })
        .collect();
    // stable: equal risks keep (trajectory, timestep) order
    candidates.sort_by(|a, b| b.risk.total_cmp(&a.risk));
    let mut chosen: Vec<RelabelPoint> = Vec::new();
    for c in candidates {
        if chosen.len() >= k_rel {
            break;
        }
        let clash = chosen
            .iter()
            .any(|p| p.trajectory == c.trajectory && p.timestep.abs_diff(c.timestep) < min_sep);
        if !clash {
            chosen.push(c);
        }
    }
    Ok(chosen)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_fail: f64,
    pub w_tube: f64,
    pub w_ref: f64,
}

impl From<&CemConfig> for CostWeights {
    fn from(c: &CemConfig) -> Self {
        CostWeights {
            w_fail: c.w_fail,
            w_tube: c.w_tube,
            w_ref: c.w_ref,
        }
    }
}

/// Everything needed to score a chunk at one point of one trajectory.
#[derive(Clone, Copy)]
pub struct RelabelProblem<'a> {
    pub env: &'a dyn Environment,
    /// Full-episode reference trajectory.
    pub traj: &'a Trajectory,
    pub timestep: usize,
    pub chunk: usize,
    pub manifold: &'a ExpertManifold,
    pub tube: TubeBounds,
    pub weights: CostWeights,
}

impl<'a> RelabelProblem<'a> {
    fn check(&self) -> Result<()> {
        if self.traj.start_step != 0 || self.traj.actions.len() != self.env.horizon() {
            return Err(Error::invalid("relabeling needs a full-episode reference trajectory"));
        }
        if self.chunk == 0 || self.timestep + self.chunk > self.traj.actions.len() {
            return Err(Error::invalid(format!(
                "chunk of {} steps at t = {} overruns the horizon",
                self.chunk, self.timestep
            )));
        }
        Ok(())
    }

    /// `ū`: the reference actions the chunk replaces.
    pub fn reference(&self) -> &'a [Action] {
        &self.traj.actions[self.timestep..self.timestep + self.chunk]
    }

    pub fn state(&self) -> &'a [f64] {
        &self.traj.states[self.timestep]
    }

    /// Continuation from `s_t` under `u`, followed by the reference suffix.
    pub fn continuation(&self, u: &[Action]) -> Result<Trajectory> {
        rollout_with_resume(
            self.env,
            &self.traj.context,
            self.timestep,
            self.state(),
            u,
            &self.traj.actions[self.timestep + self.chunk..],
        )
    }

    /// `w_fail 1[fail] + w_tube Σ_{h=1..H} ReLU(d(s_{t+h}) - r_max)² + w_ref Σ_h ‖u_h - ū_h‖²`,
    /// with the continuation it was computed on.
    pub fn evaluate(&self, u: &[Action]) -> Result<(f64, Trajectory)> {
        self.check()?;
        if u.len() != self.chunk {
            return Err(Error::invalid(format!("chunk has {} actions, expected {}", u.len(), self.chunk)));
        }
        let cont = self.continuation(u)?;
        let w = self.weights;
        let mut cost = if cont.success { 0.0 } else { w.w_fail };
        if w.w_tube != 0.0 {
            let tube: f64 = cont.states[1..=self.chunk]
                .iter()
                .map(|s| (self.manifold.distance(self.env, s) - self.tube.r_max).max(0.0).powi(2))
                .sum();
            cost += w.w_tube * tube;
        }
        let reference: f64 = u
            .iter()
            .zip(self.reference())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)))
            .sum();
        cost += w.w_ref * reference;
        Ok((cost, cont))
    }
}

pub fn relabel_cost(u: &[Action], problem: &RelabelProblem<'_>) -> Result<f64> {
    problem.evaluate(u).map(|(c, _)| c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Best-so-far cost after each iteration.
    pub history: Vec<f64>,
}

/// Cross-entropy minimization of `cost` over a box-bounded vector.
///
/// Each iteration evaluates the current mean plus `population - 1` Gaussian
/// samples (clipped to `[lower, upper]`), then refits mean and std to the elite
/// set. The std is measured around the previous mean and smoothed. The final
/// mean is scored too; the best point ever evaluated is returned.
pub fn cem_minimize<R, F>(
    init_mean: &[f64],
    init_std: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    cfg: &CemConfig,
    cost: F,
    rng: &mut R,
) -> Result<CemResult>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let n = init_mean.len();
    if init_std.len() != n || bounds.is_some_and(|(lo, hi)| lo.len() != n || hi.len() != n) {
        return Err(Error::invalid("CEM mean, std and bounds differ in length"));
    }
    let clip = |x: &mut Vec<f64>| {
        if let Some((lo, hi)) = bounds {
            for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(*l, *h);
            }
        }
    };
    let mut mean = init_mean.to_vec();
    clip(&mut mean);
    let mut std = init_std.to_vec();
    let elites = cfg.elites();
    let mut best = mean.clone();
    let mut best_cost = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations.max(1) {
        let mut pop = Vec::with_capacity(cfg.population);
        pop.push(mean.clone());
        while pop.len() < cfg.population {
            let mut x: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect();
            clip(&mut x);
            pop.push(x);
        }
        let costs: Vec<f64> = par::map(&pop, |x| cost(x)).into_iter().collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        if costs[order[0]] < best_cost {
            best_cost = costs[order[0]];
            best = pop[order[0]].clone();
        }
        history.push(best_cost);
        let k = elites.min(pop.len());
        for d in 0..n {
            // spread of the elites around the old mean, so a moving mean keeps its width
            let v = order[..k].iter().map(|&i| (pop[i][d] - mean[d]).powi(2)).sum::<f64>() / k as f64;
            mean[d] = order[..k].iter().map(|&i| pop[i][d]).sum::<f64>() / k as f64;
            std[d] = cfg.std_smoothing * std[d] + (1.0 - cfg.std_smoothing) * v.sqrt();
        }
    }
    let last = cost(&mean)?;
    if last < best_cost {
        best_cost = last;
        best = mean;
        if let Some(h) = history.last_mut() {
            *h = best_cost;
        }
    }
    Ok(CemResult {
        best,
        best_cost,
        history,
    })
}

fn flatten(actions: &[Action]) -> Vec<f64> {
    actions.concat()
}

fn unflatten(x: &[f64], dim: usize) -> Vec<Action> {
    x.chunks(dim).map(<[f64]>::to_vec).collect()
}

/// Outcome of optimizing one point: the best chunk, its cost, and whether its
/// continuation succeeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CemOutcome {
    pub chunk: Vec<Action>,
    pub cost: f64,
    pub reference_cost: f64,
    pub success: bool,
    pub history: Vec<f64>,
}

/// CEM around the reference chunk `ū`, within the environment's action limits.
pub fn cem_optimize<R: Rng + ?Sized>(problem: &RelabelProblem<'_>, cfg: &CemConfig, rng: &mut R) -> Result<CemOutcome> {
    problem.check()?;
    let env = problem.env;
    let da = env.action_dim();
    let reference = problem.reference();
    let (reference_cost, _) = problem.evaluate(reference)?;
    let limit = env.action_limit();
    let lo: Vec<f64> = (0..problem.chunk).flat_map(|_| limit.iter().map(|l| -l)).collect();
    let hi: Vec<f64> = (0..problem.chunk).flat_map(|_| limit.iter().copied()).collect();
    let std: Vec<f64> = (0..problem.chunk)
        .flat_map(|_| env.action_range().into_iter().map(|r| r * cfg.init_std_frac))
        .collect();
    let res = cem_minimize(
        &flatten(reference),
        &std,
        Some((&lo, &hi)),
        cfg,
        |x| relabel_cost(&unflatten(x, da), problem),
        rng,
    )?;
    let chunk = unflatten(&res.best, da);
    let (cost, cont) = problem.evaluate(&chunk)?;
    Ok(CemOutcome {
        chunk,
        cost,
        reference_cost,
        success: cont.success,
        history: res.history,
    })
}

/// One curated trajectory with the manifold and tube of the variant it came from.
#[derive(Clone, Copy)]
pub struct RelabelSource<'a> {
    pub traj: &'a Trajectory,
    pub manifold: &'a ExpertManifold,
    pub tube: TubeBounds,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelabelReport {
    pub points: Vec<RelabelPoint>,
    pub targets: Vec<RelabelTarget>,
    pub failed: Vec<RelabelPoint>,
}

/// Select risky points across all sources and optimize each one on its own RNG
/// substream. Points whose best chunk still fails are dropped with a warning.
pub fn relabel_dataset(
    env: &dyn Environment,
    sources: &[RelabelSource<'_>],
    cfg: &CemConfig,
    master_seed: u64,
) -> Result<RelabelReport> {
    cfg.validate()?;
    let risks: Vec<Vec<f64>> = par::map(sources, |s| s.manifold.deviations(env, s.traj));
    let points = select_risky_states(&risks, env.horizon(), cfg.horizon, cfg.k_rel, cfg.min_sep())?;
    let weights = CostWeights::from(cfg);
    let indexed: Vec<(usize, RelabelPoint)> = points.iter().copied().enumerate().collect();
    let outcomes = par::map(&indexed, |&(i, p)| {
        let src = &sources[p.trajectory];
        let problem = RelabelProblem {
            env,
            traj: src.traj,
            timestep: p.timestep,
            chunk: cfg.horizon,
            manifold: src.manifold,
            tube: src.tube,
            weights,
        };
        let mut rng = seed::substream(master_seed, &[seed::stream::RELABEL, i as u64]);
        cem_optimize(&problem, cfg, &mut rng).map(|o| (o, env.observe(problem.state(), &src.traj.context)))
    });
    let mut report = RelabelReport {
        points: points.clone(),
        ..Default::default()
    };
    for (p, outcome) in points.into_iter().zip(outcomes) {
        let (o, observation) = outcome?;
        if o.success {
            report.targets.push(RelabelTarget {
                point: p,
                observation,
                chunk: o.chunk,
                cost: o.cost,
                reference_cost: o.reference_cost,
            });
        } else {
            log::warn!(
                "relabel point (trajectory {}, t = {}) found no successful chunk; skipped",
                p.trajectory,
                p.timestep
            );
            report.failed.push(p);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_rules() {
        assert!(select_risky_states(&[vec![1.0; 10]], 9, 3, 0, 2).unwrap().is_empty());
        let mut r = vec![0.0; 21];
        r[5] = 1.0;
        r[8] = 0.9;
        let pts = select_risky_states(&[r.clone()], 20, 3, 1, 5).unwrap();
        assert_eq!((pts[0].timestep, pts[0].risk), (5, 1.0));
        let pts = select_risky_states(&[r], 20, 3, 2, 5).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[1].timestep.abs_diff(5) >= 5);
        // late spikes clip so the chunk fits
        let mut late = vec![0.0; 21];
        late[20] = 5.0;
        let pts = select_risky_states(&[late], 20, 6, 1, 1).unwrap();
        assert_eq!(pts[0].timestep, 14);
        assert!(select_risky_states(&[vec![0.0]], 20, 3, 1, 0).is_err());
    }

    #[test]
    fn quadratic_cem_converges_from_an_offset_start() {
        let target: Vec<f64> = (0..30).map(|i| 0.02 * i as f64 - 0.3).collect();
        let start: Vec<f64> = target.iter().map(|t| t + 0.2).collect();
        let cfg = CemConfig {
            iterations: 50,
            ..CemConfig::default()
        };
        let mut rng = seed::rng(4);
        let res = cem_minimize(
            &start,
            &[0.2; 30],
            None,
            &cfg,
            |x| Ok(x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum()),
            &mut rng,
        )
        .unwrap();
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        for (a, b) in res.best.iter().zip(&target) {
            assert!((a - b).abs() < 1e-2);
        }
    }
}
