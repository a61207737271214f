use std::path::Path;

use serde::Serialize;

use crate::dataset::{read_manifest, read_trajectories, Generator};
use crate::env::{randomize_env_params, rollout};
use crate::error::{Error, Result};
use crate::par;
use crate::seed;

/// Success count over trials with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl RateEstimate {
    pub fn new(successes: usize, trials: usize) -> Self {
        if trials == 0 {
            return RateEstimate {
                successes,
                trials,
                rate: 0.0,
                lower: 0.0,
                upper: 1.0,
            };
        }
        let z = 1.959_963_984_540_054;
        let n = trials as f64;
        let p = successes as f64 / n;
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        RateEstimate {
            successes,
            trials,
            rate: p,
            lower: (center - half).max(0.0),
            upper: (center + half).min(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub generator: Generator,
    pub trajectories: usize,
    /// Every stored plan replayed under the parameters it was recorded with.
    pub stored: RateEstimate,
    /// Stored plans (round robin) replayed under freshly drawn parameters.
    pub fresh: RateEstimate,
}

/// Open-loop replay of the stored plans in a dataset directory.
pub fn evaluate_replay(dir: &Path, n_trials: usize, seed: u64) -> Result<ReplayReport> {
    let manifest = read_manifest(dir)?;
    let entries = read_trajectories(dir)?;
    if entries.is_empty() {
        return Err(Error::invalid(format!("{}: no stored trajectories to replay", dir.display())));
    }
    let env = manifest.environment.build()?;
    let env = env.as_ref();
    let stored = par::map(&entries, |e| {
        let t = &e.trajectory;
        rollout(env, &t.context.start, &t.actions, t.context.params).map(|r| r.success)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let fresh = par::map_range(n_trials, |i| {
        let t = &entries[i % entries.len()].trajectory;
        let mut rng = seed::substream(seed, &[seed::stream::EVALUATE, i as u64]);
        let params = randomize_env_params(&manifest.param_ranges, &mut rng)?;
        rollout(env, &t.context.start, &t.actions, params).map(|r| r.success)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ReplayReport {
        generator: manifest.generator,
        trajectories: entries.len(),
        stored: RateEstimate::new(stored.iter().filter(|s| **s).count(), stored.len()),
        fresh: RateEstimate::new(fresh.iter().filter(|s| **s).count(), fresh.len()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub pgdg: ReplayReport,
    pub baseline: ReplayReport,
    /// PGDG stored-parameter rate minus the baseline's fresh-parameter rate.
    pub gap: f64,
}

pub fn compare(pgdg: ReplayReport, baseline: ReplayReport) -> Comparison {
    Comparison {
        gap: pgdg.stored.rate - baseline.fresh.rate,
        pgdg,
        baseline,
    }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let row = |name: &str, r: &ReplayReport| {
            format!(
                "{name:<12} {:>5} trajectories  stored {:>3}/{:<3} ({:.3})  fresh {:>3}/{:<3} ({:.3}, 95% CI [{:.3}, {:.3}])\n",
                r.trajectories,
                r.stored.successes,
                r.stored.trials,
                r.stored.rate,
                r.fresh.successes,
                r.fresh.trials,
                r.fresh.rate,
                r.fresh.lower,
                r.fresh.upper
            )
        };
        let mut s = row("pgdg", &self.pgdg);
        s += &row("spatial-only", &self.baseline);
        s += &format!("gap (pgdg stored - spatial-only fresh): {:+.3}\n", self.gap);
        s
    }
}
