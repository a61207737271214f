//! End-to-end generation: spatial variants, iterative sample/score/select/refit,
//! relabeling and export, plus the spatial-only baseline and replay evaluation.

mod config;
mod evaluate;
mod report;

pub use config::{DemoConfig, ExportConfig, PipelineConfig, RandomizationConfig, RunConfig};
pub use evaluate::{evaluate_replay, compare, Comparison, RateEstimate, ReplayReport};
pub use report::RunReport;

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::curator::{
    build_kernel, compute_tube, dpp_select_greedy_with_tol, median_bandwidth, reward_to_weight, tube_reward,
    update_proposal, DctEmbedder, ExpertManifold, TubeBounds, MIN_TUBE_SUCCESSES,
};
use crate::dataset::{
    export_pairs, serialize, Counts, Dataset, DatasetManifest, Generator, IterationStats, RecordSource,
    TrajectoryEntry, TrajectorySource, VariantSummary, FORMAT_VERSION,
};
use crate::env::{randomize_env_params, rollout, Action, Demo, EnvParams, Environment, State, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{blend_prefix, reanchor_trajectory, sample_object_perturbation, Pose, PoseSequence};
use crate::par;
use crate::relabel::{relabel_dataset, RelabelReport, RelabelSource};
use crate::sampler::{generate_success_batch, init_proposal, InitialSpread, ParamSource, Proposal, Scene, SuccessBatch};
use crate::seed;

/// Widening applied to the proposal when the first batch cannot support a tube.
pub const STARVATION_WIDENING: f64 = 1.5;

/// One spatially randomized copy of the demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub index: usize,
    pub object_pose: Pose,
    pub params: EnvParams,
    pub start: State,
    /// Blend prefix plus re-anchored demo, as actions.
    pub plan: Vec<Action>,
    /// The plan rolled out under nominal parameters; its states are the expert manifold.
    pub expert: Trajectory,
}

pub fn load_demo(cfg: &PipelineConfig, env: &dyn Environment) -> Result<Demo> {
    let motion = env.horizon() - cfg.randomization.blend_steps;
    match &cfg.demo.path {
        None => Ok(env.scripted_demo(motion)),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let demo: Demo = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if demo.end_effectors.iter().any(|s| s.len() != motion + 1) {
                return Err(Error::Config(format!(
                    "{}: demo sequences need {} poses (horizon - blend_steps + 1)",
                    path.display(),
                    motion + 1
                )));
            }
            Ok(demo)
        }
    }
}

/// Re-anchor `demo` to `object_pose` and prepend the approach from the reset
/// end-effector poses.
pub fn build_variant(
    env: &dyn Environment,
    demo: &Demo,
    index: usize,
    object_pose: Pose,
    params: EnvParams,
    blend_steps: usize,
) -> Result<Variant> {
    let start = env.reset(&object_pose);
    let homes = env.end_effector_poses(&start);
    if homes.len() != demo.end_effectors.len() {
        return Err(Error::invalid(format!(
            "demo has {} end-effector sequences, environment has {}",
            demo.end_effectors.len(),
            homes.len()
        )));
    }
    let targets = demo
        .end_effectors
        .iter()
        .zip(&homes)
        .map(|(seq, home)| {
            let moved = reanchor_trajectory(seq, &demo.object0, &object_pose);
            Ok(blend_prefix(home, moved.first(), blend_steps)?.join(&moved))
        })
        .collect::<Result<Vec<PoseSequence>>>()?;
    let plan = env.actions_from_targets(&targets)?;
    let expert = rollout(env, &start, &plan, EnvParams::default())?;
    Ok(Variant {
        index,
        object_pose,
        params,
        start,
        plan,
        expert,
    })
}

/// Object pose and physical parameters of every variant, each from its own substream.
pub fn build_variants(cfg: &PipelineConfig, env: &dyn Environment, demo: &Demo) -> Result<Vec<Variant>> {
    let range = cfg.randomization.perturbation();
    let ranges = cfg.randomization.param_ranges();
    (0..cfg.run.variants)
        .map(|v| {
            let mut rng = seed::substream(cfg.seed, &[seed::stream::SCENE, v as u64]);
            let delta = sample_object_perturbation(&range, &mut rng)?;
            let params = randomize_env_params(&ranges, &mut rng)?;
            build_variant(
                env,
                demo,
                v,
                delta.compose(&demo.object0),
                params,
                cfg.randomization.blend_steps,
            )
        })
        .collect()
}

/// A curated trajectory with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct CuratedTrajectory {
    pub variant: usize,
    pub iteration: usize,
    pub reward: f64,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantOutcome {
    pub variant: usize,
    pub stats: Vec<IterationStats>,
    pub curated: Vec<CuratedTrajectory>,
    pub final_tube: Option<TubeBounds>,
    pub proposal: Proposal,
    pub skipped: bool,
    pub note: Option<String>,
}

/// Result of curating one batch: kept indices into the batch plus every reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Curation {
    pub tube: TubeBounds,
    pub rewards: Vec<f64>,
    pub selected: Vec<usize>,
    pub sigma_rbf: f64,
}

/// Tube, rewards, embedding and DPP selection for one successful batch.
pub fn curate_batch(
    cfg: &PipelineConfig,
    env: &dyn Environment,
    manifold: &ExpertManifold,
    batch: &[&Trajectory],
    previous: Option<&TubeBounds>,
    iteration: usize,
) -> Result<Curation> {
    let c = &cfg.curator;
    let deviations: Vec<Vec<f64>> = par::map(batch, |t| manifold.deviations(env, t));
    let peaks: Vec<f64> = deviations.iter().map(|d| d.iter().copied().fold(0.0, f64::max)).collect();
    let tube = compute_tube(&peaks, c.q_min, c.q_max, previous, iteration)?;
    let rewards: Vec<f64> = deviations.iter().map(|d| tube_reward(d, &tube)).collect();
    if batch.is_empty() {
        return Ok(Curation {
            tube,
            rewards,
            selected: Vec::new(),
            sigma_rbf: f64::NAN,
        });
    }
    let embedder = DctEmbedder::new(c.t_tilde.unwrap_or(env.horizon()), c.k_dct)?;
    let embeddings = par::map(batch, |t| embedder.embed_trajectory(env, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let sigma_rbf = match c.sigma_rbf {
        Some(s) => s,
        None => median_bandwidth(&embeddings)?,
    };
    let kernel = build_kernel(&embeddings, sigma_rbf)?;
    let selection = dpp_select_greedy_with_tol(&kernel, c.subset_size(batch.len()), c.dpp_eps, c.redundancy_tol)?;
    Ok(Curation {
        tube,
        rewards,
        selected: selection.indices,
        sigma_rbf,
    })
}

fn sigma0(cfg: &PipelineConfig, env: &dyn Environment) -> InitialSpread {
    let per_dim: Vec<f64> = env.action_range().iter().map(|r| r * cfg.sampler.sigma0_frac).collect();
    InitialSpread::PerCoordinate(
        (0..cfg.sampler.control_points)
            .flat_map(|_| per_dim.iter().copied())
            .collect(),
    )
}

/// `K` rounds of sample, filter, tube, score, select and refit for one variant.
pub fn run_variant(cfg: &PipelineConfig, env: &dyn Environment, variant: &Variant) -> Result<VariantOutcome> {
    let s = &cfg.sampler;
    let manifold = ExpertManifold::for_env(env, &variant.expert.states)?;
    let mut q = init_proposal(&variant.plan, s.control_points, &sigma0(cfg, env), s.delta)?;
    let scene = Scene {
        env,
        start: &variant.start,
        params: ParamSource::Randomized(cfg.randomization.param_ranges()),
    };
    let v = variant.index as u64;
    let mut out = VariantOutcome {
        variant: variant.index,
        stats: Vec::new(),
        curated: Vec::new(),
        final_tube: None,
        proposal: q.clone(),
        skipped: false,
        note: None,
    };
    let mut tube: Option<TubeBounds> = None;
    for k in 0..cfg.run.iterations {
        let mut rng = seed::substream(cfg.seed, &[seed::stream::SAMPLER, v, k as u64]);
        let mut batch: SuccessBatch = generate_success_batch(&scene, &q, s.samples, &mut rng)?;
        let mut resampled = false;
        if tube.is_none() && batch.len() < MIN_TUBE_SUCCESSES {
            log::info!(
                "variant {}: {} successes in the first batch, widening the proposal and resampling",
                variant.index,
                batch.len()
            );
            q = q.widened(STARVATION_WIDENING);
            let mut retry = seed::substream(cfg.seed, &[seed::stream::SAMPLER_RETRY, v]);
            batch = generate_success_batch(&scene, &q, s.samples, &mut retry)?;
            resampled = true;
        }
        let members = batch.into_members();
        let trajs: Vec<&Trajectory> = members.iter().map(|(t, _)| t).collect();
        let curation = match curate_batch(cfg, env, &manifold, &trajs, tube.as_ref(), k) {
            Ok(c) => c,
            Err(Error::TubeUnavailable { successes, required }) => {
                let note = format!("first batch had {successes} successes after resampling (need {required})");
                log::warn!("variant {} skipped: {note}", variant.index);
                out.stats.push(IterationStats {
                    variant: variant.index,
                    iteration: k,
                    generated: s.samples,
                    successful: successes,
                    selected: 0,
                    tube: None,
                    mean_reward: 0.0,
                    sigma_mean: q.mean_std(),
                    sigma_norm: q.std_norm(),
                    stalled: true,
                    resampled,
                });
                out.skipped = true;
                out.note = Some(note);
                out.proposal = q;
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        let selected_c: Vec<&[f64]> = curation.selected.iter().map(|&i| members[i].1.as_slice()).collect();
        let selected_r: Vec<f64> = curation.selected.iter().map(|&i| curation.rewards[i]).collect();
        let weights = reward_to_weight(&selected_r, cfg.curator.weight_temperature)?;
        q = update_proposal(&q, &selected_c, &weights, s.eps, s.delta)?;
        let mean_reward = if curation.rewards.is_empty() {
            0.0
        } else {
            curation.rewards.iter().sum::<f64>() / curation.rewards.len() as f64
        };
        out.stats.push(IterationStats {
            variant: variant.index,
            iteration: k,
            generated: s.samples,
            successful: members.len(),
            selected: curation.selected.len(),
            tube: Some(curation.tube),
            mean_reward,
            sigma_mean: q.mean_std(),
            sigma_norm: q.std_norm(),
            stalled: q.stalled,
            resampled,
        });
        for &i in &curation.selected {
            out.curated.push(CuratedTrajectory {
                variant: variant.index,
                iteration: k,
                reward: curation.rewards[i],
                trajectory: members[i].0.clone(),
            });
        }
        tube = Some(curation.tube);
    }
    out.final_tube = tube;
    out.proposal = q;
    if out.curated.is_empty() {
        out.skipped = true;
        out.note = Some("no successful rollouts in any iteration".into());
    }
    Ok(out)
}

/// Everything a PGDG run produces, before or after it is written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PgdgOutput {
    pub dataset: Dataset,
    pub variants: Vec<Variant>,
    pub outcomes: Vec<VariantOutcome>,
    pub relabel: RelabelReport,
    pub report: RunReport,
}

fn manifest_base(cfg: &PipelineConfig, generator: Generator) -> DatasetManifest {
    DatasetManifest {
        format: FORMAT_VERSION,
        generator,
        seed: cfg.seed,
        iterations: cfg.run.iterations,
        variants: cfg.run.variants,
        chunk_len: cfg.export.chunk_len,
        omission_fraction: 0.0,
        environment: cfg.env.clone(),
        perturbation: cfg.randomization.perturbation(),
        param_ranges: cfg.randomization.param_ranges(),
        sampler: cfg.sampler.clone(),
        curator: cfg.curator.clone(),
        relabel: cfg.relabel.clone(),
        counts: Counts::default(),
        variant_summaries: Vec::new(),
        iteration_stats: Vec::new(),
        relabel_points: Vec::new(),
    }
}

fn count_records(counts: &mut Counts, records: &[crate::dataset::DatasetRecord]) {
    counts.standard_records = records.iter().filter(|r| r.source == RecordSource::Curated).count();
    counts.relabeled_records = records.len() - counts.standard_records;
}

/// Generate the PGDG dataset in memory.
pub fn generate_pgdg(cfg: &PipelineConfig) -> Result<PgdgOutput> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let env = env.as_ref();
    let demo = load_demo(cfg, env)?;
    let variants = build_variants(cfg, env, &demo)?;
    let outcomes = par::map(&variants, |v| run_variant(cfg, env, v))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    if outcomes.iter().all(|o| o.skipped) {
        return Err(Error::AllVariantsFailed);
    }

    let manifolds = variants
        .iter()
        .map(|v| ExpertManifold::for_env(env, &v.expert.states))
        .collect::<Result<Vec<_>>>()?;
    let curated: Vec<&CuratedTrajectory> = outcomes.iter().flat_map(|o| &o.curated).collect();
    let sources: Vec<RelabelSource<'_>> = curated
        .iter()
        .map(|c| RelabelSource {
            traj: &c.trajectory,
            manifold: &manifolds[c.variant],
            tube: outcomes[c.variant].final_tube.expect("variants with curated rollouts have a tube"),
        })
        .collect();
    let relabel = relabel_dataset(env, &sources, &cfg.relabel, seed::derive(cfg.seed, &[seed::stream::RELABEL]))?;
    let trajs: Vec<Trajectory> = curated.iter().map(|c| c.trajectory.clone()).collect();
    let records = export_pairs(env, &trajs, &relabel.targets, cfg.export.chunk_len)?;

    let mut manifest = manifest_base(cfg, Generator::Pgdg);
    manifest.iteration_stats = outcomes.iter().flat_map(|o| o.stats.clone()).collect();
    let c = &mut manifest.counts;
    c.generated = manifest.iteration_stats.iter().map(|s| s.generated).sum();
    c.successful = manifest.iteration_stats.iter().map(|s| s.successful).sum();
    c.selected = manifest.iteration_stats.iter().map(|s| s.selected).sum();
    c.relabel_points = relabel.points.len();
    c.relabeled = relabel.targets.len();
    c.relabel_failed = relabel.failed.len();
    count_records(c, &records);
    manifest.omission_fraction = manifest.counts.omission_fraction();
    manifest.relabel_points = relabel.points.clone();
    manifest.variant_summaries = variants
        .iter()
        .zip(&outcomes)
        .map(|(v, o)| VariantSummary {
            index: v.index,
            object_pose: v.object_pose,
            params: v.params,
            skipped: o.skipped,
            curated: o.curated.len(),
            nominal_success: rollout(env, &v.start, &v.plan, v.params).map(|t| t.success).unwrap_or(false),
            final_tube: o.final_tube,
            note: o.note.clone(),
        })
        .collect();

    let trajectories = curated
        .iter()
        .enumerate()
        .map(|(id, c)| TrajectoryEntry {
            id,
            variant: c.variant,
            iteration: Some(c.iteration),
            source: TrajectorySource::Curated,
            reward: Some(c.reward),
            trajectory: c.trajectory.clone(),
        })
        .collect();
    let report = RunReport::from_manifest(&manifest);
    Ok(PgdgOutput {
        dataset: Dataset {
            manifest,
            records,
            trajectories,
        },
        variants,
        outcomes,
        relabel,
        report,
    })
}

fn write_run(dataset: &Dataset, report: &RunReport, out: &Path) -> Result<()> {
    serialize(dataset, out)?;
    report.write(out)
}

/// Generate the PGDG dataset and write it (plus the run report) to `cfg.run.out`.
pub fn run_pgdg(cfg: &PipelineConfig) -> Result<PgdgOutput> {
    let started = Instant::now();
    let output = generate_pgdg(cfg)?;
    write_run(&output.dataset, &output.report, &cfg.run.out)?;
    log::info!("pgdg run finished in {:.2?}", started.elapsed());
    Ok(output)
}

/// Baseline dataset: one rollout per variant of the re-anchored demo under the
/// variant's parameters, kept whether or not it succeeds.
pub fn generate_spatial_only(cfg: &PipelineConfig) -> Result<(Dataset, RunReport)> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let env = env.as_ref();
    let demo = load_demo(cfg, env)?;
    let variants = build_variants(cfg, env, &demo)?;
    let rollouts = par::map(&variants, |v| rollout(env, &v.start, &v.plan, v.params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let records = export_pairs(env, &rollouts, &[], cfg.export.chunk_len)?;
    let mut manifest = manifest_base(cfg, Generator::SpatialOnly);
    manifest.iterations = 1;
    let c = &mut manifest.counts;
    c.generated = rollouts.len();
    c.successful = rollouts.iter().filter(|t| t.success).count();
    c.selected = rollouts.len();
    count_records(c, &records);
    manifest.omission_fraction = manifest.counts.omission_fraction();
    manifest.variant_summaries = variants
        .iter()
        .zip(&rollouts)
        .map(|(v, t)| VariantSummary {
            index: v.index,
            object_pose: v.object_pose,
            params: v.params,
            skipped: false,
            curated: 1,
            nominal_success: t.success,
            final_tube: None,
            note: None,
        })
        .collect();
    let trajectories = rollouts
        .into_iter()
        .enumerate()
        .map(|(id, t)| TrajectoryEntry {
            id,
            variant: id,
            iteration: None,
            source: TrajectorySource::Baseline,
            reward: None,
            trajectory: t,
        })
        .collect();
    let report = RunReport::from_manifest(&manifest);
    Ok((
        Dataset {
            manifest,
            records,
            trajectories,
        },
        report,
    ))
}

pub fn run_spatial_only(cfg: &PipelineConfig) -> Result<(Dataset, RunReport)> {
    let (dataset, report) = generate_spatial_only(cfg)?;
    write_run(&dataset, &report, &cfg.run.out)?;
    Ok((dataset, report))
}
