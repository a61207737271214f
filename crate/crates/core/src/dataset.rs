//! Supervision pairs, the dataset manifest, and their on-disk layout.
//!
//! A dataset directory holds three files:
//!
//! - `manifest`: TOML with run settings, counts and per-iteration statistics.
//! - `records`: one JSON object per line, one line per observation/action-chunk pair.
//! - `trajectories`: one JSON object per line with the raw rollouts behind the records.
//!
//! Floats are written as shortest round-trip decimals, so reading a dataset back
//! reproduces every value bit for bit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::{pairwise_distances, CuratorConfig, DctEmbedder, TubeBounds};
use crate::env::{Action, EnvConfig, EnvParams, Environment, ParamRanges, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{PerturbationRange, Pose};
use crate::relabel::{CemConfig, RelabelPoint, RelabelTarget};
use crate::sampler::SamplerConfig;

pub const MANIFEST_FILE: &str = "manifest";
pub const RECORDS_FILE: &str = "records";
pub const TRAJECTORIES_FILE: &str = "trajectories";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Curated,
    Relabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub observation: Vec<f64>,
    pub action_chunk: Vec<Action>,
    pub source: RecordSource,
    pub trajectory: usize,
    pub timestep: usize,
}

/// One standard record per window `t ∈ [0, T - k]` of every curated trajectory,
/// then one record per relabel target.
pub fn export_pairs(
    env: &dyn Environment,
    curated: &[Trajectory],
    relabels: &[RelabelTarget],
    chunk_len: usize,
) -> Result<Vec<DatasetRecord>> {
    if chunk_len == 0 {
        return Err(Error::invalid("chunk length must be at least 1"));
    }
    let mut out = Vec::new();
    for (i, traj) in curated.iter().enumerate() {
        let horizon = traj.actions.len();
        if chunk_len > horizon {
            return Err(Error::invalid(format!(
                "chunk length {chunk_len} exceeds trajectory {i} length {horizon}"
            )));
        }
        for t in 0..=horizon - chunk_len {
            out.push(DatasetRecord {
                observation: env.observe(&traj.states[t], &traj.context),
                action_chunk: traj.actions[t..t + chunk_len].to_vec(),
                source: RecordSource::Curated,
                trajectory: i,
                timestep: traj.start_step + t,
            });
        }
    }
    for r in relabels {
        out.push(DatasetRecord {
            observation: r.observation.clone(),
            action_chunk: r.chunk.clone(),
            source: RecordSource::Relabeled,
            trajectory: r.point.trajectory,
            timestep: r.point.timestep,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Pgdg,
    SpatialOnly,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub generated: usize,
    pub successful: usize,
    pub selected: usize,
    pub relabel_points: usize,
    pub relabeled: usize,
    pub relabel_failed: usize,
    pub standard_records: usize,
    pub relabeled_records: usize,
}

impl Counts {
    /// `1 - selected / successful`, or 0 with no successes.
    pub fn omission_fraction(&self) -> f64 {
        if self.successful == 0 {
            0.0
        } else {
            (1.0 - self.selected as f64 / self.successful as f64).clamp(0.0, 1.0)
        }
    }

    pub fn records(&self) -> usize {
        self.standard_records + self.relabeled_records
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub variant: usize,
    pub iteration: usize,
    pub generated: usize,
    pub successful: usize,
    pub selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube: Option<TubeBounds>,
    pub mean_reward: f64,
    pub sigma_mean: f64,
    pub sigma_norm: f64,
    pub stalled: bool,
    /// The batch was redrawn from a widened proposal after too few successes.
    pub resampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub index: usize,
    pub object_pose: Pose,
    pub params: EnvParams,
    pub skipped: bool,
    pub curated: usize,
    /// Whether the re-anchored nominal plan succeeds.
    pub nominal_success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_tube: Option<TubeBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub generator: Generator,
    pub seed: u64,
    pub iterations: usize,
    pub variants: usize,
    pub chunk_len: usize,
    pub omission_fraction: f64,
    pub environment: EnvConfig,
    pub perturbation: PerturbationRange,
    pub param_ranges: ParamRanges,
    pub sampler: SamplerConfig,
    pub curator: CuratorConfig,
    pub relabel: CemConfig,
    pub counts: Counts,
    #[serde(default)]
    pub variant_summaries: Vec<VariantSummary>,
    #[serde(default)]
    pub iteration_stats: Vec<IterationStats>,
    #[serde(default)]
    pub relabel_points: Vec<RelabelPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    Curated,
    Baseline,
}

/// A stored rollout; `id` matches `DatasetRecord::trajectory`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub id: usize,
    pub variant: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    pub source: TrajectorySource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<DatasetRecord>,
    pub trajectories: Vec<TrajectoryEntry>,
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let line = text.lines().count();
        let column = text.lines().last().map_or(0, str::len) + 1;
        return Err(parse_err(line, column, "file is truncated (missing final newline)".into()));
    }
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.column(), e.to_string())))
        .collect()
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// Write `manifest`, `records` and `trajectories` into `dir`, creating it.
pub fn serialize(dataset: &Dataset, dir: &Path) -> Result<()> {
    for r in &dataset.records {
        check_finite(r.observation.iter().chain(r.action_chunk.iter().flatten()), "record")?;
    }
    for t in &dataset.trajectories {
        check_finite(
            t.trajectory
                .states
                .iter()
                .flatten()
                .chain(t.trajectory.actions.iter().flatten()),
            "trajectory",
        )?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&dataset.manifest).map_err(|e| Error::invalid(format!("manifest: {e}")))?;
    let path = manifest_path(dir);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    write_jsonl(&dir.join(RECORDS_FILE), &dataset.records)?;
    write_jsonl(&dir.join(TRAJECTORIES_FILE), &dataset.trajectories)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| {
                let before = &text[..s.start.min(text.len())];
                let line = before.matches('\n').count() + 1;
                (line, s.start - before.rfind('\n').map_or(0, |p| p + 1) + 1)
            })
            .unwrap_or((0, 0));
        Error::Parse {
            path: path.clone(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Raw trajectory dump; an error if the file is missing.
pub fn read_trajectories(dir: &Path) -> Result<Vec<TrajectoryEntry>> {
    read_jsonl(&dir.join(TRAJECTORIES_FILE))
}

/// Read a dataset directory back. Record counts must match the manifest, so a
/// file cut at a line boundary is rejected too.
pub fn deserialize(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let records_path = dir.join(RECORDS_FILE);
    let records: Vec<DatasetRecord> = read_jsonl(&records_path)?;
    let expected = manifest.counts.records();
    if records.len() != expected {
        return Err(Error::Parse {
            path: records_path,
            line: records.len() + 1,
            column: 1,
            message: format!("manifest lists {expected} records, file has {}", records.len()),
        });
    }
    let trajectories = if dir.join(TRAJECTORIES_FILE).exists() {
        read_trajectories(dir)?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        manifest,
        records,
        trajectories,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLine {
    pub variant: usize,
    pub iteration: usize,
    pub generated: usize,
    pub successful: usize,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Summary {
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

pub const REWARD_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub generator: Generator,
    pub environment: String,
    pub counts: Counts,
    pub omission_fraction: f64,
    pub iterations: Vec<IterationLine>,
    /// Curated-trajectory rewards in `REWARD_BINS` equal bins over `[0, 1]`.
    pub reward_histogram: Vec<usize>,
    pub trajectory_success_rate: Option<f64>,
    pub embedding_distances: Option<Summary>,
}

/// Summary of a dataset: per-iteration success counts, omission fraction,
/// reward histogram and spread of pairwise embedding distances.
pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats> {
    let m = &dataset.manifest;
    let mut histogram = vec![0; REWARD_BINS];
    for r in dataset.trajectories.iter().filter_map(|t| t.reward) {
        let bin = ((r.clamp(0.0, 1.0) * REWARD_BINS as f64) as usize).min(REWARD_BINS - 1);
        histogram[bin] += 1;
    }
    let trajectory_success_rate = (!dataset.trajectories.is_empty()).then(|| {
        dataset.trajectories.iter().filter(|t| t.trajectory.success).count() as f64 / dataset.trajectories.len() as f64
    });
    let env = m.environment.build()?;
    let t_tilde = m.curator.t_tilde.unwrap_or(env.horizon());
    let embedding_distances = if dataset.trajectories.len() >= 2 && m.curator.k_dct < t_tilde {
        let embedder = DctEmbedder::new(t_tilde, m.curator.k_dct)?;
        let embeddings = dataset
            .trajectories
            .iter()
            .map(|t| embedder.embed_trajectory(env.as_ref(), &t.trajectory))
            .collect::<Result<Vec<_>>>()?;
        Summary::of(&pairwise_distances(&embeddings)?)
    } else {
        None
    };
    Ok(DatasetStats {
        generator: m.generator,
        environment: m.environment.name().to_string(),
        counts: m.counts.clone(),
        omission_fraction: m.counts.omission_fraction(),
        iterations: m
            .iteration_stats
            .iter()
            .map(|s| IterationLine {
                variant: s.variant,
                iteration: s.iteration,
                generated: s.generated,
                successful: s.successful,
                selected: s.selected,
            })
            .collect(),
        reward_histogram: histogram,
        trajectory_success_rate,
        embedding_distances,
    })
}

impl DatasetStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        let generator = match self.generator {
            Generator::Pgdg => "pgdg",
            Generator::SpatialOnly => "spatial-only",
        };
        s += &format!("dataset ({generator}, {})\n", self.environment);
        s += &format!(
            "  rollouts: {} generated, {} successful, {} selected\n",
            c.generated, c.successful, c.selected
        );
        s += &format!("  DPP omission: {:.2}%\n", 100.0 * self.omission_fraction);
        s += &format!(
            "  relabel: {} points, {} targets, {} failed\n",
            c.relabel_points, c.relabeled, c.relabel_failed
        );
        s += &format!(
            "  records: {} standard, {} relabeled\n",
            c.standard_records, c.relabeled_records
        );
        if let Some(rate) = self.trajectory_success_rate {
            s += &format!("  stored trajectory success: {:.1}%\n", 100.0 * rate);
        }
        if !self.iterations.is_empty() {
            s += "  per iteration (variant/iter: successful/generated -> selected):\n";
            for it in &self.iterations {
                s += &format!(
                    "    {}/{}: {}/{} -> {}\n",
                    it.variant, it.iteration, it.successful, it.generated, it.selected
                );
            }
        }
        if self.reward_histogram.iter().any(|n| *n > 0) {
            s += "  reward histogram:\n";
            for (i, n) in self.reward_histogram.iter().enumerate() {
                let lo = i as f64 / REWARD_BINS as f64;
                s += &format!("    [{:.1}, {:.1}{} {}\n", lo, lo + 0.1, if i + 1 == REWARD_BINS { "]" } else { ")" }, n);
            }
        }
        if let Some(d) = &self.embedding_distances {
            s += &format!(
                "  embedding distance: min {:.4}, median {:.4}, mean {:.4}, max {:.4}\n",
                d.min, d.median, d.mean, d.max
            );
        }
        s
    }
}
