use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{Counts, DatasetManifest, Generator, IterationStats};
use crate::error::{Error, Result};

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSONL: &str = "report.jsonl";

/// Per-iteration statistics and final sizes of a run. Wall time is left out so
/// that reports are reproducible byte for byte; it goes to the log instead.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub generator: Generator,
    pub seed: u64,
    pub iterations: Vec<IterationStats>,
    pub counts: Counts,
    pub omission_fraction: f64,
    pub variants: usize,
    pub skipped_variants: Vec<usize>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line<'a> {
    Iteration(&'a IterationStats),
    Summary {
        generator: Generator,
        seed: u64,
        variants: usize,
        skipped_variants: &'a [usize],
        omission_fraction: f64,
        #[serde(flatten)]
        counts: &'a Counts,
    },
}

impl RunReport {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        RunReport {
            generator: m.generator,
            seed: m.seed,
            iterations: m.iteration_stats.clone(),
            counts: m.counts.clone(),
            omission_fraction: m.counts.omission_fraction(),
            variants: m.variants,
            skipped_variants: m
                .variant_summaries
                .iter()
                .filter(|v| v.skipped)
                .map(|v| v.index)
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut s = format!(
            "run: {:?}, seed {}, {} variants ({} skipped)\n",
            self.generator,
            self.seed,
            self.variants,
            self.skipped_variants.len()
        );
        if !self.iterations.is_empty() {
            s += "variant iter  succ/gen  sel  r_min    r_max    reward  sigma_mean\n";
            for it in &self.iterations {
                let (lo, hi) = it.tube.map_or((f64::NAN, f64::NAN), |t| (t.r_min, t.r_max));
                s += &format!(
                    "{:>7} {:>4} {:>4}/{:<4} {:>4}  {:<8.4} {:<8.4} {:<7.4} {:.5}{}{}\n",
                    it.variant,
                    it.iteration,
                    it.successful,
                    it.generated,
                    it.selected,
                    lo,
                    hi,
                    it.mean_reward,
                    it.sigma_mean,
                    if it.resampled { "  resampled" } else { "" },
                    if it.stalled { "  stalled" } else { "" },
                );
            }
        }
        s += &format!(
            "rollouts: {} generated, {} successful, {} selected (omission {:.2}%)\n",
            c.generated,
            c.successful,
            c.selected,
            100.0 * self.omission_fraction
        );
        s += &format!(
            "relabel: {} points, {} targets, {} failed\n",
            c.relabel_points, c.relabeled, c.relabel_failed
        );
        s += &format!(
            "records: {} standard, {} relabeled\n",
            c.standard_records, c.relabeled_records
        );
        s
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        let lines = self.iterations.iter().map(Line::Iteration).chain([Line::Summary {
            generator: self.generator,
            seed: self.seed,
            variants: self.variants,
            skipped_variants: &self.skipped_variants,
            omission_fraction: self.omission_fraction,
            counts: &self.counts,
        }]);
        for line in lines {
            s += &serde_json::to_string(&line).expect("report serializes");
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [(REPORT_TEXT, self.to_text()), (REPORT_JSONL, self.to_jsonl())] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
