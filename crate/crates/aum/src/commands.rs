//! The four subcommands. Each returns what it wrote so callers and tests
//! can inspect it without reparsing.

use std::path::{Path, PathBuf};

use aum_core::data::Cohort;

use crate::config::{Axis, ExperimentConfig};
use crate::error::Result;
use crate::experiment::{
    ablate_specs, ablation_rows, ablation_summary, build_cohort, results_csv, run_many, run_on_cohort, sweep_specs,
    sweep_summary, AblationRow, RunArtifacts, RunRecord, RunSpec,
};
use crate::io::{self, cohort_to_string, read_cohort, to_jsonl, train_log_to_string, write_text};

pub fn cohort_path(out: &Path, seed: u64) -> PathBuf {
    out.join("cohorts").join(format!("seed_{seed}.jsonl"))
}

pub fn train_dir(out: &Path, spec: &RunSpec) -> PathBuf {
    out.join("train").join(spec.variant.id()).join(format!("seed_{}", spec.seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub seed: u64,
    pub path: PathBuf,
    pub n_patients: usize,
    pub prevalence: f64,
    pub missing_rates: Vec<f64>,
}

impl std::fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "seed {}: n={} prevalence={} missing rates per modality {:?} -> {}",
            self.seed,
            self.n_patients,
            self.prevalence,
            self.missing_rates,
            self.path.display()
        )
    }
}

pub fn generate(config: &ExperimentConfig, out: &Path) -> Result<Vec<CohortSummary>> {
    let hash = config.hash();
    config
        .seeds
        .iter()
        .map(|&seed| {
            let cohort = build_cohort(config, &config.data.missingness, config.data.epsilon, seed)?;
            let path = cohort_path(out, seed);
            write_text(&path, &cohort_to_string(&cohort, &hash))?;
            Ok(CohortSummary {
                seed,
                path,
                n_patients: cohort.len(),
                prevalence: cohort.prevalence(),
                missing_rates: cohort.missing_rates(),
            })
        })
        .collect()
}

fn write_run(dir: &Path, a: &RunArtifacts) -> Result<()> {
    io::write_checkpoint(&dir.join("checkpoint.json"), &a.checkpoint)?;
    write_text(&dir.join("train_log.jsonl"), &train_log_to_string(a.log_header.clone(), &a.log))?;
    write_text(&dir.join("timing.jsonl"), &to_jsonl(&a.timing))?;
    io::write_json(&dir.join("metrics.json"), &a.record)
}

/// Trains the configured variant on the cohort files written by
/// `generate`, one run per seed.
pub fn train(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<Vec<RunRecord>> {
    let hash = config.hash();
    let m = &config.data.missingness;
    let cohorts: Vec<(RunSpec, Cohort)> = config
        .seeds
        .iter()
        .map(|&seed| {
            let (cohort, _) = read_cohort(&cohort_path(out, seed))?;
            let spec = RunSpec {
                seed,
                variant: config.model.variant,
                mechanism: m.mechanism,
                missing_ratio: m.ratio,
                epsilon: config.data.epsilon,
            };
            Ok((spec, cohort))
        })
        .collect::<Result<_>>()?;
    let runs = crate::experiment::parallel_map(&cohorts, workers, |(spec, cohort)| {
        let a = run_on_cohort(config, &hash, cohort, spec)?;
        write_run(&train_dir(out, spec), &a)?;
        Ok(a.record)
    });
    runs.into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub summary: String,
    pub dir: PathBuf,
}

pub fn sweep(config: &ExperimentConfig, axis: Axis, out: &Path, workers: usize) -> Result<SweepOutput> {
    let specs = sweep_specs(config, axis)?;
    let records: Vec<RunRecord> = run_many(config, &specs, workers)?.into_iter().map(|a| a.record).collect();
    let dir = out.join(format!("sweep_{}", axis.id()));
    let summary = sweep_summary(config, axis, &records);
    write_text(&dir.join("results.csv"), &results_csv(axis.id(), &records))?;
    write_text(&dir.join("results.jsonl"), &to_jsonl(&records))?;
    write_text(&dir.join("summary.txt"), &summary)?;
    Ok(SweepOutput { records, summary, dir })
}

#[derive(Debug, Clone)]
pub struct AblateOutput {
    pub records: Vec<RunRecord>,
    pub rows: Vec<AblationRow>,
    pub summary: String,
    pub dir: PathBuf,
}

pub fn ablate(config: &ExperimentConfig, out: &Path, workers: usize) -> Result<AblateOutput> {
    let specs = ablate_specs(config)?;
    let runs = run_many(config, &specs, workers)?;
    let dir = out.join("ablate");
    for (spec, a) in specs.iter().zip(&runs) {
        let stem = dir.join("logs").join(spec.variant.id()).join(format!("seed_{}", spec.seed));
        write_text(&stem.join("train_log.jsonl"), &train_log_to_string(a.log_header.clone(), &a.log))?;
        write_text(&stem.join("timing.jsonl"), &to_jsonl(&a.timing))?;
    }
    let records: Vec<RunRecord> = runs.into_iter().map(|a| a.record).collect();
    let rows = ablation_rows(config, &records)?;
    let summary = ablation_summary(config, &rows);
    write_text(&dir.join("results.csv"), &results_csv("ablate", &records))?;
    write_text(&dir.join("results.jsonl"), &to_jsonl(&records))?;
    io::write_json(&dir.join("summary.json"), &serde_json::json!({ "config_hash": config.hash(), "seeds": config.seeds, "rows": rows }))?;
    write_text(&dir.join("summary.txt"), &summary)?;
    Ok(AblateOutput {
        records,
        rows,
        summary,
        dir,
    })
}
