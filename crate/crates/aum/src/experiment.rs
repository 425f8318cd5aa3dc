//! Single runs, sweeps and ablations.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use aum_core::data::{apply_missingness, generate, inject_noise, stratified_split, Cohort, Mechanism, MissingnessSpec};
use aum_core::evaluation::{MetricReport, Variant};
use aum_core::model::AumModel;
use aum_core::training::{predict, train, Checkpoint, EpochRecord};
use serde::{Deserialize, Serialize};

use crate::config::{Axis, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::io::{EpochTiming, LogRecord};

pub const WORKERS_ENV: &str = "AUM_WORKERS";

/// Worker count from `AUM_WORKERS`, defaulting to the available cores.
pub fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Applies `f` to every item on up to `workers` threads. Output order
/// follows input order whatever the scheduling.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Generates a cohort, masks it and adds noise, all from `seed`.
pub fn build_cohort(config: &ExperimentConfig, missingness: &MissingnessSpec, epsilon: f64, seed: u64) -> Result<Cohort> {
    let c = generate(&config.data.cohort, seed)?;
    let c = apply_missingness(&c, missingness, seed)?;
    Ok(inject_noise(&c, epsilon, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub seed: u64,
    pub variant: Variant,
    pub mechanism: Mechanism,
    pub missing_ratio: f64,
    pub epsilon: f64,
}

/// The reproducible outcome of one run: one line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    pub mechanism: Mechanism,
    pub missing_ratio: f64,
    pub epsilon: f64,
    pub best_epoch: usize,
    pub param_count: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
    pub log_header: LogRecord,
    pub log: Vec<EpochRecord>,
    pub timing: Vec<EpochTiming>,
}

/// Trains one variant on `cohort` and evaluates the selected checkpoint on
/// the test split.
pub fn run_on_cohort(config: &ExperimentConfig, hash: &str, cohort: &Cohort, spec: &RunSpec) -> Result<RunArtifacts> {
    let (model, mut train_cfg) = config.resolve(spec.variant)?;
    train_cfg.seed = spec.seed;
    let split = stratified_split(cohort, spec.seed);
    let mut timing = Vec::new();
    let mut clock = Instant::now();
    let outcome = train(cohort, &split, &model, &train_cfg, hash, &mut |rec, _| {
        timing.push(EpochTiming {
            epoch: rec.epoch,
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    })?;
    let scores = predict(&outcome.best, cohort, &split.test)?;
    let labels: Vec<u8> = split.test.iter().map(|&i| cohort.patients[i].label).collect();
    let report = MetricReport::compute(&scores, &labels, spec.variant, spec.seed)?;
    let record = RunRecord {
        config_hash: hash.into(),
        seed: spec.seed,
        variant: spec.variant,
        mechanism: spec.mechanism,
        missing_ratio: spec.missing_ratio,
        epsilon: spec.epsilon,
        best_epoch: outcome.best.epoch,
        param_count: outcome.last.param_count(),
        report,
    };
    let log_header = LogRecord::Header {
        config_hash: hash.into(),
        variant: spec.variant,
        seed: spec.seed,
        model: outcome.best.model.clone(),
        train: train_cfg,
    };
    Ok(RunArtifacts {
        record,
        checkpoint: outcome.best,
        log_header,
        log: outcome.log,
        timing,
    })
}

/// Regenerates the cohort for `spec` and trains on it.
pub fn run(config: &ExperimentConfig, hash: &str, spec: &RunSpec) -> Result<RunArtifacts> {
    let missingness = config.missingness(spec.mechanism, spec.missing_ratio);
    let cohort = build_cohort(config, &missingness, spec.epsilon, spec.seed)?;
    run_on_cohort(config, hash, &cohort, spec)
}

pub fn run_many(config: &ExperimentConfig, specs: &[RunSpec], workers: usize) -> Result<Vec<RunArtifacts>> {
    let hash = config.hash();
    parallel_map(specs, workers, |s| {
        let out = run(config, &hash, s);
        if let Ok(a) = &out {
            log::info!(
                "{} seed {} {} r={} eps={}: test AUC-ROC {:.4}",
                s.variant,
                s.seed,
                mechanism_id(s.mechanism),
                s.missing_ratio,
                s.epsilon,
                a.record.report.auc_roc
            );
        }
        out
    })
    .into_iter()
    .collect()
}

pub fn mechanism_id(m: Mechanism) -> &'static str {
    match m {
        Mechanism::Mcar => "mcar",
        Mechanism::Mnar => "mnar",
    }
}

/// Grid of runs for a sweep along `axis`, in reporting order.
pub fn sweep_specs(config: &ExperimentConfig, axis: Axis) -> Result<Vec<RunSpec>> {
    let s = &config.sweep;
    if s.variants.is_empty() {
        return Err(CliError::Config("sweep.variants is empty".into()));
    }
    let points: Vec<(Mechanism, f64, f64)> = match axis {
        Axis::MissingRatio => s
            .mechanisms
            .iter()
            .flat_map(|&m| s.missing_ratios.iter().map(move |&r| (m, r, config.data.epsilon)))
            .collect(),
        Axis::Noise => s
            .noise_levels
            .iter()
            .map(|&e| (config.data.missingness.mechanism, config.data.missingness.ratio, e))
            .collect(),
    };
    if points.is_empty() {
        return Err(CliError::Config(format!("sweep grid for axis {} is empty", axis.id())));
    }
    let mut specs = Vec::new();
    for (mechanism, missing_ratio, epsilon) in points {
        config.missingness(mechanism, missing_ratio).validate()?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(CliError::Config(format!("noise level {epsilon} must be finite and non-negative")));
        }
        for &seed in &config.seeds {
            for &variant in &s.variants {
                config.resolve(variant)?;
                specs.push(RunSpec {
                    seed,
                    variant,
                    mechanism,
                    missing_ratio,
                    epsilon,
                });
            }
        }
    }
    Ok(specs)
}

pub fn ablate_specs(config: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    if config.ablate.variants.is_empty() {
        return Err(CliError::Config("ablate.variants is empty".into()));
    }
    let m = &config.data.missingness;
    let mut specs = Vec::new();
    for &variant in &config.ablate.variants {
        config.resolve(variant)?;
        for &seed in &config.seeds {
            specs.push(RunSpec {
                seed,
                variant,
                mechanism: m.mechanism,
                missing_ratio: m.ratio,
                epsilon: config.data.epsilon,
            });
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Mean test AUC-ROC per (mechanism, missing ratio, epsilon, variant).
pub fn aggregate(records: &[RunRecord]) -> BTreeMap<(String, String, String, Variant), MeanStd> {
    let mut groups: BTreeMap<(String, String, String, Variant), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                mechanism_id(r.mechanism).to_string(),
                r.missing_ratio.to_string(),
                r.epsilon.to_string(),
                r.variant,
            ))
            .or_default()
            .push(r.report.auc_roc);
    }
    groups.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect()
}

pub const CSV_HEADER: &str =
    "config_hash,axis,mechanism,missing_ratio,epsilon,variant,seed,auc_roc,auc_prc,n_samples,n_positives,best_epoch,param_count";

pub fn results_csv(axis: &str, records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config_hash,
            axis,
            mechanism_id(r.mechanism),
            r.missing_ratio,
            r.epsilon,
            r.variant,
            r.seed,
            r.report.auc_roc,
            r.report.auc_prc,
            r.report.n_samples,
            r.report.n_positives,
            r.best_epoch,
            r.param_count
        ));
    }
    out
}

/// One row per sweep point, one column per variant.
pub fn sweep_summary(config: &ExperimentConfig, axis: Axis, records: &[RunRecord]) -> String {
    let variants = &config.sweep.variants;
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for r in records {
        let key = (mechanism_id(r.mechanism).to_string(), r.missing_ratio, r.epsilon);
        if !rows.iter().any(|k| k.0 == key.0 && k.1 == key.1 && k.2 == key.2) {
            rows.push(key);
        }
    }
    let agg = aggregate(records);
    let mut out = format!(
        "sweep {}\nconfig {}\nseeds {:?}\nmean ± std test AUC-ROC\n\n",
        axis.id(),
        config.hash(),
        config.seeds
    );
    let value_name = match axis {
        Axis::MissingRatio => "ratio",
        Axis::Noise => "epsilon",
    };
    out.push_str(&format!("{:<10}{:<9}", "mechanism", value_name));
    for v in variants {
        out.push_str(&format!("{:<22}", v.id()));
    }
    out.push('\n');
    for (mech, ratio, eps) in rows {
        let value = match axis {
            Axis::MissingRatio => ratio,
            Axis::Noise => eps,
        };
        out.push_str(&format!("{:<10}{:<9}", mech, value));
        for &v in variants {
            let cell = agg
                .get(&(mech.clone(), ratio.to_string(), eps.to_string(), v))
                .map_or_else(|| "-".to_string(), ToString::to_string);
            out.push_str(&format!("{cell:<22}"));
        }
        out.push('\n');
    }
    out
}

/// Parameter names a variant adds or removes relative to the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiff {
    pub variant: Variant,
    pub param_count: usize,
    pub delta: i64,
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

pub fn param_diffs(config: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<ParamDiff>> {
    let (full_cfg, _) = config.resolve(Variant::Full)?;
    let full = AumModel::init(&full_cfg, 0)?;
    let full_names = full.params();
    variants
        .iter()
        .map(|&v| {
            let (cfg, _) = config.resolve(v)?;
            let m = AumModel::init(&cfg, 0)?;
            let names = m.params();
            Ok(ParamDiff {
                variant: v,
                param_count: m.param_count(),
                delta: m.param_count() as i64 - full.param_count() as i64,
                added: names.keys().filter(|k| !full_names.contains_key(*k)).cloned().collect(),
                removed: full_names.keys().filter(|k| !names.contains_key(*k)).cloned().collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: usize,
    pub auc_roc: MeanStd,
    pub auc_prc: MeanStd,
    pub params: ParamDiff,
}

pub fn ablation_rows(config: &ExperimentConfig, records: &[RunRecord]) -> Result<Vec<AblationRow>> {
    let diffs = param_diffs(config, &config.ablate.variants)?;
    Ok(diffs
        .into_iter()
        .map(|params| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.variant == params.variant).collect();
            let roc: Vec<f64> = mine.iter().map(|r| r.report.auc_roc).collect();
            let prc: Vec<f64> = mine.iter().map(|r| r.report.auc_prc).collect();
            AblationRow {
                variant: params.variant,
                runs: mine.len(),
                auc_roc: MeanStd::of(&roc),
                auc_prc: MeanStd::of(&prc),
                params,
            }
        })
        .collect())
}

pub fn ablation_summary(config: &ExperimentConfig, rows: &[AblationRow]) -> String {
    let mut out = format!(
        "ablation\nconfig {}\nseeds {:?}\nmean ± std over seeds, test split\n\n{:<30}{:<6}{:<20}{:<20}{:<9}{}\n",
        config.hash(),
        config.seeds,
        "variant",
        "runs",
        "auc_roc",
        "auc_prc",
        "params",
        "Δparams vs full"
    );
    for r in rows {
        let mut diff = format!("{:+}", r.params.delta);
        if !r.params.added.is_empty() {
            diff.push_str(&format!(" added {}", r.params.added.join(" ")));
        }
        if !r.params.removed.is_empty() {
            diff.push_str(&format!(" removed {}", r.params.removed.join(" ")));
        }
        out.push_str(&format!(
            "{:<30}{:<6}{:<20}{:<20}{:<9}{}\n",
            r.variant.id(),
            r.runs,
            r.auc_roc.to_string(),
            r.auc_prc.to_string(),
            r.params.param_count,
            diff
        ));
    }
    let mut order: Vec<&AblationRow> = rows.iter().collect();
    order.sort_by(|a, b| b.auc_roc.mean.total_cmp(&a.auc_roc.mean));
    out.push_str(&format!(
        "\nordering by mean auc_roc: {}\n",
        order.iter().map(|r| r.variant.id()).collect::<Vec<_>>().join(" > ")
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let xs: Vec<u64> = (0..57).collect();
        for w in [1, 3, 16] {
            assert_eq!(parallel_map(&xs, w, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert!(parallel_map(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn sweep_cardinality() {
        let mut c = ExperimentConfig {
            seeds: vec![0, 1, 2],
            ..ExperimentConfig::default()
        };
        c.sweep.mechanisms = vec![Mechanism::Mcar];
        assert_eq!(sweep_specs(&c, Axis::MissingRatio).unwrap().len(), 24);
        c.sweep.mechanisms = vec![Mechanism::Mcar, Mechanism::Mnar];
        let both = sweep_specs(&c, Axis::MissingRatio).unwrap();
        assert_eq!(both.len(), 48);
        assert!(both.iter().any(|s| s.mechanism == Mechanism::Mnar));
        assert_eq!(sweep_specs(&c, Axis::Noise).unwrap().len(), 18);
        c.sweep.noise_levels.clear();
        assert_eq!(sweep_specs(&c, Axis::Noise).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn ablation_cardinality_and_param_diff() {
        let c = ExperimentConfig::default();
        assert_eq!(ablate_specs(&c).unwrap().len(), 25);
        for d in param_diffs(&c, &Variant::ALL).unwrap() {
            assert!(d.removed.is_empty());
            let mut declared = d.variant.declared_added_params(c.model.layers);
            declared.sort();
            assert_eq!(d.added, declared, "{}", d.variant);
            assert_eq!(d.delta == 0, d.added.is_empty());
        }
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.std, m.n), (2.0, 1.0, 3));
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
    }
}
