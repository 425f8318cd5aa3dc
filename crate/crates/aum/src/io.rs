//! On-disk formats. Every structured file is UTF-8 JSON or JSON lines with
//! shortest round-trip float formatting, so rewriting a value yields the
//! same bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use aum_core::data::{Cohort, GeneratorConfig, Patient, Provenance};
use aum_core::evaluation::Variant;
use aum_core::model::ModelConfig;
use aum_core::training::{Checkpoint, EpochRecord, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum CohortRecord {
    Header {
        format_version: u32,
        config_hash: String,
        seed: u64,
        n_patients: usize,
        config: GeneratorConfig,
        history: Vec<Provenance>,
    },
    Patient {
        id: usize,
        label: u8,
        mask: Vec<bool>,
        observations: Vec<Option<Vec<f64>>>,
        latent: Vec<f64>,
        risk_score: f64,
    },
}

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("records serialize");
    s.push('\n');
    s
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(json_line).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.into(),
        detail: e.to_string(),
    })
}

pub fn cohort_to_string(cohort: &Cohort, config_hash: &str) -> String {
    let mut out = json_line(&CohortRecord::Header {
        format_version: COHORT_FORMAT_VERSION,
        config_hash: config_hash.into(),
        seed: cohort.seed,
        n_patients: cohort.len(),
        config: cohort.config.clone(),
        history: cohort.history.clone(),
    });
    for p in &cohort.patients {
        out.push_str(&json_line(&CohortRecord::Patient {
            id: p.id,
            label: p.label,
            mask: p.mask(),
            observations: p.observations.clone(),
            latent: p.latent.clone(),
            risk_score: p.risk_score,
        }));
    }
    out
}

pub fn write_cohort(path: &Path, cohort: &Cohort, config_hash: &str) -> Result<()> {
    write_text(path, &cohort_to_string(cohort, config_hash))
}

/// Reads a cohort file, returning the cohort and the config hash in its header.
pub fn read_cohort(path: &Path) -> Result<(Cohort, String)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: usize, detail: String| CliError::Format {
        path: path.into(),
        detail: format!("line {line}: {detail}"),
    };
    let mut header = None;
    let mut patients = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CohortRecord = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        match (record, header.is_some()) {
            (h @ CohortRecord::Header { .. }, false) if i == 0 => header = Some(h),
            (CohortRecord::Header { .. }, _) => return Err(bad(i + 1, "header must be the first and only header record".into())),
            (_, false) => return Err(bad(i + 1, "patient record before header".into())),
            (
                CohortRecord::Patient {
                    id,
                    label,
                    mask,
                    observations,
                    latent,
                    risk_score,
                },
                true,
            ) => {
                let p = Patient {
                    id,
                    label,
                    latent,
                    risk_score,
                    observations,
                };
                if p.mask() != mask {
                    return Err(bad(i + 1, format!("mask of patient {id} disagrees with its observations")));
                }
                patients.push(p);
            }
        }
    }
    let Some(CohortRecord::Header {
        format_version,
        config_hash,
        seed,
        n_patients,
        config,
        history,
    }) = header
    else {
        return Err(bad(1, "missing header record".into()));
    };
    if format_version != COHORT_FORMAT_VERSION {
        return Err(bad(1, format!("unsupported format version {format_version}")));
    }
    if patients.len() != n_patients {
        return Err(bad(1, format!("header declares {n_patients} patients, file has {}", patients.len())));
    }
    Ok((
        Cohort {
            config,
            seed,
            history,
            patients,
        },
        config_hash,
    ))
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(path, checkpoint)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        config_hash: String,
        variant: Variant,
        seed: u64,
        model: ModelConfig,
        train: TrainConfig,
    },
    Epoch(EpochRecord),
}

pub fn train_log_to_string(header: LogRecord, epochs: &[EpochRecord]) -> String {
    let mut out = json_line(&header);
    for e in epochs {
        out.push_str(&json_line(&LogRecord::Epoch(e.clone())));
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Format {
                path: path.into(),
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Wall-clock seconds per epoch. Kept apart from the training log so the
/// log itself stays reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub seconds: f64,
}

pub fn append_line(file: &mut fs::File, path: &Path, line: &str) -> Result<()> {
    file.write_all(line.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use aum_core::data::{apply_missingness, generate, inject_noise, MissingnessSpec};

    fn cohort() -> Cohort {
        let c = generate(&GeneratorConfig { n_patients: 40, ..GeneratorConfig::default() }, 3).unwrap();
        let c = apply_missingness(&c, &MissingnessSpec::mnar(0.4), 3).unwrap();
        inject_noise(&c, 0.1, 3).unwrap()
    }

    #[test]
    fn cohort_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let c = cohort();
        write_cohort(&path, &c, "abc").unwrap();
        let (back, hash) = read_cohort(&path).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back, c);
        assert_eq!(cohort_to_string(&back, "abc"), fs::read_to_string(&path).unwrap());
        assert!(c.patients.iter().any(|p| p.observations.iter().any(Option::is_none)));
    }

    #[test]
    fn corrupt_cohorts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let text = cohort_to_string(&cohort(), "h");
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(read_cohort(&path), Err(CliError::Format { .. })));
        fs::write(&path, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(matches!(read_cohort(&path), Err(CliError::Format { .. })));
        let flipped = text.replacen("\"mask\":[true", "\"mask\":[false", 1);
        fs::write(&path, flipped).unwrap();
        assert!(matches!(read_cohort(&path), Err(CliError::Format { .. })));
        let err = read_cohort(&dir.path().join("absent.jsonl")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
