//! Synthetic multimodal cohorts.
//!
//! A patient has a hidden latent state `u ~ N(0, I_k)`. Modality `m`
//! observes `x = A_m u + η_m` with `η_m ~ N(0, s_m² I)`, so the noise scale
//! `s_m` controls how informative the modality is. The label is
//! `1[w·u + b > 0]`, with `b` set so the positive rate hits the configured
//! prevalence.
//!
//! Missing observations are `None`. They are never zero-filled.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{normal_vec, permutation, stream};

/// Prevalence band enforced on generated cohorts.
pub const PREVALENCE_BAND: (f64, f64) = (0.15, 0.45);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    /// Feature count per modality; its length is the number of modalities.
    pub input_dims: Vec<usize>,
    pub latent_dim: usize,
    /// Observation noise standard deviation per modality.
    pub noise_scales: Vec<f64>,
    /// Target fraction of positive labels.
    pub prevalence: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            input_dims: vec![12, 8, 10],
            latent_dim: 6,
            noise_scales: vec![1.0, 5.0, 1.0],
            prevalence: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn n_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(Error::config("n_patients must be at least 2"));
        }
        if self.input_dims.len() < 2 {
            return Err(Error::config("at least 2 modalities are required"));
        }
        if self.input_dims.contains(&0) || self.latent_dim == 0 {
            return Err(Error::config("input and latent dimensions must be positive"));
        }
        if self.noise_scales.len() != self.input_dims.len() {
            return Err(Error::config(format!(
                "{} noise scales for {} modalities",
                self.noise_scales.len(),
                self.input_dims.len()
            )));
        }
        if self.noise_scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("noise scales must be finite and non-negative"));
        }
        let (lo, hi) = PREVALENCE_BAND;
        if !(self.prevalence >= lo && self.prevalence <= hi) {
            return Err(Error::config(format!(
                "prevalence {} outside [{lo}, {hi}]",
                self.prevalence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: usize,
    pub label: u8,
    /// Hidden generative state; used by tests and the MNAR mechanism only.
    pub latent: Vec<f64>,
    /// `w·u + b`; positive exactly when `label == 1`.
    pub risk_score: f64,
    pub observations: Vec<Option<Vec<f64>>>,
}

impl Patient {
    pub fn mask(&self) -> Vec<bool> {
        self.observations.iter().map(Option::is_some).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.observations.iter().filter(|o| o.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mnar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub ratio: f64,
    /// Slope of the logistic link between risk score and missingness
    /// (MNAR only).
    #[serde(default = "default_coupling")]
    pub coupling: f64,
}

fn default_coupling() -> f64 {
    2.0
}

impl MissingnessSpec {
    pub fn mcar(ratio: f64) -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            ratio,
            coupling: default_coupling(),
        }
    }

    pub fn mnar(ratio: f64) -> Self {
        Self {
            mechanism: Mechanism::Mnar,
            ratio,
            coupling: default_coupling(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 0.0 && self.ratio < 1.0) {
            return Err(Error::config(format!(
                "missing ratio must lie in [0, 1), got {}",
                self.ratio
            )));
        }
        if !self.coupling.is_finite() {
            return Err(Error::config("MNAR coupling must be finite"));
        }
        Ok(())
    }
}

/// Record of a transformation applied to a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Missingness { spec: MissingnessSpec, seed: u64 },
    Noise { epsilon: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub config: GeneratorConfig,
    pub seed: u64,
    pub history: Vec<Provenance>,
    pub patients: Vec<Patient>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_modalities(&self) -> usize {
        self.config.n_modalities()
    }

    pub fn prevalence(&self) -> f64 {
        let pos = self.patients.iter().filter(|p| p.label == 1).count();
        pos as f64 / self.patients.len() as f64
    }

    /// Fraction of patients missing each modality.
    pub fn missing_rates(&self) -> Vec<f64> {
        let n = self.patients.len() as f64;
        (0..self.n_modalities())
            .map(|m| {
                self.patients
                    .iter()
                    .filter(|p| p.observations[m].is_none())
                    .count() as f64
                    / n
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.patients.iter().map(|p| p.label).collect()
    }
}

/// Draws a cohort from the linear-Gaussian family. Deterministic in
/// `(config, seed)`.
pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let k = config.latent_dim;
    let n = config.n_patients;

    let mut structure = stream(seed, 0);
    let loadings: Vec<Vec<f64>> = config
        .input_dims
        .iter()
        .map(|&dim| {
            let s = 1.0 / math::sqrt(k as f64);
            normal_vec(&mut structure, dim * k)
                .into_iter()
                .map(|z| z * s)
                .collect()
        })
        .collect();
    let mut w = normal_vec(&mut structure, k);
    let norm = math::sqrt(w.iter().map(|x| x * x).sum());
    w.iter_mut().for_each(|x| *x /= norm);

    let mut latent_rng = stream(seed, 1);
    let latents: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut latent_rng, k)).collect();
    let raw: Vec<f64> = latents
        .iter()
        .map(|u| u.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();

    let n_pos = (libm::round(config.prevalence * n as f64) as usize).clamp(1, n - 1);
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = 0.5 * (sorted[n - n_pos - 1] + sorted[n - n_pos]);

    let mut noise_rng = stream(seed, 2);
    let patients = latents
        .into_iter()
        .zip(raw)
        .enumerate()
        .map(|(id, (u, s))| {
            let risk_score = s - threshold;
            let observations = config
                .input_dims
                .iter()
                .zip(&loadings)
                .zip(&config.noise_scales)
                .map(|((&dim, a), &scale)| {
                    let eta = normal_vec(&mut noise_rng, dim);
                    let x = (0..dim)
                        .map(|r| {
                            let signal: f64 = a[r * k..(r + 1) * k].iter().zip(&u).map(|(x, y)| x * y).sum();
                            signal + scale * eta[r]
                        })
                        .collect();
                    Some(x)
                })
                .collect();
            Patient {
                id,
                label: u8::from(risk_score > 0.0),
                latent: u,
                risk_score,
                observations,
            }
        })
        .collect();

    Ok(Cohort {
        config: config.clone(),
        seed,
        history: Vec::new(),
        patients,
    })
}

/// Per-patient probability of losing each modality.
fn missing_probabilities(cohort: &Cohort, spec: &MissingnessSpec) -> Vec<f64> {
    let r = spec.ratio;
    match spec.mechanism {
        Mechanism::Mcar => vec![r; cohort.len()],
        Mechanism::Mnar => {
            let base: Vec<f64> = cohort
                .patients
                .iter()
                .map(|p| math::sigmoid(spec.coupling * p.risk_score))
                .collect();
            let marginal = |c: f64| base.iter().map(|q| (c * q).min(1.0)).sum::<f64>() / base.len() as f64;
            // marginal(c) is continuous and non-decreasing; bisect for r.
            let (mut lo, mut hi) = (0.0, 1.0);
            while marginal(hi) < r {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if marginal(mid) < r {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            base.iter().map(|q| (hi * q).min(1.0)).collect()
        }
    }
}

/// Removes observations according to `spec`. Every patient keeps at least
/// one observed modality: if all would be dropped, one of them, chosen
/// uniformly among those observed beforehand, is restored.
pub fn apply_missingness(cohort: &Cohort, spec: &MissingnessSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let probs = missing_probabilities(cohort, spec);
    let mut rng = stream(seed, 10);
    let mut out = cohort.clone();
    for (patient, &q) in out.patients.iter_mut().zip(&probs) {
        let before: Vec<usize> = (0..patient.observations.len())
            .filter(|&m| patient.observations[m].is_some())
            .collect();
        let drop: Vec<bool> = before.iter().map(|_| rng.random::<f64>() < q).collect();
        if before.is_empty() {
            continue;
        }
        let keep = if drop.iter().all(|&d| d) {
            Some(before[rng.random_range(0..before.len())])
        } else {
            None
        };
        for (&m, &d) in before.iter().zip(&drop) {
            if d && Some(m) != keep {
                patient.observations[m] = None;
            }
        }
    }
    out.history.push(Provenance::Missingness { spec: *spec, seed });
    Ok(out)
}

/// Adds `N(0, (ε σ̂)²)` to each observed feature, where `σ̂` is the
/// population standard deviation of that feature over observed cells.
/// `ε = 0` returns the cohort unchanged.
pub fn inject_noise(cohort: &Cohort, epsilon: f64, seed: u64) -> Result<Cohort> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::config(format!("noise level must be finite and >= 0, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(cohort.clone());
    }
    let stds = feature_stds(cohort);
    let mut rng = stream(seed, 20);
    let mut out = cohort.clone();
    for patient in &mut out.patients {
        for (m, obs) in patient.observations.iter_mut().enumerate() {
            if let Some(x) = obs {
                let eta = normal_vec(&mut rng, x.len());
                for ((v, s), e) in x.iter_mut().zip(&stds[m]).zip(eta) {
                    *v += epsilon * s * e;
                }
            }
        }
    }
    out.history.push(Provenance::Noise { epsilon, seed });
    Ok(out)
}

/// Population standard deviation of every feature over observed cells.
pub fn feature_stds(cohort: &Cohort) -> Vec<Vec<f64>> {
    cohort
        .config
        .input_dims
        .iter()
        .enumerate()
        .map(|(m, &dim)| {
            let rows: Vec<&Vec<f64>> = cohort
                .patients
                .iter()
                .filter_map(|p| p.observations[m].as_ref())
                .collect();
            let n = rows.len() as f64;
            (0..dim)
                .map(|j| {
                    if rows.is_empty() {
                        return 0.0;
                    }
                    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                    let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
                    math::sqrt(var)
                })
                .collect()
        })
        .collect()
}

/// Patient indices of a train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// 70/15/15 split, stratified by label and shuffled with `seed`.
pub fn stratified_split(cohort: &Cohort, seed: u64) -> Split {
    let mut rng = stream(seed, 30);
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for label in [0u8, 1] {
        let members: Vec<usize> = cohort
            .patients
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == label)
            .map(|(i, _)| i)
            .collect();
        let order = permutation(&mut rng, members.len());
        let n = members.len();
        let n_train = libm::round(0.70 * n as f64) as usize;
        let n_val = (libm::round(0.15 * n as f64) as usize).min(n - n_train);
        for (rank, &o) in order.iter().enumerate() {
            let idx = members[o];
            if rank < n_train {
                split.train.push(idx);
            } else if rank < n_train + n_val {
                split.validation.push(idx);
            } else {
                split.test.push(idx);
            }
        }
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_patients: 200,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate(&small(), 5).unwrap();
        let b = generate(&small(), 5).unwrap();
        let c = generate(&small(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.patients, c.patients);
    }

    #[test]
    fn labels_follow_the_risk_score_and_prevalence() {
        let c = generate(&small(), 1).unwrap();
        assert!(c.patients.iter().all(|p| (p.risk_score > 0.0) == (p.label == 1)));
        assert!((c.prevalence() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small();
        cfg.input_dims = vec![4];
        cfg.noise_scales = vec![1.0];
        assert!(matches!(generate(&cfg, 0), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.n_patients = 1;
        assert!(generate(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.noise_scales.pop();
        assert!(generate(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.prevalence = 0.9;
        assert!(generate(&cfg, 0).is_err());
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let c = generate(&small(), 2).unwrap();
        let m = apply_missingness(&c, &MissingnessSpec::mcar(0.0), 3).unwrap();
        assert!(m.patients.iter().all(|p| p.mask().iter().all(|&b| b)));
        let m = apply_missingness(&c, &MissingnessSpec::mnar(0.0), 3).unwrap();
        assert!(m.patients.iter().all(|p| p.mask().iter().all(|&b| b)));
    }

    #[test]
    fn ratio_of_one_is_a_config_error() {
        let c = generate(&small(), 2).unwrap();
        assert!(matches!(
            apply_missingness(&c, &MissingnessSpec::mcar(1.0), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mnar_probabilities_average_to_the_ratio() {
        let c = generate(&small(), 4).unwrap();
        for r in [0.1, 0.3, 0.5, 0.7] {
            let probs = missing_probabilities(&c, &MissingnessSpec::mnar(r));
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            assert!((mean - r).abs() < 1e-9, "r={r}: {mean}");
        }
    }

    #[test]
    fn guard_keeps_one_modality_and_noise_preserves_the_mask() {
        let c = generate(&small(), 8).unwrap();
        let m = apply_missingness(&c, &MissingnessSpec::mnar(0.7), 9).unwrap();
        assert!(m.patients.iter().all(|p| p.observed_count() >= 1));
        let noisy = inject_noise(&m, 0.3, 10).unwrap();
        for (a, b) in m.patients.iter().zip(&noisy.patients) {
            assert_eq!(a.mask(), b.mask());
        }
        assert_eq!(inject_noise(&m, 0.0, 10).unwrap(), m);
        assert!(inject_noise(&m, -0.1, 10).is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let c = generate(&small(), 3).unwrap();
        let s = stratified_split(&c, 1);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert_eq!(s.train.len(), 140);
        let pos = |idx: &[usize]| idx.iter().filter(|&&i| c.patients[i].label == 1).count();
        assert_eq!(pos(&s.train), 42);
        assert_eq!(pos(&s.validation), 9);
    }
}
