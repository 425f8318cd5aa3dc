//! Ranking metrics and the model variants compared in ablations.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::message_passing::AttentionMode;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

fn check(scores: &[f64], labels: &[u8]) -> core::result::Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(s));
    }
    let pos = labels.iter().filter(|&&y| y != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64], descending: bool) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(alloc::vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> core::result::Result<f64, MetricError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("AUC-ROC needs both classes"));
    }
    let mut rank_sum = 0.0;
    let mut next_rank = 1.0;
    for g in tie_groups(scores, false) {
        let mid = next_rank + (g.len() as f64 - 1.0) / 2.0;
        next_rank += g.len() as f64;
        rank_sum += mid * g.iter().filter(|&&i| labels[i] != 0).count() as f64;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Step-wise area under the precision–recall curve: `Σ (R_k − R_{k−1}) P_k`
/// over the distinct score thresholds in decreasing order.
pub fn auc_prc(scores: &[f64], labels: &[u8]) -> core::result::Result<f64, MetricError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(MetricError::Undefined("AUC-PRC needs at least one positive"));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for g in tie_groups(scores, true) {
        for &i in &g {
            if labels[i] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "a11_no_vib")]
    NoVib,
    #[serde(rename = "a12_learned_variance")]
    LearnedVariance,
    #[serde(rename = "a13_no_unimodal_uncertainty")]
    NoUnimodalUncertainty,
    #[serde(rename = "uniform_attention")]
    UniformAttention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoVib,
        Variant::LearnedVariance,
        Variant::NoUnimodalUncertainty,
        Variant::UniformAttention,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoVib => "a11_no_vib",
            Variant::LearnedVariance => "a12_learned_variance",
            Variant::NoUnimodalUncertainty => "a13_no_unimodal_uncertainty",
            Variant::UniformAttention => "uniform_attention",
        }
    }

    /// Parameter names the variant adds to the full model, given the
    /// number of message-passing layers. No variant removes parameters.
    pub fn declared_added_params(self, layers: usize) -> Vec<String> {
        match self {
            Variant::LearnedVariance => (0..layers)
                .flat_map(|l| {
                    ["hidden.weight", "hidden.bias", "out.weight", "out.bias"]
                        .into_iter()
                        .map(move |p| format!("layers.{l}.var_mlp.{p}"))
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::config(format!("unknown variant id {s:?}")))
    }
}

/// Applies one variant to a full-model configuration.
pub fn make_variant(model: &ModelConfig, train: &TrainConfig, variant: Variant) -> Result<(ModelConfig, TrainConfig)> {
    if model.attention != AttentionMode::Uncertainty || model.learned_variance || model.unit_encoder_sigma {
        return Err(Error::config("variants must be derived from the full model configuration"));
    }
    let (mut model, mut train) = (model.clone(), train.clone());
    match variant {
        Variant::Full => {}
        Variant::NoVib => train.loss_weights.vib = 0.0,
        Variant::LearnedVariance => model.learned_variance = true,
        Variant::NoUnimodalUncertainty => model.unit_encoder_sigma = true,
        Variant::UniformAttention => model.attention = AttentionMode::Uniform,
    }
    Ok((model, train))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: Variant,
    pub seed: u64,
    pub auc_roc: f64,
    pub auc_prc: f64,
    pub n_samples: usize,
    pub n_positives: usize,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[u8], variant: Variant, seed: u64) -> Result<Self> {
        Ok(Self {
            variant,
            seed,
            auc_roc: auc_roc(scores, labels)?,
            auc_prc: auc_prc(scores, labels)?,
            n_samples: scores.len(),
            n_positives: labels.iter().filter(|&&y| y != 0).count(),
        })
    }
}
