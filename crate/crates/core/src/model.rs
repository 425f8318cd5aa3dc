//! The full model: per-modality encoders, message-passing layers and the
//! prediction head, with named parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Patient;
use crate::error::{Error, Result};
use crate::gaussian::ModalityEncoder;
use crate::graph::{build_graph, encode_on_tape, BatchInputs, BipartiteGraph, EdgeEncoding, EncodedEdges, DEFAULT_SIGMA_MISS};
use crate::message_passing::{
    propagate, propagate_on_tape, AttentionMode, MpLayer, Propagation, TapePropagation, DEFAULT_LAYERS, DEFAULT_THETA,
};
use crate::nn::{MapFn, ParamRole, Visit, VisitMut};
use crate::objectives::PredictionHead;
use crate::rng::stream;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature count per modality; normally filled from the data section.
    pub input_dims: Vec<usize>,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub theta: f64,
    pub sigma_miss: f64,
    /// Give missing edges zero attention instead of relying on their σ.
    pub exclude_missing: bool,
    pub attention: AttentionMode,
    pub learned_variance: bool,
    pub unit_encoder_sigma: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dims: alloc::vec![12, 8, 10],
            latent_dim: 16,
            hidden_dim: 32,
            layers: DEFAULT_LAYERS,
            theta: DEFAULT_THETA,
            sigma_miss: DEFAULT_SIGMA_MISS,
            exclude_missing: false,
            attention: AttentionMode::Uncertainty,
            learned_variance: false,
            unit_encoder_sigma: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.len() < 2 || self.input_dims.contains(&0) {
            return Err(Error::config("at least two modalities with positive input dimensions are required"));
        }
        if self.latent_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::config("latent_dim, hidden_dim and layers must be positive"));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::config(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.sigma_miss > 0.0 && self.sigma_miss.is_finite()) {
            return Err(Error::config(format!("sigma_miss must be positive, got {}", self.sigma_miss)));
        }
        Ok(())
    }

    pub fn edge_encoding(&self) -> EdgeEncoding {
        EdgeEncoding {
            sigma_miss: self.sigma_miss,
            unit_observed_sigma: self.unit_encoder_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AumModel<P = Tensor> {
    pub config: ModelConfig,
    pub encoders: Vec<ModalityEncoder<P>>,
    pub layers: Vec<MpLayer<P>>,
    pub head: PredictionHead<P>,
}

impl AumModel<Tensor> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, INIT_STREAM);
        let d = config.latent_dim;
        let encoders = config
            .input_dims
            .iter()
            .enumerate()
            .map(|(m, &k)| ModalityEncoder::init(&mut rng, m, k, config.hidden_dim, d))
            .collect();
        let layers = (0..config.layers)
            .map(|l| MpLayer::init(&mut rng, l, d, config.theta, config.attention, config.learned_variance))
            .collect::<Result<_>>()?;
        let head = PredictionHead::init(&mut rng, d);
        Ok(Self {
            config: config.clone(),
            encoders,
            layers,
            head,
        })
    }

    /// Parameters by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit(&mut |name, _, t| {
            out.insert(String::from(name), t.clone());
        });
        out
    }

    /// Rebuilds a model from named parameters; names and shapes must match
    /// exactly what `config` produces.
    pub fn from_params(config: &ModelConfig, params: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        let mut err: Option<Error> = None;
        let mut seen = 0usize;
        model.visit_mut(&mut |name, _, t| {
            if err.is_some() {
                return;
            }
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {
                    *t = p.clone();
                    seen += 1;
                }
                Some(p) => {
                    err = Some(Error::Checkpoint(format!(
                        "{name}: stored shape {:?}, model expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != params.len() {
            let known = model.params();
            let extra: Vec<&String> = params.keys().filter(|k| !known.contains_key(*k)).collect();
            return Err(Error::Checkpoint(format!("unexpected parameters {extra:?}")));
        }
        Ok(model)
    }

    /// Binds every parameter to `tape`: as a trainable leaf where
    /// `trainable` says so, otherwise as a constant.
    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str, ParamRole) -> bool) -> AumModel<Var> {
        self.map(&mut |name, role, t| {
            if trainable(name, role) {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Value-level graph for `batch`.
    pub fn graph(&self, batch: &[&Patient]) -> Result<BipartiteGraph> {
        build_graph(batch, &self.encoders, self.config.edge_encoding())
    }

    /// Value-level propagation over `batch`.
    pub fn propagate(&self, batch: &[&Patient]) -> Result<Propagation> {
        let g = self.graph(batch)?;
        propagate(&g, &self.layers, self.config.exclude_missing)
    }

    /// Deterministic probabilities, using the final patient means as the
    /// classifier input. The batch is propagated as one graph.
    pub fn predict(&self, batch: &[&Patient]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &|_, _| false);
        let inputs = BatchInputs::new(batch, &self.encoders, &self.config.input_dims)?;
        let enc = bound.encode(&mut tape, &inputs)?;
        let out = bound.branch(&mut tape, &enc, &inputs.observed)?;
        let p = bound.head.forward(&mut tape, out.patient_mu)?;
        Ok(tape.value(p).data().to_vec())
    }
}

impl<P> AumModel<P> {
    pub fn visit(&self, f: &mut Visit<'_, P>) {
        for (m, e) in self.encoders.iter().enumerate() {
            e.visit(&format!("encoders.{m}"), f);
        }
        for l in &self.layers {
            l.visit("layers", f);
        }
        self.head.visit("head", f);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<'_, P>) {
        for (m, e) in self.encoders.iter_mut().enumerate() {
            e.visit_mut(&format!("encoders.{m}"), f);
        }
        for l in &mut self.layers {
            l.visit_mut("layers", f);
        }
        self.head.visit_mut("head", f);
    }

    pub fn map<Q>(&self, f: &mut MapFn<'_, P, Q>) -> AumModel<Q> {
        AumModel {
            config: self.config.clone(),
            encoders: self
                .encoders
                .iter()
                .enumerate()
                .map(|(m, e)| e.map(&format!("encoders.{m}"), f))
                .collect(),
            layers: self.layers.iter().map(|l| l.map("layers", f)).collect(),
            head: self.head.map("head", f),
        }
    }

    /// `(name, role)` for every parameter, in visiting order.
    pub fn param_roles(&self) -> Vec<(String, ParamRole)> {
        let mut out = Vec::new();
        self.visit(&mut |name, role, _| out.push((String::from(name), role)));
        out
    }
}

impl AumModel<Tensor> {
    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.len());
        n
    }
}

impl AumModel<Var> {
    pub fn encode(&self, tape: &mut Tape, inputs: &BatchInputs) -> Result<EncodedEdges> {
        encode_on_tape(tape, inputs, &self.encoders, self.config.latent_dim, self.config.edge_encoding())
    }

    /// One Siamese branch: the graph under `observed`, propagated through
    /// the shared layers.
    pub fn branch(&self, tape: &mut Tape, enc: &EncodedEdges, observed: &[bool]) -> Result<TapePropagation> {
        let (mu, sigma) = enc.edge_features(tape, observed)?;
        propagate_on_tape(
            tape,
            &self.layers,
            enc.n_patients,
            enc.n_modalities,
            observed,
            mu,
            sigma,
            self.config.exclude_missing,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_missingness, generate, GeneratorConfig, MissingnessSpec};

    #[test]
    fn parameter_names_are_stable_and_classified() {
        let m = AumModel::init(&ModelConfig::default(), 0).unwrap();
        let roles = m.param_roles();
        assert!(roles.iter().any(|(n, r)| n == "encoders.1.var_head.weight" && *r == ParamRole::Variance));
        assert!(roles.iter().any(|(n, r)| n == "layers.0.msg_var.bias" && *r == ParamRole::Variance));
        assert!(roles.iter().any(|(n, r)| n == "layers.1.update" && *r == ParamRole::Mean));
        assert!(roles.iter().any(|(n, r)| n == "head.linear.weight" && *r == ParamRole::Mean));
        let names: Vec<&String> = roles.iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn params_round_trip_and_mismatch_is_reported() {
        let cfg = ModelConfig::default();
        let m = AumModel::init(&cfg, 3).unwrap();
        let back = AumModel::from_params(&cfg, &m.params()).unwrap();
        assert_eq!(back, m);
        let other = ModelConfig {
            latent_dim: 8,
            ..cfg.clone()
        };
        assert!(matches!(AumModel::from_params(&other, &m.params()), Err(Error::Checkpoint(_))));
        let mut extra = m.params();
        extra.insert("bogus".into(), Tensor::scalar(1.0));
        assert!(matches!(AumModel::from_params(&cfg, &extra), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn tape_prediction_matches_value_route() {
        let gc = GeneratorConfig {
            n_patients: 12,
            ..GeneratorConfig::default()
        };
        let c = apply_missingness(&generate(&gc, 4).unwrap(), &MissingnessSpec::mcar(0.3), 4).unwrap();
        let model = AumModel::init(&ModelConfig::default(), 1).unwrap();
        let batch: Vec<&Patient> = c.patients.iter().collect();
        let p = model.predict(&batch).unwrap();
        let prop = model.propagate(&batch).unwrap();
        for (i, s) in prop.states.patients.iter().enumerate() {
            assert!((model.head.predict(s.mu()) - p[i]).abs() < 1e-10);
            assert!(p[i] > 0.0 && p[i] < 1.0);
        }
    }

    #[test]
    fn missing_edges_get_almost_no_attention_at_init() {
        let gc = GeneratorConfig {
            n_patients: 40,
            ..GeneratorConfig::default()
        };
        let c = apply_missingness(&generate(&gc, 5).unwrap(), &MissingnessSpec::mcar(0.5), 5).unwrap();
        let model = AumModel::init(&ModelConfig::default(), 5).unwrap();
        let batch: Vec<&Patient> = c.patients.iter().collect();
        let prop = model.propagate(&batch).unwrap();
        for la in &prop.attention {
            for (p, row) in la.to_patients.iter().enumerate() {
                let missing: f64 = row
                    .iter()
                    .zip(&c.patients[p].observations)
                    .filter(|(_, o)| o.is_none())
                    .map(|(a, _)| a)
                    .sum();
                assert!(missing < 0.01, "patient {p}: {missing}");
            }
        }
    }
}
