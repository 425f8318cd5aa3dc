//! Uncertainty-aware message passing over the bipartite graph.
//!
//! One layer is two half-steps: modality → patient, then patient →
//! modality. In each half-step every edge `(j, i)` produces a Gaussian
//! message
//!
//! ```text
//! μ_ji = relu(W_μ [μ_j ‖ e_ji.μ])     σ_ji = softplus(W_σ [σ_j ‖ e_ji.σ])
//! ```
//!
//! weighted by `α_ji = softmax_j(ϑ / σ̄_ji)`, and the target is updated by
//!
//! ```text
//! μ_i ← U [μ_i ‖ Σ_j α_ji μ_ji]       σ_i² ← σ_i² + Σ_j α_ji² σ_ji²
//! ```
//!
//! Two evaluation routes are provided: plain per-node functions on
//! [`GaussianVec`] values, and a batched route on a [`Tape`] used for
//! training. Both compute the same numbers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVec;
use crate::graph::{BipartiteGraph, NodeId};
use crate::math;
use crate::nn::{join, Linear, MapFn, ParamRole, Visit, VisitMut};
use crate::rng::normal_vec;
use crate::tensor::Tensor;

pub const DEFAULT_THETA: f64 = 10.0;
pub const DEFAULT_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// `α ∝ exp(ϑ / σ̄)`.
    Uncertainty,
    /// `α = 1 / |𝒩(i)|`.
    Uniform,
}

/// How a node's σ is updated from its incoming messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VarianceRule<P> {
    /// Independent-Gaussian composition.
    Analytic,
    /// `σ_i = softplus(out(relu(hidden([σ_i ‖ Σ_j α_ji σ_ji]))))`.
    Learned { hidden: Linear<P>, out: Linear<P> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpLayer<P = Tensor> {
    pub index: usize,
    pub theta: f64,
    pub attention: AttentionMode,
    pub msg_mean: Linear<P>,
    pub msg_var: Linear<P>,
    /// `[d × 2d]`, no bias.
    pub update: P,
    pub variance: VarianceRule<P>,
}

impl MpLayer<Tensor> {
    /// Random layer. The variance transform starts close to the identity
    /// on the edge σ, so a high-σ edge yields a high-σ message and an edge
    /// with `σ ≈ 1` yields a message with `σ ≈ 1`. `U` starts near
    /// `[I | I]`.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        index: usize,
        d: usize,
        theta: f64,
        attention: AttentionMode,
        learned_variance: bool,
    ) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::config(format!("ϑ must be positive, got {theta}")));
        }
        let msg_mean = Linear::init(rng, d, 2 * d, 1.0, Some(0.0));
        let mut msg_var = Linear::init(rng, d, 2 * d, 0.05, Some(math::softplus_inv(1.0) - 1.0));
        for k in 0..d {
            let w = msg_var.weight.get(k, d + k);
            msg_var.weight.set(k, d + k, w + 1.0);
        }
        let mut update = Tensor::new(d, 2 * d, normal_vec(rng, 2 * d * d))?
            .map(|z| 0.1 * z / libm::sqrt(2.0 * d as f64));
        for k in 0..d {
            update.set(k, k, update.get(k, k) + 1.0);
            update.set(k, d + k, update.get(k, d + k) + 1.0);
        }
        let variance = if learned_variance {
            VarianceRule::Learned {
                hidden: Linear::init(rng, 2 * d, 2 * d, 1.0, Some(0.0)),
                out: Linear::init(rng, d, 2 * d, 0.1, Some(math::softplus_inv(1.0))),
            }
        } else {
            VarianceRule::Analytic
        };
        Ok(Self {
            index,
            theta,
            attention,
            msg_mean,
            msg_var,
            update,
            variance,
        })
    }

    /// Layer with every parameter zero and the analytic variance rule.
    pub fn zeroed(index: usize, d: usize, theta: f64) -> Self {
        Self {
            index,
            theta,
            attention: AttentionMode::Uncertainty,
            msg_mean: Linear::zeros(d, 2 * d, true),
            msg_var: Linear::zeros(d, 2 * d, true),
            update: Tensor::zeros(d, 2 * d),
            variance: VarianceRule::Analytic,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.update.rows()
    }

    fn check(&self) -> Result<()> {
        let d = self.latent_dim();
        if self.update.shape() != [d, 2 * d] {
            return Err(Error::config(format!(
                "layer {}: update matrix must be {d}x{}, got {:?}",
                self.index,
                2 * d,
                self.update.shape()
            )));
        }
        if self.theta.is_nan() || self.theta <= 0.0 {
            return Err(Error::config(format!("layer {}: ϑ must be positive", self.index)));
        }
        Ok(())
    }
}

impl<P> MpLayer<P> {
    fn prefix(&self, prefix: &str) -> String {
        join(prefix, &format!("{}", self.index))
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<'_, P>) {
        let p = self.prefix(prefix);
        self.msg_mean.visit(&join(&p, "msg_mean"), ParamRole::Mean, f);
        self.msg_var.visit(&join(&p, "msg_var"), ParamRole::Variance, f);
        f(&join(&p, "update"), ParamRole::Mean, &self.update);
        if let VarianceRule::Learned { hidden, out } = &self.variance {
            hidden.visit(&join(&p, "var_mlp.hidden"), ParamRole::Variance, f);
            out.visit(&join(&p, "var_mlp.out"), ParamRole::Variance, f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, P>) {
        let p = self.prefix(prefix);
        self.msg_mean.visit_mut(&join(&p, "msg_mean"), ParamRole::Mean, f);
        self.msg_var.visit_mut(&join(&p, "msg_var"), ParamRole::Variance, f);
        f(&join(&p, "update"), ParamRole::Mean, &mut self.update);
        if let VarianceRule::Learned { hidden, out } = &mut self.variance {
            hidden.visit_mut(&join(&p, "var_mlp.hidden"), ParamRole::Variance, f);
            out.visit_mut(&join(&p, "var_mlp.out"), ParamRole::Variance, f);
        }
    }

    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> MpLayer<Q> {
        let p = self.prefix(prefix);
        MpLayer {
            index: self.index,
            theta: self.theta,
            attention: self.attention,
            msg_mean: self.msg_mean.map(&join(&p, "msg_mean"), ParamRole::Mean, f),
            msg_var: self.msg_var.map(&join(&p, "msg_var"), ParamRole::Variance, f),
            update: f(&join(&p, "update"), ParamRole::Mean, &self.update),
            variance: match &self.variance {
                VarianceRule::Analytic => VarianceRule::Analytic,
                VarianceRule::Learned { hidden, out } => VarianceRule::Learned {
                    hidden: hidden.map(&join(&p, "var_mlp.hidden"), ParamRole::Variance, f),
                    out: out.map(&join(&p, "var_mlp.out"), ParamRole::Variance, f),
                },
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ModalityToPatient,
    PatientToModality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub source: NodeId,
    pub target: NodeId,
    /// Whether the carrying edge is observed.
    pub observed: bool,
    pub gaussian: GaussianVec,
}

/// Node states after `half_steps` completed half-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStates {
    pub half_steps: usize,
    pub patients: Vec<GaussianVec>,
    pub modalities: Vec<GaussianVec>,
}

impl NodeStates {
    pub fn initial(g: &BipartiteGraph) -> Self {
        Self {
            half_steps: 0,
            patients: g.patient_states().to_vec(),
            modalities: g.modality_states().to_vec(),
        }
    }
}

fn expected_half_step(layer_index: usize, direction: Direction) -> usize {
    match direction {
        Direction::ModalityToPatient => 2 * layer_index,
        Direction::PatientToModality => 2 * layer_index + 1,
    }
}

fn linear_gaussian_input(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(a.len() + b.len());
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x
}

/// Messages along every edge in `direction`, ordered by target then
/// source.
pub fn compute_messages(
    layer: &MpLayer,
    g: &BipartiteGraph,
    states: &NodeStates,
    direction: Direction,
) -> Result<Vec<Message>> {
    layer.check()?;
    let expected = expected_half_step(layer.index, direction);
    if states.half_steps != expected {
        return Err(Error::Sequencing(format!(
            "layer {} {direction:?} needs states after {expected} half-steps, have {}",
            layer.index, states.half_steps
        )));
    }
    let (n_targets, n_sources) = match direction {
        Direction::ModalityToPatient => (g.n_patients(), g.n_modalities()),
        Direction::PatientToModality => (g.n_modalities(), g.n_patients()),
    };
    let mut out = Vec::with_capacity(n_targets * n_sources);
    for t in 0..n_targets {
        for s in 0..n_sources {
            let (source, target, edge, src) = match direction {
                Direction::ModalityToPatient => (
                    NodeId::Modality(s),
                    NodeId::Patient(t),
                    g.edge(t, s),
                    &states.modalities[s],
                ),
                Direction::PatientToModality => (
                    NodeId::Patient(s),
                    NodeId::Modality(t),
                    g.edge(s, t),
                    &states.patients[s],
                ),
            };
            let mu = layer
                .msg_mean
                .apply(&linear_gaussian_input(src.mu(), edge.feature.mu()))
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            let sigma = layer
                .msg_var
                .apply(&linear_gaussian_input(src.sigma(), edge.feature.sigma()))
                .into_iter()
                .map(math::softplus)
                .collect();
            out.push(Message {
                source,
                target,
                observed: edge.observed,
                gaussian: GaussianVec::new(mu, sigma)?,
            });
        }
    }
    Ok(out)
}

/// `α_j = softmax_j(ϑ / σ̄_j)` over the incoming messages of one node.
pub fn attention_weights(incoming: &[&Message], theta: f64) -> Result<BTreeMap<NodeId, f64>> {
    if incoming.is_empty() {
        return Err(Error::contract("attention over an empty neighbourhood"));
    }
    let logits: Vec<f64> = incoming
        .iter()
        .map(|m| {
            let s = m.gaussian.mean_sigma();
            if s > 0.0 {
                Ok(theta / s)
            } else {
                Err(Error::contract(format!("message from {:?} has σ̄ = {s}", m.source)))
            }
        })
        .collect::<Result<_>>()?;
    Ok(incoming.iter().map(|m| m.source).zip(softmax(&logits)).collect())
}

/// `α_j = 1 / n` over the incoming messages of one node.
pub fn uniform_weights(incoming: &[&Message]) -> Result<BTreeMap<NodeId, f64>> {
    if incoming.is_empty() {
        return Err(Error::contract("attention over an empty neighbourhood"));
    }
    let w = 1.0 / incoming.len() as f64;
    Ok(incoming.iter().map(|m| (m.source, w)).collect())
}

/// Stable softmax of plain values.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Attention for one node under the layer's mode. With `exclude_missing`,
/// messages over missing edges get weight 0 unless every incoming edge is
/// missing.
pub fn node_attention(
    layer: &MpLayer,
    incoming: &[&Message],
    exclude_missing: bool,
) -> Result<BTreeMap<NodeId, f64>> {
    let keep: Vec<&Message> = if exclude_missing && incoming.iter().any(|m| m.observed) {
        incoming.iter().copied().filter(|m| m.observed).collect()
    } else {
        incoming.to_vec()
    };
    let mut alpha = match layer.attention {
        AttentionMode::Uncertainty => attention_weights(&keep, layer.theta)?,
        AttentionMode::Uniform => uniform_weights(&keep)?,
    };
    for m in incoming {
        alpha.entry(m.source).or_insert(0.0);
    }
    Ok(alpha)
}

/// New state of one node from its prior state and incoming messages.
pub fn update_node(
    layer: &MpLayer,
    prior: &GaussianVec,
    incoming: &[&Message],
    alpha: &BTreeMap<NodeId, f64>,
) -> Result<GaussianVec> {
    layer.check()?;
    let d = layer.latent_dim();
    if prior.dim() != d {
        return Err(Error::contract(format!("node state has dimension {}, layer expects {d}", prior.dim())));
    }
    if alpha.len() != incoming.len() || incoming.iter().any(|m| !alpha.contains_key(&m.source)) {
        return Err(Error::contract("attention keys do not match the incoming messages"));
    }
    if !incoming.is_empty() {
        let total: f64 = alpha.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("attention sums to {total}")));
        }
    }
    let mut agg_mu = vec![0.0; d];
    let mut agg_var = vec![0.0; d];
    let mut agg_sigma = vec![0.0; d];
    for m in incoming {
        let a = alpha[&m.source];
        for k in 0..d {
            let s = m.gaussian.sigma()[k];
            agg_mu[k] += a * m.gaussian.mu()[k];
            agg_var[k] += a * a * s * s;
            agg_sigma[k] += a * s;
        }
    }
    let cat = linear_gaussian_input(prior.mu(), &agg_mu);
    let mu: Vec<f64> = (0..d)
        .map(|r| layer.update.row(r).iter().zip(&cat).map(|(u, x)| u * x).sum())
        .collect();
    let sigma = match &layer.variance {
        VarianceRule::Analytic => prior
            .sigma()
            .iter()
            .zip(&agg_var)
            .map(|(s, v)| math::sqrt(s * s + v))
            .collect(),
        VarianceRule::Learned { hidden, out } => {
            let h: Vec<f64> = hidden
                .apply(&linear_gaussian_input(prior.sigma(), &agg_sigma))
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            out.apply(&h).into_iter().map(math::softplus).collect()
        }
    };
    GaussianVec::new(mu, sigma)
}

/// Attention weights recorded during one layer: `to_patients[p][m]` and
/// `to_modalities[m][p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    pub to_patients: Vec<Vec<f64>>,
    pub to_modalities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub states: NodeStates,
    pub attention: Vec<LayerAttention>,
}

fn half_step(
    layer: &MpLayer,
    g: &BipartiteGraph,
    states: &NodeStates,
    direction: Direction,
    exclude_missing: bool,
) -> Result<(NodeStates, Vec<Vec<f64>>)> {
    let messages = compute_messages(layer, g, states, direction)?;
    let (priors, n_sources) = match direction {
        Direction::ModalityToPatient => (&states.patients, g.n_modalities()),
        Direction::PatientToModality => (&states.modalities, g.n_patients()),
    };
    let mut updated = Vec::with_capacity(priors.len());
    let mut weights = Vec::with_capacity(priors.len());
    for (t, prior) in priors.iter().enumerate() {
        let incoming: Vec<&Message> = messages[t * n_sources..(t + 1) * n_sources].iter().collect();
        let alpha = if incoming.is_empty() {
            BTreeMap::new()
        } else {
            node_attention(layer, &incoming, exclude_missing)?
        };
        weights.push(incoming.iter().map(|m| alpha[&m.source]).collect());
        updated.push(update_node(layer, prior, &incoming, &alpha)?);
    }
    let mut next = states.clone();
    next.half_steps += 1;
    match direction {
        Direction::ModalityToPatient => next.patients = updated,
        Direction::PatientToModality => next.modalities = updated,
    }
    Ok((next, weights))
}

/// Runs all layers over `g` starting from its initial node states.
pub fn propagate(g: &BipartiteGraph, layers: &[MpLayer], exclude_missing: bool) -> Result<Propagation> {
    if layers.is_empty() {
        return Err(Error::config("at least one message-passing layer is required"));
    }
    let mut states = NodeStates::initial(g);
    let mut attention = Vec::with_capacity(layers.len());
    for layer in layers {
        let (s, to_patients) = half_step(layer, g, &states, Direction::ModalityToPatient, exclude_missing)?;
        let (s, to_modalities) = half_step(layer, g, &s, Direction::PatientToModality, exclude_missing)?;
        states = s;
        attention.push(LayerAttention {
            to_patients,
            to_modalities,
        });
    }
    Ok(Propagation { states, attention })
}

/// Batched propagation output on a tape.
#[derive(Debug, Clone)]
pub struct TapePropagation {
    pub patient_mu: Var,
    pub patient_sigma: Var,
    pub modality_mu: Var,
    pub modality_sigma: Var,
    /// Per layer: `([B × M], [M × B])` attention matrices.
    pub attention: Vec<(Var, Var)>,
}

struct HalfStep<'a> {
    n_targets: usize,
    n_sources: usize,
    /// Target-major flags: edge `t * n_sources + s` is observed.
    observed: &'a [bool],
    exclude_missing: bool,
}

impl HalfStep<'_> {
    fn include_mask(&self) -> Option<Vec<bool>> {
        if !self.exclude_missing {
            return None;
        }
        let mut inc = self.observed.to_vec();
        for row in inc.chunks_mut(self.n_sources) {
            if row.iter().all(|o| !o) {
                row.iter_mut().for_each(|o| *o = true);
            }
        }
        Some(inc)
    }
}

#[allow(clippy::too_many_arguments)]
fn half_step_on_tape(
    tape: &mut Tape,
    layer: &MpLayer<Var>,
    shape: &HalfStep<'_>,
    src: (Var, Var),
    tgt: (Var, Var),
    edge: (Var, Var),
) -> Result<(Var, Var, Var)> {
    let (nt, ns) = (shape.n_targets, shape.n_sources);
    let src_idx: Vec<usize> = (0..nt * ns).map(|e| e % ns).collect();
    let src_mu = tape.gather_rows(src.0, &src_idx)?;
    let src_sigma = tape.gather_rows(src.1, &src_idx)?;
    let x_mu = tape.concat_cols(src_mu, edge.0)?;
    let x_sigma = tape.concat_cols(src_sigma, edge.1)?;
    let msg_mu = layer.msg_mean.forward(tape, x_mu)?;
    let msg_mu = tape.relu(msg_mu);
    let msg_sigma = layer.msg_var.forward(tape, x_sigma)?;
    let msg_sigma = tape.softplus(msg_sigma);

    let include = shape.include_mask();
    let alpha = match layer.attention {
        AttentionMode::Uncertainty => {
            let sbar = tape.row_mean(msg_sigma);
            let inv = tape.recip(sbar);
            let logits = tape.scale(inv, layer.theta);
            let logits = tape.reshape(logits, nt, ns)?;
            match include {
                None => tape.softmax_rows(logits),
                Some(inc) => {
                    let keep = Tensor::new(nt, ns, inc.iter().map(|&i| if i { 1.0 } else { 0.0 }).collect())?;
                    let ls = tape.log_softmax_rows_masked(logits, Some(inc))?;
                    let e = tape.exp(ls);
                    let keep = tape.constant(keep);
                    tape.mul(e, keep)?
                }
            }
        }
        AttentionMode::Uniform => {
            let w: Vec<f64> = match include {
                None => vec![1.0 / ns as f64; nt * ns],
                Some(inc) => inc
                    .chunks(ns)
                    .flat_map(|row| {
                        let n = row.iter().filter(|i| **i).count() as f64;
                        row.iter().map(move |&i| if i { 1.0 / n } else { 0.0 })
                    })
                    .collect(),
            };
            tape.constant(Tensor::new(nt, ns, w)?)
        }
    };
    let alpha_col = tape.reshape(alpha, nt * ns, 1)?;
    let weighted_mu = tape.scale_rows(msg_mu, alpha_col)?;
    let agg_mu = tape.group_sum_rows(weighted_mu, ns)?;
    let cat = tape.concat_cols(tgt.0, agg_mu)?;
    let new_mu = tape.matmul_nt(cat, layer.update)?;
    let new_sigma = match &layer.variance {
        VarianceRule::Analytic => {
            let a2 = tape.square(alpha_col);
            let s2 = tape.square(msg_sigma);
            let w = tape.scale_rows(s2, a2)?;
            let agg_var = tape.group_sum_rows(w, ns)?;
            let prior_var = tape.square(tgt.1);
            let var = tape.add(prior_var, agg_var)?;
            tape.sqrt(var)
        }
        VarianceRule::Learned { hidden, out } => {
            let w = tape.scale_rows(msg_sigma, alpha_col)?;
            let agg_sigma = tape.group_sum_rows(w, ns)?;
            let x = tape.concat_cols(tgt.1, agg_sigma)?;
            let h = hidden.forward(tape, x)?;
            let h = tape.relu(h);
            let o = out.forward(tape, h)?;
            tape.softplus(o)
        }
    };
    Ok((new_mu, new_sigma, alpha))
}

/// Batched propagation. `edge_mu` and `edge_sigma` are patient-major
/// `[B·M × d]` edge features and `observed` the matching flags.
#[allow(clippy::too_many_arguments)]
pub fn propagate_on_tape(
    tape: &mut Tape,
    layers: &[MpLayer<Var>],
    n_patients: usize,
    n_modalities: usize,
    observed: &[bool],
    edge_mu: Var,
    edge_sigma: Var,
    exclude_missing: bool,
) -> Result<TapePropagation> {
    if layers.is_empty() {
        return Err(Error::config("at least one message-passing layer is required"));
    }
    let (b, m) = (n_patients, n_modalities);
    if b == 0 || observed.len() != b * m || tape.value(edge_mu).rows() != b * m {
        return Err(Error::contract("edge features do not match the batch layout"));
    }
    let d = tape.value(edge_mu).cols();
    let to_modality_order: Vec<usize> = (0..m * b).map(|e| (e % b) * m + e / b).collect();
    let edge_mu_t = tape.gather_rows(edge_mu, &to_modality_order)?;
    let edge_sigma_t = tape.gather_rows(edge_sigma, &to_modality_order)?;
    let observed_t: Vec<bool> = to_modality_order.iter().map(|&e| observed[e]).collect();

    let mut p_mu = tape.constant(Tensor::zeros(b, d));
    let mut p_sigma = tape.constant(Tensor::ones(b, d));
    let mut m_mu = tape.constant(Tensor::zeros(m, d));
    let mut m_sigma = tape.constant(Tensor::ones(m, d));
    let mut attention = Vec::with_capacity(layers.len());
    for layer in layers {
        let to_p = HalfStep {
            n_targets: b,
            n_sources: m,
            observed,
            exclude_missing,
        };
        let (mu, sigma, a_p) = half_step_on_tape(tape, layer, &to_p, (m_mu, m_sigma), (p_mu, p_sigma), (edge_mu, edge_sigma))?;
        p_mu = mu;
        p_sigma = sigma;
        let to_m = HalfStep {
            n_targets: m,
            n_sources: b,
            observed: &observed_t,
            exclude_missing,
        };
        let (mu, sigma, a_m) =
            half_step_on_tape(tape, layer, &to_m, (p_mu, p_sigma), (m_mu, m_sigma), (edge_mu_t, edge_sigma_t))?;
        m_mu = mu;
        m_sigma = sigma;
        attention.push((a_p, a_m));
    }
    Ok(TapePropagation {
        patient_mu: p_mu,
        patient_sigma: p_sigma,
        modality_mu: m_mu,
        modality_sigma: m_sigma,
        attention,
    })
}
