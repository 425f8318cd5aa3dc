//! The bipartite patient–modality graph.
//!
//! A batch of patients and the modality types form the two sides. The
//! graph is complete bipartite: every (patient, modality) pair has exactly
//! one edge. Observed edges carry the encoder's Gaussian; a missing
//! modality is an edge with mean 0 and standard deviation `σ_miss`, so it
//! is down-weighted by attention rather than removed.
//!
//! Edges are stored patient-major: edge `p * M + m` joins patient `p` and
//! modality `m`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Patient;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianVec, ModalityEncoder};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA_MISS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Patient(usize),
    Modality(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeState {
    pub feature: GaussianVec,
    pub observed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEncoding {
    /// Standard deviation assigned to missing edges.
    pub sigma_miss: f64,
    /// Replace encoder σ on observed edges with the unit vector.
    pub unit_observed_sigma: bool,
}

impl Default for EdgeEncoding {
    fn default() -> Self {
        Self {
            sigma_miss: DEFAULT_SIGMA_MISS,
            unit_observed_sigma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    patient_ids: Vec<usize>,
    n_modalities: usize,
    latent_dim: usize,
    encoding: EdgeEncoding,
    edges: Vec<EdgeState>,
    patient_states: Vec<GaussianVec>,
    modality_states: Vec<GaussianVec>,
}

fn check_inputs(batch: &[&Patient], encoders: &[ModalityEncoder]) -> Result<()> {
    for (m, enc) in encoders.iter().enumerate() {
        if enc.modality != m {
            return Err(Error::config(format!(
                "encoder at position {m} is registered for modality {}",
                enc.modality
            )));
        }
    }
    for p in batch {
        if p.observations.len() != encoders.len() {
            return Err(Error::config(format!(
                "patient {} has {} modality slots but {} encoders are registered",
                p.id,
                p.observations.len(),
                encoders.len()
            )));
        }
        for (m, obs) in p.observations.iter().enumerate() {
            if let Some(x) = obs {
                if x.len() != encoders[m].input_dim {
                    return Err(Error::config(format!(
                        "modality {m} expects {} input features, patient {} has {}",
                        encoders[m].input_dim,
                        p.id,
                        x.len()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Builds the graph for `batch`: observed edges are encoded, missing edges
/// get `(0, σ_miss)`, and every node starts at `N(0, I)`.
pub fn build_graph(
    batch: &[&Patient],
    encoders: &[ModalityEncoder],
    encoding: EdgeEncoding,
) -> Result<BipartiteGraph> {
    if encoders.is_empty() {
        return Err(Error::config("no modality encoders"));
    }
    check_inputs(batch, encoders)?;
    let d = encoders[0].latent_dim();
    if encoders.iter().any(|e| e.latent_dim() != d) {
        return Err(Error::config("encoders disagree on the latent dimension"));
    }
    let m_count = encoders.len();
    let mut edges = Vec::with_capacity(batch.len() * m_count);
    for p in batch {
        for (m, obs) in p.observations.iter().enumerate() {
            let edge = match obs {
                Some(x) => {
                    let mut g = encoders[m].encode(x)?;
                    if encoding.unit_observed_sigma {
                        g = GaussianVec::new(g.mu().to_vec(), vec![1.0; d])?;
                    }
                    EdgeState {
                        feature: g,
                        observed: true,
                    }
                }
                None => missing_edge(d, encoding.sigma_miss),
            };
            edges.push(edge);
        }
    }
    Ok(BipartiteGraph {
        patient_ids: batch.iter().map(|p| p.id).collect(),
        n_modalities: m_count,
        latent_dim: d,
        encoding,
        edges,
        patient_states: vec![GaussianVec::standard(d); batch.len()],
        modality_states: vec![GaussianVec::standard(d); m_count],
    })
}

fn missing_edge(d: usize, sigma_miss: f64) -> EdgeState {
    EdgeState {
        feature: GaussianVec::isotropic(d, 0.0, sigma_miss),
        observed: false,
    }
}

/// Demotes each observed edge to missing with probability `drop_ratio`.
/// A patient that had at least one observed edge keeps at least one: if a
/// draw would drop them all, the patient's draw is repeated.
pub fn augment_mask<R: Rng + ?Sized>(
    observed: &[bool],
    n_modalities: usize,
    drop_ratio: f64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&drop_ratio) {
        return Err(Error::config(format!("drop ratio must lie in [0, 1), got {drop_ratio}")));
    }
    if n_modalities == 0 || observed.len() % n_modalities != 0 {
        return Err(Error::contract("mask length is not a multiple of the modality count"));
    }
    let mut out = observed.to_vec();
    if drop_ratio == 0.0 {
        return Ok(out);
    }
    for row in out.chunks_mut(n_modalities) {
        let before: Vec<usize> = (0..n_modalities).filter(|&m| row[m]).collect();
        if before.is_empty() {
            continue;
        }
        loop {
            let dropped: Vec<bool> = before.iter().map(|_| rng.random::<f64>() < drop_ratio).collect();
            if dropped.iter().any(|d| !d) {
                for (&m, &d) in before.iter().zip(&dropped) {
                    row[m] = !d;
                }
                break;
            }
        }
    }
    Ok(out)
}

impl BipartiteGraph {
    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn patient_ids(&self) -> &[usize] {
        &self.patient_ids
    }

    pub fn encoding(&self) -> EdgeEncoding {
        self.encoding
    }

    pub fn edge(&self, patient: usize, modality: usize) -> &EdgeState {
        &self.edges[patient * self.n_modalities + modality]
    }

    /// All edges as `(patient node, modality node, state)`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, &EdgeState)> {
        let m = self.n_modalities;
        self.edges
            .iter()
            .enumerate()
            .map(move |(i, e)| (NodeId::Patient(i / m), NodeId::Modality(i % m), e))
    }

    /// Patient-major observed flags.
    pub fn observed_mask(&self) -> Vec<bool> {
        self.edges.iter().map(|e| e.observed).collect()
    }

    pub fn patient_states(&self) -> &[GaussianVec] {
        &self.patient_states
    }

    pub fn modality_states(&self) -> &[GaussianVec] {
        &self.modality_states
    }

    /// Copy of the graph with edge dropout applied; see [`augment_mask`].
    pub fn augment<R: Rng + ?Sized>(&self, drop_ratio: f64, rng: &mut R) -> Result<BipartiteGraph> {
        let mask = augment_mask(&self.observed_mask(), self.n_modalities, drop_ratio, rng)?;
        let mut out = self.clone();
        for (edge, keep) in out.edges.iter_mut().zip(mask) {
            if edge.observed && !keep {
                *edge = missing_edge(self.latent_dim, self.encoding.sigma_miss);
            }
        }
        Ok(out)
    }

    /// Every edge incident to `node`, missing ones included.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(NodeId, &EdgeState)>> {
        match node {
            NodeId::Patient(p) if p < self.n_patients() => Ok((0..self.n_modalities)
                .map(|m| (NodeId::Modality(m), self.edge(p, m)))
                .collect()),
            NodeId::Modality(m) if m < self.n_modalities => Ok((0..self.n_patients())
                .map(|p| (NodeId::Patient(p), self.edge(p, m)))
                .collect()),
            other => Err(Error::Lookup(format!("no node {other:?} in this graph"))),
        }
    }
}

/// Constant observation matrices for one batch, grouped by modality.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub n_patients: usize,
    pub n_modalities: usize,
    /// Per modality: observed rows stacked in patient order.
    pub observations: Vec<Option<Tensor>>,
    /// Per patient-major edge: row within its modality's matrix.
    pub row_of_edge: Vec<Option<usize>>,
    pub observed: Vec<bool>,
}

impl BatchInputs {
    pub fn new(batch: &[&Patient], encoders: &[ModalityEncoder<impl Sized>], input_dims: &[usize]) -> Result<Self> {
        let n_modalities = input_dims.len();
        if encoders.len() != n_modalities {
            return Err(Error::config("encoder count does not match the modality count"));
        }
        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_modalities];
        let mut row_of_edge = Vec::with_capacity(batch.len() * n_modalities);
        let mut observed = Vec::with_capacity(batch.len() * n_modalities);
        for p in batch {
            if p.observations.len() != n_modalities {
                return Err(Error::config(format!(
                    "patient {} has {} modality slots, expected {n_modalities}",
                    p.id,
                    p.observations.len()
                )));
            }
            for (m, obs) in p.observations.iter().enumerate() {
                match obs {
                    Some(x) => {
                        if x.len() != input_dims[m] {
                            return Err(Error::config(format!(
                                "modality {m} expects {} input features, patient {} has {}",
                                input_dims[m],
                                p.id,
                                x.len()
                            )));
                        }
                        row_of_edge.push(Some(rows[m].len()));
                        rows[m].push(x.clone());
                        observed.push(true);
                    }
                    None => {
                        row_of_edge.push(None);
                        observed.push(false);
                    }
                }
            }
        }
        let observations = rows
            .iter()
            .map(|r| {
                if r.is_empty() {
                    Ok(None)
                } else {
                    Tensor::from_rows(r).map(Some)
                }
            })
            .collect::<core::result::Result<_, _>>()?;
        Ok(Self {
            n_patients: batch.len(),
            n_modalities,
            observations,
            row_of_edge,
            observed,
        })
    }
}

/// Encoder outputs for one batch, stacked so any observed-mask can be
/// realised with a row gather.
#[derive(Debug, Clone)]
pub struct EncodedEdges {
    pub stacked_mu: Var,
    pub stacked_sigma: Var,
    /// Per patient-major edge: its row in the stacked matrices, if the
    /// modality was observed for that patient.
    pub stacked_row: Vec<Option<usize>>,
    /// Row holding the missing-edge constants.
    pub missing_row: usize,
    pub n_patients: usize,
    pub n_modalities: usize,
}

/// Runs every encoder over its observed rows.
pub fn encode_on_tape(
    tape: &mut Tape,
    inputs: &BatchInputs,
    encoders: &[ModalityEncoder<Var>],
    latent_dim: usize,
    encoding: EdgeEncoding,
) -> Result<EncodedEdges> {
    let mut mus = Vec::new();
    let mut sigmas = Vec::new();
    let mut offsets = vec![0usize; inputs.n_modalities];
    let mut total = 0;
    for (m, obs) in inputs.observations.iter().enumerate() {
        offsets[m] = total;
        if let Some(x) = obs {
            let xv = tape.constant(x.clone());
            let (mu, sigma) = encoders[m].encode_rows(tape, xv)?;
            let sigma = if encoding.unit_observed_sigma {
                tape.constant(Tensor::ones(x.rows(), latent_dim))
            } else {
                sigma
            };
            total += x.rows();
            mus.push(mu);
            sigmas.push(sigma);
        }
    }
    mus.push(tape.constant(Tensor::zeros(1, latent_dim)));
    sigmas.push(tape.constant(Tensor::full(1, latent_dim, encoding.sigma_miss)));
    let stacked_mu = tape.concat_rows(&mus)?;
    let stacked_sigma = tape.concat_rows(&sigmas)?;
    let stacked_row = inputs
        .row_of_edge
        .iter()
        .enumerate()
        .map(|(e, r)| r.map(|r| offsets[e % inputs.n_modalities] + r))
        .collect();
    Ok(EncodedEdges {
        stacked_mu,
        stacked_sigma,
        stacked_row,
        missing_row: total,
        n_patients: inputs.n_patients,
        n_modalities: inputs.n_modalities,
    })
}

impl EncodedEdges {
    /// Patient-major edge features `(μ, σ)` under `observed`; an edge is
    /// observed only if it is flagged and was encoded.
    pub fn edge_features(&self, tape: &mut Tape, observed: &[bool]) -> Result<(Var, Var)> {
        if observed.len() != self.stacked_row.len() {
            return Err(Error::contract("mask length does not match the edge count"));
        }
        let idx: Vec<usize> = self
            .stacked_row
            .iter()
            .zip(observed)
            .map(|(r, &o)| match (r, o) {
                (Some(r), true) => *r,
                _ => self.missing_row,
            })
            .collect();
        let mu = tape.gather_rows(self.stacked_mu, &idx)?;
        let sigma = tape.gather_rows(self.stacked_sigma, &idx)?;
        Ok((mu, sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_missingness, generate, GeneratorConfig, MissingnessSpec};
    use crate::rng::seeded;

    fn patient(id: usize, obs: Vec<Option<Vec<f64>>>) -> Patient {
        Patient {
            id,
            label: 0,
            latent: vec![],
            risk_score: 0.0,
            observations: obs,
        }
    }

    fn encoders(dims: &[usize], d: usize) -> Vec<ModalityEncoder> {
        let mut rng = seeded(7);
        dims.iter()
            .enumerate()
            .map(|(m, &k)| ModalityEncoder::init(&mut rng, m, k, 2 * d, d))
            .collect()
    }

    #[test]
    fn complete_and_missing_single_patient() {
        let encs = encoders(&[2, 3], 4);
        let full = patient(0, vec![Some(vec![1.0, 2.0]), Some(vec![0.1, 0.2, 0.3])]);
        let g = build_graph(&[&full], &encs, EdgeEncoding::default()).unwrap();
        assert_eq!(g.edges().count(), 2);
        assert!(g.edges().all(|(_, _, e)| e.observed));

        let partial = patient(1, vec![Some(vec![1.0, 2.0]), None]);
        let g = build_graph(&[&partial], &encs, EdgeEncoding::default()).unwrap();
        let e = g.edge(0, 1);
        assert!(!e.observed);
        assert_eq!(e.feature.mu(), &[0.0; 4]);
        assert_eq!(e.feature.sigma(), &[10.0; 4]);
        assert!(g.patient_states().iter().all(|s| s == &GaussianVec::standard(4)));
    }

    #[test]
    fn unknown_modality_is_a_config_error() {
        let encs = encoders(&[2, 3], 4);
        let p = patient(0, vec![Some(vec![1.0, 2.0]), None, Some(vec![1.0])]);
        assert!(matches!(build_graph(&[&p], &encs, EdgeEncoding::default()), Err(Error::Config(_))));
    }

    #[test]
    fn mask_passes_through_from_the_cohort() {
        let cfg = GeneratorConfig {
            n_patients: 3,
            input_dims: vec![4, 3, 5],
            latent_dim: 2,
            noise_scales: vec![0.5; 3],
            prevalence: 0.3,
        };
        let c = generate(&cfg, 1).unwrap();
        let c = apply_missingness(&c, &MissingnessSpec::mcar(0.5), 17).unwrap();
        let batch: Vec<&Patient> = c.patients.iter().collect();
        let g = build_graph(&batch, &encoders(&[4, 3, 5], 4), EdgeEncoding::default()).unwrap();
        let expected: Vec<bool> = c.patients.iter().flat_map(|p| p.mask()).collect();
        assert_eq!(g.observed_mask(), expected);
    }

    #[test]
    fn neighbors_cover_the_complete_bipartite_graph() {
        let encs = encoders(&[2, 2, 2], 3);
        let ps: Vec<Patient> = (0..5)
            .map(|i| patient(i, vec![Some(vec![1.0, 0.0]), None, Some(vec![0.0, 1.0])]))
            .collect();
        let batch: Vec<&Patient> = ps.iter().collect();
        let g = build_graph(&batch, &encs, EdgeEncoding::default()).unwrap();
        assert_eq!(g.neighbors(NodeId::Patient(2)).unwrap().len(), 3);
        let mods = g.neighbors(NodeId::Modality(1)).unwrap();
        assert_eq!(mods.len(), 5);
        assert!(mods.iter().all(|(n, _)| matches!(n, NodeId::Patient(_))));
        assert!(matches!(g.neighbors(NodeId::Patient(5)), Err(Error::Lookup(_))));

        let empty = build_graph(&[], &encs, EdgeEncoding::default()).unwrap();
        assert!(empty.neighbors(NodeId::Modality(0)).unwrap().is_empty());
    }

    #[test]
    fn augmentation_is_a_pure_copy() {
        let encs = encoders(&[2, 2], 3);
        let ps: Vec<Patient> = (0..20)
            .map(|i| patient(i, vec![Some(vec![1.0, i as f64]), Some(vec![0.5, 0.5])]))
            .collect();
        let batch: Vec<&Patient> = ps.iter().collect();
        let g = build_graph(&batch, &encs, EdgeEncoding::default()).unwrap();
        let before = g.clone();
        let mut rng = seeded(1);
        assert_eq!(g.augment(0.0, &mut rng).unwrap(), g);
        let aug = g.augment(0.5, &mut rng).unwrap();
        assert_eq!(g, before);
        assert_ne!(aug, g);
        for p in 0..20 {
            assert!((0..2).any(|m| aug.edge(p, m).observed));
        }
        for (_, _, e) in aug.edges().filter(|(_, _, e)| !e.observed) {
            assert_eq!(e.feature, GaussianVec::isotropic(3, 0.0, 10.0));
        }
    }

    #[test]
    fn single_observed_edge_is_never_dropped() {
        let mask = vec![true, false, false];
        let mut rng = seeded(5);
        for _ in 0..200 {
            assert_eq!(augment_mask(&mask, 3, 0.9, &mut rng).unwrap(), mask);
        }
    }

    #[test]
    fn dropout_fraction_concentrates() {
        // 100 patients x 100 modalities: orphan re-draws are negligible.
        let mask = vec![true; 10_000];
        let mut rng = seeded(9);
        let out = augment_mask(&mask, 100, 0.5, &mut rng).unwrap();
        let dropped = out.iter().filter(|o| !**o).count() as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&dropped), "{dropped}");
    }

    #[test]
    fn missing_sigma_exceeds_every_observed_sigma() {
        let cfg = GeneratorConfig {
            n_patients: 64,
            ..GeneratorConfig::default()
        };
        for seed in 0..5 {
            let c = apply_missingness(&generate(&cfg, seed).unwrap(), &MissingnessSpec::mcar(0.3), seed).unwrap();
            let batch: Vec<&Patient> = c.patients.iter().collect();
            let mut rng = seeded(seed);
            let encs: Vec<ModalityEncoder> = cfg
                .input_dims
                .iter()
                .enumerate()
                .map(|(m, &k)| ModalityEncoder::init(&mut rng, m, k, 32, 16))
                .collect();
            let g = build_graph(&batch, &encs, EdgeEncoding::default()).unwrap();
            let max_obs = g
                .edges()
                .filter(|(_, _, e)| e.observed)
                .flat_map(|(_, _, e)| e.feature.sigma().to_vec())
                .fold(0.0, f64::max);
            assert!(max_obs < DEFAULT_SIGMA_MISS, "{max_obs}");
        }
    }

    #[test]
    fn tape_edges_match_value_graph() {
        let cfg = GeneratorConfig {
            n_patients: 6,
            ..GeneratorConfig::default()
        };
        let c = apply_missingness(&generate(&cfg, 2).unwrap(), &MissingnessSpec::mcar(0.4), 2).unwrap();
        let batch: Vec<&Patient> = c.patients.iter().collect();
        let encs = encoders(&cfg.input_dims, 4);
        for encoding in [
            EdgeEncoding::default(),
            EdgeEncoding {
                sigma_miss: 7.0,
                unit_observed_sigma: true,
            },
        ] {
            let g = build_graph(&batch, &encs, encoding).unwrap();
            let inputs = BatchInputs::new(&batch, &encs, &cfg.input_dims).unwrap();
            let mut tape = Tape::new();
            let bound: Vec<ModalityEncoder<Var>> = encs
                .iter()
                .map(|e| e.map("e", &mut |_, _, t| tape.constant(t.clone())))
                .collect();
            let enc = encode_on_tape(&mut tape, &inputs, &bound, 4, encoding).unwrap();
            let (mu, sigma) = enc.edge_features(&mut tape, &inputs.observed).unwrap();
            for (i, (_, _, e)) in g.edges().enumerate() {
                for k in 0..4 {
                    assert!((tape.value(mu).get(i, k) - e.feature.mu()[k]).abs() < 1e-12);
                    assert!((tape.value(sigma).get(i, k) - e.feature.sigma()[k]).abs() < 1e-12);
                }
            }
        }
    }
}
