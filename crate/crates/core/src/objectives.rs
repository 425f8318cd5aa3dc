//! Training objective: cross-view contrastive, supervised contrastive,
//! cross-entropy and the variational information bottleneck KL term.
//!
//! Scalar reference versions operate on plain values; the `*_on_tape`
//! versions build differentiable graphs over a batch. All batch losses are
//! means over the batch.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gaussian::GaussianVec;
use crate::math;
use crate::nn::{join, Linear, MapFn, ParamRole, Visit, VisitMut};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

/// `KL(N(μ, σ²I) ‖ N(0, I))`.
pub fn vib_kl(g: &GaussianVec) -> f64 {
    0.5 * g
        .mu()
        .iter()
        .zip(g.sigma())
        .map(|(m, s)| m * m + s * s - math::ln(s * s) - 1.0)
        .sum::<f64>()
}

/// Binary cross-entropy of probability `p` against label `y`.
pub fn cross_entropy(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -math::ln(p)
    } else {
        -math::ln(1.0 - p)
    }
}

/// Mean per-row KL of `(μ, σ)` rows: a `1 × 1` node.
pub fn vib_kl_on_tape(tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
    let m2 = tape.square(mu);
    let s2 = tape.square(sigma);
    let log_s2 = tape.log(s2);
    let a = tape.add(m2, s2)?;
    let a = tape.sub(a, log_s2)?;
    let a = tape.add_scalar(a, -1.0);
    let per_row = tape.row_sum(a);
    let mean = tape.mean(per_row);
    Ok(tape.scale(mean, 0.5))
}

/// Mean binary cross-entropy of `[n × 1]` probabilities.
pub fn cross_entropy_on_tape(tape: &mut Tape, probs: Var, labels: &[u8]) -> Result<Var> {
    let n = tape.value(probs).rows();
    if tape.value(probs).cols() != 1 || labels.len() != n {
        return Err(Error::contract("probabilities must be a column matching the labels"));
    }
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = tape.log(p);
    let neg = tape.scale(p, -1.0);
    let q = tape.add_scalar(neg, 1.0);
    let log_q = tape.log(q);
    let y = Tensor::column(labels.iter().map(|&l| f64::from(l)).collect())?;
    let not_y = y.map(|v| 1.0 - v);
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let a = tape.mul(log_p, y)?;
    let b = tape.mul(log_q, not_y)?;
    let s = tape.add(a, b)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Mean binary cross-entropy of `[n × 1]` logits, `softplus(x) − y·x`.
/// Logits are clamped to `±logit(1 − PROB_CLAMP)`, the same bound as the
/// probability form, which stays accurate when the sigmoid saturates.
pub fn cross_entropy_with_logits_on_tape(tape: &mut Tape, logits: Var, labels: &[u8]) -> Result<Var> {
    let n = tape.value(logits).rows();
    if tape.value(logits).cols() != 1 || labels.len() != n {
        return Err(Error::contract("logits must be a column matching the labels"));
    }
    let bound = math::ln((1.0 - PROB_CLAMP) / PROB_CLAMP);
    let x = tape.clamp(logits, -bound, bound);
    let sp = tape.softplus(x);
    let y = tape.constant(Tensor::column(labels.iter().map(|&l| f64::from(l)).collect())?);
    let yx = tape.mul(x, y)?;
    let s = tape.sub(sp, yx)?;
    let total = tape.sum(s);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Rows scaled to unit length.
pub fn normalize_rows(tape: &mut Tape, z: Var) -> Var {
    let sq = tape.square(z);
    let norm2 = tape.row_sum(sq);
    let norm2 = tape.add_scalar(norm2, NORM_EPS);
    let norm = tape.sqrt(norm2);
    let inv = tape.recip(norm);
    tape.scale_rows(z, inv).expect("row count matches")
}

/// Symmetric normalised-temperature cross-view loss. Patient `p` in one
/// view must pick out patient `p` in the other view among all `N`
/// candidates; both directions are averaged.
pub fn unsup_contrastive_on_tape(tape: &mut Tape, z: Var, z_aug: Var, tau: f64) -> Result<Var> {
    let n = tape.value(z).rows();
    if tape.value(z).shape() != tape.value(z_aug).shape() {
        return Err(Error::contract("both views must hold the same patients"));
    }
    if n < 2 {
        return Err(Error::contract("the cross-view loss needs at least two patients"));
    }
    let a = normalize_rows(tape, z);
    let b = normalize_rows(tape, z_aug);
    let sim = tape.matmul_nt(a, b)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let forward = tape.log_softmax_rows(sim);
    let sim_t = tape.transpose(sim);
    let backward = tape.log_softmax_rows(sim_t);
    let eye = tape.constant(Tensor::eye(n));
    let f = tape.mul(forward, eye)?;
    let g = tape.mul(backward, eye)?;
    let both = tape.add(f, g)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -1.0 / (2.0 * n as f64)))
}

/// Supervised contrastive loss on one view. For anchor `i` with positive
/// set `P(i)` (same label, `j ≠ i`), the loss is
/// `−(1/|P(i)|) Σ_{j∈P(i)} log softmax_{k≠i}(s_ik / τ)_j − log |P(i)|`,
/// which is zero when the anchor spreads its similarity evenly over its
/// positives and none over negatives. Anchors without positives are
/// skipped; if none has a positive the loss is a constant zero.
pub fn sup_contrastive_on_tape(tape: &mut Tape, z: Var, labels: &[u8], tau: f64) -> Result<Var> {
    let n = tape.value(z).rows();
    if labels.len() != n {
        return Err(Error::contract("one label per patient is required"));
    }
    if n < 2 {
        return Err(Error::contract("the supervised contrastive loss needs at least two patients"));
    }
    let mut weights = vec![0.0; n * n];
    let mut anchors = 0usize;
    let mut log_counts = 0.0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        log_counts += math::ln(pos.len() as f64);
        let share = 1.0 / pos.len() as f64;
        for j in pos {
            weights[i * n + j] = share;
        }
    }
    if anchors == 0 {
        log::warn!("supervised contrastive loss: no anchor has a same-label peer");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let include: Vec<bool> = (0..n * n).map(|e| e / n != e % n).collect();
    let a = normalize_rows(tape, z);
    let sim = tape.matmul_nt(a, a)?;
    let sim = tape.scale(sim, 1.0 / tau);
    let log_p = tape.log_softmax_rows_masked(sim, Some(include))?;
    let w = tape.constant(Tensor::new(n, n, weights)?);
    let picked = tape.mul(log_p, w)?;
    let total = tape.sum(picked);
    let total = tape.scale(total, -1.0);
    let total = tape.add_scalar(total, -log_counts);
    Ok(tape.scale(total, 1.0 / anchors as f64))
}

/// Per-component weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub unsup: f64,
    pub sup: f64,
    pub ce: f64,
    pub vib: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            unsup: 1.0,
            sup: 1.0,
            ce: 1.0,
            vib: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.unsup, self.sup, self.ce, self.vib];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub unsup: f64,
    pub sup: f64,
    pub ce: f64,
    pub vib: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Weighted sum of the four components.
pub fn total_loss(unsup: f64, sup: f64, ce: f64, vib: f64, weights: LossWeights) -> LossBreakdown {
    let total = weights.unsup * unsup + weights.sup * sup + weights.ce * ce + weights.vib * vib;
    LossBreakdown {
        unsup,
        sup,
        ce,
        vib,
        total,
        weights,
    }
}

/// Loss components as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub unsup: Var,
    pub sup: Var,
    pub ce: Var,
    pub vib: Var,
}

impl LossTerms {
    /// The weighted total as a tape node, with its numeric breakdown.
    pub fn combine(&self, tape: &mut Tape, weights: LossWeights) -> Result<(Var, LossBreakdown)> {
        let parts = [
            (self.unsup, weights.unsup),
            (self.sup, weights.sup),
            (self.ce, weights.ce),
            (self.vib, weights.vib),
        ];
        let mut total: Option<Var> = None;
        for (v, w) in parts {
            if w == 0.0 {
                continue;
            }
            let term = tape.scale(v, w);
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
        let total = match total {
            Some(t) => t,
            None => tape.constant(Tensor::scalar(0.0)),
        };
        let value = |tape: &Tape, v: Var| tape.value(v).item();
        let breakdown = LossBreakdown {
            unsup: value(tape, self.unsup)?,
            sup: value(tape, self.sup)?,
            ce: value(tape, self.ce)?,
            vib: value(tape, self.vib)?,
            total: value(tape, total)?,
            weights,
        };
        Ok((total, breakdown))
    }
}

/// `ŷ = sigmoid(w · z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionHead<P = Tensor> {
    pub linear: Linear<P>,
}

impl PredictionHead<Tensor> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        Self {
            linear: Linear::init(rng, 1, d, 1.0, Some(0.0)),
        }
    }

    pub fn zeroed(d: usize) -> Self {
        Self {
            linear: Linear::zeros(1, d, true),
        }
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        math::sigmoid(self.linear.apply(z)[0])
    }
}

impl<P> PredictionHead<P> {
    pub fn visit(&self, prefix: &str, f: &mut Visit<'_, P>) {
        self.linear.visit(&join(prefix, "linear"), ParamRole::Mean, f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, P>) {
        self.linear.visit_mut(&join(prefix, "linear"), ParamRole::Mean, f);
    }

    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> PredictionHead<Q> {
        PredictionHead {
            linear: self.linear.map(&join(prefix, "linear"), ParamRole::Mean, f),
        }
    }
}

impl PredictionHead<Var> {
    /// `[n × d] → [n × 1]` probabilities.
    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let logits = self.linear.forward(tape, z)?;
        Ok(tape.sigmoid(logits))
    }

    /// `[n × d] → [n × 1]` logits.
    pub fn logits(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        Ok(self.linear.forward(tape, z)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::rng::{normal_vec, seeded};
    use rand::Rng;

    fn value_of(build: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = build(&mut tape);
        tape.value(v).item().unwrap()
    }

    fn unsup(z: &Tensor, z2: &Tensor, tau: f64) -> f64 {
        value_of(|t| {
            let a = t.constant(z.clone());
            let b = t.constant(z2.clone());
            unsup_contrastive_on_tape(t, a, b, tau).unwrap()
        })
    }

    fn sup(z: &Tensor, y: &[u8], tau: f64) -> f64 {
        value_of(|t| {
            let a = t.constant(z.clone());
            sup_contrastive_on_tape(t, a, y, tau).unwrap()
        })
    }

    #[test]
    fn kl_examples() {
        assert_eq!(vib_kl(&GaussianVec::standard(4)), 0.0);
        let g = GaussianVec::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!((vib_kl(&g) - 0.5).abs() < 1e-15);
        let g = GaussianVec::new(vec![0.0], vec![2.0]).unwrap();
        assert!((vib_kl(&g) - 0.5 * (4.0 - libm::log(4.0) - 1.0)).abs() < 1e-15);
        assert!((vib_kl(&g) - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn kl_tape_matches_scalar() {
        let mut rng = seeded(3);
        let mu = Tensor::new(3, 4, normal_vec(&mut rng, 12)).unwrap();
        let sigma = Tensor::new(3, 4, normal_vec(&mut rng, 12)).unwrap().map(|x| x.abs() + 0.2);
        let expected: f64 = (0..3)
            .map(|r| vib_kl(&GaussianVec::new(mu.row(r).to_vec(), sigma.row(r).to_vec()).unwrap()))
            .sum::<f64>()
            / 3.0;
        let got = value_of(|t| {
            let m = t.constant(mu.clone());
            let s = t.constant(sigma.clone());
            vib_kl_on_tape(t, m, s).unwrap()
        });
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(0.5, 0) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(0.5, 1) - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(1.0 - 1e-8, 1) < 1e-6);
        assert!(cross_entropy(1e-8, 0) < 1e-6);
        assert!(cross_entropy(0.0, 1).is_finite());
    }

    #[test]
    fn cross_entropy_batch_matches_loop() {
        let mut rng = seeded(11);
        for _ in 0..20 {
            let n = rng.random_range(1..10);
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let mut naive = 0.0;
            for i in 0..n {
                let q = p[i].clamp(1e-12, 1.0 - 1e-12);
                naive += if y[i] == 1 { -libm::log(q) } else { -libm::log(1.0 - q) };
            }
            naive /= n as f64;
            let got = value_of(|t| {
                let v = t.constant(Tensor::column(p.clone()).unwrap());
                cross_entropy_on_tape(t, v, &y).unwrap()
            });
            assert!((got - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_cross_entropy_matches_probability_form() {
        let mut rng = seeded(12);
        for _ in 0..20 {
            let n = rng.random_range(1..10);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let p: Vec<f64> = x.iter().map(|&v| math::sigmoid(v)).collect();
            let want: f64 = p.iter().zip(&y).map(|(&p, &y)| cross_entropy(p, y)).sum::<f64>() / n as f64;
            let got = value_of(|t| {
                let v = t.constant(Tensor::column(x.clone()).unwrap());
                cross_entropy_with_logits_on_tape(t, v, &y).unwrap()
            });
            assert!((got - want).abs() < 1e-9);
        }
        let far = value_of(|t| {
            let v = t.constant(Tensor::column(vec![-100.0]).unwrap());
            cross_entropy_with_logits_on_tape(t, v, &[1]).unwrap()
        });
        assert!((far - cross_entropy(0.0, 1)).abs() < 1e-9);
    }

    #[test]
    fn unsup_examples() {
        let z = Tensor::eye(2);
        let aligned = unsup(&z, &z, 1.0);
        let e = libm::exp(1.0);
        assert!((aligned + libm::log(e / (e + 1.0))).abs() < 1e-12);
        assert!((aligned - 0.3133).abs() < 1e-4);
        let swapped = Tensor::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(unsup(&z, &swapped, 1.0) > aligned);

        let mut tape = Tape::new();
        let one = tape.constant(Tensor::ones(1, 3));
        assert!(matches!(unsup_contrastive_on_tape(&mut tape, one, one, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn sup_examples() {
        let z = Tensor::new(3, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(sup(&z, &[1, 1, 1], 0.5).abs() < 1e-12);

        let mut rng = seeded(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let jitter = 0.01 * rng.random::<f64>();
            rows.push(if i % 2 == 0 { vec![1.0, jitter] } else { vec![jitter, 1.0] });
            labels.push((i % 2) as u8);
        }
        let z = Tensor::from_rows(&rows).unwrap();
        let separated = sup(&z, &labels, 0.1);
        let shuffled = [0u8, 0, 1, 1, 0, 1, 1, 0];
        assert!(separated < sup(&z, &shuffled, 0.1));

        assert_eq!(sup(&z, &[0, 1, 2, 3, 4, 5, 6, 7], 0.5), 0.0);
    }

    #[test]
    fn losses_are_rotation_invariant() {
        let mut rng = seeded(4);
        // Rotation in the (0, 2) plane.
        let th = 0.7;
        let (c, s) = (libm::cos(th), libm::sin(th));
        let rot = Tensor::new(3, 3, vec![c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c]).unwrap();
        let z = Tensor::new(5, 3, normal_vec(&mut rng, 15)).unwrap();
        let z2 = Tensor::new(5, 3, normal_vec(&mut rng, 15)).unwrap();
        let y = [0u8, 1, 1, 0, 1];
        let rz = z.matmul(&rot).unwrap();
        let rz2 = z2.matmul(&rot).unwrap();
        assert!((unsup(&z, &z2, 0.5) - unsup(&rz, &rz2, 0.5)).abs() < 1e-8);
        assert!((sup(&z, &y, 0.5) - sup(&rz, &y, 0.5)).abs() < 1e-8);
    }

    #[test]
    fn total_loss_examples() {
        let w1 = LossWeights {
            unsup: 1.0,
            sup: 1.0,
            ce: 1.0,
            vib: 1.0,
        };
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, w1).total, 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, w1).total, 10.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, LossWeights::default()).total - 3.01).abs() < 1e-12);
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let mut rng = seeded(21);
        for _ in 0..5 {
            let n = rng.random_range(2..5);
            let d = rng.random_range(1..5);
            let z = Tensor::new(n, d, normal_vec(&mut rng, n * d)).unwrap();
            let z2 = Tensor::new(n, d, normal_vec(&mut rng, n * d)).unwrap();
            let sigma = Tensor::new(n, d, normal_vec(&mut rng, n * d)).unwrap().map(|x| x.abs() + 0.3);
            let p = Tensor::new(n, 1, (0..n).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
            let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            y[0] = y[1];

            let r = check_gradients::<_, Error>(|t, v| vib_kl_on_tape(t, v[0], v[1]), &[z.clone(), sigma], 1e-5).unwrap();
            assert!(r.max_rel_err <= 1e-4, "kl {r:?}");
            let r = check_gradients::<_, Error>(|t, v| cross_entropy_on_tape(t, v[0], &y), &[p], 1e-5).unwrap();
            assert!(r.max_rel_err <= 1e-4, "ce {r:?}");
            let x = Tensor::new(n, 1, normal_vec(&mut rng, n)).unwrap().map(|v| 4.0 * v);
            let r = check_gradients::<_, Error>(|t, v| cross_entropy_with_logits_on_tape(t, v[0], &y), &[x], 1e-5).unwrap();
            assert!(r.max_rel_err <= 1e-4, "ce logits {r:?}");
            let r = check_gradients::<_, Error>(|t, v| unsup_contrastive_on_tape(t, v[0], v[1], 0.5), &[z.clone(), z2], 1e-5)
                .unwrap();
            assert!(r.max_rel_err <= 1e-4, "unsup {r:?}");
            let r = check_gradients::<_, Error>(|t, v| sup_contrastive_on_tape(t, v[0], &y, 0.5), &[z], 1e-5).unwrap();
            assert!(r.max_rel_err <= 1e-4, "sup {r:?}");
        }
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let h = PredictionHead::zeroed(4);
        assert_eq!(h.predict(&[1.0, -2.0, 3.0, 0.5]), 0.5);
    }
}
