//! Diagonal-Gaussian embeddings of unimodal observations.
//!
//! Each modality has its own encoder: a shared ReLU base layer feeding a
//! mean head and a variance head. The variance head is softplus-terminated
//! and yields standard deviations, so `σ` is strictly positive.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{join, Linear, MapFn, ParamRole, Visit, VisitMut};
use crate::tensor::{Tensor, TensorError};

/// `N(mu, diag(sigma²))`. `sigma` holds standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianVec {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl GaussianVec {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::contract(format!(
                "mean has {} components, sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::contract(format!("sigma must be positive and finite, got {s}")));
        }
        Ok(Self { mu, sigma })
    }

    /// `N(value · 1, scale² I)` in `dim` dimensions.
    pub fn isotropic(dim: usize, mean: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        Self {
            mu: alloc::vec![mean; dim],
            sigma: alloc::vec![sigma; dim],
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self::isotropic(dim, 0.0, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Mean of the per-dimension standard deviations.
    pub fn mean_sigma(&self) -> f64 {
        self.sigma.iter().sum::<f64>() / self.sigma.len() as f64
    }

    /// Reparameterised draw `mu + sigma ⊙ noise`.
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(Error::contract(format!(
                "noise has {} components, distribution has {}",
                noise.len(),
                self.dim()
            )));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.sigma)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect())
    }
}

/// Reparameterised sample on the tape: `mu + sigma ⊙ noise`.
pub fn sample_on_tape(tape: &mut Tape, mu: Var, sigma: Var, noise: Tensor) -> Result<Var, TensorError> {
    let eps = tape.constant(noise);
    let spread = tape.mul(sigma, eps)?;
    tape.add(mu, spread)
}

/// Encoder for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEncoder<P = Tensor> {
    pub modality: usize,
    pub input_dim: usize,
    pub base: Linear<P>,
    pub mean_head: Linear<P>,
    pub var_head: Linear<P>,
}

impl ModalityEncoder<Tensor> {
    /// Randomly initialised encoder. The variance head starts with small
    /// weights and a bias of `softplus⁻¹(1)`, so initial `σ ≈ 1`.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        modality: usize,
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
    ) -> Self {
        Self {
            modality,
            input_dim,
            base: Linear::init(rng, hidden_dim, input_dim, 1.0, Some(0.0)),
            mean_head: Linear::init(rng, latent_dim, hidden_dim, 1.0, Some(0.0)),
            var_head: Linear::init(rng, latent_dim, hidden_dim, 0.1, Some(math::softplus_inv(1.0))),
        }
    }

    /// Encoder with every weight and bias zero.
    pub fn zeroed(modality: usize, input_dim: usize, hidden_dim: usize, latent_dim: usize) -> Self {
        Self {
            modality,
            input_dim,
            base: Linear::zeros(hidden_dim, input_dim, true),
            mean_head: Linear::zeros(latent_dim, hidden_dim, true),
            var_head: Linear::zeros(latent_dim, hidden_dim, true),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.out_dim()
    }

    /// `(μ, σ) = (f_mean(h), softplus(f_var(h)))` with `h = relu(base(x))`.
    pub fn encode(&self, x: &[f64]) -> Result<GaussianVec> {
        if x.len() != self.input_dim {
            return Err(Error::config(format!(
                "modality {} expects {} input features, got {}",
                self.modality,
                self.input_dim,
                x.len()
            )));
        }
        let h: Vec<f64> = self.base.apply(x).into_iter().map(|v| v.max(0.0)).collect();
        let mu = self.mean_head.apply(&h);
        let sigma = self.var_head.apply(&h).into_iter().map(math::softplus).collect();
        GaussianVec::new(mu, sigma)
    }
}

impl<P> ModalityEncoder<P> {
    pub fn visit(&self, prefix: &str, f: &mut Visit<'_, P>) {
        self.base.visit(&join(prefix, "base"), ParamRole::Mean, f);
        self.mean_head.visit(&join(prefix, "mean_head"), ParamRole::Mean, f);
        self.var_head.visit(&join(prefix, "var_head"), ParamRole::Variance, f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<'_, P>) {
        self.base.visit_mut(&join(prefix, "base"), ParamRole::Mean, f);
        self.mean_head.visit_mut(&join(prefix, "mean_head"), ParamRole::Mean, f);
        self.var_head.visit_mut(&join(prefix, "var_head"), ParamRole::Variance, f);
    }

    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> ModalityEncoder<Q> {
        ModalityEncoder {
            modality: self.modality,
            input_dim: self.input_dim,
            base: self.base.map(&join(prefix, "base"), ParamRole::Mean, f),
            mean_head: self.mean_head.map(&join(prefix, "mean_head"), ParamRole::Mean, f),
            var_head: self.var_head.map(&join(prefix, "var_head"), ParamRole::Variance, f),
        }
    }
}

impl ModalityEncoder<Var> {
    /// Encodes the rows of `x` (`[n × input_dim]`), returning `(μ, σ)`.
    pub fn encode_rows(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim {
            return Err(Error::config(format!(
                "modality {} expects {} input features, got {}",
                self.modality, self.input_dim, cols
            )));
        }
        let h = self.base.forward(tape, x)?;
        let h = tape.relu(h);
        let mu = self.mean_head.forward(tape, h)?;
        let pre = self.var_head.forward(tape, h)?;
        let sigma = tape.softplus(pre);
        Ok((mu, sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_gradients;
    use crate::rng::{normal_vec, seeded};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_encoder_gives_zero_mean_and_softplus_zero_sigma() {
        let enc = ModalityEncoder::zeroed(0, 3, 4, 2);
        let g = enc.encode(&[1.0, -2.0, 5.0]).unwrap();
        assert_eq!(g.mu(), &[0.0, 0.0]);
        for s in g.sigma() {
            assert_abs_diff_eq!(*s, core::f64::consts::LN_2, epsilon = 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_two_by_two_encoder() {
        // base = I, mean head = [[1, 0.5], [0, 1]], var head = [[0, 1], [1, 0]]
        let m2 = |v: [f64; 4]| Tensor::new(2, 2, v.to_vec()).unwrap();
        let enc = ModalityEncoder {
            modality: 0,
            input_dim: 2,
            base: Linear { weight: m2([1.0, 0.0, 0.0, 1.0]), bias: None },
            mean_head: Linear { weight: m2([1.0, 0.5, 0.0, 1.0]), bias: None },
            var_head: Linear { weight: m2([0.0, 1.0, 1.0, 0.0]), bias: None },
        };
        // h = relu([1, -1]) = [1, 0]
        let g = enc.encode(&[1.0, -1.0]).unwrap();
        assert_eq!(g.mu(), &[1.0, 0.0]);
        assert_abs_diff_eq!(g.sigma()[0], libm::log(2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(g.sigma()[1], libm::log(1.0 + libm::exp(1.0)), epsilon = 1e-15);
    }

    #[test]
    fn wrong_input_dimension_names_the_modality() {
        let enc = ModalityEncoder::zeroed(2, 3, 4, 2);
        let err = enc.encode(&[1.0]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("modality 2")));
    }

    #[test]
    fn tape_and_plain_encoders_agree() {
        let mut rng = seeded(3);
        let enc = ModalityEncoder::init(&mut rng, 1, 5, 8, 4);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(&mut rng, 5)).collect();
        let mut tape = Tape::new();
        let bound = enc.map("e", &mut |_, _, t| tape.constant(t.clone()));
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let (mu, sigma) = bound.encode_rows(&mut tape, x).unwrap();
        for (r, row) in rows.iter().enumerate() {
            let g = enc.encode(row).unwrap();
            for k in 0..4 {
                assert_abs_diff_eq!(tape.value(mu).get(r, k), g.mu()[k], epsilon = 1e-12);
                assert_abs_diff_eq!(tape.value(sigma).get(r, k), g.sigma()[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sigma_sum_gradient_wrt_variance_head_matches_finite_differences() {
        let mut rng = seeded(11);
        let enc = ModalityEncoder::init(&mut rng, 0, 3, 4, 2);
        let x = Tensor::from_rows(&[normal_vec(&mut rng, 3), normal_vec(&mut rng, 3)]).unwrap();
        let fixed = enc.clone();
        let report = check_gradients(
            |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let mut bound = fixed.map("e", &mut |_, _, t| tape.constant(t.clone()));
                bound.var_head.weight = v[0];
                bound.var_head.bias = Some(v[1]);
                let xv = tape.constant(x.clone());
                let (_, sigma) = bound.encode_rows(tape, xv)?;
                Ok(tape.sum(sigma))
            },
            &[enc.var_head.weight.clone(), enc.var_head.bias.clone().unwrap()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn sampling_examples() {
        let g = GaussianVec::new(alloc::vec![0.3, -1.2], alloc::vec![0.5, 2.0]).unwrap();
        assert_eq!(g.sample(&[0.0, 0.0]).unwrap(), g.mu());
        let s = GaussianVec::standard(2);
        assert_eq!(s.sample(&[1.0, -1.0]).unwrap(), alloc::vec![1.0, -1.0]);
        assert!(g.sample(&[1.0]).is_err());
    }

    #[test]
    fn sample_derivative_wrt_sigma_is_the_noise() {
        let noise = Tensor::row_vector(alloc::vec![0.7, -1.3, 2.1]).unwrap();
        let mut tape = Tape::new();
        let mu = tape.param(Tensor::row_vector(alloc::vec![0.1, 0.2, 0.3]).unwrap());
        let sigma = tape.param(Tensor::row_vector(alloc::vec![1.0, 0.5, 2.0]).unwrap());
        let z = sample_on_tape(&mut tape, mu, sigma, noise.clone()).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(sigma).unwrap(), &noise);
        assert_eq!(g.get(mu).unwrap(), &Tensor::ones(1, 3));

        let n2 = noise.clone();
        let report = check_gradients(
            |t: &mut Tape, v: &[Var]| -> core::result::Result<Var, TensorError> {
                let z = sample_on_tape(t, v[0], v[1], n2.clone())?;
                Ok(t.sum(z))
            },
            &[Tensor::row_vector(alloc::vec![0.1, 0.2, 0.3]).unwrap(), Tensor::row_vector(alloc::vec![1.0, 0.5, 2.0]).unwrap()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-6);
        assert_eq!(report.analytic[1], noise);
    }

    #[test]
    fn monte_carlo_moments_match_parameters() {
        let g = GaussianVec::new(alloc::vec![1.5, -0.5], alloc::vec![0.8, 2.5]).unwrap();
        let mut rng = seeded(99);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let z = g.sample(&normal_vec(&mut rng, 2)).unwrap();
            for k in 0..2 {
                sum[k] += z[k];
                sq[k] += z[k] * z[k];
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let s = g.sigma()[k];
            let se_mean = s / libm::sqrt(n as f64);
            // sd of the sample std is about s / sqrt(2n)
            let se_std = s / libm::sqrt(2.0 * n as f64);
            assert!((mean - g.mu()[k]).abs() < 4.0 * se_mean);
            assert!((libm::sqrt(var) - s).abs() < 4.0 * se_std);
        }
    }

    proptest! {
        #[test]
        fn encoder_sigma_is_always_positive(
            seed in 0u64..1000,
            scale in 0.1f64..50.0,
            x in proptest::collection::vec(-100.0f64..100.0, 4),
        ) {
            let mut rng = seeded(seed);
            let mut enc = ModalityEncoder::init(&mut rng, 0, 4, 6, 3);
            enc.var_head.weight = enc.var_head.weight.map(|w| w * scale);
            let g = enc.encode(&x).unwrap();
            prop_assert!(g.sigma().iter().all(|&s| s > 0.0));
        }
    }
}
