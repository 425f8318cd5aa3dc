//! Parameter containers shared by the encoders, message-passing layers
//! and prediction head.
//!
//! Containers are generic over the parameter type: `Tensor` for stored
//! values, [`Var`] once bound to a tape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::rng::normal_vec;
use crate::tensor::{Tensor, TensorError};

/// Which optimisation stage may update a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    /// Mean path: trained in both stages.
    Mean,
    /// Variance path: frozen during the first stage.
    Variance,
}

/// Visitor over named parameters.
pub type Visit<'a, P> = dyn FnMut(&str, ParamRole, &P) + 'a;
pub type VisitMut<'a, P> = dyn FnMut(&str, ParamRole, &mut P) + 'a;
pub type MapFn<'a, P, Q> = dyn FnMut(&str, ParamRole, &P) -> Q + 'a;

/// Affine map `y = x · Wᵀ + b` with `W` stored as `[out × in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: Option<P>,
}

impl<P> Linear<P> {
    pub fn visit(&self, name: &str, role: ParamRole, f: &mut Visit<'_, P>) {
        f(&format!("{name}.weight"), role, &self.weight);
        if let Some(b) = &self.bias {
            f(&format!("{name}.bias"), role, b);
        }
    }

    pub fn visit_mut(&mut self, name: &str, role: ParamRole, f: &mut VisitMut<'_, P>) {
        f(&format!("{name}.weight"), role, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{name}.bias"), role, b);
        }
    }

    pub fn map<Q>(&self, name: &str, role: ParamRole, f: &mut MapFn<'_, P, Q>) -> Linear<Q> {
        Linear {
            weight: f(&format!("{name}.weight"), role, &self.weight),
            bias: self
                .bias
                .as_ref()
                .map(|b| f(&format!("{name}.bias"), role, b)),
        }
    }
}

impl Linear<Tensor> {
    /// Weights drawn from `N(0, scale² / in)`, bias filled with `bias`.
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        out_dim: usize,
        in_dim: usize,
        scale: f64,
        bias: Option<f64>,
    ) -> Self {
        let std = scale / libm::sqrt(in_dim as f64);
        let w = normal_vec(rng, out_dim * in_dim)
            .into_iter()
            .map(|z| z * std)
            .collect();
        Self {
            weight: Tensor::new(out_dim, in_dim, w).expect("positive dims"),
            bias: bias.map(|b| Tensor::full(1, out_dim, b)),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(out_dim, in_dim),
            bias: bias.then(|| Tensor::zeros(1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Plain-loop evaluation on a single input vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim());
        (0..self.out_dim())
            .map(|o| {
                let dot: f64 = self.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum();
                dot + self.bias.as_ref().map_or(0.0, |b| b.data()[o])
            })
            .collect()
    }
}

impl Linear<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let y = tape.matmul_nt(x, self.weight)?;
        match self.bias {
            Some(b) => tape.add_bias(y, b),
            None => Ok(y),
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}
