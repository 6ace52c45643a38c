//! Training losses: per-output L1 reconstruction, total-variation
//! smoothness, and their weighted combination over all supervised outputs.

use crate::error::{Error, Result};
use crate::mcn::McnOutputs;
use crate::tensor::{Scalar, Tensor};

/// Weights of the combined loss; both default to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_s: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_r < 0.0 || self.lambda_s < 0.0 {
            return Err(Error::Parameter(format!(
                "loss weights must be nonnegative, got lambda_r={}, lambda_s={}",
                self.lambda_r, self.lambda_s
            )));
        }
        Ok(())
    }
}

/// Sum of mean-absolute errors of every supervised output against the
/// target: SGNs 2..N and the back-connected output. SGN-1's plain pass is
/// excluded whenever the back connection supplies its retrained stand-in.
pub fn reconstruction_loss<T: Scalar>(
    outputs: &McnOutputs<T>,
    target: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    for out in outputs.supervised() {
        let term = out.mean_abs_diff(target)?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.ok_or_else(|| Error::Contract("no supervised outputs".into()))
}

/// Sum of mean total variation over the supervised outputs.
pub fn smoothness_loss<T: Scalar>(outputs: &McnOutputs<T>) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    for out in outputs.supervised() {
        let term = out.tv_mean()?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.ok_or_else(|| Error::Contract("no supervised outputs".into()))
}

/// `lambda_r * reconstruction + lambda_s * smoothness`, averaged over the
/// batch (the mean reductions inside both terms carry the batch average).
pub fn multi_granulation_loss<T: Scalar>(
    outputs: &McnOutputs<T>,
    target: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    weights.validate()?;
    let r = reconstruction_loss(outputs, target)?.scale(weights.lambda_r);
    let s = smoothness_loss(outputs)?.scale(weights.lambda_s);
    r.add(&s)
}
