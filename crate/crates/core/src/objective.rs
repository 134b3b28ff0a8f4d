//! Loss terms of the training objective, written per user.
//!
//! `total = -(recon - kl_eps - beta * kl_z) + gamma1 * sup_a + gamma2 * sup_z`
//!
//! The batched training path in [`crate::model`] computes the same quantities
//! in vectorised form; the functions here are the reference definitions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sigmoid, CausalGraph, ElementwiseTransform, LatentBlocks};
use crate::model::{EncoderOutput, PriorParams};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl_eps: f64,
    pub kl_z: f64,
    pub sup_a: f64,
    pub sup_z: f64,
    pub total: f64,
}

/// Loss weights. `beta` scales only the z-prior KL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl LossWeights {
    pub fn new(beta: f64, gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(beta >= 0.0 && gamma1 >= 0.0 && gamma2 >= 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative (beta {beta}, gamma1 {gamma1}, gamma2 {gamma2})")));
        }
        Ok(Self { beta, gamma1, gamma2 })
    }
}

/// Combines the terms into the training objective.
pub fn total_loss(recon: f64, kl_eps: f64, kl_z: f64, sup_a: f64, sup_z: f64, w: LossWeights) -> LossBreakdown {
    LossBreakdown {
        recon,
        kl_eps,
        kl_z,
        sup_a,
        sup_z,
        total: -(recon - kl_eps - w.beta * kl_z) + w.gamma1 * sup_a + w.gamma2 * sup_z,
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Multinomial log-likelihood of the clicked items: `sum log softmax(logits)_i`.
pub fn recon_loglik(logits: &[f64], clicked: &[u32]) -> f64 {
    let lp = log_softmax(logits);
    clicked.iter().map(|&i| lp[i as usize]).sum()
}

/// Unit-variance Gaussian log-likelihood of the multi-hot vector, constants dropped.
pub fn recon_gaussian(logits: &[f64], clicked: &[u32]) -> f64 {
    let mut x = vec![0.0; logits.len()];
    for &i in clicked {
        x[i as usize] = 1.0;
    }
    -0.5 * logits.iter().zip(&x).map(|(l, x)| (x - l).powi(2)).sum::<f64>()
}

/// `KL(N(mu, sigma^2) || N(0, I))` in closed form.
pub fn kl_epsilon(enc: &EncoderOutput) -> f64 {
    enc.mu
        .iter()
        .zip(enc.log_sigma.iter())
        .map(|(&mu, &ls)| 0.5 * ((2.0 * ls).exp() + mu * mu - 1.0 - 2.0 * ls))
        .sum()
}

/// `log q(eps)` under the diagonal Gaussian posterior.
pub fn log_q_epsilon(eps: &LatentBlocks, enc: &EncoderOutput) -> f64 {
    eps.values
        .iter()
        .zip(enc.mu.iter().zip(enc.log_sigma.iter()))
        .map(|(&e, (&mu, &ls))| {
            let n = (e - mu) / ls.exp();
            -HALF_LN_2PI - ls - 0.5 * n * n
        })
        .sum()
}

/// `log |det dF/deps|` at `eps`: the linear SCM part has unit determinant, so
/// only `sum log g_i'(m)` over the pre-image `m = (I - A^T)^{-1} eps` remains.
pub fn log_det_jacobian(eps: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<f64> {
    let d = eps.d();
    let m = graph.solve(eps.as_row().view(), d)?;
    Ok(g.log_det_rows(m.view(), d)[0])
}

/// `log q(z) = log q(eps) - log |det J_F(eps)|` for `z = F(eps)`.
pub fn log_q_z(eps: &LatentBlocks, enc: &EncoderOutput, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<f64> {
    Ok(log_q_epsilon(eps, enc) - log_det_jacobian(eps, graph, g)?)
}

/// `log p(z | c)` under the factorized Gaussian prior.
pub fn log_prior_z(z: &LatentBlocks, prior: &PriorParams) -> f64 {
    z.values
        .iter()
        .zip(prior.lambda1.iter().zip(prior.lambda2.iter()))
        .map(|(&z, (&m, &s))| {
            let n = (z - m) / s;
            -HALF_LN_2PI - s.ln() - 0.5 * n * n
        })
        .sum()
}

/// Single-sample estimate `log q(z) - log p(z | c)`.
pub fn kl_z(z: &LatentBlocks, log_q: f64, prior: &PriorParams) -> Result<f64> {
    let v = log_q - log_prior_z(z, prior);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("kl_z density"))
    }
}

/// `|| c - sigmoid(A^T c) ||^2`.
pub fn sup_a(c: &[f64], a: &Array2<f64>) -> f64 {
    let k = c.len();
    (0..k)
        .map(|j| {
            let pre: f64 = (0..k).map(|i| a[[i, j]] * c[i]).sum();
            (c[j] - sigmoid(pre)).powi(2)
        })
        .sum()
}

/// `sum_i || g_i^{-1}(z_i) - A_i^T g^{-1}(z) ||^2`, evaluated through the
/// numerical inverse of `g`.
pub fn sup_z(z: &LatentBlocks, graph: &CausalGraph, g: &ElementwiseTransform) -> Result<f64> {
    let r = crate::graph::scm_residual(z, graph, g)?;
    Ok(r.iter().map(|v| v * v).sum())
}
