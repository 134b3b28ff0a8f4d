//! Central finite-difference check of the analytic loss gradient.

use ndarray::Array2;
use serde::Serialize;

use crate::error::Result;
use crate::model::{BatchInput, CadVae};
use crate::objective::LossWeights;

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`, 0 when both vanish.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares the analytic gradient of the total loss with central differences
/// of step `step`, group by group. Adjacency entries outside the mask are not
/// free parameters and are skipped.
pub fn check_gradients(
    model: &CadVae,
    batch: &BatchInput,
    clicked: &[&[u32]],
    noise: &Array2<f64>,
    weights: LossWeights,
    step: f64,
) -> Result<Vec<GroupCheck>> {
    let (_, analytic) = model.loss_and_grad(batch, clicked, noise, weights)?;
    let mask = model.graph().dag().as_mask();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for group in model.layout().groups() {
        let is_adjacency = group.name == "causal.weights";
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (local, idx) in group.range().enumerate() {
            if is_adjacency && mask.as_slice().expect("standard layout")[local] == 0.0 {
                continue;
            }
            let orig = probe.parameters()[idx];
            probe.parameters_mut()[idx] = orig + step;
            let plus = probe.loss(batch, clicked, noise, weights)?.total;
            probe.parameters_mut()[idx] = orig - step;
            let minus = probe.loss(batch, clicked, noise, weights)?.total;
            probe.parameters_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            diff2 += (analytic[idx] - numeric).powi(2);
            a2 += analytic[idx].powi(2);
            n2 += numeric.powi(2);
        }
        let denom = a2.sqrt().max(n2.sqrt());
        out.push(GroupCheck {
            name: group.name.clone(),
            rel_error: if denom < 1e-12 { 0.0 } else { diff2.sqrt() / denom },
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
        });
    }
    Ok(out)
}
