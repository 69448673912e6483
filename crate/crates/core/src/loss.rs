//! Deep-supervision objective over the four lateral predictions.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight of lateral prediction `i`: `2^(i-4)` for the three shallow
/// layers, 1 for the deepest.
pub fn lateral_weight(i: usize) -> f64 {
    if i < 3 {
        2f64.powi(i as i32 - 4)
    } else {
        1.0
    }
}

pub fn lateral_weights() -> [f64; 4] {
    [0, 1, 2, 3].map(lateral_weight)
}

/// Rejects masks with values other than exactly 0 or 1.
pub fn ensure_binary<T: Scalar>(mask: &Tensor<T>) -> Result<()> {
    match mask.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(v) => Err(Error::arg(
            "total_loss",
            format!("ground truth contains non-binary value {v}"),
        )),
        None => Ok(()),
    }
}

/// Weighted sum and the four unweighted per-layer terms.
pub struct LossTerms {
    pub total: Var,
    pub per_layer: [Var; 4],
}

/// `Σ_i w_i · bce(P_i, G)` for predictions already at the mask resolution.
pub fn total_loss_terms<T: Scalar>(
    g: &mut Graph<T>,
    predictions: &[Var],
    ground_truth: &Tensor<T>,
) -> Result<LossTerms> {
    if predictions.len() != 4 {
        return Err(Error::arg(
            "total_loss",
            format!("expected 4 lateral predictions, got {}", predictions.len()),
        ));
    }
    ensure_binary(ground_truth)?;
    let mut per_layer = [predictions[0]; 4];
    let mut total: Option<Var> = None;
    for (i, &p) in predictions.iter().enumerate() {
        let term = g.bce(p, ground_truth)?;
        per_layer[i] = term;
        let weighted = g.scale(term, T::lit(lateral_weight(i)));
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(LossTerms {
        total: total.expect("four terms"),
        per_layer,
    })
}

pub fn total_loss<T: Scalar>(g: &mut Graph<T>, predictions: &[Var], ground_truth: &Tensor<T>) -> Result<Var> {
    Ok(total_loss_terms(g, predictions, ground_truth)?.total)
}
