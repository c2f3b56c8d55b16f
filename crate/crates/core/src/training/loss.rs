use crate::error::{Error, Result};
use crate::numerics::{softplus, Scalar, Tape, Tensor, Var};

/// Mean binary cross-entropy of probabilities given as logits, in the
/// overflow-free form `softplus(z) - y·z`.
pub fn cross_entropy_from_logits(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Training(format!(
            "cross-entropy needs equal non-empty inputs, got {} logits and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
        .sum();
    Ok(total / logits.len() as f64)
}

/// `-[y ln p + (1 - y) ln(1 - p)]` for a single probability.
pub fn cross_entropy(probability: f64, label: u8) -> f64 {
    let p = probability.clamp(f64::MIN_POSITIVE, 1.0);
    let q = (1.0 - probability).clamp(f64::MIN_POSITIVE, 1.0);
    if label == 1 {
        -p.ln()
    } else {
        -q.ln()
    }
}

/// Cross-entropy of one or more logits recorded on the tape (mean).
pub fn cross_entropy_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[u8],
) -> Result<Var> {
    let targets: Vec<T> = labels
        .iter()
        .map(|&y| T::from_f64_lossy(f64::from(y)))
        .collect();
    Ok(tape.bce_with_logits(logits, &targets)?)
}

/// Masked MSE over a `[B, F]` prediction: per-row sum of
/// `m · (pred - target)²`, averaged over rows.
pub fn masked_mse_loss<T: Scalar>(
    tape: &mut Tape<T>,
    predictions: Var,
    targets: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Var> {
    let shape = tape.shape(predictions).to_vec();
    if targets.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(Error::Training(format!(
            "masked MSE shape mismatch: predictions {shape:?}, targets {:?}, mask {:?}",
            targets.shape(),
            mask.shape()
        )));
    }
    let rows = shape[0].max(1);
    let masked_pred = tape.mul_const(predictions, mask)?;
    let masked_target: Vec<T> = targets
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&t, &m)| t * m)
        .collect();
    let masked_target = tape.constant(Tensor::new(shape, masked_target)?)?;
    let diff = tape.sub(masked_pred, masked_target)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, T::one() / T::from_usize(rows).unwrap())?)
}

/// Plain-value masked MSE with the same normalization as [`masked_mse_loss`].
pub fn masked_mse(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    masks: &[Vec<f64>],
) -> Result<f64> {
    if predictions.len() != targets.len()
        || predictions.len() != masks.len()
        || predictions.is_empty()
    {
        return Err(Error::Training(
            "masked MSE needs aligned, non-empty batches".into(),
        ));
    }
    let mut total = 0.0;
    for ((p, t), m) in predictions.iter().zip(targets).zip(masks) {
        if p.len() != t.len() || p.len() != m.len() {
            return Err(Error::Training("masked MSE row length mismatch".into()));
        }
        total += p
            .iter()
            .zip(t)
            .zip(m)
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum::<f64>();
    }
    Ok(total / predictions.len() as f64)
}
