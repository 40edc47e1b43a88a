//! Prototype-feature contrastive loss (Info-NCE) and prototype
//! classification focal loss, with analytic gradients.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::bank::PrototypeBank;
use crate::error::{Error, Result};
use crate::scalar::{argmax, dot, Scalar};

/// Focal loss probabilities are clamped to `[CLAMP, 1 - CLAMP]`.
pub const FOCAL_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T: Scalar, G> {
    pub value: T,
    pub grad: G,
}

/// `-log(exp(<a,p>/τ) / (exp(<a,p>/τ) + Σ_n exp(<a,n>/τ)))`, gradient with
/// respect to the anchor.
pub fn info_nce<T: Scalar>(
    anchor: &[T],
    positive: &[T],
    negatives: &[&[T]],
    temperature: T,
) -> Result<LossValue<T, Vec<T>>> {
    if !(temperature > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if negatives.is_empty() {
        return Err(Error::InvalidArgument("info_nce needs at least one negative".into()));
    }
    let c = anchor.len();
    if positive.len() != c {
        return Err(Error::dim("positive", c, positive.len()));
    }
    if let Some(n) = negatives.iter().find(|n| n.len() != c) {
        return Err(Error::dim("negative", c, n.len()));
    }

    let candidates: Vec<&[T]> = std::iter::once(positive).chain(negatives.iter().copied()).collect();
    let logits: Vec<T> = candidates.iter().map(|x| dot(anchor, x) / temperature).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let value = max + z.ln() - logits[0];

    // dL/da = (Σ_j softmax_j x_j - p) / τ
    let mut grad = vec![T::zero(); c];
    for (x, &e) in candidates.iter().zip(&exps) {
        let w = e / z;
        for (g, &xi) in grad.iter_mut().zip(x.iter()) {
            *g += w * xi;
        }
    }
    for (g, &pi) in grad.iter_mut().zip(positive) {
        *g = (*g - pi) / temperature;
    }
    Ok(LossValue { value, grad })
}

/// `-α (1 - p_t)^γ log p_t`, with `p_t = p` for a positive target and
/// `1 - p` otherwise. The same `α` weights both targets. Gradient is with
/// respect to `pred_prob` and is zero where the clamp is active.
pub fn focal_loss<T: Scalar>(pred_prob: T, target: bool, alpha: T, gamma: T) -> LossValue<T, T> {
    let lo = T::lit(FOCAL_CLAMP);
    let hi = T::one() - lo;
    let clamped = pred_prob < lo || pred_prob > hi;
    let p = pred_prob.max(lo).min(hi);
    let (pt, sign) = if target { (p, T::one()) } else { (T::one() - p, -T::one()) };
    let q = T::one() - pt;
    let log_pt = pt.ln();
    let value = -alpha * q.powf(gamma) * log_pt;

    let grad = if clamped {
        T::zero()
    } else {
        // d/dpt of -α q^γ log pt = α (γ q^(γ-1) log pt - q^γ / pt)
        let focal_term = if gamma == T::zero() {
            T::zero()
        } else {
            gamma * q.powf(gamma - T::one()) * log_pt
        };
        sign * alpha * (focal_term - q.powf(gamma) / pt)
    };
    LossValue { value, grad }
}

/// Mean Info-NCE over kept proposals. Row `e` of `features` carries label
/// `classes[e]`; its positive is the class prototype with the highest affinity
/// and every other prototype in the bank is a negative. Gradient is E×C.
/// An empty batch yields zero loss and an empty gradient.
pub fn prototype_contrastive_batch<T: Scalar>(
    features: ArrayView2<'_, T>,
    classes: &[usize],
    bank: &PrototypeBank<T>,
    temperature: T,
) -> Result<LossValue<T, Array2<T>>> {
    let (k, o, c) = bank.prototypes.dim();
    if features.nrows() != classes.len() {
        return Err(Error::dim("kept labels vs. feature rows", features.nrows(), classes.len()));
    }
    if features.ncols() != c {
        return Err(Error::dim("feature dim vs. bank", c, features.ncols()));
    }
    let mut grad = Array2::zeros(features.dim());
    if classes.is_empty() {
        return Ok(LossValue {
            value: T::zero(),
            grad,
        });
    }
    let protos: Vec<Vec<T>> = bank
        .prototypes
        .lanes(Axis(2))
        .into_iter()
        .map(|l| l.to_vec())
        .collect();
    let e_count = T::from_usize_lossy(classes.len());
    let mut total = T::zero();
    for (e, (row, &class_id)) in features.rows().into_iter().zip(classes).enumerate() {
        if class_id >= k {
            return Err(Error::InvalidArgument(format!("class_id {class_id} >= K = {k}")));
        }
        let anchor: Vec<T> = row.to_vec();
        let sims: Vec<T> = (0..o).map(|j| dot(&anchor, &protos[class_id * o + j])).collect();
        let best = class_id * o + argmax(&sims).unwrap_or(0);
        let negatives: Vec<&[T]> = protos
            .iter()
            .enumerate()
            .filter(|&(idx, _)| idx != best)
            .map(|(_, p)| p.as_slice())
            .collect();
        if negatives.is_empty() {
            return Err(Error::InvalidArgument(
                "contrastive loss needs more than one prototype in the bank".into(),
            ));
        }
        let loss = info_nce(&anchor, &protos[best], &negatives, temperature)?;
        total += loss.value;
        grad.row_mut(e)
            .assign(&ArrayView1::from(loss.grad.as_slice()).mapv(|g| g / e_count));
    }
    Ok(LossValue {
        value: total / e_count,
        grad,
    })
}
