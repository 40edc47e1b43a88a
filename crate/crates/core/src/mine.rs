//! Prototype labels for unlabeled proposals.
//!
//! Affinity to every prototype is reduced to the best prototype per class,
//! multiplied element-wise with the detector scores, and the argmax class is
//! kept for proposals that are foreground, outside every sparse box and inside
//! the point range.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::bank::PrototypeBank;
use crate::config::MiningConfig;
use crate::error::{Error, Result};
use crate::geom::contains_point;
use crate::model::{PrototypeLabel, SceneRecord};
use crate::scalar::{argmax, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// Max class score reaches `alpha_pro`.
    pub foreground: Vec<bool>,
    /// Center lies in no sparse box.
    pub outside_sparse: Vec<bool>,
    /// Center lies in the point range.
    pub in_range: Vec<bool>,
}

impl Masks {
    pub fn keep(&self, i: usize) -> bool {
        self.foreground[i] && self.outside_sparse[i] && self.in_range[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult<T: Scalar = f64> {
    /// N×K, best prototype affinity per class.
    pub affinity_reduced: Array2<T>,
    /// N×K, scores times reduced affinity.
    pub propagation: Array2<T>,
    /// Argmax class of each propagation row.
    pub labels: Vec<usize>,
    pub kept: Vec<PrototypeLabel>,
    pub masks: Masks,
}

impl<T: Scalar> PropagationResult<T> {
    fn empty(n: usize, k: usize) -> Self {
        Self {
            affinity_reduced: Array2::zeros((n, k)),
            propagation: Array2::zeros((n, k)),
            labels: Vec::new(),
            kept: Vec::new(),
            masks: Masks {
                foreground: vec![false; n],
                outside_sparse: vec![false; n],
                in_range: vec![false; n],
            },
        }
    }
}

/// N×C feature matrix of a scene.
pub fn scene_features<T: Scalar>(scene: &SceneRecord<T>, dim: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((scene.proposals.len(), dim));
    for (i, (mut row, p)) in out.rows_mut().into_iter().zip(&scene.proposals).enumerate() {
        if p.feature.len() != dim {
            return Err(Error::dim(format!("proposal {i} feature"), dim, p.feature.len()));
        }
        row.iter_mut().zip(&p.feature).for_each(|(d, &s)| *d = s);
    }
    Ok(out)
}

/// N×K score matrix of a scene.
pub fn scene_scores<T: Scalar>(scene: &SceneRecord<T>, num_classes: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((scene.proposals.len(), num_classes));
    for (i, (mut row, p)) in out.rows_mut().into_iter().zip(&scene.proposals).enumerate() {
        if p.scores.len() != num_classes {
            return Err(Error::dim(format!("proposal {i} scores"), num_classes, p.scores.len()));
        }
        row.iter_mut().zip(&p.scores).for_each(|(d, &s)| *d = s);
    }
    Ok(out)
}

/// `A[i, k, o] = <f_i, p_{k,o}>`. Rejects a bank that has not finished warm-up.
pub fn affinity<T: Scalar>(
    features: ArrayView2<'_, T>,
    bank: &PrototypeBank<T>,
    cfg: &MiningConfig<T>,
) -> Result<Array3<T>> {
    if !bank.is_warmed_up(cfg) {
        return Err(Error::NotWarmedUp {
            iteration: bank.iteration,
            warmup: cfg.warmup_iters,
        });
    }
    let (k, o, c) = bank.prototypes.dim();
    if features.ncols() != c {
        return Err(Error::dim("feature dim vs. bank", c, features.ncols()));
    }
    let flat = bank
        .prototypes
        .view()
        .into_shape_with_order((k * o, c))
        .map_err(|e| Error::Invariant(e.to_string()))?;
    let a = features.dot(&flat.t());
    a.into_shape_with_order((features.nrows(), k, o))
        .map_err(|e| Error::Invariant(e.to_string()))
}

/// Max over the prototype axis.
pub fn reduce_affinity<T: Scalar>(a: ArrayView3<'_, T>) -> Array2<T> {
    a.map_axis(Axis(2), |lane| {
        lane.iter().copied().fold(T::neg_infinity(), T::max)
    })
}

/// Hadamard product of scores and reduced affinity, with the row argmax
/// (lowest class on ties).
pub fn propagate<T: Scalar>(
    scores: ArrayView2<'_, T>,
    reduced: ArrayView2<'_, T>,
) -> Result<(Array2<T>, Vec<usize>)> {
    if scores.dim() != reduced.dim() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: scores {:?} vs. affinity {:?}",
            scores.dim(),
            reduced.dim()
        )));
    }
    let w = &scores * &reduced;
    let labels = w
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()).unwrap_or(0))
        .collect();
    Ok((w, labels))
}

pub fn build_masks<T: Scalar>(
    scene: &SceneRecord<T>,
    scores: ArrayView2<'_, T>,
    cfg: &MiningConfig<T>,
) -> Masks {
    let foreground = scores
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(T::neg_infinity(), T::max) >= cfg.alpha_pro)
        .collect();
    let outside_sparse = scene
        .proposals
        .iter()
        .map(|p| !scene.sparse_labels.iter().any(|l| contains_point(&l.bbox, &p.center)))
        .collect();
    let in_range = scene.proposals.iter().map(|p| scene.in_range(&p.center)).collect();
    Masks {
        foreground,
        outside_sparse,
        in_range,
    }
}

/// Full mining pass over one scene. Before warm-up, returns an empty result
/// instead of an error.
pub fn mine_prototype_labels<T: Scalar>(
    scene: &SceneRecord<T>,
    bank: &PrototypeBank<T>,
    cfg: &MiningConfig<T>,
) -> Result<PropagationResult<T>> {
    mine_where(scene, bank, cfg, |_| true)
}

/// Like [`mine_prototype_labels`], keeping only proposals for which `allow`
/// also holds.
pub fn mine_where<T: Scalar>(
    scene: &SceneRecord<T>,
    bank: &PrototypeBank<T>,
    cfg: &MiningConfig<T>,
    allow: impl Fn(usize) -> bool,
) -> Result<PropagationResult<T>> {
    let n = scene.proposals.len();
    let k = bank.num_classes();
    if !bank.is_warmed_up(cfg) {
        return Ok(PropagationResult::empty(n, k));
    }
    let features = scene_features(scene, bank.feature_dim())?;
    let scores = scene_scores(scene, k)?;
    let a = affinity(features.view(), bank, cfg)?;
    let affinity_reduced = reduce_affinity(a.view());
    let (propagation, labels) = propagate(scores.view(), affinity_reduced.view())?;
    let masks = build_masks(scene, scores.view(), cfg);
    let kept = (0..n)
        .filter(|&i| masks.keep(i) && allow(i))
        .map(|i| PrototypeLabel {
            proposal_index: i,
            class_id: labels[i],
        })
        .collect();
    Ok(PropagationResult {
        affinity_reduced,
        propagation,
        labels,
        kept,
        masks,
    })
}
