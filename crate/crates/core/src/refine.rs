//! Turns raw detector predictions into pseudo labels and merges them with
//! sparse and prototype labels.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::bank::PrototypeBank;
use crate::config::{CollisionMetric, MiningConfig};
use crate::error::Result;
use crate::geom::{collision, contains_point, iou};
use crate::mine::mine_where;
use crate::model::{Box3D, ClassBox, LabelSet, PseudoLabel, SceneRecord};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Prediction<T: Scalar = f64> {
    pub class_id: usize,
    pub score: T,
    #[serde(rename = "box")]
    pub bbox: Box3D<T>,
}

impl<T: Scalar> From<Prediction<T>> for PseudoLabel<T> {
    fn from(p: Prediction<T>) -> Self {
        PseudoLabel {
            class_id: p.class_id,
            bbox: p.bbox,
            score: p.score,
        }
    }
}

/// One prediction per proposal: top class, its score and the regressed box.
pub fn predictions_from_proposals<T: Scalar>(scene: &SceneRecord<T>) -> Vec<Prediction<T>> {
    scene
        .proposals
        .iter()
        .map(|p| Prediction {
            class_id: p.top_class(),
            score: p.max_score(),
            bbox: p.bbox,
        })
        .collect()
}

/// Keeps predictions scoring at least `alpha_cls`.
pub fn score_filter<T: Scalar>(preds: &[Prediction<T>], alpha_cls: T) -> Vec<Prediction<T>> {
    preds.iter().filter(|p| p.score >= alpha_cls).copied().collect()
}

/// Class-agnostic greedy suppression. Visits predictions by descending score
/// (ties by input position) and keeps one when its IoU with every kept
/// prediction is below `alpha_iou`. Survivors keep their input order.
pub fn iou_filter<T: Scalar>(preds: &[Prediction<T>], alpha_iou: T) -> Vec<Prediction<T>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&j| iou(&preds[i].bbox, &preds[j].bbox) < alpha_iou) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| preds[i]).collect()
}

/// Drops predictions whose overlap with some sparse box exceeds `alpha_col`.
pub fn collision_filter<T: Scalar>(
    preds: &[Prediction<T>],
    sparse: &[ClassBox<T>],
    alpha_col: T,
    metric: CollisionMetric,
) -> Vec<Prediction<T>> {
    preds
        .iter()
        .filter(|p| !sparse.iter().any(|s| collision(&p.bbox, &s.bbox, metric) > alpha_col))
        .copied()
        .collect()
}

/// Score, then IoU, then collision filtering.
pub fn make_pseudo_labels<T: Scalar>(
    preds: &[Prediction<T>],
    scene: &SceneRecord<T>,
    cfg: &MiningConfig<T>,
) -> Vec<PseudoLabel<T>> {
    let scored = score_filter(preds, cfg.alpha_cls);
    let unique = iou_filter(&scored, cfg.alpha_iou);
    collision_filter(&unique, &scene.sparse_labels, cfg.alpha_col, cfg.collision_metric)
        .into_iter()
        .map(PseudoLabel::from)
        .collect()
}

/// Merges the three label families. Foreground proposals whose center is not
/// covered by any sparse or pseudo box (and lies in range) get prototype
/// labels; the prototype slot stays empty before warm-up.
pub fn cooperate<T: Scalar>(
    scene: &SceneRecord<T>,
    pseudo: Vec<PseudoLabel<T>>,
    bank: &PrototypeBank<T>,
    cfg: &MiningConfig<T>,
) -> Result<LabelSet<T>> {
    let covered: Vec<bool> = scene
        .proposals
        .iter()
        .map(|p| {
            scene.sparse_labels.iter().any(|l| contains_point(&l.bbox, &p.center))
                || pseudo.iter().any(|l| contains_point(&l.bbox, &p.center))
        })
        .collect();
    let mined = mine_where(scene, bank, cfg, |i| !covered[i])?;
    Ok(LabelSet {
        scene_id: scene.scene_id.clone(),
        sparse: scene.sparse_labels.clone(),
        pseudo,
        prototype: mined.kept,
    })
}
