use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, normalize_in_place, Scalar};

/// Oriented box: center, full extents and yaw about the vertical axis.
/// Axis-aligned boxes have `yaw == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[T; 7]", try_from = "[T; 7]")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Box3D<T: Scalar = f64> {
    pub center: [T; 3],
    pub size: [T; 3],
    pub yaw: T,
}

impl<T: Scalar> Box3D<T> {
    pub fn new(center: [T; 3], size: [T; 3], yaw: T) -> Result<Self> {
        if center.iter().any(|c| !c.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite center or yaw".into()));
        }
        if size.iter().any(|&d| !(d > T::zero() && d.is_finite())) {
            return Err(Error::InvalidBox(format!(
                "extents must be positive and finite, got {:?}",
                size
            )));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn axis_aligned(center: [T; 3], size: [T; 3]) -> Result<Self> {
        Self::new(center, size, T::zero())
    }

    pub fn volume(&self) -> T {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn z_range(&self) -> (T, T) {
        let h = self.size[2] * T::lit(0.5);
        (self.center[2] - h, self.center[2] + h)
    }

    /// Ground-plane corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hx = self.size[0] * T::lit(0.5);
        let hy = self.size[1] * T::lit(0.5);
        let local = [[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]];
        local.map(|[x, y]| {
            [
                self.center[0] + c * x - s * y,
                self.center[1] + s * x + c * y,
            ]
        })
    }

    pub fn to_array(&self) -> [T; 7] {
        let [cx, cy, cz] = self.center;
        let [dx, dy, dz] = self.size;
        [cx, cy, cz, dx, dy, dz, self.yaw]
    }
}

impl<T: Scalar> From<Box3D<T>> for [T; 7] {
    fn from(b: Box3D<T>) -> Self {
        b.to_array()
    }
}

impl<T: Scalar> TryFrom<[T; 7]> for Box3D<T> {
    type Error = Error;

    fn try_from(a: [T; 7]) -> Result<Self> {
        Box3D::new([a[0], a[1], a[2]], [a[3], a[4], a[5]], a[6])
    }
}

/// Wraps an angle into [-π, π]. Angles already in range are returned as is.
pub fn wrap_angle<T: Scalar>(yaw: T) -> T {
    let pi = T::lit(PI);
    if yaw >= -pi && yaw <= pi {
        return yaw;
    }
    let two_pi = T::lit(2.0 * PI);
    let mut w = yaw - two_pi * (yaw / two_pi).round();
    if w > pi {
        w -= two_pi;
    } else if w < -pi {
        w += two_pi;
    }
    w
}

/// One detector proposal: projected feature, per-class scores, regressed box
/// and the location it was predicted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T: Scalar = f64> {
    pub feature: Vec<T>,
    pub scores: Vec<T>,
    pub bbox: Box3D<T>,
    pub center: [T; 3],
}

impl<T: Scalar> Proposal<T> {
    /// Class with the highest score, lowest index on ties.
    pub fn top_class(&self) -> usize {
        argmax(&self.scores).unwrap_or(0)
    }

    pub fn max_score(&self) -> T {
        self.scores
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ClassBox<T: Scalar = f64> {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: Box3D<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct PseudoLabel<T: Scalar = f64> {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: Box3D<T>,
    pub score: T,
}

/// Category-only label attached to a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrototypeLabel {
    pub proposal_index: usize,
    pub class_id: usize,
}

/// One scene as exported by a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord<T: Scalar = f64> {
    pub scene_id: String,
    pub proposals: Vec<Proposal<T>>,
    pub sparse_labels: Vec<ClassBox<T>>,
    pub gt_labels: Option<Vec<ClassBox<T>>>,
    /// x_min, y_min, z_min, x_max, y_max, z_max
    pub point_range: [T; 6],
}

impl<T: Scalar> SceneRecord<T> {
    /// Closed-interval test against `point_range`.
    pub fn in_range(&self, p: &[T; 3]) -> bool {
        let r = &self.point_range;
        (0..3).all(|a| p[a] >= r[a] && p[a] <= r[a + 3])
    }

    /// Checks dimensions against `K` classes and `C` feature dims, and the
    /// scene-level invariants.
    pub fn validate(&self, num_classes: usize, feature_dim: usize) -> Result<()> {
        let r = &self.point_range;
        if (0..3).any(|a| !(r[a] < r[a + 3])) {
            return Err(Error::InvalidArgument(format!(
                "scene {}: point_range min must be below max on every axis",
                self.scene_id
            )));
        }
        for (i, p) in self.proposals.iter().enumerate() {
            if p.feature.len() != feature_dim {
                return Err(Error::dim(
                    format!("scene {} proposal {i} feature", self.scene_id),
                    feature_dim,
                    p.feature.len(),
                ));
            }
            if p.scores.len() != num_classes {
                return Err(Error::dim(
                    format!("scene {} proposal {i} scores", self.scene_id),
                    num_classes,
                    p.scores.len(),
                ));
            }
            if p.scores.iter().any(|&s| !(s >= T::zero() && s <= T::one())) {
                return Err(Error::InvalidArgument(format!(
                    "scene {} proposal {i}: scores must lie in [0, 1]",
                    self.scene_id
                )));
            }
            if p.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "scene {} proposal {i}: non-finite feature",
                    self.scene_id
                )));
            }
        }
        let all = self
            .sparse_labels
            .iter()
            .chain(self.gt_labels.iter().flatten());
        for l in all {
            if l.class_id >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "scene {}: class_id {} >= K = {num_classes}",
                    self.scene_id, l.class_id
                )));
            }
        }
        if let Some(gt) = &self.gt_labels {
            if let Some(missing) = self.sparse_labels.iter().find(|s| !gt.contains(s)) {
                return Err(Error::InvalidArgument(format!(
                    "scene {}: sparse label {:?} not among gt_labels",
                    self.scene_id, missing
                )));
            }
        }
        Ok(())
    }
}

/// Scales every proposal feature to unit L2 norm. Idempotent.
pub fn normalize_features<T: Scalar>(mut scene: SceneRecord<T>) -> Result<SceneRecord<T>> {
    for (index, p) in scene.proposals.iter_mut().enumerate() {
        if !normalize_in_place(&mut p.feature) {
            return Err(Error::ZeroNormFeature { index });
        }
    }
    Ok(scene)
}

/// Sparse, pseudo and prototype labels for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet<T: Scalar = f64> {
    pub scene_id: String,
    pub sparse: Vec<ClassBox<T>>,
    pub pseudo: Vec<PseudoLabel<T>>,
    pub prototype: Vec<PrototypeLabel>,
}
