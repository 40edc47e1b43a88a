//! Synthetic box worlds with an oracle "detector".
//!
//! Each class owns a feature direction; the directions are mutually
//! orthogonal unit vectors. Every object spawns several proposals whose
//! features are its class direction plus isotropic noise and whose regressed
//! boxes and scores degrade with the configured noise levels:
//!
//! - `score_noise` sets the chance that the detector ranks a wrong class
//!   first for an object (features stay truthful) and jitters scores.
//! - `box_noise` sets the chance that all of an object's boxes are shifted
//!   off the object, and scales per-proposal box jitter.
//! - `spill` is the fraction of proposals located just outside their box.
//!
//! Scores follow the box quality: `conf · (0.6 + 0.4 · IoU)` plus jitter.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geom::iou;
use crate::io::Corpus;
use crate::model::{Box3D, ClassBox, Proposal, SceneRecord};
use crate::scalar::{normalize_in_place, Scalar};

const CELL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_scenes: usize,
    pub objects_per_scene: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub proposals_per_object: usize,
    pub background_proposals: usize,
    /// Norm of the isotropic feature perturbation.
    pub feature_noise: f64,
    pub score_noise: f64,
    pub box_noise: f64,
    pub spill: f64,
    /// Random yaw for every object instead of axis-aligned boxes.
    pub rotated: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// A corpus with every noise knob set from one level in [0, 1].
    pub fn with_noise(num_scenes: usize, objects_per_scene: usize, num_classes: usize, feature_dim: usize, noise: f64, seed: u64) -> Self {
        Self {
            num_scenes,
            objects_per_scene,
            num_classes,
            feature_dim,
            proposals_per_object: 8,
            background_proposals: 8,
            feature_noise: noise,
            score_noise: noise,
            box_noise: noise,
            spill: 0.4,
            rotated: false,
            seed,
        }
    }

    /// The mid-noise corpus used by the acceptance harness: 100 scenes of 12
    /// objects over 4 classes.
    pub fn acceptance(seed: u64) -> Self {
        Self::with_noise(100, 12, 4, 16, 0.5, seed)
    }

    fn confusion_prob(&self) -> f64 {
        0.3 * self.score_noise
    }

    fn bad_box_prob(&self) -> f64 {
        0.3 * self.box_noise
    }
}

/// Mutually orthogonal unit directions, one per class (Gram-Schmidt on
/// Gaussian draws).
pub fn class_directions(num_classes: usize, dim: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    if dim < num_classes {
        return Err(Error::InvalidArgument(format!(
            "feature_dim C = {dim} must be at least K = {num_classes} for orthogonal class directions"
        )));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while dirs.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for d in &dirs {
            let proj: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(d).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            v.iter_mut().for_each(|x| *x /= norm);
            dirs.push(v);
        }
    }
    Ok(dirs)
}

fn to_t<T: Scalar, const N: usize>(a: [f64; N]) -> [T; N] {
    a.map(T::lit)
}

fn noisy_direction(dir: &[f64], noise: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dim = dir.len() as f64;
    let mut v: Vec<f64> = dir
        .iter()
        .map(|&d| d + noise * rng.sample::<f64, _>(StandardNormal) / dim.sqrt())
        .collect();
    if !normalize_in_place(&mut v) {
        v = dir.to_vec();
    }
    v
}

/// Generates the corpus. Full ground truth is attached; sparse labels are
/// left empty for [`crate::io::sparsify::sparsify`] to fill.
pub fn synth_corpus<T: Scalar>(spec: &SynthSpec) -> Result<Corpus<T>> {
    if spec.num_classes == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = class_directions(spec.num_classes, spec.feature_dim, &mut rng)?;
    let mut next_class = 0usize;
    let scenes = (0..spec.num_scenes)
        .map(|s| {
            let classes: Vec<usize> = (0..spec.objects_per_scene)
                .map(|_| {
                    let c = next_class;
                    next_class = (next_class + 1) % spec.num_classes;
                    c
                })
                .collect();
            synth_scene(spec, &format!("scene_{s:04}"), &classes, &dirs, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        class_names: (0..spec.num_classes).map(|k| format!("class_{k}")).collect(),
        feature_dim: spec.feature_dim,
        scenes,
    })
}

fn synth_scene<T: Scalar>(
    spec: &SynthSpec,
    scene_id: &str,
    classes: &[usize],
    dirs: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<SceneRecord<T>> {
    let n = classes.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let point_range = [0.0, 0.0, -0.5, cols as f64 * CELL, rows as f64 * CELL, 3.0];
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    cells.shuffle(rng);

    let mut gt = Vec::with_capacity(classes.len());
    let mut proposals = Vec::new();
    for (obj, &class_id) in classes.iter().enumerate() {
        let cell = cells[obj];
        let size = [
            rng.random_range(0.6..2.0),
            rng.random_range(0.6..2.0),
            rng.random_range(0.4..1.6),
        ];
        let center = [
            (cell % cols) as f64 * CELL + CELL / 2.0 + rng.random_range(-0.5..0.5),
            (cell / cols) as f64 * CELL + CELL / 2.0 + rng.random_range(-0.5..0.5),
            size[2] / 2.0,
        ];
        let yaw = if spec.rotated { rng.random_range(-PI..PI) } else { 0.0 };
        let gt_box = Box3D::new(center, size, yaw)?;
        gt.push(ClassBox {
            class_id,
            bbox: Box3D::new(to_t(center), to_t(size), T::lit(yaw))?,
        });

        let conf: f64 = rng.random_range(0.1..0.95);
        let predicted = if spec.num_classes > 1 && rng.random_bool(spec.confusion_prob()) {
            (class_id + rng.random_range(1..spec.num_classes)) % spec.num_classes
        } else {
            class_id
        };
        let shift = if rng.random_bool(spec.bad_box_prob()) {
            let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [
                sx * rng.random_range(0.6..1.0) * size[0],
                sy * rng.random_range(0.6..1.0) * size[1],
            ]
        } else {
            [0.0, 0.0]
        };
        let (ys, yc) = yaw.sin_cos();
        for _ in 0..spec.proposals_per_object {
            let mut local = [
                rng.random_range(-0.5..0.5) * size[0],
                rng.random_range(-0.5..0.5) * size[1],
                rng.random_range(-0.5..0.5) * size[2],
            ];
            if rng.random_bool(spec.spill) {
                let axis = rng.random_range(0..2);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                local[axis] = sign * rng.random_range(0.55..0.8) * size[axis];
            }
            let pcenter = [
                center[0] + yc * local[0] - ys * local[1],
                center[1] + ys * local[0] + yc * local[1],
                center[2] + local[2],
            ];
            let jitter = 0.02 + 0.04 * spec.box_noise;
            let bcenter = [
                center[0] + shift[0] + jitter * size[0] * rng.sample::<f64, _>(StandardNormal),
                center[1] + shift[1] + jitter * size[1] * rng.sample::<f64, _>(StandardNormal),
                center[2] + jitter * size[2] * rng.sample::<f64, _>(StandardNormal),
            ];
            let bsize = size.map(|d| d * (jitter * rng.sample::<f64, _>(StandardNormal)).exp());
            let pbox = Box3D::new(bcenter, bsize, yaw)?;
            let quality = iou(&pbox, &gt_box);

            let jitter_s = 0.05 * spec.score_noise;
            let mut scores: Vec<f64> = (0..spec.num_classes)
                .map(|_| rng.random_range(0.0..1.0) * 0.1 * spec.score_noise)
                .collect();
            let top = (conf * (0.6 + 0.4 * quality) + jitter_s * rng.sample::<f64, _>(StandardNormal)).clamp(0.01, 1.0);
            scores[predicted] = top;
            if predicted != class_id {
                scores[class_id] = top * rng.random_range(0.3..0.7);
            }
            let feature = noisy_direction(&dirs[class_id], spec.feature_noise, rng);
            proposals.push(Proposal {
                feature: feature.into_iter().map(T::lit).collect(),
                scores: scores.into_iter().map(T::lit).collect(),
                bbox: Box3D::new(to_t(pbox.center), to_t(pbox.size), T::lit(yaw))?,
                center: to_t(pcenter),
            });
        }
    }

    let bg_ceiling = 0.1 + 0.15 * spec.score_noise;
    for _ in 0..spec.background_proposals {
        let pcenter = [
            rng.random_range(-0.05..1.05) * point_range[3],
            rng.random_range(-0.05..1.05) * point_range[4],
            rng.random_range(0.0..1.0),
        ];
        let mut feature: Vec<f64> = (0..spec.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        if !normalize_in_place(&mut feature) {
            feature = dirs[0].clone();
        }
        let scores: Vec<T> = (0..spec.num_classes)
            .map(|_| T::lit(rng.random_range(0.0..1.0) * bg_ceiling))
            .collect();
        let bsize = [rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)];
        proposals.push(Proposal {
            feature: feature.into_iter().map(T::lit).collect(),
            scores,
            bbox: Box3D::axis_aligned(to_t(pcenter), to_t(bsize))?,
            center: to_t(pcenter),
        });
    }
    proposals.shuffle(rng);

    Ok(SceneRecord {
        scene_id: scene_id.to_string(),
        proposals,
        sparse_labels: Vec::new(),
        gt_labels: Some(gt),
        point_range: to_t(point_range),
    })
}
