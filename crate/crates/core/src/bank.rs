//! Class-aware prototype bank.
//!
//! Each class owns `O` unit-norm prototypes. For every scene, the features of
//! true-positive proposals inside sparse boxes of a class are matched to that
//! class's prototypes with Sinkhorn-Knopp, and each prototype that received
//! features moves toward their mean with momentum `mu`.

use std::fmt::Write as _;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::MiningConfig;
use crate::error::{Error, Result};
use crate::geom::contains_point;
use crate::model::SceneRecord;
use crate::ot::{assign_rows, sinkhorn_uniform};
use crate::scalar::{normalize_in_place, Scalar};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<T: Scalar = f64> {
    /// K×O×C
    pub prototypes: Array3<T>,
    /// Number of processed scenes.
    pub iteration: u64,
    pub mu: T,
    pub class_update_counts: Vec<u64>,
}

/// What one class update did.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassUpdate<T: Scalar = f64> {
    pub class_id: usize,
    /// Prototype index each feature was assigned to.
    pub assignments: Vec<usize>,
    /// Marginal residual of the truncated Sinkhorn plan.
    pub residual: T,
}

pub fn init_bank<T: Scalar>(cfg: &MiningConfig<T>) -> PrototypeBank<T> {
    let (k, o, c) = (cfg.num_classes, cfg.protos_per_class, cfg.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut prototypes = Array3::from_shape_simple_fn((k, o, c), || loop {
        let x: f64 = normal.sample(&mut rng);
        if x.abs() <= 2.0 * INIT_STD {
            break T::lit(x);
        }
    });
    for mut lane in prototypes.lanes_mut(Axis(2)) {
        let v = lane.as_slice_mut().expect("contiguous prototype");
        if !normalize_in_place(v) {
            // All-zero draw is not reachable in practice; fall back to a basis vector.
            v.iter_mut().for_each(|x| *x = T::zero());
            v[0] = T::one();
        }
    }
    PrototypeBank {
        prototypes,
        iteration: 0,
        mu: cfg.mu,
        class_update_counts: vec![0; k],
    }
}

/// Features of proposals that fall inside a sparse box of `class_id` and
/// whose own top-scoring class is `class_id`. Rows follow proposal order.
pub fn collect_class_features<T: Scalar>(scene: &SceneRecord<T>, class_id: usize) -> Array2<T> {
    let boxes: Vec<_> = scene
        .sparse_labels
        .iter()
        .filter(|l| l.class_id == class_id)
        .collect();
    let dim = scene.proposals.first().map_or(0, |p| p.feature.len());
    let rows: Vec<&[T]> = if boxes.is_empty() {
        Vec::new()
    } else {
        scene
            .proposals
            .iter()
            .filter(|p| {
                p.top_class() == class_id && boxes.iter().any(|l| contains_point(&l.bbox, &p.center))
            })
            .map(|p| p.feature.as_slice())
            .collect()
    };
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView1::from(src));
    }
    out
}

impl<T: Scalar> PrototypeBank<T> {
    pub fn num_classes(&self) -> usize {
        self.prototypes.dim().0
    }

    pub fn protos_per_class(&self) -> usize {
        self.prototypes.dim().1
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.dim().2
    }

    pub fn class_prototypes(&self, class_id: usize) -> ArrayView2<'_, T> {
        self.prototypes.index_axis(Axis(0), class_id)
    }

    pub fn is_warmed_up(&self, cfg: &MiningConfig<T>) -> bool {
        self.iteration >= cfg.warmup_iters
    }

    /// Matches `features` (M×C, unit rows) to the class's prototypes and
    /// applies the momentum update to every prototype that received at least
    /// one feature.
    pub fn update_class(
        &mut self,
        class_id: usize,
        features: ArrayView2<'_, T>,
        cfg: &MiningConfig<T>,
    ) -> Result<ClassUpdate<T>> {
        let (k, o, c) = self.prototypes.dim();
        if class_id >= k {
            return Err(Error::InvalidArgument(format!("class_id {class_id} >= K = {k}")));
        }
        if features.ncols() != c {
            return Err(Error::dim("feature dim vs. bank", c, features.ncols()));
        }
        if features.nrows() == 0 {
            return Err(Error::InvalidArgument("update_class needs at least one feature".into()));
        }
        let similarity = features.dot(&self.class_prototypes(class_id).t());
        let plan = sinkhorn_uniform(similarity.view(), cfg.kappa, cfg.sinkhorn_steps)?;
        let assignments = assign_rows(&plan);

        let mut sums = Array2::<T>::zeros((o, c));
        let mut counts = vec![0usize; o];
        for (row, &proto) in features.rows().into_iter().zip(&assignments) {
            let mut acc = sums.row_mut(proto);
            acc += &row;
            counts[proto] += 1;
        }
        let mu = self.mu;
        let mut class_protos = self.prototypes.index_axis_mut(Axis(0), class_id);
        for (i, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let mean = sums.row(i).mapv(|s| s / T::from_usize_lossy(n));
            let mut p = class_protos.row_mut(i);
            let mut updated: Vec<T> = p
                .iter()
                .zip(mean.iter())
                .map(|(&old, &m)| mu * old + (T::one() - mu) * m)
                .collect();
            if !normalize_in_place(&mut updated) {
                updated = mean.to_vec();
                if !normalize_in_place(&mut updated) {
                    return Err(Error::Invariant(format!(
                        "class {class_id} prototype {i}: mean of unit features vanished"
                    )));
                }
            }
            p.assign(&ArrayView1::from(updated.as_slice()));
        }
        self.class_update_counts[class_id] += 1;
        Ok(ClassUpdate {
            class_id,
            assignments,
            residual: plan.converged_residual,
        })
    }

    /// One clustering pass over a normalized scene. The iteration counter
    /// advances by exactly one.
    pub fn process_scene(
        &mut self,
        scene: &SceneRecord<T>,
        cfg: &MiningConfig<T>,
    ) -> Result<Vec<ClassUpdate<T>>> {
        let mut updates = Vec::new();
        for class_id in 0..self.num_classes() {
            let features = collect_class_features(scene, class_id);
            if features.nrows() == 0 {
                continue;
            }
            let update = self
                .update_class(class_id, features.view(), cfg)
                .map_err(|e| Error::InClass {
                    class_id,
                    source: Box::new(e),
                })?;
            updates.push(update);
        }
        self.iteration += 1;
        Ok(updates)
    }

    /// `PROTOBANK v1` text: a header line, then K·O lines of C floats.
    pub fn to_text(&self) -> String {
        let (k, o, c) = self.prototypes.dim();
        let mut out = format!(
            "PROTOBANK v1 K={k} O={o} C={c} iter={} mu={}\n",
            self.iteration, self.mu
        );
        for lane in self.prototypes.lanes(Axis(2)) {
            let mut first = true;
            for v in lane.iter() {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("PROTOBANK") || parts.next() != Some("v1") {
            return Err(parse_err(1, "expected 'PROTOBANK v1' header".into()));
        }
        let mut field = |name: &str| -> Result<&str> {
            let tok = parts
                .next()
                .ok_or_else(|| parse_err(1, format!("missing {name}=")))?;
            tok.strip_prefix(name)
                .and_then(|t| t.strip_prefix('='))
                .ok_or_else(|| parse_err(1, format!("expected {name}=, got '{tok}'")))
        };
        let int = |s: &str, name: &str| {
            s.parse::<u64>()
                .map_err(|_| parse_err(1, format!("bad {name} '{s}'")))
        };
        let k = int(field("K")?, "K")? as usize;
        let o = int(field("O")?, "O")? as usize;
        let c = int(field("C")?, "C")? as usize;
        let iteration = int(field("iter")?, "iter")?;
        let mu_s = field("mu")?;
        let mu = mu_s
            .parse::<f64>()
            .ok()
            .and_then(T::from_f64)
            .ok_or_else(|| parse_err(1, format!("bad mu '{mu_s}'")))?;

        let mut values = Vec::with_capacity(k * o * c);
        let mut rows = 0;
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let before = values.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .ok()
                    .and_then(T::from_f64)
                    .ok_or_else(|| parse_err(lineno, format!("bad float '{tok}'")))?;
                values.push(v);
            }
            if values.len() - before != c {
                return Err(parse_err(
                    lineno,
                    format!("expected {c} values, got {}", values.len() - before),
                ));
            }
        }
        if rows != k * o {
            return Err(parse_err(0, format!("expected {} prototype rows, got {rows}", k * o)));
        }
        let prototypes = Array3::from_shape_vec((k, o, c), values)
            .map_err(|e| Error::Invariant(e.to_string()))?;
        Ok(PrototypeBank {
            prototypes,
            iteration,
            mu,
            class_update_counts: vec![0; k],
        })
    }
}
