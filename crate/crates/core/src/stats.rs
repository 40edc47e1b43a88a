//! Precision and mean average recall (mAR) of mined labels against full
//! ground truth.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{contains_point, iou};
use crate::model::{Box3D, ClassBox, LabelSet, SceneRecord};
use crate::scalar::Scalar;

pub const DEFAULT_IOU_THRESH: f64 = 0.25;

/// A non-empty subset of the label families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Families {
    pub sparse: bool,
    pub pseudo: bool,
    pub prototype: bool,
}

impl Families {
    pub const SPARSE: Self = Self::new(true, false, false);
    pub const SPARSE_PROTOTYPE: Self = Self::new(true, false, true);
    pub const SPARSE_PSEUDO: Self = Self::new(true, true, false);
    pub const ALL: Self = Self::new(true, true, true);

    /// Rows of the recall table, in display order.
    pub const TABLE_ROWS: [Self; 4] = [
        Self::SPARSE,
        Self::SPARSE_PROTOTYPE,
        Self::SPARSE_PSEUDO,
        Self::ALL,
    ];

    pub const fn new(sparse: bool, pseudo: bool, prototype: bool) -> Self {
        Self {
            sparse,
            pseudo,
            prototype,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.sparse || self.pseudo || self.prototype)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        (!self.sparse || other.sparse)
            && (!self.pseudo || other.pseudo)
            && (!self.prototype || other.prototype)
    }
}

impl fmt::Display for Families {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.sparse, "sparse"),
            (self.pseudo, "pseudo"),
            (self.prototype, "prototype"),
        ]
        .into_iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| n)
        .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for Families {
    type Err = Error;

    /// `sparse+pseudo`, `sparse,prototype` or `all`.
    fn from_str(s: &str) -> Result<Self> {
        let mut fam = Families::new(false, false, false);
        for tok in s.split(['+', ',']).map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "sparse" => fam.sparse = true,
                "pseudo" => fam.pseudo = true,
                "prototype" => fam.prototype = true,
                "all" => fam = Families::ALL,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown label family '{other}'")))
                }
            }
        }
        if fam.is_empty() {
            return Err(Error::InvalidArgument("families set is empty".into()));
        }
        Ok(fam)
    }
}

/// Hits over totals per class. Merges by addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub hits: Vec<usize>,
    pub totals: Vec<usize>,
}

impl Tally {
    pub fn new(num_classes: usize) -> Self {
        Self {
            hits: vec![0; num_classes],
            totals: vec![0; num_classes],
        }
    }

    pub fn merge(mut self, other: &Tally) -> Tally {
        for (a, b) in self.hits.iter_mut().zip(&other.hits) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self
    }

    pub fn rates(&self) -> ClassRates {
        let per_class: Vec<Option<f64>> = self
            .hits
            .iter()
            .zip(&self.totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        ClassRates { per_class, mean }
    }
}

/// Per-class rate; `None` where the denominator is zero. The mean skips
/// undefined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRates {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn gt_of<'a, T: Scalar>(scene: &'a SceneRecord<T>) -> Result<&'a [ClassBox<T>]> {
    scene
        .gt_labels
        .as_deref()
        .ok_or_else(|| Error::MissingGroundTruth(scene.scene_id.clone()))
}

/// Greedy one-to-one matching by descending IoU. Returns the number of
/// predictions matched to a ground truth box with IoU >= `thresh`.
pub fn greedy_match_count<T: Scalar>(preds: &[Box3D<T>], gts: &[Box3D<T>], thresh: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(p, g).to_f64_lossy();
            if v >= thresh {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut n = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            n += 1;
        }
    }
    n
}

/// Pseudo-label precision tally for one scene.
pub fn pseudo_precision_tally<T: Scalar>(
    scene: &SceneRecord<T>,
    labels: &LabelSet<T>,
    num_classes: usize,
    iou_thresh: f64,
) -> Result<Tally> {
    let gt = gt_of(scene)?;
    let mut t = Tally::new(num_classes);
    for k in 0..num_classes {
        let preds: Vec<Box3D<T>> = labels.pseudo.iter().filter(|l| l.class_id == k).map(|l| l.bbox).collect();
        if preds.is_empty() {
            continue;
        }
        let gts: Vec<Box3D<T>> = gt.iter().filter(|g| g.class_id == k).map(|g| g.bbox).collect();
        t.totals[k] += preds.len();
        t.hits[k] += greedy_match_count(&preds, &gts, iou_thresh);
    }
    Ok(t)
}

/// Prototype-label precision tally for one scene: a label is correct when its
/// proposal center lies inside a ground truth box of the same class.
pub fn prototype_precision_tally<T: Scalar>(
    scene: &SceneRecord<T>,
    labels: &LabelSet<T>,
    num_classes: usize,
) -> Result<Tally> {
    let gt = gt_of(scene)?;
    let mut t = Tally::new(num_classes);
    for l in &labels.prototype {
        let p = scene.proposals.get(l.proposal_index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "scene {}: prototype label on missing proposal {}",
                scene.scene_id, l.proposal_index
            ))
        })?;
        let k = l.class_id;
        if k >= num_classes {
            return Err(Error::InvalidArgument(format!("class_id {k} >= K = {num_classes}")));
        }
        t.totals[k] += 1;
        if gt.iter().any(|g| g.class_id == k && contains_point(&g.bbox, &p.center)) {
            t.hits[k] += 1;
        }
    }
    Ok(t)
}

/// Recall tally for one scene under the enabled families.
pub fn recall_tally<T: Scalar>(
    scene: &SceneRecord<T>,
    labels: &LabelSet<T>,
    num_classes: usize,
    families: Families,
    iou_thresh: f64,
) -> Result<Tally> {
    if families.is_empty() {
        return Err(Error::InvalidArgument("families set is empty".into()));
    }
    let gt = gt_of(scene)?;
    let mut t = Tally::new(num_classes);
    let overlaps = |g: &ClassBox<T>, b: &Box3D<T>| iou(&g.bbox, b).to_f64_lossy() >= iou_thresh;
    for g in gt {
        let k = g.class_id;
        t.totals[k] += 1;
        let by_sparse = families.sparse
            && labels.sparse.iter().any(|l| l.class_id == k && overlaps(g, &l.bbox));
        let by_pseudo = families.pseudo
            && labels.pseudo.iter().any(|l| l.class_id == k && overlaps(g, &l.bbox));
        let by_proto = families.prototype
            && labels.prototype.iter().any(|l| {
                l.class_id == k
                    && scene
                        .proposals
                        .get(l.proposal_index)
                        .is_some_and(|p| contains_point(&g.bbox, &p.center))
            });
        if by_sparse || by_pseudo || by_proto {
            t.hits[k] += 1;
        }
    }
    Ok(t)
}

fn fold_tallies<'a, T: Scalar>(
    pairs: &[(&'a SceneRecord<T>, &'a LabelSet<T>)],
    num_classes: usize,
    f: impl Fn(&SceneRecord<T>, &LabelSet<T>) -> Result<Tally>,
) -> Result<Tally> {
    pairs.iter().try_fold(Tally::new(num_classes), |acc, (s, l)| Ok(acc.merge(&f(s, l)?)))
}

pub fn pseudo_precision<T: Scalar>(
    pairs: &[(&SceneRecord<T>, &LabelSet<T>)],
    num_classes: usize,
    iou_thresh: f64,
) -> Result<ClassRates> {
    Ok(fold_tallies(pairs, num_classes, |s, l| pseudo_precision_tally(s, l, num_classes, iou_thresh))?.rates())
}

pub fn prototype_precision<T: Scalar>(
    pairs: &[(&SceneRecord<T>, &LabelSet<T>)],
    num_classes: usize,
) -> Result<ClassRates> {
    Ok(fold_tallies(pairs, num_classes, |s, l| prototype_precision_tally(s, l, num_classes))?.rates())
}

/// Mean over classes of the per-class recall.
pub fn recall_with<T: Scalar>(
    pairs: &[(&SceneRecord<T>, &LabelSet<T>)],
    num_classes: usize,
    families: Families,
    iou_thresh: f64,
) -> Result<ClassRates> {
    if families.is_empty() {
        return Err(Error::InvalidArgument("families set is empty".into()));
    }
    Ok(fold_tallies(pairs, num_classes, |s, l| recall_tally(s, l, num_classes, families, iou_thresh))?.rates())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub class_names: Vec<String>,
    pub num_scenes: usize,
    pub iou_thresh: f64,
    pub sparse_count: usize,
    pub pseudo_count: usize,
    pub prototype_count: usize,
    pub pseudo_precision: ClassRates,
    pub prototype_precision: ClassRates,
    pub recall: Vec<(Families, ClassRates)>,
}

impl QualityReport {
    pub fn recall_of(&self, families: Families) -> Option<&ClassRates> {
        self.recall.iter().find(|(f, _)| *f == families).map(|(_, r)| r)
    }

    /// Builds the report. `extra_rows` are appended after the four standard
    /// recall rows.
    pub fn compute<T: Scalar>(
        pairs: &[(&SceneRecord<T>, &LabelSet<T>)],
        class_names: &[String],
        iou_thresh: f64,
        extra_rows: &[Families],
    ) -> Result<Self> {
        let k = class_names.len();
        let mut recall = Vec::new();
        for fam in Families::TABLE_ROWS.iter().chain(extra_rows) {
            if recall.iter().any(|(f, _)| f == fam) {
                continue;
            }
            recall.push((*fam, recall_with(pairs, k, *fam, iou_thresh)?));
        }
        Ok(Self {
            class_names: class_names.to_vec(),
            num_scenes: pairs.len(),
            iou_thresh,
            sparse_count: pairs.iter().map(|(_, l)| l.sparse.len()).sum(),
            pseudo_count: pairs.iter().map(|(_, l)| l.pseudo.len()).sum(),
            prototype_count: pairs.iter().map(|(_, l)| l.prototype.len()).sum(),
            pseudo_precision: pseudo_precision(pairs, k, iou_thresh)?,
            prototype_precision: prototype_precision(pairs, k)?,
            recall,
        })
    }

    /// Plain-text rendering. Rates are percentages with one decimal; `-`
    /// marks an undefined rate.
    pub fn render(&self) -> String {
        fn pct(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
        }
        let mut out = String::new();
        let w = self
            .class_names
            .iter()
            .map(String::len)
            .chain(["sparse+pseudo+prototype".len()])
            .max()
            .unwrap_or(8);
        writeln!(out, "QUALITY REPORT v1").unwrap();
        writeln!(
            out,
            "scenes {}  classes {}  iou_thresh {}",
            self.num_scenes,
            self.class_names.len(),
            self.iou_thresh
        )
        .unwrap();
        writeln!(
            out,
            "labels  sparse {}  pseudo {}  prototype {}",
            self.sparse_count, self.pseudo_count, self.prototype_count
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "[precision]").unwrap();
        writeln!(out, "{:<w$} {:>9} {:>9}", "class", "pseudo", "prototype").unwrap();
        for (i, name) in self.class_names.iter().enumerate() {
            writeln!(
                out,
                "{:<w$} {:>9} {:>9}",
                name,
                pct(self.pseudo_precision.per_class[i]),
                pct(self.prototype_precision.per_class[i])
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<w$} {:>9} {:>9}",
            "mean",
            pct(self.pseudo_precision.mean),
            pct(self.prototype_precision.mean)
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "[recall]").unwrap();
        write!(out, "{:<w$} {:>7}", "labels", "mAR").unwrap();
        for name in &self.class_names {
            write!(out, " {:>w2$}", name, w2 = name.len().max(6)).unwrap();
        }
        writeln!(out).unwrap();
        for (fam, rates) in &self.recall {
            write!(out, "{:<w$} {:>7}", fam.to_string(), pct(rates.mean)).unwrap();
            for (name, v) in self.class_names.iter().zip(&rates.per_class) {
                write!(out, " {:>w2$}", pct(*v), w2 = name.len().max(6)).unwrap();
            }
            writeln!(out).unwrap();
        }
        out
    }
}
