//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's geometry, transport or matching code.
#![allow(dead_code)]

use protomine::{Box3D, ClassBox, Proposal, PrototypeBank, SceneRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vec(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

// ---------------------------------------------------------------- transport

/// Plain alternating normalization of `exp(S/κ)`: columns, then rows.
pub fn naive_sinkhorn(s: &[Vec<f64>], kappa: f64, steps: usize, a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let m = s.len();
    let o = s[0].len();
    let mut p: Vec<Vec<f64>> = s.iter().map(|r| r.iter().map(|x| (x / kappa).exp()).collect()).collect();
    for _ in 0..steps {
        for j in 0..o {
            let col: f64 = (0..m).map(|i| p[i][j]).sum();
            for row in p.iter_mut() {
                row[j] *= b[j] / col;
            }
        }
        for (i, row) in p.iter_mut().enumerate() {
            let sum: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x *= a[i] / sum;
            }
        }
    }
    p
}

pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------- geometry

/// Box as (center, size, yaw) in plain arrays.
pub fn parts(b: &Box3D) -> ([f64; 3], [f64; 3], f64) {
    (b.center, b.size, b.yaw)
}

pub fn inside(b: &Box3D, p: [f64; 3]) -> bool {
    let (c, s, yaw) = parts(b);
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    let (sn, cs) = yaw.sin_cos();
    let lx = cs * dx + sn * dy;
    let ly = -sn * dx + cs * dy;
    lx.abs() <= s[0] / 2.0 && ly.abs() <= s[1] / 2.0 && (p[2] - c[2]).abs() <= s[2] / 2.0
}

fn overlap_1d(c1: f64, s1: f64, c2: f64, s2: f64) -> f64 {
    let lo = (c1 - s1 / 2.0).max(c2 - s2 / 2.0);
    let hi = (c1 + s1 / 2.0).min(c2 + s2 / 2.0);
    (hi - lo).max(0.0)
}

/// Intersection volume of two zero-yaw boxes.
pub fn inter_aa(a: &Box3D, b: &Box3D) -> f64 {
    assert!(a.yaw == 0.0 && b.yaw == 0.0, "oracle handles axis-aligned boxes only");
    (0..3).map(|i| overlap_1d(a.center[i], a.size[i], b.center[i], b.size[i])).product()
}

pub fn vol(b: &Box3D) -> f64 {
    b.size.iter().product()
}

pub fn iou_aa(a: &Box3D, b: &Box3D) -> f64 {
    let i = inter_aa(a, b);
    let u = vol(a) + vol(b) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

/// Uniform point inside `b`.
pub fn sample_in(b: &Box3D, rng: &mut impl Rng) -> [f64; 3] {
    let (c, s, yaw) = parts(b);
    let l = [
        rng.random_range(-0.5..0.5) * s[0],
        rng.random_range(-0.5..0.5) * s[1],
        rng.random_range(-0.5..0.5) * s[2],
    ];
    let (sn, cs) = yaw.sin_cos();
    [c[0] + cs * l[0] - sn * l[1], c[1] + sn * l[0] + cs * l[1], c[2] + l[2]]
}

/// Monte-Carlo IoU estimate with its standard error. Points are drawn in
/// `a`; the hit fraction estimates `|a ∩ b| / |a|`.
pub fn mc_iou(a: &Box3D, b: &Box3D, n: usize, rng: &mut impl Rng) -> (f64, f64) {
    let hits = (0..n).filter(|_| inside(b, sample_in(a, rng))).count();
    let (va, vb) = (vol(a), vol(b));
    let p = hits as f64 / n as f64;
    let inter = va * p;
    let se_inter = (va * (p * (1.0 - p) / n as f64).sqrt()).max(va / n as f64);
    let union = va + vb - inter;
    // d(I/(va+vb-I))/dI = (va+vb)/(va+vb-I)^2
    let se = se_inter * (va + vb) / (union * union);
    (inter / union, se)
}

// ---------------------------------------------------------------- scenes

pub fn aa_box(center: [f64; 3], size: [f64; 3]) -> Box3D {
    Box3D::axis_aligned(center, size).unwrap()
}

pub fn random_aa_box(rng: &mut impl Rng, span: f64) -> Box3D {
    aa_box(
        [rng.random_range(0.0..span), rng.random_range(0.0..span), rng.random_range(0.0..1.0)],
        [rng.random_range(0.3..2.0), rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)],
    )
}

/// Random normalized scene with up to `max_props` proposals, a few sparse
/// boxes (some proposals placed inside them) and full ground truth.
pub fn random_scene(rng: &mut impl Rng, id: &str, max_props: usize, k: usize, c: usize) -> SceneRecord {
    let span = 8.0;
    let n_sparse = rng.random_range(0..=3);
    let sparse: Vec<ClassBox> = (0..n_sparse)
        .map(|_| ClassBox {
            class_id: rng.random_range(0..k),
            bbox: random_aa_box(rng, span),
        })
        .collect();
    let n = rng.random_range(1..=max_props);
    let proposals = (0..n)
        .map(|_| {
            let center = if !sparse.is_empty() && rng.random_bool(0.3) {
                let s = &sparse[rng.random_range(0..sparse.len())];
                sample_in(&s.bbox, rng)
            } else {
                [
                    rng.random_range(-0.5..span + 0.5),
                    rng.random_range(-0.5..span + 0.5),
                    rng.random_range(-0.2..1.2),
                ]
            };
            Proposal {
                feature: unit_vec(rng, c),
                scores: (0..k).map(|_| rng.random_range(0.0..1.0)).collect(),
                bbox: aa_box(center, [1.0, 1.0, 1.0]),
                center,
            }
        })
        .collect();
    let mut gt = sparse.clone();
    for _ in 0..rng.random_range(0..4) {
        gt.push(ClassBox {
            class_id: rng.random_range(0..k),
            bbox: random_aa_box(rng, span),
        });
    }
    SceneRecord {
        scene_id: id.to_string(),
        proposals,
        sparse_labels: sparse,
        gt_labels: Some(gt),
        point_range: [0.0, 0.0, 0.0, span, span, 1.0],
    }
}

/// Bank with random unit prototypes, already past any warm-up.
pub fn random_bank(rng: &mut impl Rng, k: usize, o: usize, c: usize) -> PrototypeBank {
    let mut bank = protomine::init_bank(&protomine::Config::new(k, c));
    bank.prototypes = ndarray::Array3::from_shape_fn((k, o, c), |_| 0.0);
    for kk in 0..k {
        for j in 0..o {
            let v = unit_vec(rng, c);
            for (x, val) in v.into_iter().enumerate() {
                bank.prototypes[[kk, j, x]] = val;
            }
        }
    }
    bank.iteration = u64::MAX / 2;
    bank
}

// ---------------------------------------------------------------- mining

/// Straight-line prototype label mining: affinity, max over prototypes,
/// score product, argmax, then the three masks.
pub fn oracle_mine(scene: &SceneRecord, bank: &PrototypeBank, alpha_pro: f64) -> Vec<(usize, usize)> {
    let (k, o, c) = bank.prototypes.dim();
    let mut out = Vec::new();
    for (i, p) in scene.proposals.iter().enumerate() {
        let mut w = vec![0.0; k];
        for kk in 0..k {
            let mut best = f64::NEG_INFINITY;
            for j in 0..o {
                let mut a = 0.0;
                for x in 0..c {
                    a += p.feature[x] * bank.prototypes[[kk, j, x]];
                }
                if a > best {
                    best = a;
                }
            }
            w[kk] = p.scores[kk] * best;
        }
        let label = first_argmax(&w);
        let max_score = p.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let fg = max_score >= alpha_pro;
        let outside = scene.sparse_labels.iter().all(|s| !inside(&s.bbox, p.center));
        let r = scene.point_range;
        let in_range = (0..3).all(|d| p.center[d] >= r[d] && p.center[d] <= r[d + 3]);
        if fg && outside && in_range {
            out.push((i, label));
        }
    }
    out
}

// ---------------------------------------------------------------- filters

/// (class, score, box) triples.
pub type Pred = (usize, f64, Box3D);

pub fn oracle_score(preds: &[Pred], alpha: f64) -> Vec<Pred> {
    preds.iter().filter(|p| p.1 >= alpha).cloned().collect()
}

/// Greedy suppression written as "take the best remaining, discard what it
/// overlaps". Returns kept positions in input order.
pub fn oracle_greedy_nms(preds: &[Pred], alpha: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..preds.len()).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for r in 1..remaining.len() {
            if preds[remaining[r]].1 > preds[remaining[best]].1 {
                best = r;
            }
        }
        let top = remaining.remove(best);
        kept.push(top);
        remaining.retain(|&i| iou_aa(&preds[i].2, &preds[top].2) < alpha);
    }
    kept.sort();
    kept
}

/// Literal pairwise reading: of every overlapping pair, the lower scored box
/// goes, whether or not the higher one survives.
pub fn oracle_pairwise_nms(preds: &[Pred], alpha: f64) -> Vec<usize> {
    (0..preds.len())
        .filter(|&i| {
            !(0..preds.len()).any(|j| {
                j != i
                    && (preds[j].1 > preds[i].1 || (preds[j].1 == preds[i].1 && j < i))
                    && iou_aa(&preds[i].2, &preds[j].2) >= alpha
            })
        })
        .collect()
}

/// `fraction`: share of the pseudo box inside the sparse box; `iou`: IoU.
pub fn oracle_collision(preds: &[Pred], sparse: &[Box3D], alpha: f64, use_iou: bool) -> Vec<Pred> {
    preds
        .iter()
        .filter(|p| {
            !sparse.iter().any(|s| {
                let m = if use_iou { iou_aa(&p.2, s) } else { inter_aa(&p.2, s) / vol(&p.2) };
                m > alpha
            })
        })
        .cloned()
        .collect()
}

// ---------------------------------------------------------------- matching

/// Repeatedly matches the globally best remaining (pred, gt) pair.
pub fn oracle_greedy_match(preds: &[Box3D], gts: &[Box3D], thresh: f64) -> usize {
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut n = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..preds.len() {
            for j in 0..gts.len() {
                if used_p[i] || used_g[j] {
                    continue;
                }
                let v = iou_aa(&preds[i], &gts[j]);
                if v >= thresh && best.is_none_or(|b| v > b.0) {
                    best = Some((v, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                used_p[i] = true;
                used_g[j] = true;
                n += 1;
            }
            None => return n,
        }
    }
}

/// Maximum-cardinality bipartite matching over pairs with IoU >= thresh.
pub fn oracle_max_match(preds: &[Box3D], gts: &[Box3D], thresh: f64) -> usize {
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|p| (0..gts.len()).filter(|&j| iou_aa(p, &gts[j]) >= thresh).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gts.len()];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|o| augment(o, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    (0..preds.len())
        .filter(|&i| augment(i, &adj, &mut vec![false; gts.len()], &mut owner))
        .count()
}

/// Per-class (hits, totals) for pseudo precision with the given matcher.
pub fn oracle_pseudo_precision(
    pairs: &[(&SceneRecord, &protomine::Labels)],
    k: usize,
    thresh: f64,
    matcher: fn(&[Box3D], &[Box3D], f64) -> usize,
) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); k];
    for (scene, labels) in pairs {
        let gt = scene.gt_labels.as_ref().unwrap();
        for (kk, slot) in out.iter_mut().enumerate() {
            let preds: Vec<Box3D> = labels.pseudo.iter().filter(|l| l.class_id == kk).map(|l| l.bbox).collect();
            let gts: Vec<Box3D> = gt.iter().filter(|g| g.class_id == kk).map(|g| g.bbox).collect();
            slot.0 += matcher(&preds, &gts, thresh);
            slot.1 += preds.len();
        }
    }
    out
}

pub fn oracle_prototype_precision(pairs: &[(&SceneRecord, &protomine::Labels)], k: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); k];
    for (scene, labels) in pairs {
        let gt = scene.gt_labels.as_ref().unwrap();
        for l in &labels.prototype {
            let p = scene.proposals[l.proposal_index].center;
            out[l.class_id].1 += 1;
            if gt.iter().any(|g| g.class_id == l.class_id && inside(&g.bbox, p)) {
                out[l.class_id].0 += 1;
            }
        }
    }
    out
}

/// mAR over classes with GT, for the enabled families.
pub fn oracle_recall(
    pairs: &[(&SceneRecord, &protomine::Labels)],
    k: usize,
    fams: (bool, bool, bool),
    thresh: f64,
) -> f64 {
    let mut hit = vec![0usize; k];
    let mut tot = vec![0usize; k];
    for (scene, labels) in pairs {
        for g in scene.gt_labels.as_ref().unwrap() {
            let kk = g.class_id;
            tot[kk] += 1;
            let mut found = false;
            if fams.0 {
                found |= labels.sparse.iter().any(|l| l.class_id == kk && iou_aa(&l.bbox, &g.bbox) >= thresh);
            }
            if fams.1 {
                found |= labels.pseudo.iter().any(|l| l.class_id == kk && iou_aa(&l.bbox, &g.bbox) >= thresh);
            }
            if fams.2 {
                found |= labels
                    .prototype
                    .iter()
                    .any(|l| l.class_id == kk && inside(&g.bbox, scene.proposals[l.proposal_index].center));
            }
            if found {
                hit[kk] += 1;
            }
        }
    }
    let rates: Vec<f64> = (0..k).filter(|&c| tot[c] > 0).map(|c| hit[c] as f64 / tot[c] as f64).collect();
    rates.iter().sum::<f64>() / rates.len() as f64
}

pub fn rate(hits_totals: &[(usize, usize)]) -> f64 {
    let r: Vec<f64> = hits_totals.iter().filter(|t| t.1 > 0).map(|t| t.0 as f64 / t.1 as f64).collect();
    r.iter().sum::<f64>() / r.len() as f64
}
