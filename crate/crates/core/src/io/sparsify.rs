//! Sparse-split construction from fully annotated scenes.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::Corpus;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsifyMode {
    OnePerScene,
    NPerScene(usize),
    OnePerClassPerScene,
}

impl FromStr for SparsifyMode {
    type Err = Error;

    /// `one_per_scene`, `n_per_scene:<n>` or `one_per_class_per_scene`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_per_scene" => Ok(Self::OnePerScene),
            "one_per_class_per_scene" => Ok(Self::OnePerClassPerScene),
            _ => s
                .strip_prefix("n_per_scene:")
                .and_then(|n| n.parse().ok())
                .map(Self::NPerScene)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown sparsify mode '{s}'"))),
        }
    }
}

impl fmt::Display for SparsifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OnePerScene => f.write_str("one_per_scene"),
            Self::NPerScene(n) => write!(f, "n_per_scene:{n}"),
            Self::OnePerClassPerScene => f.write_str("one_per_class_per_scene"),
        }
    }
}

/// Replaces every scene's sparse labels with a random subset of its ground
/// truth, chosen uniformly. Ground truth is kept for evaluation. Scenes
/// without objects keep empty sparse labels and are logged.
pub fn sparsify<T: Scalar>(mut corpus: Corpus<T>, mode: SparsifyMode, seed: u64) -> Result<Corpus<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = corpus.num_classes();
    for scene in &mut corpus.scenes {
        let gt = scene
            .gt_labels
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(scene.scene_id.clone()))?;
        if gt.is_empty() {
            log::warn!("scene {} has no ground truth objects; no sparse label kept", scene.scene_id);
            scene.sparse_labels.clear();
            continue;
        }
        let mut picked: Vec<usize> = match mode {
            SparsifyMode::OnePerScene => vec![rng.random_range(0..gt.len())],
            SparsifyMode::NPerScene(n) => sample(&mut rng, gt.len(), n.min(gt.len())).into_vec(),
            SparsifyMode::OnePerClassPerScene => (0..k)
                .filter_map(|c| {
                    let members: Vec<usize> = (0..gt.len()).filter(|&i| gt[i].class_id == c).collect();
                    (!members.is_empty()).then(|| members[rng.random_range(0..members.len())])
                })
                .collect(),
        };
        picked.sort_unstable();
        scene.sparse_labels = picked.into_iter().map(|i| gt[i]).collect();
    }
    Ok(corpus)
}

/// Sparse labels per class across the corpus.
pub fn class_histogram<T: Scalar>(corpus: &Corpus<T>) -> Vec<usize> {
    let mut counts = vec![0; corpus.num_classes()];
    for l in corpus.scenes.iter().flat_map(|s| &s.sparse_labels) {
        if let Some(c) = counts.get_mut(l.class_id) {
            *c += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{synth_corpus, SynthSpec};
    use std::collections::HashSet;

    fn corpus() -> Corpus<f64> {
        synth_corpus(&SynthSpec::with_noise(6, 5, 3, 4, 0.5, 9)).unwrap()
    }

    #[test]
    fn cardinalities() {
        let one = sparsify(corpus(), SparsifyMode::OnePerScene, 1).unwrap();
        assert!(one.scenes.iter().all(|s| s.sparse_labels.len() == 1));

        let per_class = sparsify(corpus(), SparsifyMode::OnePerClassPerScene, 1).unwrap();
        for s in &per_class.scenes {
            let classes: HashSet<usize> = s.gt_labels.as_ref().unwrap().iter().map(|g| g.class_id).collect();
            assert_eq!(s.sparse_labels.len(), classes.len());
            assert_eq!(classes.len(), 3);
        }

        let n = sparsify(corpus(), SparsifyMode::NPerScene(9), 1).unwrap();
        assert!(n.scenes.iter().all(|s| s.sparse_labels.len() == 5));
    }

    #[test]
    fn never_invents_and_is_deterministic() {
        let a = sparsify(corpus(), SparsifyMode::NPerScene(2), 4).unwrap();
        let b = sparsify(corpus(), SparsifyMode::NPerScene(2), 4).unwrap();
        assert_eq!(a, b);
        for s in &a.scenes {
            let gt = s.gt_labels.as_ref().unwrap();
            assert!(s.sparse_labels.iter().all(|l| gt.contains(l)));
        }
    }

    #[test]
    fn empty_scene_is_kept() {
        let mut c = corpus();
        c.scenes[0].gt_labels = Some(vec![]);
        let out = sparsify(c, SparsifyMode::OnePerScene, 0).unwrap();
        assert!(out.scenes[0].sparse_labels.is_empty());
        let mut c = corpus();
        c.scenes[1].gt_labels = None;
        assert!(sparsify(c, SparsifyMode::OnePerScene, 0).is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in [SparsifyMode::OnePerScene, SparsifyMode::NPerScene(3), SparsifyMode::OnePerClassPerScene] {
            assert_eq!(m.to_string().parse::<SparsifyMode>().unwrap(), m);
        }
        assert!("two_per_scene".parse::<SparsifyMode>().is_err());
    }
}
