//! Exchange formats.
//!
//! All exchange files are JSON Lines. A scene file holds one scene record on
//! a single line:
//!
//! ```text
//! {"scene_id":"s0","point_range":[0,0,-1,10,10,3],
//!  "proposals":[{"center":[..],"feature":[..],"scores":[..],"box":[cx,cy,cz,dx,dy,dz,yaw]}],
//!  "sparse_labels":[{"class_id":2,"box":[..]}],"gt_labels":[..]}
//! ```
//!
//! `gt_labels` is omitted when the scene has none. Label and prediction files
//! hold one record per line, each an object with a single key naming the
//! record kind. Floats use the shortest decimal that round-trips, so
//! `write(read(x)) == x` byte for byte on files this module produced.
//!
//! A corpus is a directory holding `manifest.json` and the scene files it
//! lists.

pub mod sparsify;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Box3D, ClassBox, LabelSet, Proposal, PrototypeLabel, PseudoLabel, SceneRecord};
use crate::refine::Prediction;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct ProposalRecord<T: Scalar> {
    center: [T; 3],
    feature: Vec<T>,
    scores: Vec<T>,
    #[serde(rename = "box")]
    bbox: Box3D<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
struct SceneFileRecord<T: Scalar> {
    scene_id: String,
    point_range: [T; 6],
    proposals: Vec<ProposalRecord<T>>,
    sparse_labels: Vec<ClassBox<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_labels: Option<Vec<ClassBox<T>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
enum LabelLine<T: Scalar> {
    Labels { scene_id: String },
    Sparse(ClassBox<T>),
    Pseudo(PseudoLabel<T>),
    Prototype(PrototypeLabel),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
enum PredictionLine<T: Scalar> {
    Predictions { scene_id: String },
    Prediction(Prediction<T>),
}

fn push_line<S: Serialize>(out: &mut String, rec: &S) {
    out.push_str(&serde_json::to_string(rec).expect("records serialize"));
    out.push('\n');
}

fn parse_lines<R: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<(usize, R)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|r| (i + 1, r))
                .map_err(|e| Error::Parse {
                    path: path.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn header_error(path: &str, what: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        line: 1,
        message: format!("first record must be a '{what}' header"),
    }
}

pub fn scene_to_string<T: Scalar>(scene: &SceneRecord<T>) -> String {
    let rec = SceneFileRecord {
        scene_id: scene.scene_id.clone(),
        point_range: scene.point_range,
        proposals: scene
            .proposals
            .iter()
            .map(|p| ProposalRecord {
                center: p.center,
                feature: p.feature.clone(),
                scores: p.scores.clone(),
                bbox: p.bbox,
            })
            .collect(),
        sparse_labels: scene.sparse_labels.clone(),
        gt_labels: scene.gt_labels.clone(),
    };
    let mut out = String::new();
    push_line(&mut out, &rec);
    out
}

/// Parses a scene file. With `dims = Some((K, C))` the scene is also checked
/// against the corpus dimensions.
pub fn scene_from_str<T: Scalar>(text: &str, path: &str, dims: Option<(usize, usize)>) -> Result<SceneRecord<T>> {
    let mut lines = parse_lines::<SceneFileRecord<T>>(text, path)?.into_iter();
    let (line, rec) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_string(),
        line: 1,
        message: "empty scene file".into(),
    })?;
    let at = |line: usize, message: String| Error::Parse {
        path: path.to_string(),
        line,
        message,
    };
    if let Some((extra, _)) = lines.next() {
        return Err(at(extra, "more than one scene record".into()));
    }
    if let Some((k, c)) = dims {
        for (idx, p) in rec.proposals.iter().enumerate() {
            if p.feature.len() != c {
                return Err(at(line, format!("proposal {idx}: feature length {} != C = {c}", p.feature.len())));
            }
            if p.scores.len() != k {
                return Err(at(line, format!("proposal {idx}: {} scores != K = {k}", p.scores.len())));
            }
        }
    }
    let scene = SceneRecord {
        scene_id: rec.scene_id,
        proposals: rec
            .proposals
            .into_iter()
            .map(|p| Proposal {
                feature: p.feature,
                scores: p.scores,
                bbox: p.bbox,
                center: p.center,
            })
            .collect(),
        sparse_labels: rec.sparse_labels,
        gt_labels: rec.gt_labels,
        point_range: rec.point_range,
    };
    let (k, c) = match dims {
        Some(d) => d,
        None => match scene.proposals.first() {
            Some(p) => (p.scores.len(), p.feature.len()),
            None => {
                let max_class = scene
                    .sparse_labels
                    .iter()
                    .chain(scene.gt_labels.iter().flatten())
                    .map(|l| l.class_id + 1)
                    .max()
                    .unwrap_or(1);
                (max_class, 0)
            }
        },
    };
    scene.validate(k, c).map_err(|e| at(line, e.to_string()))?;
    Ok(scene)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_scene<T: Scalar>(path: &Path, dims: Option<(usize, usize)>) -> Result<SceneRecord<T>> {
    scene_from_str(&read_text(path)?, &path.display().to_string(), dims)
}

pub fn write_scene<T: Scalar>(path: &Path, scene: &SceneRecord<T>) -> Result<()> {
    write_text(path, &scene_to_string(scene))
}

pub fn labels_to_string<T: Scalar>(labels: &LabelSet<T>) -> String {
    let mut out = String::new();
    push_line(&mut out, &LabelLine::<T>::Labels { scene_id: labels.scene_id.clone() });
    for l in &labels.sparse {
        push_line(&mut out, &LabelLine::Sparse(*l));
    }
    for l in &labels.pseudo {
        push_line(&mut out, &LabelLine::Pseudo(*l));
    }
    for l in &labels.prototype {
        push_line(&mut out, &LabelLine::<T>::Prototype(*l));
    }
    out
}

pub fn labels_from_str<T: Scalar>(text: &str, path: &str) -> Result<LabelSet<T>> {
    let mut lines = parse_lines::<LabelLine<T>>(text, path)?.into_iter();
    let mut set = match lines.next() {
        Some((_, LabelLine::Labels { scene_id })) => LabelSet {
            scene_id,
            ..Default::default()
        },
        _ => return Err(header_error(path, "labels")),
    };
    for (line, rec) in lines {
        match rec {
            LabelLine::Labels { .. } => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    message: "duplicate labels header".into(),
                })
            }
            LabelLine::Sparse(l) => set.sparse.push(l),
            LabelLine::Pseudo(l) => set.pseudo.push(l),
            LabelLine::Prototype(l) => {
                if set.prototype.iter().any(|p| p.proposal_index == l.proposal_index) {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line,
                        message: format!("proposal {} labelled twice", l.proposal_index),
                    });
                }
                set.prototype.push(l)
            }
        }
    }
    Ok(set)
}

pub fn predictions_to_string<T: Scalar>(scene_id: &str, preds: &[Prediction<T>]) -> String {
    let mut out = String::new();
    push_line(&mut out, &PredictionLine::<T>::Predictions { scene_id: scene_id.to_string() });
    for p in preds {
        push_line(&mut out, &PredictionLine::Prediction(*p));
    }
    out
}

/// Returns the scene id from the header and the predictions.
pub fn predictions_from_str<T: Scalar>(text: &str, path: &str) -> Result<(String, Vec<Prediction<T>>)> {
    let mut lines = parse_lines::<PredictionLine<T>>(text, path)?.into_iter();
    let scene_id = match lines.next() {
        Some((_, PredictionLine::Predictions { scene_id })) => scene_id,
        _ => return Err(header_error(path, "predictions")),
    };
    let mut preds = Vec::new();
    for (line, rec) in lines {
        match rec {
            PredictionLine::Prediction(p) => {
                if !(p.score >= T::zero() && p.score <= T::one()) {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line,
                        message: format!("score {} outside [0, 1]", p.score),
                    });
                }
                preds.push(p)
            }
            PredictionLine::Predictions { .. } => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    message: "duplicate predictions header".into(),
                })
            }
        }
    }
    Ok((scene_id, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    #[serde(rename = "K")]
    pub num_classes: usize,
    #[serde(rename = "C")]
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    /// Scene files, relative to the manifest's directory.
    pub scenes: Vec<String>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::dim("class_names vs. K", self.num_classes, self.class_names.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T: Scalar = f64> {
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub scenes: Vec<SceneRecord<T>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<(CorpusManifest, PathBuf)> {
    let mpath = manifest_path(path);
    let text = read_text(&mpath)?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate().map_err(|e| Error::Parse {
        path: mpath.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let root = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, root))
}

/// Loads a corpus from a directory holding `manifest.json`, or from the
/// manifest file itself.
pub fn read_corpus<T: Scalar>(path: &Path) -> Result<Corpus<T>> {
    let (manifest, root) = read_manifest(path)?;
    let dims = Some((manifest.num_classes, manifest.feature_dim));
    let scenes = manifest
        .scenes
        .iter()
        .map(|rel| read_scene(&root.join(rel), dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        class_names: manifest.class_names,
        feature_dim: manifest.feature_dim,
        scenes,
    })
}

fn check_file_stem(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "scene_id '{id}' is not usable as a file name"
        )))
    }
}

pub fn scene_file_name(scene_id: &str) -> String {
    format!("{scene_id}.jsonl")
}

pub fn label_file_name(scene_id: &str) -> String {
    format!("{scene_id}.labels.jsonl")
}

/// Writes `manifest.json` and `scenes/<scene_id>.jsonl` under `dir`.
pub fn write_corpus<T: Scalar>(dir: &Path, corpus: &Corpus<T>) -> Result<()> {
    let mut files = Vec::with_capacity(corpus.scenes.len());
    for scene in &corpus.scenes {
        check_file_stem(&scene.scene_id)?;
        let rel = format!("scenes/{}", scene_file_name(&scene.scene_id));
        write_scene(&dir.join(&rel), scene)?;
        files.push(rel);
    }
    let manifest = CorpusManifest {
        format_version: FORMAT_VERSION,
        num_classes: corpus.num_classes(),
        feature_dim: corpus.feature_dim,
        class_names: corpus.class_names.clone(),
        scenes: files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_text(&dir.join(MANIFEST_FILE), &text)
}

pub fn write_labels<T: Scalar>(dir: &Path, labels: &LabelSet<T>) -> Result<()> {
    check_file_stem(&labels.scene_id)?;
    write_text(&dir.join(label_file_name(&labels.scene_id)), &labels_to_string(labels))
}

pub fn read_labels<T: Scalar>(dir: &Path, scene_id: &str) -> Result<LabelSet<T>> {
    let path = dir.join(label_file_name(scene_id));
    let set: LabelSet<T> = labels_from_str(&read_text(&path)?, &path.display().to_string())?;
    if set.scene_id != scene_id {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("header names scene '{}', expected '{scene_id}'", set.scene_id),
        });
    }
    Ok(set)
}

pub fn read_predictions<T: Scalar>(dir: &Path, scene_id: &str) -> Result<Vec<Prediction<T>>> {
    let path = dir.join(format!("{scene_id}.pred.jsonl"));
    let (id, preds) = predictions_from_str(&read_text(&path)?, &path.display().to_string())?;
    if id != scene_id {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("header names scene '{id}', expected '{scene_id}'"),
        });
    }
    Ok(preds)
}

pub fn write_predictions<T: Scalar>(dir: &Path, scene_id: &str, preds: &[Prediction<T>]) -> Result<()> {
    check_file_stem(scene_id)?;
    write_text(&dir.join(format!("{scene_id}.pred.jsonl")), &predictions_to_string(scene_id, preds))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn read_file(path: &Path) -> Result<String> {
    read_text(path)
}
