//! Batch command-line front end.
//!
//! Exit codes: 0 success, 1 validation or I/O error, 2 internal invariant
//! violation. Every subcommand is deterministic for fixed inputs, config and
//! seed, whatever `--jobs` is.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bank::{init_bank, PrototypeBank};
use crate::config::{CollisionMetric, MiningConfig};
use crate::error::{Error, Result};
use crate::io::sparsify::{class_histogram, sparsify, SparsifyMode};
use crate::io::synth::{synth_corpus, SynthSpec};
use crate::io::{self, Corpus};
use crate::mine::mine_prototype_labels;
use crate::model::{normalize_features, LabelSet, SceneRecord};
use crate::refine::{cooperate, make_pseudo_labels, predictions_from_proposals};
use crate::stats::{Families, QualityReport, DEFAULT_IOU_THRESH};

#[derive(Debug, Parser)]
#[command(name = "protomine", version, about = "Prototype label mining and pseudo-label refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file with MiningConfig field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-scene work.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub collision_metric: Option<CollisionMetric>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep a random subset of each scene's annotations as sparse labels.
    Sparsify {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// one_per_scene, n_per_scene:<n> or one_per_class_per_scene
        #[arg(long, default_value = "one_per_scene")]
        mode: String,
        #[command(flatten)]
        common: Common,
    },
    /// Stream scenes through class-aware prototype clustering.
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        /// Bank to resume from; a fresh bank is initialized otherwise.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write prototype labels for every scene.
    Mine {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Filter predictions into pseudo labels and merge all label families.
    Refine {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of `<scene_id>.pred.jsonl` files. Defaults to one
        /// prediction per proposal.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Label precision and recall report.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        /// Label directories; label sets for the same scene are merged.
        #[arg(long, required = true)]
        labels: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESH)]
        iou_thresh: f64,
        /// Extra recall row, e.g. `pseudo+prototype`.
        #[arg(long)]
        families: Option<String>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump prototypes as plain vectors, one per line.
    ExportBank {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with full ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
        #[arg(long, default_value_t = 12)]
        objects: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long)]
        rotated: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invariant(_) => 2,
        Error::InClass { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn load_config(common: &Common, num_classes: usize, feature_dim: usize) -> Result<MiningConfig> {
    let mut cfg = MiningConfig::new(num_classes, feature_dim);
    if let Some(path) = &common.config {
        cfg = cfg.apply_kv(&io::read_file(path)?)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = common.collision_metric {
        cfg.collision_metric = m;
    }
    let cfg = cfg.validate()?;
    if cfg.num_classes != num_classes || cfg.feature_dim != feature_dim {
        return Err(Error::InvalidArgument(format!(
            "config K={} C={} disagrees with corpus K={num_classes} C={feature_dim}",
            cfg.num_classes, cfg.feature_dim
        )));
    }
    Ok(cfg)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs `f` over scenes on `jobs` threads; results come back in scene order.
fn per_scene<R: Send>(
    jobs: usize,
    scenes: &[SceneRecord],
    f: impl Fn(&SceneRecord) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    pool(jobs)?.install(|| scenes.par_iter().map(&f).collect())
}

fn normalized(corpus: Corpus) -> Result<Corpus> {
    let scenes = corpus
        .scenes
        .into_iter()
        .map(|s| {
            let id = s.scene_id.clone();
            normalize_features(s).map_err(|e| Error::InvalidArgument(format!("scene {id}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { scenes, ..corpus })
}

fn load_bank(path: &Path, cfg: &MiningConfig) -> Result<PrototypeBank> {
    let bank = PrototypeBank::from_text(&io::read_file(path)?, &path.display().to_string())?;
    let dims = bank.prototypes.dim();
    if dims != (cfg.num_classes, cfg.protos_per_class, cfg.feature_dim) {
        return Err(Error::InvalidArgument(format!(
            "bank {} has K={} O={} C={}, config expects K={} O={} C={}",
            path.display(),
            dims.0,
            dims.1,
            dims.2,
            cfg.num_classes,
            cfg.protos_per_class,
            cfg.feature_dim
        )));
    }
    Ok(bank)
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let mut report = String::new();
    match command {
        Command::Sparsify { corpus, out, mode, common } => {
            let mode: SparsifyMode = mode.parse()?;
            let corpus: Corpus = io::read_corpus(&corpus)?;
            let cfg = load_config(&common, corpus.num_classes(), corpus.feature_dim)?;
            let sparse = sparsify(corpus, mode, cfg.seed)?;
            io::write_corpus(&out, &sparse)?;
            let hist = class_histogram(&sparse);
            let w = sparse.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
            writeln!(report, "{:<w$} {:>8}", "class", "labels").unwrap();
            for (name, n) in sparse.class_names.iter().zip(&hist) {
                writeln!(report, "{name:<w$} {n:>8}").unwrap();
            }
            writeln!(report, "{:<w$} {:>8}", "total", hist.iter().sum::<usize>()).unwrap();
        }
        Command::Cluster { corpus, bank, out, epochs, common } => {
            let corpus = normalized(io::read_corpus(&corpus)?)?;
            let cfg = load_config(&common, corpus.num_classes(), corpus.feature_dim)?;
            let mut proto = match &bank {
                Some(p) => load_bank(p, &cfg)?,
                None => init_bank(&cfg),
            };
            if corpus.scenes.is_empty() {
                eprintln!("warning: corpus has no scenes; bank written unchanged");
            }
            for _ in 0..epochs {
                for scene in &corpus.scenes {
                    proto.process_scene(scene, &cfg)?;
                }
            }
            io::write_file(&out, &proto.to_text())?;
            let status = if proto.is_warmed_up(&cfg) { "warmed up" } else { "warming up" };
            writeln!(report, "iteration {} / warmup {}: {status}", proto.iteration, cfg.warmup_iters).unwrap();
            writeln!(report, "class updates this run:").unwrap();
            for (name, n) in corpus.class_names.iter().zip(&proto.class_update_counts) {
                writeln!(report, "  {name} {n}").unwrap();
            }
        }
        Command::Mine { corpus, bank, out, common } => {
            let corpus = normalized(io::read_corpus(&corpus)?)?;
            let cfg = load_config(&common, corpus.num_classes(), corpus.feature_dim)?;
            let bank = load_bank(&bank, &cfg)?;
            if !bank.is_warmed_up(&cfg) {
                eprintln!(
                    "WARNING: bank not warmed up ({} of {} iterations); prototype labels are empty",
                    bank.iteration, cfg.warmup_iters
                );
            }
            let sets = per_scene(common.jobs, &corpus.scenes, |scene| {
                let mined = mine_prototype_labels(scene, &bank, &cfg)?;
                Ok(LabelSet {
                    scene_id: scene.scene_id.clone(),
                    sparse: scene.sparse_labels.clone(),
                    pseudo: Vec::new(),
                    prototype: mined.kept,
                })
            })?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for set in &sets {
                io::write_labels(&out, set)?;
            }
            let total: usize = sets.iter().map(|s| s.prototype.len()).sum();
            writeln!(report, "scenes {}  prototype labels {total}", sets.len()).unwrap();
        }
        Command::Refine { corpus, bank, out, predictions, common } => {
            let corpus = normalized(io::read_corpus(&corpus)?)?;
            let cfg = load_config(&common, corpus.num_classes(), corpus.feature_dim)?;
            let bank = load_bank(&bank, &cfg)?;
            if !bank.is_warmed_up(&cfg) {
                eprintln!("warning: bank not warmed up; prototype labels are empty");
            }
            let sets = per_scene(common.jobs, &corpus.scenes, |scene| {
                let preds = match &predictions {
                    Some(dir) => io::read_predictions(dir, &scene.scene_id)?,
                    None => predictions_from_proposals(scene),
                };
                let pseudo = make_pseudo_labels(&preds, scene, &cfg);
                cooperate(scene, pseudo, &bank, &cfg)
            })?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for set in &sets {
                io::write_labels(&out, set)?;
            }
            writeln!(
                report,
                "scenes {}  pseudo labels {}  prototype labels {}",
                sets.len(),
                sets.iter().map(|s| s.pseudo.len()).sum::<usize>(),
                sets.iter().map(|s| s.prototype.len()).sum::<usize>()
            )
            .unwrap();
        }
        Command::Stats { corpus, labels, iou_thresh, families, out, common } => {
            let extra: Vec<Families> = match &families {
                Some(f) => vec![f.parse()?],
                None => Vec::new(),
            };
            if !(0.0..=1.0).contains(&iou_thresh) {
                return Err(Error::InvalidArgument(format!("iou_thresh {iou_thresh} outside [0, 1]")));
            }
            let corpus: Corpus = io::read_corpus(&corpus)?;
            let sets = per_scene(common.jobs, &corpus.scenes, |scene| {
                let parts = labels
                    .iter()
                    .map(|dir| io::read_labels(dir, &scene.scene_id))
                    .collect::<Result<Vec<LabelSet>>>()?;
                Ok(merge_label_sets(&scene.scene_id, parts))
            })?;
            let pairs: Vec<_> = corpus.scenes.iter().zip(&sets).collect();
            let q = QualityReport::compute(&pairs, &corpus.class_names, iou_thresh, &extra)?;
            report = q.render();
            if let Some(path) = out {
                io::write_file(&path, &report)?;
            }
        }
        Command::ExportBank { bank, out } => {
            let bank = PrototypeBank::<f64>::from_text(&io::read_file(&bank)?, &bank.display().to_string())?;
            let text = export_vectors(&bank);
            match out {
                Some(path) => io::write_file(&path, &text)?,
                None => report = text,
            }
        }
        Command::Synth { out, scenes, objects, classes, dim, noise, rotated, common } => {
            if !(0.0..=1.0).contains(&noise) {
                return Err(Error::InvalidArgument(format!("noise {noise} outside [0, 1]")));
            }
            let spec = SynthSpec {
                rotated,
                ..SynthSpec::with_noise(scenes, objects, classes, dim, noise, common.seed.unwrap_or(0))
            };
            let corpus: Corpus = synth_corpus(&spec)?;
            io::write_corpus(&out, &corpus)?;
            writeln!(report, "wrote {} scenes to {}", corpus.scenes.len(), out.display()).unwrap();
        }
    }
    stdout
        .write_all(report.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Union of several label sets for one scene, first occurrence wins.
pub fn merge_label_sets(scene_id: &str, parts: Vec<LabelSet>) -> LabelSet {
    let mut merged = LabelSet {
        scene_id: scene_id.to_string(),
        ..Default::default()
    };
    let mut seen_protos = BTreeSet::new();
    for part in parts {
        for l in part.sparse {
            if !merged.sparse.contains(&l) {
                merged.sparse.push(l);
            }
        }
        for l in part.pseudo {
            if !merged.pseudo.contains(&l) {
                merged.pseudo.push(l);
            }
        }
        for l in part.prototype {
            if seen_protos.insert(l.proposal_index) {
                merged.prototype.push(l);
            }
        }
    }
    merged
}

/// `class prototype v1 ... vC`, one prototype per line.
pub fn export_vectors(bank: &PrototypeBank) -> String {
    let (k, o, _) = bank.prototypes.dim();
    let mut out = String::from("# class prototype values\n");
    for class in 0..k {
        for j in 0..o {
            write!(out, "{class} {j}").unwrap();
            for v in bank.prototypes.slice(ndarray::s![class, j, ..]) {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}
