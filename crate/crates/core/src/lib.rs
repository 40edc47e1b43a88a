//! Label mining for sparsely annotated 3D object detection.
//!
//! The engine keeps class-aware prototype banks updated by Sinkhorn-Knopp
//! clustering, assigns prototype labels to unlabeled proposals, and filters
//! detector predictions into pseudo labels. All numerics are generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below pin the common choices.

pub mod bank;
pub mod cli;
pub mod config;
pub mod error;
pub mod geom;
pub mod io;
pub mod losses;
pub mod mine;
pub mod model;
pub mod ot;
pub mod refine;
pub mod scalar;
pub mod stats;

pub use bank::{init_bank, ClassUpdate, PrototypeBank};
pub use config::{validate_config, CollisionMetric, MiningConfig};
pub use error::{ConfigError, Error, Result};
pub use geom::OverlapReport;
pub use mine::{mine_prototype_labels, PropagationResult};
pub use model::{normalize_features, Box3D, ClassBox, LabelSet, Proposal, PrototypeLabel, PseudoLabel, SceneRecord};
pub use ot::{assign_rows, sinkhorn_match, sinkhorn_until, TransportPlan};
pub use refine::{cooperate, make_pseudo_labels, Prediction};
pub use scalar::Scalar;
pub use stats::QualityReport;

pub type Box3 = Box3D<f64>;
pub type Box3F32 = Box3D<f32>;
pub type Scene = SceneRecord<f64>;
pub type SceneF32 = SceneRecord<f32>;
pub type Bank = PrototypeBank<f64>;
pub type BankF32 = PrototypeBank<f32>;
pub type Config = MiningConfig<f64>;
pub type ConfigF32 = MiningConfig<f32>;
pub type Labels = LabelSet<f64>;
pub type LabelsF32 = LabelSet<f32>;
pub type Plan = TransportPlan<f64>;
pub type PlanF32 = TransportPlan<f32>;
