//! Insulator shell triage downstream of an object detector.
//!
//! Shell crops are classified by a small feed-forward network, the
//! classification head can be re-balanced against class imbalance, damage
//! is localized with layer-wise relevance propagation, blurry crops are
//! gated by a Laplacian sharpness score, and heatmaps are scored against
//! segmentation masks with the top-k intersection metric.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image;
pub mod localization;
pub mod lrp;
pub mod manifest;
pub mod model_io;
pub mod net;
pub mod pipeline;
pub mod pnm;
pub mod rebalance;
pub mod render;
pub mod report;
pub mod sharpness;
pub mod synth;
pub mod tensor;

pub use config::PipelineConfig;
pub use dataset::{ClassSet, Sample};
pub use error::{Error, Result};
pub use image::{BoundingBox, Image};
pub use lrp::{Heatmap, Rule, RuleConfig};
pub use manifest::{ingest_manifest, Manifest, SampleRecord, Split};
pub use net::{ActivationTrace, Conv2d, Dense, Layer, Network, Pool};
pub use pipeline::{run_pipeline, RunOptions};
pub use report::RunReport;
pub use tensor::Tensor;
