//! Anchor-grid two-stage-style detector over synthetic feature grids.

pub mod anchors;
pub mod detect;
pub mod features;
pub mod model;
pub mod scene;

pub use anchors::{generate_proposals, AnchorConfig, Proposal, ProposalSource};
pub use detect::{detect, nms, DetectConfig, Detection};
pub use features::{roi_feature_dim, roi_features};
pub use model::{
    forward, forward_features, loss_and_gradients, sgd_step, DetectorConfig, DetectorParams, HeadOutput,
    TrainingInstance,
};
pub use scene::{roi_pool, Annotation, IntegralScene, Scene};
