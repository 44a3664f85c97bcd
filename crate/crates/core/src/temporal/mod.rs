//! Flow correspondences, epipolar verification and temporal blending.

mod blend;
mod epipolar;
mod flow;
mod ransac;
mod two_view;
mod video;

pub use blend::{temporal_blend, BlendWeight, CollisionPolicy};
pub use epipolar::{estimate_fundamental_8pt, sampson_distance, FundamentalMatrix, PointPair, RANK_TOL};
pub use flow::{flow_to_correspondences, Correspondence, CorrespondenceSet, FlowField};
pub use ransac::{geometric_verification, ransac_fundamental, RansacConfig, RansacFit};
pub use two_view::TwoViewScene;
pub use video::{translate_image, translate_trajectory, translate_video, TemporalConfig, VideoTranslation};
