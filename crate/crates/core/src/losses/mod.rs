//! Photometric, structural, smoothness and consistency losses, and their
//! weighted multi-scale combination.

mod consistency;
mod photometric;
mod smoothness;
mod ssim;
mod total;

pub use consistency::{depth_consistency_loss, ConsistencyDomain};
pub use photometric::{
    epipolar_weight_map, epipolar_weight_map_clamped, photometric_loss, weighted_photometric_loss,
    EpipolarWeightMap, LossMap, DEFAULT_MAX_LOG_WEIGHT,
};
pub use smoothness::{smoothness_loss, smoothness_loss_with, SmoothnessOrder};
pub use ssim::{ssim_loss, ssim_loss_from_map, ssim_map, C1, C2};
pub use total::{
    evaluate, sampling_signature, total_loss, LevelTerms, LossGradient, LossInputs, LossReport,
    LossState, LossWeights, PixelMaps,
};
