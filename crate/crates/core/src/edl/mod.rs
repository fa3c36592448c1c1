//! Exclusionary soft masks and the loss functions they route.

pub mod features;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod suite;

pub use features::{ConvFeatureExtractor, FeatureExtractor, IdentityExtractor};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{
    adversarial_loss, edl_composite_loss, perceptual_loss, pixel_loss, weighted_baseline_loss,
    AdversarialLoss, BaselineLoss, CompositeLoss, LossGrad, LossWeights, LOG_FLOOR,
};
pub use mask::{complement_mask, softmax_backward, softmax_mask, Mask};
pub use suite::{run_gradient_suite, KindReport, LossKind};
