//! Style transfer: perceptual losses, feature transforms and the
//! comic-style GAN.

pub mod adversarial;
pub mod edge;
pub mod losses;
pub mod nets;
pub mod train;
pub mod transforms;

pub use adversarial::{
    content_l1, discriminator_loss, discriminator_loss_logits, generator_loss, generator_loss_logits,
};
pub use edge::{edge_blur, edge_mask};
pub use losses::{content_loss, gram_matrix, style_loss, total_loss, FeatureMap, GramMatrix, StyleLossConfig};
pub use nets::{
    content_features, discriminate, discriminator_logits, generator_forward, stylize, ContentNet,
    DiscriminatorConfig, DiscriminatorWeights, GeneratorConfig, GeneratorWeights, TrainingState,
};
pub use train::{
    pretrain_discriminator, pretrain_generator, train_comixgan, write_loss_log, GanRun, GanTrainConfig,
    LossRecord, Net, TrainingTriplet,
};
pub use transforms::{adain, feature_covariance, wct};
