//! The four terms of the joint objective and their weighted combination.

mod adacos;
mod adversarial;
mod collaborative;
mod joint;
mod similarity;

pub use adacos::{adacos_loss, loss_adacos, AdaCosState, MIN_SCALE};
pub use adversarial::{gan_discriminator, gan_generator, loss_gan_discriminator, loss_gan_generator};
pub use collaborative::{collaborative, loss_collaborative};
pub use joint::{joint_loss, LossComponents, LossWeights};
pub use similarity::{
    gaussian_window, loss_similarity, similarity, ssim_constants, ssim_map, SimilarityMode,
    SSIM_SIGMA, SSIM_WINDOW,
};
