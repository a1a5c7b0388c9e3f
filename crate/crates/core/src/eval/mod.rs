//! Cross-modal identification: sketches are matched against enrolled photos
//! by cosine distance between latent codes.

mod gallery;
mod metrics;
mod protocol;
mod report;

pub use gallery::{
    build_gallery, cosine_distance, eval_image, match_code, match_probe, GalleryEntry,
    GalleryIndex, MatchResult,
};
pub use metrics::{cmc_curve, rank_k_accuracy, Cmc};
pub use protocol::{
    cross_partition_eval, evaluate_identities, partition_split, EvalReport, PartitionResult, Split,
};
pub use report::{cmc_csv, export_report, summary_text};
