//! Synthetic shape families, point-cloud normalization and probe functions.

mod cloud;
mod dataset;
mod family;
mod laplacian;
mod probe;

pub use cloud::{normalize_cloud, Normalization, Point, PointCloud};
pub use dataset::{read_jsonl, write_jsonl, Keypoint, ShapeSample};
pub use family::{generate_family, FamilyParams, Preset};
pub use laplacian::{
    knn_graph_laplacian, random_smooth_function, GraphLaplacian, SpectralBasis, DEFAULT_KNN,
};
pub use probe::{
    draw_subset, flip_bits, keypoint_distance_function, keypoint_subset_function, part_indicator,
    sample_keypoint_subset, sample_part_indicator, PartBlacklist, ProbeFunction, ProbeKind,
    DEFAULT_SIGMA,
};
