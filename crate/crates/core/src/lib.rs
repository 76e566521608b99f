//! Equipotential learning for boundary-aware semantic segmentation.
//!
//! Probability fields are converted into per-direction potential fields by an
//! anisotropic convolution (a fixed box kernel masked to a ray per direction).
//! Two losses act in that potential domain: a point loss regressing the
//! fields, and an equipotential line loss matching the iso-energy contours
//! near each class boundary. The crate also carries everything needed to
//! exercise those losses end to end at small scale: a finite-difference
//! gradient checker, synthetic boundary-stress datasets, a tiny fully
//! convolutional network with an SGD trainer, and segmentation metrics.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod datagen;
pub mod error;
pub mod field;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use field::{
    anisotropic_adjoint, anisotropic_convolve, make_splitter, one_hot, potential_oracle,
    standard_convolve, AcConfig, Conversion, Direction, FieldDims, LabelMap, PotentialFieldSet,
    ProbabilityField, Splitter, SplitterKind,
};
pub use losses::{
    build_line_regions, combine_losses, cross_entropy_loss, dice_loss, equipotential_line_loss,
    point_loss, LineRegions, LossConfig, LossValue, Norm, Reduction,
};
pub use datagen::{generate_dataset, Sample, SceneKind, SceneSpec};
pub use gradcheck::{finite_diff_gradient, run_gradcheck, GradReport, LossKind};
pub use image::Image;
pub use metrics::{boundary_band, boundary_fmeasure, miou, trimap_iou, EvalReport, Evaluator};
pub use model::{train, TinyNet, TrainConfig};
