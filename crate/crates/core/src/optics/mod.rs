//! Gaussian-beam estimates of the collection optics and far-field patterns
//! from sampled near fields.

pub mod beam;
pub mod farfield;
pub mod grid_io;

pub use beam::{
    beam_divergence, lens_collection_fraction, lens_half_angle_for_fraction, mode_waist_estimate, v_number,
    CollectionFraction, Divergence, GaussianBeam, WaistEstimate,
};
pub use farfield::{far_field_transform, FarFieldOptions, FarFieldPattern, FieldGrid};
