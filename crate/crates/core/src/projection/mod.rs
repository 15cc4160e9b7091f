//! Coalescing, de-coalescing and interpolation between model levels.

mod mapping;
pub mod maps;
mod ops;
mod symmetry;

pub use mapping::{DepthFamily, Group, GroupMaps, LevelMapping, WidthFamily, WidthMaps};
pub use maps::{
    build_depth_adjacent, build_depth_stack, build_width_adjacent, build_width_stack, derive_f_in,
    derive_g, derive_t_in, derive_t_out, DepthMap, Matrix,
};
pub use ops::{coalesce_model, decoalesce_model, interpolate};
pub use symmetry::{duplicate_classes, duplicate_grad_spread, SymmetryReport};
