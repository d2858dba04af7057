//! HOG feature pyramids, patch sampling, descriptors, and NCC.

pub mod hog;
mod ncc;
mod sampling;

pub use hog::{
    cell_histograms, compute_pyramid, extract_descriptor, footprint_from_geometry,
    level_geometries, CellHistograms, HogConfig, HogLevel, HogPyramid, LevelGeometry,
    PatchDescriptor, PatchRef, SUPPORT_CELLS, WINDOW_CELLS,
};
pub use ncc::ncc;
pub use sampling::{corpus_energy_median, resolve_energy_floor, sample_patches, SampleConfig};
