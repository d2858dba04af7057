//! Dataset manifests, fold splitting, image loading, and the synthetic
//! planted-pattern corpus generator.

mod image;
mod manifest;
pub mod synth;

pub use image::{load_gray, GrayImage, PixelPatch};
pub use manifest::{
    build_manifest, fold_assignment, Annotation, AnnotationMap, DatasetManifest, Fold,
    ManifestEntry, Role, MANIFEST_VERSION, MIN_DISCOVERY_SIDE,
};
pub use synth::{gen_synthetic, render_corpus, scene_labels, Placement, SynthConfig, SynthCorpus};
