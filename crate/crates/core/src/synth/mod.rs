//! Synthetic lesion images, artifact domains, and dataset splits.

mod artifact;
mod dataset;
mod export;
mod manifest_io;
mod render;
mod trap;

pub use artifact::ArtifactKind;
pub use dataset::{generate_dataset, materialize_record, DatasetManifest, DomainSpec, RecordRef, Split};
pub use export::{export_png, to_rgb8};
pub use manifest_io::{manifests_from_csv, manifests_to_csv, read_manifests, write_manifests, MANIFEST_HEADER};
pub use render::{apply_artifact, render_base_lesion, ruler_edge, Edge, ImageRecord, MIN_IMAGE_SIZE};
pub use trap::{build_trap_split, measure_artifact_label_correlation, TrapSplitSpec, MIN_TRAP_SPLIT};
