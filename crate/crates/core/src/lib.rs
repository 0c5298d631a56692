//! radqc audits multi-annotator chest X-ray detection corpora: DICOM header
//! metadata, annotation-table consistency, lesion placement symmetry, detector
//! scoring, and subgroup fairness of a detector's image-level calls.
//!
//! The crate is organized around one pass over a corpus directory (DICOM files
//! plus an annotation CSV, optionally a prediction CSV) producing structured
//! audit reports. Every analysis is deterministic: rerunning on the same corpus
//! yields byte-identical output.

pub mod annotations;
pub mod config;
pub mod consistency;
pub mod detection;
pub mod dicom;
pub mod fairness;
pub mod metadata;
pub mod spatial;
pub mod synth;
pub(crate) mod util;

pub use annotations::{AnnotationRecord, BBox, ClassLabel, ImageIndex};
pub use dicom::{DicomError, DicomHeader};
