//! Frames, sequences, crops, label assignment, synthetic generation, OTB
//! layout IO and training-pair sampling.

pub mod crop;
pub mod image;
pub mod labels;
pub mod otb;
pub mod pairs;
pub mod synth;

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use image::RgbImage;

pub const TAG_SCALE: &str = "scale-variation";
pub const TAG_OCCLUSION: &str = "occlusion";
pub const TAG_SIMILAR: &str = "similar-object";

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceAnnotation {
    pub name: String,
    /// Frame files in playback order; empty for in-memory sequences.
    pub frames: Vec<PathBuf>,
    pub gt: Vec<BBox>,
    pub attributes: BTreeSet<String>,
    /// Frames whose box extends past the frame border.
    pub out_of_view: Vec<bool>,
}

impl SequenceAnnotation {
    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

/// A sequence with its frames decoded.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub annotation: SequenceAnnotation,
    pub images: Vec<RgbImage>,
}

impl Sequence {
    pub fn new(annotation: SequenceAnnotation, images: Vec<RgbImage>) -> Result<Self> {
        if images.len() != annotation.gt.len() {
            return Err(Error::Ingestion {
                sequence: annotation.name.clone(),
                detail: format!("{} frames but {} boxes", images.len(), annotation.gt.len()),
            });
        }
        Ok(Self { annotation, images })
    }

    pub fn name(&self) -> &str {
        &self.annotation.name
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
