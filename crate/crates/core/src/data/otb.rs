//! OTB directory layout: `<seq>/img/%04d.ppm` plus `<seq>/groundtruth_rect.txt`
//! with one `x,y,w,h` line per frame (comma or tab separated). A dataset root
//! holds a `manifest.txt` listing `name<TAB>tag,tag,...` per sequence.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::image::RgbImage;
use super::{Sequence, SequenceAnnotation};
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const GT_FILE: &str = "groundtruth_rect.txt";
pub const MANIFEST: &str = "manifest.txt";

fn ingestion(sequence: &str, detail: impl Into<String>) -> Error {
    Error::Ingestion {
        sequence: sequence.to_owned(),
        detail: detail.into(),
    }
}

pub fn parse_gt_line(line: &str) -> Option<BBox> {
    let fields: Vec<f64> = line
        .split(|c: char| c == ',' || c == '\t' || c == ' ')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect::<Option<_>>()?;
    match fields[..] {
        [x, y, w, h] => Some(BBox::from_corner(x, y, w, h)),
        _ => None,
    }
}

pub fn frame_name(index: usize) -> String {
    format!("{:04}.ppm", index + 1)
}

/// Reads the annotation of one sequence directory; frames stay on disk.
pub fn load_otb(dir: &Path) -> Result<SequenceAnnotation> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let gt_path = dir.join(GT_FILE);
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let mut gt = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let b = parse_gt_line(line.trim())
            .ok_or_else(|| ingestion(&name, format!("line {} is not `x,y,w,h`: {line:?}", i + 1)))?;
        gt.push(b);
    }
    let img_dir = dir.join("img");
    let mut frames: Vec<PathBuf> = fs::read_dir(&img_dir)
        .map_err(|e| Error::io(&img_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    frames.sort();
    if frames.len() != gt.len() {
        return Err(ingestion(
            &name,
            format!("{} frames in img/ but {} ground-truth lines", frames.len(), gt.len()),
        ));
    }
    let out_of_view = vec![false; gt.len()];
    Ok(SequenceAnnotation {
        name,
        frames,
        gt,
        attributes: BTreeSet::new(),
        out_of_view,
    })
}

/// Loads an annotation and decodes its frames.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let mut annotation = load_otb(dir)?;
    let images = annotation
        .frames
        .iter()
        .map(|p| RgbImage::read_ppm(p))
        .collect::<Result<Vec<_>>>()?;
    for (i, (img, b)) in images.iter().zip(&annotation.gt).enumerate() {
        let (w, h) = (img.width() as f64, img.height() as f64);
        annotation.out_of_view[i] = b.left() < -0.5 || b.top() < -0.5 || b.right() > w - 0.5 || b.bottom() > h - 0.5;
    }
    Sequence::new(annotation, images)
}

pub fn write_sequence(root: &Path, seq: &Sequence) -> Result<PathBuf> {
    let dir = root.join(seq.name());
    let img_dir = dir.join("img");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (i, img) in seq.images.iter().enumerate() {
        img.write_ppm(&img_dir.join(frame_name(i)))?;
    }
    let gt: String = seq
        .annotation
        .gt
        .iter()
        .map(|b| {
            let [x, y, w, h] = b.corner();
            format!("{x},{y},{w},{h}\n")
        })
        .collect();
    let gt_path = dir.join(GT_FILE);
    fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub attributes: BTreeSet<String>,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            let tags: Vec<&str> = e.attributes.iter().map(String::as_str).collect();
            let tags = if tags.is_empty() { "-".to_owned() } else { tags.join(",") };
            format!("{}\t{tags}\n", e.name)
        })
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let mut parts = line.split('\t');
            let name = parts.next().unwrap_or_default().trim().to_owned();
            if name.is_empty() {
                return Err(Error::Config(format!("manifest line without a name: {line:?}")));
            }
            let attributes = parts
                .next()
                .unwrap_or("-")
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty() && *t != "-")
                .map(String::from)
                .collect();
            Ok(ManifestEntry { name, attributes })
        })
        .collect()
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text)
}

/// Writes every sequence plus the manifest.
pub fn write_dataset(root: &Path, sequences: &[Sequence]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for s in sequences {
        write_sequence(root, s)?;
    }
    let entries: Vec<ManifestEntry> = sequences
        .iter()
        .map(|s| ManifestEntry {
            name: s.name().to_owned(),
            attributes: s.annotation.attributes.clone(),
        })
        .collect();
    let path = root.join(MANIFEST);
    fs::write(&path, format_manifest(&entries)).map_err(|e| Error::io(&path, e))
}

/// Annotations of every manifest sequence, tagged with their attributes.
pub fn load_annotations(root: &Path) -> Result<Vec<SequenceAnnotation>> {
    read_manifest(root)?
        .into_iter()
        .map(|e| {
            let mut a = load_otb(&root.join(&e.name))?;
            a.name = e.name;
            a.attributes = e.attributes;
            Ok(a)
        })
        .collect()
}

/// Decoded sequences of every manifest entry.
pub fn load_dataset(root: &Path) -> Result<Vec<Sequence>> {
    read_manifest(root)?
        .into_iter()
        .map(|e| {
            let mut s = load_sequence(&root.join(&e.name))?;
            s.annotation.name = e.name;
            s.annotation.attributes = e.attributes;
            Ok(s)
        })
        .collect()
}
