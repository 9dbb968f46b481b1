//! JSON-lines sample manifests.
//!
//! One object per line:
//!
//! ```text
//! {"image": "img/0001.ppm", "boxes": [[x, y, w, h]], "shell_boxes": [[[x, y, w, h], ...]],
//!  "label": "broken", "mask": "masks/0001.pgm", "split": "test", "id": "0001"}
//! ```
//!
//! Insulator `boxes` are in image pixels; `shell_boxes[i]` are relative to
//! the crop of `boxes[i]`. Without `boxes` the whole image is one insulator,
//! and an insulator without shell boxes is a single shell. Masks share the
//! image's coordinate frame. Relative paths resolve against the manifest's
//! directory. Blank lines are skipped but still counted.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ClassSet;
use crate::error::{Error, Result};
use crate::image::BoundingBox;
use crate::pnm;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// A manifest line as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoundingBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shell_boxes: Vec<Vec<BoundingBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub split: Split,
}

/// Shell location: which insulator it belongs to and where, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShellRef {
    pub insulator: usize,
    /// Box relative to the insulator crop.
    pub local: BoundingBox,
    /// Same box in image coordinates.
    pub absolute: BoundingBox,
}

/// A validated manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub id: String,
    pub image: PathBuf,
    pub boxes: Vec<BoundingBox>,
    pub shells: Vec<ShellRef>,
    pub label: Option<usize>,
    pub mask: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

impl From<RecordError> for Error {
    fn from(e: RecordError) -> Self {
        Error::Manifest {
            line: e.line,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub errors: Vec<RecordError>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Reads and validates a manifest. Only an unreadable manifest file is
/// fatal; bad lines end up in [`Manifest::errors`].
pub fn ingest_manifest(path: impl AsRef<Path>, classes: &ClassSet) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(parse_manifest(&text, base, classes))
}

pub fn parse_manifest(text: &str, base: &Path, classes: &ClassSet) -> Manifest {
    let mut out = Manifest::default();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match validate_line(raw, line, base, classes) {
            Ok(rec) if !ids.insert(rec.id.clone()) => out.errors.push(RecordError {
                line,
                message: format!("duplicate sample id {:?}", rec.id),
            }),
            Ok(rec) => out.records.push(rec),
            Err(message) => out.errors.push(RecordError { line, message }),
        }
    }
    out
}

fn validate_line(
    raw: &str,
    line: usize,
    base: &Path,
    classes: &ClassSet,
) -> Result<SampleRecord, String> {
    let parsed: ManifestLine =
        serde_json::from_str(raw).map_err(|e| format!("malformed record: {e}"))?;
    let image = base.join(&parsed.image);
    let (width, height) = pnm::read_dimensions(&image).map_err(|e| e.to_string())?;

    let boxes = if parsed.boxes.is_empty() {
        vec![BoundingBox::full(width, height)]
    } else {
        parsed.boxes
    };
    for b in &boxes {
        b.check_within(width, height)
            .map_err(|e| format!("insulator {e}"))?;
    }
    if parsed.shell_boxes.len() > boxes.len() {
        return Err(format!(
            "{} shell box lists for {} insulator boxes",
            parsed.shell_boxes.len(),
            boxes.len()
        ));
    }
    let mut shells = Vec::new();
    for (k, ins) in boxes.iter().enumerate() {
        let locals = match parsed.shell_boxes.get(k) {
            Some(list) if !list.is_empty() => list.clone(),
            _ => vec![BoundingBox::full(ins.width, ins.height)],
        };
        for local in locals {
            local
                .check_within(ins.width, ins.height)
                .map_err(|e| format!("shell box of insulator {k}: {e}"))?;
            shells.push(ShellRef {
                insulator: k,
                local,
                absolute: BoundingBox::new(
                    ins.x + local.x,
                    ins.y + local.y,
                    local.width,
                    local.height,
                ),
            });
        }
    }

    let label = match &parsed.label {
        Some(name) => Some(
            classes
                .index_of(name)
                .ok_or_else(|| format!("unknown label {name:?}"))?,
        ),
        None => None,
    };
    let mask = match &parsed.mask {
        Some(m) => {
            let m = base.join(m);
            let dims = pnm::read_dimensions(&m).map_err(|e| e.to_string())?;
            if dims != (width, height) {
                return Err(format!(
                    "mask is {}x{} but image is {width}x{height}",
                    dims.0, dims.1
                ));
            }
            Some(m)
        }
        None => None,
    };
    let id = match parsed.id {
        Some(id) => id,
        None => parsed
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| "image path has no file name".to_string())?,
    };
    if id.is_empty() || id.contains(['/', '\\']) {
        return Err(format!("sample id {id:?} is not usable as a file name"));
    }
    Ok(SampleRecord {
        line,
        id,
        image,
        boxes,
        shells,
        label,
        mask,
        split: parsed.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn write_img(dir: &Path, name: &str, w: usize, h: usize) {
        pnm::write_image(
            dir.join(name),
            &Image::filled(w, h, &[0.5, 0.5, 0.5]).unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn empty_file_gives_no_records() {
        let m = parse_manifest("", Path::new("."), &ClassSet::default());
        assert!(m.records.is_empty() && m.errors.is_empty());
    }

    #[test]
    fn records_keep_file_order_and_bad_boxes_only_reject_their_line() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.ppm", 10, 8);
        write_img(dir.path(), "b.ppm", 10, 8);
        write_img(dir.path(), "c.ppm", 10, 8);
        let text = [
            r#"{"image": "a.ppm", "boxes": [[1, 1, 8, 6]], "shell_boxes": [[[0, 0, 4, 6], [4, 0, 4, 6]]], "label": "broken"}"#,
            r#"{"image": "b.ppm", "boxes": [[5, 5, 6, 6]], "label": "flash"}"#,
            "",
            r#"{"image": "c.ppm", "split": "train"}"#,
            r#"{"image": "c.ppm", "id": "c2", "label": "scratched"}"#,
            "not json",
        ]
        .join("\n");
        let m = parse_manifest(&text, dir.path(), &ClassSet::default());
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].id, "a");
        assert_eq!(m.records[0].shells.len(), 2);
        assert_eq!(
            m.records[0].shells[1].absolute,
            BoundingBox::new(5, 1, 4, 6)
        );
        assert_eq!(m.records[0].label, Some(0));
        assert_eq!(m.records[1].line, 4);
        assert_eq!(m.records[1].split, Split::Train);
        assert_eq!(m.records[1].shells[0].absolute, BoundingBox::full(10, 8));
        let lines: Vec<usize> = m.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 5, 6]);
        assert!(m.errors[0].message.contains("outside image 10x8"));
    }

    #[test]
    fn missing_image_and_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.ppm", 4, 4);
        let text = "{\"image\": \"a.ppm\"}\n{\"image\": \"a.ppm\"}\n{\"image\": \"nope.ppm\"}\n";
        let m = parse_manifest(text, dir.path(), &ClassSet::default());
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.errors.len(), 2);
        assert!(m.errors[0].message.contains("duplicate"));
    }

    #[test]
    fn mask_must_match_image() {
        let dir = tempfile::tempdir().unwrap();
        write_img(dir.path(), "a.ppm", 4, 4);
        pnm::write_image(
            dir.path().join("m.pgm"),
            &Image::filled(3, 4, &[0.0]).unwrap(),
        )
        .unwrap();
        let m = parse_manifest(
            r#"{"image": "a.ppm", "mask": "m.pgm"}"#,
            dir.path(),
            &ClassSet::default(),
        );
        assert_eq!(m.errors.len(), 1);
    }

    #[test]
    fn line_round_trips_through_json() {
        let l = ManifestLine {
            id: None,
            image: "x.ppm".into(),
            boxes: vec![BoundingBox::new(1, 2, 3, 4)],
            shell_boxes: vec![],
            label: Some("healthy".into()),
            mask: None,
            split: Split::Val,
        };
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(
            s,
            r#"{"image":"x.ppm","boxes":[[1,2,3,4]],"label":"healthy","split":"val"}"#
        );
        assert_eq!(serde_json::from_str::<ManifestLine>(&s).unwrap(), l);
    }
}
