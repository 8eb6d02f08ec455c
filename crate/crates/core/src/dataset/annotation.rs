//! Ground-truth records and their line-delimited JSON storage.
//!
//! An annotation file starts with one header record carrying the
//! vocabulary sizes, followed by one record per frame:
//!
//! ```text
//! {"format":"dds-annotations","version":1,"num_objects":8,"num_relations":7}
//! {"video":"v0000","frame":0,"width":32,"height":32,"triplets":[...]}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const ANNOTATION_FORMAT: &str = "dds-annotations";
pub const ANNOTATION_VERSION: u32 = 1;

/// One ⟨subject, object, relations⟩ ground truth. A pair may carry several
/// relations at once; each one is a separate retrievable instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triplet {
    pub subject_box: BBox,
    pub subject_label: usize,
    pub object_box: BBox,
    pub object_label: usize,
    pub relations: Vec<usize>,
}

impl Triplet {
    pub fn classes(&self) -> impl Iterator<Item = TripletClass> + '_ {
        self.relations.iter().map(move |&r| TripletClass {
            subject: self.subject_label,
            object: self.object_label,
            relation: r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub triplets: Vec<Triplet>,
}

impl FrameAnnotation {
    pub fn new(triplets: Vec<Triplet>) -> Self {
        FrameAnnotation { triplets }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Total number of (pair, relation) instances.
    pub fn instance_count(&self) -> usize {
        self.triplets.iter().map(|t| t.relations.len()).sum()
    }

    pub fn classes(&self) -> impl Iterator<Item = TripletClass> + '_ {
        self.triplets.iter().flat_map(Triplet::classes)
    }

    pub fn validate(&self, num_objects: usize, num_relations: usize) -> Result<()> {
        for (i, t) in self.triplets.iter().enumerate() {
            if t.subject_label >= num_objects || t.object_label >= num_objects {
                return Err(Error::invalid(format!(
                    "triplet {i}: object label out of range (have {num_objects} classes)"
                )));
            }
            if t.relations.is_empty() {
                return Err(Error::invalid(format!("triplet {i}: empty relation set")));
            }
            if let Some(r) = t.relations.iter().find(|&&r| r >= num_relations) {
                return Err(Error::invalid(format!(
                    "triplet {i}: relation {r} out of range (have {num_relations})"
                )));
            }
            let mut sorted = t.relations.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != t.relations.len() {
                return Err(Error::invalid(format!("triplet {i}: duplicate relations")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoAnnotation {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameAnnotation>,
}

impl VideoAnnotation {
    pub fn classes(&self) -> impl Iterator<Item = TripletClass> + '_ {
        self.frames.iter().flat_map(FrameAnnotation::classes)
    }
}

/// A ⟨subject label, object label, relation label⟩ category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletClass {
    pub subject: usize,
    pub object: usize,
    pub relation: usize,
}

impl TripletClass {
    pub fn new(subject: usize, object: usize, relation: usize) -> Self {
        TripletClass {
            subject,
            object,
            relation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    version: u32,
    num_objects: usize,
    num_relations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    video: String,
    frame: usize,
    width: usize,
    height: usize,
    triplets: Vec<Triplet>,
}

/// Annotations of a corpus together with the vocabulary sizes they were
/// validated against.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub num_objects: usize,
    pub num_relations: usize,
    pub videos: Vec<VideoAnnotation>,
}

pub fn save_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = HeaderRecord {
        format: ANNOTATION_FORMAT.into(),
        version: ANNOTATION_VERSION,
        num_objects: set.num_objects,
        num_relations: set.num_relations,
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for v in &set.videos {
        for (fi, f) in v.frames.iter().enumerate() {
            f.validate(set.num_objects, set.num_relations)?;
            let rec = FrameRecord {
                video: v.id.clone(),
                frame: fi,
                width: v.width,
                height: v.height,
                triplets: f.triplets.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, locus: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        locus: locus.to_string(),
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header: HeaderRecord = match lines.next() {
        Some((_, l)) => {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| parse_err(1, "header", e.to_string()))?
        }
        None => return Err(parse_err(1, "header", "empty file".into())),
    };
    if header.format != ANNOTATION_FORMAT || header.version != ANNOTATION_VERSION {
        return Err(parse_err(
            1,
            "header",
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }

    let mut videos: Vec<VideoAnnotation> = Vec::new();
    for (idx, l) in lines {
        let lineno = idx + 1;
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord =
            serde_json::from_str(&l).map_err(|e| parse_err(lineno, "frame record", e.to_string()))?;
        let locus = format!("video {} frame {}", rec.video, rec.frame);
        let frame = FrameAnnotation::new(rec.triplets);
        frame
            .validate(header.num_objects, header.num_relations)
            .map_err(|e| parse_err(lineno, &locus, e.to_string()))?;
        match videos.last_mut() {
            Some(v) if v.id == rec.video => {
                if rec.frame != v.frames.len() {
                    return Err(parse_err(
                        lineno,
                        &locus,
                        format!("expected frame {}", v.frames.len()),
                    ));
                }
                if (rec.width, rec.height) != (v.width, v.height) {
                    return Err(parse_err(lineno, &locus, "frame size changed".into()));
                }
                v.frames.push(frame);
            }
            _ => {
                if videos.iter().any(|v| v.id == rec.video) {
                    return Err(parse_err(lineno, &locus, "video records not contiguous".into()));
                }
                if rec.frame != 0 {
                    return Err(parse_err(lineno, &locus, "video must start at frame 0".into()));
                }
                videos.push(VideoAnnotation {
                    id: rec.video,
                    width: rec.width,
                    height: rec.height,
                    frames: vec![frame],
                });
            }
        }
    }
    Ok(AnnotationSet {
        num_objects: header.num_objects,
        num_relations: header.num_relations,
        videos,
    })
}
