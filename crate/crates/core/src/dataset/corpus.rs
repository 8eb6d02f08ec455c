//! On-disk corpus layout:
//!
//! ```text
//! header.json          vocabularies, generator config, seed
//! annotations.jsonl    one record per frame
//! frames/<video>/<frame>.png
//! manifest.json        sha256 of every file above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::annotation::{load_annotations, save_annotations, AnnotationSet};
use super::synth::{generate_video, GenConfig, RELATION_NAMES};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::train::VideoSample;

pub const CORPUS_FORMAT: &str = "dds-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub object_names: Vec<String>,
    pub relation_names: Vec<String>,
    /// Label shared by every subject, when subjects are fixed.
    pub subject_fixed: Option<usize>,
    pub generator: GenConfig,
}

fn frame_path(video: &str, frame: usize) -> PathBuf {
    PathBuf::from("frames").join(video).join(format!("{frame:03}.png"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates and writes a corpus into `dir`.
pub fn write_corpus(dir: &Path, cfg: &GenConfig, seed: u64) -> Result<CorpusHeader> {
    cfg.validate()?;
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: 1,
        seed,
        object_names: cfg.object_names(),
        relation_names: RELATION_NAMES.iter().map(|s| s.to_string()).collect(),
        subject_fixed: cfg.subject_fixed.then_some(0),
        generator: cfg.clone(),
    };
    let mut files = vec![PathBuf::from("header.json"), PathBuf::from("annotations.jsonl")];
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for i in 0..cfg.num_videos {
        let v = generate_video(cfg, seed, i);
        let vdir = dir.join("frames").join(&v.annotation.id);
        fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        for (t, img) in v.frames.iter().enumerate() {
            let rel = frame_path(&v.annotation.id, t);
            img.save_png(&dir.join(&rel))?;
            files.push(rel);
        }
        videos.push(v.annotation);
    }
    write_json(&dir.join("header.json"), &header)?;
    let set = AnnotationSet {
        num_objects: cfg.num_objects,
        num_relations: RELATION_NAMES.len(),
        videos,
    };
    save_annotations(&set, &dir.join("annotations.jsonl"))?;
    let mut manifest = BTreeMap::new();
    for f in files {
        let key = f.to_string_lossy().replace('\\', "/");
        manifest.insert(key, sha256_file(&dir.join(&f))?);
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(header)
}

/// A corpus opened from disk. Frames are read on demand.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub header: CorpusHeader,
    pub annotations: AnnotationSet,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let hp = dir.join("header.json");
        let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: CorpusHeader = serde_json::from_str(&text)?;
        if header.format != CORPUS_FORMAT {
            return Err(Error::invalid(format!("{}: not a corpus header", hp.display())));
        }
        let annotations = load_annotations(&dir.join("annotations.jsonl"))?;
        if annotations.num_objects != header.object_names.len()
            || annotations.num_relations != header.relation_names.len()
        {
            return Err(Error::invalid("annotation vocabulary disagrees with corpus header"));
        }
        Ok(Corpus {
            dir: dir.to_path_buf(),
            header,
            annotations,
        })
    }

    pub fn video_index(&self, id: &str) -> Option<usize> {
        self.annotations.videos.iter().position(|v| v.id == id)
    }

    pub fn frames(&self, index: usize) -> Result<Vec<Image>> {
        let v = &self.annotations.videos[index];
        (0..v.frames.len())
            .map(|t| Image::load_png(&self.dir.join(frame_path(&v.id, t))))
            .collect()
    }

    pub fn sample(&self, index: usize) -> Result<VideoSample> {
        let v = &self.annotations.videos[index];
        Ok(VideoSample {
            id: v.id.clone(),
            frames: self.frames(index)?,
            annotations: v.frames.clone(),
        })
    }

    /// Loads the listed videos in the given order.
    pub fn samples(&self, ids: &[String]) -> Result<Vec<VideoSample>> {
        ids.iter()
            .map(|id| {
                let i = self
                    .video_index(id)
                    .ok_or_else(|| Error::invalid(format!("video {id} not in corpus")))?;
                self.sample(i)
            })
            .collect()
    }

    /// Recomputes every file hash and compares it with `manifest.json`.
    pub fn verify_manifest(&self) -> Result<()> {
        let mp = self.dir.join("manifest.json");
        let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: BTreeMap<String, String> = serde_json::from_str(&text)?;
        for (rel, want) in &manifest {
            if &sha256_file(&self.dir.join(rel))? != want {
                return Err(Error::invalid(format!("{rel}: content hash mismatch")));
            }
        }
        Ok(())
    }
}
