use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criterion::LossConfig;
use crate::dataset::{CorpusHeader, GenConfig, Holdout, SplitConfig, TripletClass};
use crate::error::{Error, Result};
use crate::matching::MatchWeights;
use crate::metrics::EvalOptions;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    pub split: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: PathBuf::from("corpus"),
            split: PathBuf::from("corpus/split.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub max_moved_fraction: f64,
    pub min_videos_per_unseen: usize,
    /// Number of classes to hold out when `holdout_classes` is empty.
    pub holdout_count: usize,
    /// Explicit `[subject, object, relation]` classes to hold out.
    pub holdout_classes: Vec<[usize; 3]>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let c = SplitConfig::default();
        SplitSection {
            test_fraction: c.test_fraction,
            max_moved_fraction: c.max_moved_fraction,
            min_videos_per_unseen: c.min_videos_per_unseen,
            holdout_count: 8,
            holdout_classes: Vec::new(),
        }
    }
}

impl SplitSection {
    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_fraction: self.test_fraction,
            max_moved_fraction: self.max_moved_fraction,
            min_videos_per_unseen: self.min_videos_per_unseen,
        }
    }

    pub fn holdout(&self) -> Holdout {
        if self.holdout_classes.is_empty() {
            Holdout::Count(self.holdout_count)
        } else {
            Holdout::Classes(
                self.holdout_classes
                    .iter()
                    .map(|&[s, o, r]| TripletClass::new(s, o, r))
                    .collect(),
            )
        }
    }
}

/// Everything one run depends on. Written back in full, defaults included,
/// next to every artifact it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub generate: GenConfig,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub matching: MatchWeights,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            generate: GenConfig::default(),
            split: SplitSection::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            matching: MatchWeights::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

/// Checks that a model fits the corpus it is trained or evaluated on.
pub fn check_model_corpus(m: &ModelConfig, header: &CorpusHeader) -> Result<()> {
    let g = &header.generator;
    let mut problems = Vec::new();
    if m.num_objects != header.object_names.len() {
        problems.push(format!("model.num_objects = {} but the corpus has {}", m.num_objects, header.object_names.len()));
    }
    if m.num_relations != header.relation_names.len() {
        problems.push(format!(
            "model.num_relations = {} but the corpus has {}",
            m.num_relations,
            header.relation_names.len()
        ));
    }
    if m.image_height != g.image_size || m.image_width != g.image_size {
        problems.push(format!(
            "model expects {}x{} frames but the corpus has {}x{}",
            m.image_height, m.image_width, g.image_size, g.image_size
        ));
    }
    let n = g.max_objects_per_frame;
    let pairs = if header.subject_fixed.is_some() { n.saturating_sub(1) } else { n * n.saturating_sub(1) / 2 };
    if m.num_queries < pairs {
        problems.push(format!("model.num_queries = {} cannot cover the {pairs} pairs a frame may hold", m.num_queries));
    }
    if m.subject_fixed != header.subject_fixed {
        problems.push(format!(
            "model.subject_fixed = {:?} but the corpus has {:?}",
            m.subject_fixed, header.subject_fixed
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::config(problems.join("; ")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Aligns the loss and evaluation switches with the model and checks
    /// every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.loss.subject_fixed = self.model.subject_fixed.is_some();
        self.loss.relation_region = self.model.relation_region;
        self.eval.subject_fixed = self.model.subject_fixed.is_some();
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.loss.region.validate().map_err(|e| Error::config(format!("loss.region: {e}")))?;
        let c = self.loss.coeffs;
        for (name, v) in [
            ("loss.coeffs.giou", c.giou),
            ("loss.coeffs.l1", c.l1),
            ("loss.coeffs.obj", c.obj),
            ("loss.coeffs.rel", c.rel),
            ("loss.no_object_weight", self.loss.no_object_weight),
            ("matching.boxes", self.matching.boxes),
            ("matching.class", self.matching.class),
            ("matching.relation", self.matching.relation),
        ] {
            check_nonneg(name, v)?;
        }
        Ok(self)
    }

    pub fn check_corpus(&self, header: &CorpusHeader) -> Result<()> {
        check_model_corpus(&self.model, header)
    }
    /// Settings that a resumed run must share with the checkpoint: all but
    /// the step budget and checkpoint cadence.
    pub fn resume_key(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(t) = v.get_mut("train").and_then(|t| t.as_object_mut()) {
            t.remove("steps");
            t.remove("checkpoint_every");
        }
        Ok(v)
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}
