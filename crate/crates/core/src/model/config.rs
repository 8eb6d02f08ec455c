use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the relation and object branches are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BranchLayout {
    /// One encoder, one spatio-temporal decoder and one query set feeding
    /// both object and relation heads.
    Single,
    /// Two spatio-temporal decoders reading the same encoded features.
    SharedEncoder,
    /// Separate encoders, decoders and queries per branch.
    #[default]
    Decoupled,
}

/// Query-sharing ablation: one branch's decoder output becomes the other
/// branch's input queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuerySharing {
    #[default]
    None,
    ObjectToRelation,
    RelationToObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub d_model: usize,
    /// Queries per branch.
    pub num_queries: usize,
    pub num_heads: usize,
    /// Hidden width of every transformer FFN.
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub object_decoder_layers: usize,
    pub relation_decoder_layers: usize,
    pub temporal_layers: usize,
    /// Real object classes `N_o` (the no-triplet class is added on top).
    pub num_objects: usize,
    /// Relation classes `N_r`.
    pub num_relations: usize,
    /// Label of the fixed subject class when every subject is the same agent.
    pub subject_fixed: Option<usize>,
    pub image_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Output channels of each stride-2 backbone stage.
    pub backbone_channels: Vec<usize>,
    pub layout: BranchLayout,
    pub query_sharing: QuerySharing,
    /// Whether the relation-region head is supervised.
    pub relation_region: bool,
    /// Backpropagate through the embeddings handed from frame to frame.
    pub temporal_backprop: bool,
}

/// Sized for 32×32 synthetic frames on a CPU.
impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            num_queries: 8,
            num_heads: 4,
            ffn_dim: 64,
            encoder_layers: 1,
            object_decoder_layers: 2,
            relation_decoder_layers: 1,
            temporal_layers: 1,
            num_objects: 8,
            num_relations: 7,
            subject_fixed: None,
            image_channels: 3,
            image_height: 32,
            image_width: 32,
            backbone_channels: vec![32, 64],
            layout: BranchLayout::Decoupled,
            query_sharing: QuerySharing::None,
            relation_region: true,
            temporal_backprop: false,
        }
    }
}

impl ModelConfig {
    /// Transformer widths and depths of the full-size detector.
    pub fn large(num_objects: usize, num_relations: usize) -> Self {
        ModelConfig {
            d_model: 256,
            num_queries: 64,
            num_heads: 8,
            ffn_dim: 2048,
            encoder_layers: 6,
            object_decoder_layers: 6,
            relation_decoder_layers: 3,
            num_objects,
            num_relations,
            ..ModelConfig::default()
        }
    }

    /// Small configuration used for quick experiments and tests.
    pub fn tiny(num_objects: usize, num_relations: usize) -> Self {
        ModelConfig {
            d_model: 16,
            num_queries: 4,
            num_heads: 2,
            ffn_dim: 32,
            encoder_layers: 1,
            object_decoder_layers: 2,
            relation_decoder_layers: 1,
            temporal_layers: 1,
            num_objects,
            num_relations,
            image_height: 16,
            image_width: 16,
            backbone_channels: vec![8, 16],
            ..ModelConfig::default()
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    pub fn feature_height(&self) -> usize {
        self.image_height / self.stride()
    }

    pub fn feature_width(&self) -> usize {
        self.image_width / self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return err(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.num_heads
            ));
        }
        if self.d_model % 4 != 0 {
            return err(format!("d_model {} must be a multiple of 4", self.d_model));
        }
        if self.num_queries == 0 {
            return err("num_queries must be at least 1".into());
        }
        let layers = [
            ("encoder_layers", self.encoder_layers),
            ("object_decoder_layers", self.object_decoder_layers),
            ("relation_decoder_layers", self.relation_decoder_layers),
            ("temporal_layers", self.temporal_layers),
            ("ffn_dim", self.ffn_dim),
            ("num_objects", self.num_objects),
            ("num_relations", self.num_relations),
            ("image_channels", self.image_channels),
        ];
        for (name, v) in layers {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return err("backbone needs at least one stage with nonzero channels".into());
        }
        let s = self.stride();
        if self.image_height % s != 0 || self.image_width % s != 0 || self.image_height < s {
            return err(format!(
                "image {}x{} not divisible by backbone stride {s}",
                self.image_height, self.image_width
            ));
        }
        if let Some(agent) = self.subject_fixed {
            if agent >= self.num_objects {
                return err(format!("fixed subject label {agent} out of range"));
            }
        }
        if self.layout == BranchLayout::Single && self.query_sharing != QuerySharing::None {
            return err("query sharing needs two branches".into());
        }
        Ok(())
    }
}
