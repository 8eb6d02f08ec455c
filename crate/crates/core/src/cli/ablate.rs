use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::commands::{open_data, train_videos, write_text};
use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::RegionMode;
use crate::metrics::PartitionScores;
use crate::model::{BranchLayout, QuerySharing};
use crate::pipeline::evaluate_videos;

pub const VARIANTS: &[&str] = &[
    "base",
    "shared-enc",
    "dds",
    "no-region",
    "o-to-r",
    "r-to-o",
    "union",
    "mixture:<theta>",
    "depth:<object>,<relation>",
];

fn unknown(name: &str) -> Error {
    Error::config(format!("unknown ablation variant {name:?}; supported: {}", VARIANTS.join(", ")))
}

/// Applies a named variant on top of `base`. Every variant first resets the
/// architecture switches to the full decoupled model.
pub fn apply_variant(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let m = &mut cfg.model;
    m.layout = BranchLayout::Decoupled;
    m.query_sharing = QuerySharing::None;
    m.relation_region = true;
    cfg.loss.region = RegionMode::Union;
    match name {
        "dds" | "union" => {}
        "base" => m.layout = BranchLayout::Single,
        "shared-enc" => m.layout = BranchLayout::SharedEncoder,
        "no-region" => m.relation_region = false,
        "o-to-r" => m.query_sharing = QuerySharing::ObjectToRelation,
        "r-to-o" => m.query_sharing = QuerySharing::RelationToObject,
        _ => {
            if let Some(t) = name.strip_prefix("mixture:") {
                let theta: f64 = t.parse().map_err(|_| unknown(name))?;
                cfg.loss.region = RegionMode::Mixture { theta };
            } else if let Some(d) = name.strip_prefix("depth:") {
                let (o, r) = d.split_once(',').ok_or_else(|| unknown(name))?;
                m.object_decoder_layers = o.trim().parse().map_err(|_| unknown(name))?;
                m.relation_decoder_layers = r.trim().parse().map_err(|_| unknown(name))?;
            } else {
                return Err(unknown(name));
            }
        }
    }
    cfg.resolve()
}

/// Hash of every setting a variant may not touch.
pub fn shared_hash(cfg: &RunConfig) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    for (section, keys) in [
        (
            "model",
            &[
                "layout",
                "query_sharing",
                "relation_region",
                "object_decoder_layers",
                "relation_decoder_layers",
            ][..],
        ),
        ("loss", &["region", "relation_region"][..]),
    ] {
        if let Some(obj) = v.get_mut(section).and_then(|s| s.as_object_mut()) {
            for k in keys {
                obj.remove(*k);
            }
        }
    }
    let text = serde_json::to_string(&v)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub final_loss: f64,
    /// Recall at each configured K.
    pub recall: Vec<(usize, PartitionScores)>,
    pub map: PartitionScores,
    pub shared_hash: String,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "".to_string(), |x| format!("{x:.6}"))
}

pub fn table_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,final_loss");
    if let Some(first) = rows.first() {
        for (k, _) in &first.recall {
            let _ = write!(out, ",r{k}_full,r{k}_seen,r{k}_unseen");
        }
    }
    out.push_str(",map_full,map_seen,map_unseen,shared_hash\n");
    for r in rows {
        let _ = write!(out, "{},{},{:.6}", r.variant, r.seed, r.final_loss);
        for (_, s) in &r.recall {
            let _ = write!(out, ",{},{},{}", cell(s.full), cell(s.seen), cell(s.unseen));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            cell(r.map.full),
            cell(r.map.seen),
            cell(r.map.unseen),
            r.shared_hash
        );
    }
    out
}

/// Trains and evaluates every variant with the base seed, writing each
/// run under `out/<variant>/` and the merged table to `out/ablation.csv`.
pub fn ablate(base: &RunConfig, variants: &[String], out: &Path) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::config(format!("no ablation variants given; supported: {}", VARIANTS.join(", "))));
    }
    let configs = variants
        .iter()
        .map(|v| apply_variant(base, v))
        .collect::<Result<Vec<_>>>()?;
    let (corpus, split) = open_data(base)?;
    for cfg in &configs {
        cfg.check_corpus(&corpus.header)?;
    }
    let train = corpus.samples(&split.train)?;
    let test = corpus.samples(&split.test)?;
    let mut rows = Vec::new();
    for (name, cfg) in variants.iter().zip(&configs) {
        let dir = out.join(name.replace([':', ','], "_"));
        let run = train_videos(cfg, &train, &dir, None)?;
        let ev = evaluate_videos(&run.model, &test, Some(&split), &cfg.eval)?;
        rows.push(AblationRow {
            variant: name.clone(),
            seed: cfg.seed,
            final_loss: run.losses.last().map_or(f64::NAN, |b| b.total),
            recall: ev.report.recall.iter().map(|r| (r.k, r.scores)).collect(),
            map: ev.report.map,
            shared_hash: shared_hash(cfg)?,
        });
    }
    write_text(&out.join("ablation.csv"), &table_csv(&rows))?;
    Ok(rows)
}
