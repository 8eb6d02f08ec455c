//! Synthetic videos of moving colored shapes with geometric relation labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{AnnotationSet, FrameAnnotation, Triplet, VideoAnnotation};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;

pub const RELATION_NAMES: [&str; 7] = [
    "above",
    "below",
    "left_of",
    "right_of",
    "overlapping",
    "containing",
    "near",
];

pub const ABOVE: usize = 0;
pub const BELOW: usize = 1;
pub const LEFT_OF: usize = 2;
pub const RIGHT_OF: usize = 3;
pub const OVERLAPPING: usize = 4;
pub const CONTAINING: usize = 5;
pub const NEAR: usize = 6;

const COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [0.9, 0.15, 0.15]),
    ("green", [0.15, 0.8, 0.2]),
    ("blue", [0.2, 0.3, 0.95]),
    ("yellow", [0.95, 0.9, 0.15]),
    ("magenta", [0.9, 0.2, 0.85]),
    ("cyan", [0.15, 0.85, 0.9]),
    ("orange", [1.0, 0.55, 0.1]),
    ("white", [0.95, 0.95, 0.95]),
];

const SHAPES: [&str; 4] = ["square", "disc", "triangle", "diamond"];
pub const MAX_OBJECT_CLASSES: usize = COLORS.len() * SHAPES.len();

/// Thresholds of the relation oracle, in normalized frame units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationRules {
    /// Minimum center offset for the directional relations.
    pub margin: f64,
    /// Center-distance threshold for `near`, as a fraction of the frame
    /// diagonal.
    pub near_fraction: f64,
}

impl Default for RelationRules {
    fn default() -> Self {
        RelationRules {
            margin: 0.05,
            near_fraction: 0.25,
        }
    }
}

impl RelationRules {
    /// Relation labels of subject `s` towards object `o`, ascending.
    pub fn relations(&self, s: &BBox, o: &BBox) -> Vec<usize> {
        let mut out = Vec::new();
        if s.cy() < o.cy() - self.margin {
            out.push(ABOVE);
        }
        if s.cy() > o.cy() + self.margin {
            out.push(BELOW);
        }
        if s.cx() < o.cx() - self.margin {
            out.push(LEFT_OF);
        }
        if s.cx() > o.cx() + self.margin {
            out.push(RIGHT_OF);
        }
        let iou = s.iou(o);
        if iou > 0.0 {
            out.push(OVERLAPPING);
        }
        if s.strictly_contains(o) {
            out.push(CONTAINING);
        }
        let dist = (s.cx() - o.cx()).hypot(s.cy() - o.cy());
        if iou == 0.0 && dist < self.near_fraction * std::f64::consts::SQRT_2 {
            out.push(NEAR);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    /// Square frame side in pixels.
    pub image_size: usize,
    pub num_objects: usize,
    pub min_objects_per_frame: usize,
    pub max_objects_per_frame: usize,
    /// Box side range, normalized.
    pub min_size: f64,
    pub max_size: f64,
    /// Maximum per-frame displacement, normalized.
    pub max_speed: f64,
    /// Category `k` is drawn with weight `(k + 1)^-long_tail`.
    pub long_tail: f64,
    /// Chance that a video places its second object inside the first.
    pub contain_prob: f64,
    /// Category 0 acts as the subject of every triplet.
    pub subject_fixed: bool,
    /// Triplet classes the split is expected to hold out; checked against
    /// the vocabulary size.
    pub unseen_triplets: usize,
    /// Amplitude of background pixel noise.
    pub noise: f64,
    pub rules: RelationRules,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_videos: 240,
            frames_per_video: 8,
            image_size: 32,
            num_objects: 8,
            min_objects_per_frame: 2,
            max_objects_per_frame: 3,
            min_size: 0.18,
            max_size: 0.4,
            max_speed: 0.04,
            long_tail: 0.6,
            contain_prob: 0.2,
            subject_fixed: false,
            unseen_triplets: 8,
            noise: 0.04,
            rules: RelationRules::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.num_objects < 6 || self.num_objects > MAX_OBJECT_CLASSES {
            return err(format!(
                "num_objects must lie in 6..={MAX_OBJECT_CLASSES}, got {}",
                self.num_objects
            ));
        }
        if self.frames_per_video == 0 {
            return err("frames_per_video must be at least 1".into());
        }
        if self.image_size < 8 {
            return err("image_size must be at least 8".into());
        }
        if self.min_objects_per_frame < 2 || self.max_objects_per_frame < self.min_objects_per_frame {
            return err("need 2 <= min_objects_per_frame <= max_objects_per_frame".into());
        }
        let real = if self.subject_fixed { self.num_objects - 1 } else { self.num_objects };
        if self.max_objects_per_frame > real + usize::from(self.subject_fixed) {
            return err("more objects per frame than categories".into());
        }
        if !(0.0 < self.min_size && self.min_size <= self.max_size && self.max_size < 0.5) {
            return err("need 0 < min_size <= max_size < 0.5".into());
        }
        for (name, v) in [
            ("max_speed", self.max_speed),
            ("long_tail", self.long_tail),
            ("noise", self.noise),
            ("margin", self.rules.margin),
            ("near_fraction", self.rules.near_fraction),
        ] {
            if !v.is_finite() || v < 0.0 {
                return err(format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.contain_prob) {
            return err("contain_prob must lie in [0, 1]".into());
        }
        // every unseen triplet needs its subject, object and relation to
        // survive in some other seen triplet
        let subjects = if self.subject_fixed { 1 } else { self.num_objects };
        let objects = if self.subject_fixed { self.num_objects - 1 } else { self.num_objects };
        let classes = subjects * objects * RELATION_NAMES.len();
        let spare = classes.saturating_sub(self.num_objects.max(RELATION_NAMES.len()));
        if self.unseen_triplets > spare / 2 {
            return err(format!(
                "vocabulary of {} objects x {} relations ({classes} triplet classes) is too small for {} unseen triplets",
                self.num_objects,
                RELATION_NAMES.len(),
                self.unseen_triplets
            ));
        }
        Ok(())
    }

    pub fn object_names(&self) -> Vec<String> {
        (0..self.num_objects)
            .map(|k| {
                let (color, _) = COLORS[k % COLORS.len()];
                let shape = SHAPES[(k + k / COLORS.len()) % SHAPES.len()];
                format!("{color}_{shape}")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    category: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    /// Fixed offset from the container this object rides in.
    rides: Option<(usize, f64, f64)>,
}

impl Mover {
    fn bbox(&self) -> BBox {
        BBox::new(self.cx, self.cy, self.w, self.h).expect("mover stays inside the frame")
    }

    fn advance(&mut self) {
        let bounce = |c: &mut f64, v: &mut f64, half: f64| {
            *c += *v;
            if *c < half {
                *c = 2.0 * half - *c;
                *v = -*v;
            }
            if *c > 1.0 - half {
                *c = 2.0 * (1.0 - half) - *c;
                *v = -*v;
            }
            *c = c.clamp(half, 1.0 - half);
        };
        bounce(&mut self.cx, &mut self.vx, self.w / 2.0);
        bounce(&mut self.cy, &mut self.vy, self.h / 2.0);
    }
}

fn sample_categories(cfg: &GenConfig, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let first = usize::from(cfg.subject_fixed);
    let mut pool: Vec<usize> = (first..cfg.num_objects).collect();
    let mut out = Vec::with_capacity(k);
    if cfg.subject_fixed {
        out.push(0);
    }
    while out.len() < k {
        let weights: Vec<f64> = pool.iter().map(|&c| ((c + 1) as f64).powf(-cfg.long_tail)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(pool.remove(pick));
    }
    if !cfg.subject_fixed {
        out.shuffle(rng);
    }
    out
}

/// One rendered video with its annotation.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub annotation: VideoAnnotation,
    pub frames: Vec<Image>,
}

pub fn video_id(index: usize) -> String {
    format!("v{index:04}")
}

/// Generates video `index` from its own random stream, so videos can be
/// produced in any order or in parallel.
pub fn generate_video(cfg: &GenConfig, seed: u64, index: usize) -> SyntheticVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let k = rng.random_range(cfg.min_objects_per_frame..=cfg.max_objects_per_frame);
    let cats = sample_categories(cfg, k, &mut rng);
    let mut movers: Vec<Mover> = cats
        .iter()
        .map(|&category| {
            let w = rng.random_range(cfg.min_size..=cfg.max_size);
            let h = rng.random_range(cfg.min_size..=cfg.max_size);
            Mover {
                category,
                cx: rng.random_range(w / 2.0..=1.0 - w / 2.0),
                cy: rng.random_range(h / 2.0..=1.0 - h / 2.0),
                w,
                h,
                vx: rng.random_range(-cfg.max_speed..=cfg.max_speed),
                vy: rng.random_range(-cfg.max_speed..=cfg.max_speed),
                rides: None,
            }
        })
        .collect();
    if rng.random::<f64>() < cfg.contain_prob {
        // a large container with a small passenger moving along with it
        let outer = &mut movers[0];
        outer.w = cfg.max_size;
        outer.h = cfg.max_size;
        outer.cx = outer.cx.clamp(outer.w / 2.0, 1.0 - outer.w / 2.0);
        outer.cy = outer.cy.clamp(outer.h / 2.0, 1.0 - outer.h / 2.0);
        let o = *outer;
        let inner = &mut movers[1];
        inner.w = cfg.max_size * 0.4;
        inner.h = cfg.max_size * 0.4;
        let (dx, dy) = (rng.random_range(-0.1..=0.1) * o.w, rng.random_range(-0.1..=0.1) * o.h);
        inner.cx = o.cx + dx;
        inner.cy = o.cy + dy;
        inner.rides = Some((0, dx, dy));
    }
    let noise_seed: u64 = rng.random();

    let mut frames = Vec::with_capacity(cfg.frames_per_video);
    let mut annotations = Vec::with_capacity(cfg.frames_per_video);
    for t in 0..cfg.frames_per_video {
        if t > 0 {
            for i in 0..movers.len() {
                match movers[i].rides {
                    Some((c, dx, dy)) => {
                        movers[i].cx = movers[c].cx + dx;
                        movers[i].cy = movers[c].cy + dy;
                    }
                    None => movers[i].advance(),
                }
            }
        }
        let boxes: Vec<BBox> = movers.iter().map(Mover::bbox).collect();
        let mut triplets = Vec::new();
        for i in 0..movers.len() {
            for j in i + 1..movers.len() {
                if cfg.subject_fixed && i != 0 {
                    continue;
                }
                let relations = cfg.rules.relations(&boxes[i], &boxes[j]);
                if relations.is_empty() {
                    continue;
                }
                triplets.push(Triplet {
                    subject_box: boxes[i],
                    subject_label: movers[i].category,
                    object_box: boxes[j],
                    object_label: movers[j].category,
                    relations,
                });
            }
        }
        annotations.push(FrameAnnotation::new(triplets));
        frames.push(render(cfg, &movers, noise_seed ^ t as u64));
    }
    SyntheticVideo {
        annotation: VideoAnnotation {
            id: video_id(index),
            width: cfg.image_size,
            height: cfg.image_size,
            frames: annotations,
        },
        frames,
    }
}

fn inside(shape: usize, b: &BBox, px: f64, py: f64) -> bool {
    let dx = (px - b.cx()) / (b.w() / 2.0);
    let dy = (py - b.cy()) / (b.h() / 2.0);
    if dx.abs() > 1.0 || dy.abs() > 1.0 {
        return false;
    }
    match shape {
        0 => true,
        1 => dx * dx + dy * dy <= 1.0,
        2 => dx.abs() <= (dy + 1.0) / 2.0,
        _ => dx.abs() + dy.abs() <= 1.0,
    }
}

fn render(cfg: &GenConfig, movers: &[Mover], noise_seed: u64) -> Image {
    let n = cfg.image_size;
    let mut img = Image::zeros(3, n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for v in &mut img.data {
        *v = 0.1 + cfg.noise * rng.random::<f64>();
    }
    // large shapes first so that small ones stay visible
    let mut order: Vec<usize> = (0..movers.len()).collect();
    order.sort_by(|&a, &b| {
        let area = |m: &Mover| m.w * m.h;
        area(&movers[b]).total_cmp(&area(&movers[a])).then(a.cmp(&b))
    });
    for i in order {
        let m = &movers[i];
        let b = m.bbox();
        let (_, color) = COLORS[m.category % COLORS.len()];
        let shape = (m.category + m.category / COLORS.len()) % SHAPES.len();
        for y in 0..n {
            for x in 0..n {
                let (px, py) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
                if inside(shape, &b, px, py) {
                    for (c, &v) in color.iter().enumerate() {
                        img.set(c, y, x, v);
                    }
                }
            }
        }
    }
    img.quantized()
}

/// Generates a whole corpus.
pub fn generate_synthetic(cfg: &GenConfig, seed: u64) -> Result<(AnnotationSet, Vec<Vec<Image>>)> {
    cfg.validate()?;
    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut frames = Vec::with_capacity(cfg.num_videos);
    for i in 0..cfg.num_videos {
        let v = generate_video(cfg, seed, i);
        videos.push(v.annotation);
        frames.push(v.frames);
    }
    Ok((
        AnnotationSet {
            num_objects: cfg.num_objects,
            num_relations: RELATION_NAMES.len(),
            videos,
        },
        frames,
    ))
}
