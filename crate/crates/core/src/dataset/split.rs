//! Compositional train/test splits: held-out triplet classes never occur in
//! training, while each of their components does.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{AnnotationSet, TripletClass, VideoAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seen: Vec<TripletClass>,
    pub unseen: Vec<TripletClass>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Videos used by neither side: they hold both a held-out class and a
    /// class that appears nowhere in training.
    #[serde(default)]
    pub discarded: Vec<String>,
}

/// Which triplet classes to hold out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Holdout {
    Classes(Vec<TripletClass>),
    /// Pick this many classes automatically, preferring rare ones.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of videos initially drawn into the test side.
    pub test_fraction: f64,
    /// Cap on the share of videos that automatic holdout selection may
    /// pull out of training.
    pub max_moved_fraction: f64,
    /// Automatically held-out classes must occur in at least this many
    /// videos.
    pub min_videos_per_unseen: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            max_moved_fraction: 0.15,
            min_videos_per_unseen: 2,
        }
    }
}

fn video_classes(v: &VideoAnnotation) -> BTreeSet<TripletClass> {
    v.classes().collect()
}

/// First component of `unseen` missing from `seen`, described for an error
/// message.
fn missing_component(seen: &BTreeSet<TripletClass>, unseen: &[TripletClass]) -> Option<String> {
    let subjects: BTreeSet<usize> = seen.iter().map(|c| c.subject).collect();
    let objects: BTreeSet<usize> = seen.iter().map(|c| c.object).collect();
    let relations: BTreeSet<usize> = seen.iter().map(|c| c.relation).collect();
    for u in unseen {
        let tag = format!("({}, {}, {})", u.subject, u.object, u.relation);
        if !subjects.contains(&u.subject) {
            return Some(format!("subject label {} of held-out triplet {tag} occurs in no seen triplet", u.subject));
        }
        if !objects.contains(&u.object) {
            return Some(format!("object label {} of held-out triplet {tag} occurs in no seen triplet", u.object));
        }
        if !relations.contains(&u.relation) {
            return Some(format!("relation {} of held-out triplet {tag} occurs in no seen triplet", u.relation));
        }
    }
    None
}

fn select_holdout(
    set: &AnnotationSet,
    per_video: &[BTreeSet<TripletClass>],
    count: usize,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<Vec<TripletClass>> {
    let mut videos_of: BTreeMap<TripletClass, Vec<usize>> = BTreeMap::new();
    for (i, cs) in per_video.iter().enumerate() {
        for c in cs {
            videos_of.entry(*c).or_default().push(i);
        }
    }
    let all: BTreeSet<TripletClass> = videos_of.keys().copied().collect();
    let mut candidates: Vec<TripletClass> = videos_of
        .iter()
        .filter(|(_, v)| v.len() >= cfg.min_videos_per_unseen)
        .map(|(c, _)| *c)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_401d);
    candidates.shuffle(&mut rng);
    // rarest first; the shuffle decides among equally rare classes
    candidates.sort_by_key(|c| videos_of[c].len());

    let budget = (cfg.max_moved_fraction * set.videos.len() as f64).floor() as usize;
    let mut chosen: Vec<TripletClass> = Vec::new();
    let mut moved: BTreeSet<usize> = BTreeSet::new();
    for c in candidates {
        if chosen.len() == count {
            break;
        }
        let mut trial_moved = moved.clone();
        trial_moved.extend(videos_of[&c].iter().copied());
        if trial_moved.len() > budget {
            continue;
        }
        let mut trial = chosen.clone();
        trial.push(c);
        trial.sort();
        let spec = partition(set, per_video, trial.clone(), cfg.test_fraction, seed);
        if check_split(set, &spec).is_err() {
            continue;
        }
        chosen = trial;
        moved = trial_moved;
    }
    if chosen.len() < count {
        return Err(Error::Infeasible(format!(
            "only {} of {count} requested triplet classes can be held out ({} classes in corpus, move budget {budget} videos)",
            chosen.len(),
            all.len()
        )));
    }
    chosen.sort();
    Ok(chosen)
}

/// Random partition followed by the moves that keep held-out classes out of
/// training and every other test class inside it.
fn partition(
    set: &AnnotationSet,
    per_video: &[BTreeSet<TripletClass>],
    unseen: Vec<TripletClass>,
    test_fraction: f64,
    seed: u64,
) -> SplitSpec {
    let held: BTreeSet<TripletClass> = unseen.iter().copied().collect();

    let n = set.videos.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (test_fraction * n as f64).round() as usize;
    // 0 train, 1 test, 2 discarded
    let mut side = vec![0u8; n];
    for &i in &order[..n_test] {
        side[i] = 1;
    }
    for i in 0..n {
        if per_video[i].iter().any(|c| held.contains(c)) {
            side[i] = 1;
        }
    }
    loop {
        let seen: BTreeSet<TripletClass> = (0..n)
            .filter(|&i| side[i] == 0)
            .flat_map(|i| per_video[i].iter().copied())
            .collect();
        let mut changed = false;
        for i in 0..n {
            if side[i] != 1 {
                continue;
            }
            let novel = per_video[i].iter().any(|c| !seen.contains(c) && !held.contains(c));
            if novel {
                side[i] = if per_video[i].iter().any(|c| held.contains(c)) { 2 } else { 0 };
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let ids = |s: u8| -> Vec<String> {
        (0..n).filter(|&i| side[i] == s).map(|i| set.videos[i].id.clone()).collect()
    };
    let seen: BTreeSet<TripletClass> = (0..n)
        .filter(|&i| side[i] == 0)
        .flat_map(|i| per_video[i].iter().copied())
        .collect();
    SplitSpec {
        seen: seen.into_iter().collect(),
        unseen,
        train: ids(0),
        test: ids(1),
        discarded: ids(2),
    }
}

/// Builds a split in which no training frame contains a held-out class.
///
/// Videos are first partitioned at random; training videos containing a
/// held-out class then move to test. Test videos containing a non-held-out
/// class that is absent from training move to training when they hold no
/// held-out class, and are discarded otherwise. This makes the unseen set
/// exactly the held-out set.
pub fn make_compositional_split(
    set: &AnnotationSet,
    holdout: &Holdout,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<SplitSpec> {
    if !(0.0..=1.0).contains(&cfg.test_fraction) || !(0.0..=1.0).contains(&cfg.max_moved_fraction) {
        return Err(Error::config("split fractions must lie in [0, 1]"));
    }
    let per_video: Vec<BTreeSet<TripletClass>> = set.videos.iter().map(video_classes).collect();
    let unseen: Vec<TripletClass> = match holdout {
        Holdout::Classes(cs) => {
            let mut cs = cs.clone();
            cs.sort();
            cs.dedup();
            for c in &cs {
                if c.subject >= set.num_objects || c.object >= set.num_objects || c.relation >= set.num_relations {
                    return Err(Error::config(format!(
                        "held-out triplet ({}, {}, {}) outside the vocabulary",
                        c.subject, c.object, c.relation
                    )));
                }
            }
            cs
        }
        Holdout::Count(0) => Vec::new(),
        Holdout::Count(n) => select_holdout(set, &per_video, *n, cfg, seed)?,
    };
    let spec = partition(set, &per_video, unseen, cfg.test_fraction, seed);
    check_split(set, &spec)?;
    Ok(spec)
}

/// Scans a corpus against a split: seen and unseen are disjoint, no
/// training frame holds an unseen class, every unseen class occurs in test,
/// and every unseen component occurs in some seen triplet.
pub fn check_split(set: &AnnotationSet, spec: &SplitSpec) -> Result<()> {
    let seen: BTreeSet<TripletClass> = spec.seen.iter().copied().collect();
    let unseen: BTreeSet<TripletClass> = spec.unseen.iter().copied().collect();
    if let Some(c) = seen.intersection(&unseen).next() {
        return Err(Error::Infeasible(format!(
            "triplet ({}, {}, {}) is both seen and unseen",
            c.subject, c.object, c.relation
        )));
    }
    let by_id: BTreeMap<&str, &VideoAnnotation> = set.videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let lookup = |id: &String| {
        by_id
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::invalid(format!("split names unknown video {id}")))
    };
    for id in &spec.train {
        let v = lookup(id)?;
        for (t, f) in v.frames.iter().enumerate() {
            if let Some(c) = f.classes().find(|c| unseen.contains(c)) {
                return Err(Error::Infeasible(format!(
                    "train video {id} frame {t} contains unseen triplet ({}, {}, {})",
                    c.subject, c.object, c.relation
                )));
            }
        }
    }
    let mut in_test: BTreeSet<TripletClass> = BTreeSet::new();
    for id in &spec.test {
        in_test.extend(video_classes(lookup(id)?));
    }
    if let Some(c) = unseen.iter().find(|c| !in_test.contains(c)) {
        return Err(Error::Infeasible(format!(
            "held-out triplet ({}, {}, {}) never occurs in the test videos",
            c.subject, c.object, c.relation
        )));
    }
    if let Some(msg) = missing_component(&seen, &spec.unseen) {
        return Err(Error::Infeasible(msg));
    }
    Ok(())
}
