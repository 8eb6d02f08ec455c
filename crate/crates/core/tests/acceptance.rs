//! Acceptance checks, one line per criterion. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 2 7`.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use common::{random_frame, random_matrix, random_prediction, rng, scenario};
use dds_core::cli::{eval, train_videos, RunConfig, VideoSet};
use dds_core::criterion::{compute_loss, LossConfig};
use dds_core::dataset::*;
use dds_core::geometry::{relation_region, BBox, RegionMode};
use dds_core::image::Image;
use dds_core::matching::{brute_force_match, build_cost_matrix, hungarian, Assignment, CostMatrix, CostOptions, MatchWeights};
use dds_core::metrics::EvalOptions;
use dds_core::model::{BranchKind, BranchLayout, Ctx, Dds, ModelConfig};
use dds_core::pipeline::{evaluate_videos, save_split};
use dds_core::train::{record_video_loss, Objective, TrainConfig, Trainer, VideoSample};
use dds_core::autograd::Graph;
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn samples(cfg: &GenConfig, seed: u64) -> Vec<VideoSample> {
    let (set, frames) = generate_synthetic(cfg, seed).unwrap();
    set.videos
        .into_iter()
        .zip(frames)
        .map(|(v, f)| VideoSample {
            id: v.id,
            frames: f,
            annotations: v.frames,
        })
        .collect()
}

// 1 ----------------------------------------------------------------------------------

fn hungarian_vs_brute_force() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n_q = r.random_range(1..=8);
        let n_gt = r.random_range(0..=6usize.min(n_q));
        let m = random_matrix(&mut r, n_q, n_gt, 5.0);
        let c = CostMatrix::new(n_q, n_gt, m.data().to_vec()).unwrap();
        let h = hungarian(&c).unwrap().total_cost(&c);
        let b = brute_force_match(&c).unwrap().total_cost(&c);
        worst = worst.max((h - b).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 30.0, format!("1000 matrices, max |diff| {worst:.1e}, {secs:.2} s"))
}

// 2 ----------------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        temporal_backprop: true,
        ..ModelConfig::tiny(3, 3)
    };
    let mut model = Dds::new(cfg, 5).unwrap();
    let mut r = rng(2);
    let mut image = || {
        let mut im = Image::zeros(3, 16, 16);
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    im.set(c, y, x, r.random_range(0.0..1.0));
                }
            }
        }
        im
    };
    let frames = vec![image(), image()];
    let annotations = vec![random_frame(&mut r, 3, 3, 3), random_frame(&mut r, 2, 3, 3)];
    let video = VideoSample {
        id: "g".into(),
        frames,
        annotations,
    };
    let objective = Objective::for_model(&model, LossConfig::default(), MatchWeights::default());

    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, model.params());
    let vl = record_video_loss(&model, &mut ctx, &video, &objective, None).unwrap();
    let frozen: Vec<Assignment> = vl.assignments.clone();
    let grads = g.backward(vl.total);
    let store = model.params();
    let analytic: Vec<f64> = store
        .ids()
        .flat_map(|id| {
            let m = store.get(id);
            match grads.get(id) {
                Some(gm) => gm.data().to_vec(),
                None => vec![0.0; m.data().len()],
            }
        })
        .collect();

    let loss_at = |m: &Dds| {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, m.params());
        let vl = record_video_loss(m, &mut ctx, &video, &objective, Some(&frozen)).unwrap();
        g.scalar(vl.total)
    };
    let base = model.params().flatten();
    let eps = 1e-3;
    // below this magnitude the comparison is absolute
    let floor = 1e-6;
    let mut worst = (0.0f64, 0usize);
    let mut x = base.clone();
    for i in 0..base.len() {
        let mut f = |d: f64| {
            x[i] = base[i] + d;
            model.params_mut().load_flat(&x);
            loss_at(&model)
        };
        // central differences at eps and eps/2, Richardson-extrapolated;
        // no probe leaves [-eps, eps]
        let wide = (f(eps) - f(-eps)) / (2.0 * eps);
        let narrow = (f(eps / 2.0) - f(-eps / 2.0)) / eps;
        let fd = (4.0 * narrow - wide) / 3.0;
        x[i] = base[i];
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    model.params_mut().load_flat(&base);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && secs < 300.0,
        format!(
            "{} parameters, max relative error {:.2e} (index {}), {secs:.1} s",
            base.len(),
            worst.0,
            worst.1
        ),
    )
}

// 3 ----------------------------------------------------------------------------------

fn loss_permutation_invariance() -> Outcome {
    let mut r = rng(3);
    let cfg = LossConfig::default();
    let opts = CostOptions {
        region: cfg.region,
        ..CostOptions::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let pred = random_prediction(&mut r, 6, 4, 5);
        let gt = random_frame(&mut r, n, 4, 5);
        let mut shuffled = gt.clone();
        shuffled.triplets.shuffle(&mut r);
        let loss = |gt: &FrameAnnotation| {
            let a = hungarian(&build_cost_matrix(&pred, gt, &opts).unwrap()).unwrap();
            compute_loss(&pred, gt, &a, &cfg).unwrap().total
        };
        worst = worst.max((loss(&gt) - loss(&shuffled)).abs());
    }
    outcome(worst < 1e-9, format!("100 frames, max |diff| {worst:.1e}"))
}

// 4 ----------------------------------------------------------------------------------

fn first_frame_bypass() -> Outcome {
    let model = Dds::new(ModelConfig::tiny(3, 3), 4).unwrap();
    let mut ok = true;
    for kind in [BranchKind::Object, BranchKind::Relation] {
        let q = model.queries(kind).clone();
        let out = model.temporal_decode(kind, &q, None).unwrap();
        ok &= out.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()) && out.shape() == q.shape();
    }
    outcome(ok, "both branches return their queries bit for bit")
}

// 5 ----------------------------------------------------------------------------------

fn geometry_properties() -> Outcome {
    let mut r = rng(5);
    let mut bad = 0;
    let random = |r: &mut rand_chacha::ChaCha8Rng| {
        let (x0, x1) = (r.random_range(0.0..1.0f64), r.random_range(0.0..1.0f64));
        let (y0, y1) = (r.random_range(0.0..1.0f64), r.random_range(0.0..1.0f64));
        BBox::from_corners(x0.min(x1), y0.min(y1), x0.max(x1) + 1e-3, y0.max(y1) + 1e-3).unwrap()
    };
    for _ in 0..10_000 {
        let a = random(&mut r);
        let c = random(&mut r);
        let theta = r.random_range(0.0..1.0);
        if a.giou(&c) > a.iou(&c) {
            bad += 1;
        }
        if (a.giou(&a) - 1.0).abs() > 1e-12 {
            bad += 1;
        }
        let u = a.union_box(&c);
        if !(u.contains(&a) && u.contains(&c)) {
            bad += 1;
        }
        let m = relation_region(&a, &c, RegionMode::Mixture { theta }).unwrap();
        let want = if a.iou(&c) <= theta { Some(u) } else { a.intersection_box(&c) };
        if Some(m) != want {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("10000 box pairs, {bad} violations"))
}

// 6 ----------------------------------------------------------------------------------

fn metric_scenarios() -> Outcome {
    let all = scenario::load_all();
    let failed: Vec<String> = all
        .iter()
        .filter_map(|s| {
            let m = s.mismatches();
            (!m.is_empty()).then(|| format!("{}: {}", s.name, m.join("; ")))
        })
        .collect();
    let detail = if failed.is_empty() {
        format!("{} scenario files reproduced exactly", all.len())
    } else {
        failed.join(" | ")
    };
    outcome(failed.is_empty(), detail)
}

// 7 ----------------------------------------------------------------------------------

fn overfit_one_video() -> Outcome {
    let start = Instant::now();
    let gen = GenConfig {
        num_videos: 1,
        frames_per_video: 8,
        image_size: 16,
        min_objects_per_frame: 3,
        max_objects_per_frame: 3,
        ..GenConfig::default()
    };
    let data = samples(&gen, 70);
    let max_triplets = data[0].annotations.iter().map(FrameAnnotation::len).max().unwrap();
    let model = Dds::new(ModelConfig::tiny(gen.num_objects, RELATION_NAMES.len()), 70).unwrap();
    let objective = Objective::for_model(&model, LossConfig::default(), MatchWeights::default());
    let train = TrainConfig {
        steps: 500,
        lr: 3e-3,
        backbone_lr: 3e-3,
        weight_decay: 0.0,
        videos_per_step: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, train, objective, 70).unwrap();
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..500 {
        let b = trainer.train_step(&data).unwrap();
        first.get_or_insert(b.total);
        last = b.total;
    }
    let first = first.unwrap();
    let opts = EvalOptions {
        recall_ks: vec![20],
        ..EvalOptions::default()
    };
    let report = evaluate_videos(&trainer.model, &data, None, &opts).unwrap().report;
    let recall = report.recall_at(20).unwrap().full.unwrap_or(0.0);
    let drop = 1.0 - last / first;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        recall >= 0.9 && drop >= 0.8 && secs < 900.0,
        format!(
            "up to {max_triplets} triplets/frame, R@20 {recall:.3}, loss {first:.3} -> {last:.3} ({:.1}% lower), {secs:.0} s",
            100.0 * drop
        ),
    )
}

// 8 ----------------------------------------------------------------------------------

const TREND_STEPS: usize = 6000;

// 4-frame 24px clips keep six runs inside the budget; 2000 videos stop the
// models from memorising the training set
fn compositional_trend() -> Outcome {
    let start = Instant::now();
    let gen = GenConfig {
        num_videos: 2000,
        frames_per_video: 4,
        image_size: 24,
        ..GenConfig::default()
    };
    // common held-out classes give a few hundred unseen test instances
    let split_cfg = SplitConfig {
        min_videos_per_unseen: 20,
        ..SplitConfig::default()
    };
    let mut rows = Vec::new();
    for seed in [11u64, 12, 13] {
        let (set, frames) = generate_synthetic(&gen, seed).unwrap();
        let split = make_compositional_split(&set, &Holdout::Count(8), &split_cfg, seed).unwrap();
        let pick = |ids: &[String]| -> Vec<VideoSample> {
            let ids: std::collections::HashSet<&String> = ids.iter().collect();
            set.videos
                .iter()
                .zip(&frames)
                .filter(|(v, _)| ids.contains(&v.id))
                .map(|(v, f)| VideoSample {
                    id: v.id.clone(),
                    frames: f.clone(),
                    annotations: v.frames.clone(),
                })
                .collect()
        };
        let (train, test) = (pick(&split.train), pick(&split.test));
        let mut pair = Vec::new();
        for layout in [BranchLayout::Single, BranchLayout::Decoupled] {
            let model = Dds::new(
                ModelConfig {
                    layout,
                    image_height: 24,
                    image_width: 24,
                    backbone_channels: vec![16, 32],
                    ..ModelConfig::default()
                },
                seed,
            )
            .unwrap();
            let objective = Objective::for_model(&model, LossConfig::default(), MatchWeights::default());
            let cfg = TrainConfig {
                steps: TREND_STEPS,
                lr: 2e-3,
                backbone_lr: 2e-3,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(model, cfg, objective, seed).unwrap();
            for _ in 0..TREND_STEPS {
                trainer.train_step(&train).unwrap();
            }
            let opts = EvalOptions {
                recall_ks: vec![20],
                ..EvalOptions::default()
            };
            let rep = evaluate_videos(&trainer.model, &test, Some(&split), &opts).unwrap().report;
            let s = rep.recall_at(20).unwrap();
            pair.push((s.seen.unwrap_or(0.0), s.unseen.unwrap_or(0.0)));
        }
        rows.push(pair);
    }
    let mean = |v: usize, unseen: bool| {
        rows.iter().map(|p| if unseen { p[v].1 } else { p[v].0 }).sum::<f64>() / rows.len() as f64
    };
    let (base_seen, base_unseen) = (mean(0, false), mean(0, true));
    let (dds_seen, dds_unseen) = (mean(1, false), mean(1, true));
    let secs = start.elapsed().as_secs_f64();
    let pass = dds_unseen > base_unseen && dds_seen >= 0.9 * base_seen && secs < 7200.0;
    let per_seed: Vec<String> = rows
        .iter()
        .map(|p| format!("{:.3}/{:.3} vs {:.3}/{:.3}", p[1].1, p[1].0, p[0].1, p[0].0))
        .collect();
    outcome(
        pass,
        format!(
            "unseen R@20 dds {dds_unseen:.4} vs base {base_unseen:.4}; seen R@20 dds {dds_seen:.4} vs base {base_seen:.4}; per seed unseen/seen dds vs base [{}]; {} steps x 3 seeds, {secs:.0} s",
            per_seed.join(", "),
            TREND_STEPS
        ),
    )
}

// 9 ----------------------------------------------------------------------------------

fn split_soundness() -> Outcome {
    let mut problems = Vec::new();
    let mut checked = 0;
    // agent-centred corpora have 49 classes, all common; 8 holdouts exceed the move budget
    for (seed, subject_fixed, count) in [(1u64, false, 8), (2, false, 8), (3, true, 4), (4, false, 8), (5, true, 4)] {
        let gen = GenConfig {
            subject_fixed,
            ..GenConfig::default()
        };
        let (set, _) = generate_synthetic(&gen, seed).unwrap();
        let spec = match make_compositional_split(&set, &Holdout::Count(count), &SplitConfig::default(), seed) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let unseen: BTreeSet<TripletClass> = spec.unseen.iter().copied().collect();
        let train: BTreeSet<&String> = spec.train.iter().collect();
        let test: BTreeSet<&String> = spec.test.iter().collect();
        let mut in_test = BTreeSet::new();
        for v in &set.videos {
            for (t, f) in v.frames.iter().enumerate() {
                for c in f.classes() {
                    if train.contains(&v.id) && unseen.contains(&c) {
                        problems.push(format!("seed {seed}: {} frame {t} holds unseen {c:?}", v.id));
                    }
                    if test.contains(&v.id) {
                        in_test.insert(c);
                    }
                }
            }
        }
        for u in &unseen {
            let covered = spec.seen.iter().any(|s| s.subject == u.subject)
                && spec.seen.iter().any(|s| s.object == u.object)
                && spec.seen.iter().any(|s| s.relation == u.relation);
            if !covered || !in_test.contains(u) {
                problems.push(format!("seed {seed}: {u:?} uncovered or absent from test"));
            }
        }
        if let Err(e) = check_split(&set, &spec) {
            problems.push(format!("seed {seed}: {e}"));
        }
        checked += 1;
    }
    let detail = if problems.is_empty() {
        format!("{checked} corpora, no unseen class in train, every component covered")
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

// 10 ---------------------------------------------------------------------------------

fn run_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.generate = GenConfig {
        num_videos: 16,
        frames_per_video: 3,
        image_size: 16,
        max_objects_per_frame: 3,
        ..GenConfig::default()
    };
    cfg.model = ModelConfig::tiny(cfg.generate.num_objects, RELATION_NAMES.len());
    cfg.split.holdout_count = 1;
    cfg.train.steps = 8;
    cfg.train.videos_per_step = 2;
    cfg.data.corpus = root.join("corpus");
    cfg.data.split = root.join("split.json");
    let cfg = cfg.resolve().unwrap();
    write_corpus(&cfg.data.corpus, &cfg.generate, cfg.seed).unwrap();
    let corpus = Corpus::open(&cfg.data.corpus).unwrap();
    let spec = make_compositional_split(&corpus.annotations, &cfg.split.holdout(), &cfg.split.split_config(), cfg.seed)
        .unwrap();
    save_split(&cfg.data.split, &spec).unwrap();
    let data = corpus.samples(&spec.train).unwrap();
    for run in ["a", "b"] {
        train_videos(&cfg, &data, &root.join(run), None).unwrap();
        eval(
            &root.join(run).join("final"),
            &cfg.data.corpus,
            &cfg.data.split,
            &cfg.eval,
            VideoSet::Test,
            &root.join(run).join("eval"),
        )
        .unwrap();
    }
    let same = |rel: &str| std::fs::read(root.join("a").join(rel)).unwrap() == std::fs::read(root.join("b").join(rel)).unwrap();
    let files = ["loss.csv", "final/params.bin", "eval/report.txt", "eval/report.json", "eval/classes.csv"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    let detail = if differing.is_empty() {
        format!("{} artifacts byte-identical across two runs", files.len())
    } else {
        format!("differ: {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("matching oracle", hungarian_vs_brute_force),
        ("gradient check", gradient_check),
        ("loss invariance", loss_permutation_invariance),
        ("first-frame bypass", first_frame_bypass),
        ("geometry algebra", geometry_properties),
        ("metrics oracle", metric_scenarios),
        ("overfit sanity", overfit_one_video),
        ("compositional trend", compositional_trend),
        ("split soundness", split_soundness),
        ("determinism", run_determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let o = check();
        println!("criterion {n:>2} {:<20} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
