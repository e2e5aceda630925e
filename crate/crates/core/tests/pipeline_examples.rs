mod common;

use common::{clip, toy};
use stitchpipe::image::Mask;
use stitchpipe::model::Generator;
use stitchpipe::pipeline::invert::reconstruction_loss;
use stitchpipe::pipeline::stages::{align, run_clip, ClipRun};
use stitchpipe::pipeline::{invert_by_optimization, Ablation, OptimInversionConfig, StageSettings};
use stitchpipe::alignment::FrameSequence;
use stitchpipe::pti::invert_frames;
use stitchpipe::stitching::{blend_weights, dilate_mask};
use stitchpipe::toy::build::{max_deviation_inside, CLIP_FRAME_SIZE};
use stitchpipe::toy::directions::GROW_RADIUS;

fn run(seed: u64, frames: usize, settings: &StageSettings) -> (FrameSequence, ClipRun) {
    let m = toy();
    let (v, seq) = clip(seed, frames, CLIP_FRAME_SIZE);
    let r = run_clip(&m.backend(), &seq, &v.landmarks, m.direction(GROW_RADIUS).unwrap(), settings).unwrap();
    (seq, r)
}

fn zero_edit() -> StageSettings {
    StageSettings {
        strength: Some(0.0),
        ..StageSettings::default()
    }
}

/// Frame pixels any stitched crop can touch: the warped dilated mask grown
/// by the feather reach and one pixel of bilinear support.
fn touched(r: &ClipRun, i: usize, hw: (usize, usize), feather: f64) -> Mask {
    let w = blend_weights(&r.edited.masks[i].m_d, &r.aligned.transforms[i], hw, 0.0).unwrap();
    let support = Mask::from_fn(hw.0, hw.1, |a, b| w.get(a, b, 0) > 0.0);
    dilate_mask(&support, (3.0 * feather).ceil() as usize + 1)
}

#[test]
fn zero_edit_round_trip_stays_within_the_certificate() {
    let m = toy();
    let settings = zero_edit();
    let (orig, r) = run(80, 8, &settings);
    let dev = max_deviation_inside(&r, &orig).unwrap();
    assert!(dev < m.certificate.recon_pixel_bound, "inside deviation {dev}");
    let hw = (orig.frames[0].height(), orig.frames[0].width());
    for i in 0..orig.len() {
        let t = touched(&r, i, hw, settings.stitch.feather_sigma);
        for row in 0..hw.0 {
            for c in 0..hw.1 {
                if !t.get(row, c) {
                    for ch in 0..3 {
                        assert_eq!(r.frames.frames[i].get(row, c, ch), orig.frames[i].get(row, c, ch));
                    }
                }
            }
        }
    }
    assert!(r.report.tl_id >= 0.99, "TL-ID {}", r.report.tl_id);
    assert!(r.report.tg_id >= 0.99, "TG-ID {}", r.report.tg_id);
}

#[test]
fn no_stitch_ablation_differs_on_the_boundary() {
    let full = StageSettings::default();
    let ablated = StageSettings {
        ablation: Ablation {
            no_stitch: true,
            ..Ablation::default()
        },
        ..StageSettings::default()
    };
    let (orig, a) = run(81, 4, &full);
    let (_, b) = run(81, 4, &ablated);
    let hw = (orig.frames[0].height(), orig.frames[0].width());
    for i in 0..orig.len() {
        let t = &a.aligned.transforms[i];
        let wb = blend_weights(&a.edited.masks[i].b, t, hw, 0.0).unwrap();
        let mut diff = 0.0;
        let mut n = 0;
        for p in 0..hw.0 * hw.1 {
            if wb.data()[p] >= 1.0 {
                n += 1;
                for ch in 0..3 {
                    diff += (a.frames.frames[i].data()[p * 3 + ch] - b.frames.frames[i].data()[p * 3 + ch]).abs();
                }
            }
        }
        assert!(n > 0);
        assert!(diff / (3 * n) as f64 > 1e-3, "frame {i}: boundary mean diff {}", diff / (3 * n) as f64);
    }
}

#[test]
fn identical_settings_give_bitwise_identical_runs() {
    let (_, a) = run(82, 4, &StageSettings::default());
    let (_, b) = run(82, 4, &StageSettings::default());
    for (x, y) in a.frames.frames.iter().zip(&b.frames.frames) {
        assert_eq!(x.data(), y.data());
    }
    assert_eq!(a.report, b.report);
}

#[test]
fn encoder_pivots_are_smoother_than_optimized_ones() {
    let m = toy();
    let settings = StageSettings::default();
    for seed in 90..93 {
        let (v, seq) = clip(seed, 8, CLIP_FRAME_SIZE);
        let aligned = align(&seq, &v.landmarks, &settings.align).unwrap();
        let enc = invert_frames(m.encoder.as_ref(), &aligned.crops).unwrap();
        let opt = invert_by_optimization(
            m.generator.as_ref(),
            &m.perceptual,
            &m.theta0,
            &aligned.crops,
            &settings.inversion_config(),
        )
        .unwrap();
        assert!(
            enc.mean_adjacent_distance() <= opt.mean_adjacent_distance(),
            "clip {seed}: encoder {} vs optimizer {}",
            enc.mean_adjacent_distance(),
            opt.mean_adjacent_distance()
        );
    }
}

#[test]
fn optimization_at_the_mean_code_stays_put() {
    let m = toy();
    let g = m.generator.as_ref();
    let mean = g.mean_code();
    let crop = g.generate(&mean, &m.theta0).unwrap();
    let crops = FrameSequence::new(vec![crop], 0).unwrap();
    let cfg = OptimInversionConfig {
        noise: 0.0,
        ..OptimInversionConfig::default()
    };
    let p = invert_by_optimization(g, &m.perceptual, &m.theta0, &crops, &cfg).unwrap();
    assert!(p.pivots[0].max_abs_diff(&mean) < 1e-3);
}

#[test]
fn optimization_lowers_the_loss_and_is_seeded() {
    let m = toy();
    let g = m.generator.as_ref();
    let (v, seq) = clip(95, 3, CLIP_FRAME_SIZE);
    let aligned = align(&seq, &v.landmarks, &Default::default()).unwrap();
    let cfg = OptimInversionConfig {
        seed: 5,
        ..OptimInversionConfig::default()
    };
    let a = invert_by_optimization(g, &m.perceptual, &m.theta0, &aligned.crops, &cfg).unwrap();
    let b = invert_by_optimization(g, &m.perceptual, &m.theta0, &aligned.crops, &cfg).unwrap();
    assert_eq!(a, b);
    for (w, c) in a.pivots.iter().zip(&aligned.crops.frames) {
        let init = reconstruction_loss(g, &m.perceptual, &m.theta0, &g.mean_code(), c, cfg.lambda_l2).unwrap().0;
        let fin = reconstruction_loss(g, &m.perceptual, &m.theta0, w, c, cfg.lambda_l2).unwrap().0;
        assert!(fin < init, "{init} -> {fin}");
    }
    assert!(invert_by_optimization(g, &m.perceptual, &m.theta0, &aligned.crops, &OptimInversionConfig { steps: 0, ..cfg }).is_err());
}
