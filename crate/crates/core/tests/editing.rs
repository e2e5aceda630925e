mod common;

use proptest::prelude::*;

use common::{clip, toy};
use stitchpipe::editing::{apply_direction, render_edits, EditDirection};
use stitchpipe::error::Error;
use stitchpipe::image::Image;
use stitchpipe::model::{Generator, LatentCode, Segmenter};
use stitchpipe::pipeline::stages::{align, invert, tune};
use stitchpipe::pipeline::StageSettings;
use stitchpipe::pti::PivotSet;
use stitchpipe::toy::directions::GROW_RADIUS;

fn code(layers: usize, dim: usize, v: &[f64]) -> LatentCode {
    LatentCode::from_vec(layers, dim, v.to_vec()).unwrap()
}

fn pivot_set(codes: Vec<LatentCode>) -> PivotSet {
    let hashes = (0..codes.len()).map(|i| format!("h{i}")).collect();
    PivotSet::new(codes, hashes).unwrap()
}

fn mean_adjacent_mse(frames: &[Image]) -> f64 {
    let s: f64 = frames.windows(2).map(|p| p[0].mse(&p[1]).unwrap()).sum();
    s / (frames.len() - 1) as f64
}

#[test]
fn zero_strength_keeps_pivots() {
    let d = EditDirection::new("d", code(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 1.0, None).unwrap();
    let p = pivot_set(vec![code(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])]);
    assert_eq!(apply_direction(&p, &d, 0.0).unwrap(), p);
}

#[test]
fn layer_mask_leaves_other_rows_bitwise() {
    let d = EditDirection::new("d", code(3, 2, &[1.0; 6]), 1.0, Some(vec![0])).unwrap();
    let w = code(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let e = apply_direction(&pivot_set(vec![w.clone()]), &d, 0.7).unwrap();
    assert_eq!(e.pivots[0].layer(1), w.layer(1));
    assert_eq!(e.pivots[0].layer(2), w.layer(2));
    assert_ne!(e.pivots[0].layer(0), w.layer(0));
}

#[test]
fn mismatched_dimensions_are_a_contract_error() {
    let d = EditDirection::new("d", code(2, 3, &[1.0; 6]), 1.0, None).unwrap();
    let p = pivot_set(vec![code(3, 2, &[0.0; 6])]);
    assert!(matches!(apply_direction(&p, &d, 1.0), Err(Error::Contract(_))));
}

#[test]
fn zero_strength_render_is_the_reconstruction() {
    let m = toy();
    let g = m.generator.as_ref();
    let p = pivot_set((0..3).map(|k| g.sample_code(k)).collect());
    let d = m.direction(GROW_RADIUS).unwrap();
    let e = render_edits(g, &m.theta0, &apply_direction(&p, d, 0.0).unwrap()).unwrap();
    for (img, w) in e.frames.iter().zip(&p.pivots) {
        assert_eq!(img, &g.generate(w, &m.theta0).unwrap());
    }
}

#[test]
fn grow_radius_edits_are_monotone_and_temporally_smooth() {
    let m = toy();
    let backend = m.backend();
    let settings = StageSettings::default();
    let d = m.direction(GROW_RADIUS).unwrap();
    let mut grown = 0;
    let mut total = 0;
    for seed in 40..43 {
        let (v, frames) = clip(seed, 8, 96);
        let aligned = align(&frames, &v.landmarks, &settings.align).unwrap();
        let pivots = invert(&backend, &aligned.crops, &settings).unwrap();
        let (theta_p, _) = tune(&backend, &pivots, &aligned.crops, &settings).unwrap();
        let recon = render_edits(m.generator.as_ref(), &theta_p, &pivots).unwrap();
        let edited = apply_direction(&pivots, d, d.default_strength).unwrap();
        let e = render_edits(m.generator.as_ref(), &theta_p, &edited).unwrap();
        for (a, b) in recon.frames.iter().zip(&e.frames) {
            total += 1;
            if m.segmenter.segment(b).count() > m.segmenter.segment(a).count() {
                grown += 1;
            }
        }
        let (er, ee) = (mean_adjacent_mse(&recon.frames), mean_adjacent_mse(&e.frames));
        assert!(ee <= 4.0 * er, "clip {seed}: edited adjacent MSE {ee} vs reconstruction {er}");
    }
    assert!(grown as f64 >= 0.9 * total as f64, "{grown}/{total} frames grew");
}

#[test]
fn render_is_deterministic() {
    let m = toy();
    let g = m.generator.as_ref();
    let p = pivot_set((10..13).map(|k| g.sample_code(k)).collect());
    let a = render_edits(g, &m.theta0, &p).unwrap();
    let b = render_edits(g, &m.theta0, &p).unwrap();
    for (x, y) in a.frames.iter().zip(&b.frames) {
        assert_eq!(x.data(), y.data());
    }
}

fn codes_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
    (prop::collection::vec(-2.0..2.0f64, 12), prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 12), 1..6))
}

proptest! {
    #[test]
    fn strength_is_exactly_linear((delta, codes) in codes_strategy(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let d = EditDirection::new("d", code(3, 4, &delta), 1.0, None).unwrap();
        let p = pivot_set(codes.iter().map(|c| code(3, 4, c)).collect());
        let twice = apply_direction(&apply_direction(&p, &d, a).unwrap(), &d, b).unwrap();
        let once = apply_direction(&p, &d, a + b).unwrap();
        for (x, y) in twice.pivots.iter().zip(&once.pivots) {
            prop_assert!(x.max_abs_diff(y) < 1e-12);
        }
    }

    #[test]
    fn editing_commutes_with_permutation((delta, codes) in codes_strategy(), s in -3.0..3.0f64, rot in 0usize..6) {
        let d = EditDirection::new("d", code(3, 4, &delta), 1.0, Some(vec![0, 2])).unwrap();
        let p = pivot_set(codes.iter().map(|c| code(3, 4, c)).collect());
        let k = rot % codes.len();
        let mut rotated = p.pivots.clone();
        rotated.rotate_left(k);
        let a = apply_direction(&pivot_set(rotated), &d, s).unwrap();
        let mut b = apply_direction(&p, &d, s).unwrap().pivots;
        b.rotate_left(k);
        prop_assert_eq!(a.pivots, b);
    }
}
