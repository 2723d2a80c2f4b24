mod support;

use driftscan::raster::{Grid, Label, Mask};
use driftscan::refine::{
    buffer_mask, config_seed, otsu_threshold, random_walker, rasterize_lines, refine_labels, sample_markers,
    Marker, MarkerMap, RefinementParams, BUFFER_GRID, ENSEMBLE_SIZE,
};
use driftscan::spectral;
use driftscan::synthetic::ridge_scene;
use proptest::prelude::*;

fn brute_buffer(mask: &Mask, r: usize) -> Mask {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        let hit = (0..mask.height()).any(|v| {
            (0..mask.width()).any(|u| mask.get(u, v).is_debris() && u.abs_diff(x).max(v.abs_diff(y)) <= r)
        });
        if hit {
            Label::Debris
        } else {
            Label::Other
        }
    })
}

#[test]
fn buffer_l_shape_radius_two() {
    let mask = Grid::from_fn(12, 10, |x, y| {
        if (x == 3 && (2..8).contains(&y)) || (y == 7 && (3..9).contains(&x)) {
            Label::Debris
        } else {
            Label::Other
        }
    });
    assert_eq!(buffer_mask(&mask, 2), brute_buffer(&mask, 2));
}

fn marker_strategy(max: usize) -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<u8>)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            Just(w),
            Just(h),
            prop::collection::vec(0.0f32..1.0, n),
            prop::collection::vec(0u8..6, n),
        )
    })
}

fn build_markers(w: usize, h: usize, codes: &[u8]) -> Option<MarkerMap> {
    let m = Grid::from_fn(w, h, |x, y| match codes[y * w + x] {
        0 => Marker::Debris,
        1 => Marker::Other,
        _ => Marker::Unlabeled,
    });
    let has = |k| m.data().contains(&k);
    (has(Marker::Debris) && has(Marker::Other)).then_some(m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn otsu_matches_exhaustive_sweep(values in prop::collection::vec(-1.0f64..1.0, 2..300)) {
        let got = otsu_threshold(&values);
        match support::otsu_oracle(&values) {
            Some(t) => prop_assert_eq!(got.unwrap(), t),
            None => prop_assert!(got.is_err()),
        }
    }

    #[test]
    fn otsu_matches_on_tied_values(values in prop::collection::vec(0u8..5, 2..100)) {
        let v: Vec<f64> = values.iter().map(|&k| k as f64).collect();
        match support::otsu_oracle(&v) {
            Some(t) => prop_assert_eq!(otsu_threshold(&v).unwrap(), t),
            None => prop_assert!(otsu_threshold(&v).is_err()),
        }
    }

    #[test]
    fn buffer_matches_brute_force(
        bits in prop::collection::vec(prop::bool::weighted(0.08), 15 * 11),
        r in 0usize..4,
    ) {
        let mask = Grid::from_vec(15, 11, bits.iter().map(|&b| if b { Label::Debris } else { Label::Other }).collect()).unwrap();
        prop_assert_eq!(buffer_mask(&mask, r), brute_buffer(&mask, r));
    }

    #[test]
    fn walker_matches_dense_solve((w, h, g, codes) in marker_strategy(6), beta_hi in any::<bool>()) {
        let Some(markers) = build_markers(w, h, &codes) else { return Ok(()) };
        let beta = if beta_hi { 10.0 } else { 1.0 };
        let guidance = Grid::from_vec(w, h, g).unwrap();
        let got = random_walker(&guidance, &markers, beta).unwrap();
        let want = support::dense_walker(&guidance, &markers, beta);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn walker_maximum_principle((w, h, g, codes) in marker_strategy(8)) {
        let Some(markers) = build_markers(w, h, &codes) else { return Ok(()) };
        let guidance = Grid::from_vec(w, h, g).unwrap();
        let p = random_walker(&guidance, &markers, 10.0).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = *p.get(x, y);
                prop_assert!((0.0..=1.0).contains(&v));
                match markers.get(x, y) {
                    Marker::Debris => prop_assert_eq!(v, 1.0),
                    Marker::Other => prop_assert_eq!(v, 0.0),
                    Marker::Unlabeled => {
                        let mut nb = Vec::new();
                        if x > 0 { nb.push(*p.get(x - 1, y)); }
                        if x + 1 < w { nb.push(*p.get(x + 1, y)); }
                        if y > 0 { nb.push(*p.get(x, y - 1)); }
                        if y + 1 < h { nb.push(*p.get(x, y + 1)); }
                        let lo = nb.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = nb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        // isolated components sit at 0.5 with equal neighbours
                        prop_assert!(v >= lo - 1e-7 && v <= hi + 1e-7, "{} not in [{}, {}]", v, lo, hi);
                    }
                }
            }
        }
    }
}

#[test]
fn marker_pixels_keep_their_class() {
    let (scene, lines, _) = ridge_scene(40, 20, 1).unwrap();
    let fdi = spectral::fdi(&scene).unwrap();
    let prelim = rasterize_lines(&lines, 40, 20).unwrap();
    for p in RefinementParams::grid() {
        let markers = sample_markers(&prelim, &p, 5).unwrap();
        let probs = random_walker(&fdi.values, &markers, p.beta).unwrap();
        for (m, v) in markers.data().iter().zip(probs.data()) {
            match m {
                Marker::Debris => assert!(*v > 0.5),
                Marker::Other => assert!(*v <= 0.5),
                Marker::Unlabeled => {}
            }
        }
    }
}

/// Recomputes every configuration stage by stage with the brute-force
/// buffer, exhaustive Otsu and dense walker, then compares the crisp masks.
#[test]
fn ridge_refinement_matches_stagewise_recomputation() {
    let (scene, lines, ridge) = ridge_scene(24, 14, 1).unwrap();
    let result = refine_labels(&scene, &lines, 42).unwrap();
    assert_eq!(result.masks.len(), ENSEMBLE_SIZE);
    assert!(result.degenerate.is_empty());

    let fdi = spectral::fdi(&scene).unwrap();
    let original = rasterize_lines(&lines, 24, 14).unwrap();
    assert_eq!(result.masks[24], original);
    for (i, p) in RefinementParams::grid().iter().enumerate() {
        let buffered = brute_buffer(&original, p.buffer_px as usize);
        let inside: Vec<f64> = fdi
            .values
            .data()
            .iter()
            .zip(buffered.data())
            .filter(|(_, l)| l.is_debris())
            .map(|(v, _)| *v as f64)
            .collect();
        let prelim = match support::otsu_oracle(&inside) {
            Some(t) => Grid::from_fn(24, 14, |x, y| {
                if buffered.get(x, y).is_debris() && (*fdi.values.get(x, y) as f64) > t {
                    Label::Debris
                } else {
                    Label::Other
                }
            }),
            None => buffered.clone(),
        };
        let markers = sample_markers(&prelim, p, config_seed(42, i)).unwrap();
        let dense = support::dense_walker(&fdi.values, &markers, p.beta);
        for (k, (&d, l)) in dense.iter().zip(result.masks[i].data()).enumerate() {
            if (d - 0.5).abs() > 1e-6 {
                assert_eq!(l.is_debris(), d > 0.5, "config {i} pixel {k}");
            }
        }
        let touches = result.masks[i]
            .data()
            .iter()
            .zip(ridge.data())
            .any(|(a, b)| a.is_debris() && b.is_debris());
        assert!(touches, "config {i} misses the ridge");
    }
    assert_eq!(BUFFER_GRID.len() * 8, 24);
}

#[test]
fn refinement_is_deterministic_and_average_is_mean() {
    let (scene, lines, _) = ridge_scene(48, 24, 1).unwrap();
    let a = refine_labels(&scene, &lines, 9).unwrap();
    let b = refine_labels(&scene, &lines, 9).unwrap();
    assert_eq!(a, b);
    for (i, &v) in a.average.data().iter().enumerate() {
        let n = a.masks.iter().filter(|m| m.data()[i].is_debris()).count();
        assert_eq!(v, n as f32 / 25.0);
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn constant_fdi_falls_back_to_buffer() {
    use driftscan::raster::{BandId, ProcessingLevel, Scene};
    use driftscan::refine::LineAnnotationSet;
    let scene = Scene::filled(20, 10, &BandId::ALL, 0.05, ProcessingLevel::L2A).unwrap();
    let lines = LineAnnotationSet::new(vec![vec![(3, 5), (15, 5)]]).unwrap();
    let r = refine_labels(&scene, &lines, 1).unwrap();
    assert_eq!(r.masks.len(), 25);
    assert!(r.degenerate.is_empty());
    assert_eq!(r.masks[24].debris_count(), 13);
}
