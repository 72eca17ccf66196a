use proptest::prelude::*;
use tm3_core::tracker::{cue_confidences, fast_select_e, fast_select_r, fuse, Cue};
use tm3_core::{BoundingBox, TargetState};

fn select_r_oracle(candidates: &[Vec<i32>], reference: &[i32], n: usize) -> Vec<usize> {
    let dist = |c: &[i32]| -> i64 { c.iter().zip(reference).map(|(a, b)| ((a - b) as i64).pow(2)).sum() };
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by_key(|&i| (dist(&candidates[i]), i));
    idx.truncate(n);
    idx
}

fn state(cx: f64, cy: f64, scale: f64) -> TargetState<f64> {
    TargetState::new(cx, cy, scale, 0).unwrap()
}

fn geometry_oracle(p: &TargetState<f64>, a: &TargetState<f64>, w: f64, h: f64, tau: f64) -> f64 {
    let s = p.scale + a.scale;
    let tx = (a.cx - p.cx) / (w * s);
    let ty = (a.cy - p.cy) / (h * s);
    let ts = tau * (a.scale - p.scale) / s;
    (tx.powi(2) + ty.powi(2) + ts.powi(2)).sqrt()
}

proptest! {
    #[test]
    fn fast_select_r_matches_sort_oracle(
        cands in prop::collection::vec(prop::collection::vec(-3i32..=3, 5), 1..60),
        reference in prop::collection::vec(-3i32..=3, 5),
        n in 0usize..70,
    ) {
        let as_f: Vec<Vec<f64>> = cands.iter().map(|c| c.iter().map(|&v| v as f64).collect()).collect();
        let slices: Vec<&[f64]> = as_f.iter().map(|c| c.as_slice()).collect();
        let r: Vec<f64> = reference.iter().map(|&v| v as f64).collect();
        let got = fast_select_r(&slices, &r, n).unwrap();
        prop_assert_eq!(got, select_r_oracle(&cands, &reference, n));
    }

    #[test]
    fn fast_select_e_matches_brute_force(
        props in prop::collection::vec((0.0f64..300.0, 0.0f64..200.0, 0.5f64..2.0), 1..80),
        anchor in (0.0f64..300.0, 0.0f64..200.0, 0.5f64..2.0),
        dims in (5.0f64..80.0, 5.0f64..80.0),
        tau in 0.1f64..4.0,
        n in 1usize..60,
        rotate in 0usize..80,
    ) {
        let states: Vec<_> = props.iter().map(|&(x, y, s)| state(x, y, s)).collect();
        let a = state(anchor.0, anchor.1, anchor.2);
        let sel = fast_select_e(&states, &a, n, tau, dims).unwrap();

        let mut expect: Vec<(f64, usize)> = states
            .iter()
            .enumerate()
            .map(|(i, p)| (geometry_oracle(p, &a, dims.0, dims.1, tau), i))
            .collect();
        expect.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        expect.truncate(n);
        prop_assert_eq!(&sel.kept, &expect.iter().map(|e| e.1).collect::<Vec<_>>());
        for (d, e) in sel.distances.iter().zip(&expect) {
            prop_assert!((d - e.0).abs() <= 1e-12 * (1.0 + e.0));
        }
        prop_assert!(sel.distances.windows(2).all(|w| w[0] <= w[1]));

        // Reordering the input leaves the selected set unchanged.
        let k = rotate % states.len();
        let mut rotated = states.clone();
        rotated.rotate_left(k);
        let sel2 = fast_select_e(&rotated, &a, n, tau, dims).unwrap();
        let back: Vec<usize> = sel2.kept.iter().map(|&i| (i + k) % states.len()).collect();
        let mut d1 = sel.distances.clone();
        let mut d2 = sel2.distances.clone();
        d1.sort_by(|x, y| x.partial_cmp(y).unwrap());
        d2.sort_by(|x, y| x.partial_cmp(y).unwrap());
        prop_assert_eq!(d1, d2);
        let distinct = expect.windows(2).all(|w| w[0].0 < w[1].0);
        if distinct {
            prop_assert_eq!(back, sel.kept);
        }
    }
}

#[test]
fn select_e_prefers_anchor_and_penalizes_scale() {
    let a = state(100.0, 100.0, 1.0);
    let props = vec![state(110.0, 100.0, 1.0), state(100.0, 100.0, 1.0), state(100.0, 100.0, 1.3)];
    let sel = fast_select_e(&props, &a, 3, 1.0, (40.0, 40.0)).unwrap();
    assert_eq!(sel.argmin(), Some(1));
    assert_eq!(sel.distances[0], 0.0);
    // 10 px over a summed scale of 2 and width 40 gives 0.125; the scale term
    // gives 0.3 / 2.3.
    assert_eq!(sel.kept, vec![1, 0, 2]);
    assert!((sel.distances[1] - 0.125).abs() < 1e-12);
    assert!((sel.distances[2] - 0.3 / 2.3).abs() < 1e-12);
}

#[test]
fn hand_built_cue_confidences() {
    let b = |x: f64| BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap();
    let cues = [
        Cue { bbox: b(0.0), score_r: 0.5, score_e: 0.25 },
        Cue { bbox: b(5.0), score_r: 0.25, score_e: 0.25 },
        Cue { bbox: b(100.0), score_r: 0.9, score_e: 0.9 },
    ];
    // The first two boxes overlap by 50 of 150 square pixels.
    let third = 1.0 / 3.0;
    let c = cue_confidences(&cues);
    assert!((c[0] - (0.75 + third)).abs() < 1e-12);
    assert!((c[1] - (0.5 + third)).abs() < 1e-12);
    assert!((c[2] - 1.8).abs() < 1e-12);
    assert_eq!(fuse(&c), 2);

    let agreeing = [
        Cue { bbox: b(0.0), score_r: 0.6, score_e: 0.6 },
        Cue { bbox: b(0.0), score_r: 0.6, score_e: 0.6 },
        Cue { bbox: b(100.0), score_r: 0.9, score_e: 0.9 },
    ];
    let c = cue_confidences(&agreeing);
    for (got, want) in c.iter().zip([2.2, 2.2, 1.8]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(fuse(&c), 0);
}

#[test]
fn fuse_breaks_ties_toward_earlier_cues() {
    assert_eq!(fuse(&[1.0, 1.0, 1.0]), 0);
    assert_eq!(fuse(&[0.0, 2.0, 2.0]), 1);
    assert_eq!(fuse(&[0.0, 1.0, 3.0]), 2);
}
