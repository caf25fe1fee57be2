use flexdet::data::shapes::{rle_decode, rle_encode};
use flexdet::eval::{evaluate_ap, GroundTruth, IouKind, Prediction};
use flexdet::model::{window_merge, window_partition};
use flexdet::nas::pareto_frontier;
use flexdet::raster::Mask;
use flexdet::tensor::Matrix;
use flexdet::train::{ema_update, linear_assignment};
use proptest::prelude::*;

mod common;
use common::frontier_oracle;

fn grid_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    // Coarse grid so ties and duplicates are common.
    prop::collection::vec((0u8..8, 0u8..8).prop_map(|(a, b)| (a as f64, b as f64 / 8.0)), 0..40)
}

proptest! {
    #[test]
    fn frontier_equals_dominance_oracle(p in grid_points()) {
        prop_assert_eq!(pareto_frontier(&p), frontier_oracle(&p));
    }

    #[test]
    fn frontier_is_idempotent(p in grid_points()) {
        let f = pareto_frontier(&p);
        let sub: Vec<(f64, f64)> = f.iter().map(|&i| p[i]).collect();
        prop_assert_eq!(pareto_frontier(&sub), (0..sub.len()).collect::<Vec<_>>());
    }

    #[test]
    fn frontier_accuracy_strictly_increases_with_latency(p in grid_points()) {
        let mut f: Vec<(f64, f64)> = pareto_frontier(&p).into_iter().map(|i| p[i]).collect();
        f.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in f.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
    }

    #[test]
    fn frontier_ignores_input_order(p in grid_points(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..p.len()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<(f64, f64)> = perm.iter().map(|&i| p[i]).collect();
        let a: std::collections::BTreeSet<_> = pareto_frontier(&p).into_iter().map(|i| (p[i].0.to_bits(), p[i].1.to_bits())).collect();
        let b: std::collections::BTreeSet<_> = pareto_frontier(&shuffled).into_iter().map(|i| (shuffled[i].0.to_bits(), shuffled[i].1.to_bits())).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn assignment_is_optimal(rows in 1usize..5, cols in 1usize..5, vals in prop::collection::vec(0.0f64..10.0, 25)) {
        let cost: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| vals[r * 5 + c]).collect()).collect();
        let got = linear_assignment(&cost);
        prop_assert_eq!(got.len(), rows.min(cols));
        let total: f64 = got.iter().map(|&(r, c)| cost[r][c]).sum();
        prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
    }

    #[test]
    fn ema_stays_between_old_and_new(e0 in -5.0f64..5.0, p in -5.0f64..5.0, decay in 0.0f64..=1.0) {
        let mut e = vec![Matrix::filled(1, 1, e0)];
        ema_update(&mut e, &[Matrix::filled(1, 1, p)], decay).unwrap();
        let v = e[0].get(0, 0);
        prop_assert!(v >= e0.min(p) - 1e-12 && v <= e0.max(p) + 1e-12);
    }

    #[test]
    fn window_round_trip(side_per in 1usize..4, windows in 1usize..4, dim in 1usize..4, seed in any::<u32>()) {
        let grid = side_per * windows;
        let n = 1 + grid * grid;
        let m = Matrix::from_fn(n, dim, |r, c| ((r * 31 + c * 7) as f64 + seed as f64).sin());
        let groups = window_partition(&m, windows).unwrap();
        prop_assert_eq!(groups.len(), windows * windows);
        let back = window_merge(&groups, windows).unwrap();
        // Spatial rows come back exactly; the class row is a mean of equal copies.
        prop_assert_eq!(back.slice_rows(1, n - 1), m.slice_rows(1, n - 1));
        for c in 0..dim {
            prop_assert!((back.get(0, c) - m.get(0, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn rle_round_trip(h in 1usize..12, w in 1usize..12, bits in prop::collection::vec(any::<bool>(), 144)) {
        let mut m = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                m.set(y, x, bits[y * 12 + x]);
            }
        }
        prop_assert_eq!(rle_decode(h, w, &rle_encode(&m)), m);
    }

    #[test]
    fn ap_invariant_under_monotone_score_transform(case in detection_case()) {
        let (preds, gts) = case;
        let base = evaluate_ap(&preds, &gts, 2, IouKind::Box).unwrap();
        let squashed: Vec<Vec<Prediction>> = preds
            .iter()
            .map(|p| p.iter().map(|d| Prediction { score: d.score.powi(3) * 0.5 + 0.1, ..d.clone() }).collect())
            .collect();
        prop_assert_eq!(evaluate_ap(&squashed, &gts, 2, IouKind::Box).unwrap(), base);
    }

    #[test]
    fn duplicates_of_perfect_predictions_are_false_positives(case in detection_case()) {
        let (_, gts) = case;
        let perfect: Vec<Vec<Prediction>> = gts
            .iter()
            .map(|g| g.iter().enumerate().map(|(i, o)| Prediction {
                class_id: o.class_id,
                score: 0.9 - 0.01 * i as f64,
                bbox: o.bbox,
                mask: None,
            }).collect())
            .collect();
        let with_dups: Vec<Vec<Prediction>> = perfect
            .iter()
            .map(|p| {
                let mut v = p.clone();
                v.extend(p.iter().map(|d| Prediction { score: d.score * 0.5, ..d.clone() }));
                v
            })
            .collect();
        let a = evaluate_ap(&perfect, &gts, 2, IouKind::Box).unwrap();
        let b = evaluate_ap(&with_dups, &gts, 2, IouKind::Box).unwrap();
        prop_assert_eq!(&a, &b);
        if gts.iter().any(|g| !g.is_empty()) {
            prop_assert!((a.ap - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_is_a_fraction(case in detection_case()) {
        let (preds, gts) = case;
        let r = evaluate_ap(&preds, &gts, 2, IouKind::Box).unwrap();
        for v in [r.ap, r.ap50, r.ap75] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.ap50 >= r.ap75);
    }
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, left: usize) -> f64 {
        if left == 0 || r == cost.len() {
            return if left == 0 { 0.0 } else { f64::INFINITY };
        }
        let mut best = go(cost, r + 1, used, left).min(f64::INFINITY);
        if cost.len() - r < left {
            return f64::INFINITY;
        }
        for c in 0..cost[r].len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[r][c] + go(cost, r + 1, used, left - 1));
                used[c] = false;
            }
        }
        best
    }
    let k = cost.len().min(cost[0].len());
    go(cost, 0, &mut vec![false; cost[0].len()], k)
}

fn xywh() -> impl Strategy<Value = [f64; 4]> {
    (0.0f64..80.0, 0.0f64..80.0, 2.0f64..30.0, 2.0f64..30.0).prop_map(|(x, y, w, h)| [x, y, w, h])
}

/// Random predictions (jittered copies of ground truth plus clutter) and
/// ground truth over three images and two classes.
fn detection_case() -> impl Strategy<Value = (Vec<Vec<Prediction>>, Vec<Vec<GroundTruth>>)> {
    let gt = (0usize..2, xywh()).prop_map(|(class_id, bbox)| GroundTruth {
        class_id,
        bbox,
        mask: None,
    });
    let image = (
        prop::collection::vec(gt, 0..4),
        prop::collection::vec((0usize..2, xywh(), 0.0f64..1.0), 0..4),
        prop::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 4),
    )
        .prop_map(|(gts, clutter, jitter)| {
            let mut preds: Vec<Prediction> = gts
                .iter()
                .zip(&jitter)
                .map(|(g, &(dx, s))| Prediction {
                    class_id: g.class_id,
                    score: s,
                    bbox: [g.bbox[0] + dx, g.bbox[1] - dx, g.bbox[2], g.bbox[3]],
                    mask: None,
                })
                .collect();
            preds.extend(clutter.into_iter().map(|(class_id, bbox, score)| Prediction {
                class_id,
                score,
                bbox,
                mask: None,
            }));
            (preds, gts)
        });
    prop::collection::vec(image, 3).prop_map(|v| v.into_iter().unzip())
}
