use htsat_core::augment::{apply_masks, mixup, MaskDraw};
use htsat_core::dsp::MelSpectrogram;
use htsat_core::head::{pool_clip_values, PresenceMap};
use htsat_core::metrics::{average_precision, decode_events, rasterize, DecodeParams};
use htsat_core::optim::lr_factor;
use htsat_core::tensor::invert_permutation;
use htsat_core::tokenizer::{patch_embed, TokenGrid};
use htsat_core::window::WindowLayout;
use htsat_core::{Graph, Tensor};
use proptest::prelude::*;

fn spec_from(values: Vec<f32>, t: usize, f: usize) -> MelSpectrogram {
    MelSpectrogram {
        values,
        n_frames: t,
        n_mels: f,
        hop_seconds: 0.01,
        sample_rate: 32_000,
    }
}

/// Rank-by-counting AP: the rank of item `i` is one plus the number of items
/// scored higher, or equal with a smaller index.
fn brute_force_ap(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut terms: Vec<(usize, usize)> = (0..n)
        .filter(|&i| labels[i])
        .map(|i| {
            let rank = 1 + (0..n).filter(|&j| ahead(j, i)).count();
            let hits = 1 + (0..n).filter(|&j| labels[j] && ahead(j, i)).count();
            (rank, hits)
        })
        .collect();
    // summed in rank order so the floating-point result is reproducible exactly
    terms.sort();
    let total: f64 = terms.iter().map(|&(rank, hits)| hits as f64 / rank as f64).sum();
    Some(total / positives as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_orders_are_inverse(rows in 1usize..6, freq in 1usize..6, windows in 1usize..5) {
        let g = TokenGrid::new(rows, freq, windows).unwrap();
        let to_grid = g.time_major_to_grid();
        let back = g.grid_to_time_major();
        prop_assert_eq!(invert_permutation(&to_grid), back);
        let seq: Vec<u32> = (0..g.len() as u32).collect();
        prop_assert_eq!(g.sequence_order(), seq);
        for row in 0..rows {
            for col in 0..g.cols() {
                let (w, tau, phi) = g.from_grid(row, col);
                prop_assert_eq!(g.to_grid(w, tau, phi), (row, col));
            }
        }
    }

    #[test]
    fn window_partition_round_trips(wr in 1usize..4, wc in 1usize..4, m in 1usize..5, shifted in any::<bool>()) {
        let shift = if shifted { m / 2 } else { 0 };
        let layout = WindowLayout::new(wr * m, wc * m, m, shift).unwrap();
        let fwd = layout.partition_indices();
        let rev = layout.reverse_indices();
        for (i, &r) in rev.iter().enumerate() {
            prop_assert_eq!(fwd[r as usize] as usize, i);
        }
    }

    #[test]
    fn unmasked_pairs_are_contiguous(wr in 2usize..4, wc in 2usize..4, m in 2usize..5) {
        let shift = m / 2;
        let layout = WindowLayout::new(wr * m, wc * m, m, shift).unwrap();
        let mask = layout.mask::<f64>().unwrap();
        let n = layout.tokens();
        for w in 0..layout.count() {
            for a in 0..n {
                for b in 0..n {
                    let v = mask.data()[(w * n + a) * n + b];
                    prop_assert_eq!(v, mask.data()[(w * n + b) * n + a]);
                    if v == 0.0 {
                        let (ra, ca) = layout.source(w, a);
                        let (rb, cb) = layout.source(w, b);
                        prop_assert!(ra.abs_diff(rb) < m && ca.abs_diff(cb) < m);
                    }
                }
            }
        }
    }

    #[test]
    fn patch_embed_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let mut rng = htsat_core::SeededRng::new(seed);
        let mut rand = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal()).collect() };
        let (t, f, p, d) = (8, 8, 4, 3);
        let x = rand(t * f);
        let y = rand(t * f);
        let w = rand(d * p * p);
        let embed = |s: &[f64]| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let sv = g.constant(Tensor::new(&[t, f], s.to_vec()).unwrap());
            let wv = g.constant(Tensor::new(&[d, 1, p, p], w.clone()).unwrap());
            let bv = g.constant(Tensor::zeros(&[d]));
            let out = patch_embed(&mut g, sv, wv, bv, p).unwrap();
            g.value(out).data().to_vec()
        };
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (ex, ey, em) = (embed(&x), embed(&y), embed(&mix));
        for i in 0..em.len() {
            prop_assert!((em[i] - (a * ex[i] + b * ey[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn mixup_preserves_target_mass(lambda in 0.0f64..=1.0, ya in prop::collection::vec(0.0f32..=1.0, 5), yb in prop::collection::vec(0.0f32..=1.0, 5)) {
        let s = spec_from(vec![0.0; 4], 2, 2);
        let (_, y) = mixup(&s, &ya, &s, &yb, lambda).unwrap();
        let l = lambda as f32;
        for i in 0..5 {
            prop_assert_eq!(y[i], l * ya[i] + (1.0 - l) * yb[i]);
        }
        let got: f32 = y.iter().sum();
        let want = l * ya.iter().sum::<f32>() + (1.0 - l) * yb.iter().sum::<f32>();
        prop_assert!((got - want).abs() < 1e-5);
    }

    #[test]
    fn masking_leaves_outside_cells(ts in 0usize..20, tw in 0usize..10, fs in 0usize..12, fw in 0usize..6, seed in 0u64..100) {
        let (t, f) = (30, 18);
        let mut rng = htsat_core::SeededRng::new(seed);
        let spec = spec_from((0..t * f).map(|_| rng.normal() as f32).collect(), t, f);
        let d = MaskDraw { time_start: ts, time_width: tw, freq_start: fs, freq_width: fw };
        let out = apply_masks(&spec, &[d]);
        let mean = (spec.values.iter().map(|&v| v as f64).sum::<f64>() / (t * f) as f64) as f32;
        for i in 0..t {
            for j in 0..f {
                let inside = (ts..ts + tw).contains(&i) || (fs..fs + fw).contains(&j);
                let v = out.values[i * f + j];
                if inside {
                    prop_assert_eq!(v, mean);
                } else {
                    prop_assert_eq!(v, spec.values[i * f + j]);
                }
            }
        }
    }

    #[test]
    fn clip_pooling_ignores_time_order(values in prop::collection::vec(0.0f32..=1.0, 24), perm_seed in 0u64..1000) {
        let map = PresenceMap::new(8, 3, values.clone()).unwrap();
        let mut order: Vec<usize> = (0..8).collect();
        let mut rng = htsat_core::SeededRng::new(perm_seed);
        for i in (1..8).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let shuffled: Vec<f32> = order.iter().flat_map(|&t| values[t * 3..t * 3 + 3].to_vec()).collect();
        let a = pool_clip_values(&map);
        let b = pool_clip_values(&PresenceMap::new(8, 3, shuffled).unwrap());
        for c in 0..3 {
            prop_assert!((a[c] - b[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn ap_matches_brute_force(scores in prop::collection::vec(0u8..6, 1..30), labels_bits in prop::collection::vec(any::<bool>(), 30)) {
        // coarse scores force ties
        let s: Vec<f32> = scores.iter().map(|&v| v as f32 / 5.0).collect();
        let l = &labels_bits[..s.len()];
        prop_assert_eq!(average_precision(&s, l), brute_force_ap(&s, l));
    }

    #[test]
    fn decode_then_rasterize_is_identity_on_clean_maps(runs in prop::collection::vec((3usize..6, 3usize..6), 1..4), classes in 1usize..3) {
        let mut series = Vec::new();
        for &(gap, len) in &runs {
            series.extend(std::iter::repeat_n(0.0f32, gap));
            series.extend(std::iter::repeat_n(1.0f32, len));
        }
        series.extend([0.0; 3]);
        let steps = series.len();
        let values: Vec<f32> = (0..steps).flat_map(|t| std::iter::repeat_n(series[t], classes)).collect();
        let map = PresenceMap::new(steps, classes, values.clone()).unwrap();
        let params = DecodeParams { threshold: 0.5, min_duration: 0.0 };
        let evs = decode_events(&map, params, 0.32).unwrap();
        prop_assert_eq!(evs.len(), runs.len() * classes);
        let raster = rasterize(&evs, steps, classes, 0.32);
        let expected: Vec<bool> = values.iter().map(|&v| v >= 0.5).collect();
        prop_assert_eq!(raster, expected);
    }

    #[test]
    fn lr_factor_bounded_after_warmup(e in 3usize..10_000) {
        prop_assert!(lr_factor(e + 1) <= lr_factor(e));
        prop_assert!((0.05..=0.2).contains(&lr_factor(e)));
    }
}
