mod common;

use common::*;
use erank_core::metrics::{cross_entropy_loss, SequenceLogProbs};
use erank_core::{
    covariance_spectrum, diff_erank_sentence, erank_general, image_reduction_ratio, image_text_alignment,
    ModelDatasetSummary, RepresentationSet, SentenceEntropyRecord, SpectrumRoute,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn reps_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (3..=max_n, 1..=max_d).prop_flat_map(|(n, d)| (Just(n), Just(d), prop::collection::vec(-10.0f64..10.0, n * d)))
}

fn rows_with_dim(max_n: usize, d: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (3..=max_n).prop_flat_map(move |n| (Just(n), prop::collection::vec(-10.0f64..10.0, n * d)))
}

fn erank(reps: &RepresentationSet) -> f64 {
    covariance_spectrum(reps, SpectrumRoute::Auto).unwrap().spectrum.erank()
}

fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let rows = random_rows(&mut rng(seed), d, d);
    let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
    m.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_invariance((n, d, data) in reps_strategy(24, 16), shift in prop::collection::vec(-100.0f64..100.0, 16)) {
        let reps = RepresentationSet::new(n, d, data.clone()).unwrap();
        let moved: Vec<f64> = data.iter().enumerate().map(|(k, v)| v + shift[k % d]).collect();
        let moved = RepresentationSet::new(n, d, moved).unwrap();
        prop_assert!((erank(&reps) - erank(&moved)).abs() <= 1e-8);
    }

    #[test]
    fn positive_scale_invariance((n, d, data) in reps_strategy(24, 16), c in 1e-3f64..1e3) {
        let reps = RepresentationSet::new(n, d, data.clone()).unwrap();
        let scaled = RepresentationSet::new(n, d, data.iter().map(|v| v * c).collect()).unwrap();
        let (a, b) = (
            covariance_spectrum(&reps, SpectrumRoute::Dense).unwrap().spectrum,
            covariance_spectrum(&scaled, SpectrumRoute::Dense).unwrap().spectrum,
        );
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
        prop_assert!((a.entropy() - b.entropy()).abs() <= 1e-8);
        prop_assert!((a.erank() - b.erank()).abs() <= 1e-8);
    }

    #[test]
    fn rotation_invariance((n, d, data) in reps_strategy(24, 16), seed in any::<u64>()) {
        let m = DMatrix::from_row_slice(n, d, &data);
        let rotated = m * random_orthogonal(d, seed);
        let rotated: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| rotated[(i, j)]).collect();
        let a = covariance_spectrum(&RepresentationSet::new(n, d, data).unwrap(), SpectrumRoute::Auto).unwrap().spectrum;
        let b = covariance_spectrum(&RepresentationSet::new(n, d, rotated).unwrap(), SpectrumRoute::Auto).unwrap().spectrum;
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
        prop_assert!((a.erank() - b.erank()).abs() <= 1e-8);
    }

    #[test]
    fn permutation_invariance((_n, d, data) in reps_strategy(24, 16), seed in any::<u64>()) {
        let rows: Vec<Vec<f64>> = data.chunks(d).map(|c| c.to_vec()).collect();
        let mut shuffled = rows.clone();
        let mut r = rng(seed);
        for i in (1..shuffled.len()).rev() {
            let j = rand::Rng::random_range(&mut r, 0..=i);
            shuffled.swap(i, j);
        }
        prop_assert!((erank(&to_reps(&rows)) - erank(&to_reps(&shuffled))).abs() <= 1e-8);
    }

    #[test]
    fn bounds((n, d, data) in reps_strategy(40, 40)) {
        let cs = covariance_spectrum(&RepresentationSet::new(n, d, data).unwrap(), SpectrumRoute::Auto).unwrap();
        let cap = (cs.rows_used - 1).min(d) as f64;
        let h = cs.spectrum.entropy();
        prop_assert!(h >= 0.0 && h <= cap.ln() + 1e-10);
        let e = cs.spectrum.erank();
        prop_assert!(e >= 1.0 - 1e-10 && e <= cap + 1e-10, "erank {} cap {}", e, cap);
    }

    #[test]
    fn route_equivalence((n, d, data) in reps_strategy(64, 64)) {
        let reps = RepresentationSet::new(n, d, data).unwrap();
        let dense = covariance_spectrum(&reps, SpectrumRoute::Dense).unwrap().spectrum.entropy();
        let gram = covariance_spectrum(&reps, SpectrumRoute::Gram).unwrap().spectrum.entropy();
        prop_assert!((dense - gram).abs() <= 1e-8, "{} vs {}", dense, gram);
    }

    #[test]
    fn erank_general_scale_invariance((n, d, data) in reps_strategy(12, 12), c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
        let m = DMatrix::from_row_slice(n, d, &data);
        prop_assume!(m.iter().any(|v| *v != 0.0));
        let a = erank_general(&m).unwrap();
        let b = erank_general(&(m.clone() * c)).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a);
        prop_assert!(a >= 1.0 - 1e-12 && a <= n.min(d) as f64 + 1e-10);
    }

    #[test]
    fn jensen_ordering(entropies in prop::collection::vec(0.0f64..5.0, 1..40)) {
        let records = entropies.iter().enumerate().map(|(i, h)| SentenceEntropyRecord {
            sentence_id: format!("s{i}"),
            token_count: 4,
            entropy: *h,
            erank: h.exp(),
            dropped_rows: 0,
        }).collect();
        let s = ModelDatasetSummary::from_records("m", -1, records);
        prop_assert!(s.erank_b >= s.erank_a * (1.0 - 1e-12));
    }

    #[test]
    fn alignment_is_symmetric_and_scale_free(e in prop::array::uniform3(1.0f64..200.0), c in 0.01f64..100.0) {
        let base = image_text_alignment(e[0], e[1], e[2]);
        for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            prop_assert!((image_text_alignment(e[p[0]], e[p[1]], e[p[2]]) - base).abs() <= 1e-14);
        }
        prop_assert!((image_text_alignment(c * e[0], c * e[1], c * e[2]) - base).abs() <= 1e-12);
        prop_assert!(base > 1.0 / 3.0 && base <= 1.0);
    }

    #[test]
    fn reduction_ratio_is_scale_free(e1 in 1.0f64..200.0, e2 in 1.0f64..200.0, c in 1.0f64..50.0) {
        let r = image_reduction_ratio(e1, e2);
        prop_assert!((image_reduction_ratio(c * e1, c * e2) - r).abs() <= 1e-12);
        prop_assert!(r <= 1.0);
    }

    #[test]
    fn loss_is_order_free(lp in prop::collection::vec(-20.0f64..0.0, 1..64), seed in any::<u64>()) {
        let mut shuffled = lp.clone();
        let mut r = rng(seed);
        for i in (1..shuffled.len()).rev() {
            let j = rand::Rng::random_range(&mut r, 0..=i);
            shuffled.swap(i, j);
        }
        let a = cross_entropy_loss(&SequenceLogProbs::new("a", lp).unwrap());
        let b = cross_entropy_loss(&SequenceLogProbs::new("b", shuffled).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn sentence_diff_is_antisymmetric((d, (n, data), (m, other)) in (1usize..=8).prop_flat_map(|d| (Just(d), rows_with_dim(16, d), rows_with_dim(16, d)))) {
        let a = RepresentationSet::new(n, d, data).unwrap();
        let b = RepresentationSet::new(m, d, other).unwrap();
        prop_assert_eq!(diff_erank_sentence(&a, &b).unwrap(), -diff_erank_sentence(&b, &a).unwrap());
    }
}
