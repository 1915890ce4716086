use proptest::prelude::*;
use tequila_core::diagnostics::{boundary_fraction, deadzone_fraction, weight_histogram};
use tequila_core::quantizer::{quantize, Granularity, QuantScheme};
use tequila_core::{deadzone_mask, tequila_bias, Matrix};

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..12).prop_flat_map(|(r, c)| {
        prop::collection::vec(-4.0f64..4.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn granularity(cols: usize) -> impl Strategy<Value = Granularity> {
    prop_oneof![
        Just(Granularity::PerTensor),
        Just(Granularity::PerChannel),
        (1..=cols + 2).prop_map(|group_size| Granularity::PerGroup { group_size }),
    ]
}

fn case() -> impl Strategy<Value = (Matrix, Granularity, QuantScheme)> {
    matrix().prop_flat_map(|w| {
        let c = w.cols();
        (Just(w), granularity(c), prop_oneof![Just(QuantScheme::Absmean), Just(QuantScheme::Twn)])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn negation_flips_codes((w, g, s) in case()) {
        let q = quantize(&w, s, g).unwrap();
        let qn = quantize(&w.scale(-1.0), s, g).unwrap();
        prop_assert_eq!(q.scales(), qn.scales());
        let flipped: Vec<i8> = q.codes().iter().map(|c| -c).collect();
        prop_assert_eq!(qn.codes(), &flipped[..]);
    }

    #[test]
    fn per_channel_equals_full_row_groups((w, _, s) in case()) {
        let a = quantize(&w, s, Granularity::PerChannel).unwrap();
        let b = quantize(&w, s, Granularity::PerGroup { group_size: w.cols() }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn single_row_per_tensor_equals_per_channel((w, _, s) in case()) {
        let row = Matrix::from_vec(1, w.cols(), w.row(0).to_vec()).unwrap();
        let a = quantize(&row, s, Granularity::PerTensor).unwrap();
        let b = quantize(&row, s, Granularity::PerChannel).unwrap();
        prop_assert_eq!(a.codes(), b.codes());
        prop_assert_eq!(a.scales(), b.scales());
        prop_assert_eq!(a.thresholds(), b.thresholds());
    }

    #[test]
    fn rows_quantize_independently((w, _, s) in case(), gs in 1usize..8) {
        let g = Granularity::PerGroup { group_size: gs };
        let whole = quantize(&w, s, g).unwrap();
        let per = whole.layout().segments_per_row();
        for r in 0..w.rows() {
            let row = Matrix::from_vec(1, w.cols(), w.row(r).to_vec()).unwrap();
            let q = quantize(&row, s, g).unwrap();
            prop_assert_eq!(q.code_row(0), whole.code_row(r));
            prop_assert_eq!(q.scales(), &whole.scales()[r * per..(r + 1) * per]);
        }
    }

    #[test]
    fn zero_scale_groups_have_zero_codes((w, g, s) in case()) {
        let q = quantize(&w, s, g).unwrap();
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                if q.scale_at(r, c) == 0.0 {
                    prop_assert_eq!(q.code(r, c), 0);
                }
            }
        }
    }

    #[test]
    fn fractions_survive_positive_rescaling((w, g, s) in case(), k in prop_oneof![Just(0.25), Just(2.0), Just(8.0)]) {
        // powers of two keep every comparison exact
        let q = quantize(&w, s, g).unwrap();
        let ws = w.scale(k);
        let qs = quantize(&ws, s, g).unwrap();
        prop_assert_eq!(q.codes(), qs.codes());
        prop_assert_eq!(deadzone_fraction(&w, &q).unwrap(), deadzone_fraction(&ws, &qs).unwrap());
        prop_assert_eq!(boundary_fraction(&w, &q, 0.1).unwrap(), boundary_fraction(&ws, &qs, 0.1).unwrap());
    }

    #[test]
    fn histogram_counts_every_weight((w, g, s) in case(), bins in 2usize..40) {
        let q = quantize(&w, s, g).unwrap();
        if let Ok(h) = weight_histogram(&w, &q, bins) {
            prop_assert_eq!(h.total(), (w.rows() * w.cols()) as u64);
            prop_assert!(h.edges.windows(2).all(|e| e[0] < e[1]));
        }
    }

    #[test]
    fn bias_is_lambda_times_dead_row_sum((w, g, s) in case(), lambda in 0.0f64..1.0) {
        let q = quantize(&w, s, g).unwrap();
        let mask = deadzone_mask(&w, &q).unwrap();
        let bias = tequila_bias(&w, &mask, lambda).unwrap();
        for r in 0..w.rows() {
            let mut sum = 0.0;
            for c in 0..w.cols() {
                if w.get(r, c).abs() < q.threshold_at(r, c) {
                    sum += w.get(r, c);
                }
            }
            let want = lambda * sum;
            prop_assert!((bias.as_slice()[r] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}
