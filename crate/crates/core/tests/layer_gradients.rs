//! Layer-level checks: finite differences, degenerate reductions and cache rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tequila_core::qat::{Adam, AdamConfig};
use tequila_core::{Error, Granularity, Matrix, QuantLinearLayer, Scheme};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn layer(rng: &mut ChaCha8Rng, scheme: Scheme, lambda: f64, epsilon: f64) -> QuantLinearLayer {
    let w = random_matrix(rng, 4, 7);
    QuantLinearLayer::new(w, scheme, Granularity::PerGroup { group_size: 3 }, lambda, epsilon).unwrap()
}

fn loss(y: &Matrix, g: &Matrix) -> f64 {
    y.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
}

const ALL: [Scheme; 8] = [
    Scheme::Absmean,
    Scheme::Twn,
    Scheme::Lsq,
    Scheme::Seq,
    Scheme::Dlt,
    Scheme::Minima,
    Scheme::Tequila,
    Scheme::TequilaNoMixed,
];

#[test]
fn input_gradient_matches_finite_differences() {
    // all forwards are linear in x except minima's sign(x) term, so use epsilon = 0 there
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for scheme in ALL {
        let mut l = layer(&mut rng, scheme, 0.05, 0.0);
        if scheme.learns_offset() {
            let n = l.offsets().unwrap().len();
            l.set_offsets((0..n).map(|_| rng.gen_range(-0.3..0.3)).collect()).unwrap();
        }
        let x = random_matrix(&mut rng, 3, 7);
        let g = random_matrix(&mut rng, 3, 4);
        l.forward(&x).unwrap();
        let grads = l.backward(&g).unwrap();
        let h = 0.5;
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (loss(&l.infer(&xp).unwrap(), &g) - loss(&l.infer(&xm).unwrap(), &g)) / (2.0 * h);
            let got = grads.input.as_slice()[i];
            assert!((fd - got).abs() <= 1e-9 * (1.0 + fd.abs()), "{scheme} x[{i}]: {got} vs {fd}");
        }
    }
}

#[test]
fn tequila_bias_path_matches_finite_differences() {
    // with the live codes frozen, d(loss)/dw on a dead weight through the bias is lambda * sum_b g
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lambda = 0.3;
    let w = random_matrix(&mut rng, 6, 24);
    let gran = Granularity::PerGroup { group_size: 8 };
    let mut l = QuantLinearLayer::new(w, Scheme::TequilaNoMixed, gran, lambda, 0.0).unwrap();
    let x = random_matrix(&mut rng, 2, 24);
    let g = random_matrix(&mut rng, 2, 6);
    l.forward(&x).unwrap();
    let grads = l.backward(&g).unwrap();
    let (q, mask) = l.quantize_current().unwrap();
    let mut checked = 0;
    for r in 0..6 {
        for c in 0..24 {
            let delta = q.threshold_at(r, c);
            let w = l.weights().get(r, c);
            if !mask.is_dead(r, c) || w.abs() >= delta / 2.0 {
                continue;
            }
            let h = delta / 4.0;
            let eval = |v: f64| {
                let mut w2 = l.weights().clone();
                w2.set(r, c, v);
                // mask frozen, as the backward treats it
                let b2 = tequila_core::tequila_bias(&w2, &mask, lambda).unwrap();
                (0..2).map(|b| g.get(b, r) * b2.as_slice()[r]).sum::<f64>()
            };
            let fd = (eval(w + h) - eval(w - h)) / (2.0 * h);
            let got = grads.weights.get(r, c);
            assert!((fd - got).abs() <= 1e-9 * (1.0 + fd.abs()), "({r},{c}): {got} vs {fd}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn degenerate_parameters_reduce_to_absmean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_matrix(&mut rng, 4, 7);
    let x = random_matrix(&mut rng, 3, 7);
    let g = random_matrix(&mut rng, 3, 4);
    let gran = Granularity::PerGroup { group_size: 3 };
    let mut base = QuantLinearLayer::new(w.clone(), Scheme::Absmean, gran, 0.0, 0.0).unwrap();
    let y0 = base.forward(&x).unwrap();
    let g0 = base.backward(&g).unwrap();
    for scheme in [Scheme::Tequila, Scheme::Seq, Scheme::Dlt] {
        let mut l = QuantLinearLayer::new(w.clone(), scheme, gran, 0.0, 0.0).unwrap();
        assert_eq!(l.forward(&x).unwrap(), y0, "{scheme} forward");
        let gl = l.backward(&g).unwrap();
        assert_eq!(gl.weights, g0.weights, "{scheme} weight grad");
        assert_eq!(gl.input, g0.input, "{scheme} input grad");
    }
    let mut m = QuantLinearLayer::new(w, Scheme::Minima, gran, 0.0, 0.0).unwrap();
    assert_eq!(m.forward(&x).unwrap(), y0);
}

#[test]
fn backward_needs_a_fresh_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut l = layer(&mut rng, Scheme::Tequila, 1e-3, 0.0);
    let x = random_matrix(&mut rng, 2, 7);
    let g = random_matrix(&mut rng, 2, 4);
    assert!(matches!(l.backward(&g), Err(Error::Cache(_))));
    l.forward(&x).unwrap();
    let grads = l.backward(&g).unwrap();
    assert!(matches!(l.backward(&g), Err(Error::Cache(_))));

    l.forward(&x).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    let gw = grads.weights.as_slice().to_vec();
    opt.step(&mut l.params_mut(), &[&gw]).unwrap();
    l.touch();
    assert!(matches!(l.backward(&g), Err(Error::Cache(_))));
}

#[test]
fn forward_rejects_wrong_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scheme in ALL {
        let mut l = layer(&mut rng, scheme, 1e-3, 1e-3);
        let x = random_matrix(&mut rng, 2, 6);
        assert!(matches!(l.forward(&x), Err(Error::InvalidShape(_))), "{scheme}");
    }
}

#[test]
fn codes_track_the_latest_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut l = layer(&mut rng, Scheme::Tequila, 1e-3, 0.0);
    let x = random_matrix(&mut rng, 2, 7);
    let before = l.forward(&x).unwrap();
    for v in l.params_mut()[0].iter_mut() {
        *v = -*v;
    }
    l.touch();
    let after = l.forward(&x).unwrap();
    for (a, b) in before.as_slice().iter().zip(after.as_slice()) {
        assert!((a + b).abs() <= 1e-12, "{a} vs {b}");
    }
}
