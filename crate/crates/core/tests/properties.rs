use std::ops::Div;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wsfn_core::hessian::{HessianOperator, HvpMode};
use wsfn_core::measure::{
    ensemble_from_csv, ensemble_to_csv, l2_inner, push, w2_1d, w2_exact, ParticleEnsemble, TangentField,
};
use wsfn_core::objectives::{CoulombMmd, Functional, Interaction, InteractionKernel, Potential};
use wsfn_core::optimize::{delta_tilde, step_wsfn, theoretical_params, TheoryConstants, WsfnParams};
use wsfn_core::spectral;

fn ensemble(n: usize, d: usize) -> impl Strategy<Value = ParticleEnsemble> {
    prop::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| ParticleEnsemble::new(n, d, v).unwrap())
}

fn field(n: usize, d: usize) -> impl Strategy<Value = TangentField> {
    prop::collection::vec(-2.0..2.0f64, n * d).prop_map(move |v| TangentField::new(n, d, v).unwrap())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// W2 by enumerating every matching.
fn w2_brute(a: &ParticleEnsemble, b: &ParticleEnsemble) -> f64 {
    let n = a.count();
    permutations(n)
        .iter()
        .map(|p| {
            (0..n)
                .map(|i| a.particle(i).iter().zip(b.particle(p[i])).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .div(n as f64)
        .sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_matches_enumeration((a, b) in (1usize..6).prop_flat_map(|n| (ensemble(n, 2), ensemble(n, 2)))) {
        let brute = w2_brute(&a, &b);
        prop_assert!((w2_exact(&a, &b).unwrap() - brute).abs() <= 1e-10 * (1.0 + brute));
    }

    #[test]
    fn one_dimensional_w2_agrees((a, b) in (1usize..12).prop_flat_map(|n| (ensemble(n, 1), ensemble(n, 1)))) {
        let sorted = w2_1d(&a, &b).unwrap();
        prop_assert!((w2_exact(&a, &b).unwrap() - sorted).abs() <= 1e-10 * (1.0 + sorted));
    }

    #[test]
    fn w2_is_a_metric((a, b, c) in (1usize..8).prop_flat_map(|n| (ensemble(n, 3), ensemble(n, 3), ensemble(n, 3)))) {
        let ab = w2_exact(&a, &b).unwrap();
        prop_assert!(w2_exact(&a, &a).unwrap() <= 1e-12);
        prop_assert!((ab - w2_exact(&b, &a).unwrap()).abs() <= 1e-10);
        prop_assert!(ab <= w2_exact(&a, &c).unwrap() + w2_exact(&c, &b).unwrap() + 1e-10);
    }

    #[test]
    fn push_is_bounded_by_its_coupling((mu, v) in (1usize..8).prop_flat_map(|n| (ensemble(n, 2), field(n, 2))), t in -2.0..2.0f64) {
        let moved = push(&mu, &v, t).unwrap();
        prop_assert!(w2_exact(&mu, &moved).unwrap() <= t.abs() * v.norm() + 1e-12);
        prop_assert_eq!(push(&moved, &v, -t).unwrap().count(), mu.count());
    }

    #[test]
    fn csv_round_trip(mu in (1usize..6, 1usize..4).prop_flat_map(|(n, d)| ensemble(n, d))) {
        prop_assert_eq!(ensemble_from_csv(&ensemble_to_csv(&mu)).unwrap(), mu);
    }

    #[test]
    fn interaction_hessian_is_symmetric((mu, v, w) in (2usize..7).prop_flat_map(|n| (ensemble(n, 2), field(n, 2), field(n, 2)))) {
        let f = Interaction::new(2, InteractionKernel::Gaussian { amplitude: -0.7, width: 1.3 }).unwrap();
        let op = HessianOperator::new(&f, &mu, HvpMode::ExactBlocks).unwrap();
        let gap = (l2_inner(&op.hvp(&v).unwrap(), &w).unwrap() - l2_inner(&v, &op.hvp(&w).unwrap()).unwrap()).abs();
        prop_assert!(gap <= 1e-10 * (1.0 + v.norm() * w.norm()));
        let dense = op.assemble_dense().unwrap();
        let by_matrix = &dense * DVector::from_column_slice(v.as_slice());
        let by_hvp = op.hvp(&v).unwrap();
        for (a, b) in by_matrix.iter().zip(by_hvp.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn coulomb_gradient_is_translation_invariant(shift in prop::collection::vec(-1.0..1.0f64, 3)) {
        // translating particles and targets together leaves the gradient unchanged
        let targets = ParticleEnsemble::new(2, 3, vec![1.0, 0.0, 0.0, -1.0, 0.5, 0.0]).unwrap();
        let mu = ParticleEnsemble::new(2, 3, vec![0.2, 0.3, -0.1, -0.4, 0.1, 0.6]).unwrap();
        let f = CoulombMmd::new(targets.clone(), 1e-2).unwrap();
        let moved = |e: &ParticleEnsemble| push(e, &TangentField::constant(e.count(), &shift), 1.0).unwrap();
        let g = CoulombMmd::new(moved(&targets), 1e-2).unwrap();
        let a = f.grad(&mu).unwrap();
        let b = g.grad(&moved(&mu)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn full_depth_lanczos_matches_dense(entries in prop::collection::vec(-1.0..1.0f64, 100), v in prop::collection::vec(-1.0..1.0f64, 10), beta in 1e-3..10.0f64) {
        let x = DMatrix::from_row_slice(10, 10, &entries);
        let h = (&x + x.transpose()) * 0.5;
        prop_assume!(v.iter().any(|c| c.abs() > 1e-3));
        let approx = spectral::lanczos_apply_inv_sqrt(|u| Ok((&h * DVector::from_column_slice(u)).as_slice().to_vec()), &v, beta, 10).unwrap();
        let exact = spectral::dense_inv_sqrt(&h, &v, beta).unwrap();
        let scale = exact.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for (a, b) in approx.iter().zip(&exact) {
            prop_assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn wsfn_contracts_quadratics(mu in (1usize..6).prop_flat_map(|n| ensemble(n, 2)), tau in 0.01..1.0f64, beta in 1e-4..4.0f64) {
        let f = Potential::quadratic(&[0.0, 0.0]);
        let p = WsfnParams { tau, beta, lanczos_m: 3, hvp: HvpMode::ExactBlocks };
        let next = step_wsfn(&f, &mu, &p).unwrap();
        let factor = 1.0 - tau / (1.0 + beta).sqrt();
        for (a, b) in next.as_slice().iter().zip(mu.as_slice()) {
            prop_assert!((a - factor * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn parameter_ranges(c_h in 0.1..10.0f64, l_h in 0.1..10.0f64, beta in 1e-4..1.0f64, delta in 1e-3..1.0f64) {
        let c = TheoryConstants { c_h, l_h, r_f: 1.0, zeta: 0.1, f_min: 1.0, kernel_norm: 1.0, overlap: None, zeta_ep: Some(0.05) };
        if let Ok(p) = theoretical_params(&c, beta, delta, 1e-6) {
            prop_assert!(p.tau > 0.0 && p.tau <= 1.0);
            prop_assert!(p.tau <= beta.sqrt() / c_h * (1.0 + 1e-15));
            prop_assert!(p.delta_tilde > 0.0 && p.delta_tilde < 1.0);
            prop_assert_eq!(p.delta_tilde, delta_tilde(delta, beta));
            prop_assert!(p.f0 > 0.0 && p.eta > 0.0);
            prop_assert_eq!(p.n_out_steps as f64, p.n_out.ceil());
        }
    }
}

#[test]
fn brute_force_helper_is_sane() {
    let a = ParticleEnsemble::new(2, 1, vec![0.0, 1.0]).unwrap();
    let b = ParticleEnsemble::new(2, 1, vec![1.0, 0.0]).unwrap();
    assert_eq!(w2_brute(&a, &b), 0.0);
}
