use num_complex::Complex64 as C64;
use proptest::prelude::*;
use specdeform::commlab::{self, MatrixPair};
use specdeform::dispersion::{DispersionPair, DispersionSpec, Family};
use specdeform::flow::{check_group_and_inverse, flow_from, FlowOptions};
use specdeform::grid::MomentumGrid;
use specdeform::io::{fmt17, parse17};
use specdeform::linalg;
use specdeform::mourre::shell_constants;
use specdeform::operator::{adjoint_identity, deformed_operator, DEFAULT_TAIL_TOL};
use specdeform::potential::{certify_decay, strip_sample, PotentialSpec};
use specdeform::thresholds::threshold_set;

fn families() -> Vec<DispersionSpec> {
    vec![
        DispersionSpec::square(1, 0.5),
        DispersionSpec::quartic(1, 0.5, [0.3, -2.0]),
        DispersionSpec::new(Family::Relativistic { exponent: 0.5 }, 1, 0.3, 1.0, 4.0).unwrap(),
        DispersionSpec::new(
            Family::EvenPolynomial {
                coefficients: vec![1.0, 0.5, 0.25],
            },
            1,
            0.5,
            4.0,
            8.0,
        )
        .unwrap(),
    ]
}

fn square_pair() -> DispersionPair {
    DispersionPair::new(
        DispersionSpec::square(1, 0.5),
        DispersionSpec::square(1, 0.5),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_is_real_and_reflects(f in 0usize..4, re in -5.0f64..5.0, im in -0.29f64..0.29) {
        let spec = &families()[f];
        let real = spec.eval(&[C64::new(re, 0.0)]).unwrap();
        prop_assert!(real.im.abs() <= 1e-14 * real.norm().max(1.0));
        let z = C64::new(re, im);
        let a = spec.eval(&[z.conj()]).unwrap();
        let b = spec.eval(&[z]).unwrap().conj();
        prop_assert!((a - b).norm() <= 1e-13 * b.norm().max(1.0));
    }

    #[test]
    fn gradient_matches_central_difference(f in 0usize..4, k in -3.0f64..3.0, xi in -1.0f64..1.0) {
        let pair = DispersionPair::new(families()[f].clone(), DispersionSpec::square(1, 0.5)).unwrap();
        let h = 1e-5;
        let at = |x: f64| pair.omega_xi(&[xi], &[C64::new(x, 0.0)]).unwrap().re;
        let fd = (at(k + h) - at(k - h)) / (2.0 * h);
        let g = pair.gradient(&[xi], &[C64::new(k, 0.0)]).unwrap()[0].re;
        prop_assert!((g - fd).abs() <= 1e-7 * g.abs().max(1.0), "{} vs {}", g, fd);
    }

    #[test]
    fn flow_reflection_and_reversibility(k in -2.0f64..2.0, xi in -1.0f64..1.0, re in -0.5f64..0.5, im in -0.05f64..0.05) {
        let pair = square_pair();
        let opts = FlowOptions::default();
        let start = [C64::new(k, 0.0)];
        let a = flow_from(&pair, &[xi], &start, C64::new(re, im), &opts).unwrap();
        let b = flow_from(&pair, &[xi], &start, C64::new(re, -im), &opts).unwrap();
        prop_assert!((a.gamma[0] - b.gamma[0].conj()).norm() <= 1e-10);
        prop_assert!((a.jacobian() - b.jacobian().conj()).norm() <= 1e-10 * a.jacobian().norm());
        let g = check_group_and_inverse(&pair, &[xi], &[k], re, 0.0, &opts).unwrap();
        prop_assert!(g.inverse_deviation <= 10.0 * opts.tol);
    }

    #[test]
    fn decay_certificate_holds_on_fresh_samples(amp in -3.0f64..3.0, width in 0.3f64..2.0, seed in 100u64..10_000) {
        let kernel = certify_decay(&PotentialSpec::gaussian(1, amp, width), 1.0, &strip_sample(1, 1.0, 20.0, 1000, 3)).unwrap();
        for k in strip_sample(1, 1.0, 20.0, 200, seed) {
            let weight = 1.0 + k[0].norm().powi(kernel.d_prime as i32);
            prop_assert!(kernel.vhat(&k).unwrap().norm() * weight <= kernel.c_v * (1.0 + 1e-12));
        }
    }

    #[test]
    fn vhat_is_hermitian_in_k(amp in -3.0f64..3.0, width in 0.3f64..2.0, k in -10.0f64..10.0) {
        let kernel = certify_decay(&PotentialSpec::gaussian(1, amp, width), 1.0, &[]).unwrap();
        let a = kernel.vhat(&[C64::new(-k, 0.0)]).unwrap();
        let b = kernel.vhat(&[C64::new(k, 0.0)]).unwrap().conj();
        prop_assert!((a - b).norm() <= 1e-15 * b.norm().max(1e-300));
    }

    #[test]
    fn fmt17_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(parse17(&fmt17(x)), Some(x));
    }

    #[test]
    fn shrinking_the_shell_never_lowers_e(lambda in 0.5f64..3.0, a in 0.01f64..0.1, b in 0.1f64..0.2) {
        let grid = MomentumGrid::new(6.0, 121, 1).unwrap();
        let pair = square_pair();
        let small = shell_constants(&grid, &pair, lambda, &[0.0], a).unwrap();
        let large = shell_constants(&grid, &pair, lambda, &[0.0], b).unwrap();
        prop_assert!(small.0 >= large.0);
    }

    #[test]
    fn threshold_discovery_is_monotone(xi in -2.0f64..2.0, c1 in -3.0f64..1.0) {
        let pair = DispersionPair::new(DispersionSpec::zero(1, 0.5), DispersionSpec::quartic(1, 0.5, [0.0, c1])).unwrap();
        let coarse = threshold_set(&pair, &[xi], &MomentumGrid::new(4.0, 9, 1).unwrap()).unwrap();
        let fine = threshold_set(&pair, &[xi], &MomentumGrid::new(4.0, 81, 1).unwrap()).unwrap();
        for v in &coarse.critical_values {
            prop_assert!(fine.critical_values.iter().any(|w| (v - w).abs() <= 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn deformed_adjoint_identity(re in -0.05f64..0.05, im in -0.1f64..0.1, amp in -2.0f64..2.0) {
        let pair = square_pair();
        let grid = MomentumGrid::new(8.0, 81, 1).unwrap();
        let kernel = certify_decay(&PotentialSpec::gaussian(1, amp, 0.5), 1.0, &strip_sample(1, 1.0, 20.0, 200, 3)).unwrap();
        let bounds = pair.certify_bounds(&[(0.0, 0.0)], 0.5, 0.05).unwrap();
        let theta = C64::new(re, im);
        let opts = FlowOptions::default();
        let a = deformed_operator(&grid, &pair, &kernel, &[0.0], theta, &bounds, &opts, DEFAULT_TAIL_TOL).unwrap();
        let b = deformed_operator(&grid, &pair, &kernel, &[0.0], theta.conj(), &bounds, &opts, DEFAULT_TAIL_TOL).unwrap();
        let rep = adjoint_identity(&a, &b).unwrap();
        prop_assert!(rep.defect <= 1e-13 * rep.scale);
        let (mut ea, _) = linalg::general_eigen(a.matrix.as_ref()).unwrap();
        let (eb, _) = linalg::general_eigen(b.matrix.as_ref()).unwrap();
        for z in ea.iter_mut() {
            *z = z.conj();
        }
        for z in &eb {
            let d = ea.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= 1e-8 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn series_adjoint_and_graph_norm(seed in 0u64..1000, phase in 0.0f64..std::f64::consts::TAU) {
        let pair = MatrixPair::random(12, seed).unwrap();
        let lad = commlab::ladder(&pair, 40).unwrap();
        let theta = C64::from_polar(0.9 * lad.radius(), phase);
        let s = commlab::conjugate_series(&pair, &lad, theta, 40).unwrap();
        let c = commlab::conjugate_series(&pair, &lad, theta.conj(), 40).unwrap();
        prop_assert!((linalg::adjoint(s.matrix.as_ref()) - &c.matrix).norm_max() <= 1e-12 * pair.h.norm_max());
        let (lo, hi) = commlab::graph_norm_ratios(&pair, theta, 10, seed).unwrap();
        prop_assert!(lo >= 0.5 - 1e-8 && hi <= 2.0 + 1e-8);
    }
}
