//! Randomized checks of the kernel invariants at points of the fundamental
//! domain. Engines are assembled once and shared across cases.

use std::sync::OnceLock;

use bers::kernels::{powi, KernelConfig};
use bers::mobius::{act_on_parameters, MobiusMap};
use bers::schottky::SchottkyData;
use bers::sewing::QuasiformEngine;
use bers::zeta;
use bers::Cx;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Cx {
    Cx::new(re, im)
}

fn surface() -> &'static SchottkyData {
    static S: OnceLock<SchottkyData> = OnceLock::new();
    S.get_or_init(|| {
        SchottkyData::from_fixed_points(&[
            (c(1.0, 0.0), c(-1.0, 0.0), c(0.02, 0.0)),
            (c(0.5, 2.5), c(-0.5, 2.5), Cx::from_polar(0.02, 0.6)),
        ])
        .unwrap()
    })
}

/// Engines for weights 1 and 2 at 16 modes, then weight 2 at 8 and 32 modes.
fn engines() -> &'static [QuasiformEngine; 4] {
    static E: OnceLock<[QuasiformEngine; 4]> = OnceLock::new();
    E.get_or_init(|| {
        let s = surface();
        let std2 = KernelConfig::standard(s, 2).unwrap();
        [
            QuasiformEngine::assemble(s, &KernelConfig::reference(1), 16).unwrap(),
            QuasiformEngine::assemble(s, &std2, 16).unwrap(),
            QuasiformEngine::assemble(s, &std2, 8).unwrap(),
            QuasiformEngine::assemble(s, &std2, 32).unwrap(),
        ]
    })
}

fn flipped() -> &'static QuasiformEngine {
    static E: OnceLock<QuasiformEngine> = OnceLock::new();
    E.get_or_init(|| {
        let s = surface().with_flipped_branch(0).with_flipped_branch(1);
        QuasiformEngine::assemble(&s, &KernelConfig::standard(surface(), 2).unwrap(), 16).unwrap()
    })
}

fn interior_point() -> impl Strategy<Value = Cx> {
    (-3.0f64..4.0, -1.5f64..4.0)
        .prop_map(|(re, im)| c(re, im))
        .prop_filter("inside the fundamental domain", |&z| {
            surface().in_fundamental_domain(z) && surface().boundary_distance(z) > 0.05
        })
}

fn rel(a: Cx, b: Cx) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn omega_is_symmetric(x in interior_point(), y in interior_point()) {
        prop_assume!((x - y).norm() > 0.1);
        for e in &engines()[..2] {
            let v = e.omega(x, y).unwrap().value;
            prop_assert!(rel(v, e.omega(y, x).unwrap().value) < 1e-10);
        }
    }

    #[test]
    fn omega_is_automorphic_in_x(
        x in interior_point(),
        y in interior_point(),
        a in prop::sample::select(vec![1, -1, 2, -2]),
    ) {
        prop_assume!((x - y).norm() > 0.1);
        let s = surface();
        for e in &engines()[..2] {
            let n = e.weight() as i64;
            let v = e.omega(x, y).unwrap().value;
            let gx = s.apply_generator(a, x);
            let moved = e.omega(gx, y).unwrap().value * powi(s.generator_derivative(a, x), n);
            prop_assert!(rel(moved, v) < 1e-9);
        }
    }

    #[test]
    fn psi_ignores_the_square_root_branch(x in interior_point(), y in interior_point()) {
        prop_assume!((x - y).norm() > 0.1);
        let (e, f) = (&engines()[1], flipped());
        prop_assert!(rel(e.psi(x, y).unwrap().value, f.psi(x, y).unwrap().value) < 1e-12);
        let (ta, tb) = (e.theta_all(x).unwrap(), f.theta_all(x).unwrap());
        for (ra, rb) in ta.iter().zip(&tb) {
            for (u, v) in ra.iter().zip(rb) {
                prop_assert!((u - v).norm() <= 1e-12 * u.norm().max(1.0));
            }
        }
    }

    #[test]
    fn psi_converges_as_modes_double(x in interior_point(), y in interior_point()) {
        prop_assume!((x - y).norm() > 0.1);
        let [_, m16, m8, m32] = engines();
        let best = m32.psi(x, y).unwrap().value;
        let d8 = (m8.psi(x, y).unwrap().value - best).norm();
        let d16 = (m16.psi(x, y).unwrap().value - best).norm();
        prop_assert!(d16 <= d8.max(1e-14 * best.norm()));
        prop_assert!(d16 < 1e-10 * best.norm().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn logdet_is_mobius_invariant(
        shift in (-0.5f64..0.5, -0.5f64..0.5),
        scale in (0.7f64..1.3, -0.4f64..0.4),
        pole in (-0.03f64..0.03, -0.03f64..0.03),
    ) {
        let m = MobiusMap::new(
            Cx::from_polar(scale.0, scale.1),
            c(shift.0, shift.1),
            c(pole.0, pole.1),
            c(1.0, 0.0),
        )
        .unwrap();
        let t = act_on_parameters(&m, surface()).unwrap();
        prop_assume!(t.validate().pass);
        for n in [1, 2] {
            let base = QuasiformEngine::assemble(surface(), &KernelConfig::reference(n), 20).unwrap();
            let moved = QuasiformEngine::assemble(&t, &KernelConfig::reference(n), 20).unwrap();
            let a = zeta::det_report(&base, 6, None).unwrap();
            let b = zeta::det_report(&moved, 6, None).unwrap();
            prop_assert!((a.logdet_matrix - b.logdet_matrix).norm() < 1e-8);
            prop_assert!((a.logdet_product - b.logdet_product).norm() < 1e-8);
        }
    }
}
