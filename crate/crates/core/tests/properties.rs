use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};
use proptest::prelude::*;

use bendhom::cell_inner::{qhom_tensor, QhomField};
use bendhom::cell_outer::{effective_form, OuterSettings, RegimeSpec};
use bendhom::gamma::density;
use bendhom::microstructure::{coercivity_bounds, make_isotropic, Lame, MicrostructureField};
use bendhom::tensor::{sym_coords, QuadForm33, SymMat22};

fn lame() -> impl Strategy<Value = Lame> {
    (0.2f64..5.0, 0.0f64..3.0).prop_map(|(mu, lambda)| Lame::new(mu, lambda))
}

fn matrix3(scale: f64) -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-scale..scale).prop_map(|v| Matrix3::from_column_slice(&v))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..std::f64::consts::TAU).prop_filter_map("axis", |(a, t)| {
        let v = Vector3::from(a);
        (v.norm() > 1e-3).then(|| Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(v), t))
    })
}

fn sym22() -> impl Strategy<Value = SymMat22> {
    prop::array::uniform3(-2.0f64..2.0).prop_map(|[a, b, c]| SymMat22::new(a, b, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_frame_indifferent(l in lame(), f in matrix3(2.0), r in rotation()) {
        let w = density(&l, &f);
        let wr = density(&l, &(r.matrix() * f));
        prop_assert!((w - wr).abs() <= 1e-10 * (1.0 + w.abs()));
        prop_assert!(w >= 0.0);
    }

    #[test]
    fn density_vanishes_on_rotations(l in lame(), r in rotation()) {
        prop_assert!(density(&l, r.matrix()) < 1e-24);
    }

    #[test]
    fn sym_coordinates_are_isometric(f in matrix3(3.0)) {
        let s = 0.5 * (f + f.transpose());
        prop_assert!((sym_coords(&f).norm() - s.norm()).abs() < 1e-12 * (1.0 + s.norm()));
    }

    #[test]
    fn isotropic_form_matches_its_formula(l in lame(), f in matrix3(1.0)) {
        let q = make_isotropic(l.mu, l.lambda).unwrap();
        let s = 0.5 * (f + f.transpose());
        let expect = 2.0 * l.mu * s.norm_squared() + l.lambda * s.trace().powi(2);
        prop_assert!((q.eval_coords(&sym_coords(&f)) - expect).abs() < 1e-10 * (1.0 + expect));
    }

    #[test]
    fn upper_triangle_round_trips(l in lame()) {
        let q = make_isotropic(l.mu, l.lambda).unwrap();
        prop_assert_eq!(QuadForm33::from_upper_triangle(&q.upper_triangle()), q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn inner_tensor_respects_the_pointwise_bounds(a in lame(), b in lame(), fraction in 0.2f64..0.8, axis in 0usize..2) {
        let m = MicrostructureField::LaminateZ { phases: [a, b], fraction, axis };
        let nz = 8;
        let slice = m.slice(0, 1, nz);
        let q = qhom_tensor(&slice, nz, 1e-11).unwrap();
        let bounds = coercivity_bounds(&m, 1, nz).unwrap();
        let (lo, hi) = q.eigen_bounds();
        prop_assert!((q.0 - q.0.transpose()).norm() < 1e-12 * q.0.norm());
        prop_assert!(lo >= bounds.c_lo - 1e-8 && hi <= bounds.c_hi * (1.0 + 1e-8));
        // never stiffer than the unrelaxed average
        let mean = slice.iter().fold(nalgebra::Matrix6::zeros(), |acc, f| acc + f.0) / slice.len() as f64;
        for i in 0..6 {
            let e = Vector6::from_fn(|k, _| if k == i { 1.0 } else { 0.0 });
            prop_assert!(q.eval_coords(&e) <= (e.transpose() * mean * e)[(0, 0)] * (1.0 + 1e-8));
        }
    }

    #[test]
    fn effective_form_is_a_bounded_quadratic_form(
        a in lame(),
        b in lame(),
        load in sym22(),
        t in -3.0f64..3.0,
        regime in prop::sample::select(vec![RegimeSpec::Zero, RegimeSpec::Finite(1.0), RegimeSpec::Infinite]),
    ) {
        let m = MicrostructureField::CheckerboardY { phases: [a, b] };
        let qf = QhomField::bypass(&m, 4).unwrap();
        let settings = OuterSettings { nx3: 2, rtol: 1e-11 };
        let form = effective_form(&qf, regime, &settings).unwrap();
        let bounds = coercivity_bounds(&m, 4, 1).unwrap();
        let fjm = &form.fjm.0;
        prop_assert!((fjm - fjm.transpose()).norm() <= 1e-12 * fjm.norm());
        let (lo, hi) = form.fjm.eigen_bounds();
        prop_assert!(lo >= bounds.c_lo * (1.0 - 1e-6) && hi <= bounds.c_hi * (1.0 + 1e-8));
        let v = form.eval(&load);
        prop_assert!((form.eval(&load.scale(t)) - t * t * v).abs() <= 1e-12 * (1.0 + t * t * v));
    }
}
