//! Acceptance run: one line per criterion with the measured error, the pinned
//! tolerance and the wall time against its budget. Exits non-zero if any
//! criterion fails.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};

use bendhom::cell_inner::{inner_problem, qhom_field, qhom_tensor, QhomField};
use bendhom::cell_outer::{
    effective_form, effective_form_oracle, finite, infinite, reduced_field, zero, homogenize_finite, homogenize_infinite, outer_correctors, regime_problem,
    EffectiveBendingForm, OuterSettings, RegimeSpec,
};
use bendhom::gamma::{gamma_slope_study, EnergyQuadrature, NonlinearDensity, RecoveryData};
use bendhom::linsolve::check_symmetry;
use bendhom::microstructure::{coercivity_bounds, Lame, MicrostructureField};
use bendhom::plate::{bending_energy, Domain, IsometricSurface, QUAD_ORDER};
use bendhom::tensor::SymMat22;

struct Outcome {
    pass: bool,
    detail: String,
}

fn unit() -> Lame {
    Lame::new(1.0, 1.0)
}

/// `Q2(G) = 2μ|G|² + (2μλ/(2μ+λ))(tr G)²` on `(a11, a22, √2 a12)`.
fn plate_relaxation(l: Lame) -> Matrix3<f64> {
    let k = 2.0 * l.mu * l.lambda / (2.0 * l.mu + l.lambda);
    Matrix3::identity() * 2.0 * l.mu + Matrix3::new(k, k, 0.0, k, k, 0.0, 0.0, 0.0, 0.0)
}

/// `2μ|E|² + λ(tr E)²` on orthonormal 3×3 coordinates.
fn isotropic(l: Lame) -> Matrix6<f64> {
    let t = Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
    Matrix6::identity() * 2.0 * l.mu + t * t.transpose() * l.lambda
}

/// Coordinates of `sym(e_k ⊗ e_a)`.
fn sym_rank_one(k: usize, a: usize) -> Vector6<f64> {
    let mut m = Matrix3::zeros();
    m[(k, a)] += 0.5;
    m[(a, k)] += 0.5;
    let s = std::f64::consts::SQRT_2;
    Vector6::new(m[(0, 0)], m[(1, 1)], m[(2, 2)], s * m[(1, 2)], s * m[(0, 2)], s * m[(0, 1)])
}

/// Homogenized laminate energy of strain `c` from `n` elements along
/// `z[axis]`: per element the gradient `d_j` is constant, optimality gives
/// `Rᵀ Q_j (c + R d_j) = λ` with `Σ d_j = 0`.
fn laminate_oracle(field: &MicrostructureField, axis: usize, n: usize, c: &Vector6<f64>) -> f64 {
    let r = DMatrix::from_fn(6, 3, |i, k| sym_rank_one(k, axis)[i]);
    let c = DVector::from_column_slice(c.as_slice());
    let qs: Vec<DMatrix<f64>> = (0..n)
        .map(|j| {
            let mut z = [0.0, 0.0];
            z[axis] = (j as f64 + 0.5) / n as f64 - 0.5;
            let q = isotropic(field.lame_at([0.1, 0.1], z).unwrap());
            DMatrix::from_fn(6, 6, |a, b| q[(a, b)])
        })
        .collect();
    let mut sum_inv = DMatrix::zeros(3, 3);
    let mut sum_rhs = DVector::zeros(3);
    let mut inv = Vec::with_capacity(n);
    for q in &qs {
        let a_inv = (r.transpose() * q * &r).try_inverse().unwrap();
        sum_rhs += &a_inv * (r.transpose() * q * &c);
        sum_inv += &a_inv;
        inv.push(a_inv);
    }
    let lambda = sum_inv.try_inverse().unwrap() * sum_rhs;
    qs.iter()
        .zip(&inv)
        .map(|(q, a_inv)| {
            let d = a_inv * (&lambda - r.transpose() * q * &c);
            let e = &c + &r * d;
            (e.transpose() * q * e)[(0, 0)] / n as f64
        })
        .sum()
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn catalog() -> Vec<(&'static str, MicrostructureField)> {
    let phases = [unit(), Lame::new(4.0, 0.2)];
    vec![
        ("constant", MicrostructureField::Constant(Lame::new(1.3, 0.7))),
        ("laminate_z", MicrostructureField::LaminateZ { phases, fraction: 0.5, axis: 0 }),
        ("checkerboard_y", MicrostructureField::CheckerboardY { phases }),
        ("product_two_scale", MicrostructureField::ProductTwoScale { phases, fraction: 0.5, axis: 1, contrast: 3.0 }),
        ("sinusoidal_y", MicrostructureField::SinusoidalY { phase: unit(), amplitude: 0.5 }),
    ]
}

fn c1() -> Outcome {
    let m = MicrostructureField::Constant(unit());
    let settings = OuterSettings { nx3: 8, rtol: 1e-10 };
    let oracle = plate_relaxation(unit());
    let mut pass = true;
    let mut parts = vec![];
    for regime in RegimeSpec::all_for_tests() {
        let t = Instant::now();
        let qf = qhom_field(&m, 32, 32, settings.rtol).unwrap();
        let f = effective_form(&qf, regime, &settings).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let rel = (f.eval(&SymMat22::diag(1.0, 0.0)) - 8.0 / 3.0).abs() / (8.0 / 3.0);
        let entry = max_abs(&(f.fjm.0 - oracle));
        pass &= rel <= 1e-6 && entry <= 1e-6 && secs < 10.0;
        parts.push(format!("{regime}: rel {rel:.1e}, entry {entry:.1e}, {secs:.1}s"));
    }
    Outcome { pass, detail: format!("{} (tol 1e-6, budget 10 s/regime)", parts.join("; ")) }
}

fn c2() -> Outcome {
    let phases = [unit(), Lame::new(4.0, 0.2)];
    let fields = [
        MicrostructureField::CheckerboardY { phases },
        MicrostructureField::SinusoidalY { phase: unit(), amplitude: 0.5 },
        MicrostructureField::ProductTwoScale { phases, fraction: 0.5, axis: 0, contrast: 1.0 },
        MicrostructureField::Constant(Lame::new(2.0, 0.5)),
    ];
    let settings = OuterSettings { nx3: 4, rtol: 1e-12 };
    let mut worst: f64 = 0.0;
    for m in &fields {
        assert!(!m.depends_on_z());
        let two_scale = qhom_field(m, 16, 8, settings.rtol).unwrap();
        let bypass = QhomField::bypass(m, 16).unwrap();
        for regime in RegimeSpec::all_for_tests() {
            let a = effective_form(&two_scale, regime, &settings).unwrap();
            let b = effective_form(&bypass, regime, &settings).unwrap();
            worst = worst.max(max_abs(&(a.fjm.0 - b.fjm.0)) / max_abs(&b.fjm.0));
        }
    }
    Outcome { pass: worst <= 1e-10, detail: format!("max relative difference {worst:.1e} (tol 1e-10)") }
}

fn c3() -> Outcome {
    let m = MicrostructureField::LaminateZ { phases: [unit(), Lame::new(10.0, 3.0)], fraction: 0.375, axis: 1 };
    let (nz, n_oracle) = (64, 4096);
    let q = qhom_tensor(&m.slice(0, 4, nz), nz, 1e-12).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        let mut e = Vector6::zeros();
        e[i] = 1.0;
        let oracle = laminate_oracle(&m, 1, n_oracle, &e);
        worst = worst.max((q.0[(i, i)] - oracle).abs() / oracle);
    }
    Outcome { pass: worst <= 5e-3, detail: format!("max relative error {worst:.2e} over 6 loadings (tol 0.5%)") }
}

fn c4() -> Outcome {
    let m = MicrostructureField::SinusoidalY { phase: unit(), amplitude: 0.5 };
    let rtol = 1e-11;
    let qf = qhom_field(&m, 16, 4, rtol).unwrap();
    let settings = OuterSettings { nx3: 4, rtol };
    let a = SymMat22::new(1.0, -0.4, 0.7);
    let (a1, a2) = (SymMat22::new(1.0, 0.3, -0.2), SymMat22::new(-0.4, 0.8, 0.5));
    let mut homog: f64 = 0.0;
    let mut additive: f64 = 0.0;
    for regime in RegimeSpec::all_for_tests() {
        let loads = [a, a.scale(2.0), a.scale(1.0 / 3.0), a1, a2, a1.add(&a2)];
        let c = outer_correctors(&qf, regime, &settings, &loads).unwrap();
        for (k, t) in [(1, 2.0), (2, 1.0 / 3.0)] {
            homog = homog.max((c[k].0 - t * t * c[0].0).abs() / (t * t * c[0].0));
        }
        let (u1, u2, u) = (c[3].1.as_vector(), c[4].1.as_vector(), c[5].1.as_vector());
        let diff = u.iter().zip(u1.iter().zip(&u2)).map(|(s, (x, y))| (s - x - y).powi(2)).sum::<f64>().sqrt();
        let scale = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        additive = additive.max(diff / (rtol * scale));
    }
    Outcome {
        pass: homog <= 1e-8 && additive <= 10.0,
        detail: format!("homogeneity {homog:.1e} (tol 1e-8), additivity {additive:.2} x rtol (tol 10)"),
    }
}

fn c5() -> Outcome {
    let settings = OuterSettings { nx3: 4, rtol: 1e-10 };
    let mut pass = true;
    let mut parts = vec![];
    for (name, m) in catalog() {
        let bounds = coercivity_bounds(&m, 32, 32).unwrap();
        let qf = qhom_field(&m, 32, 32, settings.rtol).unwrap();
        let mut ratio: f64 = 0.0;
        let mut lo = f64::INFINITY;
        for regime in RegimeSpec::all_for_tests() {
            let f = effective_form(&qf, regime, &settings).unwrap();
            let (l, h) = f.fjm.eigen_bounds();
            pass &= f.within_bounds(0.0, bounds.c_hi, 1e-10);
            lo = lo.min(l);
            ratio = ratio.max(h / bounds.c_hi);
        }
        parts.push(format!("{name}: min eig {lo:.3}, max eig/c_hi {ratio:.3}"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn c6() -> Outcome {
    let m = MicrostructureField::SinusoidalY { phase: unit(), amplitude: 0.5 };
    let qf = qhom_field(&m, 16, 4, 1e-12).unwrap();
    let settings = OuterSettings { nx3: 4, rtol: 1e-12 };
    let mut parts = vec![];
    let mut worst: f64 = 0.0;
    for regime in [RegimeSpec::Infinite, RegimeSpec::Zero] {
        let fast = effective_form(&qf, regime, &settings).unwrap();
        let oracle = effective_form_oracle(&qf, regime, &settings).unwrap();
        let rel = (fast.raw.0 - oracle.raw.0).norm() / oracle.raw.0.norm();
        worst = worst.max(rel);
        parts.push(format!("{regime}: {rel:.1e}"));
    }
    Outcome { pass: worst <= 1e-6, detail: format!("{} (tol 1e-6)", parts.join(", ")) }
}

fn constant_form() -> EffectiveBendingForm {
    let qf = QhomField::uniform(bendhom::microstructure::make_isotropic(1.0, 1.0).unwrap(), 8);
    effective_form(&qf, RegimeSpec::Finite(1.0), &OuterSettings { nx3: 8, rtol: 1e-12 }).unwrap()
}

fn c7() -> Outcome {
    let form = constant_form();
    let energy = |r: f64| {
        bending_energy(&IsometricSurface::cylinder(r, Domain::unit_square()).unwrap(), &form, QUAD_ORDER).unwrap()
    };
    let e1 = energy(1.0);
    let err = (e1 - 2.0 / 9.0).abs();
    let e_half = energy(0.5);
    let ratio = (e_half / e1 - 4.0).abs();
    let flat = bending_energy(&IsometricSurface::flat(Domain::unit_square()), &form, QUAD_ORDER).unwrap();
    Outcome {
        pass: err <= 1e-6 && ratio <= 1e-8 && flat == 0.0,
        detail: format!("|E - 2/9| {err:.1e} (tol 1e-6), |ratio - 4| {ratio:.1e} (tol 1e-8), flat {flat:.1e}"),
    }
}

fn c8() -> Outcome {
    let hs = [0.125, 0.0625, 0.03125, 0.015625];
    let cylinder = IsometricSurface::cylinder(1.0, Domain::unit_square()).unwrap();
    let settings = OuterSettings { nx3: 4, rtol: 1e-10 };
    let quad = EnergyQuadrature::default();

    let m = MicrostructureField::Constant(unit());
    let (data, form) = RecoveryData::compute(&m, RegimeSpec::Finite(1.0), 4, 4, &settings).unwrap();
    let w = NonlinearDensity::new(m).unwrap();
    let constant = gamma_slope_study(&cylinder, &Arc::new(data), &form, &hs, &w, &quad).unwrap();
    let last = constant.rows.last().unwrap();
    let rel = last.gap / (2.0 / 9.0);

    let m = MicrostructureField::CheckerboardY { phases: [unit(), Lame::new(4.0, 0.2)] };
    let (data, form) = RecoveryData::compute(&m, RegimeSpec::Infinite, 4, 4, &settings).unwrap();
    let w = NonlinearDensity::new(m).unwrap();
    let checker = gamma_slope_study(&cylinder, &Arc::new(data), &form, &hs, &w, &quad).unwrap();
    let gaps: Vec<String> = checker.rows.iter().map(|r| format!("{:.1e}", r.gap)).collect();
    Outcome {
        pass: rel <= 0.05 && constant.monotone && checker.monotone,
        detail: format!(
            "constant: gap {rel:.1e} of 2/9 at h=2^-6 (tol 5%), monotone {}; checkerboard inf: gaps [{}], monotone {}",
            constant.monotone,
            gaps.join(", "),
            checker.monotone
        ),
    }
}

/// Each coarse cell's form copied onto its four children.
fn refine(qf: &QhomField) -> QhomField {
    let n = qf.ny();
    let mut out = qf.clone();
    out.provenance.ny = 2 * n;
    out.forms = (0..4 * n * n).map(|i| qf.forms[(i / (2 * n) / 2) * n + (i % (2 * n)) / 2]).collect();
    out
}

fn c9() -> Outcome {
    let rtol = 1e-12;
    let slack = 1.0 + 10.0 * rtol;
    let mut monotone = true;

    let m = MicrostructureField::CheckerboardY { phases: [unit(), Lame::new(5.0, 0.5)] };
    let coarse = QhomField::bypass(&m, 4).unwrap();
    let fine = refine(&coarse);
    for a in [SymMat22::diag(1.0, 0.0), SymMat22::new(0.2, -1.0, 0.6)] {
        let (c, _) = homogenize_finite(&coarse, 1.0, 2, rtol, &a).unwrap();
        let (f, _) = homogenize_finite(&fine, 1.0, 2, rtol, &a).unwrap();
        let (t, _) = homogenize_finite(&fine, 1.0, 4, rtol, &a).unwrap();
        monotone &= f <= c * slack && t <= f * slack;
        let (c, _) = homogenize_infinite(&coarse, rtol, &a).unwrap();
        let (f, _) = homogenize_infinite(&fine, rtol, &a).unwrap();
        monotone &= f <= c * slack;
    }
    let lam = MicrostructureField::LaminateZ { phases: [unit(), Lame::new(10.0, 3.0)], fraction: 0.5, axis: 0 };
    let q8 = qhom_tensor(&lam.slice(0, 4, 8), 8, rtol).unwrap();
    let q16 = qhom_tensor(&lam.slice(0, 4, 16), 16, rtol).unwrap();
    for i in 0..6 {
        monotone &= q16.0[(i, i)] <= q8.0[(i, i)] * slack;
    }

    let mut probes = 0;
    let mut symmetric = true;
    let smooth = qhom_field(&MicrostructureField::SinusoidalY { phase: unit(), amplitude: 0.5 }, 8, 4, 1e-10).unwrap();
    for regime in RegimeSpec::all_for_tests() {
        let (p, _) = regime_problem(&smooth, regime, 2).unwrap();
        symmetric &= check_symmetry(&p.op).is_ok();
        probes += 1;
    }
    let p = inner_problem(&lam.slice(0, 4, 8), 8);
    symmetric &= check_symmetry(&p.op).is_ok();
    probes += 1;
    let p = finite::finite_problem(&smooth.forms, 8, 1.0, 4);
    symmetric &= check_symmetry(&p.op).is_ok();
    let p = infinite::oracle_problem(&smooth.forms, 8, 4);
    symmetric &= check_symmetry(&p.op).is_ok();
    let p = zero::oracle_problem(&reduced_field(&smooth).unwrap(), 8, 4);
    symmetric &= check_symmetry(&p.op).is_ok();
    probes += 3;
    Outcome {
        pass: monotone && symmetric,
        detail: format!("nested infima non-increasing: {monotone}; symmetry probe <= 1e-12 on {probes} operators: {symmetric}"),
    }
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 9] = [
        ("constant-material effective form", 30.0, c1),
        ("single-scale reduction", 30.0, c2),
        ("laminate oracle", 20.0, c3),
        ("quadraticity and linearity", 30.0, c4),
        ("coercivity", 60.0, c5),
        ("fast-path/oracle equivalence", 120.0, c6),
        ("plate energy", 5.0, c7),
        ("gamma trend", 300.0, c8),
        ("discretization invariants", 120.0, c9),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = run();
        let secs = t.elapsed().as_secs_f64();
        let pass = out.pass && secs < *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} | {secs:.1} s (budget {budget} s)",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
