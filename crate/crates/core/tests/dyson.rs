mod common;

use common::{hot_cold, pairing_dimer};
use qtransport::bath::KernelKind;
use qtransport::dyson::{dress_all, DysonContext, KernelPair};
use qtransport::linalg::ZERO;
use qtransport::solver::{SolverConfig, SolverMethod};
use qtransport::timegrid::TimeGrid;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn max_diff(a: &KernelPair, b: &KernelPair) -> f64 {
    a.greater.max_abs_diff(&b.greater).max(a.anti.max_abs_diff(&b.anti))
}

fn max_abs(a: &KernelPair) -> f64 {
    a.greater.max_abs().max(a.anti.max_abs())
}

#[test]
fn conjugate_components_close_the_four_component_equations() {
    let m = pairing_dimer();
    let res = hot_cold(0.3, 0.2, -0.1);
    let grid = TimeGrid::build(3.0, 40, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let t = ctx.coupling_tables(&[0.0, 0.0]).unwrap();
    let d = dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap();
    for alpha in 0..2 {
        for kind in KernelKind::ALL {
            let x = d.kernel(alpha, kind).unwrap();
            let defect = ctx.closure_defect(&t, &d.green, &ctx.kernel_tables(alpha, kind), x);
            let bound = 5.0 * cfg().tol * (1.0 + max_abs(x));
            assert!(defect < bound, "α={alpha} {kind:?}: {defect:.3e} ≥ {bound:.3e}");
        }
    }
}

#[test]
fn greater_equals_ordered_at_the_last_row() {
    let m = pairing_dimer();
    let res = hot_cold(0.3, 0.0, 0.0);
    let grid = TimeGrid::build(4.0, 50, 2.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let d = dress_all(&ctx, &[0.0, 0.0], &cfg(), false).unwrap();
    let n = grid.n();
    let ordered = d.green.anti.star(-1.0);
    let diff = d
        .green
        .greater
        .row(n)
        .iter()
        .zip(ordered.row(n))
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(diff < 5.0 * cfg().tol * (1.0 + max_abs(&d.green)), "{diff:.3e}");
}

#[test]
fn dressing_correction_scales_with_coupling_squared() {
    let m = pairing_dimer();
    let grid = TimeGrid::build(3.0, 40, 1.0).unwrap();
    let correction = |eta: f64| {
        let res = hot_cold(eta, 0.0, 0.0);
        let ctx = DysonContext::new(&m, &res, &grid).unwrap();
        let d = dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap();
        let bare = ctx.bare_kernel_pair(&ctx.kernel_tables(0, KernelKind::Heat));
        max_diff(d.kernel(0, KernelKind::Heat).unwrap(), &bare)
    };
    let ratio = correction(0.2) / correction(0.1);
    assert!((ratio / 4.0 - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn first_picard_step_is_the_bare_pair() {
    let m = pairing_dimer();
    let res = hot_cold(0.5, 0.1, 0.0);
    let grid = TimeGrid::build(2.0, 36, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let t = ctx.coupling_tables(&[0.0, 0.0]).unwrap();
    let bare = ctx.bare_pair(&t);
    for i in [0, 5, 36] {
        let b = ctx.bare_row(&t, i);
        let zero = vec![ZERO; b.len()];
        let mut step = vec![ZERO; b.len()];
        ctx.apply(&t, i, &zero, &mut step);
        for (s, bb) in step.iter_mut().zip(&b) {
            *s += bb;
        }
        assert_eq!(step, bare.row(i));
    }
}

#[test]
fn picard_and_krylov_solutions_agree() {
    let m = pairing_dimer();
    let res = hot_cold(0.1, 0.0, 0.0);
    let grid = TimeGrid::build(3.0, 40, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let krylov = dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap();
    let pcfg = SolverConfig { method: SolverMethod::Picard, ..cfg() };
    let picard = dress_all(&ctx, &[0.0, 0.0], &pcfg, true).unwrap();
    let scale = 1.0 + max_abs(&krylov.green);
    assert!(max_diff(&krylov.green, &picard.green) < 10.0 * cfg().tol * scale);
    for (a, b) in krylov.kernels.iter().flatten().zip(picard.kernels.iter().flatten()) {
        assert!(max_diff(a, b) < 10.0 * cfg().tol * (1.0 + max_abs(a)));
    }
}

#[test]
fn dressed_heat_is_energy_minus_mu_number() {
    let m = pairing_dimer();
    let res = hot_cold(0.4, 0.3, -0.2);
    let grid = TimeGrid::build(3.0, 40, 1.5).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let d = dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap();
    for (alpha, r) in res.iter().enumerate() {
        let q = d.kernel(alpha, KernelKind::Heat).unwrap();
        let e = d.kernel(alpha, KernelKind::Energy).unwrap();
        let n = d.kernel(alpha, KernelKind::Number).unwrap();
        let scale = max_abs(e).max(max_abs(n));
        for (tq, (te, tn)) in [(&q.greater, (&e.greater, &n.greater)), (&q.anti, (&e.anti, &n.anti))] {
            for ((a, b), c) in tq.as_slice().iter().zip(te.as_slice()).zip(tn.as_slice()) {
                assert!((a - (b - c * r.mu)).norm() < 1e-8 * scale);
            }
        }
    }
}

#[test]
fn small_tilt_is_continuous_with_zero_tilt() {
    let m = pairing_dimer();
    let res = hot_cold(0.3, 0.1, 0.0);
    let grid = TimeGrid::build(2.0, 24, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let zero = dress_all(&ctx, &[0.0, 0.0], &cfg(), false).unwrap();
    let tiny = dress_all(&ctx, &[1e-8, -1e-8], &cfg(), false).unwrap();
    assert!(max_diff(&zero.green, &tiny.green) < 1e-6);
}

#[test]
fn returned_solutions_are_fixed_points() {
    let m = pairing_dimer();
    let res = hot_cold(0.5, 0.0, 0.0);
    let grid = TimeGrid::build(3.0, 40, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let t = ctx.coupling_tables(&[0.2, 0.0]).unwrap();
    let (g, _) = ctx.solve_green(&t, &cfg()).unwrap();
    let defect = ctx.fixed_point_defect(&t, &g, |i| ctx.bare_row(&t, i));
    assert!(defect < 2.0 * cfg().tol * (1.0 + max_abs(&g)), "{defect:.3e}");
    let k = ctx.kernel_tables(1, KernelKind::Heat);
    let (x, _) = ctx.solve_kernel(&t, &g, &k, &cfg()).unwrap();
    let defect = ctx.fixed_point_defect(&t, &x, |i| ctx.kernel_rhs(&g, &k, i));
    assert!(defect < 2.0 * cfg().tol * (1.0 + max_abs(&x)), "{defect:.3e}");
}

#[test]
fn dressing_fills_blocks_of_the_other_reservoir() {
    let m = pairing_dimer();
    let res = hot_cold(0.3, 0.0, 0.0);
    let grid = TimeGrid::build(3.0, 30, 1.0).unwrap();
    let ctx = DysonContext::new(&m, &res, &grid).unwrap();
    let d = dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap();
    let bare = ctx.bare_kernel_pair(&ctx.kernel_tables(0, KernelKind::Heat));
    let dressed = d.kernel(0, KernelKind::Heat).unwrap();
    let foreign = |p: &KernelPair| {
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            for j in 0..=i {
                for a in 0..4 {
                    for b in 2..4 {
                        worst = worst.max(p.greater.get(i, j, a, b).norm());
                    }
                }
            }
        }
        worst
    };
    assert_eq!(foreign(&bare), 0.0);
    assert!(foreign(dressed) > 1e-4 * max_abs(dressed));
}

#[test]
fn early_rows_do_not_depend_on_the_final_time() {
    let m = pairing_dimer();
    let res = hot_cold(0.3, 0.1, 0.0);
    let short = TimeGrid::build(2.0, 20, 1.0).unwrap();
    let long = TimeGrid::build(4.0, 40, 1.0).unwrap();
    let solve = |g: &TimeGrid| {
        let ctx = DysonContext::new(&m, &res, g).unwrap();
        dress_all(&ctx, &[0.0, 0.0], &cfg(), true).unwrap()
    };
    let (a, b) = (solve(&short), solve(&long));
    let scale = max_abs(&a.green);
    for i in 0..=20 {
        for (x, y) in a.green.row(i).iter().zip(b.green.row(i)) {
            assert!((x - y).norm() < 1e-7 * scale, "row {i}");
        }
        let (ka, kb) = (a.kernel(0, KernelKind::Heat).unwrap(), b.kernel(0, KernelKind::Heat).unwrap());
        for (x, y) in ka.row(i).iter().zip(kb.row(i)) {
            assert!((x - y).norm() < 1e-7 * max_abs(ka), "kernel row {i}");
        }
    }
}
