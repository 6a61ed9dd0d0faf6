//! Acceptance suite: eleven numbered criteria, each printed as one PASS/FAIL
//! line.  The suite fails if any criterion fails; every criterion runs even
//! when an earlier one fails.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the report (the full-system runs of criteria 8–10 take several minutes).

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rbflow::dynamics::{FullState, FullSystem};
use rbflow::geometry::{perp, place_body, xi_at, dot, Body, BodyShape, BoundaryGrid, Configuration, Family, OuterDomain, Pose};
use rbflow::harness::{convergence_sweep, estimate_checks, rate_fit, record_full, strictly_decreasing, EstimateFixture, EstimateReport, SweepOptions};
use rbflow::laplace::{solve_exterior_standalone, solve_interior_dirichlet, ExteriorSolver, ModifiedDirichletSolver};
use rbflow::limitsys::{LimitState, LimitSystem};
use rbflow::output::csv_string;
use rbflow::potentials::{
    conformal_center, normal_mode, standalone_added_mass, standalone_circulation_stream, standalone_kirchhoff, BundleOptions,
    PotentialBundle,
};
use rbflow::reflections::{sup_difference, ReflectionWorkspace};
use rbflow::scenario::{load_scenario, Scenario};
use rbflow::{nan_max, C64};

fn c(x: f64, y: f64) -> C64 {
    C64::new(x, y)
}

/// Result of one criterion.
struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn sup<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().fold(0.0, nan_max)
}

// ---------------------------------------------------------------------------
// 1. Boundary solvers against closed-form oracles at 256 nodes

fn polynomial_oracle(z: C64, z0: C64) -> (f64, C64) {
    let w = z - z0;
    ((w * w * w).re + z.re.exp() * z.im.cos(), (3.0 * w * w + z.exp()).conj())
}

fn decaying_oracle(z: C64, a: C64, b: C64) -> (f64, C64) {
    let v = (1.0 / (z - a)).re + 0.3 * (1.0 / ((z - b) * (z - b))).im;
    let g = (-1.0 / ((z - a) * (z - a))).conj() + 0.3 * (2.0 * C64::i() / ((z - b) * (z - b) * (z - b))).conj();
    (v, g)
}

fn criterion_1() -> Outcome {
    let m = 256;
    let mut worst: f64 = 0.0;
    // interior disc
    let center = c(0.3, -0.2);
    let g = OuterDomain::disc(1.5, center, m).unwrap().grid();
    let f = solve_interior_dirichlet(&g, &g.z.iter().map(|&z| polynomial_oracle(z, center).0).collect::<Vec<_>>()).unwrap();
    for z in [center, c(1.0, 0.4), c(-0.6, -1.0), c(0.3, 1.0)] {
        let (v, grad) = polynomial_oracle(z, center);
        worst = nan_max(worst, nan_max((f.value(z) - v).abs(), (f.gradient(z) - grad).norm()) / v.abs().max(grad.norm()).max(1.0));
    }
    // interior ellipse
    let z0 = c(0.1, 0.2);
    let g = place_body(&BodyShape::ellipse(2.0, 1.0, m).unwrap(), 1.0, &Pose::new(0.1, 0.2, 0.5)).unwrap();
    let f = solve_interior_dirichlet(&g, &g.z.iter().map(|&z| polynomial_oracle(z, z0).0).collect::<Vec<_>>()).unwrap();
    for z in [z0, c(1.0, 0.6), c(-0.8, -0.2), c(0.5, 0.9)] {
        let (v, grad) = polynomial_oracle(z, z0);
        worst = nan_max(worst, nan_max((f.value(z) - v).abs(), (f.gradient(z) - grad).norm()) / v.abs().max(grad.norm()).max(1.0));
    }
    // exterior circle: Laurent series
    let (r, h) = (0.8, c(0.2, 0.1));
    let g = place_body(&BodyShape::circle(r, m).unwrap(), 1.0, &Pose::new(h.re, h.im, 0.0)).unwrap();
    let laurent = |z: C64| {
        let w = (z - h) / r;
        (1.0 / (w * w * w)).re - 0.5 * (1.0 / w).im
    };
    let s = solve_exterior_standalone(&g, &g.z.iter().map(|&z| laurent(z)).collect::<Vec<_>>()).unwrap();
    for z in [c(2.0, 0.0), c(-1.0, 1.3), c(0.2, -1.5), c(30.0, 4.0)] {
        worst = nan_max(worst, (s.field.value(z) - laurent(z)).abs());
    }
    // exterior ellipse
    let (a, b) = (c(-0.1, 0.5), c(-0.8, 0.1));
    let g = place_body(&BodyShape::ellipse(2.0, 1.0, m).unwrap(), 1.0, &Pose::new(-0.3, 0.4, 0.7)).unwrap();
    let s = solve_exterior_standalone(&g, &g.z.iter().map(|&z| decaying_oracle(z, a, b).0).collect::<Vec<_>>()).unwrap();
    for z in [c(3.0, 1.0), c(-2.5, -2.0), c(0.5, 3.0), c(10.0, 0.0)] {
        let (v, grad) = decaying_oracle(z, a, b);
        worst = nan_max(worst, nan_max((s.field.value(z) - v).abs(), (s.field.gradient(z) - grad).norm()));
    }
    outcome(worst < 1e-8, format!("largest oracle error {worst:.2e} (tolerance 1e-8, M = {m})"))
}

// ---------------------------------------------------------------------------
// 2. Reflections against the direct solve

fn criterion_2() -> Outcome {
    let asym = BodyShape::fourier(&[(1, c(1.0, 0.0)), (-1, c(0.2, 0.1)), (2, c(0.08, -0.05))], 48).unwrap();
    let cfg = Configuration {
        outer: OuterDomain::disc(2.0, c(0.0, 0.0), 192).unwrap(),
        bodies: vec![
            Body { shape: BodyShape::ellipse(0.4, 0.25, 96).unwrap(), epsilon: 1.0, pose: Pose::new(-0.6, -0.5, 0.3), family: Family::I },
            Body { shape: BodyShape::ellipse(1.0, 0.6, 48).unwrap(), epsilon: 0.08, pose: Pose::new(0.7, 0.4, 1.0), family: Family::II },
            Body { shape: asym, epsilon: 0.06, pose: Pose::new(0.2, 1.2, -0.4), family: Family::III },
        ],
        delta: 0.02,
    };
    let w = ReflectionWorkspace::new(&cfg).unwrap();
    let mut data = w.zero_data();
    data.outer = w.outer.z.iter().map(|z| z.re * z.im + 0.5 * z.re).collect();
    for (k, g) in w.grids.iter().enumerate() {
        data.bodies[k] = g.z.iter().map(|z| ((z - g.center) / (g.z[0] - g.center)).arg().cos() + 0.2 * z.im).collect();
    }
    let reflected = w.solve_h(&data, 1e-12, 100).unwrap();
    let grids = cfg.body_grids().unwrap();
    let refs: Vec<&BoundaryGrid> = grids.iter().collect();
    let direct = ModifiedDirichletSolver::new(&cfg.outer_grid(), &refs).unwrap().solve(&data).unwrap();
    let probes = [c(0.0, 0.95), c(1.3, -0.6), c(-1.1, 0.9), c(0.2, -1.6), c(-1.5, -0.3)];
    let scale = sup(probes.iter().map(|&z| direct.field.value(z).abs()));
    let field = sup_difference(&reflected.solution.field, &direct.field, &probes) / scale;
    let consts = sup(reflected.solution.constants.iter().zip(&direct.constants).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)));
    let gap = nan_max(field, consts);
    outcome(
        gap < 1e-6 && !reflected.fell_back,
        format!("relative gap {gap:.2e} after {} sweeps (tolerance 1e-6)", reflected.log.sweeps()),
    )
}

// ---------------------------------------------------------------------------
// 3 and 6. Estimates on the standard fixtures

fn report_line(report: &EstimateReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        match report.check(name) {
            Some(chk) => {
                ok &= chk.passed;
                let fit = chk.fit.map(|f| format!(" slope {:.2}", f.slope)).unwrap_or_default();
                parts.push(format!("{name}{fit} {}", if chk.passed { "ok" } else { "FAILED" }));
            }
            None => {
                ok = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let report = estimate_checks(&EstimateFixture::two_small(64).unwrap(), &[0.1, 0.05, 0.025, 0.0125]).unwrap();
    let (ok, detail) = report_line(&report, &["reflection_sweep_ratio", "reflection_norm_linear"]);
    let ratios = report.check("reflection_sweep_ratio").map(|c| c.samples.clone()).unwrap_or_default();
    let worst = sup(ratios.iter().filter(|s| s.0 <= 0.05).map(|s| s.1));
    outcome(ok, format!("{detail}; largest ratio at scale <= 0.05: {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let report = estimate_checks(&EstimateFixture::standard(64).unwrap(), &[0.1, 0.05, 0.025, 0.0125]).unwrap();
    let (ok, detail) =
        report_line(&report, &["kirchhoff_gap_j1", "kirchhoff_gap_j2", "kirchhoff_gap_j3", "point_vortex_limit", "added_mass_gap"]);
    // The exponents are upper-bound rates, graded as slope >= exponent - 0.2;
    // the distance to each exponent is reported for information.
    let distances: Vec<String> = [("j1", 2.0), ("j2", 2.0), ("j3", 3.0)]
        .iter()
        .filter_map(|(j, p)| report.check(&format!("kirchhoff_gap_{j}")).and_then(|c| c.fit).map(|f| format!("{j} {:.2}", (f.slope - p).abs())))
        .collect();
    outcome(ok, format!("{detail}; |slope - exponent|: {}", distances.join(", ")))
}

// ---------------------------------------------------------------------------
// 4. Added mass

fn asym(panels: usize) -> BodyShape {
    BodyShape::fourier(&[(1, c(1.0, 0.0)), (-1, c(0.2, 0.1)), (2, c(0.08, -0.05)), (-3, c(0.03, 0.04))], panels).unwrap()
}

fn criterion_4() -> Outcome {
    let g = place_body(&BodyShape::ellipse(2.0, 1.0, 256).unwrap(), 1.0, &Pose::identity()).unwrap();
    let m = standalone_added_mass(&ExteriorSolver::new(&g).unwrap(), &g, 3).unwrap();
    let want = [PI, 4.0 * PI, 9.0 * PI / 8.0];
    let ellipse = sup((0..3).map(|i| (m[(i, i)] - want[i]).abs() / want[i]));

    let d = place_body(&BodyShape::circle(1.0, 128).unwrap(), 1.0, &Pose::new(0.3, -0.2, 0.9)).unwrap();
    let disc = standalone_added_mass(&ExteriorSolver::new(&d).unwrap(), &d, 3).unwrap()[(2, 2)].abs();

    let q = Pose::new(0.1, 0.2, 1.1);
    let g1 = place_body(&asym(128), 1.0, &q).unwrap();
    let eps = 0.05;
    let ge = place_body(&asym(128), eps, &q).unwrap();
    let m1 = standalone_added_mass(&ExteriorSolver::new(&g1).unwrap(), &g1, 3).unwrap();
    let me = standalone_added_mass(&ExteriorSolver::new(&ge).unwrap(), &ge, 3).unwrap();
    let scale = sup((0..3).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| {
        let p = 2 + (i == 2) as i32 + (k == 2) as i32;
        (me[(i, k)] - eps.powi(p) * m1[(i, k)]).abs() / (eps.powi(p) * m1.amax())
    }));
    outcome(
        ellipse < 1e-3 && disc < 1e-8 && scale < 1e-8,
        format!("ellipse relative error {ellipse:.2e} (1e-3); disc rotation entry {disc:.2e} (1e-8); scale relation {scale:.2e} (1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// 5. Identities of the standalone circulation stream

fn criterion_5() -> Outcome {
    let g = place_body(&asym(256), 0.7, &Pose::new(0.3, 0.1, 0.8)).unwrap();
    let (psi, _) = standalone_circulation_stream(&g).unwrap();
    let tr = psi.trace(&g);
    let blasius = sup((1..=3).map(|j| {
        let k = normal_mode(&g, j);
        g.integrate(|s| tr.gradient[s].norm_sqr() * k[s]).abs()
    }));

    let g = place_body(&asym(256), 0.8, &Pose::new(-0.2, 0.4, 0.3)).unwrap();
    let (psi, _) = standalone_circulation_stream(&g).unwrap();
    let v: Vec<C64> = psi.trace(&g).gradient.iter().map(|&w| perp(w)).collect();
    let mut lamb: f64 = 0.0;
    for i in 1..=3 {
        let u = standalone_kirchhoff(&g, i).unwrap().trace(&g).gradient;
        for j in 1..=3 {
            let k = normal_mode(&g, j);
            let lhs = g.integrate(|s| dot(u[s], v[s]) * k[s]);
            let rhs = g.integrate(|s| {
                let xi = xi_at(j, g.z[s] - g.center);
                dot(xi, dot(u[s], g.normal[s]) * v[s] + dot(v[s], g.normal[s]) * u[s])
            });
            lamb = nan_max(lamb, (lhs - rhs).abs());
        }
    }

    let z1 = conformal_center(&place_body(&asym(128), 1.0, &Pose::identity()).unwrap()).unwrap();
    let theta = PI / 3.0;
    let ze = conformal_center(&place_body(&asym(128), 0.5, &Pose::new(0.7, -0.1, theta)).unwrap()).unwrap();
    let rotation = (ze - 0.5 * C64::from_polar(1.0, theta) * z1).norm();
    outcome(
        blasius < 1e-8 && lamb < 1e-8 && rotation < 1e-8 && z1.norm() > 1e-3,
        format!("Blasius residual {blasius:.2e}; Lamb residual {lamb:.2e}; conformal-centre rotation law {rotation:.2e} (all 1e-8)"),
    )
}

// ---------------------------------------------------------------------------
// 7. Shape derivatives

fn criterion_7() -> Outcome {
    let base = Configuration {
        outer: OuterDomain::disc(3.0, c(0.0, 0.0), 256).unwrap(),
        bodies: vec![
            Body { shape: BodyShape::ellipse(0.6, 0.3, 128).unwrap(), epsilon: 1.0, pose: Pose::new(-0.9, 0.3, 0.4), family: Family::I },
            Body { shape: asym(128), epsilon: 0.4, pose: Pose::new(1.0, -0.4, -0.7), family: Family::II },
        ],
        delta: 0.05,
    };
    let bundle = PotentialBundle::new(&base, BundleOptions::default()).unwrap();
    let probes = [c(0.1, 1.3), c(-0.2, -1.5), c(1.9, 0.9)];
    let gradients = |cfg: &Configuration, lambda: usize, l: usize| -> Vec<C64> {
        let b = PotentialBundle::new(cfg, BundleOptions::default()).unwrap();
        probes.iter().map(|&x| b.kirchhoff[lambda][l - 1].gradient(x)).collect()
    };
    let moved = |mu: usize, m: usize, s: f64| {
        let mut cfg = base.clone();
        let p = &mut cfg.bodies[mu].pose;
        match m {
            1 => p.h += s,
            2 => p.h += C64::i() * s,
            _ => p.theta += s,
        }
        cfg
    };
    let mut worst: f64 = 0.0;
    let mut richardson_ok = true;
    for &(lambda, l, mu, m) in &[(0, 1, 0, 1), (0, 3, 0, 2), (1, 2, 1, 3), (0, 2, 1, 1), (1, 3, 0, 3)] {
        let solved = bundle.shape_derivative_kirchhoff(lambda, l, mu, m).unwrap();
        let fd = |s: f64| -> Vec<C64> {
            let a = gradients(&moved(mu, m, s), lambda, l);
            let b = gradients(&moved(mu, m, -s), lambda, l);
            a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * s)).collect()
        };
        let (d1, d2) = (fd(1e-4), fd(5e-5));
        for (k, &x) in probes.iter().enumerate() {
            let want = solved.gradient(x);
            let rich = (4.0 * d2[k] - d1[k]) / 3.0;
            worst = nan_max(worst, (d1[k] - want).norm());
            richardson_ok &= (rich - want).norm() <= (d1[k] - want).norm() + 1e-7;
        }
    }
    outcome(
        worst < 1e-4 && richardson_ok,
        format!("largest gap to central differences {worst:.2e} (1e-4); Richardson extrapolation {}", if richardson_ok { "confirms" } else { "does not confirm" }),
    )
}

// ---------------------------------------------------------------------------
// 8. Conservation and integrator order

fn criterion_8() -> Outcome {
    let s = scenario("two_bodies_blobs.scenario.json");
    let (sys, state) = s.full_system(None).unwrap();
    let gammas = sys.gammas();
    let mut e0 = None;
    let mut energy_drift: f64 = 0.0;
    let mut circ_drift: f64 = 0.0;
    let traj = sys
        .run(&state, 1e-3, 1.0, &mut |st: &FullState, r| {
            let e = *e0.get_or_insert(r.energy);
            energy_drift = nan_max(energy_drift, (r.energy - e).abs() / e.abs());
            for (g, g0) in r.circulations.iter().zip(&gammas) {
                circ_drift = nan_max(circ_drift, (g - g0).abs());
            }
            for (b, b0) in st.blobs.iter().zip(&state.blobs) {
                circ_drift = nan_max(circ_drift, (b.strength - b0.strength).abs());
            }
        })
        .unwrap();
    let order = rk4_order(&sys, &state);
    outcome(
        traj.breach.is_none() && energy_drift < 1e-6 && circ_drift < 1e-8 && order >= 3.8,
        format!(
            "energy drift {energy_drift:.2e} (1e-6); circulation drift {circ_drift:.2e} (1e-8); RK4 self-convergence order {order:.2} (3.8); t = {:.3}",
            traj.final_state.t
        ),
    )
}

fn rk4_order(sys: &FullSystem, state: &FullState) -> f64 {
    let t_end = 0.2;
    let final_state = |dt: f64| sys.run(state, dt, t_end, &mut |_, _| {}).unwrap().final_state;
    let reference = final_state(0.0025);
    let gap = |a: &FullState| {
        sup(a.poses.iter().zip(&reference.poses).flat_map(|(p, q)| [(p.h - q.h).norm(), (p.theta - q.theta).abs()])
            .chain(a.velocities.iter().zip(&reference.velocities).flat_map(|(u, v)| (0..3).map(move |j| (u[j] - v[j]).abs())))
            .chain(a.blobs.iter().zip(&reference.blobs).map(|(x, y)| (x.position - y.position).norm())))
    };
    let samples: Vec<(f64, f64)> = [0.02, 0.01, 0.005].iter().map(|&dt| (dt, gap(&final_state(dt)))).collect();
    rate_fit(&samples).map(|f| f.slope).unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// 9. Lone vortex in the unit disc

fn criterion_9() -> Outcome {
    let mut s = scenario("lone_iii.scenario.json");
    let speed = 1.0 / (3.0 * PI);
    let quarter = 0.25 * 2.0 * PI * 0.5 / speed;
    s.numerics.t_end = quarter;
    let exact = |t: f64| C64::from_polar(0.5, speed * t / 0.5);

    let (lsys, lstate): (LimitSystem, LimitState) = s.limit_system().unwrap();
    let mut limit_err: f64 = 0.0;
    lsys.run(&lstate, s.numerics.dt, quarter, &mut |st, _| {
        limit_err = nan_max(limit_err, (st.vortices[0].position - exact(st.t)).norm());
    })
    .unwrap();

    let (fsys, fstate) = s.full_system(Some(0.025)).unwrap();
    let mut full_err: f64 = 0.0;
    let traj = fsys
        .run(&fstate, s.numerics.dt, quarter, &mut |st, _| {
            full_err = nan_max(full_err, (st.poses[0].h - exact(st.t)).norm());
        })
        .unwrap();
    outcome(
        limit_err < 1e-4 && full_err < 5e-2 && traj.breach.is_none(),
        format!("limit orbit error {limit_err:.2e} (1e-4); full system at scale 0.025 {full_err:.2e} (5e-2) over t = {quarter:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 10. Convergence proxies for both small-body families

fn criterion_10() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["lone_ii.scenario.json", "lone_iii.scenario.json"] {
        let s = scenario(name);
        let mut opts = SweepOptions::for_scenario(&s).unwrap();
        opts.modulation = true;
        let out = convergence_sweep(&s, &[0.1, 0.05, 0.025], &opts).unwrap();
        let errors = out.table.errors(0);
        let residuals = out.table.residuals(0);
        let breach = out.table.limit_breach.is_some() || out.table.members.iter().any(|m| m.breach.is_some());
        let good = strictly_decreasing(&errors) && strictly_decreasing(&residuals) && errors.len() == 3 && residuals.len() == 3 && !breach;
        ok &= good;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" > ");
        parts.push(format!("{} errors {} residuals {}", s.bodies[0].family_label(), fmt(&errors), fmt(&residuals)));
    }
    outcome(ok, parts.join("; "))
}

trait FamilyLabel {
    fn family_label(&self) -> &'static str;
}

impl FamilyLabel for rbflow::scenario::BodySpec {
    fn family_label(&self) -> &'static str {
        match self.family {
            Family::I => "family (i)",
            Family::II => "family (ii)",
            Family::III => "family (iii)",
        }
    }
}

// ---------------------------------------------------------------------------
// 11. Determinism

fn criterion_11() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/golden");
    let s = load_scenario(dir.join("short.scenario.json")).unwrap();
    let table = || {
        let (sys, state) = s.full_system(None).unwrap();
        let run = record_full(&sys, &state, s.numerics.dt, s.numerics.t_end).unwrap();
        csv_string(&run.samples(s.outputs.stride)).unwrap()
    };
    let (a, b) = (table(), table());
    let golden = std::fs::read_to_string(dir.join("short.csv")).unwrap();
    outcome(
        a == b && a == golden,
        format!("repeated runs identical: {}; matches golden table: {}", a == b, a == golden),
    )
}

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Outcome); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let mut failed = Vec::new();
    for (n, f) in criteria {
        let start = std::time::Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n}: {} — {} [{:.1} s]",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.passed {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
