//! Oracles and identities for the named potentials.

use std::f64::consts::PI;

use rbflow::geometry::{dot, perp, place_body, Body, BodyShape, Configuration, Family, OuterDomain, Pose, I};
use rbflow::potentials::{
    conformal_center, normal_mode, standalone_added_mass, standalone_circulation_stream, standalone_kirchhoff,
    BundleOptions, KirchhoffNormalization, PotentialBundle, VortexElement,
};
use rbflow::laplace::ExteriorSolver;
use rbflow::C64;

fn asym_shape(panels: usize) -> BodyShape {
    BodyShape::fourier(
        &[(1, C64::new(1.0, 0.0)), (-1, C64::new(0.2, 0.1)), (2, C64::new(0.08, -0.05)), (-3, C64::new(0.03, 0.04))],
        panels,
    )
    .unwrap()
}

fn two_body_config(panels: usize) -> Configuration {
    Configuration {
        outer: OuterDomain::disc(3.0, C64::new(0.0, 0.0), 2 * panels).unwrap(),
        bodies: vec![
            Body { shape: BodyShape::ellipse(0.6, 0.3, panels).unwrap(), epsilon: 1.0, pose: Pose::new(-0.9, 0.3, 0.4), family: Family::I },
            Body { shape: asym_shape(panels), epsilon: 0.4, pose: Pose::new(1.0, -0.4, -0.7), family: Family::II },
        ],
        delta: 0.05,
    }
}

#[test]
fn ellipse_standalone_added_mass_matches_analytic_values() {
    let g = place_body(&BodyShape::ellipse(2.0, 1.0, 256).unwrap(), 1.0, &Pose::identity()).unwrap();
    let ext = ExteriorSolver::new(&g).unwrap();
    let m = standalone_added_mass(&ext, &g, 3).unwrap();
    let want = [PI, 4.0 * PI, 9.0 * PI / 8.0];
    for i in 0..3 {
        assert!((m[(i, i)] - want[i]).abs() < 1e-3 * want[i], "entry {i}: {}", m[(i, i)]);
    }
    // kinetic energy of the j = 1 flow equals the diagonal entry
    let phi = standalone_kirchhoff(&g, 1).unwrap();
    let tr = phi.trace(&g);
    let energy = g.integrate(|s| tr.value[s] * dot(tr.gradient[s], g.normal[s]));
    assert!((energy - PI).abs() < 1e-4);
}

#[test]
fn disc_rotation_creates_no_flow() {
    let g = place_body(&BodyShape::circle(1.0, 128).unwrap(), 1.0, &Pose::new(0.3, -0.2, 0.9)).unwrap();
    let phi = standalone_kirchhoff(&g, 3).unwrap();
    for x in [C64::new(2.0, 0.0), C64::new(-1.0, 1.5)] {
        assert!(phi.gradient(x).norm() < 1e-12);
    }
    let m = standalone_added_mass(&ExteriorSolver::new(&g).unwrap(), &g, 3).unwrap();
    assert!(m[(2, 2)].abs() < 1e-8);
}

#[test]
fn disc_translation_is_a_dipole() {
    let g = place_body(&BodyShape::circle(0.5, 128).unwrap(), 1.0, &Pose::identity()).unwrap();
    for j in 1..=2 {
        let phi = standalone_kirchhoff(&g, j).unwrap();
        for r in [1.0, 2.0, 3.5] {
            let x = C64::from_polar(r, 0.7);
            assert!((phi.gradient(x).norm() - 0.25 / (r * r)).abs() < 1e-12);
        }
    }
}

#[test]
fn standalone_kirchhoff_scale_law() {
    let s = asym_shape(128);
    let h = C64::new(0.4, -0.2);
    let g1 = place_body(&s, 1.0, &Pose::new(h.re, h.im, 0.3)).unwrap();
    let eps = 0.3;
    let ge = place_body(&s, eps, &Pose::new(h.re, h.im, 0.3)).unwrap();
    for j in 1..=5 {
        let p1 = standalone_kirchhoff(&g1, j).unwrap();
        let pe = standalone_kirchhoff(&ge, j).unwrap();
        let power = if j >= 3 { 2 } else { 1 };
        for y in [C64::new(2.0, 0.5), C64::new(-1.2, 2.2)] {
            let a = pe.value(h + eps * y);
            let b = eps.powi(power) * p1.value(h + y);
            assert!((a - b).abs() < 1e-11, "j {j}: {a} vs {b}");
        }
    }
}

#[test]
fn standalone_added_mass_scale_relation() {
    let s = asym_shape(128);
    let q = Pose::new(0.1, 0.2, 1.1);
    let g1 = place_body(&s, 1.0, &q).unwrap();
    let eps = 0.05;
    let ge = place_body(&s, eps, &q).unwrap();
    let m1 = standalone_added_mass(&ExteriorSolver::new(&g1).unwrap(), &g1, 3).unwrap();
    let me = standalone_added_mass(&ExteriorSolver::new(&ge).unwrap(), &ge, 3).unwrap();
    for i in 0..3 {
        for k in 0..3 {
            let p = 2 + (i == 2) as i32 + (k == 2) as i32;
            let want = eps.powi(p) * m1[(i, k)];
            assert!((me[(i, k)] - want).abs() < 1e-8 * eps.powi(p) * m1.amax());
        }
    }
    // positive definite for a non-disc body
    let ev = m1.symmetric_eigenvalues();
    assert!(ev.min() > 0.0);
}

#[test]
fn circulation_streams_are_normalized() {
    let cfg = two_body_config(96);
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    for k in 0..2 {
        for (nu, g) in b.grids.iter().enumerate() {
            let tr = b.psi[k].trace(g);
            let flux = g.integrate(|s| dot(tr.gradient[s], g.normal[s]));
            let want = if nu == k { -1.0 } else { 0.0 };
            assert!((flux - want).abs() < 1e-8, "flux {k}->{nu}: {flux}");
            for v in &tr.value {
                assert!((v - b.psi_constants[k][nu]).abs() < 1e-9);
            }
        }
        for v in b.psi[k].trace(&b.outer).value {
            assert!(v.abs() < 1e-9);
        }
    }
}

#[test]
fn conformal_center_rotates_and_scales() {
    let s = asym_shape(128);
    let z1 = conformal_center(&place_body(&s, 1.0, &Pose::identity()).unwrap()).unwrap();
    assert!(z1.norm() > 1e-3);
    let theta = PI / 3.0;
    let ze = conformal_center(&place_body(&s, 0.5, &Pose::new(0.7, -0.1, theta)).unwrap()).unwrap();
    let want = 0.5 * C64::from_polar(1.0, theta) * z1;
    assert!((ze - want).norm() < 1e-8);

    let ell = place_body(&BodyShape::ellipse(1.0, 0.4, 128).unwrap(), 1.0, &Pose::new(0.2, 0.1, 0.5)).unwrap();
    assert!(conformal_center(&ell).unwrap().norm() < 1e-12);
}

#[test]
fn conformal_center_is_converged_in_resolution() {
    let a = conformal_center(&place_body(&asym_shape(128), 1.0, &Pose::identity()).unwrap()).unwrap();
    let b = conformal_center(&place_body(&asym_shape(1024), 1.0, &Pose::identity()).unwrap()).unwrap();
    assert!((a - b).norm() < 1e-10);
}

#[test]
fn blasius_identity() {
    let g = place_body(&asym_shape(256), 0.7, &Pose::new(0.3, 0.1, 0.8)).unwrap();
    let (psi, _) = standalone_circulation_stream(&g).unwrap();
    let tr = psi.trace(&g);
    for j in 1..=3 {
        let k = normal_mode(&g, j);
        let r = g.integrate(|s| tr.gradient[s].norm_sqr() * k[s]);
        assert!(r.abs() < 1e-8, "j {j}: {r}");
    }
}

#[test]
fn lamb_identity() {
    let g = place_body(&asym_shape(256), 0.8, &Pose::new(-0.2, 0.4, 0.3)).unwrap();
    let phi = standalone_kirchhoff(&g, 1).unwrap();
    let (psi, _) = standalone_circulation_stream(&g).unwrap();
    let u = phi.trace(&g).gradient;
    let v: Vec<C64> = psi.trace(&g).gradient.iter().map(|&w| perp(w)).collect();
    for j in 1..=3 {
        let k = normal_mode(&g, j);
        let lhs = g.integrate(|s| dot(u[s], v[s]) * k[s]);
        let rhs = g.integrate(|s| {
            let xi = rbflow::geometry::xi_at(j, g.z[s] - g.center);
            dot(xi, dot(u[s], g.normal[s]) * v[s] + dot(v[s], g.normal[s]) * u[s])
        });
        assert!((lhs - rhs).abs() < 1e-8, "j {j}: {lhs} vs {rhs}");
    }
}

#[test]
fn free_space_blob_velocity() {
    let e = VortexElement::blob(C64::new(0.0, 0.0), 1.0, 0.05);
    let u = e.velocity_at(C64::new(1.0, 0.0));
    assert!((u - C64::new(0.0, 1.0 / (2.0 * PI))).norm() < 1e-14);
}

#[test]
fn point_vortex_in_unit_disc_moves_at_image_speed() {
    let cfg = Configuration { outer: OuterDomain::disc(1.0, C64::new(0.0, 0.0), 128).unwrap(), bodies: vec![], delta: 0.05 };
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let v = VortexElement::point(C64::new(0.5, 0.0), 1.0);
    let bs = b.biot_savart(&[v]).unwrap();
    let u = bs.velocity(v.position);
    assert!((u - I / (3.0 * PI)).norm() < 1e-12, "{u}");
}

#[test]
fn biot_savart_boundary_conditions() {
    let cfg = two_body_config(96);
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let blobs = [VortexElement::blob(C64::new(0.2, 1.5), 0.7, 0.05), VortexElement::blob(C64::new(0.1, -1.6), -0.3, 0.05)];
    let bs = b.biot_savart(&blobs).unwrap();
    for g in b.all_grids() {
        let tr = bs.stream.trace(g);
        let circ = g.integrate(|s| dot(I * tr.gradient[s], g.tangent[s]));
        let normal: f64 = (0..g.len()).map(|s| dot(I * tr.gradient[s], g.normal[s]).abs()).fold(0.0, f64::max);
        assert!(normal < 1e-6, "normal trace {normal}");
        if !std::ptr::eq(g, &b.outer) {
            assert!(circ.abs() < 1e-8, "circulation {circ}");
        }
    }
}

#[test]
fn assembled_velocity_satisfies_boundary_conditions() {
    let cfg = two_body_config(96);
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let p = [[0.3, -0.2, 0.5], [-0.4, 0.1, -0.8]];
    let gamma = [0.6, -1.1];
    let bs = b.biot_savart(&[VortexElement::blob(C64::new(0.2, 1.6), 0.5, 0.05)]).unwrap();
    let u = b.assemble_velocity(&p, &gamma, Some(&bs));
    for (k, g) in b.grids.iter().enumerate() {
        let tr = u.trace(g);
        let mut worst: f64 = 0.0;
        for s in 0..g.len() {
            let vs = rbflow::geometry::rigid_velocity_at(g.center, p[k], g.z[s]);
            worst = worst.max((dot(tr[s] - vs, g.normal[s])).abs());
        }
        assert!(worst < 1e-6, "normal residual {worst}");
        let circ = g.integrate(|s| dot(tr[s], g.tangent[s]));
        assert!((circ - gamma[k]).abs() < 1e-6, "circulation {circ}");
    }
    let tr = u.trace(&b.outer);
    assert!((0..b.outer.len()).all(|s| dot(tr[s], b.outer.normal[s]).abs() < 1e-6));

    let zero = b.assemble_velocity(&[[0.0; 3]; 2], &[0.0; 2], None);
    assert_eq!(zero.velocity(C64::new(0.0, 1.0)), C64::new(0.0, 0.0));
}

#[test]
fn coupled_added_mass_dual_route() {
    // ∮_{∂S_ν} φ_{κ,i} K_{ν,j} agrees with ∮_{∂S_κ} ℬ_{κ,i} ∂_n 𝔣_{ν,j}, where 𝔣 is the
    // conjugate pair of φ (a route that never evaluates φ on the boundary).
    let cfg = two_body_config(128);
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let m = b.added_mass();
    for k in 0..2 {
        for nu in 0..2 {
            for i in 1..=3 {
                for j in 1..=3 {
                    let f = b.kirchhoff[nu][j - 1].conjugate().unwrap();
                    let g = &b.grids[k];
                    let prim = rbflow::potentials::rigid_primitive(g, i);
                    let tr = f.trace(g);
                    let dual = -g.integrate(|s| prim[s] * dot(tr.gradient[s], g.normal[s]));
                    let a = m[(3 * k + i - 1, 3 * nu + j - 1)];
                    assert!((a - dual).abs() < 1e-8 * m.amax(), "({k},{i}),({nu},{j}): {a} vs {dual}");
                }
            }
        }
    }
    assert!((&m - m.transpose()).amax() < 1e-8 * m.amax());
    assert!(m.clone().symmetric_eigenvalues().min() > -1e-8 * m.amax());
}

#[test]
fn normalizations_differ_only_by_constants() {
    let cfg = two_body_config(96);
    let a = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let b = PotentialBundle::new(
        &cfg,
        BundleOptions { normalization: KirchhoffNormalization::MatchStandaloneOnOuter, ..BundleOptions::default() },
    )
    .unwrap();
    let x = C64::new(0.1, 1.2);
    let y = C64::new(-0.3, -1.9);
    for k in 0..2 {
        for j in 0..3 {
            let da = a.kirchhoff[k][j].value(x) - a.kirchhoff[k][j].value(y);
            let db = b.kirchhoff[k][j].value(x) - b.kirchhoff[k][j].value(y);
            assert!((da - db).abs() < 1e-10);
        }
    }
}

#[test]
fn phantom_field_of_lone_vortex_is_image_velocity() {
    let cfg = Configuration {
        outer: OuterDomain::disc(1.0, C64::new(0.0, 0.0), 128).unwrap(),
        bodies: vec![Body { shape: BodyShape::circle(1.0, 64).unwrap(), epsilon: 0.02, pose: Pose::new(0.5, 0.0, 0.0), family: Family::III }],
        delta: 0.01,
    };
    let b = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let ph = b.phantom(0).unwrap();
    let u = ph.modulation_field(&[[0.0; 3]], &[1.0], &[]).unwrap();
    let v = u.velocity(C64::new(0.5, 0.0));
    assert!((v - I / (3.0 * PI)).norm() < 1e-10, "{v}");

    let centred = Configuration { bodies: vec![Body { pose: Pose::identity(), ..cfg.bodies[0].clone() }], ..cfg.clone() };
    let b = PotentialBundle::new(&centred, BundleOptions::default()).unwrap();
    let u = b.phantom(0).unwrap().modulation_field(&[[0.0; 3]], &[1.0], &[]).unwrap();
    assert!(u.velocity(C64::new(0.0, 0.0)).norm() < 1e-12);
}

#[test]
fn shape_derivative_matches_central_differences() {
    let base = two_body_config(128);
    let b = PotentialBundle::new(&base, BundleOptions::default()).unwrap();
    let probes = [C64::new(0.1, 1.3), C64::new(-0.2, -1.5), C64::new(1.9, 0.9)];
    let grad_at = |cfg: &Configuration, lambda: usize, l: usize| -> Vec<C64> {
        let bb = PotentialBundle::new(cfg, BundleOptions::default()).unwrap();
        probes.iter().map(|&x| bb.kirchhoff[lambda][l - 1].gradient(x)).collect()
    };
    let moved = |mu: usize, m: usize, s: f64| -> Configuration {
        let mut c = base.clone();
        let p = &mut c.bodies[mu].pose;
        match m {
            1 => p.h += s,
            2 => p.h += I * s,
            _ => p.theta += s,
        }
        c
    };
    for &(lambda, l, mu, m) in &[(0, 1, 0, 1), (0, 3, 0, 2), (1, 2, 1, 3), (0, 2, 1, 1), (1, 3, 0, 3)] {
        let solved = b.shape_derivative_kirchhoff(lambda, l, mu, m).unwrap();
        let fd = |s: f64| -> Vec<C64> {
            let a = grad_at(&moved(mu, m, s), lambda, l);
            let c = grad_at(&moved(mu, m, -s), lambda, l);
            a.iter().zip(&c).map(|(x, y)| (x - y) / (2.0 * s)).collect()
        };
        let s = 1e-4;
        let d1 = fd(s);
        let d2 = fd(s / 2.0);
        for (k, &x) in probes.iter().enumerate() {
            let want = solved.gradient(x);
            let rich = (4.0 * d2[k] - d1[k]) / 3.0;
            assert!((d1[k] - want).norm() < 1e-4, "({lambda},{l})/({mu},{m}) fd {} vs {}", d1[k], want);
            assert!((rich - want).norm() <= (d1[k] - want).norm() + 1e-7);
        }
    }
}

#[test]
fn reflection_backend_reproduces_direct_bundle() {
    let small = BodyShape::ellipse(1.0, 0.6, 64).unwrap();
    let cfg = Configuration {
        outer: OuterDomain::disc(2.0, C64::new(0.0, 0.0), 128).unwrap(),
        bodies: vec![
            Body { shape: BodyShape::circle(0.4, 64).unwrap(), epsilon: 1.0, pose: Pose::new(-0.6, 0.0, 0.0), family: Family::I },
            Body { shape: small.clone(), epsilon: 0.05, pose: Pose::new(0.7, 0.5, 0.3), family: Family::III },
            Body { shape: small, epsilon: 0.05, pose: Pose::new(0.6, -0.6, -0.4), family: Family::II },
        ],
        delta: 0.05,
    };
    let direct = PotentialBundle::new(&cfg, BundleOptions::default()).unwrap();
    let refl = PotentialBundle::new(
        &cfg,
        BundleOptions { solver: rbflow::potentials::SolverChoice::Reflections { tol: 1e-13, max_sweeps: 60 }, ..Default::default() },
    )
    .unwrap();
    let probes = [C64::new(0.0, 1.2), C64::new(1.1, 0.0), C64::new(-0.5, -1.0)];
    for k in 0..3 {
        for x in probes {
            let a = direct.psi[k].gradient(x);
            let b = refl.psi[k].gradient(x);
            assert!((a - b).norm() < 1e-8 * a.norm().max(1e-3), "psi {k}");
            for j in 0..3 {
                let a = direct.kirchhoff[k][j].gradient(x);
                let b = refl.kirchhoff[k][j].gradient(x);
                assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()), "phi {k},{j}");
            }
        }
    }
}
