//! Time integration of the full coupled system: rigid bodies of every scaling
//! family, an ideal fluid with prescribed circulations, and vortex blobs.
//!
//! Newton's law for each body is written in the weak form
//! `(ℳ_g + ℳ_a) p′ = T₁ + … + T₇`, every term being a boundary quadrature
//! except the vortical term `T₇`, which is a sum over vorticity carriers.  The
//! potentials are rebuilt at every Runge–Kutta stage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    admissibility_with_points, dot, perp, rigid_velocity_at, BoundaryGrid, Configuration, Family, MarginReport, PointSupport, Pose,
};
use crate::laplace::FieldTrace;
use crate::potentials::{normal_mode, BiotSavart, BundleOptions, FlowField, PotentialBundle, VortexElement};

/// Genuine mass and inertia of a body of family `family` and scale `eps`
/// (`α` is the mass exponent of family (iii)).
pub fn scaled_inertia(family: Family, eps: f64, m1: f64, j1: f64, alpha: f64) -> (f64, f64) {
    match family {
        Family::I => (m1, j1),
        Family::II => (m1, eps * eps * j1),
        Family::III => (eps.powf(alpha) * m1, eps.powf(alpha + 2.0) * j1),
    }
}

/// Physical parameters of one body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia: f64,
    /// Circulation around the body (constant in time).
    pub gamma: f64,
}

/// How the exterior-acceleration term `T₃` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum T3Method {
    /// Closed boundary form: the stream of the non-potential part is constant
    /// along every moving boundary.
    #[default]
    BoundaryIdentity,
    /// Central differences of the reflected stream at material boundary nodes
    /// under a rigid move of size `step` (blobs advected alongside).
    FiniteDifference { step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DynamicsOptions {
    pub bundle: BundleOptions,
    pub t3: T3Method,
    /// Freeze the bodies (accelerations forced to zero); used for pure vortex tests.
    pub pinned_bodies: bool,
}

/// Static description of a full system.
#[derive(Clone, Debug)]
pub struct FullSystem {
    /// Outer domain, shapes, scales and families (poses are taken from the state).
    pub config: Configuration,
    pub bodies: Vec<BodyParams>,
    pub options: DynamicsOptions,
}

/// Dynamic state `(t, q, p, ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullState {
    pub t: f64,
    pub poses: Vec<Pose>,
    /// `(h′₁, h′₂, θ′)` per body.
    pub velocities: Vec<[f64; 3]>,
    pub blobs: Vec<VortexElement>,
}

/// Time derivative of a [`FullState`].
#[derive(Clone, Debug, PartialEq)]
pub struct FullDerivative {
    pub dq: Vec<[f64; 3]>,
    pub dp: Vec<[f64; 3]>,
    pub dblobs: Vec<C64>,
}

/// A vorticity carrier as seen by the force term `T₇`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Carrier {
    pub position: C64,
    pub strength: f64,
    pub velocity: C64,
}

/// The seven force terms, per body and rigid mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceBreakdown {
    pub t1: Vec<[f64; 3]>,
    pub t2: Vec<[f64; 3]>,
    pub t3: Vec<[f64; 3]>,
    /// Identically zero.
    pub t4: Vec<[f64; 3]>,
    pub t5: Vec<[f64; 3]>,
    pub t6: Vec<[f64; 3]>,
    pub t7: Vec<[f64; 3]>,
    /// Independent quadrature of the vanishing quadratic circulation term.
    pub t4_residual: Vec<[f64; 3]>,
    /// `T₂` through the whole fluid boundary (dual route).
    pub t2_dual: Vec<[f64; 3]>,
    pub total: Vec<[f64; 3]>,
    /// `ℳ_g + ℳ_a`.
    pub mass_matrix: DMatrix<f64>,
    pub acceleration: Vec<[f64; 3]>,
}

/// Everything computed from one state: potentials, Biot–Savart field, velocity.
pub struct Snapshot {
    pub config: Configuration,
    pub bundle: PotentialBundle,
    pub biot: BiotSavart,
    pub flow: FlowField,
    pub margin: MarginReport,
}

impl Snapshot {
    /// Velocity at the carriers' centres, self-induction excluded.
    pub fn carrier_velocities(&self) -> Vec<C64> {
        self.biot.elements.par_iter().map(|e| self.flow.velocity(e.position)).collect()
    }
}

/// Admissibility check of a configuration carrying vorticity.
pub fn check_admissible(cfg: &Configuration, elements: &[VortexElement], t: f64, points_interact: bool) -> Result<MarginReport> {
    let supports: Vec<PointSupport> = elements.iter().map(|e| PointSupport { center: e.position, radius: e.core }).collect();
    let report = admissibility_with_points(cfg, &supports, points_interact);
    if !report.admissible {
        let detail = if !report.nested_correctly {
            "a body or vortex left the fluid domain".to_string()
        } else {
            format!(
                "separation {:.3e} (bodies {:.3e}, outer {:.3e}, vorticity {:.3e}, points {:.3e})",
                report.min_distance, report.body_body, report.body_outer, report.vorticity, report.point_point
            )
        };
        return Err(Error::Breach { time: t, margin: report.margin, detail });
    }
    Ok(report)
}

/// Build the potentials, Biot–Savart field and velocity of a configuration.
pub fn build_snapshot(
    cfg: Configuration,
    options: BundleOptions,
    velocities: &[[f64; 3]],
    gamma: &[f64],
    elements: &[VortexElement],
    margin: MarginReport,
) -> Result<Snapshot> {
    let bundle = PotentialBundle::new(&cfg, options)?;
    let biot = bundle.biot_savart(elements)?;
    let flow = bundle.assemble_velocity(velocities, gamma, Some(&biot));
    Ok(Snapshot { config: cfg, bundle, biot, flow, margin })
}

impl FullSystem {
    /// Checked constructor: positive masses, one parameter set per body, and
    /// family (iii) bodies that are neither discs nor circulation-free.
    pub fn new(config: Configuration, bodies: Vec<BodyParams>, options: DynamicsOptions) -> Result<Self> {
        config.validate()?;
        if config.bodies.len() != bodies.len() {
            return Err(Error::invalid("one parameter set per body is required"));
        }
        for (k, (b, p)) in config.bodies.iter().zip(&bodies).enumerate() {
            if !(p.mass > 0.0 && p.mass.is_finite()) {
                return Err(Error::validation(format!("bodies[{k}].mass"), "mass must be positive"));
            }
            if !(p.inertia > 0.0 && p.inertia.is_finite()) {
                return Err(Error::validation(format!("bodies[{k}].inertia"), "moment of inertia must be positive"));
            }
            if !p.gamma.is_finite() {
                return Err(Error::validation(format!("bodies[{k}].gamma"), "circulation must be finite"));
            }
            if b.family == Family::III {
                if b.shape.is_disc() {
                    return Err(Error::validation(
                        format!("bodies[{k}].shape"),
                        "a family (iii) body must not be a disc: its rotational added mass vanishes",
                    ));
                }
                if p.gamma == 0.0 {
                    return Err(Error::validation(
                        format!("bodies[{k}].gamma"),
                        "a family (iii) body needs a nonzero circulation: with vanishing mass its motion is driven by the lift alone",
                    ));
                }
            }
        }
        Ok(FullSystem { config, bodies, options })
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.bodies.iter().map(|b| b.gamma).collect()
    }

    pub fn genuine_masses(&self) -> Vec<(f64, f64)> {
        self.bodies.iter().map(|b| (b.mass, b.inertia)).collect()
    }

    /// Validate the state shape against the system.
    fn check_state(&self, state: &FullState) -> Result<()> {
        let n = self.config.bodies.len();
        if state.poses.len() != n || state.velocities.len() != n || self.bodies.len() != n {
            return Err(Error::invalid("state and system disagree on the number of bodies"));
        }
        Ok(())
    }

    pub fn snapshot(&self, state: &FullState) -> Result<Snapshot> {
        self.check_state(state)?;
        let cfg = self.config.with_poses(&state.poses);
        let margin = check_admissible(&cfg, &state.blobs, state.t, false)?;
        build_snapshot(cfg, self.options.bundle, &state.velocities, &self.gammas(), &state.blobs, margin)
    }

    /// Mass matrix `ℳ_g + ℳ_a(q)`.
    pub fn mass_matrix(&self, state: &FullState) -> Result<DMatrix<f64>> {
        let snap = self.snapshot(state)?;
        Ok(total_mass_matrix(&self.genuine_masses(), &snap.bundle))
    }

    /// The seven force terms and the resulting accelerations.
    pub fn force_terms(&self, state: &FullState) -> Result<ForceBreakdown> {
        let snap = self.snapshot(state)?;
        self.force_terms_with(state, &snap)
    }

    pub fn force_terms_with(&self, state: &FullState, snap: &Snapshot) -> Result<ForceBreakdown> {
        let uv = snap.carrier_velocities();
        let carriers: Vec<Carrier> = state
            .blobs
            .iter()
            .zip(&uv)
            .map(|(b, &v)| Carrier { position: b.position, strength: b.strength, velocity: v })
            .collect();
        let mut fb = force_terms_core(snap, &state.velocities, &self.gammas(), &carriers, &self.genuine_masses())?;
        if let T3Method::FiniteDifference { step } = self.options.t3 {
            fb.t3 = self.t3_finite_difference(state, snap, step)?;
            fb.total = sum_terms(&fb);
            fb.acceleration = solve_acceleration(&fb.mass_matrix, &fb.total)?;
        }
        if self.options.pinned_bodies {
            fb.acceleration.iter_mut().for_each(|a| *a = [0.0; 3]);
        }
        Ok(fb)
    }

    /// `T₃` by central differences of the reflected stream at material nodes.
    pub fn t3_finite_difference(&self, state: &FullState, snap: &Snapshot, step: f64) -> Result<Vec<[f64; 3]>> {
        if !(step > 0.0) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        let gamma = self.gammas();
        let uv = snap.carrier_velocities();
        let reflected = |sign: f64| -> Result<Vec<Vec<f64>>> {
            let poses: Vec<Pose> = state
                .poses
                .iter()
                .zip(&state.velocities)
                .map(|(q, p)| Pose { h: q.h + sign * step * C64::new(p[0], p[1]), theta: q.theta + sign * step * p[2] })
                .collect();
            let blobs: Vec<VortexElement> = state
                .blobs
                .iter()
                .zip(&uv)
                .map(|(b, &v)| VortexElement { position: b.position + sign * step * v, ..*b })
                .collect();
            let cfg = self.config.with_poses(&poses);
            let bundle = PotentialBundle::new(&cfg, self.options.bundle)?;
            let bs = bundle.biot_savart(&blobs)?;
            let r = reflected_stream(&bundle, &gamma, &bs);
            Ok(bundle.all_grids().map(|g| r.trace(g).value).collect())
        };
        let plus = reflected(1.0)?;
        let minus = reflected(-1.0)?;
        let b = &snap.bundle;
        let r_now = reflected_stream(b, &gamma, &snap.biot);
        let dphi = tangential_kirchhoff(b);
        let n = b.body_count();
        let mut out = vec![[0.0; 3]; n];
        for (gi, g) in b.all_grids().enumerate() {
            let grad = r_now.trace(g).gradient;
            let dt_r: Vec<f64> = (0..g.len())
                .map(|s| {
                    let material = (plus[gi][s] - minus[gi][s]) / (2.0 * step);
                    if gi == 0 {
                        material
                    } else {
                        let lambda = gi - 1;
                        material - dot(rigid_velocity_at(g.center, state.velocities[lambda], g.z[s]), grad[s])
                    }
                })
                .collect();
            for k in 0..n {
                for j in 0..3 {
                    out[k][j] += g.integrate(|s| dt_r[s] * dphi[k][j][gi][s]);
                }
            }
        }
        Ok(out)
    }

    /// Time derivative of the state.
    pub fn rhs(&self, state: &FullState) -> Result<FullDerivative> {
        let snap = self.snapshot(state)?;
        self.rhs_with(state, &snap)
    }

    pub fn rhs_with(&self, state: &FullState, snap: &Snapshot) -> Result<FullDerivative> {
        let dblobs = snap.carrier_velocities();
        let dp = if self.options.pinned_bodies {
            vec![[0.0; 3]; state.velocities.len()]
        } else {
            self.force_terms_with(state, snap)?.acceleration
        };
        Ok(FullDerivative { dq: state.velocities.clone(), dp, dblobs })
    }

    /// Energy of a state.
    pub fn energy(&self, state: &FullState) -> Result<f64> {
        let snap = self.snapshot(state)?;
        Ok(self.energy_with(state, &snap))
    }

    pub fn energy_with(&self, state: &FullState, snap: &Snapshot) -> f64 {
        system_energy(&self.genuine_masses(), &snap.bundle, &snap.biot, &state.velocities, &self.gammas())
    }

    /// Circulation `∮ u·τ ds` around every body.
    pub fn circulations_with(&self, snap: &Snapshot) -> Vec<f64> {
        circulations(&snap.bundle, &snap.flow)
    }

    /// One classical Runge–Kutta step.
    pub fn step_rk4(&self, state: &FullState, dt: f64) -> Result<FullState> {
        let k1 = self.rhs(state)?;
        rk4_step(state, dt, k1, &|s: &FullState| self.rhs(s))
    }

    /// Integrate to `t_end` with fixed steps, calling `observer` on every step
    /// (including the initial state).  A breach ends the run early and is
    /// recorded in the trajectory.
    pub fn run(&self, state: &FullState, dt: f64, t_end: f64, observer: &mut dyn FnMut(&FullState, &StepRecord)) -> Result<Trajectory<FullState>> {
        integrate_fixed(
            state,
            dt,
            t_end,
            &mut |s: &FullState| {
                let snap = self.snapshot(s)?;
                let record = StepRecord {
                    t: s.t,
                    energy: self.energy_with(s, &snap),
                    circulations: self.circulations_with(&snap),
                    margin: snap.margin.margin,
                };
                Ok((self.rhs_with(s, &snap)?, record))
            },
            &|s: &FullState| self.rhs(s),
            observer,
        )
    }
}

/// Per-step diagnostics handed to observers.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub energy: f64,
    pub circulations: Vec<f64>,
    pub margin: f64,
}

/// Outcome of a run.
#[derive(Clone, Debug)]
pub struct Trajectory<S> {
    pub final_state: S,
    /// Set when the run stopped at an admissibility breach.
    pub breach: Option<Error>,
}

/// Number of fixed steps from `t0` to `t_end`.
pub fn step_count(t0: f64, t_end: f64, dt: f64) -> usize {
    ((t_end - t0) / dt - 1e-9).ceil().max(0.0) as usize
}

/// State of a fixed-step explicit integration.
pub trait Integrable: Clone {
    type Deriv;
    fn time(&self) -> f64;
    fn set_time(&mut self, t: f64);
    /// `self + h · d`.
    fn advance(&self, d: &Self::Deriv, h: f64) -> Self;
    /// `(k₁ + 2k₂ + 2k₃ + k₄) / 6`.
    fn rk4_blend(k: [&Self::Deriv; 4]) -> Self::Deriv;
}

fn blend3(k: [&[f64; 3]; 4]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        *o = (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]) / 6.0;
    }
    out
}

pub(crate) fn blend_vec3(k: [&Vec<[f64; 3]>; 4]) -> Vec<[f64; 3]> {
    (0..k[0].len()).map(|i| blend3([&k[0][i], &k[1][i], &k[2][i], &k[3][i]])).collect()
}

pub(crate) fn blend_c(k: [&Vec<C64>; 4]) -> Vec<C64> {
    (0..k[0].len()).map(|i| (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]) / 6.0).collect()
}

pub(crate) fn advance_poses(poses: &[Pose], dq: &[[f64; 3]], h: f64) -> Vec<Pose> {
    poses.iter().zip(dq).map(|(q, d)| Pose { h: q.h + h * C64::new(d[0], d[1]), theta: q.theta + h * d[2] }).collect()
}

pub(crate) fn advance_vec3(p: &[[f64; 3]], dp: &[[f64; 3]], h: f64) -> Vec<[f64; 3]> {
    p.iter().zip(dp).map(|(p, d)| [p[0] + h * d[0], p[1] + h * d[1], p[2] + h * d[2]]).collect()
}

pub(crate) fn advance_blobs(blobs: &[VortexElement], d: &[C64], h: f64) -> Vec<VortexElement> {
    blobs.iter().zip(d).map(|(b, d)| VortexElement { position: b.position + h * d, ..*b }).collect()
}

impl Integrable for FullState {
    type Deriv = FullDerivative;

    fn time(&self) -> f64 {
        self.t
    }

    fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    fn advance(&self, k: &FullDerivative, h: f64) -> Self {
        FullState {
            t: self.t + h,
            poses: advance_poses(&self.poses, &k.dq, h),
            velocities: advance_vec3(&self.velocities, &k.dp, h),
            blobs: advance_blobs(&self.blobs, &k.dblobs, h),
        }
    }

    fn rk4_blend(k: [&FullDerivative; 4]) -> FullDerivative {
        FullDerivative {
            dq: blend_vec3([&k[0].dq, &k[1].dq, &k[2].dq, &k[3].dq]),
            dp: blend_vec3([&k[0].dp, &k[1].dp, &k[2].dp, &k[3].dp]),
            dblobs: blend_c([&k[0].dblobs, &k[1].dblobs, &k[2].dblobs, &k[3].dblobs]),
        }
    }
}

/// One classical RK4 step given the first stage.
pub fn rk4_step<S: Integrable>(state: &S, dt: f64, k1: S::Deriv, rhs: &dyn Fn(&S) -> Result<S::Deriv>) -> Result<S> {
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let k2 = rhs(&state.advance(&k1, 0.5 * dt))?;
    let k3 = rhs(&state.advance(&k2, 0.5 * dt))?;
    let k4 = rhs(&state.advance(&k3, dt))?;
    Ok(state.advance(&S::rk4_blend([&k1, &k2, &k3, &k4]), dt))
}

/// Fixed-step RK4 from `state.time()` to `t_end`.  `first` evaluates the
/// first stage together with the step record handed to `observer`; `rhs`
/// evaluates the remaining stages.  Times are set to `t₀ + k·dt` exactly.
pub fn integrate_fixed<S: Integrable>(
    state: &S,
    dt: f64,
    t_end: f64,
    first: &mut dyn FnMut(&S) -> Result<(S::Deriv, StepRecord)>,
    rhs: &dyn Fn(&S) -> Result<S::Deriv>,
    observer: &mut dyn FnMut(&S, &StepRecord),
) -> Result<Trajectory<S>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let t0 = state.time();
    let steps = step_count(t0, t_end, dt);
    let mut cur = state.clone();
    let mut stop = None;
    for k in 0..=steps {
        let (k1, record) = match first(&cur) {
            Ok(v) => v,
            Err(e @ Error::Breach { .. }) => {
                stop = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        observer(&cur, &record);
        if k == steps {
            break;
        }
        match rk4_step(&cur, dt, k1, rhs) {
            Ok(mut next) => {
                next.set_time(t0 + (k + 1) as f64 * dt);
                cur = next;
            }
            Err(e @ Error::Breach { .. }) => {
                stop = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory { final_state: cur, breach: stop })
}

/// `ℳ_g + ℳ_a` with `ℳ_g = diag(m, m, J)` per body.
pub fn total_mass_matrix(genuine: &[(f64, f64)], bundle: &PotentialBundle) -> DMatrix<f64> {
    let mut m = bundle.added_mass();
    add_genuine(&mut m, genuine);
    m
}

fn add_genuine(m: &mut DMatrix<f64>, genuine: &[(f64, f64)]) {
    for (k, &(mass, inertia)) in genuine.iter().enumerate() {
        m[(3 * k, 3 * k)] += mass;
        m[(3 * k + 1, 3 * k + 1)] += mass;
        m[(3 * k + 2, 3 * k + 2)] += inertia;
    }
}

/// Solve `ℳ p′ = T` for the accelerations.
pub fn solve_acceleration(m: &DMatrix<f64>, total: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let n = total.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let rhs = DVector::from_iterator(3 * n, total.iter().flat_map(|t| t.iter().cloned()));
    let chol = m.clone().cholesky().ok_or_else(|| Error::SolverFailure {
        message: "mass matrix is not symmetric positive definite".into(),
        condition: f64::INFINITY,
    })?;
    let x = chol.solve(&rhs);
    Ok((0..n).map(|k| [x[3 * k], x[3 * k + 1], x[3 * k + 2]]).collect())
}

/// `∂_τ φ_{κ,j}` on every grid (outer first), indexed `[κ][j][grid][node]`.
pub fn tangential_kirchhoff(b: &PotentialBundle) -> Vec<Vec<Vec<Vec<f64>>>> {
    let grids: Vec<&BoundaryGrid> = b.all_grids().collect();
    b.kirchhoff
        .iter()
        .map(|row| {
            row.iter()
                .take(3)
                .map(|f| {
                    grids
                        .iter()
                        .map(|g| {
                            let tr = f.trace(g);
                            (0..g.len()).map(|s| dot(tr.gradient[s], g.tangent[s])).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Stream of the part of the velocity that is neither potential nor a
/// standalone circulation field: `Σ γ ψ^r_ν + Ψ_ω`.
pub fn reflected_stream(b: &PotentialBundle, gamma: &[f64], bs: &BiotSavart) -> crate::laplace::HarmonicField {
    let mut r = bs.stream.clone();
    for (nu, &g) in gamma.iter().enumerate() {
        r.add_scaled(&b.psi[nu], g);
        r.add_scaled(&b.psi_hat[nu], -g);
    }
    r
}

fn sum_terms(fb: &ForceBreakdown) -> Vec<[f64; 3]> {
    (0..fb.t1.len())
        .map(|k| {
            let mut t = [0.0; 3];
            for j in 0..3 {
                t[j] = fb.t1[k][j] + fb.t2[k][j] + fb.t3[k][j] + fb.t4[k][j] + fb.t5[k][j] + fb.t6[k][j] + fb.t7[k][j];
            }
            t
        })
        .collect()
}

/// Force terms for a snapshot with body velocities `p`, circulations `γ` and
/// vorticity carriers; shared by the full and the limit system.
pub fn force_terms_core(
    snap: &Snapshot,
    p: &[[f64; 3]],
    gamma: &[f64],
    carriers: &[Carrier],
    genuine: &[(f64, f64)],
) -> Result<ForceBreakdown> {
    let b = &snap.bundle;
    let n = b.body_count();
    let grids: Vec<&BoundaryGrid> = b.all_grids().collect();
    let centers: Vec<C64> = b.grids.iter().map(|g| g.center).collect();
    let vs = |nu: usize, x: C64| rigid_velocity_at(centers[nu], p[nu], x);

    let dphi = tangential_kirchhoff(b);
    let stream_traces: Vec<FieldTrace> = grids.iter().map(|g| snap.flow.stream.trace(g)).collect();
    let hat_traces: Vec<Vec<FieldTrace>> = b.psi_hat.iter().map(|f| grids.iter().map(|g| f.trace(g)).collect()).collect();
    let pot_traces: Vec<FieldTrace> = b.grids.iter().map(|g| snap.flow.potential.trace(g)).collect();
    let kmodes: Vec<Vec<Vec<f64>>> = b.grids.iter().map(|g| (1..=3).map(|j| normal_mode(g, j)).collect()).collect();

    let zero = vec![[0.0; 3]; n];
    let (mut t1, mut t2, mut t3, t4, mut t5, mut t6, mut t7) =
        (zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero.clone());
    let mut t4_residual = zero.clone();
    let mut t2_dual = zero.clone();

    // T1: Σ_μ ∮_{∂S_μ} G_μ ∂_τφ_{κ,j}
    for mu in 0..n {
        let g = &b.grids[mu];
        let hp = C64::new(p[mu][0], p[mu][1]);
        let gmu: Vec<f64> = (0..g.len())
            .map(|s| {
                let v = vs(mu, g.z[s]);
                (dot(pot_traces[mu].gradient[s], g.tangent[s]) - dot(v, g.tangent[s])) * dot(v, g.normal[s])
                    - p[mu][2] * dot(g.z[s] - g.center, hp)
            })
            .collect();
        for k in 0..n {
            for j in 0..3 {
                t1[k][j] += g.integrate(|s| gmu[s] * dphi[k][j][mu + 1][s]);
            }
        }
    }

    // T3 (boundary identity) and the dual route of T2, both on the whole fluid boundary.
    for (gi, g) in grids.iter().enumerate() {
        let transport: Vec<f64> = (0..g.len())
            .map(|s| (0..n).map(|nu| gamma[nu] * dot(vs(nu, g.z[s]), hat_traces[nu][gi].gradient[s])).sum())
            .collect();
        let d: Vec<f64> = (0..g.len())
            .map(|s| {
                if gi == 0 {
                    transport[s]
                } else {
                    transport[s] - dot(vs(gi - 1, g.z[s]), stream_traces[gi].gradient[s])
                }
            })
            .collect();
        for k in 0..n {
            for j in 0..3 {
                t3[k][j] += g.integrate(|s| d[s] * dphi[k][j][gi][s]);
                t2_dual[k][j] -= g.integrate(|s| transport[s] * dphi[k][j][gi][s]);
            }
        }
    }

    for k in 0..n {
        let g = &b.grids[k];
        let gi = k + 1;
        let hat_perp: Vec<C64> = hat_traces[k][gi].gradient.iter().map(|&v| perp(v)).collect();
        let w: Vec<C64> = (0..g.len())
            .map(|s| pot_traces[k].gradient[s] + perp(stream_traces[gi].gradient[s]) - gamma[k] * hat_perp[s])
            .collect();
        let transport: Vec<f64> = (0..g.len())
            .map(|s| (0..n).map(|nu| gamma[nu] * dot(vs(nu, g.z[s]), perp(hat_traces[nu][gi].gradient[s]))).sum())
            .collect();
        for j in 0..3 {
            let kk = &kmodes[k][j];
            t2[k][j] = g.integrate(|s| transport[s] * kk[s]);
            t4_residual[k][j] = -0.5 * gamma[k] * gamma[k] * g.integrate(|s| hat_perp[s].norm_sqr() * kk[s]);
            t5[k][j] = -0.5 * g.integrate(|s| w[s].norm_sqr() * kk[s]);
            t6[k][j] = -gamma[k] * g.integrate(|s| dot(w[s], hat_perp[s]) * kk[s]);
        }
    }

    // T7: −Σ Γ_i v_i^⊥ · ∇φ_{κ,j}(x_i)
    for c in carriers {
        for k in 0..n {
            for j in 0..3 {
                t7[k][j] -= c.strength * dot(perp(c.velocity), b.kirchhoff[k][j].gradient(c.position));
            }
        }
    }

    let mut mass_matrix = b.added_mass();
    add_genuine(&mut mass_matrix, genuine);
    let mut fb = ForceBreakdown {
        t1,
        t2,
        t3,
        t4,
        t5,
        t6,
        t7,
        t4_residual,
        t2_dual,
        total: Vec::new(),
        mass_matrix,
        acceleration: Vec::new(),
    };
    fb.total = sum_terms(&fb);
    fb.acceleration = solve_acceleration(&fb.mass_matrix, &fb.total)?;
    Ok(fb)
}

/// Circulation around every body from the velocity trace.
pub fn circulations(b: &PotentialBundle, flow: &FlowField) -> Vec<f64> {
    b.grids
        .iter()
        .map(|g| {
            let u = flow.trace(g);
            g.integrate(|s| dot(u[s], g.tangent[s]))
        })
        .collect()
}

/// Energy `½ p·(ℳ_g + ℳ_a) p + ½(−Σ C_k γ_k − Σ Γ_i Ψ^{ren}(x_i))`, where the
/// renormalized stream omits each carrier's own free-space term.
pub fn system_energy(genuine: &[(f64, f64)], b: &PotentialBundle, bs: &BiotSavart, p: &[[f64; 3]], gamma: &[f64]) -> f64 {
    let n = b.body_count();
    let m = total_mass_matrix(genuine, b);
    let pv = DVector::from_iterator(3 * n, p.iter().flat_map(|x| x.iter().cloned()));
    let kinetic = 0.5 * pv.dot(&(&m * &pv));
    let mut circ = 0.0;
    for k in 0..n {
        let mut c = bs.body_constants[k];
        for nu in 0..n {
            c += gamma[nu] * b.psi_constants[nu][k];
        }
        circ -= c * gamma[k];
    }
    // collected before summing so the result does not depend on the thread count
    let vort: f64 = (0..bs.elements.len())
        .into_par_iter()
        .map(|i| {
            let x = bs.elements[i].position;
            let mut psi = bs.stream_without_self(i);
            for nu in 0..n {
                psi += gamma[nu] * b.psi[nu].value(x);
            }
            -bs.elements[i].strength * psi
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    kinetic + 0.5 * (circ + vort)
}
