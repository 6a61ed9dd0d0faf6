//! The limit system reached when the small bodies shrink to points: the
//! fixed-size bodies move in the final domain, family-(ii) bodies become
//! massive point vortices `m h″ = γ (h′ − u⋆_κ(h))^⊥` and family-(iii) bodies
//! become massless point vortices `h′ = u⋆_κ(h)`, all carried by the flow
//! `u⋆ = Σ p ∇φ̌ + Σ γ ∇^⊥ψ̌ + Ǩ[ω + Σ γ_κ δ_{h_κ}]`.
//!
//! `u⋆_κ` is `u⋆` with the vortex's own free-space field removed; the removal
//! is exact because the point-vortex kernel gradient is defined to vanish at
//! its own centre.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::dynamics::{
    advance_blobs, advance_poses, advance_vec3, blend_c, blend_vec3, build_snapshot, check_admissible, circulations,
    force_terms_core, integrate_fixed, rk4_step, system_energy, BodyParams, Carrier, DynamicsOptions, ForceBreakdown,
    Integrable, Snapshot, StepRecord, Trajectory,
};
use crate::error::{Error, Result};
use crate::geometry::{perp, Configuration, Family, Pose};
use crate::potentials::{FlowField, VortexElement};

/// A small body in the limit: a point vortex of circulation `strength`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointVortex {
    pub position: C64,
    pub strength: f64,
    /// `Family::II` (massive) or `Family::III` (massless).
    pub family: Family,
    /// Mass of a family-(ii) vortex (ignored for family (iii)).
    pub mass: f64,
    /// Velocity of a family-(ii) vortex (ignored for family (iii)).
    pub velocity: C64,
}

impl PointVortex {
    pub fn massless(position: C64, strength: f64) -> Self {
        PointVortex { position, strength, family: Family::III, mass: 0.0, velocity: C64::new(0.0, 0.0) }
    }

    pub fn massive(position: C64, strength: f64, mass: f64, velocity: C64) -> Self {
        PointVortex { position, strength, family: Family::II, mass, velocity }
    }
}

/// State of the limit system.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitState {
    pub t: f64,
    /// Poses and velocities of the fixed-size bodies.
    pub poses: Vec<Pose>,
    pub velocities: Vec<[f64; 3]>,
    pub vortices: Vec<PointVortex>,
    pub blobs: Vec<VortexElement>,
}

/// Time derivative of a [`LimitState`].
#[derive(Clone, Debug, PartialEq)]
pub struct LimitDerivative {
    pub dq: Vec<[f64; 3]>,
    pub dp: Vec<[f64; 3]>,
    /// `h′` per vortex.
    pub dh: Vec<C64>,
    /// `h″` per vortex (zero for family (iii)).
    pub dv: Vec<C64>,
    pub dblobs: Vec<C64>,
}

/// Static description of the limit system.
#[derive(Clone, Debug)]
pub struct LimitSystem {
    /// Final domain: the outer boundary and family-(i) bodies only.
    pub config: Configuration,
    pub bodies: Vec<BodyParams>,
    pub options: DynamicsOptions,
}

impl LimitSystem {
    pub fn new(config: Configuration, bodies: Vec<BodyParams>, options: DynamicsOptions) -> Result<Self> {
        if config.bodies.iter().any(|b| b.family != Family::I) {
            return Err(Error::invalid("the final domain holds fixed-size bodies only"));
        }
        if config.bodies.len() != bodies.len() {
            return Err(Error::invalid("one parameter set per body is required"));
        }
        Ok(LimitSystem { config, bodies, options })
    }

    /// Reject states the limit equations do not define.
    pub fn validate_state(&self, state: &LimitState) -> Result<()> {
        if state.poses.len() != self.bodies.len() || state.velocities.len() != self.bodies.len() {
            return Err(Error::invalid("state and system disagree on the number of bodies"));
        }
        for (i, v) in state.vortices.iter().enumerate() {
            match v.family {
                Family::III if v.strength == 0.0 => {
                    return Err(Error::validation(
                        format!("vortices[{i}].strength"),
                        "a massless point vortex needs a nonzero circulation",
                    ))
                }
                Family::II if !(v.mass > 0.0) => {
                    return Err(Error::validation(format!("vortices[{i}].mass"), "a massive point vortex needs a positive mass"))
                }
                Family::I => return Err(Error::validation(format!("vortices[{i}].family"), "point vortices are family ii or iii")),
                _ => {}
            }
        }
        Ok(())
    }

    fn gammas(&self) -> Vec<f64> {
        self.bodies.iter().map(|b| b.gamma).collect()
    }

    fn genuine(&self) -> Vec<(f64, f64)> {
        self.bodies.iter().map(|b| (b.mass, b.inertia)).collect()
    }

    /// Blobs followed by the point vortices (as zero-core elements).
    fn elements(state: &LimitState) -> Vec<VortexElement> {
        state.blobs.iter().cloned().chain(state.vortices.iter().map(|v| VortexElement::point(v.position, v.strength))).collect()
    }

    pub fn snapshot(&self, state: &LimitState) -> Result<Snapshot> {
        self.validate_state(state)?;
        let cfg = self.config.with_poses(&state.poses);
        let elements = Self::elements(state);
        let mut margin = check_admissible(&cfg, &elements, state.t, false)?;
        // point vortices must stay apart from each other
        let mut pp = f64::INFINITY;
        for (a, va) in state.vortices.iter().enumerate() {
            for vb in &state.vortices[a + 1..] {
                pp = pp.min((va.position - vb.position).norm());
            }
        }
        if pp.is_finite() {
            margin.point_point = pp;
            margin.min_distance = margin.min_distance.min(pp);
            margin.margin = margin.min_distance - 2.0 * cfg.delta;
            if margin.margin <= 0.0 {
                return Err(Error::Breach { time: state.t, margin: margin.margin, detail: format!("point vortices {pp:.3e} apart") });
            }
        }
        build_snapshot(cfg, self.options.bundle, &state.velocities, &self.gammas(), &elements, margin)
    }

    /// `u⋆` as a velocity evaluator.
    pub fn ustar(&self, state: &LimitState) -> Result<FlowField> {
        Ok(self.snapshot(state)?.flow)
    }

    /// Desingularized velocity `u⋆_κ(h_κ)` of vortex `k`.
    pub fn desingularized(&self, state: &LimitState, k: usize) -> Result<C64> {
        let snap = self.snapshot(state)?;
        desingularized_with(&snap, state, k)
    }

    /// Vortex derivatives `(h′, h″)`.
    pub fn vortex_rhs(&self, state: &LimitState) -> Result<(Vec<C64>, Vec<C64>)> {
        let snap = self.snapshot(state)?;
        Ok(vortex_rhs_with(&snap, state))
    }

    /// Forces on the fixed-size bodies; point vortices enter the vortical term
    /// with their actual velocities.
    pub fn big_body_forces(&self, state: &LimitState) -> Result<ForceBreakdown> {
        let snap = self.snapshot(state)?;
        self.big_body_forces_with(state, &snap)
    }

    pub fn big_body_forces_with(&self, state: &LimitState, snap: &Snapshot) -> Result<ForceBreakdown> {
        let uv = snap.carrier_velocities();
        let (dh, _) = vortex_rhs_with(snap, state);
        let nb = state.blobs.len();
        let mut carriers: Vec<Carrier> =
            state.blobs.iter().zip(&uv).map(|(b, &v)| Carrier { position: b.position, strength: b.strength, velocity: v }).collect();
        carriers.extend(state.vortices.iter().zip(&dh).map(|(v, &d)| Carrier { position: v.position, strength: v.strength, velocity: d }));
        debug_assert_eq!(carriers.len(), nb + state.vortices.len());
        let mut fb = force_terms_core(snap, &state.velocities, &self.gammas(), &carriers, &self.genuine())?;
        if self.options.pinned_bodies {
            fb.acceleration.iter_mut().for_each(|a| *a = [0.0; 3]);
        }
        Ok(fb)
    }

    pub fn rhs(&self, state: &LimitState) -> Result<LimitDerivative> {
        let snap = self.snapshot(state)?;
        self.rhs_with(state, &snap)
    }

    pub fn rhs_with(&self, state: &LimitState, snap: &Snapshot) -> Result<LimitDerivative> {
        let (dh, dv) = vortex_rhs_with(snap, state);
        let dp = if self.bodies.is_empty() {
            Vec::new()
        } else {
            self.big_body_forces_with(state, snap)?.acceleration
        };
        let nb = state.blobs.len();
        let dblobs = snap.carrier_velocities()[..nb].to_vec();
        Ok(LimitDerivative { dq: state.velocities.clone(), dp, dh, dv, dblobs })
    }

    /// Energy: bodies and massive vortices' kinetic energy plus the
    /// renormalized fluid energy.
    pub fn energy_with(&self, state: &LimitState, snap: &Snapshot) -> f64 {
        let massive: f64 = state.vortices.iter().filter(|v| v.family == Family::II).map(|v| 0.5 * v.mass * v.velocity.norm_sqr()).sum();
        system_energy(&self.genuine(), &snap.bundle, &snap.biot, &state.velocities, &self.gammas()) + massive
    }

    pub fn step_rk4(&self, state: &LimitState, dt: f64) -> Result<LimitState> {
        let k1 = self.rhs(state)?;
        rk4_step(state, dt, k1, &|s: &LimitState| self.rhs(s))
    }

    pub fn run(&self, state: &LimitState, dt: f64, t_end: f64, observer: &mut dyn FnMut(&LimitState, &StepRecord)) -> Result<Trajectory<LimitState>> {
        integrate_fixed(
            state,
            dt,
            t_end,
            &mut |s: &LimitState| {
                let snap = self.snapshot(s)?;
                let record = StepRecord {
                    t: s.t,
                    energy: self.energy_with(s, &snap),
                    circulations: circulations(&snap.bundle, &snap.flow),
                    margin: snap.margin.margin,
                };
                Ok((self.rhs_with(s, &snap)?, record))
            },
            &|s: &LimitState| self.rhs(s),
            observer,
        )
    }
}

fn desingularized_with(snap: &Snapshot, state: &LimitState, k: usize) -> Result<C64> {
    let v = state.vortices.get(k).ok_or_else(|| Error::invalid(format!("vortex index {k} out of range")))?;
    Ok(snap.flow.velocity(v.position))
}

fn vortex_rhs_with(snap: &Snapshot, state: &LimitState) -> (Vec<C64>, Vec<C64>) {
    state
        .vortices
        .par_iter()
        .map(|v| {
            let u = snap.flow.velocity(v.position);
            match v.family {
                Family::II => (v.velocity, v.strength / v.mass * perp(v.velocity - u)),
                _ => (u, C64::new(0.0, 0.0)),
            }
        })
        .unzip()
}

impl Integrable for LimitState {
    type Deriv = LimitDerivative;

    fn time(&self) -> f64 {
        self.t
    }

    fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    fn advance(&self, k: &LimitDerivative, h: f64) -> Self {
        LimitState {
            t: self.t + h,
            poses: advance_poses(&self.poses, &k.dq, h),
            velocities: advance_vec3(&self.velocities, &k.dp, h),
            vortices: self
                .vortices
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut w = *v;
                    w.position += h * k.dh[i];
                    if v.family == Family::II {
                        w.velocity += h * k.dv[i];
                    }
                    w
                })
                .collect(),
            blobs: advance_blobs(&self.blobs, &k.dblobs, h),
        }
    }

    fn rk4_blend(k: [&LimitDerivative; 4]) -> LimitDerivative {
        LimitDerivative {
            dq: blend_vec3([&k[0].dq, &k[1].dq, &k[2].dq, &k[3].dq]),
            dp: blend_vec3([&k[0].dp, &k[1].dp, &k[2].dp, &k[3].dp]),
            dh: blend_c([&k[0].dh, &k[1].dh, &k[2].dh, &k[3].dh]),
            dv: blend_c([&k[0].dv, &k[1].dv, &k[2].dv, &k[3].dv]),
            dblobs: blend_c([&k[0].dblobs, &k[1].dblobs, &k[2].dblobs, &k[3].dblobs]),
        }
    }
}

/// Final-domain system of a full configuration: family-(i) bodies only.
pub fn final_system(config: &Configuration, bodies: &[BodyParams], options: DynamicsOptions) -> Result<LimitSystem> {
    let mut cfg = config.clone();
    let mut params = Vec::new();
    cfg.bodies.clear();
    for (b, p) in config.bodies.iter().zip(bodies) {
        if b.family == Family::I {
            cfg.bodies.push(b.clone());
            params.push(*p);
        }
    }
    LimitSystem::new(cfg, params, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OuterDomain;
    use std::f64::consts::PI;

    fn unit_disc() -> LimitSystem {
        let cfg = Configuration { outer: OuterDomain::disc(1.0, C64::new(0.0, 0.0), 128).unwrap(), bodies: vec![], delta: 0.05 };
        LimitSystem::new(cfg, vec![], DynamicsOptions::default()).unwrap()
    }

    #[test]
    fn lone_vortex_speed_matches_image() {
        let sys = unit_disc();
        let st = LimitState { t: 0.0, poses: vec![], velocities: vec![], vortices: vec![PointVortex::massless(C64::new(0.5, 0.0), 1.0)], blobs: vec![] };
        let u = sys.desingularized(&st, 0).unwrap();
        assert!((u - C64::new(0.0, 1.0 / (3.0 * PI))).norm() < 1e-12);
        let centred = LimitState { vortices: vec![PointVortex::massless(C64::new(0.0, 0.0), 1.0)], ..st };
        assert!(sys.desingularized(&centred, 0).unwrap().norm() < 1e-14);
    }

    #[test]
    fn synchronized_massive_vortex_has_no_force() {
        let sys = unit_disc();
        let u = C64::new(0.0, 1.0 / (3.0 * PI));
        let st = LimitState {
            t: 0.0,
            poses: vec![],
            velocities: vec![],
            vortices: vec![PointVortex::massive(C64::new(0.5, 0.0), 1.0, 2.0, u)],
            blobs: vec![],
        };
        let (_, dv) = sys.vortex_rhs(&st).unwrap();
        assert!(dv[0].norm() < 1e-12);
    }

    #[test]
    fn zero_strength_massless_vortex_is_rejected() {
        let sys = unit_disc();
        let st = LimitState { t: 0.0, poses: vec![], velocities: vec![], vortices: vec![PointVortex::massless(C64::new(0.5, 0.0), 0.0)], blobs: vec![] };
        assert!(matches!(sys.rhs(&st), Err(Error::Validation { .. })));
    }
}
