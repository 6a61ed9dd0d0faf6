//! Scenario files: a versioned JSON description of the domain, the bodies, the
//! vorticity and the numerical parameters, validated into ready-to-run full
//! and limit systems.
//!
//! Initial data are fixed independently of the scale: shrinking a body in a
//! sweep changes its size (and, through its family, its mass) but never its
//! initial position or velocity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_admissible, scaled_inertia, BodyParams, DynamicsOptions, FullState, FullSystem};
use crate::error::{Error, Result};
use crate::geometry::{Body, BodyShape, Configuration, Family, OuterDomain, Pose, ShapeSpec};
use crate::limitsys::{LimitState, LimitSystem, PointVortex};
use crate::potentials::{BundleOptions, SolverChoice, VortexElement};
use crate::C64;

/// The only schema version understood by this build.
pub const SPEC_VERSION: u32 = 1;

/// Outer boundary of the fluid domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    Disc {
        radius: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// `z(t) = Σ c_k e^{ikt}` with coefficients `[k, re, im]`.
    FourierCurve { coefficients: Vec<(i32, f64, f64)> },
}

/// One rigid body with its initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub shape: ShapeSpec,
    #[serde(default = "one")]
    pub epsilon: f64,
    pub family: Family,
    /// Reference mass `m¹` (scaled by the family law).
    #[serde(default = "one")]
    pub mass: f64,
    /// Reference moment of inertia `J¹`.
    #[serde(default = "one")]
    pub inertia: f64,
    /// Mass exponent of family (iii): `m = ε^α m¹`, `J = ε^{α+2} J¹`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gamma: f64,
    pub position: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub angular_velocity: f64,
    /// Per-body panel count overriding `numerics.panels`.
    #[serde(default)]
    pub panels: Option<usize>,
}

/// A vortex blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub position: [f64; 2],
    pub strength: f64,
    /// Core radius overriding `numerics.blob_core`.
    #[serde(default)]
    pub core: Option<f64>,
}

/// Boundary-solver selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    #[default]
    Direct,
    Reflections,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Nodes per body boundary.
    #[serde(default = "default_panels")]
    pub panels: usize,
    /// Nodes on the outer boundary.
    #[serde(default = "default_outer_panels")]
    pub outer_panels: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Admissibility margin: every separation must stay above `2δ`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_blob_core")]
    pub blob_core: f64,
    #[serde(default = "default_tol")]
    pub reflection_tol: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub solver: SolverKind,
}

/// Output destinations (relative to the output directory) and sampling stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub jsonl: Option<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { stride: 1, csv: None, jsonl: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub spec_version: u32,
    pub domain: DomainSpec,
    #[serde(default)]
    pub bodies: Vec<BodySpec>,
    #[serde(default)]
    pub blobs: Vec<BlobSpec>,
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
}

fn one() -> f64 {
    1.0
}
fn default_panels() -> usize {
    64
}
fn default_outer_panels() -> usize {
    128
}
fn default_delta() -> f64 {
    0.02
}
fn default_blob_core() -> f64 {
    0.05
}
fn default_tol() -> f64 {
    1e-10
}
fn default_sweeps() -> usize {
    100
}
fn default_stride() -> usize {
    1
}

/// Default mass exponent of family (iii).
pub const DEFAULT_ALPHA: f64 = 2.0;

fn c(v: [f64; 2]) -> C64 {
    C64::new(v[0], v[1])
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_scenario(&text)
}

/// Parse and validate scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    scenario.validate()?;
    Ok(scenario)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(path, format!("must be positive and finite, got {v}")))
    }
}

fn finite(path: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation(path, "must be finite"))
    }
}

impl Scenario {
    /// Field-by-field validation followed by an admissibility check of the
    /// initial configuration.
    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(Error::validation("spec_version", format!("unsupported version {} (expected {SPEC_VERSION})", self.spec_version)));
        }
        let n = &self.numerics;
        if n.panels < 8 {
            return Err(Error::validation("numerics.panels", "at least 8 nodes per boundary are required"));
        }
        if n.outer_panels < 8 {
            return Err(Error::validation("numerics.outer_panels", "at least 8 nodes per boundary are required"));
        }
        positive("numerics.dt", n.dt)?;
        if !(n.t_end >= 0.0 && n.t_end.is_finite()) {
            return Err(Error::validation("numerics.t_end", "final time must be non-negative and finite"));
        }
        positive("numerics.delta", n.delta)?;
        positive("numerics.blob_core", n.blob_core)?;
        positive("numerics.reflection_tol", n.reflection_tol)?;
        if n.max_sweeps == 0 {
            return Err(Error::validation("numerics.max_sweeps", "must be at least 1"));
        }
        if self.outputs.stride == 0 {
            return Err(Error::validation("outputs.stride", "must be at least 1"));
        }
        match &self.domain {
            DomainSpec::Disc { radius, center } => {
                positive("domain.radius", *radius)?;
                finite("domain.center", center)?;
            }
            DomainSpec::FourierCurve { coefficients } => {
                if coefficients.iter().any(|(_, a, b)| !a.is_finite() || !b.is_finite()) {
                    return Err(Error::validation("domain.coefficients", "must be finite"));
                }
            }
        }
        for (k, b) in self.bodies.iter().enumerate() {
            let path = |f: &str| format!("bodies[{k}].{f}");
            if !(b.epsilon > 0.0 && b.epsilon <= 1.0) {
                return Err(Error::validation(path("epsilon"), format!("scale must lie in (0, 1], got {}", b.epsilon)));
            }
            if b.family == Family::I && b.epsilon != 1.0 {
                return Err(Error::validation(path("epsilon"), "family (i) bodies keep unit scale"));
            }
            positive(&path("mass"), b.mass)?;
            positive(&path("inertia"), b.inertia)?;
            match (b.family, b.alpha) {
                (Family::III, Some(a)) => positive(&path("alpha"), a)?,
                (Family::III, None) => {}
                (_, Some(_)) => return Err(Error::validation(path("alpha"), "the mass exponent applies to family (iii) only")),
                _ => {}
            }
            if !b.gamma.is_finite() {
                return Err(Error::validation(path("gamma"), "must be finite"));
            }
            if b.family == Family::III && b.gamma == 0.0 {
                return Err(Error::validation(
                    path("gamma"),
                    "family (iii) bodies require a nonzero circulation (standing assumption of the limit theory)",
                ));
            }
            finite(&path("position"), &b.position)?;
            finite(&path("velocity"), &b.velocity)?;
            finite(&path("angle"), &[b.angle, b.angular_velocity])?;
            if let Some(p) = b.panels {
                if p < 8 {
                    return Err(Error::validation(path("panels"), "at least 8 nodes per boundary are required"));
                }
            }
            let shape = BodyShape::from_spec(&b.shape, b.panels.unwrap_or(n.panels))
                .map_err(|e| Error::validation(path("shape"), e.to_string()))?;
            if b.family == Family::III && shape.is_disc() {
                return Err(Error::validation(
                    path("shape"),
                    "family (iii) bodies must not be discs: the added inertia degenerates",
                ));
            }
        }
        for (i, b) in self.blobs.iter().enumerate() {
            finite(&format!("blobs[{i}].position"), &b.position)?;
            finite(&format!("blobs[{i}].strength"), &[b.strength])?;
            if let Some(core) = b.core {
                positive(&format!("blobs[{i}].core"), core)?;
            }
        }
        let cfg = self.configuration(None)?;
        for (k, b) in cfg.bodies.iter().enumerate() {
            if !cfg.outer.contains(b.pose.h) {
                return Err(Error::validation(format!("bodies[{k}].position"), "body centre lies outside the domain"));
            }
        }
        for (i, b) in self.blobs.iter().enumerate() {
            if !cfg.outer.contains(c(b.position)) {
                return Err(Error::validation(format!("blobs[{i}].position"), "blob lies outside the domain"));
            }
        }
        check_admissible(&cfg, &self.blob_elements(), 0.0, false).map_err(|e| match e {
            Error::Breach { margin, detail, .. } => {
                Error::validation("bodies", format!("initial configuration is not admissible (margin {margin:.3e}): {detail}"))
            }
            other => other,
        })?;
        Ok(())
    }

    /// Replace the boundary-solver choice (command-line overrides).
    pub fn with_solver(mut self, solver: SolverKind, tol: Option<f64>) -> Self {
        self.numerics.solver = solver;
        if let Some(t) = tol {
            self.numerics.reflection_tol = t;
        }
        self
    }

    pub fn outer_domain(&self) -> Result<OuterDomain> {
        let m = self.numerics.outer_panels;
        match &self.domain {
            DomainSpec::Disc { radius, center } => OuterDomain::disc(*radius, c(*center), m),
            DomainSpec::FourierCurve { coefficients } => {
                let spec = ShapeSpec::FourierCurve { coefficients: coefficients.clone() };
                let shape = BodyShape::from_spec(&spec, m).map_err(|e| Error::validation("domain", e.to_string()))?;
                // shapes are recentred on their area centroid; place the curve where it was written
                let written: C64 = coefficients.iter().filter(|(k, _, _)| *k == 0).map(|&(_, a, b)| C64::new(a, b)).sum();
                let gained: C64 = shape.coefficients().iter().filter(|(k, _)| *k == 0).map(|(_, v)| *v).sum();
                Ok(OuterDomain { shape, pose: Pose { h: written - gained, theta: 0.0 } })
            }
        }
    }

    /// Configuration with small bodies (families ii and iii) at scale `eps`
    /// when given, otherwise at their scenario scale.
    pub fn configuration(&self, eps: Option<f64>) -> Result<Configuration> {
        let outer = self.outer_domain()?;
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for (k, b) in self.bodies.iter().enumerate() {
            let shape = BodyShape::from_spec(&b.shape, b.panels.unwrap_or(self.numerics.panels))
                .map_err(|e| Error::validation(format!("bodies[{k}].shape"), e.to_string()))?;
            let epsilon = match (b.family, eps) {
                (Family::I, _) => 1.0,
                (_, Some(e)) => e,
                (_, None) => b.epsilon,
            };
            bodies.push(Body { shape, epsilon, pose: Pose { h: c(b.position), theta: b.angle }, family: b.family });
        }
        let cfg = Configuration { outer, bodies, delta: self.numerics.delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dynamics_options(&self) -> DynamicsOptions {
        let solver = match self.numerics.solver {
            SolverKind::Direct => SolverChoice::Direct,
            SolverKind::Reflections => {
                SolverChoice::Reflections { tol: self.numerics.reflection_tol, max_sweeps: self.numerics.max_sweeps }
            }
        };
        DynamicsOptions { bundle: BundleOptions { solver, ..Default::default() }, ..Default::default() }
    }

    pub fn blob_elements(&self) -> Vec<VortexElement> {
        self.blobs.iter().map(|b| VortexElement::blob(c(b.position), b.strength, b.core.unwrap_or(self.numerics.blob_core))).collect()
    }

    /// Full system with small bodies at scale `eps` (scenario scales when `None`).
    pub fn full_system(&self, eps: Option<f64>) -> Result<(FullSystem, FullState)> {
        let config = self.configuration(eps)?;
        let params = self
            .bodies
            .iter()
            .zip(&config.bodies)
            .map(|(spec, body)| {
                let alpha = spec.alpha.unwrap_or(DEFAULT_ALPHA);
                let (mass, inertia) = scaled_inertia(spec.family, body.epsilon, spec.mass, spec.inertia, alpha);
                BodyParams { mass, inertia, gamma: spec.gamma }
            })
            .collect();
        let state = FullState {
            t: 0.0,
            poses: config.poses(),
            velocities: self.bodies.iter().map(|b| [b.velocity[0], b.velocity[1], b.angular_velocity]).collect(),
            blobs: self.blob_elements(),
        };
        let system = FullSystem::new(config, params, self.dynamics_options())?;
        Ok((system, state))
    }

    /// Limit system: family (i) bodies stay, family (ii) bodies become massive
    /// point vortices and family (iii) bodies massless ones (in body order).
    pub fn limit_system(&self) -> Result<(LimitSystem, LimitState)> {
        let full = self.configuration(None)?;
        let mut cfg = full.clone();
        cfg.bodies.retain(|b| b.family == Family::I);
        let mut params = Vec::new();
        let mut poses = Vec::new();
        let mut velocities = Vec::new();
        let mut vortices = Vec::new();
        for b in &self.bodies {
            let h = c(b.position);
            match b.family {
                Family::I => {
                    params.push(BodyParams { mass: b.mass, inertia: b.inertia, gamma: b.gamma });
                    poses.push(Pose { h, theta: b.angle });
                    velocities.push([b.velocity[0], b.velocity[1], b.angular_velocity]);
                }
                Family::II => vortices.push(PointVortex::massive(h, b.gamma, b.mass, c(b.velocity))),
                Family::III => vortices.push(PointVortex::massless(h, b.gamma)),
            }
        }
        let system = LimitSystem::new(cfg, params, self.dynamics_options())?;
        let state = LimitState { t: 0.0, poses, velocities, vortices, blobs: self.blob_elements() };
        system.validate_state(&state)?;
        Ok((system, state))
    }

    /// Indices of the small bodies (families ii and iii) in body order; the
    /// `i`-th entry is the body that becomes limit vortex `i`.
    pub fn small_bodies(&self) -> Vec<usize> {
        (0..self.bodies.len()).filter(|&k| self.bodies[k].family != Family::I).collect()
    }

    /// Indices of the fixed-size bodies; the `i`-th entry is limit body `i`.
    pub fn big_bodies(&self) -> Vec<usize> {
        (0..self.bodies.len()).filter(|&k| self.bodies[k].family == Family::I).collect()
    }
}
