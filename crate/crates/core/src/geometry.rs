//! Body shapes, rigid placements, boundary discretizations and separation checks.
//!
//! Points and vectors of the plane are stored as complex numbers `x + i y`.
//! Every closed curve is parametrized uniformly by `t ∈ [0, 2π)` and sampled
//! at `t_m = 2π m / M`, which makes the trapezoid rule spectrally accurate.
//!
//! Normal convention: `n` points *out of the fluid*.  On a body this is into
//! the body, on the outer boundary it is the usual outward normal.  The unit
//! tangent is `τ = (n₂, −n₁)`, i.e. `τ = −i n`; it runs counter-clockwise on
//! bodies and clockwise on the outer boundary.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaginary unit.
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `v^⊥ = (−v₂, v₁)`.
#[inline]
pub fn perp(v: C64) -> C64 {
    I * v
}

/// Euclidean dot product of two plane vectors.
#[inline]
pub fn dot(a: C64, b: C64) -> f64 {
    a.re * b.re + a.im * b.im
}

/// Scaling family of a body.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Fixed-size body, fixed mass.
    #[serde(rename = "i")]
    I,
    /// Shrinking body with fixed mass.
    #[serde(rename = "ii")]
    II,
    /// Shrinking body whose mass vanishes with its size.
    #[serde(rename = "iii")]
    III,
}

/// Input description of a closed curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ellipse { a: f64, b: f64 },
    /// `z(t) = Σ c_k e^{ikt}`, coefficients given as `[k, re, im]`.
    FourierCurve { coefficients: Vec<(i32, f64, f64)> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    FourierCurve,
}

/// A smooth closed reference curve centred at the centroid of the area it encloses.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyShape {
    pub kind: ShapeKind,
    /// Non-zero Fourier coefficients `(k, c_k)` after recentring.
    coeffs: Vec<(i32, C64)>,
    /// Number of boundary nodes used when the shape is discretized.
    pub panels: usize,
}

impl BodyShape {
    /// Ellipse with semi-axes `a` (along x) and `b` (along y).
    pub fn ellipse(a: f64, b: f64, panels: usize) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!("ellipse semi-axes must be positive, got a={a}, b={b}")));
        }
        let coeffs = vec![(1, C64::new(0.5 * (a + b), 0.0)), (-1, C64::new(0.5 * (a - b), 0.0))];
        Self::build(ShapeKind::Ellipse, coeffs, panels)
    }

    /// Circle of radius `r`.
    pub fn circle(r: f64, panels: usize) -> Result<Self> {
        Self::ellipse(r, r, panels)
    }

    /// General trigonometric curve `z(t) = Σ c_k e^{ikt}`.  The constant
    /// coefficient is replaced so that the area centroid sits at the origin,
    /// and a clockwise curve is reparametrized to run counter-clockwise.
    pub fn fourier(coeffs: &[(i32, C64)], panels: usize) -> Result<Self> {
        Self::build(ShapeKind::FourierCurve, coeffs.to_vec(), panels)
    }

    pub fn from_spec(spec: &ShapeSpec, panels: usize) -> Result<Self> {
        match spec {
            ShapeSpec::Ellipse { a, b } => Self::ellipse(*a, *b, panels),
            ShapeSpec::FourierCurve { coefficients } => {
                let c: Vec<(i32, C64)> = coefficients.iter().map(|&(k, re, im)| (k, C64::new(re, im))).collect();
                Self::fourier(&c, panels)
            }
        }
    }

    fn build(kind: ShapeKind, mut coeffs: Vec<(i32, C64)>, panels: usize) -> Result<Self> {
        if panels < 8 {
            return Err(Error::invalid(format!("panel count must be at least 8, got {panels}")));
        }
        coeffs.retain(|&(k, c)| k != 0 && c.norm() > 0.0);
        if coeffs.is_empty() {
            return Err(Error::invalid("curve has no non-constant Fourier coefficient"));
        }
        if coeffs.iter().any(|(_, c)| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("non-finite Fourier coefficient"));
        }
        let mut shape = BodyShape { kind, coeffs, panels };
        if shape.area() < 0.0 {
            for c in shape.coeffs.iter_mut() {
                c.0 = -c.0;
            }
        }
        let centroid = shape.centroid();
        shape.coeffs.push((0, -centroid));
        shape.validate()?;
        Ok(shape)
    }

    /// Largest |k| present.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|(k, _)| k.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn coefficients(&self) -> &[(i32, C64)] {
        &self.coeffs
    }

    /// Position and first two parametric derivatives at parameter `t`.
    pub fn eval(&self, t: f64) -> (C64, C64, C64) {
        let mut z = C64::new(0.0, 0.0);
        let mut dz = z;
        let mut d2z = z;
        for &(k, c) in &self.coeffs {
            let e = c * C64::from_polar(1.0, k as f64 * t);
            let kk = k as f64;
            z += e;
            dz += I * kk * e;
            d2z -= kk * kk * e;
        }
        (z, dz, d2z)
    }

    /// Exact quadrature size for integrands that are trigonometric polynomials of the curve.
    fn exact_nodes(&self) -> usize {
        8 * self.degree() + 64
    }

    /// Signed enclosed area (positive for counter-clockwise orientation).
    pub fn area(&self) -> f64 {
        let m = self.exact_nodes();
        let h = 2.0 * PI / m as f64;
        (0..m)
            .map(|i| {
                let (z, dz, _) = self.eval(i as f64 * h);
                0.5 * (z.conj() * dz).im
            })
            .sum::<f64>()
            * h
    }

    /// Area centroid of the curve as currently stored.
    pub fn centroid(&self) -> C64 {
        let m = self.exact_nodes();
        let h = 2.0 * PI / m as f64;
        let (mut mx, mut my, mut a) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let (z, dz, _) = self.eval(i as f64 * h);
            mx += 0.5 * z.re * z.re * dz.im;
            my -= 0.5 * z.im * z.im * dz.re;
            a += 0.5 * (z.conj() * dz).im;
        }
        C64::new(mx / a, my / a)
    }

    /// Perimeter by high-resolution trapezoid quadrature.
    pub fn perimeter(&self) -> f64 {
        let m = 4 * self.exact_nodes();
        let h = 2.0 * PI / m as f64;
        (0..m).map(|i| self.eval(i as f64 * h).1.norm()).sum::<f64>() * h
    }

    /// True when the curve is a circle (a single non-constant coefficient).
    pub fn is_disc(&self) -> bool {
        self.coeffs.iter().filter(|(k, c)| *k != 0 && c.norm() > 1e-14 * self.scale()).count() == 1
    }

    fn scale(&self) -> f64 {
        self.coeffs.iter().filter(|(k, _)| *k != 0).map(|(_, c)| c.norm()).fold(0.0, f64::max)
    }

    /// Resolution checks: positive node spacing and tangent winding number one.
    fn validate(&self) -> Result<()> {
        let m = self.panels.max(4 * self.degree() + 16);
        let h = 2.0 * PI / m as f64;
        let samples: Vec<(C64, C64)> = (0..m)
            .map(|i| {
                let (z, dz, _) = self.eval(i as f64 * h);
                (z, dz)
            })
            .collect();
        let mut turning = 0.0;
        for i in 0..m {
            let (z0, d0) = samples[i];
            let (z1, d1) = samples[(i + 1) % m];
            if (z1 - z0).norm() <= 0.0 || d0.norm() <= 1e-12 * self.scale() {
                return Err(Error::invalid("curve has a degenerate (zero-speed) node"));
            }
            turning += (d1 / d0).arg();
        }
        let winding = turning / (2.0 * PI);
        if (winding - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("tangent winding number is {winding:.3}, expected 1 (curve is not simple)")));
        }
        Ok(())
    }
}

/// Rigid placement `x ↦ h + R(θ) x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub h: C64,
    pub theta: f64,
}

impl Pose {
    pub fn new(hx: f64, hy: f64, theta: f64) -> Self {
        Pose { h: C64::new(hx, hy), theta }
    }

    pub fn identity() -> Self {
        Pose::new(0.0, 0.0, 0.0)
    }

    pub fn rotation(&self) -> C64 {
        C64::from_polar(1.0, self.theta)
    }

    pub fn apply(&self, x: C64) -> C64 {
        self.h + self.rotation() * x
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { h: self.apply(other.h), theta: self.theta + other.theta }
    }
}

/// Which part of the fluid boundary a grid discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Outer,
    Body(usize),
}

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed)
}

/// Sampled boundary component of the fluid domain.
#[derive(Clone, Debug)]
pub struct BoundaryGrid {
    /// Unique identifier; solvers use it to recognise their own nodes.
    pub id: u64,
    pub component: Component,
    /// Nodes and parametric derivatives at `t_m = 2πm/M`.
    pub z: Vec<C64>,
    pub dz: Vec<C64>,
    pub d2z: Vec<C64>,
    /// Unit normal pointing out of the fluid.
    pub normal: Vec<C64>,
    /// Unit tangent `τ = −i n`.
    pub tangent: Vec<C64>,
    /// Trapezoid weights `|dz/dt| 2π/M` (arclength quadrature).
    pub weights: Vec<f64>,
    /// Placement centre (body position, or the outer domain's centre).
    pub center: C64,
}

impl BoundaryGrid {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// `∮ f ds` by the trapezoid rule.
    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(m, w)| w * f(m)).sum()
    }

    /// `∮ f ds` for a complex-valued integrand.
    pub fn integrate_c(&self, f: impl Fn(usize) -> C64) -> C64 {
        self.weights.iter().enumerate().map(|(m, w)| *w * f(m)).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Enclosed area.
    pub fn area(&self) -> f64 {
        let h = 2.0 * PI / self.len() as f64;
        (0..self.len()).map(|m| 0.5 * (self.z[m].conj() * self.dz[m]).im).sum::<f64>().abs() * h
    }

    /// Minimal distance between consecutive nodes.
    pub fn min_spacing(&self) -> f64 {
        let m = self.len();
        (0..m).map(|i| (self.z[(i + 1) % m] - self.z[i]).norm()).fold(f64::INFINITY, f64::min)
    }

    /// Same nodes with a new identity (used when a grid is re-derived).
    pub fn with_fresh_id(mut self) -> Self {
        self.id = fresh_id();
        self
    }
}

fn sample(shape: &BodyShape, scale: f64, pose: &Pose, component: Component, panels: usize) -> BoundaryGrid {
    let m = panels;
    let h = 2.0 * PI / m as f64;
    let rot = pose.rotation();
    let mut g = BoundaryGrid {
        id: fresh_id(),
        component,
        z: Vec::with_capacity(m),
        dz: Vec::with_capacity(m),
        d2z: Vec::with_capacity(m),
        normal: Vec::with_capacity(m),
        tangent: Vec::with_capacity(m),
        weights: Vec::with_capacity(m),
        center: pose.h,
    };
    for i in 0..m {
        let (z, dz, d2z) = shape.eval(i as f64 * h);
        let (z, dz, d2z) = (pose.h + rot * scale * z, rot * scale * dz, rot * scale * d2z);
        let unit = dz / dz.norm();
        // Counter-clockwise parametrization: I·unit points into the enclosed region.
        let n = match component {
            Component::Body(_) => I * unit,
            Component::Outer => -I * unit,
        };
        g.z.push(z);
        g.dz.push(dz);
        g.d2z.push(d2z);
        g.normal.push(n);
        g.tangent.push(-I * n);
        g.weights.push(dz.norm() * h);
    }
    g
}

/// Boundary grid of body `shape` scaled by `eps` and placed at `q`.
pub fn place_body(shape: &BodyShape, eps: f64, q: &Pose) -> Result<BoundaryGrid> {
    place_body_indexed(shape, eps, q, 0)
}

/// As [`place_body`], tagging the grid with body index `index`.
pub fn place_body_indexed(shape: &BodyShape, eps: f64, q: &Pose, index: usize) -> Result<BoundaryGrid> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("body scale must lie in (0, 1], got {eps}")));
    }
    if !(q.h.re.is_finite() && q.h.im.is_finite() && q.theta.is_finite()) {
        return Err(Error::invalid("non-finite pose"));
    }
    Ok(sample(shape, eps, q, Component::Body(index), shape.panels))
}

/// The fixed outer boundary `∂Ω`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterDomain {
    pub shape: BodyShape,
    pub pose: Pose,
}

impl OuterDomain {
    pub fn disc(radius: f64, center: C64, panels: usize) -> Result<Self> {
        Ok(OuterDomain { shape: BodyShape::circle(radius, panels)?, pose: Pose { h: center, theta: 0.0 } })
    }

    pub fn grid(&self) -> BoundaryGrid {
        sample(&self.shape, 1.0, &self.pose, Component::Outer, self.shape.panels)
    }

    /// Winding-number test for `x ∈ Ω`.
    pub fn contains(&self, x: C64) -> bool {
        winding_number(&self.grid().z, x).abs() > 0.5
    }
}

fn winding_number(nodes: &[C64], x: C64) -> f64 {
    let m = nodes.len();
    (0..m).map(|i| ((nodes[(i + 1) % m] - x) / (nodes[i] - x)).arg()).sum::<f64>() / (2.0 * PI)
}

/// A body placed in the fluid.
#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub shape: BodyShape,
    pub epsilon: f64,
    pub pose: Pose,
    pub family: Family,
}

impl Body {
    pub fn grid(&self, index: usize) -> Result<BoundaryGrid> {
        place_body_indexed(&self.shape, self.epsilon, &self.pose, index)
    }

    /// Position and parametric derivatives of the placed curve.
    fn eval(&self, t: f64) -> (C64, C64, C64) {
        let (z, dz, d2z) = self.shape.eval(t);
        let r = self.pose.rotation() * self.epsilon;
        (self.pose.h + r * z, r * dz, r * d2z)
    }
}

/// Outer domain plus an ordered list of bodies.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub outer: OuterDomain,
    pub bodies: Vec<Body>,
    /// Separation margin: admissible configurations keep every distance above `2δ`.
    pub delta: f64,
}

impl Configuration {
    pub fn outer_grid(&self) -> BoundaryGrid {
        self.outer.grid()
    }

    pub fn body_grids(&self) -> Result<Vec<BoundaryGrid>> {
        self.bodies.iter().enumerate().map(|(k, b)| b.grid(k)).collect()
    }

    /// Structural checks that do not depend on distances.
    pub fn validate(&self) -> Result<()> {
        for (k, b) in self.bodies.iter().enumerate() {
            if !(b.epsilon > 0.0 && b.epsilon <= 1.0) {
                return Err(Error::validation(format!("bodies[{k}].epsilon"), "scale must lie in (0, 1]"));
            }
            if b.family == Family::I && b.epsilon != 1.0 {
                return Err(Error::validation(format!("bodies[{k}].epsilon"), "family (i) bodies have unit scale"));
            }
        }
        Ok(())
    }

    /// Copy with new poses.
    pub fn with_poses(&self, poses: &[Pose]) -> Configuration {
        let mut c = self.clone();
        for (b, q) in c.bodies.iter_mut().zip(poses) {
            b.pose = *q;
        }
        c
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.bodies.iter().map(|b| b.pose).collect()
    }
}

/// `ξ_{κ,j}` sampled on a body grid together with `K_{κ,j} = n · ξ_{κ,j}`.
///
/// `ξ₁ = e₁`, `ξ₂ = e₂`, `ξ₃ = (x−h)^⊥`, `ξ₄ = (−(x−h)₁, (x−h)₂)`, `ξ₅ = ((x−h)₂, (x−h)₁)`.
pub fn xi_field(grid: &BoundaryGrid, j: usize) -> Result<(Vec<C64>, Vec<f64>)> {
    if !(1..=5).contains(&j) {
        return Err(Error::invalid(format!("rigid mode index must be in 1..=5, got {j}")));
    }
    let xi: Vec<C64> = grid.z.iter().map(|&x| xi_at(j, x - grid.center)).collect();
    let k = xi.iter().zip(&grid.normal).map(|(a, n)| dot(*a, *n)).collect();
    Ok((xi, k))
}

/// `ξ_j` at relative position `r = x − h` (j in 1..=5).
#[inline]
pub fn xi_at(j: usize, r: C64) -> C64 {
    match j {
        1 => C64::new(1.0, 0.0),
        2 => C64::new(0.0, 1.0),
        3 => perp(r),
        4 => C64::new(-r.re, r.im),
        5 => C64::new(r.im, r.re),
        _ => panic!("rigid mode index out of range: {j}"),
    }
}

/// Rigid velocity `h' + θ' (x − h)^⊥` at the given points; `p = (h'₁, h'₂, θ')`.
pub fn rigid_velocity(q: &Pose, p: [f64; 3], points: &[C64]) -> Vec<C64> {
    points.iter().map(|&x| rigid_velocity_at(q.h, p, x)).collect()
}

#[inline]
pub fn rigid_velocity_at(h: C64, p: [f64; 3], x: C64) -> C64 {
    C64::new(p[0], p[1]) + p[2] * perp(x - h)
}

/// Disc-shaped exclusion zone around a point-like vorticity carrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSupport {
    pub center: C64,
    pub radius: f64,
}

/// Separation report of a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginReport {
    /// Smallest body–body distance (`+∞` with fewer than two bodies).
    pub body_body: f64,
    /// Smallest body–outer-boundary distance.
    pub body_outer: f64,
    /// Smallest distance from vorticity support to bodies or the outer boundary (`+∞` if none).
    pub vorticity: f64,
    /// Smallest distance between distinct point-like carriers (`+∞` if fewer than two).
    pub point_point: f64,
    /// Minimum of the above.
    pub min_distance: f64,
    /// `min_distance − 2δ`.
    pub margin: f64,
    /// Every body lies inside Ω and outside the other bodies.
    pub nested_correctly: bool,
    pub admissible: bool,
}

/// Distances between bodies, the outer boundary and vorticity carriers.
///
/// Distances start from the closest node pair and are refined by Newton
/// iterations on the analytic curves.
pub fn admissibility(cfg: &Configuration, supports: &[PointSupport]) -> MarginReport {
    admissibility_with_points(cfg, supports, false)
}

/// As [`admissibility`]; when `points_interact` is set the point carriers must also
/// be mutually separated (limit-system point vortices).
pub fn admissibility_with_points(cfg: &Configuration, supports: &[PointSupport], points_interact: bool) -> MarginReport {
    let outer = CurveRef::Outer(&cfg.outer);
    let outer_grid = cfg.outer.grid();
    let bodies: Vec<CurveRef> = cfg.bodies.iter().map(CurveRef::Body).collect();
    let body_grids: Vec<Vec<C64>> = cfg.bodies.iter().map(|b| sample_nodes(&CurveRef::Body(b), b.shape.panels)).collect();
    let outer_nodes = outer_grid.z.clone();

    let mut body_body = f64::INFINITY;
    let mut body_outer = f64::INFINITY;
    let mut nested = true;
    for (a, ca) in bodies.iter().enumerate() {
        if winding_number(&outer_nodes, cfg.bodies[a].pose.h).abs() < 0.5 {
            nested = false;
        }
        body_outer = body_outer.min(curve_curve_distance(ca, &body_grids[a], &outer, &outer_nodes));
        for (b, cb) in bodies.iter().enumerate().skip(a + 1) {
            if winding_number(&body_grids[a], cfg.bodies[b].pose.h).abs() > 0.5
                || winding_number(&body_grids[b], cfg.bodies[a].pose.h).abs() > 0.5
            {
                nested = false;
            }
            body_body = body_body.min(curve_curve_distance(ca, &body_grids[a], cb, &body_grids[b]));
        }
    }
    let mut vorticity = f64::INFINITY;
    for s in supports {
        let mut d = curve_point_distance(&outer, &outer_nodes, s.center);
        if winding_number(&outer_nodes, s.center).abs() < 0.5 {
            nested = false;
        }
        for (k, cb) in bodies.iter().enumerate() {
            d = d.min(curve_point_distance(cb, &body_grids[k], s.center));
            if winding_number(&body_grids[k], s.center).abs() > 0.5 {
                nested = false;
            }
        }
        vorticity = vorticity.min(d - s.radius);
    }
    let mut point_point = f64::INFINITY;
    if points_interact {
        for (a, sa) in supports.iter().enumerate() {
            for sb in &supports[a + 1..] {
                point_point = point_point.min((sa.center - sb.center).norm() - sa.radius - sb.radius);
            }
        }
    }
    let min_distance = body_body.min(body_outer).min(vorticity).min(point_point);
    let margin = min_distance - 2.0 * cfg.delta;
    MarginReport {
        body_body,
        body_outer,
        vorticity,
        point_point,
        min_distance,
        margin,
        nested_correctly: nested,
        admissible: nested && margin > 0.0,
    }
}

enum CurveRef<'a> {
    Outer(&'a OuterDomain),
    Body(&'a Body),
}

impl CurveRef<'_> {
    fn eval(&self, t: f64) -> (C64, C64, C64) {
        match self {
            CurveRef::Outer(o) => {
                let (z, dz, d2z) = o.shape.eval(t);
                let r = o.pose.rotation();
                (o.pose.h + r * z, r * dz, r * d2z)
            }
            CurveRef::Body(b) => b.eval(t),
        }
    }
}

fn sample_nodes(c: &CurveRef, m: usize) -> Vec<C64> {
    let h = 2.0 * PI / m as f64;
    (0..m).map(|i| c.eval(i as f64 * h).0).collect()
}

fn curve_point_distance(c: &CurveRef, nodes: &[C64], x: C64) -> f64 {
    let m = nodes.len();
    let (i, _) = nodes
        .iter()
        .enumerate()
        .map(|(i, z)| (i, (z - x).norm_sqr()))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let mut t = 2.0 * PI * i as f64 / m as f64;
    let mut best = (c.eval(t).0 - x).norm();
    for _ in 0..4 {
        let (z, dz, d2z) = c.eval(t);
        let d = z - x;
        let g = dot(d, dz);
        let hss = dz.norm_sqr() + dot(d, d2z);
        if hss <= 0.0 {
            break;
        }
        let tn = t - g / hss;
        let dn = (c.eval(tn).0 - x).norm();
        if dn < best {
            best = dn;
            t = tn;
        } else {
            break;
        }
    }
    best
}

fn curve_curve_distance(a: &CurveRef, na: &[C64], b: &CurveRef, nb: &[C64]) -> f64 {
    let (mut ia, mut ib, mut best) = (0, 0, f64::INFINITY);
    for (i, za) in na.iter().enumerate() {
        for (j, zb) in nb.iter().enumerate() {
            let d = (za - zb).norm_sqr();
            if d < best {
                best = d;
                ia = i;
                ib = j;
            }
        }
    }
    let mut s = 2.0 * PI * ia as f64 / na.len() as f64;
    let mut t = 2.0 * PI * ib as f64 / nb.len() as f64;
    let mut best = best.sqrt();
    for _ in 0..6 {
        let (z1, d1, dd1) = a.eval(s);
        let (z2, d2, dd2) = b.eval(t);
        let d = z1 - z2;
        let gs = dot(d, d1);
        let gt = -dot(d, d2);
        let hss = d1.norm_sqr() + dot(d, dd1);
        let htt = d2.norm_sqr() - dot(d, dd2);
        let hst = -dot(d1, d2);
        let det = hss * htt - hst * hst;
        if det <= 0.0 {
            break;
        }
        let ds = (htt * gs - hst * gt) / det;
        let dt = (hss * gt - hst * gs) / det;
        let (sn, tn) = (s - ds, t - dt);
        let dn = (a.eval(sn).0 - b.eval(tn).0).norm();
        if dn < best {
            best = dn;
            s = sn;
            t = tn;
        } else {
            break;
        }
    }
    best
}
