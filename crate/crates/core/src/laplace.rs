//! Harmonic solvers on discretized domains.
//!
//! A harmonic function is represented as
//!
//! ```text
//! u(z) = Re[a · C[μ](w(z))] + offset + Σ_k A_k log|z − c_k|,
//! C[μ](w) = (1/2πi) ∮ μ(ζ) / (ζ − w) dζ,
//! ```
//!
//! where the Cauchy integral runs over the (chart image of the) boundary with
//! the fluid region on its left, `μ` is a real density, `a` a unit complex
//! coefficient and `w(z)` either the identity chart or an inversion
//! `w = 1/(z − h)` that maps the exterior of one body onto a bounded region.
//! Taking the real part of a Cauchy integral of a real density is the classical
//! double-layer potential, so the Dirichlet problem becomes the second-kind
//! equation `½ μ + K μ (+ log terms) = f`, discretized by the trapezoid rule
//! (Nyström method) and solved densely.
//!
//! Gradients come from `F' = C[dμ/dw]` (integration by parts), with `dμ/dw`
//! obtained by FFT differentiation along each curve.  Boundary traces use the
//! exact one-sided limit of the Cauchy integral with singularity subtraction,
//! and off-curve evaluation subtracts the density at the nearest node, which
//! keeps the quadrature accurate a few node spacings away from the boundary.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{fresh_id, BoundaryGrid, Component, I};

const TWO_PI: f64 = 2.0 * PI;

// ---------------------------------------------------------------------------
// spectral calculus on periodic samples
// ---------------------------------------------------------------------------

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(v: &mut [C64], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse { p.plan_fft_inverse(v.len()) } else { p.plan_fft_forward(v.len()) };
        plan.process(v);
    });
}

fn wavenumber(k: usize, m: usize) -> f64 {
    if k < m / 2 {
        k as f64
    } else if 2 * k == m {
        0.0
    } else {
        k as f64 - m as f64
    }
}

/// Derivative with respect to `t` of uniformly sampled 2π-periodic data.
pub fn spectral_derivative(values: &[C64]) -> Vec<C64> {
    let m = values.len();
    let mut v = values.to_vec();
    fft_in_place(&mut v, false);
    for (k, c) in v.iter_mut().enumerate() {
        *c *= I * wavenumber(k, m) / m as f64;
    }
    fft_in_place(&mut v, true);
    v
}

/// Real-valued variant of [`spectral_derivative`].
pub fn spectral_derivative_real(values: &[f64]) -> Vec<f64> {
    let c: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
    spectral_derivative(&c).into_iter().map(|z| z.re).collect()
}

/// Zero-mean periodic antiderivative in `t`.  The mean of the input is discarded.
pub fn spectral_antiderivative_real(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
    fft_in_place(&mut v, false);
    for (k, c) in v.iter_mut().enumerate() {
        let w = wavenumber(k, m);
        *c = if w == 0.0 { C64::new(0.0, 0.0) } else { *c / (I * w * m as f64) };
    }
    fft_in_place(&mut v, true);
    v.into_iter().map(|z| z.re).collect()
}

// ---------------------------------------------------------------------------
// discretizations
// ---------------------------------------------------------------------------

/// Coordinate chart in which a discretization lives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Chart {
    Identity,
    /// `w = 1/(z − h)`.
    Inversion { h: C64 },
}

impl Chart {
    #[inline]
    fn map(&self, z: C64) -> C64 {
        match *self {
            Chart::Identity => z,
            Chart::Inversion { h } => 1.0 / (z - h),
        }
    }
}

/// One closed curve in chart coordinates.
#[derive(Clone, Debug)]
pub(crate) struct Curve {
    /// Identifier of the boundary grid whose nodes these are.
    pub source: u64,
    pub z: Vec<C64>,
    pub dz: Vec<C64>,
    pub d2z: Vec<C64>,
    /// +1 when increasing `t` keeps the region on the left.
    pub sigma: f64,
    /// Whether the region lies inside the curve.
    pub region_inside: bool,
    /// `σ h dz/(2πi)`: trapezoid Cauchy weights.
    pub cw: Vec<C64>,
    /// Arclength weights `|dz| h`.
    pub ds: Vec<f64>,
}

impl Curve {
    fn new(source: u64, z: Vec<C64>, dz: Vec<C64>, d2z: Vec<C64>, region_inside: bool) -> Self {
        let m = z.len();
        let h = TWO_PI / m as f64;
        let area: f64 = (0..m).map(|i| 0.5 * (z[i].conj() * dz[i]).im).sum::<f64>() * h;
        let orient = area.signum();
        let sigma = if region_inside { orient } else { -orient };
        let cw = dz.iter().map(|d| sigma * h * d / (TWO_PI * I)).collect();
        let ds = dz.iter().map(|d| d.norm() * h).collect();
        Curve { source, z, dz, d2z, sigma, region_inside, cw, ds }
    }

    fn len(&self) -> usize {
        self.z.len()
    }

    fn step(&self) -> f64 {
        TWO_PI / self.len() as f64
    }

    fn indicator(&self) -> f64 {
        if self.region_inside {
            1.0
        } else {
            0.0
        }
    }
}

/// A set of curves bounding one region, in one chart.
#[derive(Debug)]
pub(crate) struct Discretization {
    pub chart: Chart,
    pub curves: Vec<Curve>,
    pub offsets: Vec<usize>,
    pub total: usize,
}

impl Discretization {
    fn new(chart: Chart, curves: Vec<Curve>) -> Self {
        let mut offsets = Vec::with_capacity(curves.len());
        let mut total = 0;
        for c in &curves {
            offsets.push(total);
            total += c.len();
        }
        Discretization { chart, curves, offsets, total }
    }

    /// Curve discretizing `grid`: matched by identity, or else by coinciding
    /// nodes (a copy of the grid rebuilt from the same pose).
    fn own_curve(&self, grid: &BoundaryGrid) -> Option<usize> {
        self.curves.iter().position(|c| c.source == grid.id).or_else(|| {
            self.curves.iter().position(|c| {
                c.len() == grid.len()
                    && c.z.iter().zip(&grid.z).all(|(w, &z)| (self.chart.map(z) - w).norm() <= 1e-13 * (1.0 + w.norm()))
            })
        })
    }
}

// ---------------------------------------------------------------------------
// Cauchy sums
// ---------------------------------------------------------------------------

/// Cauchy integrals of `K` densities over one curve at a point `w` of the region.
///
/// The density value at the nearest node is subtracted and restored through
/// the exact integral `(1/2πi)∮ dζ/(ζ − w) = 1_{region inside}`.
#[inline]
fn curve_cauchy<const K: usize>(c: &Curve, dens: [&[C64]; K], w: C64) -> [C64; K] {
    let mut s0 = C64::new(0.0, 0.0);
    let mut s = [C64::new(0.0, 0.0); K];
    let mut best = f64::INFINITY;
    let mut near = 0;
    for m in 0..c.len() {
        let d = c.z[m] - w;
        let r2 = d.norm_sqr();
        if r2 < best {
            best = r2;
            near = m;
        }
        let k = c.cw[m] * d.conj() / r2;
        s0 += k;
        for j in 0..K {
            s[j] += dens[j][m] * k;
        }
    }
    let rest = c.indicator() - s0;
    let mut out = [C64::new(0.0, 0.0); K];
    for j in 0..K {
        out[j] = s[j] + dens[j][near] * rest;
    }
    out
}

/// One-sided boundary value (from the region) at node `i` of curve `c`.
#[inline]
fn curve_cauchy_limit<const K: usize>(c: &Curve, dens: [&[C64]; K], dens_t: [&[C64]; K], i: usize) -> [C64; K] {
    let w = c.z[i];
    let mut s0 = C64::new(0.0, 0.0);
    let mut s = [C64::new(0.0, 0.0); K];
    for m in 0..c.len() {
        if m == i {
            continue;
        }
        let k = c.cw[m] / (c.z[m] - w);
        s0 += k;
        for j in 0..K {
            s[j] += dens[j][m] * k;
        }
    }
    let rest = c.indicator() - s0;
    let diag = c.sigma * c.step() / (TWO_PI * I);
    let mut out = [C64::new(0.0, 0.0); K];
    for j in 0..K {
        out[j] = s[j] + dens[j][i] * rest + dens_t[j][i] * diag;
    }
    out
}

// ---------------------------------------------------------------------------
// dense Nyström systems
// ---------------------------------------------------------------------------

/// Factorized second-kind system for one discretization.
pub(crate) struct Nystrom {
    pub disc: Arc<Discretization>,
    /// Centres of the log sources, one per hole curve (identity chart only).
    pub log_centers: Vec<(usize, C64)>,
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Nystrom {
    fn new(disc: Arc<Discretization>, log_centers: Vec<(usize, C64)>) -> Result<Self> {
        let n = disc.total;
        let nl = log_centers.len();
        let size = n + nl;
        let mut a = DMatrix::<f64>::zeros(size, size);
        for (ci, c) in disc.curves.iter().enumerate() {
            let oi = disc.offsets[ci];
            for i in 0..c.len() {
                let row = oi + i;
                let zi = c.z[i];
                for (cj, d) in disc.curves.iter().enumerate() {
                    let oj = disc.offsets[cj];
                    for m in 0..d.len() {
                        let col = oj + m;
                        if col == row {
                            continue;
                        }
                        a[(row, col)] = (d.cw[m] / (d.z[m] - zi)).re;
                    }
                }
                a[(row, row)] = 0.5 + c.sigma * c.step() / (4.0 * PI) * (c.d2z[i] / c.dz[i]).im;
                for (k, &(_, center)) in log_centers.iter().enumerate() {
                    a[(row, n + k)] = (zi - center).norm().ln();
                }
            }
        }
        // Zero-mean constraint on every hole density, scaled so that its
        // entries are of unit size like the identity block.
        for (k, &(ci, _)) in log_centers.iter().enumerate() {
            let c = &disc.curves[ci];
            let p: f64 = c.ds.iter().sum();
            let scale = c.len() as f64 / p;
            for m in 0..c.len() {
                a[(n + k, disc.offsets[ci] + m)] = c.ds[m] * scale;
            }
        }
        let lu = a.clone().lu();
        let diag: Vec<f64> = (0..size).map(|i| lu.u()[(i, i)].abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(dmin > 1e-13 * dmax) {
            return Err(Error::SolverFailure {
                message: "singular boundary-integral system".into(),
                condition: if dmin > 0.0 { dmax / dmin } else { f64::INFINITY },
            });
        }
        Ok(Nystrom { disc, log_centers, matrix: a, lu })
    }

    /// Solve with one step of iterative refinement; returns (density, log strengths).
    fn solve(&self, rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.disc.total;
        let mut b = DVector::<f64>::zeros(n + self.log_centers.len());
        b.rows_mut(0, n).copy_from_slice(rhs);
        let mut x = self.lu.solve(&b).expect("factorization checked at construction");
        let r = &b - &self.matrix * &x;
        if let Some(dx) = self.lu.solve(&r) {
            x += dx;
        }
        let mu = x.rows(0, n).iter().cloned().collect();
        let logs = x.rows(n, self.log_centers.len()).iter().cloned().collect();
        (mu, logs)
    }

    /// Spectral condition number `σ_max / σ_min` (dense SVD; diagnostic use only).
    pub fn condition_number(&self) -> f64 {
        let sv = self.matrix.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// fields
// ---------------------------------------------------------------------------

/// Free-space source `s · G(|z − c|)` with `G = log r` (point, `core = 0`) or the
/// Gaussian-regularized `G = log r + ½E₁(r²/δ²)` (`core = δ > 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Source {
    pub center: C64,
    pub strength: f64,
    pub core: f64,
}

/// Exponential integral `E₁(x)` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 requires a positive argument");
    if x <= 1.0 {
        -0.577_215_664_901_532_9 - x.ln() - series_tail(x)
    } else {
        // modified Lentz evaluation of the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..300 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// `Σ_{k≥1} (−x)^k / (k · k!)`.
fn series_tail(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..60 {
        term *= -x / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

impl Source {
    /// `G(r)` of the source kernel (without the strength).
    pub fn kernel(&self, z: C64) -> f64 {
        let r2 = (z - self.center).norm_sqr();
        if self.core == 0.0 {
            return 0.5 * r2.ln();
        }
        let d2 = self.core * self.core;
        let x = r2 / d2;
        if x <= 1.0 {
            // log r + ½E₁(r²/δ²) = log δ − γ/2 − ½ Σ (−x)^k/(k k!)
            self.core.ln() - 0.5 * 0.577_215_664_901_532_9 - 0.5 * series_tail(x)
        } else {
            0.5 * r2.ln() + 0.5 * exp_integral_e1(x)
        }
    }

    /// `∇G` as a plane vector.
    pub fn kernel_gradient(&self, z: C64) -> C64 {
        let d = z - self.center;
        let r2 = d.norm_sqr();
        if r2 == 0.0 {
            return C64::new(0.0, 0.0);
        }
        d / r2 * self.profile(r2)
    }

    /// `1 − exp(−r²/δ²)` (or 1 for a point source).
    fn profile(&self, r2: f64) -> f64 {
        if self.core == 0.0 {
            1.0
        } else {
            -(-r2 / (self.core * self.core)).exp_m1()
        }
    }

    /// Hessian `[G_xx, G_xy, G_yy]`.
    pub fn kernel_hessian(&self, z: C64) -> [f64; 3] {
        let d = z - self.center;
        let r2 = d.norm_sqr();
        if r2 == 0.0 {
            let v = if self.core == 0.0 { f64::NAN } else { 1.0 / (self.core * self.core) };
            return [v, 0.0, v];
        }
        let f = self.profile(r2);
        let fp_over_r = if self.core == 0.0 { 0.0 } else { 2.0 / (self.core * self.core) * (-r2 / (self.core * self.core)).exp() };
        let (x, y) = (d.re, d.im);
        let a = f / r2;
        let b = (fp_over_r - 2.0 * f / r2) / r2;
        [a + b * x * x, b * x * y, a + b * y * y]
    }
}

/// Density layer of a [`HarmonicField`] on one discretization.
#[derive(Clone)]
struct Layer {
    disc: Arc<Discretization>,
    /// 1 or −i.
    coef: C64,
    /// Real density stored as complex numbers, its `t`-derivative,
    /// `g = dμ/dw`, `g_t`, and `dg/dw`.
    mu: Vec<C64>,
    mu_t: Vec<C64>,
    g: Vec<C64>,
    g_t: Vec<C64>,
    g_w: Vec<C64>,
    /// `C[μ]` at the chart origin (used by inversion charts only).
    at_origin: C64,
}

impl Layer {
    fn new(disc: Arc<Discretization>, coef: C64, mu_real: &[f64]) -> Self {
        let mut mu = Vec::with_capacity(disc.total);
        let mut mu_t = Vec::with_capacity(disc.total);
        let mut g = Vec::with_capacity(disc.total);
        let mut g_t = Vec::with_capacity(disc.total);
        let mut g_w = Vec::with_capacity(disc.total);
        for (ci, c) in disc.curves.iter().enumerate() {
            let o = disc.offsets[ci];
            let seg: Vec<C64> = mu_real[o..o + c.len()].iter().map(|&x| C64::new(x, 0.0)).collect();
            let seg_t: Vec<C64> = spectral_derivative(&seg).into_iter().map(|v| C64::new(v.re, 0.0)).collect();
            let seg_g: Vec<C64> = seg_t.iter().zip(&c.dz).map(|(a, b)| a / b).collect();
            let seg_gt = spectral_derivative(&seg_g);
            let seg_gw: Vec<C64> = seg_gt.iter().zip(&c.dz).map(|(a, b)| a / b).collect();
            mu.extend(seg);
            mu_t.extend(seg_t);
            g.extend(seg_g);
            g_t.extend(seg_gt);
            g_w.extend(seg_gw);
        }
        let mut layer = Layer { disc, coef, mu, mu_t, g, g_t, g_w, at_origin: C64::new(0.0, 0.0) };
        if let Chart::Inversion { .. } = layer.disc.chart {
            layer.at_origin = layer.chart_values(C64::new(0.0, 0.0))[0];
        }
        layer
    }

    fn scale(&mut self, s: f64) {
        for v in [&mut self.mu, &mut self.mu_t, &mut self.g, &mut self.g_t, &mut self.g_w] {
            v.iter_mut().for_each(|x| *x *= s);
        }
        self.at_origin *= s;
    }

    fn accumulate(&mut self, other: &Layer, s: f64) {
        for (a, b) in [
            (&mut self.mu, &other.mu),
            (&mut self.mu_t, &other.mu_t),
            (&mut self.g, &other.g),
            (&mut self.g_t, &other.g_t),
            (&mut self.g_w, &other.g_w),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        self.at_origin += s * other.at_origin;
    }

    fn compatible(&self, other: &Layer) -> bool {
        Arc::ptr_eq(&self.disc, &other.disc) && self.coef == other.coef
    }

    /// `[C[μ], C[g], C[g_w]]` at chart point `w` (off the boundary).
    fn chart_values(&self, w: C64) -> [C64; 3] {
        let mut acc = [C64::new(0.0, 0.0); 3];
        for (ci, c) in self.disc.curves.iter().enumerate() {
            let o = self.disc.offsets[ci];
            let r = curve_cauchy(c, [&self.mu[o..o + c.len()], &self.g[o..o + c.len()], &self.g_w[o..o + c.len()]], w);
            for j in 0..3 {
                acc[j] += r[j];
            }
        }
        acc
    }

    fn chart_values_2(&self, w: C64) -> [C64; 2] {
        let mut acc = [C64::new(0.0, 0.0); 2];
        for (ci, c) in self.disc.curves.iter().enumerate() {
            let o = self.disc.offsets[ci];
            let r = curve_cauchy(c, [&self.mu[o..o + c.len()], &self.g[o..o + c.len()]], w);
            acc[0] += r[0];
            acc[1] += r[1];
        }
        acc
    }

    /// `[C[μ], C[g]]` at node `i` of own curve `own` (boundary limit).
    fn chart_limit(&self, own: usize, i: usize) -> [C64; 2] {
        let mut acc = [C64::new(0.0, 0.0); 2];
        let w = self.disc.curves[own].z[i];
        for (ci, c) in self.disc.curves.iter().enumerate() {
            let o = self.disc.offsets[ci];
            let r = if ci == own {
                curve_cauchy_limit(
                    c,
                    [&self.mu[o..o + c.len()], &self.g[o..o + c.len()]],
                    [&self.mu_t[o..o + c.len()], &self.g_t[o..o + c.len()]],
                    i,
                )
            } else {
                curve_cauchy(c, [&self.mu[o..o + c.len()], &self.g[o..o + c.len()]], w)
            };
            acc[0] += r[0];
            acc[1] += r[1];
        }
        acc
    }

    /// Analytic value `F`, `F'` (and optionally `F''`) in physical coordinates.
    fn physical(&self, z: C64, chart_vals: &[C64], w: C64) -> (C64, C64, C64) {
        let a = self.coef;
        match self.disc.chart {
            Chart::Identity => {
                let f2 = if chart_vals.len() > 2 { chart_vals[2] } else { C64::new(0.0, 0.0) };
                (a * chart_vals[0], a * chart_vals[1], a * f2)
            }
            Chart::Inversion { .. } => {
                let _ = z;
                let w2 = w * w;
                let f = a * (chart_vals[0] - self.at_origin);
                let fp = a * chart_vals[1] * (-w2);
                let fpp = if chart_vals.len() > 2 { a * (chart_vals[2] * w2 * w2 + chart_vals[1] * 2.0 * w2 * w) } else { C64::new(0.0, 0.0) };
                (f, fp, fpp)
            }
        }
    }
}

/// Value, gradient and (optionally) Hessian of a field at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub gradient: C64,
}

/// Boundary trace of a field on a grid.
#[derive(Clone, Debug, Default)]
pub struct FieldTrace {
    pub value: Vec<f64>,
    pub gradient: Vec<C64>,
}

/// A solved Laplace problem: density layers, free-space sources and a constant.
///
/// The field is harmonic away from its boundaries except inside regularized
/// source cores.  Fields are immutable values; linear combinations merge
/// layers that share a discretization.
#[derive(Clone, Default)]
pub struct HarmonicField {
    layers: Vec<Layer>,
    sources: Vec<Source>,
    constant: f64,
    conj_constant: f64,
}

impl std::fmt::Debug for HarmonicField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HarmonicField")
            .field("layers", &self.layers.len())
            .field("sources", &self.sources)
            .field("constant", &self.constant)
            .finish()
    }
}

impl HarmonicField {
    pub fn zero() -> Self {
        HarmonicField::default()
    }

    pub fn constant(c: f64) -> Self {
        HarmonicField { constant: c, ..Default::default() }
    }

    /// Field made only of free-space sources.
    pub fn from_sources(sources: Vec<Source>) -> Self {
        HarmonicField { sources, ..Default::default() }
    }

    fn from_layer(layer: Layer) -> Self {
        HarmonicField { layers: vec![layer], ..Default::default() }
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn additive_constant(&self) -> f64 {
        self.constant
    }

    /// `s · self`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.layers.iter_mut().for_each(|l| l.scale(s));
        out.sources.iter_mut().for_each(|x| x.strength *= s);
        out.constant *= s;
        out.conj_constant *= s;
        out
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &HarmonicField, s: f64) {
        if s == 0.0 {
            return;
        }
        for l in &other.layers {
            if let Some(mine) = self.layers.iter_mut().find(|m| m.compatible(l)) {
                mine.accumulate(l, s);
            } else {
                let mut c = l.clone();
                c.scale(s);
                self.layers.push(c);
            }
        }
        for src in &other.sources {
            self.sources.push(Source { strength: s * src.strength, ..*src });
        }
        self.constant += s * other.constant;
        self.conj_constant += s * other.conj_constant;
    }

    /// `Σ s_k f_k`.
    pub fn combination(terms: &[(f64, &HarmonicField)]) -> Self {
        let mut out = HarmonicField::zero();
        for (s, f) in terms {
            out.add_scaled(f, *s);
        }
        out
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    /// Add a constant to the field value.
    pub fn shifted(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Harmonic conjugate `v` with `∇v = ∇^⊥ u`.  Sources (multivalued
    /// conjugates) are not allowed.
    pub fn conjugate(&self) -> Result<HarmonicField> {
        if self.sources.iter().any(|s| s.strength != 0.0) {
            return Err(Error::invalid("harmonic conjugate of a field with log sources is multivalued"));
        }
        let mut out = HarmonicField::zero();
        for l in &self.layers {
            let mut c = l.clone();
            // Re(−i a F) = Im(a F)
            let a = -I * l.coef;
            if (a - C64::new(1.0, 0.0)).norm() < 1e-15 || (a - (-I)).norm() < 1e-15 {
                c.coef = a;
            } else {
                c.coef = -a;
                c.scale(-1.0);
            }
            out.layers.push(c);
        }
        out.constant = self.conj_constant;
        out.conj_constant = -self.constant;
        Ok(out)
    }

    /// Value and gradient at an interior point.
    pub fn sample(&self, z: C64) -> Sample {
        let mut value = self.constant;
        let mut grad = C64::new(0.0, 0.0);
        for l in &self.layers {
            let w = l.disc.chart.map(z);
            let cv = l.chart_values_2(w);
            let (f, fp, _) = l.physical(z, &cv, w);
            value += f.re;
            grad += fp.conj();
        }
        for s in &self.sources {
            value += s.strength * s.kernel(z);
            grad += s.strength * s.kernel_gradient(z);
        }
        Sample { value, gradient: grad }
    }

    pub fn value(&self, z: C64) -> f64 {
        self.sample(z).value
    }

    pub fn gradient(&self, z: C64) -> C64 {
        self.sample(z).gradient
    }

    /// Hessian `[u_xx, u_xy, u_yy]` at an interior point.
    pub fn hessian(&self, z: C64) -> [f64; 3] {
        let mut h = [0.0; 3];
        for l in &self.layers {
            let w = l.disc.chart.map(z);
            let cv = l.chart_values(w);
            let (_, _, fpp) = l.physical(z, &cv, w);
            h[0] += fpp.re;
            h[1] -= fpp.im;
            h[2] -= fpp.re;
        }
        for s in &self.sources {
            let k = s.kernel_hessian(z);
            for j in 0..3 {
                h[j] += s.strength * k[j];
            }
        }
        h
    }

    /// Harmonic-conjugate value at an interior point (sources ignored).
    pub fn conjugate_value(&self, z: C64) -> f64 {
        let mut v = self.conj_constant;
        for l in &self.layers {
            let w = l.disc.chart.map(z);
            let cv = l.chart_values_2(w);
            let (f, _, _) = l.physical(z, &cv, w);
            v += f.im;
        }
        v
    }

    /// Values and gradients at many interior points.
    pub fn sample_many(&self, points: &[C64]) -> Vec<Sample> {
        points.par_iter().map(|&z| self.sample(z)).collect()
    }

    /// Boundary trace (value and gradient) on a grid of the fluid boundary.
    ///
    /// Layers that own the grid use the exact one-sided limit; every other
    /// layer and the sources are evaluated directly.
    pub fn trace(&self, grid: &BoundaryGrid) -> FieldTrace {
        let owners = self.owners(grid);
        let (value, gradient): (Vec<f64>, Vec<C64>) = (0..grid.len())
            .into_par_iter()
            .map(|m| {
                let (v, g, _) = self.trace_node(grid, &owners, m);
                (v, g)
            })
            .unzip();
        FieldTrace { value, gradient }
    }

    /// Boundary trace of the harmonic conjugate.
    pub fn conjugate_trace(&self, grid: &BoundaryGrid) -> Vec<f64> {
        let owners = self.owners(grid);
        (0..grid.len()).into_par_iter().map(|m| self.trace_node(grid, &owners, m).2).collect()
    }

    fn owners(&self, grid: &BoundaryGrid) -> Vec<Option<usize>> {
        self.layers.iter().map(|l| l.disc.own_curve(grid)).collect()
    }

    fn trace_node(&self, grid: &BoundaryGrid, owners: &[Option<usize>], m: usize) -> (f64, C64, f64) {
        let z = grid.z[m];
        let mut value = self.constant;
        let mut conj = self.conj_constant;
        let mut grad = C64::new(0.0, 0.0);
        for (l, owner) in self.layers.iter().zip(owners) {
            let (cv, w) = match *owner {
                Some(own) => (l.chart_limit(own, m), l.disc.curves[own].z[m]),
                None => {
                    let w = l.disc.chart.map(z);
                    (l.chart_values_2(w), w)
                }
            };
            let (f, fp, _) = l.physical(z, &cv, w);
            value += f.re;
            conj += f.im;
            grad += fp.conj();
        }
        for s in &self.sources {
            value += s.strength * s.kernel(z);
            grad += s.strength * s.kernel_gradient(z);
        }
        (value, grad, conj)
    }
}

// ---------------------------------------------------------------------------
// boundary data
// ---------------------------------------------------------------------------

/// Dirichlet samples on the outer boundary and on each body of a solver.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub outer: Vec<f64>,
    pub bodies: Vec<Vec<f64>>,
}

impl BoundaryData {
    pub fn zeros(outer: usize, bodies: &[usize]) -> Self {
        BoundaryData { outer: vec![0.0; outer], bodies: bodies.iter().map(|&n| vec![0.0; n]).collect() }
    }

    /// Largest absolute sample.
    pub fn sup_norm(&self) -> f64 {
        self.outer.iter().chain(self.bodies.iter().flatten()).fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn axpy(&mut self, s: f64, other: &BoundaryData) {
        self.outer.iter_mut().zip(&other.outer).for_each(|(a, b)| *a += s * b);
        for (x, y) in self.bodies.iter_mut().zip(&other.bodies) {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += s * b);
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.outer.iter().chain(self.bodies.iter().flatten()).cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// solvers
// ---------------------------------------------------------------------------

fn identity_curve(grid: &BoundaryGrid, region_inside: bool) -> Curve {
    Curve::new(grid.id, grid.z.clone(), grid.dz.clone(), grid.d2z.clone(), region_inside)
}

fn check_len(data: &[f64], grid: &BoundaryGrid, what: &str) -> Result<()> {
    if data.len() != grid.len() {
        return Err(Error::InvalidData(format!("{what}: {} samples for a grid of {} nodes", data.len(), grid.len())));
    }
    Ok(())
}

/// Interior Dirichlet problem in the region enclosed by `grid`.
pub fn solve_interior_dirichlet(grid: &BoundaryGrid, data: &[f64]) -> Result<HarmonicField> {
    check_len(data, grid, "interior Dirichlet data")?;
    let disc = Arc::new(Discretization::new(Chart::Identity, vec![identity_curve(grid, true)]));
    let sys = Nystrom::new(disc.clone(), vec![])?;
    let (mu, _) = sys.solve(data);
    Ok(HarmonicField::from_layer(Layer::new(disc, C64::new(1.0, 0.0), &mu)))
}

/// Solution of an exterior problem: `f̂ → 0` at infinity and `f̂ = α + ĉ` on the body.
#[derive(Clone, Debug)]
pub struct StandaloneSolution {
    pub field: HarmonicField,
    pub constant: f64,
}

/// Factorized exterior solver for one body, built on the inversion `w = 1/(z − h)`.
pub struct ExteriorSolver {
    sys: Nystrom,
    pub center: C64,
    pub grid_id: u64,
}

impl ExteriorSolver {
    pub fn new(grid: &BoundaryGrid) -> Result<Self> {
        let h = grid.center;
        let mut w = Vec::with_capacity(grid.len());
        let mut wt = Vec::with_capacity(grid.len());
        let mut wtt = Vec::with_capacity(grid.len());
        for m in 0..grid.len() {
            let d = grid.z[m] - h;
            if d.norm() == 0.0 {
                return Err(Error::invalid("degenerate curve passes through its centre"));
            }
            let inv = 1.0 / d;
            w.push(inv);
            wt.push(-grid.dz[m] * inv * inv);
            wtt.push(2.0 * grid.dz[m] * grid.dz[m] * inv * inv * inv - grid.d2z[m] * inv * inv);
        }
        let curve = Curve::new(grid.id, w, wt, wtt, true);
        let disc = Arc::new(Discretization::new(Chart::Inversion { h }, vec![curve]));
        Ok(ExteriorSolver { sys: Nystrom::new(disc, vec![])?, center: h, grid_id: grid.id })
    }

    /// Exterior field with the given body data.
    pub fn solve(&self, data: &[f64]) -> StandaloneSolution {
        let (mu, _) = self.sys.solve(data);
        let layer = Layer::new(self.sys.disc.clone(), C64::new(1.0, 0.0), &mu);
        let constant = -layer.at_origin.re;
        StandaloneSolution { field: HarmonicField::from_layer(layer), constant }
    }

    pub fn condition_number(&self) -> f64 {
        self.sys.condition_number()
    }
}

/// Exterior ("standalone") Dirichlet problem outside a single body.
pub fn solve_exterior_standalone(grid: &BoundaryGrid, data: &[f64]) -> Result<StandaloneSolution> {
    check_len(data, grid, "exterior data")?;
    Ok(ExteriorSolver::new(grid)?.solve(data))
}

/// Solution of the modified Dirichlet problem: the trace equals `α_κ + c_κ`
/// on body `κ`, `α_Ω` on the outer boundary, and every body flux vanishes.
#[derive(Clone, Debug)]
pub struct ModifiedDirichletSolution {
    pub field: HarmonicField,
    pub constants: Vec<f64>,
}

/// Factorized solver for the modified Dirichlet problem on the region between
/// an outer boundary and a list of bodies.
pub struct ModifiedDirichletSolver {
    sys: Nystrom,
    outer_id: u64,
    body_ids: Vec<u64>,
    body_lens: Vec<usize>,
    outer_len: usize,
    basis_mu: Vec<Vec<f64>>,
    flux_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    flux_condition: f64,
}

impl ModifiedDirichletSolver {
    pub fn new(outer: &BoundaryGrid, bodies: &[&BoundaryGrid]) -> Result<Self> {
        if outer.component != Component::Outer {
            return Err(Error::invalid("first grid must be the outer boundary"));
        }
        let mut curves = vec![identity_curve(outer, true)];
        let mut logs = Vec::new();
        for (k, b) in bodies.iter().enumerate() {
            curves.push(identity_curve(b, false));
            logs.push((k + 1, b.center));
        }
        let disc = Arc::new(Discretization::new(Chart::Identity, curves));
        let sys = Nystrom::new(disc.clone(), logs)?;
        let n = bodies.len();
        let mut basis_mu = Vec::with_capacity(n);
        let mut flux = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mut rhs = vec![0.0; disc.total];
            let o = disc.offsets[k + 1];
            rhs[o..o + bodies[k].len()].iter_mut().for_each(|x| *x = 1.0);
            let (mu, a) = sys.solve(&rhs);
            for j in 0..n {
                flux[(j, k)] = a[j];
            }
            basis_mu.push(mu);
        }
        let flux_condition = if n > 0 {
            let inv = flux.clone().try_inverse().ok_or_else(|| Error::SolverFailure {
                message: "singular flux matrix".into(),
                condition: f64::INFINITY,
            })?;
            norm1(&flux) * norm1(&inv)
        } else {
            1.0
        };
        if flux_condition > 1e12 {
            return Err(Error::SolverFailure { message: "ill-conditioned flux matrix".into(), condition: flux_condition });
        }
        Ok(ModifiedDirichletSolver {
            sys,
            outer_id: outer.id,
            body_ids: bodies.iter().map(|b| b.id).collect(),
            body_lens: bodies.iter().map(|b| b.len()).collect(),
            outer_len: outer.len(),
            basis_mu,
            flux_lu: flux.lu(),
            flux_condition,
        })
    }

    pub fn body_count(&self) -> usize {
        self.body_ids.len()
    }

    pub fn body_ids(&self) -> &[u64] {
        &self.body_ids
    }

    pub fn outer_id(&self) -> u64 {
        self.outer_id
    }

    pub fn zero_data(&self) -> BoundaryData {
        BoundaryData::zeros(self.outer_len, &self.body_lens)
    }

    pub fn flux_condition(&self) -> f64 {
        self.flux_condition
    }

    pub fn condition_number(&self) -> f64 {
        self.sys.condition_number()
    }

    fn validate(&self, data: &BoundaryData) -> Result<()> {
        if data.outer.len() != self.outer_len
            || data.bodies.len() != self.body_lens.len()
            || data.bodies.iter().zip(&self.body_lens).any(|(d, n)| d.len() != *n)
        {
            return Err(Error::InvalidData("boundary data does not match the solver's grids".into()));
        }
        Ok(())
    }

    /// Plain Dirichlet solve with log sources: returns the field (logs as
    /// sources) and the log strengths.  The flux through body `k` equals `−2π A_k`.
    pub fn solve_standard(&self, data: &BoundaryData) -> Result<(HarmonicField, Vec<f64>)> {
        self.validate(data)?;
        let (mu, a) = self.sys.solve(&data.flatten());
        let mut f = HarmonicField::from_layer(Layer::new(self.sys.disc.clone(), C64::new(1.0, 0.0), &mu));
        for (k, &(_, c)) in self.sys.log_centers.iter().enumerate() {
            f.sources.push(Source { center: c, strength: a[k], core: 0.0 });
        }
        Ok((f, a))
    }

    /// Modified Dirichlet solve.
    pub fn solve(&self, data: &BoundaryData) -> Result<ModifiedDirichletSolution> {
        self.validate(data)?;
        let (mut mu, a) = self.sys.solve(&data.flatten());
        let n = self.body_ids.len();
        let mut constants = vec![0.0; n];
        if n > 0 {
            let rhs = DVector::from_iterator(n, a.iter().map(|x| -x));
            let rho = self.flux_lu.solve(&rhs).expect("flux matrix checked at construction");
            for k in 0..n {
                constants[k] = rho[k];
                mu.iter_mut().zip(&self.basis_mu[k]).for_each(|(x, y)| *x += rho[k] * y);
            }
        }
        let field = HarmonicField::from_layer(Layer::new(self.sys.disc.clone(), C64::new(1.0, 0.0), &mu));
        Ok(ModifiedDirichletSolution { field, constants })
    }

    /// Index of a body grid inside this solver.
    pub fn body_slot(&self, grid_id: u64) -> Option<usize> {
        self.body_ids.iter().position(|&i| i == grid_id)
    }

    /// Field whose normal derivative equals `β` on body `slot` and vanishes on
    /// every other boundary component.
    ///
    /// `β` is integrated along the tangent to a primitive `ℬ`, the modified
    /// Dirichlet problem with data `ℬ` is solved, and its harmonic conjugate
    /// is returned (`∇u = ∇^⊥ 𝔣[ℬ]`).
    pub fn neumann_from_tangential(&self, slot: usize, grid: &BoundaryGrid, beta: &[f64]) -> Result<HarmonicField> {
        let primitive = tangential_primitive(grid, beta)?;
        self.neumann_from_primitive(slot, &primitive)
    }

    /// As [`Self::neumann_from_tangential`] with the primitive `ℬ` given directly.
    pub fn neumann_from_primitive(&self, slot: usize, primitive: &[f64]) -> Result<HarmonicField> {
        if slot >= self.body_ids.len() {
            return Err(Error::invalid(format!("body slot {slot} out of range")));
        }
        let mut data = self.zero_data();
        data.bodies[slot].copy_from_slice(primitive);
        self.solve(&data)?.field.conjugate()
    }
}

/// Tangential primitive `ℬ` with `∂_τ ℬ = β` on a closed grid (zero mean).
pub fn tangential_primitive(grid: &BoundaryGrid, beta: &[f64]) -> Result<Vec<f64>> {
    check_len(beta, grid, "flux data")?;
    let total: f64 = grid.integrate(|m| beta[m]);
    let scale: f64 = grid.integrate(|m| beta[m].abs()).max(f64::MIN_POSITIVE);
    if total.abs() > 1e-9 * scale.max(1e-300) && total.abs() > 1e-14 {
        return Err(Error::InvalidData(format!("flux data must have zero mean, got ∮β ds = {total:.3e}")));
    }
    // d/dt ℬ = β |dz/dt| · (τ · dz/|dz|)
    let integrand: Vec<f64> = (0..grid.len())
        .map(|m| {
            let orient = crate::geometry::dot(grid.tangent[m], grid.dz[m] / grid.dz[m].norm());
            beta[m] * grid.dz[m].norm() * orient
        })
        .collect();
    Ok(spectral_antiderivative_real(&integrand))
}

/// Standalone-body variant of [`ModifiedDirichletSolver::neumann_from_tangential`].
pub fn exterior_neumann_from_tangential(solver: &ExteriorSolver, grid: &BoundaryGrid, beta: &[f64]) -> Result<HarmonicField> {
    let primitive = tangential_primitive(grid, beta)?;
    solver.solve(&primitive).field.conjugate()
}

/// Mean of a trace over a grid.
pub fn boundary_mean(grid: &BoundaryGrid, values: &[f64]) -> f64 {
    grid.integrate(|m| values[m]) / grid.perimeter()
}

/// New id-carrying copy of a grid (for solving on the same nodes as a different component).
pub fn regrid(grid: &BoundaryGrid) -> BoundaryGrid {
    let mut g = grid.clone();
    g.id = fresh_id();
    g
}
