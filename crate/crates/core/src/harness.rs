//! Convergence laboratory: scale sweeps comparing full trajectories with the
//! limit system, measurements of the asymptotic estimates satisfied by the
//! potentials, and the modulation / normal-form diagnostics of small bodies.
//!
//! The quantities measured here are recomputed from the potentials rather
//! than taken from the force assembly used by the integrators, so a defect in
//! one path shows up as a disagreement with the other.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{FullState, FullSystem, StepRecord};
use crate::error::{Error, Result};
use crate::nan_max;
use crate::geometry::{dot, perp, xi_at, Body, BodyShape, Configuration, Family, OuterDomain, Pose};
use crate::limitsys::{LimitState, LimitSystem};
use crate::output::Sample;
use crate::potentials::{biot_savart, final_configuration, BundleOptions, PotentialBundle, VortexElement};
use crate::reflections::ReflectionWorkspace;
use crate::scenario::Scenario;
use crate::C64;

// ---------------------------------------------------------------------------
// Fits

/// Least-squares line through `(log ε, log value)` (or through raw values for
/// [`linear_fit`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

fn least_squares(points: &[(f64, f64)]) -> RateFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    RateFit { slope, intercept, r2 }
}

fn check_abscissae(samples: &[(f64, f64)]) -> Result<()> {
    if samples.len() < 3 {
        return Err(Error::invalid(format!("a fit needs at least 3 samples, got {}", samples.len())));
    }
    let x0 = samples[0].0;
    if samples.iter().all(|s| s.0 == x0) {
        return Err(Error::InvalidData("all abscissae coincide".into()));
    }
    Ok(())
}

/// Log-log least-squares fit `log v ≈ slope · log ε + intercept`.
pub fn rate_fit(samples: &[(f64, f64)]) -> Result<RateFit> {
    check_abscissae(samples)?;
    if let Some(bad) = samples.iter().find(|(e, v)| !(*e > 0.0 && *v > 0.0 && e.is_finite() && v.is_finite())) {
        return Err(Error::InvalidData(format!("log-log fit needs positive finite samples, got ({}, {})", bad.0, bad.1)));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|(e, v)| (e.ln(), v.ln())).collect();
    Ok(least_squares(&logs))
}

/// Plain least-squares line `v ≈ slope · x + intercept`.
pub fn linear_fit(samples: &[(f64, f64)]) -> Result<RateFit> {
    check_abscissae(samples)?;
    if samples.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
        return Err(Error::InvalidData("non-finite sample".into()));
    }
    Ok(least_squares(samples))
}

/// `v₀ > v₁ > …`.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

// ---------------------------------------------------------------------------
// Stored runs

/// Every step of a fixed-step run.
#[derive(Clone, Debug)]
pub struct StoredRun<S> {
    pub states: Vec<S>,
    pub records: Vec<StepRecord>,
    /// Description of the breach that ended the run early, if any.
    pub breach: Option<String>,
}

pub fn record_full(sys: &FullSystem, state: &FullState, dt: f64, t_end: f64) -> Result<StoredRun<FullState>> {
    let mut states = Vec::new();
    let mut records = Vec::new();
    let tr = sys.run(state, dt, t_end, &mut |s, r| {
        states.push(s.clone());
        records.push(r.clone());
    })?;
    Ok(StoredRun { states, records, breach: tr.breach.map(|e| e.to_string()) })
}

pub fn record_limit(sys: &LimitSystem, state: &LimitState, dt: f64, t_end: f64) -> Result<StoredRun<LimitState>> {
    let mut states = Vec::new();
    let mut records = Vec::new();
    let tr = sys.run(state, dt, t_end, &mut |s, r| {
        states.push(s.clone());
        records.push(r.clone());
    })?;
    Ok(StoredRun { states, records, breach: tr.breach.map(|e| e.to_string()) })
}

impl StoredRun<FullState> {
    pub fn samples(&self, stride: usize) -> Vec<Sample> {
        self.states.iter().zip(&self.records).step_by(stride.max(1)).map(|(s, r)| Sample::from_full(s, r)).collect()
    }
}

impl StoredRun<LimitState> {
    pub fn samples(&self, stride: usize) -> Vec<Sample> {
        self.states.iter().zip(&self.records).step_by(stride.max(1)).map(|(s, r)| Sample::from_limit(s, r)).collect()
    }
}

// ---------------------------------------------------------------------------
// Convergence sweep

/// Smooth test functions for the weak-⋆ comparison of vorticities:
/// `x₁`, `x₂`, `x₁x₂`, `x₁² − x₂²`, `exp(−|x|²)`.
pub fn vorticity_moments(elements: &[VortexElement]) -> [f64; 5] {
    let mut m = [0.0; 5];
    for e in elements {
        let x = e.position;
        let f = [x.re, x.im, x.re * x.im, x.re * x.re - x.im * x.im, (-x.norm_sqr()).exp()];
        for (mi, fi) in m.iter_mut().zip(f) {
            *mi += e.strength * fi;
        }
    }
    m
}

/// Uniform `n × n` grid over the bounding box of the outer boundary, keeping
/// the points inside the domain.
pub fn probe_grid(outer: &OuterDomain, n: usize) -> Vec<C64> {
    let g = outer.grid();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for z in &g.z {
        x0 = x0.min(z.re);
        x1 = x1.max(z.re);
        y0 = y0.min(z.im);
        y1 = y1.max(z.im);
    }
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (x1 - x0) * (i as f64 + 0.5) / n as f64;
            let y = y0 + (y1 - y0) * (j as f64 + 0.5) / n as f64;
            let z = C64::new(x, y);
            if outer.contains(z) {
                pts.push(z);
            }
        }
    }
    pts
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Probe points for the velocity comparison (filtered per sample).
    pub probes: Vec<C64>,
    /// Probes closer than this to a boundary, a small body or a limit vortex are skipped.
    pub exclusion: f64,
    /// Compare velocities every `field_stride` steps.
    pub field_stride: usize,
    /// Exponent of the discrete `Lᵖ` velocity gap.
    pub lp: f64,
    /// Also run the modulation diagnostics on every member.
    pub modulation: bool,
}

impl SweepOptions {
    pub fn for_scenario(scenario: &Scenario) -> Result<Self> {
        let outer = scenario.outer_domain()?;
        Ok(SweepOptions {
            probes: probe_grid(&outer, 12),
            exclusion: (4.0 * scenario.numerics.delta).max(0.1),
            field_stride: 50,
            lp: 4.0,
            modulation: false,
        })
    }
}

/// Sup-in-time position error of one body.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BodyError {
    pub body: usize,
    pub family: Family,
    pub sup_error: f64,
}

/// Summary of the modulation diagnostics of one small body.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulationSummary {
    pub body: usize,
    pub sup_residual: f64,
    pub sup_beta: f64,
    pub sup_gyro_identity_gap: f64,
}

/// One row of the error table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepMember {
    pub epsilon: f64,
    /// Number of common time samples compared.
    pub samples: usize,
    pub t_reached: f64,
    pub body_errors: Vec<BodyError>,
    /// Sup in time of the discrete `Lᵖ` gap `u^ε − u⋆` on the probes.
    pub velocity_gap: f64,
    /// Sup in time of the largest moment gap of the blob vorticity.
    pub vorticity_gap: f64,
    pub modulation: Vec<ModulationSummary>,
    pub breach: Option<String>,
}

impl SweepMember {
    pub fn error_of(&self, body: usize) -> Option<f64> {
        self.body_errors.iter().find(|b| b.body == body).map(|b| b.sup_error)
    }

    pub fn residual_of(&self, body: usize) -> Option<f64> {
        self.modulation.iter().find(|m| m.body == body).map(|m| m.sup_residual)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub dt: f64,
    pub t_end: f64,
    pub members: Vec<SweepMember>,
    pub limit_breach: Option<String>,
}

impl SweepTable {
    /// Errors of `body` along the sweep (in member order).
    pub fn errors(&self, body: usize) -> Vec<f64> {
        self.members.iter().filter_map(|m| m.error_of(body)).collect()
    }

    pub fn residuals(&self, body: usize) -> Vec<f64> {
        self.members.iter().filter_map(|m| m.residual_of(body)).collect()
    }

    /// Small bodies whose error does not strictly decrease along the sweep
    /// (flagged, not failed: only convergence along a subsequence is guaranteed).
    pub fn non_monotone(&self) -> Vec<usize> {
        let Some(first) = self.members.first() else { return Vec::new() };
        first
            .body_errors
            .iter()
            .filter(|b| b.family != Family::I)
            .map(|b| b.body)
            .filter(|&b| !strictly_decreasing(&self.errors(b)))
            .collect()
    }
}

/// Sweep output: the table plus the sampled trajectories.
#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub table: SweepTable,
    pub limit_samples: Vec<Sample>,
    pub member_samples: Vec<Vec<Sample>>,
}

fn lp_gap(a: &[C64], b: &[C64], p: f64) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm().powf(p)).sum();
    (s / a.len() as f64).powf(1.0 / p)
}

fn admissible_probes(cfg: &Configuration, probes: &[C64], avoid: &[C64], exclusion: f64) -> Result<Vec<C64>> {
    let grids = cfg.body_grids()?;
    let outer = cfg.outer_grid();
    Ok(probes
        .iter()
        .cloned()
        .filter(|&z| {
            outer.z.iter().all(|&w| (w - z).norm() > exclusion)
                && grids.iter().all(|g| g.z.iter().all(|&w| (w - z).norm() > exclusion) && (z - g.center).norm() > exclusion)
                && avoid.iter().all(|&w| (w - z).norm() > exclusion)
                && grids.iter().all(|g| !inside(&g.z, z))
        })
        .collect())
}

fn inside(nodes: &[C64], z: C64) -> bool {
    let m = nodes.len();
    let w: f64 = (0..m).map(|i| ((nodes[(i + 1) % m] - z) / (nodes[i] - z)).arg()).sum();
    w.abs() > std::f64::consts::PI
}

fn compare_member(
    scenario: &Scenario,
    eps: f64,
    limit_sys: &LimitSystem,
    limit: &StoredRun<LimitState>,
    opts: &SweepOptions,
) -> Result<(SweepMember, Vec<Sample>)> {
    let (sys, state) = scenario.full_system(Some(eps))?;
    let run = record_full(&sys, &state, scenario.numerics.dt, scenario.numerics.t_end)?;
    let small = scenario.small_bodies();
    let big = scenario.big_bodies();
    let n = run.states.len().min(limit.states.len());

    let mut body_errors: Vec<BodyError> = small
        .iter()
        .map(|&b| BodyError { body: b, family: scenario.bodies[b].family, sup_error: 0.0 })
        .chain(big.iter().map(|&b| BodyError { body: b, family: Family::I, sup_error: 0.0 }))
        .collect();
    let mut vorticity_gap: f64 = 0.0;
    for k in 0..n {
        let fs = &run.states[k];
        let ls = &limit.states[k];
        for (i, &b) in small.iter().enumerate() {
            let e = (fs.poses[b].h - ls.vortices[i].position).norm();
            body_errors[i].sup_error = nan_max(body_errors[i].sup_error, e);
        }
        for (i, &b) in big.iter().enumerate() {
            let e = (fs.poses[b].h - ls.poses[i].h).norm().max((fs.poses[b].theta - ls.poses[i].theta).abs());
            let slot = &mut body_errors[small.len() + i];
            slot.sup_error = nan_max(slot.sup_error, e);
        }
        let mf = vorticity_moments(&fs.blobs);
        let ml = vorticity_moments(&ls.blobs);
        for (a, b) in mf.iter().zip(&ml) {
            vorticity_gap = nan_max(vorticity_gap, (a - b).abs());
        }
    }

    let mut velocity_gap: f64 = 0.0;
    for k in (0..n).step_by(opts.field_stride.max(1)) {
        let fs = &run.states[k];
        let ls = &limit.states[k];
        let full_snap = sys.snapshot(fs)?;
        let limit_snap = limit_sys.snapshot(ls)?;
        let mut avoid: Vec<C64> = ls.vortices.iter().map(|v| v.position).collect();
        avoid.extend(small.iter().map(|&b| fs.poses[b].h));
        let pts = admissible_probes(&full_snap.config, &opts.probes, &avoid, opts.exclusion)?;
        let uf: Vec<C64> = pts.iter().map(|&z| full_snap.flow.velocity(z)).collect();
        let ul: Vec<C64> = pts.iter().map(|&z| limit_snap.flow.velocity(z)).collect();
        velocity_gap = nan_max(velocity_gap, lp_gap(&uf, &ul, opts.lp));
    }

    let mut modulation = Vec::new();
    if opts.modulation {
        for &b in &small {
            let series = modulation_diagnostics(&sys, &run.states[..run.states.len()], b)?;
            modulation.push(ModulationSummary {
                body: b,
                sup_residual: series.sup_residual(),
                sup_beta: series.sup_beta(),
                sup_gyro_identity_gap: series.sup_gyro_identity_gap(),
            });
        }
    }

    let member = SweepMember {
        epsilon: eps,
        samples: n,
        t_reached: run.states.last().map(|s| s.t).unwrap_or(0.0),
        body_errors,
        velocity_gap,
        vorticity_gap,
        modulation,
        breach: run.breach.clone(),
    };
    Ok((member, run.samples(scenario.outputs.stride)))
}

/// Run the limit system once and the full system at every scale in `eps`
/// (members in parallel), and tabulate the gaps.  The family of each body is
/// the one declared in the scenario; scales apply to families (ii) and (iii).
/// Breaches end the affected trajectory early; the comparison then covers the
/// common time range and the breach is recorded in the table.
pub fn convergence_sweep(scenario: &Scenario, eps: &[f64], opts: &SweepOptions) -> Result<SweepOutput> {
    if eps.is_empty() {
        return Err(Error::invalid("empty scale list"));
    }
    let (limit_sys, limit_state) = scenario.limit_system()?;
    let limit = record_limit(&limit_sys, &limit_state, scenario.numerics.dt, scenario.numerics.t_end)?;
    let rows: Vec<(SweepMember, Vec<Sample>)> =
        eps.par_iter().map(|&e| compare_member(scenario, e, &limit_sys, &limit, opts)).collect::<Result<Vec<_>>>()?;
    let (members, member_samples): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(SweepOutput {
        table: SweepTable { dt: scenario.numerics.dt, t_end: scenario.numerics.t_end, members, limit_breach: limit.breach.clone() },
        limit_samples: limit.samples(scenario.outputs.stride),
        member_samples,
    })
}

// ---------------------------------------------------------------------------
// Modulation diagnostics

/// Modulation quantities of one small body at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulationPoint {
    pub t: f64,
    /// `(V₁, V₂, V₄, V₅)`: the value and the traceless symmetric gradient of
    /// the exterior field `ǔ` at the body centre.
    pub v: [f64; 4],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub zeta: [f64; 2],
    /// Modulated velocity `p̄ = p − (α + β, 0)`.
    pub pbar: [f64; 3],
    /// Gyroscopic term `B_j = −γ Σ_k p̄_k ∮ ∂_nψ̂ ξ_k^⊥·ξ_j ds`.
    pub gyro: [f64; 3],
    /// `|(B₁, B₂) − γ((p̄₁, p̄₂)^⊥ − p̄₃ ζ)|`.
    pub gyro_identity_gap: f64,
    /// `ℳ_g p′ + ℳ_a p̄′ + ½ℳ_a′ p̄ − B` (absent within two samples of either end).
    pub residual: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulationSeries {
    pub body: usize,
    pub points: Vec<ModulationPoint>,
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl ModulationSeries {
    pub fn sup_residual(&self) -> f64 {
        self.points.iter().filter_map(|p| p.residual.as_ref()).map(norm3).fold(0.0, nan_max)
    }

    pub fn sup_beta(&self) -> f64 {
        self.points.iter().map(|p| p.beta[0].hypot(p.beta[1])).fold(0.0, nan_max)
    }

    pub fn sup_alpha(&self) -> f64 {
        self.points.iter().map(|p| p.alpha[0].hypot(p.alpha[1])).fold(0.0, nan_max)
    }

    pub fn sup_gyro_identity_gap(&self) -> f64 {
        self.points.iter().map(|p| p.gyro_identity_gap).fold(0.0, nan_max)
    }
}

/// Fourth-order central difference at interior index `i` (`2 ≤ i < n − 2`).
pub fn central_difference4(f: &[f64], i: usize, dt: f64) -> f64 {
    (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * dt)
}

/// `∮ ∂_nψ̂ ξ_k^⊥·ξ_j ds` for `k, j ∈ 1..=5` (1-based, stored 0-based).
pub fn gyro_matrix(bundle: &PotentialBundle, k: usize) -> [[f64; 5]; 5] {
    let g = &bundle.grids[k];
    let tr = bundle.psi_hat[k].trace(g);
    let dn: Vec<f64> = (0..g.len()).map(|s| dot(tr.gradient[s], g.normal[s])).collect();
    let mut m = [[0.0; 5]; 5];
    for (a, row) in m.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = g.integrate(|s| {
                let r = g.z[s] - g.center;
                dn[s] * dot(perp(xi_at(a + 1, r)), xi_at(b + 1, r))
            });
        }
    }
    m
}

/// Time series of the modulation quantities of small body `k` along stored
/// states (uniformly spaced in time).  Time derivatives use fourth-order
/// central differences; the two samples at either end carry no residual.
pub fn modulation_diagnostics(sys: &FullSystem, states: &[FullState], k: usize) -> Result<ModulationSeries> {
    if k >= sys.bodies.len() || sys.config.bodies[k].family == Family::I {
        return Err(Error::invalid(format!("body {k} is not a small body")));
    }
    let gamma_all = sys.gammas();
    let gamma = gamma_all[k];
    let modes = 3;
    struct Raw {
        point: ModulationPoint,
        p: [f64; 3],
        ma: DMatrix<f64>,
    }
    let raws: Vec<Raw> = states
        .par_iter()
        .map(|st| -> Result<Raw> {
            let snap = sys.snapshot(st)?;
            let bundle = &snap.bundle;
            let phantom = bundle.phantom(k)?;
            let u = phantom.modulation_field(&st.velocities, &gamma_all, &st.blobs)?;
            let h = st.poses[k].h;
            let v12 = u.velocity(h);
            let grad = u.velocity_gradient(h);
            let v4 = 0.5 * (grad[1][1] - grad[0][0]);
            let v5 = 0.5 * (grad[0][1] + grad[1][0]);
            let zeta = bundle.conformal_center(k);
            let beta = [-v4 * zeta.re + v5 * zeta.im, v5 * zeta.re + v4 * zeta.im];
            let alpha = [v12.re, v12.im];
            let p = st.velocities[k];
            let pbar = [p[0] - alpha[0] - beta[0], p[1] - alpha[1] - beta[1], p[2]];
            let gm = gyro_matrix(bundle, k);
            let mut gyro = [0.0; 3];
            for (j, g) in gyro.iter_mut().enumerate() {
                *g = -gamma * (0..3).map(|kk| pbar[kk] * gm[kk][j]).sum::<f64>();
            }
            let expected = gamma * (C64::new(-pbar[1], pbar[0]) - pbar[2] * zeta);
            let gap = (C64::new(gyro[0], gyro[1]) - expected).norm();
            let full = bundle.added_mass();
            let ma = full.view((modes * k, modes * k), (modes, modes)).into_owned();
            Ok(Raw {
                point: ModulationPoint {
                    t: st.t,
                    v: [v12.re, v12.im, v4, v5],
                    alpha,
                    beta,
                    zeta: [zeta.re, zeta.im],
                    pbar,
                    gyro,
                    gyro_identity_gap: gap,
                    residual: None,
                },
                p,
                ma,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = raws.len();
    let mut points: Vec<ModulationPoint> = raws.iter().map(|r| r.point.clone()).collect();
    if n >= 5 {
        let dt = (raws[n - 1].point.t - raws[0].point.t) / (n - 1) as f64;
        for w in raws.windows(2) {
            if ((w[1].point.t - w[0].point.t) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::InvalidData("modulation diagnostics need uniformly spaced samples".into()));
            }
        }
        let (m, j) = (sys.bodies[k].mass, sys.bodies[k].inertia);
        let mg = [m, m, j];
        let comp = |f: &dyn Fn(&Raw) -> f64| -> Vec<f64> { raws.iter().map(f).collect() };
        let p_series: Vec<Vec<f64>> = (0..3).map(|c| comp(&|r: &Raw| r.p[c])).collect();
        let pbar_series: Vec<Vec<f64>> = (0..3).map(|c| comp(&|r: &Raw| r.point.pbar[c])).collect();
        let ma_series: Vec<Vec<Vec<f64>>> =
            (0..3).map(|a| (0..3).map(|b| comp(&|r: &Raw| r.ma[(a, b)])).collect()).collect();
        for i in 2..n - 2 {
            let dp: Vec<f64> = (0..3).map(|c| central_difference4(&p_series[c], i, dt)).collect();
            let dpbar: Vec<f64> = (0..3).map(|c| central_difference4(&pbar_series[c], i, dt)).collect();
            let r = &raws[i];
            let mut res = [0.0; 3];
            for a in 0..3 {
                let mut v = mg[a] * dp[a] - r.point.gyro[a];
                for b in 0..3 {
                    let dma = central_difference4(&ma_series[a][b], i, dt);
                    v += r.ma[(a, b)] * dpbar[b] + 0.5 * dma * r.point.pbar[b];
                }
                res[a] = v;
            }
            points[i].residual = Some(res);
        }
    }
    Ok(ModulationSeries { body: k, points })
}

// ---------------------------------------------------------------------------
// Estimate checks

/// One body of an estimate fixture; bodies of families (ii)/(iii) are scaled
/// by the swept `ε`.
#[derive(Clone, Debug)]
pub struct FixtureBody {
    pub shape: BodyShape,
    pub pose: Pose,
    pub family: Family,
}

/// Geometry on which the potential estimates are measured.
#[derive(Clone, Debug)]
pub struct EstimateFixture {
    pub outer: OuterDomain,
    pub bodies: Vec<FixtureBody>,
    /// Index of the small body whose potentials are probed.
    pub probe: usize,
    pub blobs: Vec<VortexElement>,
    pub delta: f64,
    /// Radius of the ring (around the probed body) on which `∇^⊥ψ̂` is compared with the point-vortex field.
    pub ring_radius: f64,
    /// Probe points for the Biot–Savart comparison.
    pub probes: Vec<C64>,
    /// The Biot–Savart comparison skips probes closer than this to a small body.
    pub far_field: f64,
}

impl EstimateFixture {
    /// Unit disc holding one small asymmetric body, one fixed-size ellipse and a blob.
    pub fn standard(panels: usize) -> Result<Self> {
        let outer = OuterDomain::disc(1.0, C64::new(0.0, 0.0), 2 * panels)?;
        let small = BodyShape::fourier(&[(1, C64::new(1.0, 0.0)), (-1, C64::new(0.2, 0.0)), (2, C64::new(0.1, 0.05))], panels)?;
        let big = BodyShape::ellipse(0.25, 0.15, panels)?;
        let probes = probe_grid(&outer, 16);
        Ok(EstimateFixture {
            outer,
            bodies: vec![
                FixtureBody { shape: small, pose: Pose::new(0.3, 0.15, 0.4), family: Family::III },
                FixtureBody { shape: big, pose: Pose::new(-0.4, -0.3, 0.3), family: Family::I },
            ],
            probe: 0,
            blobs: vec![VortexElement::blob(C64::new(0.1, -0.6), 1.0, 0.05)],
            delta: 0.02,
            ring_radius: 1.0,
            probes,
            far_field: 0.1,
        })
    }

    /// Unit disc holding two small bodies and one fixed-size body.
    pub fn two_small(panels: usize) -> Result<Self> {
        let mut f = Self::standard(panels)?;
        let second = BodyShape::ellipse(1.0, 0.5, panels)?;
        f.bodies.push(FixtureBody { shape: second, pose: Pose::new(0.35, -0.35, -0.2), family: Family::II });
        Ok(f)
    }

    pub fn configuration(&self, eps: f64) -> Configuration {
        Configuration {
            outer: self.outer.clone(),
            bodies: self
                .bodies
                .iter()
                .map(|b| Body {
                    shape: b.shape.clone(),
                    epsilon: if b.family == Family::I { 1.0 } else { eps },
                    pose: b.pose,
                    family: b.family,
                })
                .collect(),
            delta: self.delta,
        }
    }
}

/// Raw measurements at one scale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateMeasurement {
    pub epsilon: f64,
    /// Sum of the scales of the small bodies.
    pub epsilon_sum: f64,
    /// `sup |∇φ_{κ,j} − ∇φ̂_{κ,j}|` over every boundary, `j = 1, 2, 3`.
    pub kirchhoff_gap: [f64; 3],
    /// `sup |∇ψ^r_κ|` over every boundary.
    pub reflected_stream_gradient: f64,
    /// `sup |K[ω] − Ǩ[ω]|` on the probes at least `far_field` away from the small bodies.
    pub biot_savart_gap: f64,
    /// `sup |∇^⊥ψ̂_κ − H_κ|` on the ring.
    pub point_vortex_gap: f64,
    /// Largest entry of `ℳ_{a,κκ} − ℳ̂_{a,κ}`.
    pub added_mass_gap: f64,
    /// Operator-norm estimate of the reflection map `𝒯`.
    pub reflection_norm: f64,
    /// Mean per-sweep contraction ratio of the reflection iteration.
    pub sweep_ratio: f64,
}

/// One pass/fail line of the estimate report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateCheck {
    pub name: String,
    pub samples: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub requirement: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub measurements: Vec<EstimateMeasurement>,
    pub checks: Vec<EstimateCheck>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&EstimateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn sup_gradient_gap(bundle: &PotentialBundle, a: &crate::laplace::HarmonicField, b: &crate::laplace::HarmonicField) -> f64 {
    bundle
        .all_grids()
        .map(|g| {
            let ta = a.trace(g).gradient;
            let tb = b.trace(g).gradient;
            ta.iter().zip(&tb).map(|(x, y)| (x - y).norm()).fold(0.0, nan_max)
        })
        .fold(0.0, nan_max)
}

/// Measure every estimate at one scale.
pub fn measure_estimates(fixture: &EstimateFixture, eps: f64) -> Result<EstimateMeasurement> {
    let cfg = fixture.configuration(eps);
    cfg.validate()?;
    let k = fixture.probe;
    if cfg.bodies.get(k).map(|b| b.family) == Some(Family::I) || k >= cfg.bodies.len() {
        return Err(Error::invalid("the probed body must be a small body"));
    }
    let bundle = PotentialBundle::new(&cfg, BundleOptions { standalone_kirchhoff: true, ..Default::default() })?;

    let mut kirchhoff_gap = [0.0; 3];
    for (j, gap) in kirchhoff_gap.iter_mut().enumerate() {
        *gap = sup_gradient_gap(&bundle, &bundle.kirchhoff[k][j], &bundle.kirchhoff_hat[k][j]);
    }
    let reflected_stream_gradient = sup_gradient_gap(&bundle, &bundle.psi[k], &bundle.psi_hat[k]);

    let biot_savart_gap = if fixture.blobs.is_empty() {
        0.0
    } else {
        let k_full = bundle.biot_savart(&fixture.blobs)?;
        let k_final = biot_savart(&final_configuration(&cfg), &fixture.blobs)?;
        let small_centres: Vec<C64> = cfg.bodies.iter().filter(|b| b.family != Family::I).map(|b| b.pose.h).collect();
        let pts = admissible_probes(&cfg, &fixture.probes, &[], fixture.delta)?;
        pts.iter()
            .filter(|&&z| small_centres.iter().all(|&c| (z - c).norm() >= fixture.far_field))
            .map(|&z| (k_full.velocity(z) - k_final.velocity(z)).norm())
            .fold(0.0, nan_max)
    };

    let h = cfg.bodies[k].pose.h;
    let ring = 128;
    let point_vortex_gap = (0..ring)
        .map(|i| {
            let x = h + C64::from_polar(fixture.ring_radius, 2.0 * std::f64::consts::PI * i as f64 / ring as f64);
            let u = perp(bundle.psi_hat[k].gradient(x));
            let r = x - h;
            let hk = perp(r) / (2.0 * std::f64::consts::PI * r.norm_sqr());
            (u - hk).norm()
        })
        .fold(0.0, nan_max);

    let d = bundle.options.modes;
    let ma = bundle.added_mass();
    let block = ma.view((d * k, d * k), (d, d)).into_owned();
    let hat = bundle.standalone_added_mass(k)?;
    let added_mass_gap = (block - hat).abs().max();

    let ws = ReflectionWorkspace::new(&cfg)?;
    let reflection_norm = ws.operator_norm_estimate(4)?;
    let mut data = ws.zero_data();
    let g = &ws.grids[k];
    for (s, v) in data.bodies[k].iter_mut().enumerate() {
        *v = (g.z[s] - g.center).re / eps;
    }
    let outcome = ws.solve_h(&data, 1e-12, 200)?;
    let sweep_ratio = outcome.log.mean_ratio();

    let epsilon_sum = cfg.bodies.iter().filter(|b| b.family != Family::I).map(|b| b.epsilon).sum();
    Ok(EstimateMeasurement {
        epsilon: eps,
        epsilon_sum,
        kirchhoff_gap,
        reflected_stream_gradient,
        biot_savart_gap,
        point_vortex_gap,
        added_mass_gap,
        reflection_norm,
        sweep_ratio,
    })
}

fn slope_check(name: &str, samples: Vec<(f64, f64)>, min_slope: f64) -> EstimateCheck {
    let fit = rate_fit(&samples).ok();
    let passed = fit.map(|f| f.slope >= min_slope).unwrap_or(false);
    EstimateCheck { name: name.into(), samples, fit, requirement: format!("log-log slope >= {min_slope}"), passed }
}

/// Measure the estimates over `eps` (in parallel) and grade them:
/// Kirchhoff gaps with slopes ≥ 1.8 (translations) and ≥ 2.8 (rotation),
/// `∇ψ^r` bounded within twice its first value, `K − Ǩ` strictly
/// decreasing, `∇^⊥ψ̂ → H` with slope ≥ 0.8, added-mass gap with slope ≥ 1.8,
/// and reflection contraction below 1/2 once every scale is at most 0.05,
/// with an operator norm vanishing linearly in the total scale.
pub fn estimate_checks(fixture: &EstimateFixture, eps: &[f64]) -> Result<EstimateReport> {
    if eps.len() < 3 {
        return Err(Error::invalid("estimate checks need at least three scales"));
    }
    let measurements: Vec<EstimateMeasurement> =
        eps.par_iter().map(|&e| measure_estimates(fixture, e)).collect::<Result<Vec<_>>>()?;
    let series = |f: &dyn Fn(&EstimateMeasurement) -> f64| -> Vec<(f64, f64)> { measurements.iter().map(|m| (m.epsilon, f(m))).collect() };
    let mut checks = vec![
        slope_check("kirchhoff_gap_j1", series(&|m| m.kirchhoff_gap[0]), 1.8),
        slope_check("kirchhoff_gap_j2", series(&|m| m.kirchhoff_gap[1]), 1.8),
        slope_check("kirchhoff_gap_j3", series(&|m| m.kirchhoff_gap[2]), 2.8),
    ];
    let w = series(&|m| m.reflected_stream_gradient);
    let bound = 2.0 * w[0].1;
    checks.push(EstimateCheck {
        name: "reflected_stream_bounded".into(),
        passed: w.iter().all(|s| s.1 <= bound && s.1.is_finite()),
        samples: w,
        fit: None,
        requirement: "max over scales <= 2 x value at the first scale".into(),
    });
    let bs = series(&|m| m.biot_savart_gap);
    checks.push(EstimateCheck {
        name: "biot_savart_gap".into(),
        passed: strictly_decreasing(&bs.iter().map(|s| s.1).collect::<Vec<_>>()),
        samples: bs,
        fit: None,
        requirement: "strictly decreasing".into(),
    });
    checks.push(slope_check("point_vortex_limit", series(&|m| m.point_vortex_gap), 0.8));
    checks.push(slope_check("added_mass_gap", series(&|m| m.added_mass_gap), 1.8));

    let ratios: Vec<(f64, f64)> = measurements.iter().map(|m| (m.epsilon, m.sweep_ratio)).collect();
    checks.push(EstimateCheck {
        name: "reflection_sweep_ratio".into(),
        passed: ratios.iter().filter(|s| s.0 <= 0.05).all(|s| s.1 < 0.5) && ratios.iter().any(|s| s.0 <= 0.05),
        samples: ratios,
        fit: None,
        requirement: "per-sweep ratio < 0.5 whenever the scale is <= 0.05".into(),
    });
    let norms: Vec<(f64, f64)> = measurements.iter().map(|m| (m.epsilon_sum, m.reflection_norm)).collect();
    let fit = linear_fit(&norms).ok();
    let top = norms.iter().map(|s| s.1).fold(0.0, nan_max);
    checks.push(EstimateCheck {
        name: "reflection_norm_linear".into(),
        passed: fit.map(|f| f.slope > 0.0 && f.intercept.abs() <= 0.1 * top).unwrap_or(false),
        samples: norms,
        fit,
        requirement: "linear in the total scale with positive slope and |intercept| <= 0.1 x largest value".into(),
    });
    Ok(EstimateReport { measurements, checks })
}
