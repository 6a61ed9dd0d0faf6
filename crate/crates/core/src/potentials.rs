//! Named potentials of the fluid domain.
//!
//! For a configuration this module builds
//!
//! * Kirchhoff potentials `φ_{κ,j}`: `∂_n φ = K_{κ,j}` on body `κ`, zero on the
//!   other components (and their standalone counterparts `φ̂_{κ,j}`);
//! * circulation streams `ψ_κ` (zero on the outer boundary, constant on each
//!   body, unit circulation around body `κ` only) and standalone streams `ψ̂_κ`;
//! * Biot–Savart stream functions for blobs and point vortices;
//! * added-mass matrices, conformal centres, shape derivatives of Kirchhoff
//!   potentials and phantom-body fields.
//!
//! Neumann problems are always routed through the tangential-primitive
//! correspondence: `φ` is the harmonic conjugate of the modified-Dirichlet
//! solution `𝔣` whose data on the body is a primitive `ℬ` with `∂_τ ℬ = K`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dot, perp, rigid_velocity_at, xi_at, BoundaryGrid, Configuration, Family, I};
use crate::laplace::{
    boundary_mean, BoundaryData, ExteriorSolver, FieldTrace, HarmonicField, ModifiedDirichletSolution, ModifiedDirichletSolver,
    Source,
};
use crate::reflections::ReflectionWorkspace;

/// How the free additive constant of a Kirchhoff potential is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KirchhoffNormalization {
    /// Zero mean over the body's own boundary.
    #[default]
    ZeroMean,
    /// Equal to the standalone potential at the first node of the outer boundary.
    MatchStandaloneOnOuter,
}

/// Vortex element: a Gaussian blob of core `core`, or a point vortex when `core = 0`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VortexElement {
    pub position: C64,
    pub strength: f64,
    pub core: f64,
}

impl VortexElement {
    pub fn blob(position: C64, strength: f64, core: f64) -> Self {
        VortexElement { position, strength, core }
    }

    pub fn point(position: C64, strength: f64) -> Self {
        VortexElement { position, strength, core: 0.0 }
    }

    /// Free-space stream `Γ G(|x − z|)/(2π)` as a field source.
    pub fn source(&self) -> Source {
        Source { center: self.position, strength: self.strength / (2.0 * PI), core: self.core }
    }

    /// Free-space velocity induced at `x` (zero at the element's own centre).
    pub fn velocity_at(&self, x: C64) -> C64 {
        perp(self.source().strength * self.source().kernel_gradient(x))
    }
}

/// Vorticity carried by blobs (full system) and point vortices (limit system).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VorticityField {
    pub blobs: Vec<VortexElement>,
    pub points: Vec<VortexElement>,
}

impl VorticityField {
    pub fn elements(&self) -> impl Iterator<Item = &VortexElement> {
        self.blobs.iter().chain(self.points.iter())
    }

    pub fn total_strength(&self) -> f64 {
        self.elements().map(|e| e.strength).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty() && self.points.is_empty()
    }
}

/// Tangential primitive `ℬ_j` of `K_j` on a body grid (`∂_τ ℬ_j = K_j`).
pub fn rigid_primitive(grid: &BoundaryGrid, j: usize) -> Vec<f64> {
    grid.z
        .iter()
        .map(|&x| {
            let r = x - grid.center;
            match j {
                1 => -r.im,
                2 => r.re,
                3 => 0.5 * r.norm_sqr(),
                4 => r.re * r.im,
                5 => 0.5 * (r.re * r.re - r.im * r.im),
                _ => panic!("rigid mode index out of range: {j}"),
            }
        })
        .collect()
}

/// `K_j = n · ξ_j` on a body grid.
pub fn normal_mode(grid: &BoundaryGrid, j: usize) -> Vec<f64> {
    grid.z.iter().zip(&grid.normal).map(|(&x, &n)| dot(n, xi_at(j, x - grid.center))).collect()
}

/// How modified-Dirichlet problems are solved.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum SolverChoice {
    /// One dense Nyström system over every boundary component.
    #[default]
    Direct,
    /// Method of reflections around the small bodies (falls back to the direct
    /// solve when the iteration does not contract).
    Reflections { tol: f64, max_sweeps: usize },
}

/// Options for [`PotentialBundle::new`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BundleOptions {
    /// Number of rigid modes per body (3 for dynamics, 5 for diagnostics).
    pub modes: usize,
    pub normalization: KirchhoffNormalization,
    /// Also build standalone Kirchhoff potentials.
    pub standalone_kirchhoff: bool,
    pub solver: SolverChoice,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            modes: 3,
            normalization: KirchhoffNormalization::ZeroMean,
            standalone_kirchhoff: false,
            solver: SolverChoice::Direct,
        }
    }
}

/// Modified-Dirichlet solver selected by [`SolverChoice`].
enum Backend {
    Direct,
    Reflections { workspace: Box<ReflectionWorkspace>, tol: f64, max_sweeps: usize },
}

fn backend_solve(backend: &Backend, direct: &ModifiedDirichletSolver, data: &BoundaryData) -> Result<ModifiedDirichletSolution> {
    match backend {
        Backend::Direct => direct.solve(data),
        Backend::Reflections { workspace, tol, max_sweeps } => Ok(workspace.solve_h(data, *tol, *max_sweeps)?.solution),
    }
}

fn backend_neumann(backend: &Backend, direct: &ModifiedDirichletSolver, slot: usize, primitive: &[f64]) -> Result<HarmonicField> {
    match backend {
        Backend::Direct => direct.neumann_from_primitive(slot, primitive),
        Backend::Reflections { .. } => {
            let mut data = direct.zero_data();
            if slot >= data.bodies.len() {
                return Err(Error::invalid(format!("body slot {slot} out of range")));
            }
            data.bodies[slot].copy_from_slice(primitive);
            backend_solve(backend, direct, &data)?.field.conjugate()
        }
    }
}

/// Every potential of one configuration.
pub struct PotentialBundle {
    pub config: Configuration,
    pub outer: BoundaryGrid,
    pub grids: Vec<BoundaryGrid>,
    pub solver: ModifiedDirichletSolver,
    pub exterior: Vec<ExteriorSolver>,
    pub options: BundleOptions,
    backend: Backend,
    /// `φ_{κ,j}`, indexed `[κ][j−1]`.
    pub kirchhoff: Vec<Vec<HarmonicField>>,
    /// `φ̂_{κ,j}` when requested.
    pub kirchhoff_hat: Vec<Vec<HarmonicField>>,
    /// `ψ_κ`.
    pub psi: Vec<HarmonicField>,
    /// Constant of `ψ_κ` on body `ν`, indexed `[κ][ν]`.
    pub psi_constants: Vec<Vec<f64>>,
    /// `ψ̂_κ`.
    pub psi_hat: Vec<HarmonicField>,
    /// Constant of `ψ̂_κ` on its own body.
    pub psi_hat_constant: Vec<f64>,
}

impl PotentialBundle {
    pub fn new(cfg: &Configuration, options: BundleOptions) -> Result<Self> {
        let outer = cfg.outer_grid();
        let grids = cfg.body_grids()?;
        Self::from_grids(cfg, outer, grids, options)
    }

    pub fn from_grids(cfg: &Configuration, outer: BoundaryGrid, grids: Vec<BoundaryGrid>, options: BundleOptions) -> Result<Self> {
        if !(1..=5).contains(&options.modes) {
            return Err(Error::invalid("modes must be in 1..=5"));
        }
        let refs: Vec<&BoundaryGrid> = grids.iter().collect();
        let solver = ModifiedDirichletSolver::new(&outer, &refs)?;
        let backend = match options.solver {
            SolverChoice::Direct => Backend::Direct,
            SolverChoice::Reflections { tol, max_sweeps } => {
                let small: Vec<bool> = cfg.bodies.iter().map(|b| b.family != Family::I).collect();
                if small.len() != grids.len() {
                    return Err(Error::invalid("configuration and grids disagree on the number of bodies"));
                }
                let workspace = ReflectionWorkspace::from_grids(outer.clone(), grids.clone(), &small)?;
                Backend::Reflections { workspace: Box::new(workspace), tol, max_sweeps }
            }
        };
        let exterior = grids.par_iter().map(ExteriorSolver::new).collect::<Result<Vec<_>>>()?;
        let n = grids.len();

        let mut psi_hat = Vec::with_capacity(n);
        let mut psi_hat_constant = Vec::with_capacity(n);
        for (k, g) in grids.iter().enumerate() {
            let (f, c) = standalone_stream(&exterior[k], g);
            psi_hat.push(f);
            psi_hat_constant.push(c);
        }

        let kirchhoff_hat: Vec<Vec<HarmonicField>> = if options.standalone_kirchhoff || options.normalization == KirchhoffNormalization::MatchStandaloneOnOuter {
            (0..n)
                .into_par_iter()
                .map(|k| (1..=options.modes).map(|j| standalone_kirchhoff_on(&exterior[k], &grids[k], j)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let kirchhoff: Vec<Vec<HarmonicField>> = (0..n)
            .into_par_iter()
            .map(|k| {
                (1..=options.modes)
                    .map(|j| {
                        let phi = backend_neumann(&backend, &solver, k, &rigid_primitive(&grids[k], j))?;
                        Ok(match options.normalization {
                            KirchhoffNormalization::ZeroMean => {
                                let mean = boundary_mean(&grids[k], &phi.trace(&grids[k]).value);
                                phi.shifted(-mean)
                            }
                            KirchhoffNormalization::MatchStandaloneOnOuter => {
                                let x = outer.z[0];
                                let shift = kirchhoff_hat[k][j - 1].value(x) - phi.trace(&outer).value[0];
                                phi.shifted(shift)
                            }
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let mut psi = Vec::with_capacity(n);
        let mut psi_constants = Vec::with_capacity(n);
        for g in &grids {
            let (f, c) = circulation_stream_with(&|d| backend_solve(&backend, &solver, d), &outer, &grids, g.center)?;
            psi.push(f);
            psi_constants.push(c);
        }

        Ok(PotentialBundle {
            config: cfg.clone(),
            outer,
            grids,
            solver,
            exterior,
            options,
            backend,
            kirchhoff,
            kirchhoff_hat: if options.standalone_kirchhoff { kirchhoff_hat } else { Vec::new() },
            psi,
            psi_constants,
            psi_hat,
            psi_hat_constant,
        })
    }

    pub fn body_count(&self) -> usize {
        self.grids.len()
    }

    /// Modified-Dirichlet solve with the selected backend (constants indexed by body).
    pub fn solve(&self, data: &BoundaryData) -> Result<ModifiedDirichletSolution> {
        backend_solve(&self.backend, &self.solver, data)
    }

    /// Neumann field with tangential primitive `primitive` on body `k` (selected backend).
    pub fn neumann_from_primitive(&self, k: usize, primitive: &[f64]) -> Result<HarmonicField> {
        backend_neumann(&self.backend, &self.solver, k, primitive)
    }

    /// All grids: outer first, then bodies.
    pub fn all_grids(&self) -> impl Iterator<Item = &BoundaryGrid> {
        std::iter::once(&self.outer).chain(self.grids.iter())
    }

    /// Coupled added-mass matrix `∮ φ_{κ,i} K_{ν,j} ds` (`modes·N` square).
    pub fn added_mass(&self) -> DMatrix<f64> {
        let traces: Vec<Vec<Vec<f64>>> = self
            .kirchhoff
            .iter()
            .map(|row| row.iter().map(|f| self.grids.iter().flat_map(|g| f.trace(g).value).collect()).collect())
            .collect();
        self.added_mass_from_traces(&traces)
    }

    /// As [`Self::added_mass`] from precomputed value traces (concatenated over bodies).
    pub fn added_mass_from_traces(&self, traces: &[Vec<Vec<f64>>]) -> DMatrix<f64> {
        let d = self.options.modes;
        let n = self.grids.len();
        let mut offsets = vec![0usize; n];
        for k in 1..n {
            offsets[k] = offsets[k - 1] + self.grids[k - 1].len();
        }
        let modes: Vec<Vec<Vec<f64>>> = self.grids.iter().map(|g| (1..=d).map(|j| normal_mode(g, j)).collect()).collect();
        let mut m = DMatrix::zeros(d * n, d * n);
        for k in 0..n {
            for i in 0..d {
                for nu in 0..n {
                    let g = &self.grids[nu];
                    for j in 0..d {
                        let o = offsets[nu];
                        m[(d * k + i, d * nu + j)] = g.integrate(|s| traces[k][i][o + s] * modes[nu][j][s]);
                    }
                }
            }
        }
        m
    }

    /// Standalone added mass of body `κ` (`modes × modes`).
    pub fn standalone_added_mass(&self, k: usize) -> Result<DMatrix<f64>> {
        standalone_added_mass(&self.exterior[k], &self.grids[k], self.options.modes)
    }

    /// Conformal centre of body `κ`.
    pub fn conformal_center(&self, k: usize) -> C64 {
        conformal_center_from(&self.psi_hat[k], &self.grids[k])
    }

    /// Biot–Savart stream for the given vortex elements.
    pub fn biot_savart(&self, vorticity: &[VortexElement]) -> Result<BiotSavart> {
        biot_savart_with(&|d| self.solve(d), &self.outer, &self.grids, vorticity)
    }

    /// `u = Σ p ∇φ + Σ γ ∇^⊥ψ + K[ω]`.
    pub fn assemble_velocity(&self, p: &[[f64; 3]], gamma: &[f64], bs: Option<&BiotSavart>) -> FlowField {
        let mut potential = HarmonicField::zero();
        for (k, pk) in p.iter().enumerate() {
            for j in 0..3.min(self.options.modes) {
                potential.add_scaled(&self.kirchhoff[k][j], pk[j]);
            }
        }
        let mut stream = HarmonicField::zero();
        for (k, g) in gamma.iter().enumerate() {
            stream.add_scaled(&self.psi[k], *g);
        }
        if let Some(bs) = bs {
            stream.add_scaled(&bs.stream, 1.0);
        }
        FlowField { potential, stream }
    }

    /// Solved shape derivative `∂φ_{λ,ℓ}/∂q_{μ,m}` (modes are 1-based).
    pub fn shape_derivative_kirchhoff(&self, lambda: usize, l: usize, mu: usize, m: usize) -> Result<HarmonicField> {
        if lambda >= self.grids.len() || mu >= self.grids.len() || l == 0 || l > self.options.modes || !(1..=3).contains(&m) {
            return Err(Error::invalid("shape derivative index out of range"));
        }
        let g = &self.grids[mu];
        let tr = self.kirchhoff[lambda][l - 1].trace(g);
        let data = shape_derivative_data(g, &tr, lambda == mu, l, m);
        self.neumann_from_primitive(mu, &data)
    }

    /// Phantom-body fields for body `κ` (the domain with body `κ` removed).
    pub fn phantom(&self, k: usize) -> Result<PhantomBundle> {
        PhantomBundle::new(self, k)
    }
}

/// Boundary data `G` on `∂S_μ` of the shape derivative `∂φ_{λ,ℓ}/∂q_{μ,m}`:
/// `(∂_τφ_{λ,ℓ} − δ_{λμ} ξ_{λ,ℓ}·τ) K_{μ,m} + δ_{λμ} δ_{ℓ≥3} δ_{m≤2} ξ^⊥_{λ,ℓ}·e_m`.
pub fn shape_derivative_data(g: &BoundaryGrid, phi_trace: &FieldTrace, same_body: bool, l: usize, m: usize) -> Vec<f64> {
    (0..g.len())
        .map(|s| {
            let r = g.z[s] - g.center;
            let tau = g.tangent[s];
            let k_m = dot(g.normal[s], xi_at(m, r));
            let mut v = dot(phi_trace.gradient[s], tau);
            if same_body {
                v -= dot(xi_at(l, r), tau);
            }
            let mut out = v * k_m;
            if same_body && l >= 3 && m <= 2 {
                let e = if m == 1 { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
                out += dot(perp(xi_at(l, r)), e);
            }
            out
        })
        .collect()
}

/// Standalone stream `ψ̂ = log|x − h|/2π + 𝔣̂[−log|· − h|/2π]` and its constant on the body.
fn standalone_stream(ext: &ExteriorSolver, g: &BoundaryGrid) -> (HarmonicField, f64) {
    let src = Source { center: g.center, strength: 1.0 / (2.0 * PI), core: 0.0 };
    let data: Vec<f64> = g.z.iter().map(|&x| -src.strength * src.kernel(x)).collect();
    let sol = ext.solve(&data);
    let mut f = sol.field;
    f.add_scaled(&HarmonicField::from_sources(vec![src]), 1.0);
    (f, sol.constant)
}

/// Standalone circulation stream of a single body.
pub fn standalone_circulation_stream(g: &BoundaryGrid) -> Result<(HarmonicField, f64)> {
    Ok(standalone_stream(&ExteriorSolver::new(g)?, g))
}

fn standalone_kirchhoff_on(ext: &ExteriorSolver, g: &BoundaryGrid, j: usize) -> Result<HarmonicField> {
    let phi = ext.solve(&rigid_primitive(g, j)).field.conjugate()?;
    let mean = boundary_mean(g, &phi.trace(g).value);
    Ok(phi.shifted(-mean))
}

/// Standalone Kirchhoff potential `φ̂_j` of one placed body (zero mean on its boundary).
pub fn standalone_kirchhoff(g: &BoundaryGrid, j: usize) -> Result<HarmonicField> {
    if !(1..=5).contains(&j) {
        return Err(Error::invalid(format!("rigid mode index must be in 1..=5, got {j}")));
    }
    standalone_kirchhoff_on(&ExteriorSolver::new(g)?, g, j)
}

/// Standalone added mass `∮ φ̂_i K_j ds`.
pub fn standalone_added_mass(ext: &ExteriorSolver, g: &BoundaryGrid, modes: usize) -> Result<DMatrix<f64>> {
    let phis = (1..=modes).map(|j| standalone_kirchhoff_on(ext, g, j)).collect::<Result<Vec<_>>>()?;
    let traces: Vec<Vec<f64>> = phis.iter().map(|f| f.trace(g).value).collect();
    let ks: Vec<Vec<f64>> = (1..=modes).map(|j| normal_mode(g, j)).collect();
    Ok(DMatrix::from_fn(modes, modes, |i, j| g.integrate(|s| traces[i][s] * ks[j][s])))
}

/// `ζ = −∮ (x − h) ∂_n ψ̂ ds`.
pub fn conformal_center_from(psi_hat: &HarmonicField, g: &BoundaryGrid) -> C64 {
    let tr = psi_hat.trace(g);
    -g.integrate_c(|s| (g.z[s] - g.center) * dot(tr.gradient[s], g.normal[s]))
}

/// Conformal centre of one placed body.
pub fn conformal_center(g: &BoundaryGrid) -> Result<C64> {
    let (f, _) = standalone_circulation_stream(g)?;
    Ok(conformal_center_from(&f, g))
}

/// Circulation stream with a log singularity at `center`, pinned to zero on the
/// outer boundary, constant on every body, zero flux through each body.
fn circulation_stream_with(
    solve: &(dyn Fn(&BoundaryData) -> Result<ModifiedDirichletSolution> + Sync),
    outer: &BoundaryGrid,
    grids: &[BoundaryGrid],
    center: C64,
) -> Result<(HarmonicField, Vec<f64>)> {
    let src = Source { center, strength: 1.0 / (2.0 * PI), core: 0.0 };
    let data = BoundaryData {
        outer: outer.z.iter().map(|&x| -src.strength * src.kernel(x)).collect(),
        bodies: grids.iter().map(|g| g.z.iter().map(|&x| -src.strength * src.kernel(x)).collect()).collect(),
    };
    let sol = solve(&data)?;
    let mut f = sol.field;
    f.add_scaled(&HarmonicField::from_sources(vec![src]), 1.0);
    Ok((f, sol.constants))
}

/// `ψ_κ` for body `κ` of a configuration, with its constants on every body.
pub fn circulation_stream(cfg: &Configuration, k: usize) -> Result<(HarmonicField, Vec<f64>)> {
    let outer = cfg.outer_grid();
    let grids = cfg.body_grids()?;
    let refs: Vec<&BoundaryGrid> = grids.iter().collect();
    let solver = ModifiedDirichletSolver::new(&outer, &refs)?;
    let center = grids.get(k).ok_or_else(|| Error::invalid(format!("body index {k} out of range")))?.center;
    circulation_stream_with(&|d| solver.solve(d), &outer, &grids, center)
}

/// Kirchhoff potential `φ_{κ,j}` of a configuration.
pub fn kirchhoff(cfg: &Configuration, k: usize, j: usize, normalization: KirchhoffNormalization) -> Result<HarmonicField> {
    if k >= cfg.bodies.len() || !(1..=5).contains(&j) {
        return Err(Error::invalid("Kirchhoff index out of range"));
    }
    let b = PotentialBundle::new(cfg, BundleOptions { modes: j.max(3), normalization, standalone_kirchhoff: false, ..Default::default() })?;
    Ok(b.kirchhoff[k][j - 1].clone())
}

/// Stream function of the Biot–Savart field: free-space element streams plus the
/// modified-Dirichlet correction that makes the outer boundary a streamline at
/// zero and every body a streamline with zero circulation.
#[derive(Clone, Debug)]
pub struct BiotSavart {
    pub stream: HarmonicField,
    /// Harmonic boundary correction (the stream minus the free-space element streams).
    pub correction: HarmonicField,
    /// Constant value of the stream on each body.
    pub body_constants: Vec<f64>,
    pub elements: Vec<VortexElement>,
}

impl BiotSavart {
    pub fn velocity(&self, x: C64) -> C64 {
        I * self.stream.gradient(x)
    }

    /// Stream at the centre of element `i` with that element's own free-space
    /// term removed.
    pub fn stream_without_self(&self, i: usize) -> f64 {
        let x = self.elements[i].position;
        let mut v = self.correction.value(x);
        for (k, e) in self.elements.iter().enumerate() {
            if k != i {
                let src = e.source();
                v += src.strength * src.kernel(x);
            }
        }
        v
    }
}

fn biot_savart_with(
    solve: &(dyn Fn(&BoundaryData) -> Result<ModifiedDirichletSolution> + Sync),
    outer: &BoundaryGrid,
    grids: &[BoundaryGrid],
    elements: &[VortexElement],
) -> Result<BiotSavart> {
    let free = HarmonicField::from_sources(elements.iter().map(|e| e.source()).collect());
    let sample = |g: &BoundaryGrid| -> Vec<f64> { g.z.iter().map(|&x| -free.value(x)).collect() };
    let data = BoundaryData { outer: sample(outer), bodies: grids.iter().map(sample).collect() };
    let sol = solve(&data)?;
    let correction = sol.field;
    let mut stream = correction.clone();
    stream.add_scaled(&free, 1.0);
    Ok(BiotSavart { stream, correction, body_constants: sol.constants, elements: elements.to_vec() })
}

/// Biot–Savart operator for a configuration.
pub fn biot_savart(cfg: &Configuration, vorticity: &[VortexElement]) -> Result<BiotSavart> {
    let outer = cfg.outer_grid();
    let grids = cfg.body_grids()?;
    let refs: Vec<&BoundaryGrid> = grids.iter().collect();
    let solver = ModifiedDirichletSolver::new(&outer, &refs)?;
    biot_savart_with(&|d| solver.solve(d), &outer, &grids, vorticity)
}

/// A velocity field `u = ∇Φ + ∇^⊥Ψ`.
#[derive(Clone, Debug, Default)]
pub struct FlowField {
    pub potential: HarmonicField,
    pub stream: HarmonicField,
}

impl FlowField {
    pub fn velocity(&self, x: C64) -> C64 {
        self.potential.gradient(x) + I * self.stream.gradient(x)
    }

    /// Velocity gradient `[[∂₁u₁, ∂₂u₁], [∂₁u₂, ∂₂u₂]]`.
    pub fn velocity_gradient(&self, x: C64) -> [[f64; 2]; 2] {
        let p = self.potential.hessian(x);
        let s = self.stream.hessian(x);
        // u = (Φ_x − Ψ_y, Φ_y + Ψ_x)
        [[p[0] - s[1], p[1] - s[2]], [p[1] + s[0], p[2] + s[1]]]
    }

    /// Velocity trace on a boundary grid.
    pub fn trace(&self, g: &BoundaryGrid) -> Vec<C64> {
        let a = self.potential.trace(g).gradient;
        let b = self.stream.trace(g).gradient;
        a.into_iter().zip(b).map(|(x, y)| x + I * y).collect()
    }

    pub fn add_scaled(&mut self, other: &FlowField, s: f64) {
        self.potential.add_scaled(&other.potential, s);
        self.stream.add_scaled(&other.stream, s);
    }
}

/// Fields of the domain in which one body (the phantom) has been removed.
pub struct PhantomBundle {
    pub removed: usize,
    /// Bundle for the configuration without the removed body.
    pub inner: PotentialBundle,
    /// Map from original body index to index inside `inner` (`None` for the removed one).
    pub index: Vec<Option<usize>>,
    /// `ψ^{r,¬κ}_κ`: data `−ψ̂_κ` on every remaining component, zero fluxes.
    pub psi_r_phantom: HarmonicField,
}

impl PhantomBundle {
    fn new(b: &PotentialBundle, k: usize) -> Result<Self> {
        let mut cfg = b.config.clone();
        cfg.bodies.remove(k);
        let grids: Vec<BoundaryGrid> = b.grids.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, g)| g.clone()).collect();
        let inner = PotentialBundle::from_grids(&cfg, b.outer.clone(), grids, BundleOptions { modes: 3, ..b.options })?;
        let index = (0..b.grids.len()).map(|i| if i == k { None } else if i < k { Some(i) } else { Some(i - 1) }).collect();
        let hat = &b.psi_hat[k];
        let data = BoundaryData {
            outer: hat.trace(&inner.outer).value.iter().map(|v| -v).collect(),
            bodies: inner.grids.iter().map(|g| hat.trace(g).value.iter().map(|v| -v).collect()).collect(),
        };
        let psi_r_phantom = inner.solve(&data)?.field;
        Ok(PhantomBundle { removed: k, inner, index, psi_r_phantom })
    }

    /// `ǔ_κ = Σ_{ν≠κ} p_ν∇φ^{¬κ}_ν + Σ_{ν≠κ} γ_ν∇^⊥ψ^{¬κ}_ν + K^{¬κ}[ω] + γ_κ∇^⊥ψ^{r,¬κ}_κ`.
    pub fn modulation_field(&self, p: &[[f64; 3]], gamma: &[f64], vorticity: &[VortexElement]) -> Result<FlowField> {
        let mut pp = Vec::new();
        let mut gg = Vec::new();
        for (i, slot) in self.index.iter().enumerate() {
            if slot.is_some() {
                pp.push(p[i]);
                gg.push(gamma[i]);
            }
        }
        let bs = if vorticity.is_empty() { None } else { Some(self.inner.biot_savart(vorticity)?) };
        let mut u = self.inner.assemble_velocity(&pp, &gg, bs.as_ref());
        u.stream.add_scaled(&self.psi_r_phantom, gamma[self.removed]);
        Ok(u)
    }
}

/// Bodies of the final domain (family (i) only).
pub fn final_configuration(cfg: &Configuration) -> Configuration {
    let mut c = cfg.clone();
    c.bodies.retain(|b| b.family == Family::I);
    c
}

/// Rigid velocity `v_S` of body with centre `h` and velocity `p` at `x`.
#[inline]
pub fn solid_velocity(h: C64, p: [f64; 3], x: C64) -> C64 {
    rigid_velocity_at(h, p, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{place_body, Body, BodyShape, OuterDomain, Pose};

    #[test]
    fn primitives_have_tangential_derivative_k() {
        let s = BodyShape::fourier(&[(1, C64::new(1.0, 0.0)), (-2, C64::new(0.15, 0.05))], 128).unwrap();
        let g = place_body(&s, 0.7, &Pose::new(0.4, -0.3, 0.6)).unwrap();
        for j in 1..=5 {
            let b = rigid_primitive(&g, j);
            let bt = crate::laplace::spectral_derivative_real(&b);
            let k = normal_mode(&g, j);
            for m in 0..g.len() {
                let ds_dt = g.dz[m].norm() * dot(g.tangent[m], g.dz[m] / g.dz[m].norm());
                assert!((bt[m] / ds_dt - k[m]).abs() < 1e-10, "mode {j}");
            }
        }
    }

    #[test]
    fn standalone_circle_stream_is_log_kernel() {
        let g = place_body(&BodyShape::circle(1.0, 64).unwrap(), 1.0, &Pose::new(0.5, 0.5, 0.0)).unwrap();
        let (f, _) = standalone_circulation_stream(&g).unwrap();
        let x = C64::new(2.5, 0.5);
        assert!(((I * f.gradient(x)).norm() - 1.0 / (4.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn kirchhoff_neumann_conditions() {
        let s = BodyShape::ellipse(0.6, 0.3, 96).unwrap();
        let cfg = Configuration {
            outer: OuterDomain::disc(3.0, C64::new(0.0, 0.0), 128).unwrap(),
            bodies: vec![
                Body { shape: s.clone(), epsilon: 1.0, pose: Pose::new(-0.8, 0.2, 0.4), family: Family::I },
                Body { shape: s, epsilon: 1.0, pose: Pose::new(0.9, -0.3, -0.2), family: Family::I },
            ],
            delta: 0.05,
        };
        let b = PotentialBundle::new(&cfg, BundleOptions { modes: 5, ..Default::default() }).unwrap();
        for k in 0..2 {
            for j in 1..=5 {
                let f = &b.kirchhoff[k][j - 1];
                for (nu, g) in b.grids.iter().enumerate() {
                    let tr = f.trace(g);
                    let want = if nu == k { normal_mode(g, j) } else { vec![0.0; g.len()] };
                    for m in 0..g.len() {
                        assert!((dot(tr.gradient[m], g.normal[m]) - want[m]).abs() < 1e-9);
                    }
                }
                let tr = f.trace(&b.outer);
                for m in 0..b.outer.len() {
                    assert!(dot(tr.gradient[m], b.outer.normal[m]).abs() < 1e-9);
                }
            }
        }
        let ma = b.added_mass();
        assert!((&ma - ma.transpose()).amax() < 1e-9 * ma.amax());
    }
}
