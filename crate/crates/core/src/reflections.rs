//! Method of reflections for the modified Dirichlet problem with small bodies.
//!
//! The fluid boundary splits into the *final* components (outer boundary and
//! fixed-size bodies) and the small bodies.  Each small body is handled by its
//! own exterior solver; the final components by one modified-Dirichlet solve
//! `ǧ` in the domain where the small bodies are absent.  With
//!
//! ```text
//! 𝒯[η] = Σ_λ 𝔣̂_λ[η_λ − ǧ[η]|_{∂S_λ}]   traced on every other component,
//! ```
//!
//! the boundary data `B` of the reflected representation solves the fixed
//! point `B = A − 𝒯(B)`, and the solution is assembled as
//! `𝔪[B] = ǧ[B] + Σ_λ 𝔣̂_λ[B_λ − ǧ[B]|_{∂S_λ}]`.

use crate::error::{Error, Result};
use crate::nan_max;
use crate::geometry::{BoundaryGrid, Configuration, Family};
use crate::laplace::{
    BoundaryData, ExteriorSolver, HarmonicField, ModifiedDirichletSolution, ModifiedDirichletSolver, StandaloneSolution,
};

/// Threshold on the first measured sweep ratio above which reflections are abandoned.
pub const FALLBACK_RATIO: f64 = 0.9;

/// Solver handles for the reflection iteration on one configuration.
pub struct ReflectionWorkspace {
    pub outer: BoundaryGrid,
    pub grids: Vec<BoundaryGrid>,
    small: Vec<usize>,
    big: Vec<usize>,
    final_solver: ModifiedDirichletSolver,
    exterior: Vec<Option<ExteriorSolver>>,
}

/// Per-sweep history of the fixed-point iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepLog {
    /// `‖B_{k+1} − B_k‖_∞` per sweep.
    pub increments: Vec<f64>,
    /// Ratio of consecutive increments.
    pub ratios: Vec<f64>,
}

impl SweepLog {
    pub fn sweeps(&self) -> usize {
        self.increments.len()
    }

    /// Geometric mean of the measured sweep ratios (NaN if none).
    pub fn mean_ratio(&self) -> f64 {
        let r: Vec<f64> = self.ratios.iter().cloned().filter(|r| *r > 0.0 && r.is_finite()).collect();
        if r.is_empty() {
            return f64::NAN;
        }
        (r.iter().map(|x| x.ln()).sum::<f64>() / r.len() as f64).exp()
    }
}

/// Result of [`ReflectionWorkspace::solve_h`].
#[derive(Clone, Debug)]
pub struct ReflectionOutcome {
    pub solution: ModifiedDirichletSolution,
    pub log: SweepLog,
    /// True when the iteration was abandoned for a direct solve.
    pub fell_back: bool,
}

impl ReflectionWorkspace {
    /// Workspace for `cfg`, treating family (ii) and (iii) bodies as small.
    pub fn new(cfg: &Configuration) -> Result<Self> {
        let small: Vec<bool> = cfg.bodies.iter().map(|b| b.family != Family::I).collect();
        Self::from_grids(cfg.outer_grid(), cfg.body_grids()?, &small)
    }

    pub fn from_grids(outer: BoundaryGrid, grids: Vec<BoundaryGrid>, small_flags: &[bool]) -> Result<Self> {
        let small: Vec<usize> = (0..grids.len()).filter(|&k| small_flags[k]).collect();
        let big: Vec<usize> = (0..grids.len()).filter(|&k| !small_flags[k]).collect();
        let big_refs: Vec<&BoundaryGrid> = big.iter().map(|&k| &grids[k]).collect();
        let final_solver = ModifiedDirichletSolver::new(&outer, &big_refs)?;
        let exterior = grids
            .iter()
            .enumerate()
            .map(|(k, g)| if small_flags[k] { ExteriorSolver::new(g).map(Some) } else { Ok(None) })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReflectionWorkspace { outer, grids, small, big, final_solver, exterior })
    }

    pub fn small_bodies(&self) -> &[usize] {
        &self.small
    }

    pub fn zero_data(&self) -> BoundaryData {
        BoundaryData::zeros(self.outer.len(), &self.grids.iter().map(|g| g.len()).collect::<Vec<_>>())
    }

    fn restrict_final(&self, data: &BoundaryData) -> BoundaryData {
        BoundaryData { outer: data.outer.clone(), bodies: self.big.iter().map(|&k| data.bodies[k].clone()).collect() }
    }

    /// Modified Dirichlet solve in the final domain (small bodies removed);
    /// constants are indexed like the fixed-size bodies.
    pub fn solve_final_gcheck(&self, data: &BoundaryData) -> Result<ModifiedDirichletSolution> {
        self.final_solver.solve(&self.restrict_final(data))
    }

    /// `sup |ǧ| / sup |data|` over every boundary grid (a discrete maximum-principle constant).
    pub fn gcheck_sup_ratio(&self, data: &BoundaryData, sol: &ModifiedDirichletSolution) -> f64 {
        let d = self.restrict_final(data).sup_norm();
        if d == 0.0 {
            return 0.0;
        }
        let mut s = sup(&sol.field.trace(&self.outer).value);
        for g in &self.grids {
            s = s.max(sup(&sol.field.trace(g).value));
        }
        s / d
    }

    /// `ǧ[η]` and the standalone fields `𝔣̂_λ[η_λ − ǧ|_{∂S_λ}]` for every small body.
    fn reflect(&self, eta: &BoundaryData) -> Result<(ModifiedDirichletSolution, Vec<(usize, StandaloneSolution)>)> {
        let g = self.solve_final_gcheck(eta)?;
        let fields = self
            .small
            .iter()
            .map(|&l| {
                let tr = g.field.trace(&self.grids[l]).value;
                let alpha: Vec<f64> = eta.bodies[l].iter().zip(&tr).map(|(a, b)| a - b).collect();
                (l, self.exterior[l].as_ref().expect("small body has an exterior solver").solve(&alpha))
            })
            .collect();
        Ok((g, fields))
    }

    /// The reflection operator `𝒯`.
    pub fn apply_t(&self, eta: &BoundaryData) -> Result<BoundaryData> {
        let (_, fields) = self.reflect(eta)?;
        Ok(self.traces_of(&fields))
    }

    fn traces_of(&self, fields: &[(usize, StandaloneSolution)]) -> BoundaryData {
        let mut out = self.zero_data();
        for (l, f) in fields {
            let t = f.field.trace(&self.outer).value;
            out.outer.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
            for (k, g) in self.grids.iter().enumerate() {
                if k == *l {
                    continue;
                }
                let t = f.field.trace(g).value;
                out.bodies[k].iter_mut().zip(&t).for_each(|(a, b)| *a += b);
            }
        }
        out
    }

    /// Fixed point `B = A − 𝒯(B)` by successive sweeps.
    pub fn invert_id_plus_t(&self, a: &BoundaryData, tol: f64, max_sweeps: usize) -> Result<(BoundaryData, SweepLog)> {
        self.iterate(a, tol, max_sweeps, false).map(|(b, log, _)| (b, log))
    }

    fn iterate(&self, a: &BoundaryData, tol: f64, max_sweeps: usize, stop_on_divergence: bool) -> Result<(BoundaryData, SweepLog, bool)> {
        let mut b = a.clone();
        let mut log = SweepLog::default();
        for _ in 0..max_sweeps {
            let t = self.apply_t(&b)?;
            let mut next = a.clone();
            next.axpy(-1.0, &t);
            let mut diff = next.clone();
            diff.axpy(-1.0, &b);
            let inc = diff.sup_norm();
            if let Some(&prev) = log.increments.last() {
                log.ratios.push(if prev > 0.0 { inc / prev } else { 0.0 });
            }
            log.increments.push(inc);
            b = next;
            if inc <= tol {
                return Ok((b, log, false));
            }
            if stop_on_divergence && log.ratios.len() == 1 && log.ratios[0] > FALLBACK_RATIO {
                return Ok((b, log, true));
            }
        }
        Err(Error::ContractionFailure { sweeps: max_sweeps, ratio: log.ratios.last().cloned().unwrap_or(f64::NAN) })
    }

    /// Assemble `𝔪[B]`; constants are indexed by configuration body index.
    pub fn assemble(&self, b: &BoundaryData) -> Result<ModifiedDirichletSolution> {
        let (g, fields) = self.reflect(b)?;
        let mut field = g.field.clone();
        let mut constants = vec![0.0; self.grids.len()];
        for (slot, &k) in self.big.iter().enumerate() {
            constants[k] = g.constants[slot];
        }
        for (l, f) in &fields {
            field.add_scaled(&f.field, 1.0);
            constants[*l] = f.constant;
        }
        Ok(ModifiedDirichletSolution { field, constants })
    }

    /// Solve the modified Dirichlet problem with data `A` by reflections,
    /// falling back to a direct solve when the first sweep ratio exceeds
    /// [`FALLBACK_RATIO`].
    pub fn solve_h(&self, a: &BoundaryData, tol: f64, max_sweeps: usize) -> Result<ReflectionOutcome> {
        let (b, log, diverging) = self.iterate(a, tol, max_sweeps, true)?;
        if diverging {
            let refs: Vec<&BoundaryGrid> = self.grids.iter().collect();
            let solution = ModifiedDirichletSolver::new(&self.outer, &refs)?.solve(a)?;
            return Ok(ReflectionOutcome { solution, log, fell_back: true });
        }
        Ok(ReflectionOutcome { solution: self.assemble(&b)?, log, fell_back: false })
    }

    /// Largest `‖𝒯(e)‖_∞ / ‖e‖_∞` over low-order Fourier probes placed on each
    /// boundary component in turn.
    pub fn operator_norm_estimate(&self, modes: usize) -> Result<f64> {
        let mut best: f64 = 0.0;
        let n_comp = self.grids.len() + 1;
        for comp in 0..n_comp {
            for k in 0..=modes {
                for phase in [0.0, 0.5 * std::f64::consts::PI] {
                    if k == 0 && phase != 0.0 {
                        continue;
                    }
                    let mut e = self.zero_data();
                    let slot = if comp == 0 { &mut e.outer } else { &mut e.bodies[comp - 1] };
                    let m = slot.len();
                    for (i, v) in slot.iter_mut().enumerate() {
                        *v = (k as f64 * 2.0 * std::f64::consts::PI * i as f64 / m as f64 + phase).cos();
                    }
                    let t = self.apply_t(&e)?;
                    best = best.max(t.sup_norm() / e.sup_norm());
                }
            }
        }
        Ok(best)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Convenience wrapper: `𝔥[A]` by reflections for a configuration.
pub fn solve_h_by_reflections(cfg: &Configuration, a: &BoundaryData, tol: f64, max_sweeps: usize) -> Result<ReflectionOutcome> {
    ReflectionWorkspace::new(cfg)?.solve_h(a, tol, max_sweeps)
}

/// Field sum helper used by callers that evaluate the reflected representation.
pub fn sup_difference(a: &HarmonicField, b: &HarmonicField, points: &[num_complex::Complex64]) -> f64 {
    points.iter().map(|&z| (a.value(z) - b.value(z)).abs()).fold(0.0, nan_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Body, BodyShape, OuterDomain, Pose};
    use num_complex::Complex64 as C64;

    fn cfg(eps: f64) -> Configuration {
        let s = BodyShape::ellipse(1.0, 0.6, 32).unwrap();
        Configuration {
            outer: OuterDomain::disc(2.0, C64::new(0.0, 0.0), 96).unwrap(),
            bodies: vec![
                Body { shape: s.clone(), epsilon: eps, pose: Pose::new(0.5, 0.2, 0.3), family: Family::III },
                Body { shape: s, epsilon: eps, pose: Pose::new(-0.6, -0.4, 1.0), family: Family::II },
            ],
            delta: 0.01,
        }
    }

    #[test]
    fn zero_data_gives_zero_in_one_sweep() {
        let w = ReflectionWorkspace::new(&cfg(0.05)).unwrap();
        let (b, log) = w.invert_id_plus_t(&w.zero_data(), 1e-12, 10).unwrap();
        assert_eq!(log.sweeps(), 1);
        assert_eq!(b.sup_norm(), 0.0);
        assert_eq!(w.apply_t(&w.zero_data()).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn no_big_bodies_reduces_to_interior_dirichlet() {
        let w = ReflectionWorkspace::new(&cfg(0.05)).unwrap();
        let mut d = w.zero_data();
        d.outer = w.outer.z.iter().map(|z| z.re).collect();
        let g = w.solve_final_gcheck(&d).unwrap();
        assert!(g.constants.is_empty());
        assert!((g.field.value(C64::new(0.3, 0.1)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn reflections_match_direct_solve() {
        let c = cfg(0.05);
        let w = ReflectionWorkspace::new(&c).unwrap();
        let mut a = w.zero_data();
        a.outer = w.outer.z.iter().map(|z| z.re * z.im).collect();
        for (k, g) in w.grids.iter().enumerate() {
            a.bodies[k] = g.z.iter().map(|z| (z - g.center).re + 0.3 * z.im).collect();
        }
        let out = w.solve_h(&a, 1e-13, 50).unwrap();
        assert!(!out.fell_back);
        let grids = c.body_grids().unwrap();
        let refs: Vec<&BoundaryGrid> = grids.iter().collect();
        let direct = ModifiedDirichletSolver::new(&c.outer_grid(), &refs).unwrap();
        let mut a2 = direct.zero_data();
        a2.outer = a.outer.clone();
        a2.bodies = a.bodies.clone();
        let d = direct.solve(&a2).unwrap();
        let probes = [C64::new(0.0, 0.9), C64::new(1.2, -0.3), C64::new(-1.0, 0.5)];
        let scale = probes.iter().map(|&z| d.field.value(z).abs()).fold(0.0, nan_max);
        assert!(sup_difference(&out.solution.field, &d.field, &probes) < 1e-8 * scale.max(1.0));
        for k in 0..2 {
            assert!((out.solution.constants[k] - d.constants[k]).abs() < 1e-8);
        }
    }
}
