//! Weighted p-Laplace Dirichlet solver on P1 elements and the pairings
//! built on it.
//!
//! Every solve works on the sup-normalized trace, so the regularization
//! `epsilon` is relative to the data scale and solutions are exactly
//! positively homogeneous. Differences of energies between two
//! conductivities are computed from the correction `u1 - u0` directly,
//! never by subtracting two large energies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_p, TriMesh, Vec2};
use crate::sparse::{Layout, LOCAL_PAIRS};

/// A real number `mantissa * exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledReal {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl ScaledReal {
    pub fn new(mantissa: f64, log_scale: f64) -> Self {
        ScaledReal { mantissa, log_scale }
    }

    pub fn value(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }

    /// Natural log of the magnitude; `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.abs().ln() + self.log_scale
    }

    pub fn signum(&self) -> f64 {
        if self.mantissa > 0.0 {
            1.0
        } else if self.mantissa < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub p: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Stop when the sup-norm of the energy gradient is at most
    /// `gradient_tolerance * (1 + energy)`.
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl SolverConfig {
    pub fn new(p: f64) -> Self {
        SolverConfig {
            p,
            epsilon: if p >= 2.0 { 1e-8 } else { 1e-7 },
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gradient_tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("tolerances and iteration limits must be positive".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5 && self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("line-search parameters out of range".into()));
        }
        Ok(())
    }
}

/// Dirichlet data on the boundary loop: true values are
/// `values * exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub values: Vec<f64>,
    pub log_scale: f64,
    pub mesh_id: u64,
}

impl BoundaryTrace {
    pub fn new(mesh: &TriMesh, values: Vec<f64>) -> Result<Self> {
        Self::with_scale(mesh, values, 0.0)
    }

    pub fn with_scale(mesh: &TriMesh, values: Vec<f64>, log_scale: f64) -> Result<Self> {
        if values.len() != mesh.boundary_loop().len() {
            return Err(Error::Config(format!(
                "trace has {} values for {} boundary vertices",
                values.len(),
                mesh.boundary_loop().len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || !log_scale.is_finite() {
            return Err(Error::Config("trace values must be finite".into()));
        }
        Ok(BoundaryTrace { values, log_scale, mesh_id: mesh.id() })
    }

    /// Trace of a function evaluated at the boundary vertices.
    pub fn from_fn(mesh: &TriMesh, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let values = mesh.boundary_loop().iter().map(|&v| f(mesh.vertices()[v])).collect();
        Self::new(mesh, values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multiply by a real factor (the scale is folded into the values).
    pub fn scaled(&self, lambda: f64) -> Self {
        BoundaryTrace {
            values: self.values.iter().map(|v| v * lambda).collect(),
            log_scale: self.log_scale,
            mesh_id: self.mesh_id,
        }
    }

    /// Same trace with `max |values| = 1` (unchanged if zero).
    pub fn normalized(&self) -> Self {
        let s = self.sup_norm();
        if s == 0.0 {
            return self.clone();
        }
        BoundaryTrace {
            values: self.values.iter().map(|v| v / s).collect(),
            log_scale: self.log_scale + s.ln(),
            mesh_id: self.mesh_id,
        }
    }

    fn check_mesh(&self, mesh: &TriMesh) -> Result<()> {
        if self.mesh_id != mesh.id() || self.values.len() != mesh.boundary_loop().len() {
            return Err(Error::Config("trace does not belong to this mesh".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    /// Vertex values in the units of the trace mantissa.
    pub values: Vec<f64>,
    pub log_scale: f64,
    /// Energy with the constant epsilon offset removed, in mantissa units
    /// (true energy is `energy * exp(p * log_scale)`).
    pub energy: f64,
    pub iterations: usize,
    /// Final sup-norm of the energy gradient for the normalized problem.
    pub residual: f64,
    /// Energies of the normalized iterates.
    pub energy_history: Vec<f64>,
}

impl DiscreteSolution {
    pub fn energy_scaled(&self, p: f64) -> ScaledReal {
        ScaledReal::new(self.energy, p * self.log_scale)
    }
}

/// Regularized energy `sum area * sigma * (|grad u|^2 + eps^2)^(p/2)`,
/// including the constant epsilon offset.
pub fn energy(mesh: &TriMesh, sigma: &[f64], u: &[f64], p: f64, epsilon: f64) -> f64 {
    (0..mesh.n_triangles())
        .map(|t| {
            let a = cell_gradient(mesh, t, u);
            mesh.areas()[t] * sigma[t] * (a.norm_sq() + epsilon * epsilon).powf(0.5 * p)
        })
        .sum()
}

pub fn cell_gradient(mesh: &TriMesh, t: usize, u: &[f64]) -> Vec2 {
    let tri = &mesh.triangles()[t];
    let g = &mesh.hat_gradients()[t];
    g[0] * u[tri[0]] + g[1] * u[tri[1]] + g[2] * u[tri[2]]
}

/// Energy density with the value at zero gradient subtracted, evaluated
/// without cancellation.
pub fn phi_tilde(a2: f64, p: f64, epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        a2.powf(0.5 * p)
    } else {
        let e2 = epsilon * epsilon;
        epsilon.powf(p) * (0.5 * p * (a2 / e2).ln_1p()).exp_m1()
    }
}

/// `(1+z)^k - 1 - k z`.
fn bk(k: f64, z: f64) -> f64 {
    if z.abs() < 0.1 {
        let mut c = 0.5 * k * (k - 1.0);
        let mut zn = z * z;
        let mut s = 0.0;
        for n in 2..40 {
            let term = c * zn;
            s += term;
            if term.abs() <= 1e-18 * s.abs() {
                break;
            }
            c *= (k - n as f64) / (n as f64 + 1.0);
            zn *= z;
        }
        s
    } else {
        (k * z.ln_1p()).exp_m1() - k * z
    }
}

struct NewtonOutcome {
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
}

enum Tolerance {
    /// `tol * (1 + E)`.
    Energy(f64),
    Absolute(f64),
}

/// Damped Newton over the free vertices with Armijo backtracking and a
/// Barzilai-Borwein gradient fallback when the Hessian is not positive
/// definite. `x` is the full vertex vector; only free entries change.
#[allow(clippy::too_many_arguments)]
fn newton(
    layout: &Layout,
    x: &mut [f64],
    eval: &dyn Fn(&[f64]) -> f64,
    assemble: &dyn Fn(&[f64], &mut [f64], &mut [f64]),
    tol: Tolerance,
    noise_scale: f64,
    cfg: &SolverConfig,
    context: &str,
) -> Result<NewtonOutcome> {
    let n = layout.n_free();
    let mut g = vec![0.0; n];
    let mut h = layout.zeros();
    let mut e = eval(x);
    let mut history = vec![e];
    if n == 0 {
        return Ok(NewtonOutcome { iterations: 0, residual: 0.0, history });
    }
    let mut trial = x.to_vec();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    // iterate and residual saved when the tolerance is first met; one more
    // full step is taken and kept only if it does not hurt
    let mut polish: Option<(Vec<f64>, f64)> = None;
    for it in 0..cfg.max_iterations {
        g.iter_mut().for_each(|v| *v = 0.0);
        h.iter_mut().for_each(|v| *v = 0.0);
        assemble(x, &mut g, &mut h);
        let res = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !res.is_finite() || !e.is_finite() {
            return Err(Error::Solver(format!("{context}: NaN encountered at iteration {it}")));
        }
        let tol_abs = match tol {
            Tolerance::Energy(t) => t * (1.0 + e.abs()),
            Tolerance::Absolute(t) => t,
        };
        if let Some((xb, rb)) = polish.take() {
            if res <= rb {
                return Ok(NewtonOutcome { iterations: it, residual: res, history });
            }
            x.copy_from_slice(&xb);
            history.pop();
            return Ok(NewtonOutcome { iterations: it, residual: rb, history });
        }
        let converged = res <= tol_abs;
        if converged {
            polish = Some((x.to_vec(), res));
        }
        let noise = 1e-14 * (noise_scale + e.abs());

        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        if layout.factor(&mut h).is_ok() {
            layout.solve(&h, &mut d);
        } else {
            let step = match &prev {
                Some((s, g_old)) => {
                    let sy: f64 = s.iter().zip(g.iter().zip(g_old)).map(|(a, (b, c))| a * (b - c)).sum();
                    let ss: f64 = s.iter().map(|a| a * a).sum();
                    if sy > 0.0 {
                        ss / sy
                    } else {
                        1.0 / res
                    }
                }
                None => 1.0 / res,
            };
            d.iter_mut().for_each(|v| *v *= step);
        }
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v / res).collect();
            slope = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            trial.copy_from_slice(x);
            for (i, di) in d.iter().enumerate() {
                trial[layout.vertex_of(i)] += alpha * di;
            }
            let et = eval(&trial);
            let armijo = et <= e + cfg.armijo * alpha * slope;
            let at_noise = -slope * alpha <= noise && et <= e + noise;
            if et.is_finite() && (armijo || at_noise) {
                accepted = Some(et);
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some(et) = accepted else {
            if converged {
                return Ok(NewtonOutcome { iterations: it, residual: res, history });
            }
            return Err(Error::NonConvergence {
                message: format!("{context}: line search failed"),
                iterations: it,
                residual: res,
                best: x.to_vec(),
            });
        };
        x.copy_from_slice(&trial);
        e = et;
        history.push(e);
        prev = Some((d.iter().map(|v| alpha * v).collect(), g.clone()));
    }
    if let Some((xb, rb)) = polish {
        x.copy_from_slice(&xb);
        return Ok(NewtonOutcome { iterations: cfg.max_iterations, residual: rb, history });
    }
    g.iter_mut().for_each(|v| *v = 0.0);
    assemble(x, &mut g, &mut h);
    let res = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Err(Error::NonConvergence {
        message: format!("{context}: no convergence within {} iterations", cfg.max_iterations),
        iterations: cfg.max_iterations,
        residual: res,
        best: x.to_vec(),
    })
}

/// Result of solving the normalized problem.
#[derive(Debug, Clone)]
pub struct UnitSolution {
    pub u: Vec<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Correction from one conductivity to another for a fixed trace.
#[derive(Debug, Clone)]
pub struct EnergyShift {
    /// `u1 - u0`, zero on the boundary.
    pub delta: Vec<f64>,
    /// `E_{sigma1}(u1) - E_{sigma0}(u0)`.
    pub deficit: f64,
    /// `sum area (sigma1 - sigma0) phi(grad u0)`, an upper bound for the deficit.
    pub upper: f64,
    pub iterations: usize,
}

/// Mesh plus assembly layout, reusable across many solves.
#[derive(Debug, Clone)]
pub struct FeSystem {
    mesh: Arc<TriMesh>,
    layout: Layout,
}

impl FeSystem {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        let layout = Layout::new(&mesh);
        FeSystem { mesh, layout }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    fn check_sigma(&self, sigma: &[f64]) -> Result<()> {
        if sigma.len() != self.mesh.n_triangles() {
            return Err(Error::Config("sigma length does not match the mesh".into()));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma must be positive and finite".into()));
        }
        Ok(())
    }

    /// Full vertex vector with the given boundary values and zero interior.
    fn lift(&self, boundary: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.mesh.n_vertices()];
        for (&v, &val) in self.mesh.boundary_loop().iter().zip(boundary) {
            u[v] = val;
        }
        u
    }

    /// Solve with boundary values already of unit sup-norm (or zero).
    pub fn solve_unit(&self, sigma: &[f64], boundary: &[f64], cfg: &SolverConfig) -> Result<UnitSolution> {
        cfg.validate()?;
        self.check_sigma(sigma)?;
        let mesh = &*self.mesh;
        let mut u = self.lift(boundary);
        let (p, eps) = (cfg.p, cfg.epsilon);

        // linear (p = 2) initial guess: one exact Newton step of the quadratic energy
        let quad_eval = |w: &[f64]| -> f64 {
            (0..mesh.n_triangles())
                .map(|t| mesh.areas()[t] * sigma[t] * cell_gradient(mesh, t, w).norm_sq())
                .sum()
        };
        let quad_assemble = |w: &[f64], g: &mut [f64], h: &mut [f64]| {
            self.assemble_energy(w, sigma, 2.0, 0.0, g, h);
        };
        let lin_cfg = SolverConfig { p: 2.0, epsilon: 0.0, max_iterations: 3, ..cfg.clone() };
        let _ = newton(
            &self.layout,
            &mut u,
            &quad_eval,
            &quad_assemble,
            Tolerance::Energy(1e-13),
            0.0,
            &lin_cfg,
            "linear initial guess",
        );
        if p == 2.0 && eps == 0.0 {
            let mut g = vec![0.0; self.layout.n_free()];
            let mut h = self.layout.zeros();
            self.assemble_energy(&u, sigma, 2.0, 0.0, &mut g, &mut h);
            let residual = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let e = quad_eval(&u);
            return Ok(UnitSolution { u, energy: e, iterations: 1, residual, history: vec![e] });
        }

        let eval = |w: &[f64]| -> f64 { self.energy_tilde(w, sigma, p, eps) };
        let assemble = |w: &[f64], g: &mut [f64], h: &mut [f64]| {
            self.assemble_energy(w, sigma, p, eps, g, h);
        };
        let out = newton(
            &self.layout,
            &mut u,
            &eval,
            &assemble,
            Tolerance::Energy(cfg.gradient_tolerance),
            0.0,
            cfg,
            "forward solve",
        )?;
        let energy = eval(&u);
        Ok(UnitSolution {
            u,
            energy,
            iterations: out.iterations,
            residual: out.residual,
            history: out.history,
        })
    }

    /// Solve the Dirichlet problem for an arbitrary trace of this mesh.
    pub fn solve(&self, sigma: &[f64], f: &BoundaryTrace, cfg: &SolverConfig) -> Result<DiscreteSolution> {
        f.check_mesh(&self.mesh)?;
        let s = f.sup_norm();
        if s == 0.0 {
            cfg.validate()?;
            return Ok(DiscreteSolution {
                values: vec![0.0; self.mesh.n_vertices()],
                log_scale: f.log_scale,
                energy: 0.0,
                iterations: 0,
                residual: 0.0,
                energy_history: vec![0.0],
            });
        }
        let unit: Vec<f64> = f.values.iter().map(|v| v / s).collect();
        let sol = self.solve_unit(sigma, &unit, cfg)?;
        let mut values: Vec<f64> = sol.u.iter().map(|v| v * s).collect();
        for (&v, &val) in self.mesh.boundary_loop().iter().zip(&f.values) {
            values[v] = val;
        }
        Ok(DiscreteSolution {
            values,
            log_scale: f.log_scale,
            energy: sol.energy * s.powf(cfg.p),
            iterations: sol.iterations,
            residual: sol.residual,
            energy_history: sol.history,
        })
    }

    /// Offset-free energy `sum area sigma phi_tilde(grad u)`.
    pub fn energy_tilde(&self, u: &[f64], sigma: &[f64], p: f64, eps: f64) -> f64 {
        let mesh = &*self.mesh;
        (0..mesh.n_triangles())
            .map(|t| mesh.areas()[t] * sigma[t] * phi_tilde(cell_gradient(mesh, t, u).norm_sq(), p, eps))
            .sum()
    }

    fn assemble_energy(&self, u: &[f64], sigma: &[f64], p: f64, eps: f64, g: &mut [f64], h: &mut [f64]) {
        let mesh = &*self.mesh;
        let q = 0.5 * p - 1.0;
        for t in 0..mesh.n_triangles() {
            let tri = &mesh.triangles()[t];
            let b = &mesh.hat_gradients()[t];
            let a = cell_gradient(mesh, t, u);
            let x = (a.norm_sq() + eps * eps).max(1e-300);
            let w = mesh.areas()[t] * sigma[t] * p;
            let xq = x.powf(q);
            let ab = [a.dot(b[0]), a.dot(b[1]), a.dot(b[2])];
            for i in 0..3 {
                if let Some(fi) = self.layout.free_index(tri[i]) {
                    g[fi] += w * xq * ab[i];
                }
            }
            let hw = w * xq / x;
            let pos = self.layout.triangle_positions(t);
            for (k, &(i, j)) in LOCAL_PAIRS.iter().enumerate() {
                if pos[k] != usize::MAX {
                    h[pos[k]] += hw * (x * b[i].dot(b[j]) + (p - 2.0) * ab[i] * ab[j]);
                }
            }
        }
    }

    /// Minimize `E_{sigma1}(u0 + delta) - E_{sigma0}(u0)` over interior
    /// corrections `delta`, where `u0` minimizes `E_{sigma0}` (normalized
    /// data). The result is the energy deficit between the two
    /// conductivities, accurate relative to itself.
    pub fn energy_shift(
        &self,
        sigma0: &[f64],
        sigma1: &[f64],
        u0: &[f64],
        cfg: &SolverConfig,
    ) -> Result<EnergyShift> {
        cfg.validate()?;
        self.check_sigma(sigma0)?;
        self.check_sigma(sigma1)?;
        let mesh = &*self.mesh;
        let (p, eps) = (cfg.p, cfg.epsilon);
        let k = 0.5 * p;
        let q = k - 1.0;
        let e2 = eps * eps;
        let a0: Vec<Vec2> = (0..mesh.n_triangles()).map(|t| cell_gradient(mesh, t, u0)).collect();
        let upper: f64 = (0..mesh.n_triangles())
            .map(|t| mesh.areas()[t] * (sigma1[t] - sigma0[t]) * phi_tilde(a0[t].norm_sq(), p, eps))
            .sum();
        let upper_abs: f64 = (0..mesh.n_triangles())
            .map(|t| mesh.areas()[t] * (sigma1[t] - sigma0[t]).abs() * phi_tilde(a0[t].norm_sq(), p, eps))
            .sum();
        let mut delta = vec![0.0; mesh.n_vertices()];
        // a constant ratio keeps u0 optimal
        let ratio = sigma1[0] / sigma0[0];
        let proportional =
            sigma0.iter().zip(sigma1).all(|(a, b)| (b / a - ratio).abs() <= 1e-14 * ratio);
        if upper_abs == 0.0 || proportional {
            return Ok(EnergyShift { delta, deficit: upper, upper, iterations: 0 });
        }

        let eval = |dv: &[f64]| -> f64 {
            let mut s = 0.0;
            for t in 0..mesh.n_triangles() {
                let d = cell_gradient(mesh, t, dv);
                let a = a0[t];
                let x = a.norm_sq() + e2;
                let ds = sigma1[t] - sigma0[t];
                let d2 = d.norm_sq();
                if d2 == 0.0 {
                    continue;
                }
                let val = if x > 0.0 {
                    let z = (2.0 * a.dot(d) + d2) / x;
                    let xq = x.powf(q);
                    sigma1[t] * (x * xq * bk(k, z) + k * xq * d2) + ds * p * xq * a.dot(d)
                } else {
                    sigma1[t] * d2.powf(k)
                };
                s += mesh.areas()[t] * val;
            }
            s
        };
        let assemble = |dv: &[f64], g: &mut [f64], h: &mut [f64]| {
            for t in 0..mesh.n_triangles() {
                let tri = &mesh.triangles()[t];
                let b = &mesh.hat_gradients()[t];
                let d = cell_gradient(mesh, t, dv);
                let a = a0[t];
                let x = a.norm_sq() + e2;
                let ad = a + d;
                let y = (ad.norm_sq() + e2).max(1e-300);
                let ds = sigma1[t] - sigma0[t];
                let (flux_diff, base_flux) = if x > 0.0 {
                    let z = (2.0 * a.dot(d) + d.norm_sq()) / x;
                    let xq = x.powf(q);
                    let yq = y.powf(q);
                    (d * yq + a * (xq * (q * z.ln_1p()).exp_m1()), a * xq)
                } else {
                    (ad * y.powf(q), Vec2::default())
                };
                let v = (flux_diff * sigma1[t] + base_flux * ds) * (mesh.areas()[t] * p);
                for i in 0..3 {
                    if let Some(fi) = self.layout.free_index(tri[i]) {
                        g[fi] += v.dot(b[i]);
                    }
                }
                let yq = y.powf(q);
                let hw = mesh.areas()[t] * sigma1[t] * p * yq / y;
                let ab = [ad.dot(b[0]), ad.dot(b[1]), ad.dot(b[2])];
                let pos = self.layout.triangle_positions(t);
                for (kk, &(i, j)) in LOCAL_PAIRS.iter().enumerate() {
                    if pos[kk] != usize::MAX {
                        h[pos[kk]] += hw * (y * b[i].dot(b[j]) + (p - 2.0) * ab[i] * ab[j]);
                    }
                }
            }
        };
        // forcing scale: gradient at delta = 0
        let mut g0 = vec![0.0; self.layout.n_free()];
        let mut h0 = self.layout.zeros();
        assemble(&delta, &mut g0, &mut h0);
        let forcing = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if forcing == 0.0 {
            return Ok(EnergyShift { delta, deficit: upper, upper, iterations: 0 });
        }
        let out = newton(
            &self.layout,
            &mut delta,
            &eval,
            &assemble,
            Tolerance::Absolute(cfg.gradient_tolerance * forcing),
            upper_abs,
            cfg,
            "energy shift",
        )?;
        let g_min = eval(&delta);
        Ok(EnergyShift { delta, deficit: g_min + upper, upper, iterations: out.iterations })
    }

    /// `sum area weight x^q grad u . grad v` over all cells or a subset.
    pub fn flux_pairing(
        &self,
        weight: &[f64],
        u: &[f64],
        v: &[f64],
        p: f64,
        eps: f64,
        cells: Option<&[usize]>,
    ) -> f64 {
        let mesh = &*self.mesh;
        let term = |t: usize| {
            let a = cell_gradient(mesh, t, u);
            let b = cell_gradient(mesh, t, v);
            let x = a.norm_sq() + eps * eps;
            let xq = if x > 0.0 { x.powf(0.5 * p - 1.0) } else { 0.0 };
            mesh.areas()[t] * weight[t] * xq * a.dot(b)
        };
        match cells {
            Some(c) => c.iter().map(|&t| term(t)).sum(),
            None => (0..mesh.n_triangles()).map(term).sum(),
        }
    }

    /// Per-cell `area * phi_tilde(grad u)` for a unit-weight solution.
    pub fn cell_energies(&self, u: &[f64], p: f64, eps: f64) -> Vec<f64> {
        let mesh = &*self.mesh;
        (0..mesh.n_triangles())
            .map(|t| mesh.areas()[t] * phi_tilde(cell_gradient(mesh, t, u).norm_sq(), p, eps))
            .collect()
    }
}

/// Solve the Dirichlet problem on `mesh` (assembly layout built per call).
pub fn solve_dirichlet(
    mesh: &Arc<TriMesh>,
    sigma: &[f64],
    f: &BoundaryTrace,
    cfg: &SolverConfig,
) -> Result<DiscreteSolution> {
    FeSystem::new(mesh.clone()).solve(sigma, f, cfg)
}

/// `<Lambda_sigma(f), g>`. When `f == g` the pairing is the energy of the
/// solution; otherwise `g` is extended by the unit-weight p-energy
/// minimizer.
pub fn dn_pairing(
    mesh: &Arc<TriMesh>,
    sigma: &[f64],
    f: &BoundaryTrace,
    g: &BoundaryTrace,
    cfg: &SolverConfig,
) -> Result<ScaledReal> {
    let sys = FeSystem::new(mesh.clone());
    let uf = sys.solve(sigma, &f.normalized(), cfg)?;
    let lf = f.normalized().log_scale;
    if f == g {
        return Ok(ScaledReal::new(uf.energy, cfg.p * lf));
    }
    let gn = g.normalized();
    let ones = vec![1.0; mesh.n_triangles()];
    let vg = sys.solve(&ones, &gn, cfg)?;
    let val = sys.flux_pairing(sigma, &uf.values, &vg.values, cfg.p, cfg.epsilon, None);
    Ok(ScaledReal::new(val, (cfg.p - 1.0) * lf + gn.log_scale))
}

/// `<Lambda_sigma(f), g>` against a caller-supplied extension `v` of `g`
/// (vertex values in the mantissa units of `g`).
pub fn dn_pairing_with_extension(
    mesh: &Arc<TriMesh>,
    sigma: &[f64],
    f: &BoundaryTrace,
    g: &BoundaryTrace,
    v: &[f64],
    cfg: &SolverConfig,
) -> Result<ScaledReal> {
    let sys = FeSystem::new(mesh.clone());
    let fnorm = f.normalized();
    let uf = sys.solve(sigma, &fnorm, cfg)?;
    let val = sys.flux_pairing(sigma, &uf.values, v, cfg.p, cfg.epsilon, None);
    Ok(ScaledReal::new(val, (cfg.p - 1.0) * fnorm.log_scale + g.log_scale))
}

/// `<Lambda_B(f), g>` with unit-weight solutions, integrated over the cells
/// of `region`.
pub fn lambda_b_pairing(
    mesh: &Arc<TriMesh>,
    region: &[usize],
    f: &BoundaryTrace,
    g: &BoundaryTrace,
    cfg: &SolverConfig,
) -> Result<ScaledReal> {
    if region.is_empty() {
        return Err(Error::Config("test region must be nonempty".into()));
    }
    if region.iter().any(|&c| c >= mesh.n_triangles()) {
        return Err(Error::Config("test region cell index out of range".into()));
    }
    let sys = FeSystem::new(mesh.clone());
    let ones = vec![1.0; mesh.n_triangles()];
    let fnorm = f.normalized();
    let uf = sys.solve(&ones, &fnorm, cfg)?;
    if f == g {
        let e: f64 = region
            .iter()
            .map(|&t| mesh.areas()[t] * phi_tilde(cell_gradient(mesh, t, &uf.values).norm_sq(), cfg.p, cfg.epsilon))
            .sum();
        return Ok(ScaledReal::new(e, cfg.p * fnorm.log_scale));
    }
    let gnorm = g.normalized();
    let ug = sys.solve(&ones, &gnorm, cfg)?;
    let val = sys.flux_pairing(&ones, &uf.values, &ug.values, cfg.p, cfg.epsilon, Some(region));
    Ok(ScaledReal::new(val, (cfg.p - 1.0) * fnorm.log_scale + gnorm.log_scale))
}

/// Lower bound, deficit and upper bound sharing one scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBounds {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub log_scale: f64,
}

impl SandwichBounds {
    /// Smallest of `middle - lower` and `upper - middle`.
    pub fn slack(&self) -> f64 {
        (self.middle - self.lower).min(self.upper - self.middle)
    }
}

/// Two-sided bound on `<(Lambda_{sigma1} - Lambda_{sigma0}) f, f>` from the
/// `sigma0` solution alone; fails if the computed deficit falls outside it.
pub fn monotonicity_bounds(
    mesh: &Arc<TriMesh>,
    sigma0: &[f64],
    sigma1: &[f64],
    f: &BoundaryTrace,
    cfg: &SolverConfig,
) -> Result<SandwichBounds> {
    let sys = FeSystem::new(mesh.clone());
    let b = sandwich(&sys, sigma0, sigma1, f, cfg)?;
    let tol = 1e-6 * b.middle.abs().max(1.0);
    if b.slack() < -tol {
        return Err(Error::Solver(format!(
            "monotonicity sandwich violated: lower {:.6e}, middle {:.6e}, upper {:.6e}",
            b.lower, b.middle, b.upper
        )));
    }
    Ok(b)
}

pub(crate) fn sandwich(
    sys: &FeSystem,
    sigma0: &[f64],
    sigma1: &[f64],
    f: &BoundaryTrace,
    cfg: &SolverConfig,
) -> Result<SandwichBounds> {
    let mesh = sys.mesh().clone();
    f.check_mesh(&mesh)?;
    let fnorm = f.normalized();
    let log_scale = cfg.p * fnorm.log_scale;
    if fnorm.sup_norm() == 0.0 {
        return Ok(SandwichBounds { lower: 0.0, middle: 0.0, upper: 0.0, log_scale });
    }
    let u0 = sys.solve_unit(sigma0, &fnorm.values, cfg)?;
    let shift = sys.energy_shift(sigma0, sigma1, &u0.u, cfg)?;
    let r = 1.0 / (cfg.p - 1.0);
    let lower: f64 = (0..mesh.n_triangles())
        .map(|t| {
            let (s0, s1) = (sigma0[t], sigma1[t]);
            let phi = phi_tilde(cell_gradient(&mesh, t, &u0.u).norm_sq(), cfg.p, cfg.epsilon);
            mesh.areas()[t] * (cfg.p - 1.0) * (s0 / s1.powf(r)) * (s1.powf(r) - s0.powf(r)) * phi
        })
        .sum();
    Ok(SandwichBounds { lower, middle: shift.deficit, upper: shift.upper, log_scale })
}
