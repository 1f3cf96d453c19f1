//! Periodic profiles `w'' + V(w, w') w = 0` and the exponential
//! p-harmonic fields `u(x) = exp(tau (x.rho - t)) w(tau x.rho_perp)` built
//! from them.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{check_p, TriMesh, Vec2};
use crate::psolver::BoundaryTrace;

/// Largest exponent allowed when evaluating a field directly.
pub const OVERFLOW_CAP: f64 = 300.0;

pub const DEFAULT_SAMPLES: usize = 2048;

pub fn v_coefficient(p: f64, w: f64, wp: f64) -> Result<f64> {
    if w == 0.0 && wp == 0.0 {
        return Err(Error::Config("V is undefined at (w, w') = (0, 0)".into()));
    }
    Ok(v_unchecked(p, w, wp))
}

fn v_unchecked(p: f64, w: f64, wp: f64) -> f64 {
    let (w2, wp2) = (w * w, wp * wp);
    ((2.0 * p - 3.0) * wp2 + (p - 1.0) * w2) / ((p - 1.0) * wp2 + w2)
}

type State = [f64; 2];

fn rhs(p: f64, y: State) -> State {
    [y[1], -v_unchecked(p, y[0], y[1]) * y[0]]
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince step: (5th-order solution, error estimate).
fn dopri_step(p: f64, y: State, h: f64) -> (State, State) {
    let _ = C;
    let mut k = [[0.0; 2]; 7];
    k[0] = rhs(p, y);
    for s in 1..7 {
        let mut yi = y;
        for (j, kj) in k.iter().enumerate().take(s) {
            yi[0] += h * A[s][j] * kj[0];
            yi[1] += h * A[s][j] * kj[1];
        }
        k[s] = rhs(p, yi);
        if s == 6 {
            let mut err = [0.0; 2];
            for (j, kj) in k.iter().enumerate() {
                err[0] += h * E[j] * kj[0];
                err[1] += h * E[j] * kj[1];
            }
            return (yi, err);
        }
    }
    unreachable!()
}

struct Stepper {
    p: f64,
    tol: f64,
    h: f64,
}

impl Stepper {
    /// Attempt steps until one is accepted, never exceeding `h_max`.
    /// Returns (new state, step taken).
    fn step(&mut self, y: State, s: f64, h_max: f64) -> Result<(State, f64)> {
        loop {
            let h = self.h.min(h_max);
            if h < 1e-14 * (1.0 + s.abs()) {
                return Err(Error::Solver(format!(
                    "integration tolerance {:.1e} not reachable at s = {s}",
                    self.tol
                )));
            }
            let (yn, err) = dopri_step(self.p, y, h);
            let sc = |i: usize| self.tol * (1.0 + y[i].abs().max(yn[i].abs()));
            let en = (err[0] / sc(0)).abs().max((err[1] / sc(1)).abs());
            if !en.is_finite() {
                self.h = h * 0.2;
                continue;
            }
            let factor = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            if en <= 1.0 {
                // keep the proposal of the unclipped step when h_max limited it
                if h == self.h || factor < 1.0 {
                    self.h = h * factor;
                }
                return Ok((yn, h));
            }
            self.h = h * factor;
        }
    }
}

/// Integrate from state `y0` over a length `s` (which may be long).
pub fn propagate(p: f64, y0: (f64, f64), s: f64, tol: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let mut st = Stepper { p, tol, h: 1e-3 };
    let mut y = [y0.0, y0.1];
    let mut pos = 0.0;
    while pos < s {
        let (yn, h) = st.step(y, pos, s - pos)?;
        y = yn;
        pos = if s - pos - h <= 1e-15 * s.max(1.0) { s } else { pos + h };
    }
    Ok((y[0], y[1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WolffSolution {
    pub p: f64,
    pub a0: f64,
    pub b0: f64,
    pub lambda_p: f64,
    /// Uniform grid `s_j = j * lambda_p / n`, `j = 0..n`.
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub wp: Vec<f64>,
    pub c_emp: f64,
    pub big_c_emp: f64,
    pub tolerance: f64,
    /// `|w(lambda) - a0| + |w'(lambda) - b0|` at the detected return.
    pub periodicity_error: f64,
}

impl WolffSolution {
    pub fn n_samples(&self) -> usize {
        self.s.len()
    }

    /// Periodic trapezoid rule for the integral of `w` over one period.
    pub fn integral_w(&self) -> f64 {
        self.w.iter().sum::<f64>() * self.lambda_p / self.n_samples() as f64
    }

    /// `(w, w')` at arbitrary `s` by periodic cubic Hermite interpolation.
    pub fn state_at(&self, s: f64) -> (f64, f64) {
        let n = self.n_samples();
        let hs = self.lambda_p / n as f64;
        let r = s.rem_euclid(self.lambda_p) / hs;
        let j = (r.floor() as usize).min(n - 1);
        let th = r - j as f64;
        let k = (j + 1) % n;
        let (w0, w1, d0, d1) = (self.w[j], self.w[k], self.wp[j], self.wp[k]);
        let e0 = -v_unchecked(self.p, w0, d0) * w0;
        let e1 = -v_unchecked(self.p, w1, d1) * w1;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        let w = h00 * w0 + h10 * hs * d0 + h01 * w1 + h11 * hs * d1;
        let wp = h00 * d0 + h10 * hs * e0 + h01 * d1 + h11 * hs * e1;
        (w, wp)
    }

    /// First `s >= 0` with `w(s) = 0`.
    pub fn first_zero(&self) -> f64 {
        let n = self.n_samples();
        let hs = self.lambda_p / n as f64;
        let j = (0..n)
            .find(|&j| self.w[j] == 0.0 || self.w[j].signum() != self.w[(j + 1) % n].signum())
            .unwrap_or(0);
        if self.w[j] == 0.0 {
            return j as f64 * hs;
        }
        let (mut a, mut b) = (j as f64 * hs, (j + 1) as f64 * hs);
        let sa = self.w[j].signum();
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if self.state_at(m).0.signum() == sa {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }
}

/// Integrate one period starting from `(a0, b0)` and sample it on
/// `DEFAULT_SAMPLES` points.
pub fn integrate_wolff(p: f64, a0: f64, b0: f64, tol: f64) -> Result<WolffSolution> {
    integrate_wolff_with(p, a0, b0, tol, DEFAULT_SAMPLES)
}

pub fn integrate_wolff_with(p: f64, a0: f64, b0: f64, tol: f64, samples: usize) -> Result<WolffSolution> {
    check_p(p)?;
    if a0 == 0.0 && b0 == 0.0 {
        return Err(Error::Config("initial condition (0, 0) is excluded".into()));
    }
    if !(tol > 0.0 && tol < 1e-2) {
        return Err(Error::Config(format!("step tolerance must lie in (0, 1e-2), got {tol}")));
    }
    if samples < 512 {
        return Err(Error::Config(format!("at least 512 samples per period required, got {samples}")));
    }
    let y0 = [a0, b0];
    let cross = |y: State| a0 * y[1] - b0 * y[0];
    let dot = |y: State| a0 * y[0] + b0 * y[1];
    let horizon = 200.0 * PI * p.max(p / (p - 1.0));

    // oriented return: the phase point turns clockwise, so the section
    // is re-entered when the cross product drops from positive to <= 0
    let mut st = Stepper { p, tol, h: 1e-3 };
    let mut y = y0;
    let mut s = 0.0;
    let lambda = loop {
        if s > horizon {
            return Err(Error::Solver("period detection failed".into()));
        }
        let (yn, h) = st.step(y, s, f64::INFINITY)?;
        let (c0, c1) = (cross(y), cross(yn));
        if c0 > 0.0 && c1 <= 0.0 && dot(yn) > 0.0 {
            let hh = refine_root(|hh| cross(dopri_step(p, y, hh).0), 0.0, h, c0, c1);
            break s + hh;
        }
        y = yn;
        s += h;
    };
    let back = propagate(p, (a0, b0), lambda, tol)?;
    let periodicity_error = (back.0 - a0).abs() + (back.1 - b0).abs();

    let hs = lambda / samples as f64;
    let mut w = Vec::with_capacity(samples);
    let mut wp = Vec::with_capacity(samples);
    let mut st = Stepper { p, tol, h: hs.min(1e-3) };
    let mut y = y0;
    for j in 0..samples {
        w.push(y[0]);
        wp.push(y[1]);
        let target = (j + 1) as f64 * hs;
        let mut pos = j as f64 * hs;
        while pos < target {
            let (yn, h) = st.step(y, pos, target - pos)?;
            y = yn;
            pos = if target - pos - h <= 1e-15 * target { target } else { pos + h };
        }
    }
    let svals: Vec<f64> = (0..samples).map(|j| j as f64 * hs).collect();

    // extrema of w^2 + w'^2 sit at zeros of w or w'
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut consider = |yy: State| {
        let r2 = yy[0] * yy[0] + yy[1] * yy[1];
        lo = lo.min(r2);
        hi = hi.max(r2);
    };
    for j in 0..samples {
        let k = (j + 1) % samples;
        let yj = [w[j], wp[j]];
        consider(yj);
        for comp in 0..2 {
            let (f0, f1) = (yj[comp], if comp == 0 { w[k] } else { wp[k] });
            if f0 != 0.0 && f0.signum() != f1.signum() {
                let hh = refine_root(|hh| dopri_step(p, yj, hh).0[comp], 0.0, hs, f0, f1);
                consider(dopri_step(p, yj, hh).0);
            }
        }
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Solver("invalid amplitude bounds".into()));
    }
    Ok(WolffSolution {
        p,
        a0,
        b0,
        lambda_p: lambda,
        s: svals,
        w,
        wp,
        c_emp: lo,
        big_c_emp: hi,
        tolerance: tol,
        periodicity_error,
    })
}

/// Root of `f` on `[a, b]` with `f(a) = fa`, `f(b) = fb` of opposite sign
/// (Illinois variant of regula falsi).
fn refine_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> f64 {
    if fb == 0.0 {
        return b;
    }
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() <= 1e-16 * (1.0 + c.abs()) {
            return c;
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    (a * fb - b * fa) / (fb - fa)
}

/// Exponential p-harmonic field built from a periodic profile.
#[derive(Debug, Clone)]
pub struct WolffField {
    pub solution: Arc<WolffSolution>,
    rho: Vec2,
    rho_perp: Vec2,
    pub t: f64,
    pub tau: f64,
    pub log_scale: f64,
    /// Shift of the periodic argument, `w(tau x.rho_perp + phase)`.
    pub phase: f64,
}

impl WolffField {
    pub fn new(solution: Arc<WolffSolution>, rho: Vec2, t: f64, tau: f64) -> Result<Self> {
        if (rho.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("rho must be a unit vector, |rho| = {}", rho.norm())));
        }
        if !(tau > 0.0 && tau.is_finite()) || !t.is_finite() {
            return Err(Error::Config(format!("tau must be positive and finite, got {tau}")));
        }
        Ok(WolffField { solution, rho, rho_perp: rho.perp(), t, tau, log_scale: 0.0, phase: 0.0 })
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Phase that puts a zero of the profile at the boundary point where
    /// `x.rho` is largest (the midpoint of the maximizers when several
    /// tie). The discretization defect of the trace is concentrated
    /// there, so a vanishing trace at that point keeps it small.
    pub fn anchored_at_peak(self, mesh: &TriMesh) -> Self {
        let pts: Vec<Vec2> = mesh.boundary_loop().iter().map(|&v| mesh.vertices()[v]).collect();
        let m = pts.iter().map(|x| x.dot(self.rho)).fold(f64::NEG_INFINITY, f64::max);
        let tie = 1e-12 * (1.0 + m.abs());
        let top: Vec<f64> = pts.iter().filter(|x| x.dot(self.rho) >= m - tie).map(|x| x.dot(self.rho_perp)).collect();
        let lo = top.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let phase = self.solution.first_zero() - self.tau * 0.5 * (lo + hi);
        self.with_phase(phase)
    }

    pub fn rho(&self) -> Vec2 {
        self.rho
    }

    pub fn rho_perp(&self) -> Vec2 {
        self.rho_perp
    }

    /// `u(x)` and its gradient.
    pub fn value(&self, x: Vec2) -> Result<(f64, Vec2)> {
        let expo = self.tau * (x.dot(self.rho) - self.t) + self.log_scale;
        if expo.abs() > OVERFLOW_CAP {
            return Err(Error::Config(format!(
                "exponent {expo:.1} exceeds the overflow cap; evaluate a normalized boundary trace instead"
            )));
        }
        let (w, wp) = self.solution.state_at(self.tau * x.dot(self.rho_perp) + self.phase);
        let e = expo.exp();
        Ok((e * w, (self.rho * w + self.rho_perp * wp) * (self.tau * e)))
    }
}

pub fn field_value(field: &WolffField, x: Vec2) -> Result<(f64, Vec2)> {
    field.value(x)
}

/// Boundary values of the field, sup-normalized. The exponent is taken
/// relative to its maximum over the boundary, so the stored values do
/// not depend on `t` at all; `t` only enters through `log_scale`.
pub fn boundary_trace(field: &WolffField, mesh: &TriMesh) -> Result<BoundaryTrace> {
    let pts: Vec<Vec2> = mesh.boundary_loop().iter().map(|&v| mesh.vertices()[v]).collect();
    let ex: Vec<f64> = pts.iter().map(|x| field.tau * x.dot(field.rho)).collect();
    let m = ex.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = pts
        .iter()
        .zip(&ex)
        .map(|(x, e)| (e - m).exp() * field.solution.state_at(field.tau * x.dot(field.rho_perp) + field.phase).0)
        .collect();
    let raw = BoundaryTrace::with_scale(mesh, values, m - field.tau * field.t + field.log_scale)?;
    if raw.sup_norm() == 0.0 {
        return Err(Error::Solver("Wolff trace vanishes on the boundary".into()));
    }
    Ok(raw.normalized())
}
