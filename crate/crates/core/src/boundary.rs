//! Boundary determination on strictly convex domains: bisection over
//! constant test conductivities, reading the blow-up sign of the
//! indicator against `Lambda_gamma`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dnmap::{tau_cap, DnOracle};
use crate::enclosure::{classify_curve, indicator, tau_schedule, Classification, IndicatorCurve, IndicatorQuery, IndicatorSample};
use crate::enclosure::ClassifyOptions;
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Vec2};
use crate::par::{self, Parallelism};
use crate::wolff::WolffSolution;

const ON_BOUNDARY: f64 = 1e-9;

/// Outward direction `rho` with `rho . x0 = max_{x in Omega} rho . x`.
pub fn supporting_direction(domain: &DomainSpec, x0: Vec2) -> Result<Vec2> {
    domain.validate()?;
    match domain {
        DomainSpec::Disk { center, radius } => {
            let r = x0.dist(*center);
            if (r - radius).abs() > ON_BOUNDARY * radius.max(1.0) {
                return Err(Error::Geometry(format!(
                    "({}, {}) is not on the disk boundary (distance {r} from the center)",
                    x0.x, x0.y
                )));
            }
            Ok((x0 - *center) * (1.0 / r))
        }
        DomainSpec::UnitSquare => polygon_vertex_direction(
            &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)],
            x0,
        ),
        DomainSpec::ConvexPolygon { vertices } => polygon_vertex_direction(vertices, x0),
    }
}

fn polygon_vertex_direction(vertices: &[Vec2], x0: Vec2) -> Result<Vec2> {
    let n = vertices.len();
    if let Some(i) = vertices.iter().position(|v| v.dist(x0) <= ON_BOUNDARY) {
        let prev = vertices[(i + n - 1) % n];
        let next = vertices[(i + 1) % n];
        // outward normals of the two edges at a counterclockwise vertex
        let n1 = (vertices[i] - prev).perp().normalized() * -1.0;
        let n2 = (next - vertices[i]).perp().normalized() * -1.0;
        return Ok((n1 + n2).normalized());
    }
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let e = b - a;
        let s = (x0 - a).dot(e) / e.norm_sq();
        if s > 0.0 && s < 1.0 && (a + e * s).dist(x0) <= ON_BOUNDARY {
            return Err(Error::Geometry(format!(
                "({}, {}) lies inside an edge, where the boundary is not strictly convex",
                x0.x, x0.y
            )));
        }
    }
    Err(Error::Geometry(format!("({}, {}) is not on the polygon boundary", x0.x, x0.y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryQuery {
    pub x0: Vec2,
    pub rho: Vec2,
    pub t0: f64,
    pub t: f64,
    pub gamma_bracket: (f64, f64),
}

impl BoundaryQuery {
    /// Query at `x0` with the probe offset `t0 - 0.05 diam` and the
    /// bracket `(0.25, 4)`.
    pub fn at(oracle: &DnOracle, x0: Vec2) -> Result<Self> {
        let mesh = oracle.mesh();
        let rho = supporting_direction(mesh.domain(), x0)?;
        let t0 = rho.dot(x0);
        Self::new(oracle, x0, rho, t0 - 0.05 * mesh.domain().diameter(), (0.25, 4.0))
    }

    pub fn new(oracle: &DnOracle, x0: Vec2, rho: Vec2, t: f64, gamma_bracket: (f64, f64)) -> Result<Self> {
        if (rho.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("rho must be a unit vector".into()));
        }
        let t0 = rho.dot(x0);
        let top = oracle.mesh().vertices().iter().map(|v| v.dot(rho)).fold(f64::NEG_INFINITY, f64::max);
        if top > t0 + ON_BOUNDARY {
            return Err(Error::Geometry(format!(
                "rho does not support the mesh at x0: max rho.x = {top}, rho.x0 = {t0}"
            )));
        }
        if !(t < t0) {
            return Err(Error::Config(format!("probe offset {t} must be below t0 = {t0}")));
        }
        let (lo, hi) = gamma_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid gamma bracket ({lo}, {hi})")));
        }
        Ok(BoundaryQuery { x0, rho, t0, t, gamma_bracket })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    pub tau_multipliers: Vec<f64>,
    pub classify: ClassifyOptions,
    pub tolerance: f64,
    /// Geometric widenings allowed when the bracket does not straddle.
    pub max_widenings: usize,
    pub parallelism: Parallelism,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        BoundaryOptions {
            tau_multipliers: (4..=32).map(f64::from).collect(),
            classify: ClassifyOptions::default(),
            tolerance: 1e-3,
            max_widenings: 10,
            parallelism: Parallelism::default(),
        }
    }
}

/// `I_gamma(t, tau) = tau^{-p} <(Lambda_sigma - Lambda_gamma) f_tau, f_tau>`.
/// Constant weights keep the Wolff field p-harmonic, so `f_tau` does not
/// depend on `gamma`.
pub fn indicator_gamma(
    sigma: &DnOracle,
    gamma: f64,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    q: &BoundaryQuery,
    tau: f64,
    noise_floor: f64,
) -> Result<IndicatorSample> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let reference = DnOracle::constant(one.system().clone(), gamma, one.config().clone())?;
    indicator(sigma, &reference, one, wolff, IndicatorQuery::new(q.rho, q.t, tau)?, noise_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaStep {
    pub gamma: f64,
    pub class: Classification,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecovery {
    pub x0: Vec2,
    pub value: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// True when a midpoint classified as neither blow-up and was
    /// returned directly.
    pub equality_branch: bool,
    pub trace: Vec<GammaStep>,
}

impl BoundaryRecovery {
    pub fn bracket_width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

fn curve_for(
    sigma: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    q: &BoundaryQuery,
    gamma: f64,
    taus: &[f64],
    opts: &BoundaryOptions,
) -> Result<IndicatorCurve> {
    let samples = par::try_map(opts.parallelism, taus, |&tau| {
        indicator_gamma(sigma, gamma, one, wolff, q, tau, opts.classify.noise_floor)
    })?;
    Ok(IndicatorCurve { rho: q.rho, t: q.t, p: sigma.p(), diam: sigma.mesh().domain().diameter(), samples })
}

/// Bisection on `gamma`: positive blow-up means `gamma` is below
/// `sigma(x0)`, negative blow-up means above.
pub fn recover_boundary_value(
    sigma: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    q: &BoundaryQuery,
    opts: &BoundaryOptions,
) -> Result<BoundaryRecovery> {
    opts.classify.validate()?;
    if !(opts.tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let mesh = sigma.mesh();
    let (lo_ext, hi_ext) = mesh.extent_along(q.rho);
    let taus = tau_schedule(&opts.tau_multipliers, hi_ext - lo_ext, tau_cap(mesh));
    if taus.len() < 4 {
        return Err(Error::Config(format!("only {} distinct frequencies below the cap", taus.len())));
    }
    let classify = |gamma: f64| -> Result<Classification> {
        Ok(classify_curve(&curve_for(sigma, one, wolff, q, gamma, &taus, opts)?, &opts.classify))
    };
    let (mut lo, mut hi) = q.gamma_bracket;
    let mut trace = Vec::new();
    let mut widenings = 0;
    loop {
        let cl = classify(lo)?;
        let ch = classify(hi)?;
        trace.push(GammaStep { gamma: lo, class: cl, low: lo, high: hi });
        trace.push(GammaStep { gamma: hi, class: ch, low: lo, high: hi });
        let low_ok = cl == Classification::BlowupPos;
        let high_ok = ch == Classification::BlowupNeg;
        if low_ok && high_ok {
            break;
        }
        if widenings == opts.max_widenings {
            return Err(Error::Inconclusive(format!(
                "x0 value outside probe range: bracket ({lo}, {hi}) classifies as ({}, {})",
                cl.as_str(),
                ch.as_str()
            )));
        }
        if !low_ok {
            lo *= 0.5;
        }
        if !high_ok {
            hi *= 2.0;
        }
        widenings += 1;
    }
    let mut iterations = 0;
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        let c = classify(mid)?;
        trace.push(GammaStep { gamma: mid, class: c, low: lo, high: hi });
        match c {
            Classification::BlowupPos => lo = mid,
            Classification::BlowupNeg => hi = mid,
            Classification::Decay | Classification::Undecided => {
                return Ok(BoundaryRecovery {
                    x0: q.x0,
                    value: mid,
                    bracket: (lo, hi),
                    iterations,
                    equality_branch: true,
                    trace,
                });
            }
        }
    }
    Ok(BoundaryRecovery {
        x0: q.x0,
        value: 0.5 * (lo + hi),
        bracket: (lo, hi),
        iterations,
        equality_branch: false,
        trace,
    })
}

/// Recover at several boundary points, in parallel across points.
pub fn recover_many(
    sigma: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    points: &[Vec2],
    opts: &BoundaryOptions,
) -> Result<Vec<BoundaryRecovery>> {
    let inner = BoundaryOptions { parallelism: Parallelism::Sequential, ..opts.clone() };
    par::try_map(opts.parallelism, points, |&x0| {
        let q = BoundaryQuery::at(sigma, x0)?;
        recover_boundary_value(sigma, one, wolff, &q, &inner)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_directions_are_radial() {
        let d = DomainSpec::Disk { center: Vec2::new(0.0, 0.0), radius: 1.0 };
        let r = supporting_direction(&d, Vec2::new(1.0, 0.0)).unwrap();
        assert!((r.x - 1.0).abs() < 1e-15 && r.y.abs() < 1e-15);
        let d = DomainSpec::Disk { center: Vec2::new(0.3, -0.2), radius: 0.5 };
        let x0 = Vec2::new(0.3, -0.2) + Vec2::from_angle(2.0) * 0.5;
        let r = supporting_direction(&d, x0).unwrap();
        assert!(r.dist(Vec2::from_angle(2.0)) < 1e-12);
        assert!(supporting_direction(&d, Vec2::new(0.3, -0.2)).is_err());
    }

    #[test]
    fn polygon_vertex_supports() {
        let verts = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.2), Vec2::new(2.5, 1.5), Vec2::new(0.7, 2.0)];
        let d = DomainSpec::ConvexPolygon { vertices: verts.clone() };
        for &x0 in &verts {
            let r = supporting_direction(&d, x0).unwrap();
            for v in &verts {
                assert!(r.dot(x0) >= r.dot(*v) - 1e-12);
            }
        }
        assert!(supporting_direction(&d, Vec2::new(1.0, 0.1)).is_err());
        assert!(supporting_direction(&d, Vec2::new(1.0, 1.0)).is_err());
        let sq = supporting_direction(&DomainSpec::UnitSquare, Vec2::new(1.0, 1.0)).unwrap();
        assert!(sq.dist(Vec2::new(1.0, 1.0).normalized()) < 1e-12);
        assert!(supporting_direction(&DomainSpec::UnitSquare, Vec2::new(0.5, 0.0)).is_err());
    }
}
