//! Enclosure method: indicator sweeps along Wolff traces, growth
//! classification, support estimation by bisection in `t`, and hull
//! assembly from the estimated supports.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dnmap::{deficit, tau_cap, DnOracle};
use crate::error::{Error, Result};
use crate::geometry::{direction_grid, halfspace_intersection, HalfSpace, HullPolygon, Intersection, SignClass, Vec2};
use crate::par::{self, Parallelism};
use crate::wolff::{boundary_trace, WolffField, WolffSolution};

/// Power of `tau` by which the indicator of a smooth convex inclusion
/// falls short of pure exponential growth.
pub const LAPLACE_EXPONENT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorQuery {
    pub rho: Vec2,
    pub t: f64,
    pub tau: f64,
}

impl IndicatorQuery {
    pub fn new(rho: Vec2, t: f64, tau: f64) -> Result<Self> {
        if (rho.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("direction must be a unit vector, |rho| = {}", rho.norm())));
        }
        if !(tau > 0.0) || !tau.is_finite() || !t.is_finite() {
            return Err(Error::Config(format!("invalid indicator query t = {t}, tau = {tau}")));
        }
        Ok(IndicatorQuery { rho, t, tau })
    }
}

/// One indicator value `tau^{-p} <(Lambda_sigma - Lambda_ref) f_tau, f_tau>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSample {
    pub tau: f64,
    /// Zero when the deficit is below the noise floor.
    pub sign: i8,
    /// `ln |I|`, clamped to the noise-floor level when `sign == 0`.
    pub log_abs: f64,
    /// `|deficit| / <Lambda_1 f_tau, f_tau>`.
    pub relative: f64,
}

/// Classification thresholds shared by the enclosure and boundary
/// pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    /// In natural-log units per unit `tau * diam(Omega)`.
    pub slope_threshold: f64,
    /// Relative deficits below this carry no information.
    pub noise_floor: f64,
    /// Exponent of the `tau` prefactor removed before fitting the slope.
    pub tau_exponent: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { slope_threshold: 0.005, noise_floor: 1e-6, tau_exponent: LAPLACE_EXPONENT }
    }
}

impl ClassifyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope_threshold > 0.0) || !(self.noise_floor > 0.0) || !self.tau_exponent.is_finite() {
            return Err(Error::Config(format!("invalid classification options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Decay,
    BlowupPos,
    BlowupNeg,
    Undecided,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Decay => "decay",
            Classification::BlowupPos => "blowup_pos",
            Classification::BlowupNeg => "blowup_neg",
            Classification::Undecided => "undecided",
        }
    }

    pub fn is_blowup(self) -> bool {
        matches!(self, Classification::BlowupPos | Classification::BlowupNeg)
    }
}

/// Indicator values along a `tau` schedule at a fixed `(rho, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorCurve {
    pub rho: Vec2,
    pub t: f64,
    pub p: f64,
    /// Length used to make slopes dimensionless.
    pub diam: f64,
    pub samples: Vec<IndicatorSample>,
}

/// Fitted growth of an indicator curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveFit {
    /// Every sample is below the noise floor.
    Silent,
    /// Informative samples disagree in sign, or too few remain.
    Incoherent,
    Slope { sign: i8, slope: f64 },
}

impl IndicatorCurve {
    /// Curve from raw `(tau, signed I)` values with no noise information.
    pub fn from_values(rho: Vec2, t: f64, p: f64, diam: f64, values: &[(f64, f64)]) -> Self {
        let samples = values
            .iter()
            .map(|&(tau, v)| IndicatorSample {
                tau,
                sign: if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                },
                log_abs: if v != 0.0 { v.abs().ln() } else { f64::MIN },
                relative: if v != 0.0 { 1.0 } else { 0.0 },
            })
            .collect();
        IndicatorCurve { rho, t, p, diam, samples }
    }

    pub fn taus(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    /// The same curve at offset `t`: `I(t, tau) = I(t0, tau) e^{-p tau (t - t0)}`.
    pub fn shifted(&self, t: f64) -> IndicatorCurve {
        let dt = t - self.t;
        let samples = self
            .samples
            .iter()
            .map(|s| IndicatorSample { log_abs: s.log_abs - self.p * s.tau * dt, ..*s })
            .collect();
        IndicatorCurve { t, samples, ..self.clone() }
    }

    /// Least-squares slope (per unit `tau`) of `ln|I| + e ln tau` over the
    /// upper half of the informative samples, which must agree in sign.
    pub fn fit(&self, opts: &ClassifyOptions) -> CurveFit {
        let informative: Vec<&IndicatorSample> =
            self.samples.iter().filter(|s| s.sign != 0 && s.relative >= opts.noise_floor).collect();
        if informative.is_empty() {
            return CurveFit::Silent;
        }
        let n = informative.len();
        let take = n.div_ceil(2).max(n.min(3));
        let window = &informative[n - take..];
        let sign = window[0].sign;
        if window.iter().any(|s| s.sign != sign) || window.len() < 2 {
            return CurveFit::Incoherent;
        }
        let xs: Vec<f64> = window.iter().map(|s| s.tau).collect();
        let ys: Vec<f64> = window.iter().map(|s| s.log_abs + opts.tau_exponent * s.tau.ln()).collect();
        CurveFit::Slope { sign, slope: least_squares_slope(&xs, &ys) }
    }

    /// Offset at which the fitted slope vanishes.
    pub fn critical_offset(&self, opts: &ClassifyOptions) -> Option<f64> {
        match self.fit(opts) {
            CurveFit::Slope { slope, .. } => Some(self.t + slope / self.p),
            _ => None,
        }
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn classify_curve(curve: &IndicatorCurve, opts: &ClassifyOptions) -> Classification {
    if curve.samples.len() < 4 {
        return Classification::Undecided;
    }
    match curve.fit(opts) {
        CurveFit::Silent => Classification::Decay,
        CurveFit::Incoherent => Classification::Undecided,
        CurveFit::Slope { sign, slope } => {
            let s = slope * curve.diam;
            if s > opts.slope_threshold {
                if sign > 0 {
                    Classification::BlowupPos
                } else {
                    Classification::BlowupNeg
                }
            } else if s < -opts.slope_threshold {
                Classification::Decay
            } else {
                Classification::Undecided
            }
        }
    }
}

/// `I_rho(t, tau)` for `sigma` against `reference`.
pub fn indicator(
    sigma: &DnOracle,
    reference: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    q: IndicatorQuery,
    noise_floor: f64,
) -> Result<IndicatorSample> {
    let ctx = || format!("indicator at rho = ({:.4}, {:.4}), t = {}, tau = {}", q.rho.x, q.rho.y, q.t, q.tau);
    let field = WolffField::new(wolff.clone(), q.rho, q.t, q.tau).map_err(|e| e.context(&ctx()))?;
    let f = boundary_trace(&field, sigma.mesh()).map_err(|e| e.context(&ctx()))?;
    let d = deficit(sigma, reference, &f).map_err(|e| e.context(&ctx()))?;
    let e1 = one.self_pair(&f).map_err(|e| e.context(&ctx()))?;
    let p = sigma.p();
    let scale = e1.mantissa.abs();
    let relative = if scale > 0.0 { d.mantissa.abs() / scale } else { 0.0 };
    let tau_term = p * q.tau.ln();
    if relative < noise_floor || d.mantissa == 0.0 {
        let level = if scale > 0.0 { (noise_floor * scale).ln() + e1.log_scale } else { f64::MIN };
        return Ok(IndicatorSample { tau: q.tau, sign: 0, log_abs: level - tau_term, relative });
    }
    Ok(IndicatorSample { tau: q.tau, sign: d.signum() as i8, log_abs: d.ln_abs() - tau_term, relative })
}

/// Frequencies `m / extent(rho)` for each multiplier `m`, capped at the
/// mesh resolution limit and deduplicated after capping.
pub fn tau_schedule(multipliers: &[f64], extent: f64, cap: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &m in multipliers {
        let tau = (m / extent).min(cap);
        if out.last().is_none_or(|&last| tau > last) {
            out.push(tau);
        }
    }
    out
}

/// Indicator curve at offset `t` over a `tau` schedule.
pub fn indicator_curve(
    sigma: &DnOracle,
    reference: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    rho: Vec2,
    t: f64,
    taus: &[f64],
    opts: &ClassifyOptions,
    mode: Parallelism,
) -> Result<IndicatorCurve> {
    let queries = taus.iter().map(|&tau| IndicatorQuery::new(rho, t, tau)).collect::<Result<Vec<_>>>()?;
    let samples = par::try_map(mode, &queries, |q| indicator(sigma, reference, one, wolff, *q, opts.noise_floor))?;
    Ok(IndicatorCurve { rho, t, p: sigma.p(), diam: sigma.mesh().domain().diameter(), samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureOptions {
    /// `tau * extent(rho)` values.
    pub tau_multipliers: Vec<f64>,
    pub classify: ClassifyOptions,
    /// Bisection stops once the bracket is this narrow; defaults to a
    /// quarter cell width when absent.
    pub tolerance: Option<f64>,
    pub parallelism: Parallelism,
}

impl Default for EnclosureOptions {
    fn default() -> Self {
        EnclosureOptions {
            tau_multipliers: (4..=32).map(f64::from).collect(),
            classify: ClassifyOptions::default(),
            tolerance: None,
            parallelism: Parallelism::default(),
        }
    }
}

impl EnclosureOptions {
    pub fn validate(&self) -> Result<()> {
        self.classify.validate()?;
        if self.tau_multipliers.len() < 4 {
            return Err(Error::Config("tau schedule needs at least 4 entries".into()));
        }
        if self.tau_multipliers.windows(2).any(|w| !(w[1] > w[0])) || !(self.tau_multipliers[0] > 0.0) {
            return Err(Error::Config("tau schedule must be positive and strictly increasing".into()));
        }
        if self.tolerance.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportStatus {
    Converged,
    /// Bisection hit the undecided band; `h_est` is that midpoint.
    Undecided,
    NoInclusion,
    Inconclusive,
}

impl SupportStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SupportStatus::Converged => "converged",
            SupportStatus::Undecided => "undecided",
            SupportStatus::NoInclusion => "no-inclusion",
            SupportStatus::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub t: f64,
    pub class: Classification,
    pub t_low: f64,
    pub t_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub rho: Vec2,
    pub h_est: f64,
    pub bracket: (f64, f64),
    pub status: SupportStatus,
    /// Sign of the blow-ups seen (0 when none).
    pub sign: i8,
    pub trace: Vec<BisectionStep>,
    pub curve: IndicatorCurve,
    pub tau_cap: f64,
}

/// Bisection in `t` on one measured curve, using the translation identity
/// to move the curve to each midpoint.
pub fn bisect_support(
    curve: &IndicatorCurve,
    bracket: (f64, f64),
    tolerance: f64,
    opts: &ClassifyOptions,
    tau_cap: f64,
) -> Result<SupportEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(hi > lo) {
        return Err(Error::Config(format!("empty bracket ({lo}, {hi})")));
    }
    let mut trace = Vec::new();
    let mut sign = 0i8;
    let rho = curve.rho;
    let done = |h_est, lo, hi, status, sign, trace| SupportEstimate {
        rho,
        h_est,
        bracket: (lo, hi),
        status,
        sign,
        trace,
        curve: curve.clone(),
        tau_cap,
    };
    if let CurveFit::Silent = curve.fit(opts) {
        return Ok(done(lo, lo, hi, SupportStatus::NoInclusion, 0, trace));
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let class = classify_curve(&curve.shifted(mid), opts);
        trace.push(BisectionStep { t: mid, class, t_low: lo, t_high: hi });
        match class {
            Classification::BlowupPos | Classification::BlowupNeg => {
                sign = if class == Classification::BlowupPos { 1 } else { -1 };
                lo = mid;
            }
            Classification::Decay => hi = mid,
            Classification::Undecided => {
                if trace.len() == 1 && matches!(curve.fit(opts), CurveFit::Incoherent) {
                    return Err(Error::Inconclusive(format!(
                        "indicator inconclusive for rho = ({:.4}, {:.4}): signs {:?}",
                        rho.x,
                        rho.y,
                        curve.samples.iter().map(|s| s.sign).collect::<Vec<_>>()
                    )));
                }
                if let CurveFit::Slope { sign: s, .. } = curve.fit(opts) {
                    sign = s;
                }
                return Ok(done(mid, lo, hi, SupportStatus::Undecided, sign, trace));
            }
        }
    }
    if sign == 0 {
        if let CurveFit::Slope { sign: s, .. } = curve.fit(opts) {
            sign = s;
        }
    }
    Ok(done(0.5 * (lo + hi), lo, hi, SupportStatus::Converged, sign, trace))
}

/// Support estimate in direction `rho`, bracketed by the domain's extent.
pub fn estimate_support(
    sigma: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    rho: Vec2,
    opts: &EnclosureOptions,
) -> Result<SupportEstimate> {
    opts.validate()?;
    let mesh = sigma.mesh();
    let (lo, hi) = mesh.extent_along(rho);
    let cap = tau_cap(mesh);
    let taus = tau_schedule(&opts.tau_multipliers, hi - lo, cap);
    if taus.len() < 4 {
        return Err(Error::Config(format!("only {} distinct frequencies below the cap {cap}", taus.len())));
    }
    let curve = indicator_curve(sigma, one, one, wolff, rho, hi, &taus, &opts.classify, opts.parallelism)?;
    let tol = opts.tolerance.unwrap_or(0.25 * mesh.cell_width());
    bisect_support(&curve, (lo, hi), tol, &opts.classify, cap)
}

#[derive(Debug, Clone)]
pub struct HullReconstruction {
    /// `None` for a homogeneous verdict or when the half-spaces leave
    /// nothing.
    pub hull: Option<HullPolygon>,
    pub sign_class: SignClass,
    pub estimates: Vec<SupportEstimate>,
}

/// Per-direction support estimates intersected into a hull, with the
/// sign class read off the majority blow-up sign.
pub fn reconstruct_hull(
    sigma: &DnOracle,
    one: &DnOracle,
    wolff: &Arc<WolffSolution>,
    directions: usize,
    opts: &EnclosureOptions,
) -> Result<HullReconstruction> {
    if directions < 8 {
        return Err(Error::Config(format!("need at least 8 directions, got {directions}")));
    }
    opts.validate()?;
    let dirs = direction_grid(directions);
    let inner = EnclosureOptions { parallelism: Parallelism::Sequential, ..opts.clone() };
    let results = par::map(opts.parallelism, &dirs, |&rho| estimate_support(sigma, one, wolff, rho, &inner));
    let mut estimates = Vec::with_capacity(dirs.len());
    for (rho, r) in dirs.iter().zip(results) {
        match r {
            Ok(e) => estimates.push(e),
            Err(Error::Inconclusive(_)) => {
                let mesh = sigma.mesh();
                let (lo, hi) = mesh.extent_along(*rho);
                estimates.push(SupportEstimate {
                    rho: *rho,
                    h_est: hi,
                    bracket: (lo, hi),
                    status: SupportStatus::Inconclusive,
                    sign: 0,
                    trace: Vec::new(),
                    curve: IndicatorCurve { rho: *rho, t: hi, p: sigma.p(), diam: mesh.domain().diameter(), samples: vec![] },
                    tau_cap: tau_cap(mesh),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if estimates.iter().all(|e| e.status == SupportStatus::NoInclusion) {
        return Ok(HullReconstruction { hull: None, sign_class: SignClass::Homogeneous, estimates });
    }
    let pos = estimates.iter().filter(|e| e.sign > 0).count();
    let neg = estimates.iter().filter(|e| e.sign < 0).count();
    let sign_class = if pos > neg {
        SignClass::Geq1
    } else if neg > pos {
        SignClass::Leq1
    } else {
        SignClass::Indefinite
    };
    let halfspaces = estimates
        .iter()
        .filter(|e| matches!(e.status, SupportStatus::Converged | SupportStatus::Undecided))
        .map(|e| HalfSpace::new(e.rho, e.h_est))
        .collect::<Result<Vec<_>>>()?;
    let hull = match halfspace_intersection(&halfspaces)? {
        Intersection::Polygon(mut h) => {
            h.set_directions(&dirs);
            Some(h)
        }
        Intersection::Empty => None,
    };
    Ok(HullReconstruction { hull, sign_class, estimates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64) -> IndicatorCurve {
        let vals: Vec<(f64, f64)> = (1..=12).map(|k| (k as f64, f(k as f64))).collect();
        IndicatorCurve::from_values(Vec2::new(1.0, 0.0), 0.0, 2.0, 1.0, &vals)
    }

    #[test]
    fn synthetic_classes() {
        let o = ClassifyOptions::default();
        assert_eq!(classify_curve(&synthetic(|t| (-t).exp()), &o), Classification::Decay);
        assert_eq!(classify_curve(&synthetic(|t| (0.5 * t).exp()), &o), Classification::BlowupPos);
        assert_eq!(classify_curve(&synthetic(|t| -(0.5 * t).exp()), &o), Classification::BlowupNeg);
        let alt = synthetic(|t| if (t as i64) % 2 == 0 { 1.0 } else { -1.0 });
        assert_eq!(classify_curve(&alt, &o), Classification::Undecided);
        assert_eq!(classify_curve(&synthetic(|_| 0.0), &o), Classification::Decay);
    }

    #[test]
    fn too_few_samples_undecided() {
        let c = IndicatorCurve::from_values(Vec2::new(1.0, 0.0), 0.0, 2.0, 1.0, &[(1.0, 1.0), (2.0, 10.0), (3.0, 100.0)]);
        assert_eq!(classify_curve(&c, &ClassifyOptions::default()), Classification::Undecided);
    }

    #[test]
    fn shift_is_exact_exponential() {
        let c = synthetic(|t| (0.3 * t).exp());
        let s = c.shifted(0.25);
        for (a, b) in c.samples.iter().zip(&s.samples) {
            assert!((a.log_abs - b.log_abs - 2.0 * a.tau * 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn bisection_finds_synthetic_critical_offset() {
        // ln I = p tau h - 1.5 ln tau with h = 0.37 at t = 0
        let h = 0.37;
        let c = synthetic(|t| (2.0 * t * h).exp() * t.powf(-1.5));
        let e = bisect_support(&c, (-1.0, 1.0), 1e-4, &ClassifyOptions::default(), 100.0).unwrap();
        assert!((e.h_est - h).abs() < 0.01, "{e:?}");
        assert!(e.bracket.0 < e.h_est && e.h_est <= e.bracket.1);
        assert_eq!(e.sign, 1);
        for w in e.trace.windows(2) {
            assert!(w[1].t_low >= w[0].t_low && w[1].t_high <= w[0].t_high);
        }
    }

    #[test]
    fn silent_curve_is_no_inclusion() {
        let c = synthetic(|_| 0.0);
        let e = bisect_support(&c, (-1.0, 1.0), 1e-3, &ClassifyOptions::default(), 100.0).unwrap();
        assert_eq!(e.status, SupportStatus::NoInclusion);
    }

    #[test]
    fn incoherent_curve_errors() {
        let c = synthetic(|t| if (t as i64) % 2 == 0 { 1.0 } else { -1.0 });
        let r = bisect_support(&c, (-1.0, 1.0), 1e-3, &ClassifyOptions::default(), 100.0);
        assert!(matches!(r, Err(Error::Inconclusive(_))));
    }

    #[test]
    fn schedule_is_capped_and_strict() {
        let s = tau_schedule(&[4.0, 8.0, 12.0, 16.0], 0.5, 20.0);
        assert_eq!(s, vec![8.0, 16.0, 20.0]);
    }

    #[test]
    fn query_validation() {
        assert!(IndicatorQuery::new(Vec2::new(1.0, 1.0), 0.0, 1.0).is_err());
        assert!(IndicatorQuery::new(Vec2::new(1.0, 0.0), 0.0, 0.0).is_err());
        assert!(IndicatorQuery::new(Vec2::new(0.0, 1.0), 0.3, 2.0).is_ok());
    }
}
