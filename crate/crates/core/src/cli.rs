//! Experiment harness: scene files in, CSV/SVG artifacts and a JSON run
//! summary out.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::boundary::{recover_many, BoundaryOptions};
use crate::dnmap::{default_dictionary, measure_deficits, DictionaryOptions, DnOracle};
use crate::enclosure::{reconstruct_hull, EnclosureOptions, HullReconstruction};
use crate::error::{Error, Result};
use crate::geometry::{
    convex_hull_of_cells, direction_grid, discrete_support_set, hausdorff, ConductivityScene, DomainSpec, HullPolygon,
    Vec2,
};
use crate::io::{self, Overlay, SceneFile};
use crate::monotonicity::{ball_grid, scan, ScanOptions, ScanResult, TestRegion};
use crate::par::Parallelism;
use crate::psolver::{BoundaryTrace, FeSystem, SolverConfig};
use crate::wolff::{integrate_wolff, WolffSolution};

/// Threshold for the painted "true" inclusion cells.
const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "pcond", version, about = "p-conductivity forward solver and inclusion reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Dirichlet problem for one boundary trace.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Trace CSV (x, y, value) in boundary-loop order; defaults to f = x.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Integrate the periodic Wolff profile and report its constants.
    Wolff {
        #[arg(long)]
        p: f64,
        /// Directory for a one-period CSV dump.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enclosure-method hull reconstruction.
    Enclosure(RunArgs),
    /// Monotonicity-method hull reconstruction.
    Monotonicity(RunArgs),
    /// Boundary-value recovery at boundary points.
    Boundary {
        #[command(flatten)]
        run: RunArgs,
        /// Points as `x,y;x,y;...`; defaults to the scene's list or the
        /// domain's extreme points.
        #[arg(long)]
        points: Option<String>,
    },
    /// Run both reconstruction methods and compare the hulls.
    Compare(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Number of equispaced probe and hull directions.
    #[arg(long, default_value_t = 32)]
    pub directions: usize,
    /// Comma-separated `tau * extent` multipliers.
    #[arg(long)]
    pub tau_schedule: Option<String>,
    /// Comma-separated alpha values for the monotonicity tests.
    #[arg(long)]
    pub alpha_schedule: Option<String>,
    /// Bisection tolerance (offset for enclosure, value for boundary).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Seed for the random dictionary traces.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Ball-grid stride in cells.
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    /// Ball radius in cell widths.
    #[arg(long, default_value_t = 2.0)]
    pub ball_radius: f64,
    /// Also write an SVG overlay.
    #[arg(long)]
    pub svg: bool,
    /// Disable data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Solve,
    Wolff,
    Enclosure,
    Monotonicity,
    Boundary,
    Compare,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Solve => "solve",
            Method::Wolff => "wolff",
            Method::Enclosure => "enclosure",
            Method::Monotonicity => "monotonicity",
            Method::Boundary => "boundary",
            Method::Compare => "compare",
        }
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub method: Method,
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub p: Option<f64>,
    pub trace: Option<PathBuf>,
    pub points: Option<Vec<Vec2>>,
    pub directions: usize,
    pub tau_schedule: Option<Vec<f64>>,
    pub alpha_schedule: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub seed: u64,
    pub stride: usize,
    pub ball_radius: f64,
    pub svg: bool,
    pub parallelism: Parallelism,
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Config(format!("{what}: cannot parse {x:?}: {e}"))))
        .collect()
}

fn parse_points(s: &str) -> Result<Vec<Vec2>> {
    s.split(';')
        .filter(|x| !x.trim().is_empty())
        .map(|pt| {
            let v = parse_list(pt, "points")?;
            match v[..] {
                [x, y] => Ok(Vec2::new(x, y)),
                _ => Err(Error::Config(format!("points: expected x,y, got {pt:?}"))),
            }
        })
        .collect()
}

impl RunConfig {
    fn from_run(method: Method, a: &RunArgs) -> Result<Self> {
        Ok(RunConfig {
            method,
            scene: Some(a.scene.clone()),
            out: Some(a.out.clone()),
            p: None,
            trace: None,
            points: None,
            directions: a.directions,
            tau_schedule: a.tau_schedule.as_deref().map(|s| parse_list(s, "tau schedule")).transpose()?,
            alpha_schedule: a.alpha_schedule.as_deref().map(|s| parse_list(s, "alpha schedule")).transpose()?,
            tolerance: a.tolerance,
            seed: a.seed,
            stride: a.stride,
            ball_radius: a.ball_radius,
            svg: a.svg,
            parallelism: if a.sequential { Parallelism::Sequential } else { Parallelism::Parallel },
        })
    }

    pub fn from_cli(cli: &Cli) -> Result<Self> {
        match &cli.command {
            Command::Solve { run, trace } => {
                Ok(RunConfig { trace: trace.clone(), ..Self::from_run(Method::Solve, run)? })
            }
            Command::Wolff { p, out } => Ok(RunConfig {
                method: Method::Wolff,
                scene: None,
                out: out.clone(),
                p: Some(*p),
                trace: None,
                points: None,
                directions: 32,
                tau_schedule: None,
                alpha_schedule: None,
                tolerance: None,
                seed: 7,
                stride: 2,
                ball_radius: 2.0,
                svg: false,
                parallelism: Parallelism::Parallel,
            }),
            Command::Enclosure(run) => Self::from_run(Method::Enclosure, run),
            Command::Monotonicity(run) => Self::from_run(Method::Monotonicity, run),
            Command::Boundary { run, points } => Ok(RunConfig {
                points: points.as_deref().map(parse_points).transpose()?,
                ..Self::from_run(Method::Boundary, run)?
            }),
            Command::Compare(run) => Self::from_run(Method::Compare, run),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for path in [&self.scene, &self.trace].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        if self.method != Method::Wolff && self.scene.is_none() {
            return Err(Error::Config("a scene file is required".into()));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tolerance must be positive, got {t}")));
            }
        }
        if self.directions < 8 {
            return Err(Error::Config(format!("need at least 8 directions, got {}", self.directions)));
        }
        if self.stride == 0 || !(self.ball_radius > 0.0) {
            return Err(Error::Config("ball stride and radius must be positive".into()));
        }
        for s in [&self.tau_schedule, &self.alpha_schedule].into_iter().flatten() {
            if s.is_empty() || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config("schedules must hold positive values".into()));
            }
        }
        Ok(())
    }
}

/// Machine-readable summary written next to the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub scene: Option<PathBuf>,
    /// Sign class for the reconstructions, `ok` otherwise.
    pub verdict: String,
    pub solver_calls: usize,
    pub wall_time_s: f64,
    pub artifacts: Vec<PathBuf>,
    pub details: Value,
}

struct Setup {
    file: SceneFile,
    scene: ConductivityScene,
    sigma: DnOracle,
    one: DnOracle,
    wolff: Arc<WolffSolution>,
}

impl Setup {
    fn load(path: &Path) -> Result<Self> {
        let file = SceneFile::load(path)?;
        let scene = file.build().map_err(|e| e.context("scene"))?;
        let system = Arc::new(FeSystem::new(scene.mesh().clone()));
        let cfg = SolverConfig::new(scene.p());
        let sigma = DnOracle::with_system(scene.clone(), system.clone(), cfg.clone())?;
        let one = DnOracle::constant(system, 1.0, cfg)?;
        let wolff = Arc::new(integrate_wolff(scene.p(), 1.0, 0.0, 1e-12).map_err(|e| e.context("wolff"))?);
        Ok(Setup { file, scene, sigma, one, wolff })
    }

    fn solver_calls(&self) -> usize {
        self.sigma.solve_count() + self.one.solve_count()
    }

    fn cell_width(&self) -> f64 {
        self.scene.mesh().cell_width()
    }

    fn true_hull(&self, directions: &[Vec2]) -> Result<Option<HullPolygon>> {
        let cells = discrete_support_set(&self.scene, SUPPORT_THRESHOLD);
        if cells.is_empty() {
            return Ok(None);
        }
        Ok(Some(convex_hull_of_cells(self.scene.mesh(), &cells, directions)?))
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn csv<T: io::CsvRow>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        io::write_csv(&p, rows)
    }
}

fn hull_distance(a: Option<&HullPolygon>, b: Option<&HullPolygon>) -> Option<f64> {
    Some(hausdorff(a?, b?))
}

fn run_enclosure(cfg: &RunConfig, s: &Setup, out: &mut Outputs) -> Result<(HullReconstruction, Value)> {
    let mut opts = EnclosureOptions { tolerance: cfg.tolerance, parallelism: cfg.parallelism, ..Default::default() };
    if let Some(t) = &cfg.tau_schedule {
        opts.tau_multipliers = t.clone();
    }
    let rec = reconstruct_hull(&s.sigma, &s.one, &s.wolff, cfg.directions, &opts).map_err(|e| e.context("enclosure"))?;
    let dirs = direction_grid(cfg.directions);
    let truth = s.true_hull(&dirs)?;
    let support: Vec<io::SupportRow> = rec
        .estimates
        .iter()
        .map(|e| io::SupportRow {
            rho_x: e.rho.x,
            rho_y: e.rho.y,
            h_est: e.h_est,
            status: e.status.as_str().into(),
            sign: e.sign,
            bracket_low: e.bracket.0,
            bracket_high: e.bracket.1,
        })
        .collect();
    let indicator: Vec<io::IndicatorRow> = rec
        .estimates
        .iter()
        .enumerate()
        .flat_map(|(k, e)| {
            e.curve.samples.iter().map(move |smp| io::IndicatorRow {
                direction: k,
                rho_x: e.rho.x,
                rho_y: e.rho.y,
                t: e.curve.t,
                tau: smp.tau,
                sign: smp.sign,
                log_abs: smp.log_abs,
                relative: smp.relative,
            })
        })
        .collect();
    out.csv("support.csv", &support)?;
    out.csv("hull.csv", &io::hull_vertex_rows(rec.hull.as_ref()))?;
    out.csv("hull_support.csv", &io::hull_support_rows(rec.hull.as_ref()))?;
    out.csv("indicator.csv", &indicator)?;
    if cfg.svg {
        let p = out.path("enclosure.svg");
        Overlay { mesh: s.scene.mesh(), sigma: s.scene.sigma(), truth: truth.as_ref(), estimate: rec.hull.as_ref(), balls: vec![] }
            .write(&p)?;
    }
    let cw = s.cell_width();
    let directions: Vec<Value> = rec
        .estimates
        .iter()
        .map(|e| {
            let err = truth.as_ref().map(|h| (e.h_est - crate::geometry::support_value(h, e.rho)) / cw);
            json!({ "rho": [e.rho.x, e.rho.y], "status": e.status.as_str(), "h_est": e.h_est, "error_cells": err })
        })
        .collect();
    let details = json!({
        "sign_class": rec.sign_class.as_str(),
        "cell_width": cw,
        "hausdorff_to_truth_cells": hull_distance(rec.hull.as_ref(), truth.as_ref()).map(|d| d / cw),
        "directions": directions,
    });
    Ok((rec, details))
}

fn run_monotonicity(cfg: &RunConfig, s: &Setup, out: &mut Outputs) -> Result<(ScanResult, Vec<TestRegion>, Value)> {
    let mesh = s.scene.mesh();
    let mut dict_opts = DictionaryOptions { seed: cfg.seed, ..Default::default() };
    if let Some(t) = &cfg.tau_schedule {
        dict_opts.tau_multipliers = t.clone();
    }
    let dictionary = default_dictionary(mesh, &s.wolff, &dict_opts)?;
    let grid = ball_grid(mesh, cfg.stride, cfg.ball_radius)?;
    let mut opts = ScanOptions { parallelism: cfg.parallelism, ..Default::default() };
    if let Some(a) = &cfg.alpha_schedule {
        opts.alphas = a.clone();
    }
    let dirs = direction_grid(cfg.directions);
    let res = scan(&s.sigma, &s.one, &grid, &dictionary, &dirs, &opts).map_err(|e| e.context("monotonicity"))?;
    let truth = s.true_hull(&dirs)?;
    let verdicts: Vec<io::VerdictRow> = res
        .verdicts
        .iter()
        .map(|v| io::VerdictRow {
            center_x: v.region.center.x,
            center_y: v.region.center.y,
            radius: v.region.radius,
            alpha: v.alpha,
            direction: v.direction.as_str().into(),
            marked: v.marked,
            witness: v.witness.as_ref().map_or_else(String::new, |w| w.trace_id.clone()),
            witness_gap: v.witness.as_ref().map_or(v.worst_gap, |w| w.gap),
        })
        .collect();
    let measurements: Vec<io::MeasurementRow> = measure_deficits(&s.sigma, &s.one, &dictionary)?
        .into_iter()
        .map(|m| io::MeasurementRow { trace_id: m.trace_id, value: m.value, log_scale: m.log_scale })
        .collect();
    out.csv("verdicts.csv", &verdicts)?;
    out.csv("hull.csv", &io::hull_vertex_rows(res.hull.as_ref()))?;
    out.csv("hull_support.csv", &io::hull_support_rows(res.hull.as_ref()))?;
    out.csv("measurements.csv", &measurements)?;
    let marked: Vec<&TestRegion> = res.marked_regions(&grid).collect();
    if cfg.svg {
        let p = out.path("monotonicity.svg");
        Overlay {
            mesh,
            sigma: s.scene.sigma(),
            truth: truth.as_ref(),
            estimate: res.hull.as_ref(),
            balls: marked.iter().map(|r| (r.center, r.radius)).collect(),
        }
        .write(&p)?;
    }
    let cw = s.cell_width();
    let outside = match &truth {
        Some(h) => marked.iter().filter(|r| h.distance_to(r.center) > 2.0 * r.radius).count(),
        None => marked.len(),
    };
    let details = json!({
        "sign_class": res.sign_class.as_str(),
        "cell_width": cw,
        "dictionary_traces": dictionary.len(),
        "balls": grid.len(),
        "marked_balls": marked.len(),
        "marked_outside_dilated_truth": outside,
        "hausdorff_to_truth_cells": hull_distance(res.hull.as_ref(), truth.as_ref()).map(|d| d / cw),
    });
    Ok((res, grid, details))
}

fn default_points(domain: &DomainSpec) -> Vec<Vec2> {
    match domain {
        DomainSpec::Disk { center, radius } => (0..4)
            .map(|k| *center + Vec2::from_angle(k as f64 * std::f64::consts::FRAC_PI_2) * *radius)
            .collect(),
        DomainSpec::UnitSquare => {
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
        }
        DomainSpec::ConvexPolygon { vertices } => vertices.clone(),
    }
}

fn run_boundary(cfg: &RunConfig, s: &Setup, out: &mut Outputs) -> Result<Value> {
    let points = match &cfg.points {
        Some(p) => p.clone(),
        None if !s.file.boundary_points.is_empty() => s.file.boundary_points.clone(),
        None => default_points(&s.file.domain),
    };
    let mut opts = BoundaryOptions { parallelism: cfg.parallelism, ..Default::default() };
    if let Some(t) = &cfg.tau_schedule {
        opts.tau_multipliers = t.clone();
    }
    if let Some(t) = cfg.tolerance {
        opts.tolerance = t;
    }
    let rec = recover_many(&s.sigma, &s.one, &s.wolff, &points, &opts).map_err(|e| e.context("boundary"))?;
    let rows: Vec<io::BoundaryRow> = rec
        .iter()
        .map(|r| io::BoundaryRow {
            x: r.x0.x,
            y: r.x0.y,
            sigma_recovered: r.value,
            iterations: r.iterations,
            bracket_width: r.bracket_width(),
            equality_branch: r.equality_branch,
        })
        .collect();
    out.csv("boundary.csv", &rows)?;
    let pts: Vec<Value> = rec
        .iter()
        .map(|r| {
            let exact = s.file.sigma_at(r.x0);
            json!({ "x0": [r.x0.x, r.x0.y], "recovered": r.value, "analytic": exact, "error": r.value - exact,
                    "equality_branch": r.equality_branch })
        })
        .collect();
    Ok(json!({ "points": pts }))
}

fn run_solve(cfg: &RunConfig, s: &Setup, out: &mut Outputs) -> Result<Value> {
    let mesh = s.scene.mesh();
    let trace = match &cfg.trace {
        Some(path) => {
            let rows: Vec<io::TraceRow> = io::read_csv(path)?;
            BoundaryTrace::new(mesh, rows.iter().map(|r| r.value).collect())?
        }
        None => BoundaryTrace::from_fn(mesh, |x| x.x)?,
    };
    let sol = s.sigma.system().solve(s.scene.sigma(), &trace, s.sigma.config()).map_err(|e| e.context("solve"))?;
    let scale = sol.log_scale.exp();
    let rows: Vec<io::SolutionRow> = mesh
        .vertices()
        .iter()
        .zip(&sol.values)
        .map(|(x, u)| io::SolutionRow { x: x.x, y: x.y, u: u * scale })
        .collect();
    out.csv("solution.csv", &rows)?;
    let e = sol.energy_scaled(s.scene.p());
    Ok(json!({
        "energy": e.value(),
        "energy_mantissa": e.mantissa,
        "energy_log_scale": e.log_scale,
        "iterations": sol.iterations,
        "residual": sol.residual,
    }))
}

fn run_wolff(cfg: &RunConfig) -> Result<(Value, Vec<PathBuf>)> {
    let p = cfg.p.ok_or_else(|| Error::Config("wolff needs --p".into()))?;
    let w = integrate_wolff(p, 1.0, 0.0, 1e-12)?;
    println!("p = {p}\nlambda_p = {}\nc_emp = {}\nC_emp = {}", w.lambda_p, w.c_emp, w.big_c_emp);
    let mut written = Vec::new();
    if let Some(dir) = &cfg.out {
        let mut out = Outputs::new(dir)?;
        let rows: Vec<io::WolffRow> =
            (0..w.s.len()).map(|i| io::WolffRow { s: w.s[i], w: w.w[i], wp: w.wp[i] }).collect();
        out.csv("wolff.csv", &rows)?;
        written = out.written;
    }
    let details = json!({
        "p": p,
        "lambda_p": w.lambda_p,
        "c_emp": w.c_emp,
        "C_emp": w.big_c_emp,
        "periodicity_error": w.periodicity_error,
    });
    Ok((details, written))
}

/// Execute one configured run, writing artifacts and `summary.json` into
/// the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    if cfg.method == Method::Wolff {
        let (details, artifacts) = run_wolff(cfg)?;
        return Ok(RunReport {
            method: cfg.method,
            scene: None,
            verdict: "ok".into(),
            solver_calls: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
            artifacts,
            details,
        });
    }
    let scene_path = cfg.scene.as_deref().expect("validated");
    let setup = Setup::load(scene_path)?;
    let mut out = Outputs::new(cfg.out.as_deref().unwrap_or(Path::new("out")))?;
    let (verdict, details) = match cfg.method {
        Method::Solve => ("ok".to_string(), run_solve(cfg, &setup, &mut out)?),
        Method::Boundary => ("ok".to_string(), run_boundary(cfg, &setup, &mut out)?),
        Method::Enclosure => {
            let (rec, d) = run_enclosure(cfg, &setup, &mut out)?;
            (rec.sign_class.as_str().to_string(), d)
        }
        Method::Monotonicity => {
            let (res, _, d) = run_monotonicity(cfg, &setup, &mut out)?;
            (res.sign_class.as_str().to_string(), d)
        }
        Method::Compare => {
            let mut enc_out = Outputs::new(&out.dir.join("enclosure"))?;
            let (rec, enc) = run_enclosure(cfg, &setup, &mut enc_out)?;
            let mut mono_out = Outputs::new(&out.dir.join("monotonicity"))?;
            let (res, grid, mono) = run_monotonicity(cfg, &setup, &mut mono_out)?;
            out.written.extend(enc_out.written.into_iter().chain(mono_out.written));
            let cw = setup.cell_width();
            let radius = grid.first().map_or(0.0, |r| r.radius);
            let bound = 2.0 * cw + 2.0 * cw + radius;
            let dist = hull_distance(rec.hull.as_ref(), res.hull.as_ref());
            let agree = rec.sign_class == res.sign_class;
            let verdict = if agree { rec.sign_class.as_str().to_string() } else { "disagree".to_string() };
            (
                verdict,
                json!({
                    "enclosure": enc,
                    "monotonicity": mono,
                    "hausdorff": dist,
                    "bound": bound,
                    "within_bound": dist.map(|d| d <= bound),
                    "sign_classes_agree": agree,
                }),
            )
        }
        Method::Wolff => unreachable!(),
    };
    let report = RunReport {
        method: cfg.method,
        scene: cfg.scene.clone(),
        verdict,
        solver_calls: setup.solver_calls() + usize::from(cfg.method == Method::Solve),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: out.written.clone(),
        details,
    };
    let summary = out.path("summary.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(format!("summary: {e}")))?;
    std::fs::write(&summary, text + "\n")?;
    Ok(RunReport { artifacts: out.written, ..report })
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = RunConfig::from_cli(&cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(report) => {
            if report.method != Method::Wolff {
                println!(
                    "{}: verdict {} ({} solves, {:.1}s)",
                    report.method.as_str(),
                    report.verdict,
                    report.solver_calls,
                    report.wall_time_s
                );
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
