//! Monotonicity method: comparisons of `Lambda_sigma` with
//! `Lambda_1 +- alpha Lambda_B` over a trace dictionary, ball scans and
//! the hull of the marked balls.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dnmap::{deficit, preorder_test, DictionaryEntry, DnOracle, MarginScale, OperatorExpr, PreorderVerdict, UnitEntry};
use crate::error::{Error, Result};
use crate::geometry::{convex_hull_of_cells, HullPolygon, SignClass, TriMesh, Vec2};
use crate::par::{self, Parallelism};

/// Default relative violation margin.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// `(p - 1)(1 - (1 + alpha)^{-1/(p-1)})`.
pub fn alpha_tilde(p: f64, alpha: f64) -> Result<f64> {
    if !(p > 1.0) || !(alpha > 0.0) || !alpha.is_finite() || !p.is_finite() {
        return Err(Error::Config(format!("alpha_tilde needs p > 1 and alpha > 0, got p = {p}, alpha = {alpha}")));
    }
    Ok((p - 1.0) * -(-(1.0 + alpha).ln() / (p - 1.0)).exp_m1())
}

/// A set of cells, described as a ball clipped to the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRegion {
    pub cells: Arc<Vec<usize>>,
    pub center: Vec2,
    pub radius: f64,
}

impl TestRegion {
    /// Cells whose centroid lies within `radius` of `center`.
    pub fn ball(mesh: &TriMesh, center: Vec2, radius: f64) -> Result<Self> {
        let cells: Vec<usize> =
            (0..mesh.n_triangles()).filter(|&t| mesh.centroid(t).dist(center) <= radius).collect();
        if cells.is_empty() {
            return Err(Error::Geometry(format!("ball at ({}, {}) with radius {radius} has no cells", center.x, center.y)));
        }
        Ok(TestRegion { cells: Arc::new(cells), center, radius })
    }

    pub fn from_cells(mesh: &TriMesh, cells: Vec<usize>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Geometry("test region must be nonempty".into()));
        }
        if let Some(&c) = cells.iter().find(|&&c| c >= mesh.n_triangles()) {
            return Err(Error::Geometry(format!("cell {c} out of range")));
        }
        let center = cells.iter().fold(Vec2::new(0.0, 0.0), |a, &c| a + mesh.centroid(c)) * (1.0 / cells.len() as f64);
        let radius = cells.iter().map(|&c| mesh.centroid(c).dist(center)).fold(0.0, f64::max);
        Ok(TestRegion { cells: Arc::new(cells), center, radius })
    }
}

/// Balls of `radius_cells` cell widths centred on a lattice with spacing
/// `stride` cell widths, offset to the first cell centre.
pub fn ball_grid(mesh: &TriMesh, stride: usize, radius_cells: f64) -> Result<Vec<TestRegion>> {
    if stride == 0 || !(radius_cells > 0.0) {
        return Err(Error::Config(format!("invalid ball grid: stride {stride}, radius {radius_cells}")));
    }
    let h = mesh.cell_width();
    let (bmin, bmax) = mesh.bounding_box();
    let step = stride as f64 * h;
    let radius = radius_cells * h;
    let nx = ((bmax.x - bmin.x) / step).ceil() as usize + 1;
    let ny = ((bmax.y - bmin.y) / step).ceil() as usize + 1;
    let mut centers = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let c = Vec2::new(bmin.x + (i as f64 * stride as f64 + 0.5) * h, bmin.y + (j as f64 * stride as f64 + 0.5) * h);
            if c.x <= bmax.x && c.y <= bmax.y {
                centers.push(c);
            }
        }
    }
    let mut out = Vec::new();
    for c in centers {
        if let Ok(r) = TestRegion::ball(mesh, c, radius) {
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestDirection {
    Plus,
    Minus,
}

impl TestDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            TestDirection::Plus => "plus",
            TestDirection::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanMode {
    Plus,
    Minus,
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub index: usize,
    pub trace_id: String,
    /// Relative gap, `< -margin`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityVerdict {
    pub region: TestRegion,
    pub alpha: f64,
    pub direction: TestDirection,
    pub marked: bool,
    pub witness: Option<Witness>,
    /// Smallest relative gap over the dictionary.
    pub worst_gap: f64,
}

fn test_region(
    sigma: &DnOracle,
    one: &DnOracle,
    region: &TestRegion,
    alpha: f64,
    direction: TestDirection,
    dictionary: &[DictionaryEntry],
    margin: f64,
) -> Result<MonotonicityVerdict> {
    let (lhs, rhs) = match direction {
        TestDirection::Plus => {
            let at = alpha_tilde(sigma.p(), alpha)?;
            (OperatorExpr::sigma(), OperatorExpr::one().plus_region(at, region.cells.clone()))
        }
        TestDirection::Minus => {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
            }
            (OperatorExpr::one().plus_region(-alpha, region.cells.clone()), OperatorExpr::sigma())
        }
    };
    let v = preorder_test(sigma, one, &lhs, &rhs, dictionary, margin, MarginScale::Terms)?;
    Ok(match v {
        PreorderVerdict::Consistent { worst_gap } => MonotonicityVerdict {
            region: region.clone(),
            alpha,
            direction,
            marked: true,
            witness: None,
            worst_gap,
        },
        PreorderVerdict::Violated { witness, trace_id, gap } => MonotonicityVerdict {
            region: region.clone(),
            alpha,
            direction,
            marked: false,
            witness: Some(Witness { index: witness, trace_id, gap }),
            worst_gap: gap,
        },
    })
}

/// `Lambda_1 + alpha_tilde Lambda_B <= Lambda_sigma` on every dictionary trace.
pub fn test_region_plus(
    sigma: &DnOracle,
    one: &DnOracle,
    region: &TestRegion,
    alpha: f64,
    dictionary: &[DictionaryEntry],
    margin: f64,
) -> Result<MonotonicityVerdict> {
    test_region(sigma, one, region, alpha, TestDirection::Plus, dictionary, margin)
}

/// `Lambda_1 - alpha Lambda_B >= Lambda_sigma` on every dictionary trace.
pub fn test_region_minus(
    sigma: &DnOracle,
    one: &DnOracle,
    region: &TestRegion,
    alpha: f64,
    dictionary: &[DictionaryEntry],
    margin: f64,
) -> Result<MonotonicityVerdict> {
    test_region(sigma, one, region, alpha, TestDirection::Minus, dictionary, margin)
}

/// Per-trace deficits and unit-weight cell energies, so that ball tests
/// reduce to sums over cells.
pub struct DictionaryTable {
    ids: Vec<String>,
    deficits: Vec<f64>,
    units: Vec<Arc<UnitEntry>>,
}

impl DictionaryTable {
    pub fn build(sigma: &DnOracle, one: &DnOracle, dictionary: &[DictionaryEntry], mode: Parallelism) -> Result<Self> {
        if dictionary.is_empty() {
            return Err(Error::Config("empty dictionary".into()));
        }
        let rows = par::try_map(mode, dictionary, |e| {
            let d = deficit(sigma, one, &e.trace)?;
            let (unit, _) = one.unit_solution(&e.trace)?;
            Ok::<_, Error>((d.mantissa, unit))
        })?;
        let (deficits, units) = rows.into_iter().unzip();
        Ok(DictionaryTable { ids: dictionary.iter().map(|e| e.id.clone()).collect(), deficits, units })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Same arithmetic as [`preorder_test`] with [`MarginScale::Terms`].
    pub fn test(
        &self,
        p: f64,
        region: &TestRegion,
        alpha: f64,
        direction: TestDirection,
        margin: f64,
    ) -> Result<MonotonicityVerdict> {
        let (cs, cb) = match direction {
            TestDirection::Plus => (1.0, -alpha_tilde(p, alpha)?),
            TestDirection::Minus => (-1.0, -alpha),
        };
        let mut worst: Option<(usize, f64)> = None;
        for (i, (d, unit)) in self.deficits.iter().zip(&self.units).enumerate() {
            let mut b = 0.0;
            for &c in region.cells.iter() {
                b += unit.cell_energy[c];
            }
            let mut value = 0.0;
            let mut terms = 0.0;
            value += cs * d;
            terms += (cs * d).abs();
            value += cb * b;
            terms += (cb * b).abs();
            let gap = if terms > 0.0 { value / terms } else { 0.0 };
            if worst.is_none_or(|(_, g)| gap < g) {
                worst = Some((i, gap));
            }
        }
        let (i, gap) = worst.expect("nonempty table");
        let marked = gap >= -margin;
        Ok(MonotonicityVerdict {
            region: region.clone(),
            alpha,
            direction,
            marked,
            witness: (!marked).then(|| Witness { index: i, trace_id: self.ids[i].clone(), gap }),
            worst_gap: if marked { gap.min(0.0) } else { gap },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub alphas: Vec<f64>,
    pub mode: ScanMode,
    pub margin: f64,
    pub parallelism: Parallelism,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            alphas: vec![0.125, 0.25, 0.5, 1.0],
            mode: ScanMode::Auto,
            margin: DEFAULT_MARGIN,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    /// Every test performed, grouped by ball in grid order.
    pub verdicts: Vec<MonotonicityVerdict>,
    /// Per ball: the direction that marked it, if any.
    pub marks: Vec<Option<TestDirection>>,
    pub hull: Option<HullPolygon>,
    pub sign_class: SignClass,
}

impl ScanResult {
    pub fn marked_regions<'a>(&'a self, grid: &'a [TestRegion]) -> impl Iterator<Item = &'a TestRegion> + 'a {
        grid.iter().zip(&self.marks).filter(|(_, m)| m.is_some()).map(|(r, _)| r)
    }
}

/// Test every ball over the alpha schedule and take the hull of the
/// marked ones.
pub fn scan(
    sigma: &DnOracle,
    one: &DnOracle,
    grid: &[TestRegion],
    dictionary: &[DictionaryEntry],
    directions: &[Vec2],
    opts: &ScanOptions,
) -> Result<ScanResult> {
    if grid.is_empty() || opts.alphas.is_empty() {
        return Err(Error::Config("scan needs a nonempty ball grid and alpha schedule".into()));
    }
    if opts.alphas.iter().any(|&a| !(a > 0.0)) || !(opts.margin >= 0.0) {
        return Err(Error::Config("alphas must be positive and the margin nonnegative".into()));
    }
    let table = DictionaryTable::build(sigma, one, dictionary, opts.parallelism)?;
    let p = sigma.p();
    let dirs: &[TestDirection] = match opts.mode {
        ScanMode::Plus => &[TestDirection::Plus],
        ScanMode::Minus => &[TestDirection::Minus],
        ScanMode::Auto => &[TestDirection::Plus, TestDirection::Minus],
    };
    let per_ball = par::try_map(opts.parallelism, grid, |region| {
        let mut verdicts = Vec::new();
        let mut mark = None;
        for &dir in dirs {
            for &alpha in &opts.alphas {
                let v = table.test(p, region, alpha, dir, opts.margin)?;
                if v.marked && mark.is_none() {
                    mark = Some(dir);
                }
                verdicts.push(v);
            }
            if mark.is_some() {
                break;
            }
        }
        Ok::<_, Error>((verdicts, mark))
    })?;
    let mut verdicts = Vec::new();
    let mut marks = Vec::new();
    for (v, m) in per_ball {
        verdicts.extend(v);
        marks.push(m);
    }
    let plus = marks.iter().any(|m| *m == Some(TestDirection::Plus));
    let minus = marks.iter().any(|m| *m == Some(TestDirection::Minus));
    let sign_class = match (plus, minus) {
        (false, false) => SignClass::Homogeneous,
        (true, false) => SignClass::Geq1,
        (false, true) => SignClass::Leq1,
        (true, true) => SignClass::Indefinite,
    };
    let mut cells: Vec<usize> = grid
        .iter()
        .zip(&marks)
        .filter(|(_, m)| m.is_some())
        .flat_map(|(r, _)| r.cells.iter().copied())
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let hull = if cells.is_empty() { None } else { Some(convex_hull_of_cells(sigma.mesh(), &cells, directions)?) };
    Ok(ScanResult { verdicts, marks, hull, sign_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnmap::{default_dictionary, DictionaryOptions};
    use crate::geometry::{build_mesh, paint_scene, DomainSpec, Inclusion, Shape};
    use crate::psolver::{FeSystem, SolverConfig};
    use crate::wolff::integrate_wolff;

    #[test]
    fn alpha_tilde_examples() {
        assert!((alpha_tilde(2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((alpha_tilde(2.0, 3.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((alpha_tilde(3.0, 7.0).unwrap() - (2.0 - 0.5f64.sqrt())).abs() < 1e-14);
        assert!(alpha_tilde(1.0, 1.0).is_err());
        assert!(alpha_tilde(2.0, 0.0).is_err());
    }

    #[test]
    fn alpha_tilde_range_and_monotone() {
        for &p in &[1.2, 1.5, 2.0, 3.0, 6.0] {
            let mut prev = 0.0;
            for k in 1..60 {
                let a = 0.05 * k as f64 * k as f64;
                let v = alpha_tilde(p, a).unwrap();
                assert!(v > prev && v < p - 1.0);
                prev = v;
            }
        }
    }

    #[test]
    fn ball_grid_covers_square() {
        let mesh = build_mesh(&DomainSpec::UnitSquare, 16).unwrap();
        let grid = ball_grid(&mesh, 2, 2.0).unwrap();
        assert_eq!(grid.len(), 64);
        let mut covered = vec![false; mesh.n_triangles()];
        for r in &grid {
            for &c in r.cells.iter() {
                covered[c] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn table_matches_preorder_test() {
        let mesh = Arc::new(build_mesh(&DomainSpec::UnitSquare, 16).unwrap());
        let p = 2.0;
        let scene = paint_scene(
            mesh.clone(),
            &[Inclusion { shape: Shape::Disk { center: Vec2::new(0.5, 0.5), radius: 0.25 }, sigma: 2.0 }],
            p,
        )
        .unwrap();
        let sys = Arc::new(FeSystem::new(mesh.clone()));
        let cfg = SolverConfig::new(p);
        let sigma = DnOracle::with_system(scene, sys.clone(), cfg.clone()).unwrap();
        let one = DnOracle::constant(sys, 1.0, cfg).unwrap();
        let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-10).unwrap());
        let opts = DictionaryOptions { directions: 8, tau_multipliers: vec![4.0, 8.0], ..Default::default() };
        let dict = default_dictionary(&mesh, &wolff, &opts).unwrap();
        let table = DictionaryTable::build(&sigma, &one, &dict, Parallelism::Sequential).unwrap();
        let inside = TestRegion::ball(&mesh, Vec2::new(0.5, 0.5), 0.1).unwrap();
        let outside = TestRegion::ball(&mesh, Vec2::new(0.1, 0.1), 0.1).unwrap();
        for region in [&inside, &outside] {
            for &alpha in &[0.25, 1.0] {
                let a = test_region_plus(&sigma, &one, region, alpha, &dict, DEFAULT_MARGIN).unwrap();
                let b = table.test(p, region, alpha, TestDirection::Plus, DEFAULT_MARGIN).unwrap();
                assert_eq!(a, b);
            }
        }
        assert!(table.test(p, &inside, 1.0, TestDirection::Plus, DEFAULT_MARGIN).unwrap().marked);
        let out = table.test(p, &outside, 0.25, TestDirection::Plus, DEFAULT_MARGIN).unwrap();
        assert!(!out.marked);
        assert!(out.witness.unwrap().trace_id.starts_with("wolff"));
    }
}
