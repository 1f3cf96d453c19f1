//! Black-box Dirichlet-to-Neumann oracle with a solution cache, operator
//! expressions, the finite-dictionary preorder test, and trace
//! dictionaries.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{direction_grid, ConductivityScene, SignClass, TriMesh, Vec2};
use crate::psolver::{BoundaryTrace, FeSystem, ScaledReal, SolverConfig};
use crate::wolff::{boundary_trace, WolffField, WolffSolution};

/// Exact fingerprint of a normalized trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct TraceKey {
    mesh_id: u64,
    bits: Vec<u64>,
}

impl TraceKey {
    fn new(f: &BoundaryTrace) -> Self {
        TraceKey { mesh_id: f.mesh_id, bits: f.values.iter().map(|v| v.to_bits()).collect() }
    }
}

/// Unit-weight solution of a normalized trace.
#[derive(Debug)]
pub struct UnitEntry {
    pub u: Vec<f64>,
    pub energy: f64,
    /// `area * phi(grad u)` per cell.
    pub cell_energy: Vec<f64>,
}

#[derive(Debug)]
struct SceneEntry {
    u: Vec<f64>,
    /// `E_sigma(u_sigma) - E_1(u_1)`.
    deficit: f64,
}

type Slot<T> = Arc<Mutex<Option<Arc<T>>>>;

struct Cache<K, T> {
    map: Mutex<HashMap<K, Slot<T>>>,
}

impl<K: Eq + Hash, T> Cache<K, T> {
    fn new() -> Self {
        Cache { map: Mutex::new(HashMap::new()) }
    }

    /// Compute-once per key; concurrent callers for the same key wait.
    fn get_or_try(&self, key: K, enabled: bool, f: impl FnOnce() -> Result<T>) -> Result<Arc<T>> {
        if !enabled {
            return f().map(Arc::new);
        }
        let slot = {
            let mut map = self.map.lock().expect("cache poisoned");
            map.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().expect("cache slot poisoned");
        if let Some(v) = guard.as_ref() {
            return Ok(v.clone());
        }
        let v = Arc::new(f()?);
        *guard = Some(v.clone());
        Ok(v)
    }

    fn len(&self) -> usize {
        self.map.lock().expect("cache poisoned").len()
    }
}

/// Evaluator of `<Lambda_sigma(f), g>`. The conductivity is private:
/// reconstruction code only sees pairing values.
pub struct DnOracle {
    scene: ConductivityScene,
    system: Arc<FeSystem>,
    config: SolverConfig,
    fingerprint: u64,
    unit: Cache<TraceKey, UnitEntry>,
    solved: Cache<TraceKey, SceneEntry>,
    shifts: Cache<(TraceKey, u64), f64>,
    solves: AtomicUsize,
    cache_enabled: bool,
}

impl std::fmt::Debug for DnOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DnOracle")
            .field("mesh_id", &self.system.mesh().id())
            .field("p", &self.config.p)
            .field("solves", &self.solve_count())
            .finish()
    }
}

fn fingerprint(mesh: &TriMesh, sigma: &[f64], p: f64) -> u64 {
    let mut h = DefaultHasher::new();
    mesh.id().hash(&mut h);
    p.to_bits().hash(&mut h);
    for s in sigma {
        s.to_bits().hash(&mut h);
    }
    h.finish()
}

impl DnOracle {
    pub fn new(scene: ConductivityScene, config: SolverConfig) -> Result<Self> {
        let system = Arc::new(FeSystem::new(scene.mesh().clone()));
        Self::with_system(scene, system, config)
    }

    /// Share an existing assembly layout (same mesh).
    pub fn with_system(scene: ConductivityScene, system: Arc<FeSystem>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if (config.p - scene.p()).abs() > 0.0 {
            return Err(Error::Config(format!(
                "solver exponent {} differs from scene exponent {}",
                config.p,
                scene.p()
            )));
        }
        if system.mesh().id() != scene.mesh().id() {
            return Err(Error::Config("assembly system belongs to another mesh".into()));
        }
        let fingerprint = fingerprint(scene.mesh(), scene.sigma(), scene.p());
        Ok(DnOracle {
            scene,
            system,
            config,
            fingerprint,
            unit: Cache::new(),
            solved: Cache::new(),
            shifts: Cache::new(),
            solves: AtomicUsize::new(0),
            cache_enabled: true,
        })
    }

    /// Oracle for the constant conductivity `gamma`.
    pub fn constant(system: Arc<FeSystem>, gamma: f64, config: SolverConfig) -> Result<Self> {
        let mesh = system.mesh().clone();
        let n = mesh.n_triangles();
        let scene = ConductivityScene::from_cells(mesh, vec![gamma; n], config.p)?;
        Self::with_system(scene, system, config)
    }

    pub fn without_cache(mut self) -> Self {
        self.cache_enabled = false;
        self
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.system.mesh()
    }

    pub fn system(&self) -> &Arc<FeSystem> {
        &self.system
    }

    pub fn p(&self) -> f64 {
        self.config.p
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Number of forward solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::SeqCst)
    }

    pub fn cached_traces(&self) -> usize {
        self.unit.len()
    }

    fn is_unit(&self) -> bool {
        self.scene.sign_class() == SignClass::Homogeneous
    }

    /// `Some(gamma)` when the conductivity is constant.
    fn constant_value(&self) -> Option<f64> {
        let s = self.scene.sigma();
        s.iter().all(|&v| v == s[0]).then_some(s[0])
    }

    fn check_trace(&self, f: &BoundaryTrace) -> Result<()> {
        if f.mesh_id != self.mesh().id() || f.values.len() != self.mesh().boundary_loop().len() {
            return Err(Error::Config("trace does not belong to the oracle's mesh".into()));
        }
        Ok(())
    }

    /// Unit-weight solution of the normalized trace, with its log scale.
    pub fn unit_solution(&self, f: &BoundaryTrace) -> Result<(Arc<UnitEntry>, f64)> {
        self.check_trace(f)?;
        let fnorm = f.normalized();
        let key = TraceKey::new(&fnorm);
        let entry = self.unit.get_or_try(key, self.cache_enabled, || {
            self.solves.fetch_add(1, Ordering::SeqCst);
            let ones = vec![1.0; self.mesh().n_triangles()];
            let sol = if fnorm.sup_norm() == 0.0 {
                crate::psolver::UnitSolution {
                    u: vec![0.0; self.mesh().n_vertices()],
                    energy: 0.0,
                    iterations: 0,
                    residual: 0.0,
                    history: vec![],
                }
            } else {
                self.system.solve_unit(&ones, &fnorm.values, &self.config)?
            };
            let cell_energy = self.system.cell_energies(&sol.u, self.config.p, self.config.epsilon);
            Ok(UnitEntry { u: sol.u, energy: sol.energy, cell_energy })
        })?;
        Ok((entry, fnorm.log_scale))
    }

    fn scene_solution(&self, f: &BoundaryTrace) -> Result<(Arc<SceneEntry>, f64)> {
        let (unit, ls) = self.unit_solution(f)?;
        let key = TraceKey::new(&f.normalized());
        let entry = self.solved.get_or_try(key, self.cache_enabled, || {
            if self.is_unit() {
                return Ok(SceneEntry { u: unit.u.clone(), deficit: 0.0 });
            }
            self.solves.fetch_add(1, Ordering::SeqCst);
            let ones = vec![1.0; self.mesh().n_triangles()];
            let shift = self.system.energy_shift(&ones, self.scene.sigma(), &unit.u, &self.config)?;
            let u = unit.u.iter().zip(&shift.delta).map(|(a, b)| a + b).collect();
            Ok(SceneEntry { u, deficit: shift.deficit })
        })?;
        Ok((entry, ls))
    }

    /// `<Lambda_sigma(f), g>`.
    pub fn pair(&self, f: &BoundaryTrace, g: &BoundaryTrace) -> Result<ScaledReal> {
        let p = self.config.p;
        if f == g {
            let (unit, ls) = self.unit_solution(f)?;
            let (scene, _) = self.scene_solution(f)?;
            let e = if self.is_unit() { unit.energy } else { unit.energy + scene.deficit };
            return Ok(ScaledReal::new(e, p * ls));
        }
        self.check_trace(g)?;
        let (scene, lf) = self.scene_solution(f)?;
        let (vg, lg) = self.unit_solution(g)?;
        let val = self.system.flux_pairing(self.scene.sigma(), &scene.u, &vg.u, p, self.config.epsilon, None);
        Ok(ScaledReal::new(val, (p - 1.0) * lf + lg))
    }

    pub fn self_pair(&self, f: &BoundaryTrace) -> Result<ScaledReal> {
        self.pair(f, f)
    }

    /// `<Lambda_B(f), f>` for a cell region, from unit-weight solutions.
    pub fn lambda_b(&self, region: &[usize], f: &BoundaryTrace) -> Result<ScaledReal> {
        if region.is_empty() {
            return Err(Error::Config("test region must be nonempty".into()));
        }
        let (unit, ls) = self.unit_solution(f)?;
        let mut s = 0.0;
        for &c in region {
            s += *unit
                .cell_energy
                .get(c)
                .ok_or_else(|| Error::Config(format!("cell {c} out of range")))?;
        }
        Ok(ScaledReal::new(s, self.config.p * ls))
    }

    /// Normalized `E_sigma(u_sigma) - E_1(u_1)`.
    fn deficit_vs_unit(&self, f: &BoundaryTrace) -> Result<f64> {
        Ok(self.scene_solution(f)?.0.deficit)
    }
}

/// `<(Lambda_sigma - Lambda_ref)(f), f>` computed from the correction
/// between the two solutions, so small deficits keep full relative
/// accuracy.
pub fn deficit(oracle: &DnOracle, reference: &DnOracle, f: &BoundaryTrace) -> Result<ScaledReal> {
    if oracle.mesh().id() != reference.mesh().id() {
        return Err(Error::Config("deficit: oracles live on different meshes".into()));
    }
    if oracle.p() != reference.p() {
        return Err(Error::Config("deficit: oracles use different exponents".into()));
    }
    let p = oracle.p();
    let (unit, ls) = oracle.unit_solution(f)?;
    let scale = p * ls;
    if oracle.fingerprint == reference.fingerprint {
        return Ok(ScaledReal::new(0.0, scale));
    }
    if reference.is_unit() {
        return Ok(ScaledReal::new(oracle.deficit_vs_unit(f)?, scale));
    }
    if oracle.is_unit() {
        return Ok(ScaledReal::new(-reference.deficit_vs_unit(f)?, scale));
    }
    if let Some(gamma) = reference.constant_value() {
        // Lambda_gamma = gamma Lambda_1 for constant gamma
        let d = oracle.deficit_vs_unit(f)? - (gamma - 1.0) * unit.energy;
        return Ok(ScaledReal::new(d, scale));
    }
    let fnorm = f.normalized();
    let (ref_sol, _) = reference.scene_solution(f)?;
    let key = (TraceKey::new(&fnorm), reference.fingerprint);
    let d = oracle.shifts.get_or_try(key, oracle.cache_enabled, || {
        oracle.solves.fetch_add(1, Ordering::SeqCst);
        let shift = oracle.system.energy_shift(reference.scene.sigma(), oracle.scene.sigma(), &ref_sol.u, &oracle.config)?;
        Ok(shift.deficit)
    })?;
    Ok(ScaledReal::new(*d, scale))
}

/// `c_sigma Lambda_sigma + c_1 Lambda_1 + sum c_B Lambda_B`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperatorExpr {
    pub sigma: f64,
    pub one: f64,
    pub regions: Vec<(f64, Arc<Vec<usize>>)>,
}

impl OperatorExpr {
    pub fn sigma() -> Self {
        OperatorExpr { sigma: 1.0, ..Default::default() }
    }

    pub fn one() -> Self {
        OperatorExpr { one: 1.0, ..Default::default() }
    }

    pub fn plus_region(mut self, coeff: f64, cells: Arc<Vec<usize>>) -> Self {
        self.regions.push((coeff, cells));
        self
    }

    pub fn minus(&self, other: &OperatorExpr) -> OperatorExpr {
        let mut regions = self.regions.clone();
        regions.extend(other.regions.iter().map(|(c, r)| (-c, r.clone())));
        OperatorExpr { sigma: self.sigma - other.sigma, one: self.one - other.one, regions }
    }

    /// `(<expr(f), f>, sum of |term|)`, both normalized with the scale
    /// `exp(p * log_scale)` returned third.
    pub fn evaluate(&self, sigma: &DnOracle, one: &DnOracle, f: &BoundaryTrace) -> Result<(f64, f64, f64)> {
        let (unit, ls) = one.unit_solution(f)?;
        let mut value = 0.0;
        let mut terms = 0.0;
        if self.sigma != 0.0 {
            let d = deficit(sigma, one, f)?.mantissa;
            value += self.sigma * d;
            terms += (self.sigma * d).abs();
        }
        let c1 = self.sigma + self.one;
        if c1 != 0.0 {
            value += c1 * unit.energy;
            terms += (c1 * unit.energy).abs();
        }
        for (c, cells) in &self.regions {
            let b = one.lambda_b(cells, f)?.mantissa;
            value += c * b;
            terms += (c * b).abs();
        }
        Ok((value, terms, one.p() * ls))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginScale {
    /// `|<Lambda_1(f), f>|`.
    Reference,
    /// Sum of the magnitudes of the compared terms.
    Terms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PreorderVerdict {
    Consistent { worst_gap: f64 },
    Violated { witness: usize, trace_id: String, gap: f64 },
}

impl PreorderVerdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, PreorderVerdict::Consistent { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub id: String,
    pub trace: BoundaryTrace,
}

/// Check `lhs >= rhs` on every dictionary trace: violated iff some trace
/// gives `<(lhs - rhs) f, f> < -margin * scale(f)`. Gaps are reported
/// relative to `scale(f)`.
pub fn preorder_test(
    sigma: &DnOracle,
    one: &DnOracle,
    lhs: &OperatorExpr,
    rhs: &OperatorExpr,
    dictionary: &[DictionaryEntry],
    margin: f64,
    scale: MarginScale,
) -> Result<PreorderVerdict> {
    if dictionary.is_empty() {
        return Err(Error::Config("preorder test needs a nonempty dictionary".into()));
    }
    let diff = lhs.minus(rhs);
    let mut worst: Option<(usize, f64)> = None;
    for (i, entry) in dictionary.iter().enumerate() {
        let (value, terms, _) = diff.evaluate(sigma, one, &entry.trace)?;
        let s = match scale {
            MarginScale::Reference => one.unit_solution(&entry.trace)?.0.energy.abs(),
            MarginScale::Terms => terms,
        };
        let gap = if s > 0.0 { value / s } else { 0.0 };
        if worst.is_none_or(|(_, g)| gap < g) {
            worst = Some((i, gap));
        }
    }
    let (i, gap) = worst.expect("nonempty dictionary");
    if gap < -margin {
        Ok(PreorderVerdict::Violated { witness: i, trace_id: dictionary[i].id.clone(), gap })
    } else {
        Ok(PreorderVerdict::Consistent { worst_gap: gap.min(0.0) })
    }
}

/// Options for the default trace dictionary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DictionaryOptions {
    pub directions: usize,
    /// `tau * extent(rho)` values.
    pub tau_multipliers: Vec<f64>,
    /// Offsets as fractions of the direction extent below the domain support.
    pub offsets: Vec<f64>,
    /// Also include each Wolff trace with its profile zero placed at the
    /// boundary peak.
    pub anchored: bool,
    pub affine: usize,
    pub random: usize,
    pub seed: u64,
}

impl Default for DictionaryOptions {
    fn default() -> Self {
        DictionaryOptions {
            directions: 16,
            tau_multipliers: (2..=22).map(|k| 2.0 * k as f64).collect(),
            offsets: vec![0.0, 0.25, 0.5],
            anchored: true,
            affine: 4,
            random: 10,
            seed: 7,
        }
    }
}

/// Largest tau with `tau * h <= 1/2`.
pub fn tau_cap(mesh: &TriMesh) -> f64 {
    0.5 / mesh.cell_width()
}

/// Wolff traces over directions and frequencies, affine traces and
/// seeded random smooth profiles. Traces that coincide after
/// normalization are listed once.
pub fn default_dictionary(
    mesh: &TriMesh,
    wolff: &Arc<WolffSolution>,
    opts: &DictionaryOptions,
) -> Result<Vec<DictionaryEntry>> {
    let mut out = Vec::new();
    let mut seen: HashSet<TraceKey> = HashSet::new();
    let mut push = |id: String, trace: BoundaryTrace, out: &mut Vec<DictionaryEntry>| {
        if seen.insert(TraceKey::new(&trace.normalized())) {
            out.push(DictionaryEntry { id, trace });
        }
    };
    let cap = tau_cap(mesh);
    for (k, rho) in direction_grid(opts.directions).into_iter().enumerate() {
        let (lo, hi) = mesh.extent_along(rho);
        let extent = hi - lo;
        for &m in &opts.tau_multipliers {
            let tau = (m / extent).min(cap);
            for &off in &opts.offsets {
                let t = hi - off * extent;
                let field = WolffField::new(wolff.clone(), rho, t, tau)?;
                let trace = boundary_trace(&field, mesh)?;
                push(format!("wolff-d{k}-tau{m}-t{off}"), trace, &mut out);
                if opts.anchored {
                    let trace = boundary_trace(&field.anchored_at_peak(mesh), mesh)?;
                    push(format!("wolff-d{k}-tau{m}-t{off}-anchored"), trace, &mut out);
                }
            }
        }
    }
    for (k, rho) in direction_grid(2 * opts.affine).into_iter().take(opts.affine).enumerate() {
        let trace = BoundaryTrace::from_fn(mesh, |x| x.dot(rho))?;
        push(format!("affine-{k}"), trace, &mut out);
    }
    let (bmin, bmax) = mesh.bounding_box();
    let center = (bmin + bmax) * 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for k in 0..opts.random {
        let coeffs: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let trace = BoundaryTrace::from_fn(mesh, |x: Vec2| {
            let th = (x.y - center.y).atan2(x.x - center.x);
            coeffs
                .iter()
                .enumerate()
                .map(|(j, (a, b))| {
                    let n = (j + 1) as f64;
                    (a * (n * th).cos() + b * (n * th).sin()) / (n * n)
                })
                .sum()
        })?;
        push(format!("random-{k}"), trace, &mut out);
    }
    Ok(out)
}

/// One recorded pairing, for offline replay.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Measurement {
    pub trace_id: String,
    pub value: f64,
    pub log_scale: f64,
}

/// Record `<(Lambda_sigma - Lambda_1) f, f>` for every dictionary trace.
pub fn measure_deficits(sigma: &DnOracle, one: &DnOracle, dictionary: &[DictionaryEntry]) -> Result<Vec<Measurement>> {
    dictionary
        .iter()
        .map(|e| {
            let d = deficit(sigma, one, &e.trace)?;
            Ok(Measurement { trace_id: e.id.clone(), value: d.mantissa, log_scale: d.log_scale })
        })
        .collect()
}
