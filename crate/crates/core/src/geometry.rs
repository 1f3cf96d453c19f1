//! Domains, triangle meshes, conductivity scenes and the discrete
//! convex-hull / support-function machinery.
//!
//! Everything here is immutable after construction. A "cell" is a mesh
//! triangle; conductivities are piecewise constant per cell and fields are
//! piecewise linear per vertex.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Counterclockwise rotation by a right angle.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// `n` equispaced unit vectors, the first one along +x.
pub fn direction_grid(n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|k| Vec2::from_angle(2.0 * PI * k as f64 / n as f64))
        .collect()
}

// ---------------------------------------------------------------------------
// Domains and meshes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainSpec {
    UnitSquare,
    Disk { center: Vec2, radius: f64 },
    ConvexPolygon { vertices: Vec<Vec2> },
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::UnitSquare => Ok(()),
            DomainSpec::Disk { radius, center } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Geometry(format!("disk radius must be > 0, got {radius}")));
                }
                if !(center.x.is_finite() && center.y.is_finite()) {
                    return Err(Error::Geometry("disk center must be finite".into()));
                }
                Ok(())
            }
            DomainSpec::ConvexPolygon { vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return Err(Error::Geometry(format!(
                        "degenerate polygon: {n} vertices"
                    )));
                }
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    let turn = (b - a).cross(c - b);
                    let scale = (b - a).norm() * (c - b).norm();
                    if !(turn > 1e-12 * scale) {
                        return Err(Error::Geometry(format!(
                            "degenerate polygon: vertex {} is not a strictly convex counterclockwise turn",
                            (i + 1) % n
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Diameter of the domain (exact for the square and disk, vertex
    /// diameter for polygons).
    pub fn diameter(&self) -> f64 {
        match self {
            DomainSpec::UnitSquare => 2f64.sqrt(),
            DomainSpec::Disk { radius, .. } => 2.0 * radius,
            DomainSpec::ConvexPolygon { vertices } => {
                let mut d: f64 = 0.0;
                for a in vertices {
                    for b in vertices {
                        d = d.max(a.dist(*b));
                    }
                }
                d
            }
        }
    }

    /// `max_{x in closure} x . rho`.
    pub fn support(&self, rho: Vec2) -> f64 {
        match self {
            DomainSpec::UnitSquare => rho.x.max(0.0) + rho.y.max(0.0),
            DomainSpec::Disk { center, radius } => center.dot(rho) + radius * rho.norm(),
            DomainSpec::ConvexPolygon { vertices } => vertices
                .iter()
                .map(|v| v.dot(rho))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Conforming triangulation with piecewise-linear vertex fields.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<f64>,
    boundary_loop: Vec<usize>,
    /// Gradients of the three hat functions on each triangle.
    grads: Vec<[Vec2; 3]>,
    domain: DomainSpec,
    resolution: usize,
    id: u64,
}

impl TriMesh {
    /// Assemble a mesh from raw parts; `boundary_loop` is the ordered
    /// counterclockwise boundary polyline.
    pub fn from_parts(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        boundary_loop: Vec<usize>,
        domain: DomainSpec,
        resolution: usize,
    ) -> Result<TriMesh> {
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::Geometry(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let twice = (b - a).cross(c - a);
            if !(twice > 0.0) {
                return Err(Error::Geometry(format!(
                    "triangle {t} has non-positive signed area"
                )));
            }
            areas.push(0.5 * twice);
            // grad phi_k = perp(opposite edge) / (2 * area), oriented inward.
            let g = |p: Vec2, q: Vec2| Vec2::new(p.y - q.y, q.x - p.x) * (1.0 / twice);
            grads.push([g(b, c), g(c, a), g(a, b)]);
        }
        let mut boundary = vec![false; nv];
        for &i in &boundary_loop {
            if i >= nv {
                return Err(Error::Geometry("boundary loop references a missing vertex".into()));
            }
            boundary[i] = true;
        }
        let mut h = DefaultHasher::new();
        for v in &vertices {
            v.x.to_bits().hash(&mut h);
            v.y.to_bits().hash(&mut h);
        }
        triangles.hash(&mut h);
        boundary_loop.hash(&mut h);
        let id = h.finish();
        Ok(TriMesh {
            vertices,
            triangles,
            boundary,
            areas,
            boundary_loop,
            grads,
            domain,
            resolution,
            id,
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn hat_gradients(&self) -> &[[Vec2; 3]] {
        &self.grads
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Boundary vertices in counterclockwise order. Boundary traces are
    /// stored in this order.
    pub fn boundary_loop(&self) -> &[usize] {
        &self.boundary_loop
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Content hash; identical meshes share an id.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        (a + b + c) * (1.0 / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Shoelace area of the boundary polyline.
    pub fn boundary_polygon_area(&self) -> f64 {
        let n = self.boundary_loop.len();
        let mut s = 0.0;
        for i in 0..n {
            let a = self.vertices[self.boundary_loop[i]];
            let b = self.vertices[self.boundary_loop[(i + 1) % n]];
            s += a.cross(b);
        }
        0.5 * s
    }

    pub fn cell_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        a.dist(b).max(b.dist(c)).max(c.dist(a))
    }

    pub fn max_cell_diameter(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.cell_diameter(t))
            .fold(0.0, f64::max)
    }

    /// Typical cell width: domain diameter / resolution for the square
    /// grid this is exactly the grid spacing along each axis.
    pub fn cell_width(&self) -> f64 {
        match &self.domain {
            DomainSpec::UnitSquare => 1.0 / self.resolution as f64,
            d => d.diameter() / self.resolution as f64,
        }
    }

    /// Projection range `(min, max)` of the vertices onto `rho`.
    pub fn extent_along(&self, rho: Vec2) -> (f64, f64) {
        self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let s = v.dot(rho);
            (lo.min(s), hi.max(s))
        })
    }

    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }
}

/// Structured triangulation of `domain` with about `resolution` cells per
/// side (per diameter for disks and polygons).
pub fn build_mesh(domain: &DomainSpec, resolution: usize) -> Result<TriMesh> {
    if resolution < 2 {
        return Err(Error::Geometry(format!("resolution must be >= 2, got {resolution}")));
    }
    domain.validate()?;
    match domain {
        DomainSpec::UnitSquare => square_mesh(resolution),
        DomainSpec::Disk { center, radius } => disk_mesh(*center, *radius, resolution),
        DomainSpec::ConvexPolygon { vertices } => polygon_mesh(vertices, resolution),
    }
}

fn square_mesh(n: usize) -> Result<TriMesh> {
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // exact endpoints
            let x = if i == n { 1.0 } else { i as f64 * h };
            let y = if j == n { 1.0 } else { j as f64 * h };
            vertices.push(Vec2::new(x, y));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut boundary_loop = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_loop.push(idx(i, 0));
    }
    for j in 0..n {
        boundary_loop.push(idx(n, j));
    }
    for i in (1..=n).rev() {
        boundary_loop.push(idx(i, n));
    }
    for j in (1..=n).rev() {
        boundary_loop.push(idx(0, j));
    }
    TriMesh::from_parts(vertices, triangles, boundary_loop, DomainSpec::UnitSquare, n)
}

/// Stitch two closed rings (inner ring may be a single apex) counterclockwise.
/// Ring positions are given as rational fractions `k / len` of a full turn.
fn stitch_rings(inner: &[usize], outer: &[usize], triangles: &mut Vec<[usize; 3]>) {
    let (na, nb) = (inner.len(), outer.len());
    if na == 1 {
        for j in 0..nb {
            triangles.push([inner[0], outer[j], outer[(j + 1) % nb]]);
        }
        return;
    }
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        // advance outer when (j+1)/nb <= (i+1)/na
        let advance_outer = j < nb && (i == na || (j + 1) * na <= (i + 1) * nb);
        if advance_outer {
            triangles.push([inner[i % na], outer[j % nb], outer[(j + 1) % nb]]);
            j += 1;
        } else {
            triangles.push([inner[i % na], outer[(j) % nb], inner[(i + 1) % na]]);
            i += 1;
        }
    }
}

fn disk_mesh(center: Vec2, radius: f64, resolution: usize) -> Result<TriMesh> {
    let rings = resolution.div_ceil(2).max(1);
    let mut vertices = vec![center];
    let mut triangles = Vec::new();
    let mut prev: Vec<usize> = vec![0];
    for k in 1..=rings {
        let n = 6 * k;
        let r = radius * k as f64 / rings as f64;
        let ring: Vec<usize> = (0..n)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / n as f64;
                vertices.push(center + Vec2::from_angle(th) * r);
                vertices.len() - 1
            })
            .collect();
        stitch_rings(&prev, &ring, &mut triangles);
        prev = ring;
    }
    TriMesh::from_parts(
        vertices,
        triangles,
        prev,
        DomainSpec::Disk { center, radius },
        resolution,
    )
}

fn polygon_mesh(corners: &[Vec2], resolution: usize) -> Result<TriMesh> {
    let domain = DomainSpec::ConvexPolygon { vertices: corners.to_vec() };
    let h = domain.diameter() / resolution as f64;
    let nc = corners.len();
    let centroid = polygon_centroid(corners);
    let reach = corners.iter().map(|c| c.dist(centroid)).fold(0.0, f64::max);
    let rings = ((reach / h).ceil() as usize).max(1);
    let outer_segments: Vec<usize> = (0..nc)
        .map(|e| ((corners[(e + 1) % nc].dist(corners[e]) / h).ceil() as usize).max(1))
        .collect();

    let mut vertices = vec![centroid];
    let mut triangles = Vec::new();
    let mut prev_ring: Vec<usize> = vec![0];
    let mut prev_segments: Vec<usize> = vec![0; nc];
    for k in 1..=rings {
        let s = k as f64 / rings as f64;
        let segs: Vec<usize> = outer_segments
            .iter()
            .map(|&m| ((k * m).div_ceil(rings)).max(1))
            .collect();
        let mut ring = Vec::new();
        let mut starts = Vec::with_capacity(nc);
        for e in 0..nc {
            starts.push(ring.len());
            let a = centroid + (corners[e] - centroid) * s;
            let b = centroid + (corners[(e + 1) % nc] - centroid) * s;
            for i in 0..segs[e] {
                let f = i as f64 / segs[e] as f64;
                vertices.push(a + (b - a) * f);
                ring.push(vertices.len() - 1);
            }
        }
        if k == 1 {
            stitch_rings(&prev_ring, &ring, &mut triangles);
        } else {
            // stitch edge sector by edge sector so corners line up
            let mut pstart = 0;
            for e in 0..nc {
                let a_len = prev_segments[e];
                let inner: Vec<usize> = (0..=a_len)
                    .map(|i| prev_ring[(pstart + i) % prev_ring.len()])
                    .collect();
                let outer: Vec<usize> = (0..=segs[e])
                    .map(|j| ring[(starts[e] + j) % ring.len()])
                    .collect();
                stitch_open(&inner, &outer, &mut triangles);
                pstart += a_len;
            }
        }
        prev_ring = ring;
        prev_segments = segs;
    }
    TriMesh::from_parts(vertices, triangles, prev_ring, domain, resolution)
}

/// Stitch two open polylines sharing parameterization [0, 1].
fn stitch_open(inner: &[usize], outer: &[usize], triangles: &mut Vec<[usize; 3]>) {
    let (na, nb) = (inner.len() - 1, outer.len() - 1);
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        let advance_outer = j < nb && (i == na || (j + 1) * na <= (i + 1) * nb);
        if advance_outer {
            triangles.push([inner[i], outer[j], outer[j + 1]]);
            j += 1;
        } else {
            triangles.push([inner[i], outer[j], inner[i + 1]]);
            i += 1;
        }
    }
}

fn polygon_centroid(v: &[Vec2]) -> Vec2 {
    let n = v.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (p, q) = (v[i], v[(i + 1) % n]);
        let w = p.cross(q);
        a += w;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    Vec2::new(cx / (3.0 * a), cy / (3.0 * a))
}

// ---------------------------------------------------------------------------
// Conductivity scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignClass {
    /// sigma >= 1 everywhere with at least one cell above 1.
    Geq1,
    /// sigma <= 1 everywhere with at least one cell below 1.
    Leq1,
    Homogeneous,
    /// Cells on both sides of 1. Only usable for boundary recovery.
    Indefinite,
}

impl SignClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SignClass::Geq1 => "geq1",
            SignClass::Leq1 => "leq1",
            SignClass::Homogeneous => "homogeneous",
            SignClass::Indefinite => "indefinite",
        }
    }

    pub fn infer(sigma: &[f64]) -> SignClass {
        let above = sigma.iter().any(|&s| s > 1.0);
        let below = sigma.iter().any(|&s| s < 1.0);
        match (above, below) {
            (false, false) => SignClass::Homogeneous,
            (true, false) => SignClass::Geq1,
            (false, true) => SignClass::Leq1,
            (true, true) => SignClass::Indefinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Disk { center: Vec2, radius: f64 },
    Rect { min: Vec2, max: Vec2 },
    Polygon { vertices: Vec<Vec2> },
}

impl Shape {
    pub fn contains(&self, x: Vec2) -> bool {
        match self {
            Shape::Disk { center, radius } => x.dist(*center) < *radius,
            Shape::Rect { min, max } => x.x > min.x && x.x < max.x && x.y > min.y && x.y < max.y,
            Shape::Polygon { vertices } => winding_contains(vertices, x),
        }
    }
}

fn winding_contains(poly: &[Vec2], x: Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > x.y) != (b.y > x.y) && x.x < (b.x - a.x) * (x.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    #[serde(flatten)]
    pub shape: Shape,
    pub sigma: f64,
}

/// Ground truth being probed: mesh, per-cell conductivity and exponent.
#[derive(Debug, Clone)]
pub struct ConductivityScene {
    mesh: Arc<TriMesh>,
    sigma: Vec<f64>,
    p: f64,
    sign_class: SignClass,
}

impl ConductivityScene {
    /// Scene with explicit per-cell values. Mixed-sign conductivities are
    /// accepted and tagged [`SignClass::Indefinite`].
    pub fn from_cells(mesh: Arc<TriMesh>, sigma: Vec<f64>, p: f64) -> Result<Self> {
        check_p(p)?;
        if sigma.len() != mesh.n_triangles() {
            return Err(Error::Config(format!(
                "sigma has {} entries for {} cells",
                sigma.len(),
                mesh.n_triangles()
            )));
        }
        if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("conductivity must be positive, got {bad}")));
        }
        let sign_class = SignClass::infer(&sigma);
        Ok(ConductivityScene { mesh, sigma, p, sign_class })
    }

    /// Scene painted from a pointwise conductivity evaluated at cell centroids.
    pub fn from_fn(mesh: Arc<TriMesh>, p: f64, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let sigma = (0..mesh.n_triangles()).map(|t| f(mesh.centroid(t))).collect();
        Self::from_cells(mesh, sigma, p)
    }

    pub fn homogeneous(mesh: Arc<TriMesh>, p: f64) -> Result<Self> {
        let n = mesh.n_triangles();
        Self::from_cells(mesh, vec![1.0; n], p)
    }

    /// Check a declared sign class against the painted values.
    pub fn validate_declared(&self, declared: SignClass) -> Result<()> {
        let ok = match declared {
            SignClass::Geq1 => self.sigma.iter().all(|&s| s >= 1.0),
            SignClass::Leq1 => self.sigma.iter().all(|&s| s <= 1.0),
            SignClass::Homogeneous => self.sigma.iter().all(|&s| s == 1.0),
            SignClass::Indefinite => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "declared sign class {} does not match the painted conductivity ({})",
                declared.as_str(),
                self.sign_class.as_str()
            )))
        }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn sign_class(&self) -> SignClass {
        self.sign_class
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("exponent p must lie in (1, inf), got {p}")))
    }
}

/// Paint inclusions onto a background conductivity of 1 by centroid
/// membership. Later inclusions overwrite earlier ones.
pub fn paint_scene(mesh: Arc<TriMesh>, inclusions: &[Inclusion], p: f64) -> Result<ConductivityScene> {
    check_p(p)?;
    for inc in inclusions {
        if !(inc.sigma.is_finite() && inc.sigma > 0.0) {
            return Err(Error::Config(format!("inclusion sigma must be > 0, got {}", inc.sigma)));
        }
    }
    let mut sigma = vec![1.0; mesh.n_triangles()];
    for (t, s) in sigma.iter_mut().enumerate() {
        let c = mesh.centroid(t);
        for inc in inclusions {
            if inc.shape.contains(c) {
                *s = inc.sigma;
            }
        }
    }
    if SignClass::infer(&sigma) == SignClass::Indefinite {
        return Err(Error::Config(
            "inclusions lie on both sides of the background conductivity 1".into(),
        ));
    }
    ConductivityScene::from_cells(mesh, sigma, p)
}

/// Cells where `|sigma - 1| > threshold`.
pub fn discrete_support_set(scene: &ConductivityScene, threshold: f64) -> Vec<usize> {
    scene
        .sigma
        .iter()
        .enumerate()
        .filter(|(_, s)| (**s - 1.0).abs() > threshold)
        .map(|(t, _)| t)
        .collect()
}

// ---------------------------------------------------------------------------
// Hulls, support functions, half-spaces
// ---------------------------------------------------------------------------

/// Closed half-space `{x : x . rho <= t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    rho: Vec2,
    t: f64,
}

impl HalfSpace {
    pub fn new(rho: Vec2, t: f64) -> Result<Self> {
        if (rho.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Geometry(format!("half-space normal must be a unit vector, |rho| = {}", rho.norm())));
        }
        Ok(HalfSpace { rho, t })
    }

    pub fn rho(&self) -> Vec2 {
        self.rho
    }

    pub fn offset(&self) -> f64 {
        self.t
    }

    pub fn contains(&self, x: Vec2, slack: f64) -> bool {
        x.dot(self.rho) <= self.t + slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportSample {
    pub rho: Vec2,
    pub h: f64,
}

/// Convex polygon with a synchronized table of support values. The vertex
/// list (counterclockwise) is authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct HullPolygon {
    vertices: Vec<Vec2>,
    support: Vec<SupportSample>,
}

impl HullPolygon {
    /// Build from arbitrary points (convex hull taken) and populate the
    /// support table for `directions`.
    pub fn from_points(points: &[Vec2], directions: &[Vec2]) -> Result<Self> {
        let vertices = convex_hull(points);
        if vertices.is_empty() {
            return Err(Error::Geometry("empty point set".into()));
        }
        let mut hull = HullPolygon { vertices, support: Vec::new() };
        hull.set_directions(directions);
        Ok(hull)
    }

    pub fn set_directions(&mut self, directions: &[Vec2]) {
        self.support = directions
            .iter()
            .map(|&rho| SupportSample { rho, h: support_value(self, rho) })
            .collect();
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn support_table(&self) -> &[SupportSample] {
        &self.support
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| self.vertices[i].cross(self.vertices[(i + 1) % n]))
            .sum::<f64>()
            * 0.5
    }

    /// Distance from `x` to the polygon (zero inside).
    pub fn distance_to(&self, x: Vec2) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        if n == 1 {
            return x.dist(v[0]);
        }
        let mut inside = n >= 3;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            if (b - a).cross(x - a) < 0.0 {
                inside = false;
            }
            best = best.min(point_segment_distance(x, a, b));
        }
        if inside {
            0.0
        } else {
            best
        }
    }

    pub fn contains(&self, x: Vec2, slack: f64) -> bool {
        self.distance_to(x) <= slack
    }
}

fn point_segment_distance(x: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sq();
    if l2 == 0.0 {
        return x.dist(a);
    }
    let s = ((x - a).dot(ab) / l2).clamp(0.0, 1.0);
    x.dist(a + ab * s)
}

/// Andrew's monotone chain; returns counterclockwise vertices without
/// collinear points.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 {
            let n = lower.len();
            if (lower[n - 1] - lower[n - 2]).cross(p - lower[n - 2]) <= 0.0 {
                lower.pop();
            } else {
                break;
            }
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 {
            let n = upper.len();
            if (upper[n - 1] - upper[n - 2]).cross(p - upper[n - 2]) <= 0.0 {
                upper.pop();
            } else {
                break;
            }
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Convex hull of all vertices of the listed cells.
pub fn convex_hull_of_cells(mesh: &TriMesh, cells: &[usize], directions: &[Vec2]) -> Result<HullPolygon> {
    if cells.is_empty() {
        return Err(Error::Geometry("no inclusion: empty cell set".into()));
    }
    let mut pts = Vec::with_capacity(3 * cells.len());
    for &c in cells {
        if c >= mesh.n_triangles() {
            return Err(Error::Geometry(format!("cell index {c} out of range")));
        }
        pts.extend(mesh.triangles()[c].iter().map(|&i| mesh.vertices()[i]));
    }
    HullPolygon::from_points(&pts, directions)
}

pub fn support_value(hull: &HullPolygon, rho: Vec2) -> f64 {
    hull.vertices
        .iter()
        .map(|v| v.dot(rho))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Intersection {
    Polygon(HullPolygon),
    Empty,
}

/// Intersection of closed half-spaces as a convex polygon.
///
/// Fails when the normals leave an angular gap of at least a half turn,
/// since the intersection is then unbounded (or empty, which cannot be
/// told apart without the gap closing).
pub fn halfspace_intersection(halfspaces: &[HalfSpace]) -> Result<Intersection> {
    if halfspaces.len() < 3 {
        return Err(Error::Geometry(format!(
            "need at least 3 half-spaces, got {}",
            halfspaces.len()
        )));
    }
    let mut angles: Vec<f64> = halfspaces.iter().map(|h| h.rho.y.atan2(h.rho.x)).collect();
    angles.sort_by(f64::total_cmp);
    let mut max_gap: f64 = 2.0 * PI - (angles[angles.len() - 1] - angles[0]);
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    if max_gap >= PI - 1e-12 {
        return Err(Error::Geometry(
            "unbounded intersection: half-space normals do not span the circle".into(),
        ));
    }
    let tmax = halfspaces.iter().map(|h| h.t.abs()).fold(0.0, f64::max);
    let mut box_half = 4.0 * (1.0 + tmax) / (max_gap / 2.0).cos().max(1e-6);
    let directions: Vec<Vec2> = halfspaces.iter().map(|h| h.rho).collect();
    loop {
        let mut poly = vec![
            Vec2::new(-box_half, -box_half),
            Vec2::new(box_half, -box_half),
            Vec2::new(box_half, box_half),
            Vec2::new(-box_half, box_half),
        ];
        for h in halfspaces {
            poly = clip(&poly, h);
            if poly.is_empty() {
                return Ok(Intersection::Empty);
            }
        }
        let touches_box = poly
            .iter()
            .any(|v| v.x.abs() >= box_half * (1.0 - 1e-12) || v.y.abs() >= box_half * (1.0 - 1e-12));
        if touches_box {
            box_half *= 16.0;
            continue;
        }
        let mut hull = HullPolygon { vertices: convex_hull(&poly), support: Vec::new() };
        if hull.vertices.len() < 3 || hull.area() <= 0.0 {
            return Ok(Intersection::Empty);
        }
        hull.set_directions(&directions);
        return Ok(Intersection::Polygon(hull));
    }
}

/// Sutherland-Hodgman clip of a convex polygon by one half-space.
fn clip(poly: &[Vec2], h: &HalfSpace) -> Vec<Vec2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (fa, fb) = (a.dot(h.rho) - h.t, b.dot(h.rho) - h.t);
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            let s = fa / (fa - fb);
            out.push(a + (b - a) * s);
        }
    }
    out
}

/// Hausdorff distance between two convex polygons.
pub fn hausdorff(a: &HullPolygon, b: &HullPolygon) -> f64 {
    let ab = a.vertices.iter().map(|&v| b.distance_to(v)).fold(0.0, f64::max);
    let ba = b.vertices.iter().map(|&v| a.distance_to(v)).fold(0.0, f64::max);
    ab.max(ba)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_hull() -> HullPolygon {
        HullPolygon::from_points(
            &[Vec2::new(0., 0.), Vec2::new(1., 0.), Vec2::new(1., 1.), Vec2::new(0., 1.)],
            &direction_grid(8),
        )
        .unwrap()
    }

    #[test]
    fn square_resolution_two_has_eight_triangles() {
        let m = build_mesh(&DomainSpec::UnitSquare, 2).unwrap();
        assert_eq!(m.n_triangles(), 8);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn square_area_is_exact_and_cells_small() {
        for n in [2, 3, 7, 16, 33] {
            let m = build_mesh(&DomainSpec::UnitSquare, n).unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-12);
            assert!((m.boundary_polygon_area() - 1.0).abs() < 1e-12);
            assert!(m.max_cell_diameter() <= 2f64.sqrt() * 2.0 / n as f64 + 1e-15);
            assert_eq!(m.boundary_loop().len(), 4 * n);
        }
    }

    #[test]
    fn disk_mesh_area_and_conformity() {
        let d = DomainSpec::Disk { center: Vec2::new(0.0, 0.0), radius: 1.0 };
        let m = build_mesh(&d, 64).unwrap();
        assert!((m.total_area() - PI).abs() / PI < 0.01);
        let rel = (m.total_area() - m.boundary_polygon_area()).abs() / m.total_area();
        assert!(rel < 1e-12, "{rel}");
        assert!(m.max_cell_diameter() <= 2.0 * 2.0 / 64.0);
        assert_conforming(&m);
    }

    #[test]
    fn polygon_mesh_is_conforming_and_exact() {
        let verts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.2),
            Vec2::new(2.3, 1.4),
            Vec2::new(0.8, 2.0),
            Vec2::new(-0.4, 1.0),
        ];
        let d = DomainSpec::ConvexPolygon { vertices: verts };
        let m = build_mesh(&d, 12).unwrap();
        let rel = (m.total_area() - m.boundary_polygon_area()).abs() / m.total_area();
        assert!(rel < 1e-12);
        assert!(m.max_cell_diameter() <= d.diameter() * 2.0 / 12.0);
        assert_conforming(&m);
    }

    /// Every interior edge is shared by exactly two triangles, boundary
    /// edges by one.
    fn assert_conforming(m: &TriMesh) {
        use std::collections::HashMap;
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let bl = m.boundary_loop();
        let mut bedges = std::collections::HashSet::new();
        for i in 0..bl.len() {
            let (a, b) = (bl[i], bl[(i + 1) % bl.len()]);
            bedges.insert((a.min(b), a.max(b)));
        }
        for (e, c) in edges {
            if bedges.contains(&e) {
                assert_eq!(c, 1, "boundary edge {e:?}");
            } else {
                assert_eq!(c, 2, "interior edge {e:?}");
            }
        }
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let d = DomainSpec::ConvexPolygon {
            vertices: vec![Vec2::new(0., 0.), Vec2::new(1., 0.), Vec2::new(2., 0.)],
        };
        assert!(matches!(build_mesh(&d, 4), Err(Error::Geometry(_))));
        let cw = DomainSpec::ConvexPolygon {
            vertices: vec![Vec2::new(0., 0.), Vec2::new(0., 1.), Vec2::new(1., 0.)],
        };
        assert!(matches!(build_mesh(&cw, 4), Err(Error::Geometry(_))));
        assert!(build_mesh(&DomainSpec::UnitSquare, 1).is_err());
    }

    #[test]
    fn painting() {
        let mesh = Arc::new(build_mesh(&DomainSpec::UnitSquare, 64).unwrap());
        let s = paint_scene(mesh.clone(), &[], 2.0).unwrap();
        assert_eq!(s.sign_class(), SignClass::Homogeneous);
        assert!(s.sigma().iter().all(|&v| v == 1.0));
        assert!(discrete_support_set(&s, 1e-9).is_empty());

        let disk = Shape::Disk { center: Vec2::new(0.5, 0.5), radius: 0.2 };
        let s = paint_scene(mesh.clone(), &[Inclusion { shape: disk.clone(), sigma: 2.0 }], 2.0).unwrap();
        assert_eq!(s.sign_class(), SignClass::Geq1);
        let cells = discrete_support_set(&s, 0.5);
        let mut painted_area = 0.0;
        for t in 0..mesh.n_triangles() {
            let inside = disk.contains(mesh.centroid(t));
            assert_eq!(s.sigma()[t], if inside { 2.0 } else { 1.0 });
            if inside {
                painted_area += mesh.areas()[t];
            }
        }
        assert_eq!(cells.len(), s.sigma().iter().filter(|&&v| v == 2.0).count());
        // a cell can only be mispainted if the circle passes through it
        let straddling: f64 = (0..mesh.n_triangles())
            .filter(|&t| {
                let d: Vec<f64> = mesh.triangles()[t].iter().map(|&i| mesh.vertices()[i].dist(Vec2::new(0.5, 0.5))).collect();
                d.iter().any(|&r| r < 0.2) && d.iter().any(|&r| r >= 0.2)
            })
            .map(|t| mesh.areas()[t])
            .sum();
        let err = (painted_area - PI * 0.04).abs();
        assert!(err <= straddling, "{painted_area}");
        // signed errors cancel along the circle: far below the straddling band
        assert!(err <= 0.1 * straddling, "{err} vs {straddling}");

        let weak = paint_scene(mesh.clone(), &[Inclusion { shape: disk.clone(), sigma: 1.01 }], 2.0).unwrap();
        assert!(discrete_support_set(&weak, 0.5).is_empty());

        let mixed = paint_scene(
            mesh,
            &[
                Inclusion { shape: disk, sigma: 2.0 },
                Inclusion {
                    shape: Shape::Rect { min: Vec2::new(0.0, 0.0), max: Vec2::new(0.2, 0.2) },
                    sigma: 0.5,
                },
            ],
            2.0,
        );
        assert!(matches!(mixed, Err(Error::Config(_))));
    }

    #[test]
    fn support_values_of_square() {
        let sq = unit_square_hull();
        assert!((support_value(&sq, Vec2::new(1.0, 0.0)) - 1.0).abs() < 1e-15);
        let diag = Vec2::new(1.0, 1.0).normalized();
        assert!((support_value(&sq, diag) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hull_of_cells() {
        let mesh = build_mesh(&DomainSpec::UnitSquare, 8).unwrap();
        let one = convex_hull_of_cells(&mesh, &[5], &direction_grid(4)).unwrap();
        let tri: Vec<Vec2> = mesh.triangles()[5].iter().map(|&i| mesh.vertices()[i]).collect();
        assert_eq!(one.vertices().len(), 3);
        for v in tri {
            assert!(one.vertices().contains(&v));
        }
        let far = convex_hull_of_cells(&mesh, &[0, mesh.n_triangles() - 1], &[]).unwrap();
        assert!(far.vertices().contains(&Vec2::new(0.0, 0.0)));
        assert!(far.vertices().contains(&Vec2::new(1.0, 1.0)));
        assert!(convex_hull_of_cells(&mesh, &[], &[]).is_err());
    }

    #[test]
    fn disk_scene_hull_matches_disk_support() {
        let mesh = Arc::new(build_mesh(&DomainSpec::UnitSquare, 64).unwrap());
        let c = Vec2::new(0.5, 0.5);
        let s = paint_scene(
            mesh.clone(),
            &[Inclusion { shape: Shape::Disk { center: c, radius: 0.2 }, sigma: 2.0 }],
            2.0,
        )
        .unwrap();
        let dirs = direction_grid(32);
        let hull = convex_hull_of_cells(&mesh, &discrete_support_set(&s, 1e-9), &dirs).unwrap();
        let tol = 2.0 * mesh.max_cell_diameter();
        for smp in hull.support_table() {
            assert!((smp.h - (c.dot(smp.rho) + 0.2)).abs() <= tol);
        }
    }

    #[test]
    fn halfspaces_axis_square() {
        let hs = [
            HalfSpace::new(Vec2::new(1., 0.), 1.0).unwrap(),
            HalfSpace::new(Vec2::new(0., 1.), 1.0).unwrap(),
            HalfSpace::new(Vec2::new(-1., 0.), 0.0).unwrap(),
            HalfSpace::new(Vec2::new(0., -1.), 0.0).unwrap(),
        ];
        let Intersection::Polygon(p) = halfspace_intersection(&hs).unwrap() else {
            panic!("expected polygon")
        };
        assert!((p.area() - 1.0).abs() < 1e-12);
        assert!(hausdorff(&p, &unit_square_hull()) < 1e-12);
    }

    #[test]
    fn halfspaces_circumscribe_disk() {
        let (c, r) = (Vec2::new(0.3, -0.2), 0.7);
        let dirs = direction_grid(32);
        let hs: Vec<HalfSpace> = dirs.iter().map(|&d| HalfSpace::new(d, c.dot(d) + r).unwrap()).collect();
        let Intersection::Polygon(p) = halfspace_intersection(&hs).unwrap() else {
            panic!()
        };
        let bound = r * (1.0 - (PI / 32.0).cos()) / (PI / 32.0).cos();
        // Hausdorff distance to the disk: farthest vertex minus r
        let far = p.vertices().iter().map(|v| v.dist(c) - r).fold(0.0, f64::max);
        assert!(far <= bound + 1e-12 && far >= bound * 0.999);
    }

    #[test]
    fn contradictory_and_unbounded() {
        let e = [
            HalfSpace::new(Vec2::new(1., 0.), -1.0).unwrap(),
            HalfSpace::new(Vec2::new(-1., 0.), -1.0).unwrap(),
            HalfSpace::new(Vec2::new(0., 1.), 1.0).unwrap(),
            HalfSpace::new(Vec2::new(0., -1.), 1.0).unwrap(),
        ];
        assert_eq!(halfspace_intersection(&e).unwrap(), Intersection::Empty);
        let u = [
            HalfSpace::new(Vec2::new(1., 0.), 1.0).unwrap(),
            HalfSpace::new(Vec2::from_angle(0.5), 1.0).unwrap(),
            HalfSpace::new(Vec2::from_angle(1.0), 1.0).unwrap(),
        ];
        assert!(matches!(halfspace_intersection(&u), Err(Error::Geometry(_))));
        assert!(HalfSpace::new(Vec2::new(1.0, 1.0), 0.0).is_err());
    }
}
