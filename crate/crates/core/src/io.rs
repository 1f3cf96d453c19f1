//! Scene files, CSV artifacts and SVG overlays.
//!
//! Every CSV has a header row and floats in shortest round-trip decimal
//! form, so files written here read back to identical values.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mesh, paint_scene, ConductivityScene, DomainSpec, HullPolygon, Inclusion, SignClass, TriMesh, Vec2};

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

/// Smooth background conductivity under the inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Background {
    Constant { value: f64 },
    /// `base + curvature * |x - center|^2`.
    RadialQuadratic { center: Vec2, base: f64, curvature: f64 },
}

impl Background {
    pub fn value(&self, x: Vec2) -> f64 {
        match self {
            Background::Constant { value } => *value,
            Background::RadialQuadratic { center, base, curvature } => base + curvature * x.dist(*center).powi(2),
        }
    }

    /// Lipschitz constant of the profile over a domain of the given
    /// support radius about the profile center.
    pub fn lipschitz(&self, reach: f64) -> f64 {
        match self {
            Background::Constant { .. } => 0.0,
            Background::RadialQuadratic { curvature, .. } => 2.0 * curvature.abs() * reach,
        }
    }
}

/// Declarative scene: domain, resolution, exponent and painted inclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub p: f64,
    pub resolution: usize,
    pub domain: DomainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    /// Checked against the painted conductivity when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_class: Option<SignClass>,
    /// Boundary points for the boundary-value pipeline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_points: Vec<Vec2>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scene {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("scene file: {e}")))
    }

    pub fn mesh(&self) -> Result<Arc<TriMesh>> {
        Ok(Arc::new(build_mesh(&self.domain, self.resolution)?))
    }

    /// Paint the scene on `mesh`. Inclusions overwrite the background.
    pub fn build_on(&self, mesh: Arc<TriMesh>) -> Result<ConductivityScene> {
        let scene = match &self.background {
            None => paint_scene(mesh, &self.inclusions, self.p)?,
            Some(bg) => ConductivityScene::from_fn(mesh, self.p, |x| {
                self.inclusions
                    .iter()
                    .rev()
                    .find(|inc| inc.shape.contains(x))
                    .map_or_else(|| bg.value(x), |inc| inc.sigma)
            })?,
        };
        if let Some(declared) = self.sign_class {
            scene.validate_declared(declared)?;
        }
        Ok(scene)
    }

    pub fn build(&self) -> Result<ConductivityScene> {
        self.build_on(self.mesh()?)
    }

    /// Pointwise conductivity the scene paints, for comparing boundary
    /// recoveries against the analytic value.
    pub fn sigma_at(&self, x: Vec2) -> f64 {
        match self.inclusions.iter().rev().find(|inc| inc.shape.contains(x)) {
            Some(inc) => inc.sigma,
            None => self.background.as_ref().map_or(1.0, |bg| bg.value(x)),
        }
    }
}

// ---------------------------------------------------------------------------
// CSV rows
// ---------------------------------------------------------------------------

/// A CSV record type with a fixed header.
pub trait CsvRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

macro_rules! csv_row {
    ($(#[$m:meta])* $name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            $(pub $field: $ty,)*
        }

        impl CsvRow for $name {
            const HEADER: &'static [&'static str] = &[$(stringify!($field)),*];
        }
    };
}

csv_row!(
    /// One Dirichlet value per boundary vertex, in boundary-loop order.
    TraceRow { x: f64, y: f64, value: f64 }
);
csv_row!(SolutionRow { x: f64, y: f64, u: f64 });
csv_row!(WolffRow { s: f64, w: f64, wp: f64 });
csv_row!(HullSupportRow { rho_x: f64, rho_y: f64, h: f64 });
csv_row!(
    /// Closed polygon: the first vertex is repeated at the end.
    HullVertexRow { x: f64, y: f64 }
);
csv_row!(SupportRow {
    rho_x: f64,
    rho_y: f64,
    h_est: f64,
    status: String,
    sign: i8,
    bracket_low: f64,
    bracket_high: f64,
});
csv_row!(IndicatorRow { direction: usize, rho_x: f64, rho_y: f64, t: f64, tau: f64, sign: i8, log_abs: f64, relative: f64 });
csv_row!(VerdictRow {
    center_x: f64,
    center_y: f64,
    radius: f64,
    alpha: f64,
    direction: String,
    marked: bool,
    witness: String,
    witness_gap: f64,
});
csv_row!(MeasurementRow { trace_id: String, value: f64, log_scale: f64 });
csv_row!(BoundaryRow {
    x: f64,
    y: f64,
    sigma_recovered: f64,
    iterations: usize,
    bracket_width: f64,
    equality_branch: bool,
});

pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(T::HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: CsvRow>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != T::HEADER {
        return Err(Error::Config(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            T::HEADER,
            header
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn hull_vertex_rows(hull: Option<&HullPolygon>) -> Vec<HullVertexRow> {
    let Some(h) = hull else { return Vec::new() };
    let v = h.vertices();
    v.iter().chain(v.first()).map(|p| HullVertexRow { x: p.x, y: p.y }).collect()
}

pub fn hull_support_rows(hull: Option<&HullPolygon>) -> Vec<HullSupportRow> {
    let Some(h) = hull else { return Vec::new() };
    h.support_table().iter().map(|s| HullSupportRow { rho_x: s.rho.x, rho_y: s.rho.y, h: s.h }).collect()
}

/// Rebuild a hull from its closed-polygon CSV rows (`None` when empty).
pub fn hull_from_rows(rows: &[HullVertexRow], directions: &[Vec2]) -> Result<Option<HullPolygon>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let pts: Vec<Vec2> = rows.iter().map(|r| Vec2::new(r.x, r.y)).collect();
    Ok(Some(HullPolygon::from_points(&pts, directions)?))
}

// ---------------------------------------------------------------------------
// SVG overlays
// ---------------------------------------------------------------------------

/// Static overlay of the domain, the painted inclusion cells, the true
/// hull, a reconstructed hull and optional marked test balls.
pub struct Overlay<'a> {
    pub mesh: &'a TriMesh,
    pub sigma: &'a [f64],
    pub truth: Option<&'a HullPolygon>,
    pub estimate: Option<&'a HullPolygon>,
    pub balls: Vec<(Vec2, f64)>,
}

impl Overlay<'_> {
    pub fn render(&self) -> String {
        let size = 600.0;
        let (bmin, bmax) = self.mesh.bounding_box();
        let span = (bmax.x - bmin.x).max(bmax.y - bmin.y);
        let scale = size / span;
        let map = |v: Vec2| ((v.x - bmin.x) * scale, (bmax.y - v.y) * scale);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"-10 -10 {} {}\">\n",
            size + 20.0,
            size + 20.0
        );
        let poly = |pts: &[Vec2], style: &str| {
            let coords: Vec<String> = pts
                .iter()
                .map(|&v| {
                    let (x, y) = map(v);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            format!("<polygon points=\"{}\" {style}/>\n", coords.join(" "))
        };
        let outline: Vec<Vec2> = self.mesh.boundary_loop().iter().map(|&i| self.mesh.vertices()[i]).collect();
        s += &poly(&outline, "fill=\"#f4f4f4\" stroke=\"#444\" stroke-width=\"1\"");
        for (t, &sg) in self.sigma.iter().enumerate() {
            if sg != 1.0 {
                let tri: Vec<Vec2> = self.mesh.triangles()[t].iter().map(|&i| self.mesh.vertices()[i]).collect();
                let fill = if sg > 1.0 { "#f2b8a0" } else { "#a0c4f2" };
                s += &poly(&tri, &format!("fill=\"{fill}\" stroke=\"none\""));
            }
        }
        for &(c, r) in &self.balls {
            let (x, y) = map(c);
            s += &format!(
                "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{:.3}\" fill=\"none\" stroke=\"#6a6\" stroke-width=\"0.7\"/>\n",
                r * scale
            );
        }
        if let Some(h) = self.truth {
            s += &poly(h.vertices(), "fill=\"none\" stroke=\"#000\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"");
        }
        if let Some(h) = self.estimate {
            s += &poly(h.vertices(), "fill=\"none\" stroke=\"#c22\" stroke-width=\"2\"");
        }
        s += "</svg>\n";
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = r#"
p = 2.0
resolution = 16
sign_class = "geq1"

[domain]
kind = "unit-square"

[[inclusions]]
shape = "disk"
center = { x = 0.5, y = 0.5 }
radius = 0.2
sigma = 2.0

[[inclusions]]
shape = "rect"
min = { x = 0.1, y = 0.1 }
max = { x = 0.3, y = 0.2 }
sigma = 3.0
"#;

    #[test]
    fn scene_parses_and_paints() {
        let sf = SceneFile::parse(SCENE).unwrap();
        assert_eq!(sf.inclusions.len(), 2);
        let scene = sf.build().unwrap();
        assert_eq!(scene.sign_class(), SignClass::Geq1);
        assert!(scene.sigma().iter().any(|&s| s == 3.0));
        let again = SceneFile::parse(&sf.to_toml().unwrap()).unwrap();
        assert_eq!(again, sf);
    }

    #[test]
    fn scene_rejects_bad_input() {
        assert!(SceneFile::parse("p = 2.0").is_err());
        let wrong_class = SCENE.replace("geq1", "leq1");
        assert!(SceneFile::parse(&wrong_class).unwrap().build().is_err());
        let unknown = format!("color = 3\n{SCENE}");
        assert!(SceneFile::parse(&unknown).is_err());
    }

    #[test]
    fn radial_background() {
        let text = r#"
p = 3.0
resolution = 8
boundary_points = [{ x = 1.0, y = 0.0 }]

[domain]
kind = "disk"
center = { x = 0.0, y = 0.0 }
radius = 1.0

[background]
kind = "radial-quadratic"
center = { x = 0.0, y = 0.0 }
base = 1.0
curvature = 0.5
"#;
        let sf = SceneFile::parse(text).unwrap();
        assert_eq!(sf.sigma_at(Vec2::new(1.0, 0.0)), 1.5);
        assert_eq!(sf.background.as_ref().unwrap().lipschitz(1.0), 1.0);
        let scene = sf.build().unwrap();
        assert_eq!(scene.sign_class(), SignClass::Geq1);
    }

    #[test]
    fn csv_round_trip_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let rows = vec![
            VerdictRow {
                center_x: 0.1,
                center_y: 1.0 / 3.0,
                radius: 2e-17,
                alpha: 0.125,
                direction: "plus".into(),
                marked: true,
                witness: String::new(),
                witness_gap: -1.2345678901234567e-7,
            },
            VerdictRow {
                center_x: -0.0,
                center_y: f64::MAX,
                radius: 1.0,
                alpha: 1.0,
                direction: "minus".into(),
                marked: false,
                witness: "wolff-d3-tau8-t0".into(),
                witness_gap: 0.0,
            },
        ];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<VerdictRow>(&path).unwrap(), rows);
        write_csv::<HullVertexRow>(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,y\n");
        assert!(read_csv::<HullVertexRow>(&path).unwrap().is_empty());
        assert!(read_csv::<SolutionRow>(&path).is_err());
    }

    #[test]
    fn hull_rows_close_and_rebuild() {
        let dirs = crate::geometry::direction_grid(8);
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let h = HullPolygon::from_points(&pts, &dirs).unwrap();
        let rows = hull_vertex_rows(Some(&h));
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], rows[3]);
        let back = hull_from_rows(&rows, &dirs).unwrap().unwrap();
        assert_eq!(back.vertices(), h.vertices());
        assert!(hull_from_rows(&[], &dirs).unwrap().is_none());
        let svg = Overlay {
            mesh: &build_mesh(&DomainSpec::UnitSquare, 4).unwrap(),
            sigma: &[1.0; 32],
            truth: Some(&h),
            estimate: None,
            balls: vec![(Vec2::new(0.5, 0.5), 0.1)],
        }
        .render();
        assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    }
}
