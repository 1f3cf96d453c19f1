//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Numeric arguments select criteria.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcond::boundary::{recover_many, BoundaryOptions};
use pcond::dnmap::{default_dictionary, DictionaryOptions, DnOracle};
use pcond::enclosure::{reconstruct_hull, EnclosureOptions, SupportStatus};
use pcond::geometry::*;
use pcond::monotonicity::{ball_grid, scan, ScanOptions};
use pcond::psolver::{dn_pairing, monotonicity_bounds, BoundaryTrace, FeSystem, SolverConfig};
use pcond::wolff::integrate_wolff;

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Option<bool> {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if !only.is_empty() && !only.contains(&n) {
        return None;
    }
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = out.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (budget {}s)", l.as_secs()));
    println!(
        "criterion {n} {}: {name}: {}; runtime {:.1}s{budget}",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    Some(pass)
}

fn square(n: usize) -> Arc<TriMesh> {
    Arc::new(build_mesh(&DomainSpec::UnitSquare, n).unwrap())
}

fn unit_disk(n: usize) -> Arc<TriMesh> {
    Arc::new(build_mesh(&DomainSpec::Disk { center: Vec2::new(0.0, 0.0), radius: 1.0 }, n).unwrap())
}

fn random_trace(mesh: &TriMesh, rng: &mut ChaCha8Rng) -> BoundaryTrace {
    let c: Vec<(f64, f64)> = (0..4).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let (lo, hi) = mesh.bounding_box();
    let mid = (lo + hi) * 0.5;
    BoundaryTrace::from_fn(mesh, |x| {
        let th = (x.y - mid.y).atan2(x.x - mid.x);
        c.iter()
            .enumerate()
            .map(|(j, (a, b))| {
                let k = (j + 1) as f64;
                (a * (k * th).cos() + b * (k * th).sin()) / k
            })
            .sum()
    })
    .unwrap()
}

fn disk_scene(mesh: &Arc<TriMesh>, p: f64, sigma: f64) -> ConductivityScene {
    let inc = Inclusion { shape: Shape::Disk { center: Vec2::new(0.5, 0.5), radius: 0.2 }, sigma };
    paint_scene(mesh.clone(), &[inc], p).unwrap()
}

fn oracles(scene: ConductivityScene) -> (DnOracle, DnOracle) {
    let sys = Arc::new(FeSystem::new(scene.mesh().clone()));
    let cfg = SolverConfig::new(scene.p());
    let one = DnOracle::constant(sys.clone(), 1.0, cfg.clone()).unwrap();
    (DnOracle::with_system(scene, sys, cfg).unwrap(), one)
}

fn true_hull(scene: &ConductivityScene, dirs: &[Vec2]) -> HullPolygon {
    convex_hull_of_cells(scene.mesh(), &discrete_support_set(scene, 1e-9), dirs).unwrap()
}

fn c1_wolff() -> Outcome {
    let w = integrate_wolff(2.0, 1.0, 0.0, 1e-12).unwrap();
    let lam_err = (w.lambda_p - 2.0 * std::f64::consts::PI).abs();
    let cos_err = w.s.iter().zip(&w.w).map(|(s, v)| (v - s.cos()).abs()).fold(0.0, f64::max);
    let mut bounds = true;
    let mut parts = Vec::new();
    for p in [1.5, 2.0, 3.0, 4.0] {
        let w = integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap();
        bounds &= w.c_emp > 0.0 && w.c_emp <= w.big_c_emp;
        parts.push(format!("p={p}: c={:.4} C={:.4}", w.c_emp, w.big_c_emp));
    }
    Outcome {
        pass: lam_err <= 1e-8 && cos_err <= 1e-7 && bounds,
        detail: format!(
            "|lambda_2 - 2pi| = {lam_err:.2e} (tol 1e-8), max|w - cos| = {cos_err:.2e} (tol 1e-7), {}",
            parts.join(", ")
        ),
    }
}

fn c2_sandwich() -> Outcome {
    let mesh = square(16);
    let n = mesh.n_triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for p in [1.5, 2.0, 3.0] {
        let cfg = SolverConfig::new(p);
        for _ in 0..20 {
            let sigma0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let sigma1: Vec<f64> =
                sigma0.iter().map(|s| if rng.gen_bool(0.3) { s + rng.gen_range(0.0..2.0) } else { *s }).collect();
            let f = random_trace(&mesh, &mut rng);
            match monotonicity_bounds(&mesh, &sigma0, &sigma1, &f, &cfg) {
                Ok(b) => worst = worst.min(b.slack() / b.middle.abs().max(1.0)),
                Err(_) => failures += 1,
            }
        }
    }
    Outcome {
        pass: failures == 0 && worst >= -1e-6,
        detail: format!("60 instances, {failures} failures, worst scaled slack {worst:.3e} (tol -1e-6)"),
    }
}

/// Exact P1 energy `sum area sigma |grad u|^p`, written independently of the
/// solver's assembly.
fn brute_energy(mesh: &TriMesh, sigma: &[f64], u: &[f64], p: f64) -> f64 {
    let v = mesh.vertices();
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let (a, b, c) = (v[tri[0]], v[tri[1]], v[tri[2]]);
            let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
            let (du1, du2) = (u[tri[1]] - u[tri[0]], u[tri[2]] - u[tri[0]]);
            let gx = (du1 * (c.y - a.y) - du2 * (b.y - a.y)) / det;
            let gy = (du2 * (b.x - a.x) - du1 * (c.x - a.x)) / det;
            0.5 * det.abs() * sigma[t] * (gx * gx + gy * gy).powf(0.5 * p)
        })
        .sum()
}

/// Dense BFGS with central-difference gradients and backtracking.
fn brute_minimize(energy: &dyn Fn(&[f64]) -> f64, x0: Vec<f64>) -> (Vec<f64>, f64) {
    let n = x0.len();
    let grad = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        let mut y = x.to_vec();
        for i in 0..n {
            let h = 1e-6 * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let fp = energy(&y);
            y[i] = x[i] - h;
            let fm = energy(&y);
            y[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    };
    let mut x = x0;
    let mut fx = energy(&x);
    let mut g = grad(&x);
    let mut hinv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..5000 {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < 1e-11 {
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            hinv = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        }
        let mut step = 1.0;
        let mut xn: Vec<f64>;
        let mut fxn;
        loop {
            xn = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            fxn = energy(&xn);
            if fxn <= fx + 1e-4 * step * slope || step < 1e-14 {
                break;
            }
            step *= 0.5;
        }
        if fxn >= fx {
            break;
        }
        let gnew = grad(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hinv[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        x = xn;
        fx = fxn;
        g = gnew;
    }
    (x, fx)
}

fn c3_forward_oracle() -> Outcome {
    let mesh = square(4);
    let n = mesh.n_triangles();
    let interior: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| !mesh.is_boundary(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for p in [1.5, 3.0] {
        let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.5)).collect();
        let f = random_trace(&mesh, &mut rng);
        let sol = FeSystem::new(mesh.clone()).solve(&sigma, &f, &SolverConfig::new(p)).unwrap();
        let e_solver = sol.energy_scaled(p).value();
        let mut base = vec![0.0; mesh.n_vertices()];
        for (k, &v) in mesh.boundary_loop().iter().enumerate() {
            base[v] = f.values[k] * f.log_scale.exp();
        }
        let energy = |x: &[f64]| {
            let mut u = base.clone();
            for (k, &v) in interior.iter().enumerate() {
                u[v] = x[k];
            }
            brute_energy(&mesh, &sigma, &u, p)
        };
        let best = (0..10)
            .map(|_| brute_minimize(&energy, (0..interior.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).1)
            .fold(f64::INFINITY, f64::min);
        let rel = (e_solver - best).abs() / best;
        worst = worst.max(rel);
        parts.push(format!("p={p}: solver {e_solver:.12e} brute {best:.12e}"));
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max relative difference {worst:.2e} (tol 1e-8); {}", parts.join(", ")),
    }
}

fn c4_homogeneity() -> Outcome {
    let mesh = square(16);
    let n = mesh.n_triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let p = [1.5, 2.0, 3.0, 4.0][k % 4];
        let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..3.0)).collect();
        let f = random_trace(&mesh, &mut rng);
        let cfg = SolverConfig::new(p);
        let base = dn_pairing(&mesh, &sigma, &f, &f, &cfg).unwrap().value();
        for lambda in [0.5, 2.0, -1.0] {
            let g = f.scaled(lambda);
            let v = dn_pairing(&mesh, &sigma, &g, &g, &cfg).unwrap().value();
            let expect = f64::abs(lambda).powf(p) * base;
            worst = worst.max((v - expect).abs() / expect.abs());
        }
    }
    Outcome { pass: worst <= 1e-8, detail: format!("10 scenes x 3 scalings, max relative error {worst:.2e} (tol 1e-8)") }
}

fn c5_enclosure() -> Outcome {
    let mesh = square(64);
    let cw = mesh.cell_width();
    let dirs = direction_grid(16);
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [2.0, 3.0] {
        let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
        for (sigma, expect) in [(2.0, SignClass::Geq1), (0.5, SignClass::Leq1)] {
            let scene = disk_scene(&mesh, p, sigma);
            let truth = true_hull(&scene, &dirs);
            let (o, one) = oracles(scene);
            let rec = reconstruct_hull(&o, &one, &wolff, 16, &EnclosureOptions::default()).unwrap();
            let mut worst: f64 = 0.0;
            let mut unusable = 0;
            for e in &rec.estimates {
                if matches!(e.status, SupportStatus::Converged | SupportStatus::Undecided) {
                    worst = worst.max((e.h_est - support_value(&truth, e.rho)).abs() / cw);
                } else {
                    unusable += 1;
                }
            }
            let ok = worst <= 2.0 && unusable == 0 && rec.sign_class == expect;
            pass &= ok;
            parts.push(format!(
                "p={p} sigma={sigma}: max |h_est - h| = {worst:.2} cells, {unusable} unusable, class {}",
                rec.sign_class.as_str()
            ));
        }
    }
    Outcome { pass, detail: format!("tol 2 cells; {}", parts.join("; ")) }
}

fn c6_monotonicity() -> Outcome {
    let mesh = square(64);
    let cw = mesh.cell_width();
    let dirs = direction_grid(16);
    let grid = ball_grid(&mesh, 2, 2.0).unwrap();
    let radius = grid[0].radius;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [2.0, 3.0] {
        let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
        let dict = default_dictionary(&mesh, &wolff, &DictionaryOptions::default()).unwrap();
        for (sigma, expect) in [(2.0, SignClass::Geq1), (0.5, SignClass::Leq1)] {
            let scene = disk_scene(&mesh, p, sigma);
            let truth = true_hull(&scene, &dirs);
            let (o, one) = oracles(scene);
            let res = scan(&o, &one, &grid, &dict, &dirs, &ScanOptions::default()).unwrap();
            let marked: Vec<_> = res.marked_regions(&grid).collect();
            let outside = marked.iter().filter(|r| truth.distance_to(r.center) > 2.0 * r.radius).count();
            let dist = res.hull.as_ref().map(|h| hausdorff(h, &truth));
            let ok = outside == 0 && dist.is_some_and(|d| d <= 2.0 * cw + radius) && res.sign_class == expect;
            pass &= ok;
            parts.push(format!(
                "p={p} sigma={sigma}: {} marked, {outside} outside, Hausdorff {} cells, class {}",
                marked.len(),
                dist.map_or("none".into(), |d| format!("{:.2}", d / cw)),
                res.sign_class.as_str()
            ));
        }
    }
    Outcome { pass, detail: format!("tol {:.1} cells; {}", 2.0 + radius / cw, parts.join("; ")) }
}

fn c7_boundary() -> Outcome {
    let mesh = unit_disk(64);
    let sys = Arc::new(FeSystem::new(mesh.clone()));
    let p = 2.0;
    let cfg = SolverConfig::new(p);
    let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
    let one = DnOracle::constant(sys.clone(), 1.0, cfg.clone()).unwrap();
    let pts: Vec<Vec2> = (0..4).map(|k| Vec2::from_angle(k as f64 * std::f64::consts::FRAC_PI_2)).collect();
    let radial = |x: Vec2| 1.0 + x.norm_sq() / 2.0;
    let lipschitz = 1.0;
    let tol = f64::max(0.02, 2.0 * mesh.cell_width() * lipschitz);
    let run = |scene: ConductivityScene| {
        let o = DnOracle::with_system(scene, sys.clone(), cfg.clone()).unwrap();
        recover_many(&o, &one, &wolff, &pts, &BoundaryOptions::default()).unwrap()
    };
    let r1 = run(ConductivityScene::from_fn(mesh.clone(), p, radial).unwrap());
    let e1 = r1.iter().map(|r| (r.value - radial(r.x0)).abs()).fold(0.0, f64::max);
    let r2 = run(ConductivityScene::from_cells(mesh.clone(), vec![2.0; mesh.n_triangles()], p).unwrap());
    let e2 = r2.iter().map(|r| (r.value - 2.0).abs()).fold(0.0, f64::max);
    Outcome {
        pass: e1 <= tol && e2 <= 0.01,
        detail: format!("radial max error {e1:.4} (tol {tol:.4}), constant max error {e2:.5} (tol 0.01)"),
    }
}

fn c8_homogeneous() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let cases = [("square", square(32), 2.0), ("square", square(32), 3.0), ("disk", unit_disk(32), 2.0)];
    for (name, mesh, p) in cases {
        let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
        let (o, one) = oracles(ConductivityScene::homogeneous(mesh.clone(), p).unwrap());
        let rec = reconstruct_hull(&o, &one, &wolff, 16, &EnclosureOptions::default()).unwrap();
        let false_dirs = rec.estimates.iter().filter(|e| e.status != SupportStatus::NoInclusion).count();
        let dict = default_dictionary(&mesh, &wolff, &DictionaryOptions::default()).unwrap();
        let grid = ball_grid(&mesh, 2, 2.0).unwrap();
        let res = scan(&o, &one, &grid, &dict, &direction_grid(16), &ScanOptions::default()).unwrap();
        let false_balls = res.marked_regions(&grid).count();
        let ok = rec.sign_class == SignClass::Homogeneous
            && res.sign_class == SignClass::Homogeneous
            && false_dirs == 0
            && false_balls == 0
            && rec.hull.is_none()
            && res.hull.is_none();
        pass &= ok;
        parts.push(format!("{name} p={p}: {false_dirs} directions, {false_balls} balls flagged"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn main() {
    let mins = |m: u64| Some(Duration::from_secs(60 * m));
    let results = [
        criterion(1, "Wolff ODE at p = 2 and amplitude bounds", Some(Duration::from_secs(1)), c1_wolff),
        criterion(2, "monotonicity sandwich on random instances", mins(2), c2_sandwich),
        criterion(3, "forward solver vs brute-force minimizer", mins(1), c3_forward_oracle),
        criterion(4, "p-homogeneity of pairings", None, c4_homogeneity),
        criterion(5, "enclosure reconstruction on disk scenes", mins(15), c5_enclosure),
        criterion(6, "monotonicity reconstruction on disk scenes", mins(20), c6_monotonicity),
        criterion(7, "boundary determination on the unit disk", mins(10), c7_boundary),
        criterion(8, "homogeneous negative control", None, c8_homogeneous),
    ];
    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let failed = ran.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} of {} criteria pass", ran.len() - failed, ran.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
