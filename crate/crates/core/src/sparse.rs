//! Envelope (skyline) Cholesky for the symmetric positive definite systems
//! produced by P1 assembly, with a reverse Cuthill-McKee ordering of the
//! free vertices.

use std::collections::VecDeque;

use crate::geometry::TriMesh;

const NONE: usize = usize::MAX;

/// Local index pairs stored per triangle: three diagonal entries then the
/// three off-diagonal ones.
pub const LOCAL_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Sparsity layout of the free-vertex system of a mesh.
#[derive(Debug, Clone)]
pub struct Layout {
    n: usize,
    /// Permuted free index for each vertex, or `NONE` on the boundary.
    free_index: Vec<usize>,
    /// Vertex for each permuted free index.
    vertex_of: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    nnz: usize,
    /// Envelope position of each entry of `LOCAL_PAIRS` for each triangle.
    tri_pos: Vec<[usize; 6]>,
}

impl Layout {
    pub fn new(mesh: &TriMesh) -> Layout {
        let nv = mesh.n_vertices();
        let mut free_raw = vec![NONE; nv];
        let mut raw_vertex = Vec::new();
        for v in 0..nv {
            if !mesh.is_boundary(v) {
                free_raw[v] = raw_vertex.len();
                raw_vertex.push(v);
            }
        }
        let n = raw_vertex.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tri in mesh.triangles() {
            for &(a, b) in &LOCAL_PAIRS[3..] {
                let (ia, ib) = (free_raw[tri[a]], free_raw[tri[b]]);
                if ia != NONE && ib != NONE {
                    adj[ia].push(ib);
                    adj[ib].push(ia);
                }
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        let order = rcm(&adj);
        let mut perm_of_raw = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            perm_of_raw[old] = new;
        }
        let mut free_index = vec![NONE; nv];
        let mut vertex_of = vec![0; n];
        for (raw, &v) in raw_vertex.iter().enumerate() {
            free_index[v] = perm_of_raw[raw];
            vertex_of[perm_of_raw[raw]] = v;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (raw, nb) in adj.iter().enumerate() {
            let i = perm_of_raw[raw];
            for &r in nb {
                let j = perm_of_raw[r];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n);
        let mut nnz = 0;
        for i in 0..n {
            offset.push(nnz);
            nnz += i - first[i] + 1;
        }
        let pos = |i: usize, j: usize| -> usize {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            offset[r] + c - first[r]
        };
        let tri_pos = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut out = [NONE; 6];
                for (k, &(a, b)) in LOCAL_PAIRS.iter().enumerate() {
                    let (ia, ib) = (free_index[tri[a]], free_index[tri[b]]);
                    if ia != NONE && ib != NONE {
                        out[k] = pos(ia, ib);
                    }
                }
                out
            })
            .collect();
        Layout { n, free_index, vertex_of, first, offset, nnz, tri_pos }
    }

    pub fn n_free(&self) -> usize {
        self.n
    }

    /// Permuted free index of vertex `v`, if it is not on the boundary.
    pub fn free_index(&self, v: usize) -> Option<usize> {
        let i = self.free_index[v];
        (i != NONE).then_some(i)
    }

    pub fn vertex_of(&self, i: usize) -> usize {
        self.vertex_of[i]
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.nnz]
    }

    pub fn envelope_size(&self) -> usize {
        self.nnz
    }

    /// Envelope positions for the local pairs of triangle `t`
    /// (`usize::MAX` when either vertex is on the boundary).
    pub fn triangle_positions(&self, t: usize) -> &[usize; 6] {
        &self.tri_pos[t]
    }

    /// In-place Cholesky factorization `A = L L^T`. Fails on a non-positive
    /// pivot.
    pub fn factor(&self, a: &mut [f64]) -> Result<(), usize> {
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let ri = &a[oi + k0 - fi..oi + j - fi];
                let rj = &a[oj + k0 - fj..oj + j - fj];
                let s: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
                let diag = a[oj + j - fj];
                a[oi + j - fi] = (a[oi + j - fi] - s) / diag;
            }
            let row = &a[oi..oi + i - fi];
            let s: f64 = row.iter().map(|x| x * x).sum();
            let d = a[oi + i - fi] - s;
            if !(d > 0.0 && d.is_finite()) {
                return Err(i);
            }
            a[oi + i - fi] = d.sqrt();
        }
        Ok(())
    }

    /// Solve `L L^T x = b` in place with a factor from [`Layout::factor`].
    pub fn solve(&self, l: &[f64], b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let s: f64 = l[oi..oi + i - fi].iter().zip(&b[fi..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / l[oi + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            b[i] /= l[oi + i - fi];
            let xi = b[i];
            for (k, lk) in (fi..i).zip(&l[oi..oi + i - fi]) {
                b[k] -= lk * xi;
            }
        }
    }

    /// `y = A x` for an unfactored symmetric envelope matrix.
    pub fn matvec(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let v = a[oi + j - fi];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += a[oi + i - fi] * x[i];
        }
        y
    }
}

/// Reverse Cuthill-McKee ordering, one BFS per connected component, each
/// started from a pseudo-peripheral vertex.
fn rcm(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let deg = |v: usize| adj[v].len();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg(w), w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let mut v = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let (far, e) = bfs_farthest(adj, v);
        if e <= ecc {
            break;
        }
        ecc = e;
        v = far;
    }
    v
}

fn bfs_farthest(adj: &[Vec<usize>], s: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    let mut best = (s, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > best.1 || (d == best.1 && adj[v].len() < adj[best.0].len()) {
            best = (v, d);
        }
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = d + 1;
                queue.push_back(w);
            }
        }
    }
    best
}
