//! Sparse storage for design and precision matrices.
//!
//! Designs are kept in CSR form. Symmetric precisions live in an envelope
//! (skyline) layout fixed once per model: rows are permuted by reverse
//! Cuthill-McKee with dense rows (intercept, fixed effects) moved last, and
//! both the Cholesky factor and the selected inverse fit inside the same
//! envelope.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            if r >= nrows {
                return Err(Error::IndexOutOfRange { index: r, len: nrows });
            }
            if c >= ncols {
                return Err(Error::IndexOutOfRange { index: c, len: ncols });
            }
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        idx.binary_search(&j).map(|k| val[k]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| {
                let (idx, val) = self.row(i);
                idx.iter().zip(val).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, yi) in y.iter().enumerate() {
            let (idx, val) = self.row(i);
            for (&j, v) in idx.iter().zip(val) {
                out[j] += v * yi;
            }
        }
        out
    }

    /// Dense row-major copy; meant for tests and small matrices.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            for (&j, v) in idx.iter().zip(val) {
                row[j] = *v;
            }
        }
        d
    }
}

/// Envelope layout of a symmetric `n × n` matrix under a fixed permutation.
#[derive(Debug, Clone)]
pub struct Profile {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `inv[old] = new`.
    inv: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Start of each permuted row in the value array.
    offset: Vec<usize>,
    /// Rows `k > j` whose envelope reaches column `j`.
    col_rows: Vec<Vec<usize>>,
}

impl Profile {
    /// Orders the graph `edges` (pairs of original indices) by reverse
    /// Cuthill-McKee, then appends `dense_last` in the given order.
    pub fn new(n: usize, edges: &[(usize, usize)], dense_last: &[usize]) -> Result<Arc<Self>> {
        for &i in dense_last {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
        }
        let mut is_dense = vec![false; n];
        for &i in dense_last {
            is_dense[i] = true;
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { index: a.max(b), len: n });
            }
            if a != b {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let mut order = rcm(&adj, &is_dense);
        order.extend_from_slice(dense_last);
        let mut inv = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(a, b) in edges {
            let (pa, pb) = (inv[a], inv[b]);
            let (hi, lo) = if pa > pb { (pa, pb) } else { (pb, pa) };
            first[hi] = first[hi].min(lo);
        }
        // Dense rows sit last and span everything.
        for &d in dense_last {
            first[inv[d]] = 0;
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        let mut col_rows = vec![Vec::new(); n];
        for k in 0..n {
            for j in first[k]..k {
                col_rows[j].push(k);
            }
        }
        Ok(Arc::new(Self {
            n,
            perm: order,
            inv,
            first,
            offset,
            col_rows,
        }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored(&self) -> usize {
        self.offset[self.n]
    }

    /// Whether the original entry `(i, j)` lies inside the envelope.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        c >= self.first[r]
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c <= r && c >= self.first[r]);
        self.offset[r] + (c - self.first[r])
    }

    fn slot_orig(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        (c >= self.first[r]).then(|| self.slot(r, c))
    }

    pub fn zeros(self: &Arc<Self>) -> ProfileMatrix {
        ProfileMatrix {
            profile: Arc::clone(self),
            data: vec![0.0; self.stored()],
        }
    }
}

fn rcm(adj: &[Vec<usize>], skip: &[bool]) -> Vec<usize> {
    let n = adj.len();
    let degree = |v: usize| adj[v].iter().filter(|&&w| !skip[w]).count();
    let mut visited = skip.to_vec();
    let mut order = Vec::with_capacity(n);
    loop {
        // Start each component at a minimum-degree node, then refine to a
        // pseudo-peripheral one.
        let Some(mut start) = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree(v), v)) else {
            break;
        };
        let mut best_ecc = 0;
        for _ in 0..4 {
            let levels = bfs_levels(adj, &visited, start);
            let ecc = *levels.iter().map(|(_, l)| l).max().unwrap_or(&0);
            if ecc <= best_ecc && best_ecc > 0 {
                break;
            }
            best_ecc = ecc;
            let far = levels
                .iter()
                .filter(|(_, l)| *l == ecc)
                .map(|(v, _)| *v)
                .min_by_key(|&v| (degree(v), v))
                .unwrap();
            if far == start {
                break;
            }
            start = far;
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let mut comp = Vec::new();
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree(w), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
        order.extend(comp);
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], blocked: &[bool], start: usize) -> Vec<(usize, usize)> {
    let mut seen = blocked.to_vec();
    let mut out = vec![(start, 0)];
    seen[start] = true;
    let mut head = 0;
    while head < out.len() {
        let (v, l) = out[head];
        head += 1;
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                out.push((w, l + 1));
            }
        }
    }
    out
}

/// Symmetric matrix stored on a [`Profile`]; indices are original.
#[derive(Debug, Clone)]
pub struct ProfileMatrix {
    profile: Arc<Profile>,
    data: Vec<f64>,
}

impl ProfileMatrix {
    pub fn profile(&self) -> &Arc<Profile> {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.profile.n
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)` (once when `i == j`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .profile
            .slot_orig(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside envelope"));
        self.data[s] += v;
    }

    pub fn add_diag(&mut self, v: f64) {
        for r in 0..self.profile.n {
            let s = self.profile.slot(r, r);
            self.data[s] += v;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.profile.slot_orig(i, j).map(|s| self.data[s]).unwrap_or(0.0)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.profile.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.profile;
        let mut out = vec![0.0; p.n];
        for r in 0..p.n {
            let i = p.perm[r];
            for c in p.first[r]..=r {
                let j = p.perm[c];
                let v = self.data[p.slot(r, c)];
                out[i] += v * x[j];
                if c != r {
                    out[j] += v * x[i];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.profile.n;
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.get(i, j);
            }
        }
        d
    }

    /// Envelope Cholesky `P Q Pᵀ = L Lᵀ`.
    ///
    /// A pivot below `1e-12` times its original diagonal entry counts as
    /// singular: such a pivot is rounding noise from an exactly singular
    /// direction, and accepting it would blow up every solve.
    pub fn cholesky(&self) -> Result<ProfileCholesky> {
        let p = &self.profile;
        let mut l = self.data.clone();
        for r in 0..p.n {
            let fr = p.first[r];
            for c in fr..=r {
                let fc = p.first[c];
                let k0 = fr.max(fc);
                let mut s = l[p.slot(r, c)];
                let (br, bc) = (p.slot(r, k0), p.slot(c, k0));
                for k in 0..(c - k0) {
                    s -= l[br + k] * l[bc + k];
                }
                if c == r {
                    if !(s > PIVOT_TOL * self.data[p.slot(r, r)]) || !s.is_finite() {
                        return Err(Error::Convergence {
                            what: "Cholesky factorization (matrix not positive definite)",
                            iterations: r,
                        });
                    }
                    l[p.slot(r, r)] = s.sqrt();
                } else {
                    l[p.slot(r, c)] = s / l[p.slot(c, c)];
                }
            }
        }
        Ok(ProfileCholesky {
            profile: Arc::clone(p),
            l,
        })
    }
}

const PIVOT_TOL: f64 = 1e-12;

/// Envelope Cholesky factor.
#[derive(Debug, Clone)]
pub struct ProfileCholesky {
    profile: Arc<Profile>,
    l: Vec<f64>,
}

impl ProfileCholesky {
    pub fn log_det(&self) -> f64 {
        let p = &self.profile;
        2.0 * (0..p.n).map(|r| self.l[p.slot(r, r)].ln()).sum::<f64>()
    }

    /// Solves `Q x = b` (original ordering).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = &self.profile;
        let mut z: Vec<f64> = (0..p.n).map(|r| b[p.perm[r]]).collect();
        for r in 0..p.n {
            let fr = p.first[r];
            let base = p.slot(r, fr);
            let mut s = z[r];
            for (k, zk) in z[fr..r].iter().enumerate() {
                s -= self.l[base + k] * zk;
            }
            z[r] = s / self.l[p.slot(r, r)];
        }
        for r in (0..p.n).rev() {
            z[r] /= self.l[p.slot(r, r)];
            let zr = z[r];
            let fr = p.first[r];
            let base = p.slot(r, fr);
            for (k, zk) in z[fr..r].iter_mut().enumerate() {
                *zk -= self.l[base + k] * zr;
            }
        }
        let mut x = vec![0.0; p.n];
        for r in 0..p.n {
            x[p.perm[r]] = z[r];
        }
        x
    }

    /// Maps standard normal `z` to a draw from `N(0, Q⁻¹)` by solving
    /// `Lᵀ u = z` in the permuted ordering.
    pub fn sample_from_standard(&self, z: &[f64]) -> Vec<f64> {
        let p = &self.profile;
        let mut u = z.to_vec();
        for r in (0..p.n).rev() {
            u[r] /= self.l[p.slot(r, r)];
            let ur = u[r];
            let fr = p.first[r];
            let base = p.slot(r, fr);
            for (k, uk) in u[fr..r].iter_mut().enumerate() {
                *uk -= self.l[base + k] * ur;
            }
        }
        let mut x = vec![0.0; p.n];
        for r in 0..p.n {
            x[p.perm[r]] = u[r];
        }
        x
    }

    /// `max |Q − L Lᵀ|` over the envelope (zero outside by construction).
    pub fn reconstruction_error(&self, q: &ProfileMatrix) -> f64 {
        let p = &self.profile;
        let mut worst = 0.0f64;
        for r in 0..p.n {
            for c in p.first[r]..=r {
                let k0 = p.first[r].max(p.first[c]);
                let mut s = 0.0;
                for k in k0..=c {
                    s += self.l[p.slot(r, k)] * self.l[p.slot(c, k)];
                }
                worst = worst.max((q.data[p.slot(r, c)] - s).abs());
            }
        }
        worst
    }

    /// Entries of `Q⁻¹` on the envelope (Takahashi recursion).
    pub fn selected_inverse(&self) -> ProfileMatrix {
        let p = &self.profile;
        let mut z = vec![0.0; p.stored()];
        let get = |z: &[f64], a: usize, b: usize| {
            let (r, c) = if a >= b { (a, b) } else { (b, a) };
            z[p.slot(r, c)]
        };
        for j in (0..p.n).rev() {
            let ljj = self.l[p.slot(j, j)];
            let rows = &p.col_rows[j];
            for &i in rows.iter().rev() {
                let mut s = 0.0;
                for &k in rows {
                    s += self.l[p.slot(k, j)] * get(&z, i, k);
                }
                z[p.slot(i, j)] = -s / ljj;
            }
            let mut s = 0.0;
            for &k in rows {
                s += self.l[p.slot(k, j)] * z[p.slot(k, j)];
            }
            z[p.slot(j, j)] = 1.0 / (ljj * ljj) - s / ljj;
        }
        ProfileMatrix {
            profile: Arc::clone(p),
            data: z,
        }
    }
}
