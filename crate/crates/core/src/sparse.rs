//! Sparse symmetric LDLᵀ factorization (up-looking) with a geometric nested-dissection ordering.
//!
//! Matrices are held as the upper triangle in compressed-column form, already in factorization
//! order: column `k` lists rows `i <= k`.

use crate::geometry::Point2;

/// Subsets this small are not split further.
const ND_LEAF: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SparseError {
    #[error("zero pivot at column {0}; the system is singular")]
    ZeroPivot(usize),
    #[error("matrix is not positive definite (pivot {value} at column {column})")]
    NotPositive { column: usize, value: f64 },
}

/// Orders graph nodes by recursive coordinate bisection, numbering each separator after the two
/// halves it splits. Returns `order` with `order[new] = old`.
pub fn nested_dissection(coords: &[Point2], adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = coords.len();
    let mut order = Vec::with_capacity(n);
    // side[v] marks membership of the subset currently being split: 0 outside, 1 low, 2 high
    let mut side = vec![0u8; n];
    let mut stack: Vec<Task> = vec![Task::Split((0..n).collect())];
    // separators must be emitted after both halves; the stack holds them as deferred emits
    while let Some(task) = stack.pop() {
        match task {
            Task::Emit(nodes) => order.extend(nodes),
            Task::Split(mut nodes) => {
                if nodes.len() <= ND_LEAF {
                    order.extend(nodes);
                    continue;
                }
                let (lo, hi) = crate::geometry::bbox(nodes.iter().map(|&v| coords[v]));
                let key = |v: usize| if hi.x - lo.x >= hi.y - lo.y { coords[v].x } else { coords[v].y };
                let mid = nodes.len() / 2;
                nodes.select_nth_unstable_by(mid, |&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
                for (k, &v) in nodes.iter().enumerate() {
                    side[v] = if k < mid { 1 } else { 2 };
                }
                let mut low = Vec::new();
                let mut sep = Vec::new();
                for &v in &nodes[..mid] {
                    if adjacency[v].iter().any(|&u| side[u] == 2) {
                        sep.push(v);
                    } else {
                        low.push(v);
                    }
                }
                let high: Vec<usize> = nodes[mid..].to_vec();
                for &v in &nodes {
                    side[v] = 0;
                }
                sep.sort_unstable();
                stack.push(Task::Emit(sep));
                stack.push(Task::Split(high));
                stack.push(Task::Split(low));
            }
        }
    }
    order
}

enum Task {
    Split(Vec<usize>),
    Emit(Vec<usize>),
}

/// Upper-triangular compressed-column pattern built from `(row, col)` pairs with `row <= col`.
#[derive(Debug, Clone)]
pub struct UpperPattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
}

impl UpperPattern {
    /// Entries are deduplicated; each pair is normalized so `row <= col`.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in pairs {
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for mut c in cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend(c);
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of entry `(row, col)` in the value array.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (r, c) = if row <= col { (row, col) } else { (col, row) };
        let s = self.col_ptr[c];
        self.row_idx[s..self.col_ptr[c + 1]].binary_search(&r).ok().map(|k| s + k)
    }

    /// `y = A x` for the symmetric matrix whose upper triangle is `values`.
    pub fn sym_mul(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                y[r] += values[p] * x[c];
                if r != c {
                    y[c] += values[p] * x[r];
                }
            }
        }
        y
    }
}

/// Elimination tree and column counts for a fixed pattern; reusable across numeric factorizations.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    pattern: UpperPattern,
    parent: Vec<usize>,
    l_ptr: Vec<usize>,
}

/// Numeric LDLᵀ factor.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    l_ptr: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl LdlSymbolic {
    pub fn new(pattern: UpperPattern) -> Self {
        let n = pattern.n;
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in pattern.col_ptr[k]..pattern.col_ptr[k + 1] {
                let mut i = pattern.row_idx[p];
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        Self { pattern, parent, l_ptr }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &UpperPattern {
        &self.pattern
    }

    /// Nonzeros in the strict lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.pattern.n]
    }

    /// Up-looking numeric factorization; `values` align with the pattern. Requires positive pivots.
    pub fn factor(&self, values: &[f64]) -> Result<LdlFactor, SparseError> {
        let n = self.pattern.n;
        assert_eq!(values.len(), self.pattern.nnz());
        let ap = &self.pattern.col_ptr;
        let ai = &self.pattern.row_idx;
        let total = self.factor_nnz();
        let mut l_idx = vec![0usize; total];
        let mut l_val = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut path = vec![0usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in ap[k]..ap[k + 1] {
                let mut i = ai[p];
                y[i] += values[p];
                let mut len = 0;
                while flag[i] != k {
                    path[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &stack[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p0 = self.l_ptr[i];
                let p2 = p0 + lnz[i];
                for p in p0..p2 {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let lki = yi / d[i];
                dk -= lki * yi;
                l_idx[p2] = k;
                l_val[p2] = lki;
                lnz[i] += 1;
            }
            if dk == 0.0 {
                return Err(SparseError::ZeroPivot(k));
            }
            if !(dk > 0.0) {
                return Err(SparseError::NotPositive { column: k, value: dk });
            }
            d[k] = dk;
        }
        Ok(LdlFactor { l_ptr: self.l_ptr.clone(), l_idx, l_val, d })
    }
}

impl LdlFactor {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.d.len();
        assert_eq!(x.len(), n);
        for j in 0..n {
            let xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                x[self.l_idx[p]] -= self.l_val[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                s -= self.l_val[p] * x[self.l_idx[p]];
            }
            x[j] = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(nx: usize, ny: usize) -> (Vec<Point2>, Vec<Vec<usize>>) {
        let id = |i: usize, j: usize| j * nx + i;
        let mut coords = Vec::new();
        let mut adj = vec![Vec::new(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                coords.push(Point2::new(i as f64, j as f64));
                if i + 1 < nx {
                    adj[id(i, j)].push(id(i + 1, j));
                    adj[id(i + 1, j)].push(id(i, j));
                }
                if j + 1 < ny {
                    adj[id(i, j)].push(id(i, j + 1));
                    adj[id(i, j + 1)].push(id(i, j));
                }
            }
        }
        (coords, adj)
    }

    /// Shifted graph Laplacian in the given ordering.
    fn laplacian(adj: &[Vec<usize>], order: &[usize]) -> (UpperPattern, Vec<f64>) {
        let mut inv = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut pairs = Vec::new();
        for (v, nb) in adj.iter().enumerate() {
            pairs.push((inv[v], inv[v]));
            for &u in nb {
                pairs.push((inv[v], inv[u]));
            }
        }
        let pat = UpperPattern::from_pairs(order.len(), pairs);
        let mut vals = vec![0.0; pat.nnz()];
        for (v, nb) in adj.iter().enumerate() {
            vals[pat.position(inv[v], inv[v]).unwrap()] = nb.len() as f64 + 0.1;
            for &u in nb {
                if inv[v] < inv[u] {
                    vals[pat.position(inv[v], inv[u]).unwrap()] = -1.0;
                }
            }
        }
        (pat, vals)
    }

    #[test]
    fn nested_dissection_is_permutation() {
        let (coords, adj) = grid(37, 23);
        let mut order = nested_dissection(&coords, &adj);
        order.sort_unstable();
        assert_eq!(order, (0..37 * 23).collect::<Vec<_>>());
    }

    #[test]
    fn nested_dissection_reduces_fill() {
        let (coords, adj) = grid(60, 60);
        let natural: Vec<usize> = (0..3600).collect();
        let nd = nested_dissection(&coords, &adj);
        let f_nat = LdlSymbolic::new(laplacian(&adj, &natural).0).factor_nnz();
        let f_nd = LdlSymbolic::new(laplacian(&adj, &nd).0).factor_nnz();
        assert!(f_nd * 2 < f_nat, "nd {f_nd} natural {f_nat}");
    }

    #[test]
    fn solves_grid_laplacian() {
        let (coords, adj) = grid(30, 20);
        let order = nested_dissection(&coords, &adj);
        let (pat, vals) = laplacian(&adj, &order);
        let ldl = LdlSymbolic::new(pat.clone()).factor(&vals).unwrap();
        let want: Vec<f64> = (0..600).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut x = pat.sym_mul(&vals, &want);
        ldl.solve_in_place(&mut x);
        for (a, b) in x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn random_spd_against_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(1..25);
            // A = Bᵀ B + I with sparse B
            let mut dense = vec![vec![0.0; n]; n];
            let b: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| if rng.random_bool(0.2) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    dense[i][j] = (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
                }
            }
            let pairs = (0..n).flat_map(|j| (0..=j).map(move |i| (i, j)));
            let pairs: Vec<_> = pairs.filter(|&(i, j)| i == j || dense[i][j] != 0.0).collect();
            let pat = UpperPattern::from_pairs(n, pairs);
            let vals: Vec<f64> = (0..n)
                .flat_map(|c| (pat.col_ptr[c]..pat.col_ptr[c + 1]).map(move |p| (p, c)))
                .map(|(p, c)| dense[pat.row_idx[p]][c])
                .collect();
            let ldl = LdlSymbolic::new(pat).factor(&vals).unwrap();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut x = rhs.clone();
            ldl.solve_in_place(&mut x);
            for i in 0..n {
                let r: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
                assert!((r - rhs[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_and_indefinite_detected() {
        let pat = UpperPattern::from_pairs(2, [(0, 0), (0, 1), (1, 1)]);
        let ldl = LdlSymbolic::new(pat);
        assert_eq!(ldl.factor(&[1.0, 1.0, 1.0]).unwrap_err(), SparseError::ZeroPivot(1));
        assert!(matches!(ldl.factor(&[1.0, 2.0, 1.0]), Err(SparseError::NotPositive { column: 1, .. })));
        ldl.factor(&[2.0, 1.0, 1.0]).unwrap();
    }
}
