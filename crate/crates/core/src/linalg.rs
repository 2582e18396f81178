//! Small sparse linear algebra: CSR storage, a banded direct solver for
//! 1D problems and Jacobi-preconditioned conjugate gradients for 2D.

use crate::error::SolverError;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates (row, col, value) entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .find(|(c, _)| *c == j)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, v)| (v - self.get(j, i)).abs() <= tol * v.abs().max(1.0))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Diagonal ≥ 0, off-diagonals ≤ 0 and weak diagonal dominance by rows.
    pub fn is_m_matrix_structure(&self) -> bool {
        (0..self.n).all(|i| {
            let mut diag = 0.0;
            let mut off = 0.0;
            for (j, v) in self.row(i) {
                if j == i {
                    diag = v;
                } else if v > 0.0 {
                    return false;
                } else {
                    off -= v;
                }
            }
            diag > 0.0 && diag >= off * (1.0 - 1e-14)
        })
    }
}

/// Gaussian elimination without pivoting in band storage. Intended for
/// symmetric positive definite or diagonally dominant matrices.
pub fn solve_banded(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolverError::Linear(format!(
            "rhs length {} != {}",
            b.len(),
            n
        )));
    }
    let k = a.bandwidth();
    let w = 2 * k + 1;
    let at = |r: usize, c: usize| r * w + (c + k - r);
    let mut band = vec![0.0; n * w];
    for i in 0..n {
        for (j, v) in a.row(i) {
            band[at(i, j)] = v;
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        let pivot = band[at(i, i)];
        if !(pivot.abs() > 0.0) || !pivot.is_finite() {
            return Err(SolverError::Linear(format!("zero pivot at row {i}")));
        }
        let hi = (i + k + 1).min(n);
        for r in i + 1..hi {
            let l = band[at(r, i)] / pivot;
            if l == 0.0 {
                continue;
            }
            band[at(r, i)] = 0.0;
            for c in i + 1..hi {
                band[at(r, c)] -= l * band[at(i, c)];
            }
            x[r] -= l * x[i];
        }
    }
    for i in (0..n).rev() {
        let hi = (i + k + 1).min(n);
        let mut s = x[i];
        for c in i + 1..hi {
            s -= band[at(i, c)] * x[c];
        }
        x[i] = s / band[at(i, i)];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Linear("non-finite solution".into()));
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients; stops when ‖r‖₂ ≤ rel_tol·‖b‖₂.
pub fn solve_pcg(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.dim();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return Ok((x, it));
        }
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::Linear(format!(
                "matrix not positive definite (pAp = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if dot(&r, &r).sqrt() <= rel_tol * bnorm {
        return Ok((x, max_iter));
    }
    Err(SolverError::Linear(format!(
        "CG did not reach relative residual {rel_tol:e} in {max_iter} iterations"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearStrategy {
    Banded,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolver {
    pub strategy: LinearStrategy,
    pub rel_tol: f64,
}

impl LinearSolver {
    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        match self.strategy {
            LinearStrategy::Banded => solve_banded(a, b),
            LinearStrategy::ConjugateGradient => {
                let max_iter = 20 * a.dim() + 100;
                solve_pcg(a, b, None, self.rel_tol, max_iter).map(|(x, _)| x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize, shift: f64) -> SparseMatrix {
        let mut t = TripletBuilder::new(n);
        for i in 0..n {
            t.add(i, i, shift);
            if i + 1 < n {
                t.add(i, i, 1.0);
                t.add(i + 1, i + 1, 1.0);
                t.add(i, i + 1, -1.0);
                t.add(i + 1, i, -1.0);
            }
        }
        t.build()
    }

    #[test]
    fn builder_sums_duplicates() {
        let mut t = TripletBuilder::new(2);
        t.add(0, 0, 1.0);
        t.add(0, 0, 2.0);
        t.add(1, 0, -1.0);
        let m = t.build();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.bandwidth(), 1);
    }

    #[test]
    fn banded_and_cg_agree() {
        let a = laplacian(50, 0.01);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let x1 = solve_banded(&a, &b).unwrap();
        let (x2, _) = solve_pcg(&a, &b, None, 1e-13, 10_000).unwrap();
        let r = a.mul_vec(&x1);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-10);
            assert!((x1[i] - x2[i]).abs() < 1e-7 * (1.0 + x1[i].abs()));
        }
        assert!(a.is_symmetric(0.0));
        assert!(a.is_m_matrix_structure());
    }

    #[test]
    fn zero_pivot_reported() {
        let t = TripletBuilder::new(2);
        assert!(solve_banded(&t.build(), &[1.0, 1.0]).is_err());
    }
}
