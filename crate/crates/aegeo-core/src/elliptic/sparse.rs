//! Compressed sparse rows and conjugate gradients for the elliptic solvers.

use rayon::prelude::*;

use crate::error::{AeError, Result};

/// Symmetric sparse matrix in CSR form.
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Triplet accumulator; duplicate entries are summed on build.
pub struct Triplets {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn build(mut self) -> Csr {
        self.entries
            .sort_unstable_by_key(|e| ((e.0 as u64) << 32) | e.1 as u64);
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for &(i, j, v) in &self.entries {
            if let (Some(&last_col), true) = (cols.last(), row_ptr[i as usize + 1] > 0) {
                if last_col == j as usize && cols.len() > row_ptr[i as usize] {
                    // same row, same col: accumulate
                    let l = vals.len() - 1;
                    vals[l] += v;
                    continue;
                }
            }
            cols.push(j as usize);
            vals.push(v);
            row_ptr[i as usize + 1] = cols.len();
        }
        // rows with no entries inherit the previous pointer
        for i in 1..=self.n {
            if row_ptr[i] == 0 {
                row_ptr[i] = row_ptr[i - 1];
            } else if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        Csr {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl Csr {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    d[i] += self.vals[k];
                }
            }
        }
        d
    }

    /// Symmetry defect max |A_ij - A_ji| (diagnostics).
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                let mut aji = 0.0;
                for l in self.row_ptr[j]..self.row_ptr[j + 1] {
                    if self.cols[l] == i {
                        aji = self.vals[l];
                        break;
                    }
                }
                worst = worst.max((self.vals[k] - aji).abs());
            }
        }
        worst
    }
}

/// Jacobi-preconditioned conjugate gradients restricted to the rows where
/// `free[i]` holds; constrained entries of `x` are kept fixed.
pub fn cg_solve(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    free: &[bool],
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let n = a.n;
    let diag = a.diagonal();
    let precond: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 })
        .collect();

    let mut ax = vec![0.0; n];
    a.apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n)
        .map(|i| if free[i] { b[i] - ax[i] } else { 0.0 })
        .collect();
    // reference scale: rhs norm, or the initial residual when the rhs is
    // zero and the problem is driven by a Dirichlet lift
    let b_norm = b
        .iter()
        .zip(free)
        .filter(|(_, &f)| f)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt()
        .max(r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, pi)| ri * pi).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res <= tol * b_norm || res <= 1e-300 {
            return Ok((it, res / b_norm));
        }
        a.apply(&p, &mut ap);
        for i in 0..n {
            if !free[i] {
                ap[i] = 0.0;
            }
        }
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(AeError::SolverFailure {
                iterations: it,
                residual: res / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            if free[i] {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
    Err(AeError::SolverFailure {
        iterations: max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_a_small_spd_system() {
        // 1D Dirichlet Laplacian, n = 20
        let n = 20;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        let a = t.build();
        assert!(a.asymmetry() < 1e-15);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let free = vec![true; n];
        let (_, res) = cg_solve(&a, &b, &mut x, &free, 1e-12, 1000).unwrap();
        assert!(res < 1e-10);
        let mut ax = vec![0.0; n];
        a.apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn triplets_accumulate_duplicates() {
        let mut t = Triplets::new(2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, 0.5);
        t.push(1, 1, 1.0);
        let a = t.build();
        let d = a.diagonal();
        assert_eq!(d[0], 3.0);
        assert_eq!(d[1], 1.0);
    }
}
