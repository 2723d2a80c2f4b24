//! Sparse symmetric positive-definite solves.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` entries. Entries within a row
    /// need not be sorted; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .find(|(c, _)| *c == i)
                    .map_or(0.0, |(_, v)| v)
            })
            .collect()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Stop once the 2-norm of `b - A x` falls to this value.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 * n`.
    pub max_iterations: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tolerance: 1e-8,
            max_iterations: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient for SPD `a`, starting from `x0`
/// (zeros when `None`).
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: CgOptions,
) -> Result<CgSolution> {
    let n = a.dim();
    assert_eq!(b.len(), n, "right-hand side length");
    let cap = opts.max_iterations.unwrap_or(10 * n.max(1));

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut residual = dot(&r, &r).sqrt();
    if residual <= opts.tolerance {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=cap {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                residual,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt();
        if residual <= opts.tolerance {
            return Ok(CgSolution {
                x,
                iterations: it,
                residual,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual,
    })
}
