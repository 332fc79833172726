//! Sparse symmetric linear algebra: CSR matrices, conjugate gradients with
//! optional deflation, inverse-iteration eigensolvers, and the action of a
//! matrix exponential on a vector.
//!
//! All reversible-chain computations in this crate are routed through the
//! similarity-transformed (symmetric) generator, so symmetric kernels are the
//! only ones needed.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Compressed sparse row matrix. Only square matrices are used.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Build from unsorted triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(u32, u32, f64)>) -> Csr {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; n];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_counts[r as usize] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + row_counts[i];
        }
        Csr {
            n,
            row_ptr,
            col,
            val,
        }
    }

    #[inline]
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        if self.n > 20_000 {
            y.par_iter_mut().enumerate().for_each(|(r, yi)| {
                let mut s = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.val[k] * x[self.col[k] as usize];
                }
                *yi = s;
            });
        } else {
            for r in 0..self.n {
                let mut s = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.val[k] * x[self.col[k] as usize];
                }
                y[r] = s;
            }
        }
    }

    /// Largest absolute row sum; cheap upper bound on the spectral radius of
    /// a symmetric matrix.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                self.val[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum()
            })
            .fold(0.0f64, f64::max)
    }

    pub fn max_symmetry_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[k] as usize;
                if c < r {
                    continue;
                }
                let mut other = 0.0;
                for k2 in self.row_ptr[c]..self.row_ptr[c + 1] {
                    if self.col[k2] as usize == r {
                        other = self.val[k2];
                    }
                }
                worst = worst.max((self.val[k] - other).abs());
            }
        }
        worst
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() > 40_000 {
        a.par_chunks(8192)
            .zip(b.par_chunks(8192))
            .map(|(xa, xb)| xa.iter().zip(xb).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Remove the components of `x` along each (orthonormal) vector in `basis`.
pub fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(x, b);
        axpy(-c, b, x);
    }
}

pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioner-free conjugate gradients for a symmetric positive
/// semi-definite operator. When `deflate` is non-empty the solve is carried
/// out on the orthogonal complement of those (orthonormal) vectors, which
/// must span the kernel for the projected system to be definite.
pub fn cg(
    a: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    deflate: &[Vec<f64>],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut r = vec![0.0; n];
    a(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    project_out(&mut r, deflate);
    let b_norm = {
        let mut bp = b.to_vec();
        project_out(&mut bp, deflate);
        norm2(&bp).max(1e-300)
    };
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while rr.sqrt() > rel_tol * b_norm && it < max_iter {
        a(&p, &mut ap);
        project_out(&mut ap, deflate);
        let alpha = rr / dot(&p, &ap);
        if !alpha.is_finite() {
            break;
        }
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
        // periodic true-residual refresh guards against drift in long solves
        if it % 256 == 0 {
            a(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            project_out(&mut r, deflate);
            rr = dot(&r, &r);
            p.copy_from_slice(&r);
        }
    }
    let residual = rr.sqrt() / b_norm;
    if residual > rel_tol {
        return Err(Error::SolverNoConvergence {
            residual,
            iterations: it,
        });
    }
    Ok(CgOutcome {
        iterations: it,
        residual,
    })
}

pub struct EigPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// Smallest eigenpairs of a symmetric positive semi-definite operator by
/// block inverse orthogonal iteration with a Rayleigh-Ritz step. `deflate`
/// holds known eigenvectors (e.g. an exact kernel) to be excluded.
///
/// Returns `want` pairs sorted by eigenvalue.
pub fn smallest_eigpairs(
    a: &dyn Fn(&[f64], &mut [f64]),
    n: usize,
    want: usize,
    deflate: &[Vec<f64>],
    rel_tol: f64,
    max_outer: usize,
) -> Result<Vec<EigPair>> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let block = want + 2;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    let mut values = vec![f64::INFINITY; want];
    let mut result: Option<Vec<EigPair>> = None;

    for _outer in 0..max_outer {
        // orthonormalize the block against deflation space and itself
        for i in 0..block {
            let (head, tail) = basis.split_at_mut(i);
            let v = &mut tail[0];
            project_out(v, deflate);
            for b in head.iter() {
                let c = dot(v, b);
                axpy(-c, b, v);
            }
            let nv = norm2(v);
            if nv < 1e-200 {
                for x in v.iter_mut() {
                    *x = rng.gen::<f64>() - 0.5;
                }
            } else {
                v.iter_mut().for_each(|x| *x /= nv);
            }
        }
        // invert: w_i = A^{-1} v_i
        let mut new_basis = Vec::with_capacity(block);
        for v in &basis {
            let mut x = v.clone();
            // warm start at the previous direction
            cg(a, v, &mut x, deflate, 1e-12, 50_000)?;
            new_basis.push(x);
        }
        basis = new_basis;
        // Rayleigh-Ritz on span(basis)
        // orthonormalize first
        for i in 0..block {
            let (head, tail) = basis.split_at_mut(i);
            let v = &mut tail[0];
            project_out(v, deflate);
            for b in head.iter() {
                let c = dot(v, b);
                axpy(-c, b, v);
            }
            let nv = norm2(v);
            if nv < 1e-200 {
                for x in v.iter_mut() {
                    *x = rng.gen::<f64>() - 0.5;
                }
                let nv2 = norm2(v);
                v.iter_mut().for_each(|x| *x /= nv2);
            } else {
                v.iter_mut().for_each(|x| *x /= nv);
            }
        }
        let mut av: Vec<Vec<f64>> = Vec::with_capacity(block);
        for v in &basis {
            let mut w = vec![0.0; n];
            a(v, &mut w);
            av.push(w);
        }
        let mut small = nalgebra::DMatrix::<f64>::zeros(block, block);
        for i in 0..block {
            for j in 0..block {
                small[(i, j)] = dot(&basis[i], &av[j]);
            }
        }
        small = (small.clone() + small.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

        let mut ritz: Vec<Vec<f64>> = Vec::with_capacity(block);
        for &k in &order {
            let mut v = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                axpy(eig.eigenvectors[(i, k)], b, &mut v);
            }
            ritz.push(v);
        }
        basis = ritz;
        let new_values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();

        let converged = (0..want).all(|i| {
            let rel = (new_values[i] - values[i]).abs() / new_values[i].abs().max(1e-300);
            rel < rel_tol
        });
        values[..want].copy_from_slice(&new_values[..want]);
        if converged {
            let mut pairs = Vec::with_capacity(want);
            for i in 0..want {
                let v = &basis[i];
                let mut w = vec![0.0; n];
                a(v, &mut w);
                let nv = norm2(v);
                let theta = dot(v, &w) / (nv * nv);
                let mut resid = 0.0f64;
                for j in 0..n {
                    resid += (w[j] - theta * v[j]) * (w[j] - theta * v[j]);
                }
                let resid = resid.sqrt() / nv;
                let mut vec = v.clone();
                vec.iter_mut().for_each(|x| *x /= nv);
                pairs.push(EigPair {
                    value: theta,
                    vector: vec,
                    residual: resid,
                });
            }
            result = Some(pairs);
            break;
        }
    }
    result.ok_or(Error::EigensolverFailure {
        residual: f64::NAN,
        iterations: max_outer,
    })
}

/// `y = exp(t A) x` for a (possibly non-symmetric) sparse operator, by
/// scaling and a truncated Taylor series on each segment. `norm_bound` must
/// dominate the spectral radius of `A`.
pub fn expm_action(a: &Csr, t: f64, x: &[f64], norm_bound: f64) -> Vec<f64> {
    let n = x.len();
    if t == 0.0 {
        return x.to_vec();
    }
    let segments = ((t * norm_bound / 0.5).ceil() as usize).max(1);
    let dt = t / segments as f64;
    let mut v = x.to_vec();
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..segments {
        // v <- sum_k (dt A)^k v / k!
        term.copy_from_slice(&v);
        let mut k = 1.0;
        loop {
            a.mul(&term, &mut next);
            let scale = dt / k;
            let mut term_norm = 0.0f64;
            for i in 0..n {
                term[i] = next[i] * scale;
                v[i] += term[i];
                term_norm = term_norm.max(term[i].abs());
            }
            let v_norm = v.iter().fold(0.0f64, |m, &z| m.max(z.abs()));
            if term_norm <= 1e-16 * v_norm.max(1e-300) || k > 60.0 {
                break;
            }
            k += 1.0;
        }
    }
    v
}

/// Dense symmetric eigendecomposition (small instances only); returns
/// eigenvalues ascending with the matching eigenvectors as columns.
pub fn dense_sym_eig(csr: &Csr) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let n = csr.n;
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        for k in csr.row_ptr[r]..csr.row_ptr[r + 1] {
            m[(r, csr.col[k] as usize)] = csr.val[k];
        }
    }
    m = (m.clone() + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (new_k, &k) in order.iter().enumerate() {
        vectors.set_column(new_k, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_path(n: usize) -> Csr {
        // -L of the continuous-time walk on a path with unit rates
        let mut t = Vec::new();
        for i in 0..n {
            let mut deg = 0.0;
            if i > 0 {
                t.push((i as u32, (i - 1) as u32, -1.0));
                deg += 1.0;
            }
            if i + 1 < n {
                t.push((i as u32, (i + 1) as u32, -1.0));
                deg += 1.0;
            }
            t.push((i as u32, i as u32, deg));
        }
        Csr::from_triplets(n, &mut t)
    }

    #[test]
    fn cg_solves_poisson_on_path() {
        let n = 50;
        let a = laplacian_path(n);
        // pin one end to make it definite: solve on interior of [0, n+1]
        let apply = |x: &[f64], y: &mut [f64]| {
            a.mul(x, y);
            // add absorption at both endpoints
            y[0] += x[0];
            y[n - 1] += x[n - 1];
        };
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        cg(&apply, &b, &mut x, &[], 1e-12, 10_000).unwrap();
        // exact solution of (-Delta) m = 1 with absorbing ends: m(i) quadratic
        // m_i = (i+1)(n-i)/2 for unit-rate chain on n sites with kill at -1, n
        for i in 0..n {
            let exact = 0.5 * ((i + 1) as f64) * ((n - i) as f64);
            assert!(
                (x[i] - exact).abs() < 1e-8 * exact,
                "i={} got {} want {}",
                i,
                x[i],
                exact
            );
        }
    }

    #[test]
    fn smallest_eigpairs_match_dense() {
        let n = 60;
        let a = laplacian_path(n);
        let (dense_vals, _) = dense_sym_eig(&a);
        let kernel: Vec<f64> = vec![1.0 / (n as f64).sqrt(); n];
        let apply = |x: &[f64], y: &mut [f64]| a.mul(x, y);
        let pairs = smallest_eigpairs(&apply, n, 2, &[kernel], 1e-12, 60).unwrap();
        // dense_vals[0] ~ 0 (kernel), compare the next two
        assert!((pairs[0].value - dense_vals[1]).abs() < 1e-9);
        assert!((pairs[1].value - dense_vals[2]).abs() < 1e-9);
    }

    #[test]
    fn expm_action_matches_dense_exponential() {
        let n = 30;
        let a = laplacian_path(n);
        // generator L = -A
        let mut t = Vec::new();
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                t.push((r as u32, a.col[k], -a.val[k]));
            }
        }
        let l = Csr::from_triplets(n, &mut t);
        let mut x = vec![0.0; n];
        x[n / 2] = 1.0;
        let v = expm_action(&l, 0.7, &x, l.inf_norm());
        // compare against dense exponential via eigen decomposition of A
        let (vals, vecs) = dense_sym_eig(&a);
        let mut want = vec![0.0; n];
        for k in 0..n {
            let phi = vecs.column(k);
            let c = phi[n / 2];
            for i in 0..n {
                want[i] += (-0.7 * vals[k]).exp() * c * phi[i];
            }
        }
        for i in 0..n {
            assert!((v[i] - want[i]).abs() < 1e-10);
        }
        // probability is conserved
        let total: f64 = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
