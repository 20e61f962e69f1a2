//! Shared numerical kernels: complex tridiagonal factorizations, power
//! iterations, orthonormalization, and thin wrappers over the dense LAPACK
//! eigensolver. Everything here is generic infrastructure used by the
//! assembly, spectral, and dichotomy layers.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex64 as C;

pub const ONE: C = C::new(1.0, 0.0);
pub const ZERO: C = C::new(0.0, 0.0);

#[inline]
pub fn cr(x: f64) -> C {
    C::new(x, 0.0)
}

#[inline]
pub fn ci(x: f64) -> C {
    C::new(0.0, x)
}

/// Complex tridiagonal matrix in banded storage.
///
/// `sub[i]` is the entry at row `i+1`, column `i`; `sup[i]` at row `i`,
/// column `i+1`. All rows/columns refer to the same `n`.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub diag: Vec<C>,
    pub sub: Vec<C>,
    pub sup: Vec<C>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag {
            diag: vec![ZERO; n],
            sub: vec![ZERO; n.saturating_sub(1)],
            sup: vec![ZERO; n.saturating_sub(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// y = A x
    pub fn matvec(&self, x: &[C]) -> Vec<C> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut y = vec![ZERO; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// A† (conjugate transpose).
    pub fn adjoint(&self) -> Tridiag {
        Tridiag {
            diag: self.diag.iter().map(|z| z.conj()).collect(),
            sub: self.sup.iter().map(|z| z.conj()).collect(),
            sup: self.sub.iter().map(|z| z.conj()).collect(),
        }
    }

    /// A + c·B, elementwise over the three bands.
    pub fn add_scaled(&self, c: C, other: &Tridiag) -> Tridiag {
        assert_eq!(self.n(), other.n());
        let comb = |a: &[C], b: &[C]| -> Vec<C> {
            a.iter().zip(b).map(|(&x, &y)| x + c * y).collect()
        };
        Tridiag {
            diag: comb(&self.diag, &other.diag),
            sub: comb(&self.sub, &other.sub),
            sup: comb(&self.sup, &other.sup),
        }
    }

    /// Add c to the diagonal entry at `i`.
    pub fn add_diag(&mut self, i: usize, c: C) {
        self.diag[i] += c;
    }

    pub fn scale(&self, c: C) -> Tridiag {
        Tridiag {
            diag: self.diag.iter().map(|&z| c * z).collect(),
            sub: self.sub.iter().map(|&z| c * z).collect(),
            sup: self.sup.iter().map(|&z| c * z).collect(),
        }
    }

    pub fn to_dense(&self) -> Array2<C> {
        let n = self.n();
        let mut a = Array2::from_elem((n, n), ZERO);
        for i in 0..n {
            a[[i, i]] = self.diag[i];
            if i + 1 < n {
                a[[i, i + 1]] = self.sup[i];
                a[[i + 1, i]] = self.sub[i];
            }
        }
        a
    }

    /// Max row sum (operator ∞-norm), a cheap scale proxy.
    pub fn norm_inf(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i].norm();
                if i > 0 {
                    s += self.sub[i - 1].norm();
                }
                if i + 1 < n {
                    s += self.sup[i].norm();
                }
                s
            })
            .fold(0.0, f64::max)
    }

    /// ‖A − A†‖_∞, the Hermiticity defect.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut row = (self.diag[i] - self.diag[i].conj()).norm();
            if i > 0 {
                row += (self.sub[i - 1] - self.sup[i - 1].conj()).norm();
            }
            if i + 1 < n {
                row += (self.sup[i] - self.sub[i].conj()).norm();
            }
            worst = worst.max(row);
        }
        worst
    }
}

/// LU factorization of a tridiagonal matrix with partial pivoting
/// (the classic gttrf layout: one fill-in superdiagonal).
#[derive(Debug, Clone)]
pub struct TridiagLu {
    d: Vec<C>,
    du: Vec<C>,
    du2: Vec<C>,
    dl: Vec<C>,
    swapped: Vec<bool>,
    /// Smallest pivot magnitude divided by the matrix scale.
    pub rcond_proxy: f64,
}

impl TridiagLu {
    pub fn factor(a: &Tridiag) -> Result<TridiagLu> {
        let n = a.n();
        if n == 0 {
            return Err(Error::Numeric("empty tridiagonal system".into()));
        }
        let mut d = a.diag.clone();
        let mut du = a.sup.clone();
        let mut dl = a.sub.clone();
        let mut du2 = vec![ZERO; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() > 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] = d[i + 1] - fact * du[i];
                }
                if i + 2 < n {
                    du2[i] = ZERO;
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        let scale = a.norm_inf().max(f64::MIN_POSITIVE);
        let min_pivot = d.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        Ok(TridiagLu {
            d,
            du,
            du2,
            dl,
            swapped,
            rcond_proxy: min_pivot / scale,
        })
    }

    pub fn is_near_singular(&self) -> bool {
        self.rcond_proxy < 1e-12
    }

    pub fn solve(&self, rhs: &[C]) -> Vec<C> {
        let n = self.d.len();
        assert_eq!(rhs.len(), n);
        let mut b = rhs.to_vec();
        for i in 0..n.saturating_sub(1) {
            if !self.swapped[i] {
                let t = self.dl[i] * b[i];
                b[i + 1] -= t;
            } else {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            }
        }
        b[n - 1] = b[n - 1] / self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
        b
    }
}

/// Solver bundle carrying factorizations of A and A†, for normal-equation
/// iterations (σ_min estimates, weighted operator norms).
pub struct TridiagSolver {
    pub lu: TridiagLu,
    pub lu_adj: TridiagLu,
}

impl TridiagSolver {
    pub fn new(a: &Tridiag) -> Result<TridiagSolver> {
        Ok(TridiagSolver {
            lu: TridiagLu::factor(a)?,
            lu_adj: TridiagLu::factor(&a.adjoint())?,
        })
    }

    /// Estimate the smallest singular value of A by inverse power iteration
    /// on (A†A)⁻¹: z ← A⁻¹ A⁻† z.
    pub fn sigma_min(&self, iters: usize) -> f64 {
        let n = self.lu.d.len();
        let mut z: Vec<C> = (0..n)
            .map(|i| cr(1.0 + 0.37 * ((i * 2654435761usize % 97) as f64) / 97.0))
            .collect();
        normalize(&mut z);
        let mut lam = 0.0f64;
        for _ in 0..iters {
            let y = self.lu_adj.solve(&z);
            let w = self.lu.solve(&y);
            let new_lam = norm2(&w);
            if new_lam == 0.0 || !new_lam.is_finite() {
                return 0.0;
            }
            z = w;
            normalize(&mut z);
            if (new_lam - lam).abs() <= 1e-12 * new_lam {
                lam = new_lam;
                break;
            }
            lam = new_lam;
        }
        if lam > 0.0 {
            1.0 / lam.sqrt()
        } else {
            0.0
        }
    }
}

/// Lower-bidiagonal Cholesky factor of a real symmetric positive definite
/// tridiagonal matrix: A = L·Lᵀ with L lower bidiagonal.
#[derive(Debug, Clone)]
pub struct BidiagChol {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl BidiagChol {
    pub fn factor(diag: &[f64], sub: &[f64]) -> Result<BidiagChol> {
        let n = diag.len();
        assert_eq!(sub.len(), n.saturating_sub(1));
        let mut ld = vec![0.0f64; n];
        let mut ls = vec![0.0f64; n.saturating_sub(1)];
        let mut prev = 0.0f64;
        for i in 0..n {
            let v = diag[i] - prev * prev;
            if v <= 0.0 {
                return Err(Error::Numeric(format!(
                    "matrix not positive definite at row {i} (pivot {v:.3e})"
                )));
            }
            ld[i] = v.sqrt();
            if i + 1 < n {
                ls[i] = sub[i] / ld[i];
                prev = ls[i];
            }
        }
        Ok(BidiagChol { diag: ld, sub: ls })
    }

    /// y = L x
    pub fn mul(&self, x: &[C]) -> Vec<C> {
        let n = self.diag.len();
        let mut y = vec![ZERO; n];
        for i in 0..n {
            y[i] = cr(self.diag[i]) * x[i];
            if i > 0 {
                y[i] += cr(self.sub[i - 1]) * x[i - 1];
            }
        }
        y
    }

    /// y = Lᵀ x
    pub fn mul_t(&self, x: &[C]) -> Vec<C> {
        let n = self.diag.len();
        let mut y = vec![ZERO; n];
        for i in 0..n {
            y[i] = cr(self.diag[i]) * x[i];
            if i + 1 < n {
                y[i] += cr(self.sub[i]) * x[i + 1];
            }
        }
        y
    }
}

pub fn norm2(x: &[C]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(x: &mut [C]) {
    let n = norm2(x);
    if n > 0.0 {
        for z in x.iter_mut() {
            *z /= n;
        }
    }
}

pub fn dot(x: &[C], y: &[C]) -> C {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Operator 2-norm of a linear map given by `apply` and its adjoint, via
/// power iteration on T†T. Deterministic start vector; `dim` is the domain
/// dimension.
pub fn power_norm2(
    dim: usize,
    iters: usize,
    apply: impl Fn(&[C]) -> Vec<C>,
    apply_adj: impl Fn(&[C]) -> Vec<C>,
) -> f64 {
    let mut z: Vec<C> = (0..dim)
        .map(|i| cr(1.0 + 0.29 * ((i * 1099087573usize % 101) as f64) / 101.0))
        .collect();
    normalize(&mut z);
    let mut lam = 0.0f64;
    for _ in 0..iters {
        let y = apply(&z);
        let w = apply_adj(&y);
        let new_lam = norm2(&w);
        if new_lam == 0.0 || !new_lam.is_finite() {
            return new_lam.max(0.0).sqrt();
        }
        z = w;
        normalize(&mut z);
        if (new_lam - lam).abs() <= 1e-12 * new_lam {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    lam.sqrt()
}

/// Dense operator 2-norm via power iteration.
pub fn op_norm2(a: &Array2<C>) -> f64 {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let at = a.t().mapv(|z| z.conj());
    power_norm2(
        n,
        120,
        |x| {
            let xv = Array1::from_vec(x.to_vec());
            a.dot(&xv).to_vec()
        },
        |y| {
            let yv = Array1::from_vec(y.to_vec());
            at.dot(&yv).to_vec()
        },
    )
}

pub fn fro_norm(a: &Array2<C>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Returns an
/// orthonormal basis of the column span; columns with residual norm below
/// `rank_tol` times the original scale are dropped.
pub fn orthonormal_columns(a: &Array2<C>, rank_tol: f64) -> Array2<C> {
    let (m, n) = a.dim();
    let scale = fro_norm(a).max(f64::MIN_POSITIVE);
    let mut basis: Vec<Array1<C>> = Vec::new();
    for j in 0..n {
        let mut v = a.column(j).to_owned();
        for _pass in 0..2 {
            for q in &basis {
                let c: C = q.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                v = v - q.mapv(|z| z * c);
            }
        }
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nv > rank_tol * scale {
            basis.push(v.mapv(|z| z / nv));
        }
    }
    let k = basis.len();
    let mut q = Array2::from_elem((m, k), ZERO);
    for (j, col) in basis.iter().enumerate() {
        q.column_mut(j).assign(col);
    }
    q
}

/// ‖U U† − W W†‖₂ for orthonormal bases U, W: the gap between the two
/// subspaces (equals the sine of the largest principal angle when the
/// dimensions agree).
pub fn subspace_distance(u: &Array2<C>, w: &Array2<C>) -> f64 {
    let uh = u.t().mapv(|z| z.conj());
    let wh = w.t().mapv(|z| z.conj());
    let pu = u.dot(&uh);
    let pw = w.dot(&wh);
    op_norm2(&(&pu - &pw))
}

/// Dense complex eigendecomposition (LAPACK zgeev), eigenvalues sorted by
/// (Re, Im) with eigenvector columns permuted to match.
pub fn eig_dense(a: &Array2<C>) -> Result<(Array1<C>, Array2<C>)> {
    let (vals, vecs) = a
        .eig()
        .map_err(|e| Error::Numeric(format!("dense eigensolve failed: {e}")))?;
    let n = vals.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        (vals[i].re, vals[i].im)
            .partial_cmp(&(vals[j].re, vals[j].im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted_vals = Array1::from_iter(idx.iter().map(|&i| vals[i]));
    let mut sorted_vecs = Array2::from_elem((n, n), ZERO);
    for (jnew, &jold) in idx.iter().enumerate() {
        sorted_vecs.column_mut(jnew).assign(&vecs.column(jold));
    }
    Ok((sorted_vals, sorted_vecs))
}

/// Dense inverse (LAPACK). Use sparingly; prefer factor-and-solve.
pub fn inv_dense(a: &Array2<C>) -> Result<Array2<C>> {
    a.inv()
        .map_err(|e| Error::Numeric(format!("dense inverse failed: {e}")))
}

/// Spectral projector onto the eigenvalues selected by `pick`, built from a
/// dense eigendecomposition: P = V diag(pick) V⁻¹.
pub fn spectral_projector(
    vals: &Array1<C>,
    vecs: &Array2<C>,
    pick: impl Fn(C) -> bool,
) -> Result<Array2<C>> {
    let n = vals.len();
    let vinv = inv_dense(vecs)?;
    let mut p = Array2::from_elem((n, n), ZERO);
    for j in 0..n {
        if pick(vals[j]) {
            let col = vecs.column(j);
            let row = vinv.row(j);
            for r in 0..n {
                for c in 0..n {
                    p[[r, c]] += col[r] * row[c];
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_linalg::SVD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tridiag(n: usize, rng: &mut ChaCha8Rng) -> Tridiag {
        let mut t = Tridiag::zeros(n);
        for i in 0..n {
            t.diag[i] = C::new(rng.gen_range(-1.0..1.0) + 3.0, rng.gen_range(-1.0..1.0));
            if i + 1 < n {
                t.sub[i] = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                t.sup[i] = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        t
    }

    #[test]
    fn tridiag_lu_matches_dense_lapack_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 17, 64] {
            let t = random_tridiag(n, &mut rng);
            let rhs: Vec<C> = (0..n)
                .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let lu = TridiagLu::factor(&t).unwrap();
            let x = lu.solve(&rhs);
            let resid = t
                .matvec(&x)
                .iter()
                .zip(&rhs)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-10 * norm2(&rhs).max(1.0), "n={n} resid={resid:e}");
        }
    }

    #[test]
    fn tridiag_lu_handles_pivoting() {
        // Zero diagonal forces row interchanges everywhere.
        let n = 12;
        let mut t = Tridiag::zeros(n);
        for i in 0..n {
            t.diag[i] = cr(1e-14);
            if i + 1 < n {
                t.sub[i] = cr(2.0);
                t.sup[i] = cr(1.0);
            }
        }
        let rhs = vec![ONE; n];
        let lu = TridiagLu::factor(&t).unwrap();
        let x = lu.solve(&rhs);
        let resid = t
            .matvec(&x)
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 1e-8, "resid={resid:e}");
    }

    #[test]
    fn sigma_min_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tridiag(40, &mut rng);
        let solver = TridiagSolver::new(&t).unwrap();
        let est = solver.sigma_min(200);
        let (_, s, _) = t.to_dense().svd(false, false).unwrap();
        let exact = s.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            (est - exact).abs() <= 1e-6 * exact,
            "est={est:e} exact={exact:e}"
        );
    }

    #[test]
    fn op_norm2_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 24;
        let a = Array2::from_shape_fn((n, n), |_| {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let est = op_norm2(&a);
        let (_, s, _) = a.svd(false, false).unwrap();
        let exact = s.iter().cloned().fold(0.0, f64::max);
        assert!(
            (est - exact).abs() <= 1e-8 * exact,
            "est={est} exact={exact}"
        );
    }

    #[test]
    fn cholesky_reconstructs_stiffness() {
        // Flat stiffness tridiag(-1, 2, -1)/h is SPD.
        let n = 50;
        let h = 0.1;
        let diag = vec![2.0 / h; n];
        let sub = vec![-1.0 / h; n - 1];
        let l = BidiagChol::factor(&diag, &sub).unwrap();
        // Check L Lᵀ x == A x on a few vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x: Vec<C> = (0..n).map(|_| cr(rng.gen_range(-1.0..1.0))).collect();
            let llt = l.mul(&l.mul_t(&x));
            let mut ax = vec![ZERO; n];
            for i in 0..n {
                ax[i] = cr(diag[i]) * x[i];
                if i > 0 {
                    ax[i] += cr(sub[i - 1]) * x[i - 1];
                }
                if i + 1 < n {
                    ax[i] += cr(sub[i]) * x[i + 1];
                }
            }
            let err: f64 = llt
                .iter()
                .zip(&ax)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-10 * norm2(&ax));
        }
    }

    #[test]
    fn gram_schmidt_produces_orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = Array2::from_shape_fn((30, 8), |_| {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let q = orthonormal_columns(&a, 1e-12);
        assert_eq!(q.dim(), (30, 8));
        let qh = q.t().mapv(|z| z.conj());
        let g = qh.dot(&q);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]].norm() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficient_columns_are_dropped() {
        let a = Array2::from_shape_fn((10, 3), |(i, j)| {
            // third column = sum of first two
            let c0 = cr((i as f64).sin());
            let c1 = cr((i as f64 * 0.7).cos());
            match j {
                0 => c0,
                1 => c1,
                _ => c0 + c1,
            }
        });
        let q = orthonormal_columns(&a, 1e-10);
        assert_eq!(q.dim().1, 2);
    }

    #[test]
    fn spectral_projector_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 12;
        let a = Array2::from_shape_fn((n, n), |_| {
            C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let (vals, vecs) = eig_dense(&a).unwrap();
        let median_re = {
            let mut res: Vec<f64> = vals.iter().map(|z| z.re).collect();
            res.sort_by(|a, b| a.partial_cmp(b).unwrap());
            res[n / 2]
        };
        let p = spectral_projector(&vals, &vecs, |z| z.re < median_re).unwrap();
        let p2 = p.dot(&p);
        assert!(op_norm2(&(&p2 - &p)) <= 1e-8 * op_norm2(&p).max(1.0));
        // P commutes with A.
        let pa = p.dot(&a);
        let ap = a.dot(&p);
        assert!(op_norm2(&(&pa - &ap)) <= 1e-8 * op_norm2(&a));
    }
}
