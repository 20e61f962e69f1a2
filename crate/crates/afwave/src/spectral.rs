//! Frequency-domain analysis of an assembled mode pencil: resolvent solves
//! with the outgoing closure, eigenvalue location in the lower half-plane,
//! the zero-resonance constant K₀, limiting-absorption norm scans, Riesz
//! spectral projectors over rectangular contours, and the static trichotomy
//! of phase space into growing / decaying / oscillatory parts.

use ndarray::Array2;
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::Serialize;

use crate::disc::{Closure, EnergyForm, Hamiltonian, Pencil, RadialGrid};
use crate::error::{Error, Result};
use crate::linalg::{
    cr, eig_dense, inv_dense, norm2, normalize, power_norm2, BidiagChol, Tridiag,
    TridiagSolver, ZERO,
};

/// Reciprocal-condition proxy below which a solve is flagged near-singular.
pub const NEAR_SINGULAR: f64 = 1e-12;
/// Eigenvalues with |Im ω| below 10h² are discretization noise, not spectrum.
const ALPHA_FLOOR_FACTOR: f64 = 10.0;
/// Maximal eigenvector mass fraction beyond r = 2R₀ for a genuine eigenvalue:
/// true eigenfunctions decay exponentially, box artifacts spread out.
const EXTERIOR_MASS_MAX: f64 = 0.1;
/// Largest dense eigenproblem accepted (matrix side 2n).
const EIG_BUDGET: usize = 4096;
/// Contour quadrature refinement target: node count doubles until the
/// projector moves by less than this in relative Frobenius norm.
const QUAD_TOL: f64 = 1e-10;
/// Projector invariants (idempotency, complementarity) enforced to this.
const PROJECTOR_TOL: f64 = 1e-8;
/// Required distance between contour boundary and detected spectrum.
const SEPARATION_MIN: f64 = 1e-3;
/// A radiation residual sequence counts as decreasing only when consecutive
/// annuli shrink it by this factor: genuine outgoing tails halve per annulus,
/// incoming ones stagnate at a positive level.
const RADIATION_DECAY: f64 = 0.8;

// ---------------------------------------------------------------------------
// Resolvent solves
// ---------------------------------------------------------------------------

/// Outer closure selection for a resolvent solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Radiating closure (∂_r + iω)v = 0 at the outer edge.
    Outgoing,
    /// Hard wall v = 0 at the outer edge.
    Dirichlet,
}

/// One resolvent solve (K + ωB + ω²M)u = f.
#[derive(Debug, Clone)]
pub struct ResolventSolve {
    pub omega: C,
    pub u: Vec<C>,
    /// ‖P_ω u − f‖ / ‖f‖ in plain ℓ².
    pub residual: f64,
    /// Reciprocal condition proxy of the factored system.
    pub condition_estimate: f64,
    /// True when the system sits within `NEAR_SINGULAR` of singularity; the
    /// solution is still returned.
    pub near_singular: bool,
    pub bc: BoundaryKind,
}

/// Solve (K + ωB + ω²M)u = f with the chosen outer closure. The grid must
/// resolve the oscillation (|ω|h ≤ 1/2) and, for the outgoing closure, ω must
/// lie on or below the real axis where the radiating solution decays.
pub fn resolve(pencil: &Pencil, omega: C, f: &[C], bc: BoundaryKind) -> Result<ResolventSolve> {
    let n = pencil.n();
    if f.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: f.len(),
        });
    }
    if !f.iter().all(|z| z.re.is_finite() && z.im.is_finite()) || !omega.is_finite() {
        return Err(Error::Precondition(
            "resolvent data must be finite".into(),
        ));
    }
    if omega.norm() * pencil.grid.h > 0.5 {
        return Err(Error::Resolution(format!(
            "|omega|·h = {:.3e} > 0.5: the grid cannot represent the oscillation",
            omega.norm() * pencil.grid.h
        )));
    }
    if bc == BoundaryKind::Outgoing && omega.im > 0.0 {
        return Err(Error::Precondition(format!(
            "outgoing closure needs Im omega <= 0, got {:+.3e}",
            omega.im
        )));
    }
    let closure = match bc {
        BoundaryKind::Outgoing => Closure::Outgoing { omega },
        BoundaryKind::Dirichlet => Closure::Dirichlet,
    };
    let a = pencil.at_omega(omega, closure);
    let solver = TridiagSolver::new(&a)?;
    let mut u = solver.lu.solve(f);
    // One step of iterative refinement keeps residuals at roundoff level even
    // for stiff frequencies.
    let au = a.matvec(&u);
    let corr: Vec<C> = (0..n).map(|i| f[i] - au[i]).collect();
    let du = solver.lu.solve(&corr);
    for i in 0..n {
        u[i] += du[i];
    }
    let au = a.matvec(&u);
    let fnorm = norm2(f);
    let residual = if fnorm > 0.0 {
        let d: Vec<C> = (0..n).map(|i| au[i] - f[i]).collect();
        norm2(&d) / fnorm
    } else {
        0.0
    };
    // The pivot ratio of an unpivoted tridiagonal factorization misses
    // near-kernels localized away from the outer boundary, so estimate the
    // reciprocal condition number by inverse iteration instead.
    let rcond = solver.sigma_min(24) / a.norm_inf().max(f64::MIN_POSITIVE);
    Ok(ResolventSolve {
        omega,
        u,
        residual,
        condition_estimate: rcond,
        near_singular: rcond < NEAR_SINGULAR,
        bc,
    })
}

// ---------------------------------------------------------------------------
// Lower half-plane eigenvalues
// ---------------------------------------------------------------------------

/// Spectrum of the mode Hamiltonian below the real axis, after filtering out
/// box artifacts, together with the zero-resonance constant of the pencil.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Detected eigenvalues with Im ω < 0, sorted by real part.
    pub eigenvalues: Vec<C>,
    /// Matching eigenvectors of the 2n×2n Hamiltonian, unit ℓ² columns.
    pub eigenvectors: Vec<Vec<C>>,
    /// Nearest spectrum point to each conjugate ω̄ …
    pub partners: Vec<C>,
    /// … and its distance: ≈ 0 exactly when the model is symmetric.
    pub partner_defects: Vec<f64>,
    /// Count κ of detected lower-half eigenvalues, with multiplicity.
    pub kappa: usize,
    /// Zero-resonance constant K₀ (+∞ when the stationary operator is
    /// singular on the grid).
    pub k0: f64,
    /// Spectral gap: min |Im ω| over detected eigenvalues (0 when none).
    pub alpha: f64,
    /// Spectral spread: max |Im ω| over detected eigenvalues (0 when none).
    pub beta: f64,
}

/// Dense eigensolve of the mode Hamiltonian, keeping eigenvalues strictly
/// below the noise floor Im ω < −10h² whose eigenvectors localize inside
/// r ≤ 2R₀ (mass fraction beyond that below 10%).
pub fn eig_lower_half(ham: &Hamiltonian) -> Result<SpectralReport> {
    let n = ham.pencil.n();
    if 2 * n > EIG_BUDGET {
        return Err(Error::Config(format!(
            "dense eigensolver budget exceeded: 2n = {} > {}",
            2 * n,
            EIG_BUDGET
        )));
    }
    let (vals, vecs) = eig_dense(&ham.mat)?;
    let grid = ham.pencil.grid;
    let alpha_floor = ALPHA_FLOOR_FACTOR * grid.h * grid.h;
    let r_exterior = 2.0 * ham.pencil.r0;
    let mut kept: Vec<(C, Vec<C>)> = Vec::new();
    for (j, &w) in vals.iter().enumerate() {
        if w.im >= -alpha_floor {
            continue;
        }
        let col: Vec<C> = vecs.column(j).to_vec();
        let total: f64 = col.iter().map(|z| z.norm_sqr()).sum();
        let exterior: f64 = (0..n)
            .filter(|&i| grid.node(i) > r_exterior)
            .map(|i| col[i].norm_sqr() + col[n + i].norm_sqr())
            .sum();
        if total <= 0.0 || exterior > EXTERIOR_MASS_MAX * total {
            continue;
        }
        kept.push((w, col));
    }
    kept.sort_by(|a, b| {
        (a.0.re, a.0.im)
            .partial_cmp(&(b.0.re, b.0.im))
            .expect("finite eigenvalues")
    });

    let mut partners = Vec::with_capacity(kept.len());
    let mut partner_defects = Vec::with_capacity(kept.len());
    for (w, _) in &kept {
        let mirror = w.conj();
        let nearest = vals
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - mirror)
                    .norm()
                    .partial_cmp(&(b - mirror).norm())
                    .expect("finite distances")
            })
            .expect("nonempty spectrum");
        partners.push(nearest);
        partner_defects.push((nearest - mirror).norm());
    }

    let kappa = kept.len();
    let alpha = kept
        .iter()
        .map(|(w, _)| w.im.abs())
        .fold(f64::INFINITY, f64::min);
    let beta = kept.iter().map(|(w, _)| w.im.abs()).fold(0.0, f64::max);
    let k0 = zero_resonance_constant(&ham.pencil)?.k0;
    let (eigenvalues, eigenvectors): (Vec<C>, Vec<Vec<C>>) = kept.into_iter().unzip();
    Ok(SpectralReport {
        eigenvalues,
        eigenvectors,
        partners,
        partner_defects,
        kappa,
        k0,
        alpha: if kappa == 0 { 0.0 } else { alpha },
        beta,
    })
}

// ---------------------------------------------------------------------------
// Zero-resonance constant
// ---------------------------------------------------------------------------

/// The smallest K₀ with ‖u‖_{Ḣ¹} ≤ K₀‖P₀u‖_{Ḣ⁻¹}, plus a near-null direction
/// of P₀ when the constant is infinite.
#[derive(Debug, Clone)]
pub struct ZeroResonance {
    pub k0: f64,
    /// Normalized near-kernel direction of P₀, present only for the +∞ case.
    pub diagnostic: Option<Vec<C>>,
}

/// Flat comparison stiffness of the mode (Dirichlet wall plus centrifugal
/// barrier), in the same operator scaling as the pencil.
fn flat_stiffness(grid: RadialGrid, ell: usize) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n;
    let h = grid.h;
    let lfac = (ell * (ell + 1)) as f64;
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let r = grid.node(i);
            2.0 / (h * h) + lfac / (r * r)
        })
        .collect();
    let sub = vec![-1.0 / (h * h); n.saturating_sub(1)];
    (diag, sub)
}

/// K₀ = smallest constant in ‖u‖_{Ḣ¹} ≤ K₀‖P₀u‖_{Ḣ⁻¹}: the square root of
/// the largest generalized eigenvalue of the flat Ḣ¹ Gram G₁ against
/// P₀†G₁⁻¹P₀, computed as the 2-norm of L†P₀⁻¹L for the Cholesky factor
/// G₁ = LL†. The flat pencil itself gives exactly 1 (Riesz isomorphism).
pub fn zero_resonance_constant(pencil: &Pencil) -> Result<ZeroResonance> {
    let n = pencil.n();
    let (diag, sub) = flat_stiffness(pencil.grid, pencil.ell);
    let chol = BidiagChol::factor(&diag, &sub)?;
    let p0 = pencil.k_closed();
    let solver = TridiagSolver::new(&p0)?;
    let scale = p0.norm_inf().max(f64::MIN_POSITIVE);
    let smin = solver.sigma_min(160);
    if solver.lu.rcond_proxy < NEAR_SINGULAR || smin <= 1e-10 * scale {
        // Inverse iteration on P₀†P₀ exposes the (near-)kernel direction.
        let mut z: Vec<C> = (0..n)
            .map(|i| cr(1.0 + 0.41 * ((i * 2_246_822_519usize % 89) as f64) / 89.0))
            .collect();
        normalize(&mut z);
        for _ in 0..200 {
            let y = solver.lu_adj.solve(&z);
            let w = solver.lu.solve(&y);
            let nw = norm2(&w);
            if nw == 0.0 || !nw.is_finite() {
                break;
            }
            z = w;
            normalize(&mut z);
        }
        return Ok(ZeroResonance {
            k0: f64::INFINITY,
            diagnostic: Some(z),
        });
    }
    let apply = |x: &[C]| -> Vec<C> {
        let y = chol.mul(x);
        let y = solver.lu.solve(&y);
        chol.mul_t(&y)
    };
    let apply_adj = |x: &[C]| -> Vec<C> {
        let y = chol.mul(x);
        let y = solver.lu_adj.solve(&y);
        chol.mul_t(&y)
    };
    let k0 = power_norm2(n, 200, apply, apply_adj);
    Ok(ZeroResonance {
        k0,
        diagnostic: None,
    })
}

// ---------------------------------------------------------------------------
// Limiting-absorption scan
// ---------------------------------------------------------------------------

/// One scan point: the weighted resolvent norm estimate at ω.
#[derive(Debug, Clone)]
pub struct LapRow {
    pub omega: C,
    /// Power-iteration estimate of ‖R_ω‖ from the dual local-energy space to
    /// the frequency-adapted first-order local-energy space.
    pub norm: f64,
    /// Relative residual of a representative solve at this frequency.
    pub residual: f64,
    pub near_singular: bool,
}

/// Dyadic annulus exponent of a radius: −1 marks the inner ball r < 1,
/// k ≥ 0 the annulus [2^k, 2^{k+1}).
fn annulus_exponent(r: f64) -> i32 {
    if r < 1.0 {
        -1
    } else {
        r.log2().floor() as i32
    }
}

/// Squared local-energy weight 2^{−k} (ball weight 1).
fn le_weight_sq(r: f64) -> f64 {
    let k = annulus_exponent(r);
    if k < 0 {
        1.0
    } else {
        0.5f64.powi(k)
    }
}

/// Squared dual-space weight 2^{+k} (ball weight 1).
fn dual_weight_sq(r: f64) -> f64 {
    let k = annulus_exponent(r);
    if k < 0 {
        1.0
    } else {
        2.0f64.powi(k)
    }
}

/// Estimate ‖R_ω‖ on a grid of frequencies in the closed lower half-plane by
/// 20 rounds of power iteration on the weighted composition
/// (dual weight) → solve → (first-order weight), using quadratic Gram
/// stand-ins for the two local-energy norms. Rows come back in input order.
pub fn lap_scan(pencil: &Pencil, omegas: &[C]) -> Result<Vec<LapRow>> {
    let n = pencil.n();
    let h = pencil.grid.h;
    let grid = pencil.grid;
    for &w in omegas {
        if !w.is_finite() {
            return Err(Error::Precondition("scan frequencies must be finite".into()));
        }
        if w.norm() * h > 0.5 {
            return Err(Error::Resolution(format!(
                "|omega|·h = {:.3e} > 0.5 at omega = {:+.3e}{:+.3e}i",
                w.norm() * h,
                w.re,
                w.im
            )));
        }
        if w.im > 0.0 {
            return Err(Error::Precondition(format!(
                "scan frequencies must satisfy Im omega <= 0, got {:+.3e}",
                w.im
            )));
        }
    }
    let lfac = (pencil.ell * (pencil.ell + 1)) as f64;
    // Node-diagonal pieces of the first-order Gram: ⟨r⟩⁻² zeroth order plus
    // the centrifugal part, and the plain mass carrying the frequency floor.
    let node_pot: Vec<f64> = (0..n)
        .map(|i| {
            let r = grid.node(i);
            h * le_weight_sq(r) * (1.0 / (1.0 + r * r) + lfac / (r * r))
        })
        .collect();
    let node_mass: Vec<f64> = (0..n).map(|i| h * le_weight_sq(grid.node(i))).collect();
    // Radial-derivative cells (v′ − ṽ/r at midpoints, left ghost v = 0).
    let cell_w: Vec<f64> = (0..n).map(|j| h * le_weight_sq(grid.midpoint(j))).collect();
    let cell_hi: Vec<f64> = (0..n)
        .map(|j| 1.0 / h - 0.5 / grid.midpoint(j))
        .collect();
    let cell_lo: Vec<f64> = (0..n)
        .map(|j| -1.0 / h - 0.5 / grid.midpoint(j))
        .collect();
    let dual_inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (h * dual_weight_sq(grid.node(i))).sqrt())
        .collect();

    omegas
        .par_iter()
        .map(|&omega| -> Result<LapRow> {
            let a = pencil.at_omega(omega, Closure::Outgoing { omega });
            let solver = TridiagSolver::new(&a)?;
            let floor_sq = omega.norm().max(h).powi(2);
            let gram_first = |u: &[C]| -> Vec<C> {
                let mut g: Vec<C> = (0..n)
                    .map(|i| cr(node_pot[i] + floor_sq * node_mass[i]) * u[i])
                    .collect();
                for j in 0..n {
                    let mut t = cr(cell_hi[j]) * u[j];
                    if j > 0 {
                        t += cr(cell_lo[j]) * u[j - 1];
                    }
                    t *= cr(cell_w[j]);
                    g[j] += cr(cell_hi[j]) * t;
                    if j > 0 {
                        g[j - 1] += cr(cell_lo[j]) * t;
                    }
                }
                g
            };
            let apply = |z: &[C]| -> Vec<C> {
                let x: Vec<C> = (0..n).map(|i| z[i] * cr(dual_inv_sqrt[i])).collect();
                let y = solver.lu.solve(&x);
                let g = gram_first(&y);
                let t = solver.lu_adj.solve(&g);
                (0..n).map(|i| t[i] * cr(dual_inv_sqrt[i])).collect()
            };
            // Power iteration on the Hermitian PSD composition W R† G R W.
            let mut z: Vec<C> = (0..n)
                .map(|i| cr(1.0 + 0.33 * ((i * 2_654_435_761usize % 103) as f64) / 103.0))
                .collect();
            normalize(&mut z);
            let mut lam = 0.0f64;
            for _ in 0..20 {
                let w = apply(&z);
                lam = norm2(&w);
                if lam == 0.0 {
                    break;
                }
                if !lam.is_finite() {
                    lam = f64::INFINITY;
                    break;
                }
                z = w;
                normalize(&mut z);
            }
            let norm = lam.sqrt();
            // Representative solve residual at the final test vector.
            let f: Vec<C> = (0..n).map(|i| z[i] * cr(dual_inv_sqrt[i])).collect();
            let u = solver.lu.solve(&f);
            let au = a.matvec(&u);
            let fnorm = norm2(&f);
            let residual = if fnorm > 0.0 {
                let d: Vec<C> = (0..n).map(|i| au[i] - f[i]).collect();
                norm2(&d) / fnorm
            } else {
                0.0
            };
            // Same inverse-iteration conditioning estimate as `resolve`: the
            // pivot ratio misses interior-localized near-kernels.
            let rcond = solver.sigma_min(24) / a.norm_inf().max(f64::MIN_POSITIVE);
            Ok(LapRow {
                omega,
                norm,
                residual,
                near_singular: rcond < NEAR_SINGULAR,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Radiation condition
// ---------------------------------------------------------------------------

/// Per-annulus radiation residuals 2^{−j/2}‖(∂_r + iω)·‖ of a mode field.
#[derive(Debug, Clone)]
pub struct RadiationReport {
    /// (annulus exponent j, weighted residual over A_j = [2^j, 2^{j+1})).
    pub residuals: Vec<(i32, f64)>,
    /// True when the residuals decrease geometrically over the last three
    /// annuli — the discrete outgoing radiation condition.
    pub outgoing: bool,
}

/// Check the outgoing radiation condition of radial mode samples (the r·u
/// weighted field) at a real frequency: residual 2^{−j/2}‖(∂_r + iω)u‖ per
/// dyadic annulus, measured in the spherical L² via the weighted samples.
pub fn radiation_check(grid: &RadialGrid, u: &[C], omega: f64) -> Result<RadiationReport> {
    let n = grid.n;
    if u.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: u.len(),
        });
    }
    if omega == 0.0 || !omega.is_finite() {
        return Err(Error::Precondition(
            "radiation check needs a nonzero real frequency".into(),
        ));
    }
    let r_max = grid.r_max();
    let mut annuli: Vec<i32> = Vec::new();
    let mut k = 0i32;
    while 2.0f64.powi(k + 1) <= r_max * (1.0 + 1e-12) {
        annuli.push(k);
        k += 1;
    }
    if annuli.len() < 4 {
        return Err(Error::Resolution(format!(
            "only {} complete annuli on the grid, need at least 4",
            annuli.len()
        )));
    }
    let h = grid.h;
    let iw = C::new(0.0, omega);
    let mut residuals = Vec::with_capacity(annuli.len());
    for &j in &annuli {
        let lo = 2.0f64.powi(j);
        let hi = 2.0f64.powi(j + 1);
        let mut mass = 0.0f64;
        for cell in 0..n {
            let rm = grid.midpoint(cell);
            if rm < lo || rm >= hi {
                continue;
            }
            let left = if cell == 0 { ZERO } else { u[cell - 1] };
            let deriv = (u[cell] - left) / cr(h);
            let avg = (u[cell] + left) * cr(0.5);
            let val = deriv + (iw - cr(1.0 / rm)) * avg;
            mass += h * val.norm_sqr();
        }
        residuals.push((j, 0.5f64.powi(j).sqrt() * mass.sqrt()));
    }
    let m = residuals.len();
    let outgoing = residuals[m - 1].1 <= RADIATION_DECAY * residuals[m - 2].1
        && residuals[m - 2].1 <= RADIATION_DECAY * residuals[m - 3].1;
    Ok(RadiationReport {
        residuals,
        outgoing,
    })
}

// ---------------------------------------------------------------------------
// Riesz contour projectors
// ---------------------------------------------------------------------------

/// Rectangular contour [−half_width, half_width] × [−beta, −alpha] in the
/// lower half-plane (its mirror serves the upper half), with an initial
/// quadrature node count for the whole perimeter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContourBox {
    pub half_width: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nodes: usize,
}

impl ContourBox {
    fn validate(&self) -> Result<()> {
        let ok = self.half_width.is_finite()
            && self.half_width > 0.0
            && self.alpha.is_finite()
            && self.beta.is_finite()
            && 0.0 < self.alpha
            && self.alpha < self.beta;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "contour rectangle needs 0 < alpha < beta and positive width, \
                 got half_width {:.3e}, alpha {:.3e}, beta {:.3e}",
                self.half_width, self.alpha, self.beta
            )))
        }
    }
}

/// Axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    /// Corners in counterclockwise (positive) orientation.
    fn corners(&self) -> [C; 4] {
        [
            C::new(self.x0, self.y0),
            C::new(self.x1, self.y0),
            C::new(self.x1, self.y1),
            C::new(self.x0, self.y1),
        ]
    }

    fn contains(&self, z: C) -> bool {
        self.x0 < z.re && z.re < self.x1 && self.y0 < z.im && z.im < self.y1
    }

    /// Distance from a point to the rectangle boundary (inside or out).
    fn boundary_distance(&self, z: C) -> f64 {
        let cx = 0.5 * (self.x0 + self.x1);
        let cy = 0.5 * (self.y0 + self.y1);
        let rx = 0.5 * (self.x1 - self.x0);
        let ry = 0.5 * (self.y1 - self.y0);
        let dx = (z.re - cx).abs() - rx;
        let dy = (z.im - cy).abs() - ry;
        if dx <= 0.0 && dy <= 0.0 {
            (-dx).min(-dy)
        } else {
            dx.max(0.0).hypot(dy.max(0.0))
        }
    }
}

/// Smoothed arclength fraction along one rectangle side: a degree-11
/// polynomial bijection of [0,1] whose first five derivatives vanish at both
/// ends. Traversal speed then meets the corners C⁵-smoothly, so the periodic
/// trapezoid rule on the parametrized perimeter converges like N⁻⁶ instead
/// of stalling at the corner order.
fn smooth_speed(xi: f64) -> (f64, f64) {
    let p = 2772.0
        * xi.powi(6)
        * (1.0 / 6.0
            + xi * (-5.0 / 7.0 + xi * (1.25 + xi * (-10.0 / 9.0 + xi * (0.5 - xi / 11.0)))));
    let dp = 2772.0 * xi.powi(5) * (1.0 - xi).powi(5);
    (p, dp)
}

/// (1/2πi)∮(ωI − A)⁻¹dω over the rectangle, positively oriented, by the
/// midpoint-offset trapezoid rule in the smoothed perimeter parameter.
fn riesz_rect(mat: &Array2<C>, rect: Rect, n_nodes: usize) -> Result<Array2<C>> {
    let m = mat.nrows();
    let corners = rect.corners();
    let nf = n_nodes as f64;
    let terms: Result<Vec<Array2<C>>> = (0..n_nodes)
        .into_par_iter()
        .map(|i| -> Result<Array2<C>> {
            let t = 4.0 * (i as f64 + 0.5) / nf;
            let side = (t.floor() as usize).min(3);
            let xi = t - side as f64;
            let (p, dp) = smooth_speed(xi);
            let a = corners[side];
            let b = corners[(side + 1) % 4];
            let z = a + (b - a) * cr(p);
            // (1/2πi)·z′(θ)·Δθ with Δθ = 2π/N folds to −i·side·p′·2/(πN).
            let coeff = (b - a) * C::new(0.0, -2.0 / (std::f64::consts::PI * nf)) * cr(dp);
            let mut shifted = mat.mapv(|v| -v);
            for d in 0..m {
                shifted[[d, d]] += z;
            }
            let inv = inv_dense(&shifted)?;
            Ok(inv.mapv(|v| v * coeff))
        })
        .collect();
    let mut acc = Array2::from_elem((m, m), ZERO);
    for term in terms? {
        acc += &term;
    }
    Ok(acc)
}

fn fro(a: &Array2<C>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Riesz projectors onto the spectrum inside a lower-half rectangle and its
/// upper-half mirror, plus the complementary (oscillatory) projector.
#[derive(Debug, Clone)]
pub struct ProjectorPair {
    pub p_minus: Array2<C>,
    pub p_plus: Array2<C>,
    pub p_zero: Array2<C>,
    pub contour: ContourBox,
    /// Final perimeter node count after refinement (0 when no quadrature ran).
    pub nodes_used: usize,
    pub rank_minus: usize,
    pub rank_plus: usize,
    /// Largest invariant defect found while enforcing idempotency and
    /// complementarity.
    pub defect: f64,
}

fn projector_rank(p: &Array2<C>) -> Result<usize> {
    let tr: C = (0..p.nrows()).map(|i| p[[i, i]]).sum();
    let rank = tr.re.round();
    if (tr.re - rank).abs() > 1e-6 || tr.im.abs() > 1e-6 || rank < 0.0 {
        return Err(Error::Numeric(format!(
            "projector trace {:.3e}{:+.3e}i is not close to an integer",
            tr.re, tr.im
        )));
    }
    Ok(rank as usize)
}

/// Build the Riesz projector pair over the given rectangle (and its mirror)
/// by corner-regularized trapezoid quadrature, doubling the node count until
/// the projectors settle, then enforce the projector algebra.
pub fn contour_projector(ham: &Hamiltonian, contour: ContourBox) -> Result<ProjectorPair> {
    contour.validate()?;
    let report = eig_lower_half(ham)?;
    let gamma_minus = Rect {
        x0: -contour.half_width,
        x1: contour.half_width,
        y0: -contour.beta,
        y1: -contour.alpha,
    };
    let gamma_plus = Rect {
        x0: -contour.half_width,
        x1: contour.half_width,
        y0: contour.alpha,
        y1: contour.beta,
    };
    for &w in &report.eigenvalues {
        for z in [w, w.conj()] {
            let d = gamma_minus
                .boundary_distance(z)
                .min(gamma_plus.boundary_distance(z));
            if d < SEPARATION_MIN {
                return Err(Error::Contour {
                    msg: format!(
                        "contour boundary only {:.3e} away from the spectrum",
                        d
                    ),
                    nearest: w,
                });
            }
        }
    }
    // Rank bookkeeping needs every pole of the resolvent, not only the
    // localized eigenvalues that survive the report's filters.
    let (all_vals, _) = eig_dense(&ham.mat)?;
    let enclosed_minus = all_vals.iter().filter(|w| gamma_minus.contains(**w)).count();
    let enclosed_plus = all_vals.iter().filter(|w| gamma_plus.contains(**w)).count();

    let mut n_nodes = contour.nodes.max(16).next_multiple_of(4);
    let mut pm = riesz_rect(&ham.mat, gamma_minus, n_nodes)?;
    let mut pp = riesz_rect(&ham.mat, gamma_plus, n_nodes)?;
    loop {
        let n2 = 2 * n_nodes;
        if n2 > 16384 {
            return Err(Error::Numeric(format!(
                "contour quadrature did not settle below {QUAD_TOL:.1e} within 16384 nodes"
            )));
        }
        let pm2 = riesz_rect(&ham.mat, gamma_minus, n2)?;
        let pp2 = riesz_rect(&ham.mat, gamma_plus, n2)?;
        let change = (fro(&(&pm2 - &pm)) / fro(&pm2).max(1.0))
            .max(fro(&(&pp2 - &pp)) / fro(&pp2).max(1.0));
        pm = pm2;
        pp = pp2;
        n_nodes = n2;
        if change < QUAD_TOL {
            break;
        }
    }
    let dim = ham.mat.nrows();
    let mut p_zero = Array2::from_elem((dim, dim), ZERO);
    for i in 0..dim {
        p_zero[[i, i]] = cr(1.0);
    }
    p_zero -= &pm;
    p_zero -= &pp;

    let mut defect = 0.0f64;
    for p in [&pm, &pp, &p_zero] {
        let scale = fro(p).max(1.0);
        defect = defect.max(fro(&(p.dot(p) - p)) / scale);
    }
    defect = defect.max(fro(&pm.dot(&pp)));
    defect = defect.max(fro(&pp.dot(&pm)));
    if defect > PROJECTOR_TOL {
        return Err(Error::Numeric(format!(
            "projector algebra defect {defect:.3e} exceeds {PROJECTOR_TOL:.1e}"
        )));
    }
    let rank_minus = projector_rank(&pm)?;
    let rank_plus = projector_rank(&pp)?;
    if rank_minus != enclosed_minus || rank_plus != enclosed_plus {
        return Err(Error::Numeric(format!(
            "projector ranks ({rank_minus}, {rank_plus}) disagree with the \
             ({enclosed_minus}, {enclosed_plus}) enclosed eigenvalues"
        )));
    }
    Ok(ProjectorPair {
        p_minus: pm,
        p_plus: pp,
        p_zero,
        contour,
        nodes_used: n_nodes,
        rank_minus,
        rank_plus,
        defect,
    })
}

// ---------------------------------------------------------------------------
// Static trichotomy
// ---------------------------------------------------------------------------

/// Phase-space splitting of a stationary symmetric mode: Riesz projectors
/// onto the growing/decaying parts, the count κ, the spectral gap α, and the
/// energy-form coercivity constant on the oscillatory complement.
#[derive(Debug, Clone)]
pub struct Trichotomy {
    pub projectors: ProjectorPair,
    pub kappa: usize,
    pub alpha: f64,
    /// min ⟨U,U⟩_E / ‖U‖²_{Ḣ¹×L²} over an orthonormal sample of the
    /// oscillatory range.
    pub coercivity: f64,
    /// Largest |⟨U,Ψ⟩_E| over the growing/decaying bases, relative to the
    /// energy-form scale: ≈ 0 exactly when those spaces are isotropic.
    pub isotropy_defect: f64,
}

/// Tolerance on the isotropy of the growing/decaying subspaces; a violation
/// means the model is not symmetric enough for the trichotomy.
const ISOTROPY_TOL: f64 = 1e-6;

/// Number of probe directions sampled from the oscillatory range for the
/// coercivity estimate.
const COERCIVITY_PROBES: usize = 24;

/// Deterministic probe block for the coercivity sample.
fn probe_block(dim: usize, count: usize) -> Array2<C> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    Array2::from_shape_fn((dim, count), |_| {
        C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    })
}

/// Split phase space for a stationary symmetric mode with finite K₀:
/// S± = ranges of the Riesz projectors (isotropic for the energy form,
/// dimension κ each), and the energy form is coercive on the complement.
pub fn trichotomy_static(ham: &Hamiltonian, eform: &EnergyForm) -> Result<Trichotomy> {
    let report = eig_lower_half(ham)?;
    if !report.k0.is_finite() {
        return Err(Error::Precondition(
            "zero-resonance constant is infinite: stationary operator singular on the grid"
                .into(),
        ));
    }
    let n = ham.pencil.n();
    let dim = 2 * n;
    let pair = if report.kappa == 0 {
        let zeros = Array2::from_elem((dim, dim), ZERO);
        let mut eye = Array2::from_elem((dim, dim), ZERO);
        for i in 0..dim {
            eye[[i, i]] = cr(1.0);
        }
        ProjectorPair {
            p_minus: zeros.clone(),
            p_plus: zeros,
            p_zero: eye,
            contour: ContourBox {
                half_width: 1.0,
                alpha: 0.25,
                beta: 0.5,
                nodes: 0,
            },
            nodes_used: 0,
            rank_minus: 0,
            rank_plus: 0,
            defect: 0.0,
        }
    } else {
        let max_re = report
            .eigenvalues
            .iter()
            .map(|w| w.re.abs())
            .fold(0.0, f64::max);
        contour_projector(
            ham,
            ContourBox {
                half_width: max_re + 1.0,
                alpha: 0.5 * report.alpha,
                beta: 1.5 * report.beta + 0.5,
                nodes: 64,
            },
        )?
    };

    // Isotropy of the growing/decaying ranges, relative to the form scale.
    let escale = eform.k_form.norm_inf()
        + eform
            .m_form
            .iter()
            .fold(0.0f64, |acc, &m| acc.max(m.abs()));
    let mut isotropy_defect = 0.0f64;
    for p in [&pair.p_minus, &pair.p_plus] {
        // Rank tolerance well below any genuine range direction (a rank-r
        // projector keeps exactly r columns) yet far above quadrature noise.
        let basis = crate::linalg::orthonormal_columns(p, 1e-6);
        if basis.ncols() != report.kappa {
            return Err(Error::Numeric(format!(
                "projector range dimension {} disagrees with kappa = {}",
                basis.ncols(),
                report.kappa
            )));
        }
        for i in 0..basis.ncols() {
            for j in 0..basis.ncols() {
                let bi: Vec<C> = basis.column(i).to_vec();
                let bj: Vec<C> = basis.column(j).to_vec();
                isotropy_defect = isotropy_defect.max(eform.inner(&bi, &bj).norm() / escale);
            }
        }
    }
    if isotropy_defect > ISOTROPY_TOL {
        return Err(Error::Precondition(format!(
            "energy form is not isotropic on the growing/decaying spaces \
             (defect {isotropy_defect:.3e}): model fails the symmetric hypothesis"
        )));
    }

    // Coercivity over an orthonormal sample of the oscillatory range, with
    // the flat first-order norm ‖U‖²_{Ḣ¹×L²} as the reference scale.
    let h = ham.pencil.grid.h;
    let (fd, fs) = flat_stiffness(ham.pencil.grid, ham.pencil.ell);
    let flat = {
        let mut t = Tridiag::zeros(n);
        for i in 0..n {
            t.diag[i] = cr(fd[i]);
        }
        for i in 0..n.saturating_sub(1) {
            t.sub[i] = cr(fs[i]);
            t.sup[i] = cr(fs[i]);
        }
        t
    };
    let probes = pair.p_zero.dot(&probe_block(dim, COERCIVITY_PROBES.min(dim)));
    let sample = crate::linalg::orthonormal_columns(&probes, 1e-8);
    if sample.ncols() == 0 {
        return Err(Error::Numeric(
            "no probe directions survived projection onto the oscillatory range".into(),
        ));
    }
    let mut coercivity = f64::INFINITY;
    for j in 0..sample.ncols() {
        let col: Vec<C> = sample.column(j).to_vec();
        let u0 = &col[..n];
        let u1 = &col[n..];
        let ku = flat.matvec(u0);
        let hdot: f64 = h * u0
            .iter()
            .zip(&ku)
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>();
        let l2: f64 = h * u1.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let denom = hdot + l2;
        if denom <= 0.0 {
            continue;
        }
        coercivity = coercivity.min(eform.quad(&col) / denom);
    }
    if !coercivity.is_finite() {
        return Err(Error::Numeric(
            "coercivity sample degenerate: all probes had zero first-order norm".into(),
        ));
    }
    Ok(Trichotomy {
        projectors: pair,
        kappa: report.kappa,
        alpha: report.alpha,
        coercivity,
        isotropy_defect,
    })
}
