//! Radial discretization of one angular mode: the quadratic spectral pencil
//! K + ωB + ω²M acting on v = r·u, its first-order Hamiltonian reduction,
//! and the energy inner product.
//!
//! Assembly is by midpoint-cell sesquilinear forms. With the unknown
//! v = r·u and the regularity closure v(0) = 0, the flat radial Dirichlet
//! form reduces exactly to Σ_cells h|𝒟v|², so the flat ℓ = 0 stiffness is
//! the textbook tridiagonal (−1, 2, −1)/h² with no spurious 1/r terms.
//! Hermitian symmetry for real-coefficient models is exact by construction.

use crate::error::{Error, Result};
use crate::linalg::{cr, Tridiag, ZERO};
use crate::model::{AFModel, Profile};
use ndarray::Array2;
use num_complex::Complex64 as C;
use serde::Serialize;

/// Uniform radial grid with interior nodes r_i = i·h, i = 1…n, and outer
/// radius r_max = (n+1)·h. Index 0 of any state vector refers to r = h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialGrid {
    pub h: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn new(h: f64, n: usize) -> Result<RadialGrid> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        if n < 16 {
            return Err(Error::Config(format!(
                "grid needs at least 16 interior nodes, got {n}"
            )));
        }
        Ok(RadialGrid { h, n })
    }

    /// Grid with spacing ≤ h whose outer radius is exactly r_max.
    pub fn covering(r_max: f64, h: f64) -> Result<RadialGrid> {
        if !(r_max > 0.0) {
            return Err(Error::Config("outer radius must be positive".into()));
        }
        let cells = (r_max / h).ceil().max(2.0) as usize;
        RadialGrid::new(r_max / cells as f64, cells - 1)
    }

    pub fn r_max(&self) -> f64 {
        (self.n as f64 + 1.0) * self.h
    }

    /// Radius of interior node i (0-based storage: node(0) = h).
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.h
    }

    /// Midpoint of cell j, the interval [j·h, (j+1)·h], j = 0…n.
    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    /// Grid admissibility for a model: the grid must reach well past R₀ and
    /// resolve the narrowest coefficient feature.
    pub fn check_model(&self, model: &AFModel) -> Result<()> {
        if self.r_max() < 4.0 * model.r0 {
            return Err(Error::Resolution(format!(
                "outer radius {:.3} < 4·R0 = {:.3}",
                self.r_max(),
                4.0 * model.r0
            )));
        }
        let mut min_w = f64::INFINITY;
        for f in &model.coefficients {
            if let Profile::Bump { w, .. } = f.profile {
                min_w = min_w.min(w);
            }
        }
        if self.h > min_w / 4.0 {
            return Err(Error::Resolution(format!(
                "spacing {:.3e} too coarse for feature width {:.3e}",
                self.h, min_w
            )));
        }
        Ok(())
    }
}

/// Outer boundary closure for the pencil at a given frequency.
#[derive(Debug, Clone, Copy)]
pub enum Closure {
    /// v(r_max) = 0.
    Dirichlet,
    /// First-order outgoing condition (∂_r + iω)v = 0 at the ghost node:
    /// v_{n+1} = v_n / (1 + iωh), for waves v ~ e^{−iωr}.
    Outgoing { omega: C },
}

/// Discretized quadratic pencil K + ωB + ω²M of one angular mode, in
/// operator scaling (apply to v-samples). The outer row's coupling to the
/// ghost node is held in `k_ghost`/`b_ghost` until a closure is chosen.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub ell: usize,
    pub k: Tridiag,
    pub b: Tridiag,
    /// Real diagonal of M: the g⁰⁰ node values (all strictly negative).
    pub m: Vec<f64>,
    pub k_ghost: C,
    pub b_ghost: C,
    pub grid: RadialGrid,
    /// Coefficient evaluation time.
    pub t: f64,
    /// Interaction radius of the source model: perturbations concentrate in
    /// r ≲ r0, and eigenfunction candidates must localize within 2·r0.
    pub r0: f64,
}

impl Pencil {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// K + ωB + ω²M with the requested outer closure folded in.
    pub fn at_omega(&self, omega: C, closure: Closure) -> Tridiag {
        let mut a = self.k.add_scaled(omega, &self.b);
        for i in 0..self.m.len() {
            a.diag[i] += omega * omega * cr(self.m[i]);
        }
        if let Closure::Outgoing { omega: om } = closure {
            let ghost = (self.k_ghost + omega * self.b_ghost)
                / (cr(1.0) + C::new(0.0, 1.0) * om * cr(self.grid.h));
            let n = self.grid.n;
            a.diag[n - 1] += ghost;
        }
        a
    }

    /// The stationary operator P₀ = K with Dirichlet closure.
    pub fn k_closed(&self) -> Tridiag {
        self.k.clone()
    }

    /// Relative Hermiticity defects of (K, B).
    pub fn hermiticity_defect(&self) -> (f64, f64) {
        let dk = self.k.hermiticity_defect() / self.k.norm_inf().max(f64::MIN_POSITIVE);
        let db = self.b.hermiticity_defect() / self.b.norm_inf().max(1e-300);
        (dk, if self.b.norm_inf() == 0.0 { 0.0 } else { db })
    }
}

/// Accumulates an h-scaled sesquilinear form F(v, w) = Σ conj(w_s) F_{st} v_t
/// over midpoint cells, routing couplings to the ghost node n+1 aside.
struct FormAccum {
    tri: Tridiag,
    ghost: C,
    n: usize,
}

impl FormAccum {
    fn new(n: usize) -> Self {
        FormAccum {
            tri: Tridiag::zeros(n),
            ghost: ZERO,
            n,
        }
    }

    /// Add coeff·conj(wside[s])·vside[t] over the 2×2 block of cell j
    /// (connecting grid nodes j and j+1, 1-based; node 0 is the origin with
    /// v ≡ 0, node n+1 the ghost).
    fn add_cell(&mut self, j: usize, coeff: C, vside: [C; 2], wside: [C; 2]) {
        for (si, s_node) in [(0usize, j), (1usize, j + 1)] {
            if s_node == 0 || s_node > self.n {
                continue; // origin row fixed by v(0)=0; ghost row replaced by closure
            }
            let s = s_node - 1;
            for (ti, t_node) in [(0usize, j), (1usize, j + 1)] {
                let val = coeff * wside[si].conj() * vside[ti];
                if t_node == 0 {
                    continue;
                }
                if t_node > self.n {
                    // coupling of the last interior row to the ghost value
                    if s == self.n - 1 {
                        self.ghost += val;
                    }
                    continue;
                }
                let t = t_node - 1;
                if s == t {
                    self.tri.diag[s] += val;
                } else if t == s + 1 {
                    self.tri.sup[s] += val;
                } else if t + 1 == s {
                    self.tri.sub[t] += val;
                }
            }
        }
    }

    fn add_node_diag(&mut self, i: usize, val: C) {
        self.tri.diag[i] += val;
    }
}

/// Assemble the pencil of angular mode ℓ for `model` at time `t`.
///
/// K = Δ_{g,A} + W + ℓ(ℓ+1)/r², B = g⁰ʳ(D+A_r) + (D+A_r)g⁰ʳ + 2A₀g⁰⁰,
/// M = g⁰⁰, all acting on v = r·u with the measure dr.
pub fn assemble_pencil(model: &AFModel, grid: RadialGrid, ell: usize, t: f64) -> Result<Pencil> {
    grid.check_model(model)?;
    let n = grid.n;
    let h = grid.h;
    let mut kf = FormAccum::new(n);
    let mut bf = FormAccum::new(n);

    // Cell loop: second-order and first-order terms at midpoints.
    for j in 0..=n {
        let rm = grid.midpoint(j);
        let c = model.coeffs(rm, t);
        let grr_pert = c.grr - 1.0;
        let ia = C::new(0.0, 1.0) * c.ar;
        let ia_conj = C::new(0.0, 1.0) * c.ar.conj();
        let inv_r = cr(1.0 / rm);

        // Flat radial part: ∫|v′ + iA_r v|² dr. (The 1/r cross terms of the
        // reduction u = v/r cancel against the measure for v(0) = 0.)
        let d = cr(1.0 / h);
        let vs = [-d + ia * 0.5, d + ia * 0.5];
        let ws = [-d + ia_conj * 0.5, d + ia_conj * 0.5];
        kf.add_cell(j, cr(h), vs, ws);

        // Metric perturbation part keeps the full reduced connection
        // c̃ = iA_r − 1/r: ∫ (gʳʳ−1)(v′ + c̃v)(w′ + c̃*-side w)* dr.
        if grr_pert != 0.0 {
            let al = ia - inv_r;
            let alw = ia_conj - inv_r;
            let vs = [-d + al * 0.5, d + al * 0.5];
            let ws = [-d + alw * 0.5, d + alw * 0.5];
            kf.add_cell(j, cr(h * grr_pert), vs, ws);
        }

        // First-order sandwich a(D+A_r) + (D+A_r)a, with a = A₀g⁰ʳ for W
        // (folded into K) and a = g⁰ʳ for B:
        //   ∫ a[(1/i)(v′ + c̃v)·w̄ + v·conj((1/i)(w′ + c̃_w w))] dr.
        let avg = [cr(0.5), cr(0.5)];
        let al = ia - inv_r;
        let alw = ia_conj - inv_r;
        let deriv_v = [-d + al * 0.5, d + al * 0.5];
        let deriv_w = [-d + alw * 0.5, d + alw * 0.5];
        let mi = C::new(0.0, -1.0);
        let pi = C::new(0.0, 1.0);

        let a_w = c.a0 * cr(c.g0r);
        if a_w != ZERO {
            kf.add_cell(j, cr(h) * a_w * mi, deriv_v, avg);
            kf.add_cell(j, cr(h) * a_w * pi, avg, deriv_w);
        }
        if c.g0r != 0.0 {
            bf.add_cell(j, cr(h * c.g0r) * mi, deriv_v, avg);
            bf.add_cell(j, cr(h * c.g0r) * pi, avg, deriv_w);
        }
    }

    // Node loop: multiplication operators.
    let lfac = (ell * (ell + 1)) as f64;
    let mut m_diag = Vec::with_capacity(n);
    for i in 0..n {
        let r = grid.node(i);
        let c = model.coeffs(r, t);
        if c.g00 >= 0.0 {
            return Err(Error::Precondition(format!(
                "g00 = {:.3e} ≥ 0 at r = {:.3}: model not uniformly time-like",
                c.g00, r
            )));
        }
        // W zeroth-order: g⁰⁰A₀² + V, plus the angular (centrifugal) term.
        let w0 = cr(c.g00) * c.a0 * c.a0 + c.v + cr(lfac / (r * r));
        kf.add_node_diag(i, cr(h) * w0);
        // B zeroth-order: 2A₀g⁰⁰.
        bf.add_node_diag(i, cr(h) * cr(2.0 * c.g00) * c.a0);
        m_diag.push(c.g00);
    }

    // Forms are h-scaled; the pencil stores operator scaling.
    let inv_h = cr(1.0 / h);
    Ok(Pencil {
        ell,
        k: kf.tri.scale(inv_h),
        b: bf.tri.scale(inv_h),
        m: m_diag,
        k_ghost: kf.ghost / h,
        b_ghost: bf.ghost / h,
        grid,
        t,
        r0: model.r0,
    })
}

/// First-order (Hamiltonian) reduction ℋ = (1/i)[[0, 1],[M⁻¹K, −iM⁻¹B]]
/// with the Dirichlet outer closure, so that ℋU = ωU exactly when
/// (K + ωB + ω²M)u = 0 and U = (u, iωu).
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub mat: Array2<C>,
    pub pencil: Pencil,
}

pub fn assemble_hamiltonian(pencil: &Pencil) -> Result<Hamiltonian> {
    let n = pencil.n();
    for &m in &pencil.m {
        if !(m < 0.0) {
            return Err(Error::Precondition(
                "pencil mass diagonal must be strictly negative".into(),
            ));
        }
    }
    let kd = pencil.k.to_dense();
    let bd = pencil.b.to_dense();
    let mut mat = Array2::from_elem((2 * n, 2 * n), ZERO);
    let minus_i = C::new(0.0, -1.0);
    for i in 0..n {
        // top-right block: (1/i)·I
        mat[[i, n + i]] = minus_i;
        let inv_m = 1.0 / pencil.m[i];
        for j in 0..n {
            // bottom-left: (1/i)M⁻¹K; bottom-right: (1/i)(−i)M⁻¹B = −M⁻¹B
            mat[[n + i, j]] = minus_i * cr(inv_m) * kd[[i, j]];
            mat[[n + i, n + j]] = -cr(inv_m) * bd[[i, j]];
        }
    }
    Ok(Hamiltonian {
        mat,
        pencil: pencil.clone(),
    })
}

/// The energy inner product ⟨U,Ψ⟩_E = ⟨P₀U₀,Ψ₀⟩ − ⟨g⁰⁰U₁,Ψ₁⟩ in grid
/// quadrature, stored in banded blocks. For models with a symmetry defect
/// the Hermitian part of P₀ is used, so the Gram form is always Hermitian.
#[derive(Debug, Clone)]
pub struct EnergyForm {
    /// h·(K + K†)/2 with Dirichlet closure (form scaling).
    pub k_form: Tridiag,
    /// −h·g⁰⁰ node values (positive).
    pub m_form: Vec<f64>,
}

impl EnergyForm {
    pub fn n(&self) -> usize {
        self.m_form.len()
    }

    /// ⟨U, Ψ⟩_E for 2n-states (sesquilinear, conjugate-linear in Ψ).
    pub fn inner(&self, u: &[C], psi: &[C]) -> C {
        let n = self.n();
        assert_eq!(u.len(), 2 * n);
        assert_eq!(psi.len(), 2 * n);
        let ku = self.k_form.matvec(&u[..n]);
        let mut acc = ZERO;
        for i in 0..n {
            acc += psi[i].conj() * ku[i];
            acc += psi[n + i].conj() * cr(self.m_form[i]) * u[n + i];
        }
        acc
    }

    /// E[U] = ⟨U,U⟩_E (real up to roundoff).
    pub fn quad(&self, u: &[C]) -> f64 {
        self.inner(u, u).re
    }

    pub fn gram_dense(&self) -> Array2<C> {
        let n = self.n();
        let mut g = Array2::from_elem((2 * n, 2 * n), ZERO);
        let kd = self.k_form.to_dense();
        for i in 0..n {
            for j in 0..n {
                g[[i, j]] = kd[[i, j]];
            }
            g[[n + i, n + i]] = cr(self.m_form[i]);
        }
        g
    }
}

pub fn energy_form(pencil: &Pencil) -> EnergyForm {
    let h = pencil.grid.h;
    let n = pencil.n();
    let kh = pencil.k.scale(cr(h));
    let kh_adj = kh.adjoint();
    let k_form = kh.add_scaled(cr(1.0), &kh_adj).scale(cr(0.5));
    let m_form = (0..n).map(|i| -h * pencil.m[i]).collect();
    EnergyForm { k_form, m_form }
}
