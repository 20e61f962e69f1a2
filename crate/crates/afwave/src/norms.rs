//! Discrete local-energy norms over the dyadic partition
//! {r < 1} ∪ {2^k ≤ r < 2^{k+1}}: LE (ℓ^∞-weighted), LE* (ℓ¹-weighted,
//! the dual scale), the derivative norm LE¹, plain L² and Ḣ¹, and the flat
//! derivative energy — on spatial slices and on space-time samples.
//!
//! All fields are v = r·u samples on the interior nodes of a [`RadialGrid`];
//! quadrature is trapezoidal (uniform h weights against the v(0) = 0 and
//! outer closures) in r, trapezoidal in t.

use crate::disc::RadialGrid;
use crate::error::{Error, Result};
use num_complex::Complex64 as C;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    /// sup_k 2^{−k/2} ‖·‖_{L²(A_k [× time])}
    #[serde(rename = "le")]
    LE,
    /// LE of (∂u, ⟨r⟩⁻¹u)
    #[serde(rename = "le1")]
    LE1,
    /// Σ_k 2^{+k/2} ‖·‖_{L²(A_k [× time])}
    #[serde(rename = "lestar")]
    LEstar,
    /// ‖∇u‖_{L²} (radial + angular parts)
    #[serde(rename = "h1dot")]
    H1dot,
    #[serde(rename = "l2")]
    L2,
    /// Flat derivative energy ‖(∇u, u_t)‖_{L²} of a 2n-state.
    #[serde(rename = "energy")]
    Energy,
}

/// Optional radial truncation applied to the integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Restriction {
    None,
    /// Keep samples with r > R only (the _{>R} exterior norms).
    Beyond(f64),
    /// Single annulus {R ≤ r < 2R} with weight R^{∓1/2} (the _R norms).
    SingleAnnulus(f64),
}

/// A measurable norm on grid fields.
#[derive(Debug, Clone)]
pub struct NormFunctional {
    pub kind: NormKind,
    pub grid: RadialGrid,
    /// Angular mode, entering through the angular derivative ℓ(ℓ+1)/r²|u|².
    pub ell: usize,
    pub restriction: Restriction,
}

/// Field data a norm can be applied to. Spatial variants hold n samples of
/// v; `State` holds 2n samples (v, ∂_t v); `Series`/`StateSeries` hold
/// uniformly spaced time slices.
pub enum Field<'a> {
    Spatial(&'a [C]),
    State(&'a [C]),
    Series { slices: &'a [Vec<C>], dt: f64 },
    StateSeries { states: &'a [Vec<C>], dt: f64 },
}

/// One region of the dyadic partition: `label` −1 is the inner ball, k ≥ 0
/// the annulus {2^k ≤ r < 2^{k+1}}.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegionContribution {
    pub label: i32,
    /// Unweighted L² mass of the region (squared).
    pub mass_sq: f64,
    /// Weighted contribution as it enters the norm.
    pub weighted: f64,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    label: i32,
    lo: f64,
    hi: f64,
}

fn dyadic_regions(r_max: f64) -> Vec<Region> {
    let mut regions = vec![Region {
        label: -1,
        lo: 0.0,
        hi: 1.0,
    }];
    let mut k = 0i32;
    while 2f64.powi(k) < r_max {
        regions.push(Region {
            label: k,
            lo: 2f64.powi(k),
            hi: 2f64.powi(k + 1),
        });
        k += 1;
    }
    regions
}

impl NormFunctional {
    pub fn new(kind: NormKind, grid: RadialGrid, ell: usize) -> Self {
        NormFunctional {
            kind,
            grid,
            ell,
            restriction: Restriction::None,
        }
    }

    pub fn with_restriction(mut self, r: Restriction) -> Self {
        self.restriction = r;
        self
    }

    fn regions(&self) -> Vec<Region> {
        match self.restriction {
            Restriction::SingleAnnulus(r) => vec![Region {
                label: 0,
                lo: r,
                hi: 2.0 * r,
            }],
            _ => dyadic_regions(self.grid.r_max()),
        }
    }

    /// LE-side weight of a region (2^{−k/2}, ball weight 1, single annulus
    /// R^{−1/2}); the LE* weight is its reciprocal.
    fn le_weight(&self, region: &Region) -> f64 {
        match self.restriction {
            Restriction::SingleAnnulus(r) => r.powf(-0.5),
            _ => {
                if region.label < 0 {
                    1.0
                } else {
                    2f64.powf(-(region.label as f64) / 2.0)
                }
            }
        }
    }

    fn cutoff(&self) -> f64 {
        match self.restriction {
            Restriction::Beyond(r) => r,
            _ => 0.0,
        }
    }

    /// Squared region mass of a spatial slice for this norm's integrand.
    fn slice_region_mass(&self, v: &[C], vt: Option<&[C]>, region: &Region) -> f64 {
        let grid = &self.grid;
        let n = grid.n;
        let h = grid.h;
        let cut = self.cutoff();
        let lo = region.lo;
        let hi = region.hi;
        let mut acc = 0.0f64;
        let node_terms = |i: usize, r: f64| -> f64 {
            match self.kind {
                NormKind::LE | NormKind::LEstar | NormKind::L2 => v[i].norm_sqr(),
                NormKind::LE1 => {
                    let mut s = v[i].norm_sqr() / (1.0 + r * r); // ⟨r⟩⁻¹u
                    s += (self.ell * (self.ell + 1)) as f64 / (r * r) * v[i].norm_sqr();
                    if let Some(w) = vt {
                        s += w[i].norm_sqr();
                    }
                    s
                }
                NormKind::H1dot | NormKind::Energy => {
                    let mut s = (self.ell * (self.ell + 1)) as f64 / (r * r) * v[i].norm_sqr();
                    if self.kind == NormKind::Energy {
                        if let Some(w) = vt {
                            s += w[i].norm_sqr();
                        }
                    }
                    s
                }
            }
        };
        for i in 0..n {
            let r = grid.node(i);
            if r >= lo && r < hi && r > cut {
                acc += h * node_terms(i, r);
            }
        }
        // Radial-derivative cells for the derivative norms, assigned by
        // midpoint. |∂_r u|² = |v′ − v/r|² in the reduced variable; the
        // outermost (ghost) cell is excluded.
        if matches!(self.kind, NormKind::LE1 | NormKind::H1dot | NormKind::Energy) {
            for j in 0..n {
                let rm = grid.midpoint(j);
                if rm >= lo && rm < hi && rm > cut {
                    let vl = if j == 0 { C::new(0.0, 0.0) } else { v[j - 1] };
                    let vr = v[j];
                    let dv = (vr - vl) / h;
                    let av = (vr + vl) * 0.5;
                    acc += h * (dv - av / rm).norm_sqr();
                }
            }
        }
        acc
    }

    fn check_shape(&self, field: &Field) -> Result<()> {
        let n = self.grid.n;
        let want_state = matches!(self.kind, NormKind::Energy);
        let ok = match field {
            Field::Spatial(v) => v.len() == n && !want_state,
            Field::State(u) => u.len() == 2 * n,
            Field::Series { slices, .. } => {
                !want_state && slices.iter().all(|s| s.len() == n) && !slices.is_empty()
            }
            Field::StateSeries { states, .. } => {
                states.iter().all(|s| s.len() == 2 * n) && !states.is_empty()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: if want_state { 2 * n } else { n },
                got: match field {
                    Field::Spatial(v) => v.len(),
                    Field::State(u) => u.len(),
                    Field::Series { slices, .. } => {
                        slices.first().map(|s| s.len()).unwrap_or(0)
                    }
                    Field::StateSeries { states, .. } => {
                        states.first().map(|s| s.len()).unwrap_or(0)
                    }
                },
            })
        }
    }

    /// Region masses (squared, time integrated for series) and weighted
    /// contributions.
    pub fn breakdown(&self, field: &Field) -> Result<Vec<RegionContribution>> {
        self.check_shape(field)?;
        let n = self.grid.n;
        let regions = self.regions();
        let mut out = Vec::with_capacity(regions.len());
        for region in &regions {
            let mass_sq = match field {
                Field::Spatial(v) => self.slice_region_mass(v, None, region),
                Field::State(u) => self.slice_region_mass(&u[..n], Some(&u[n..]), region),
                Field::Series { slices, dt } => {
                    trapezoid(slices.len(), *dt, |m| {
                        self.slice_region_mass(&slices[m], None, region)
                    })
                }
                Field::StateSeries { states, dt } => trapezoid(states.len(), *dt, |m| {
                    self.slice_region_mass(&states[m][..n], Some(&states[m][n..]), region)
                }),
            };
            let w = self.le_weight(region);
            let weighted = match self.kind {
                NormKind::LEstar => mass_sq.sqrt() / w,
                NormKind::LE | NormKind::LE1 => w * mass_sq.sqrt(),
                _ => mass_sq.sqrt(),
            };
            out.push(RegionContribution {
                label: region.label,
                mass_sq,
                weighted,
            });
        }
        Ok(out)
    }

    /// Evaluate the norm.
    pub fn apply(&self, field: &Field) -> Result<f64> {
        let parts = self.breakdown(field)?;
        let val = match self.kind {
            NormKind::LE | NormKind::LE1 => {
                parts.iter().map(|p| p.weighted).fold(0.0, f64::max)
            }
            NormKind::LEstar => parts.iter().map(|p| p.weighted).sum(),
            NormKind::L2 | NormKind::H1dot | NormKind::Energy => {
                parts.iter().map(|p| p.mass_sq).sum::<f64>().sqrt()
            }
        };
        Ok(val)
    }
}

/// Trapezoidal accumulation of f(m) over m = 0..count with spacing dt.
fn trapezoid(count: usize, dt: f64, f: impl Fn(usize) -> f64) -> f64 {
    if count == 1 {
        return f(0); // single slice: spatial value
    }
    let mut acc = 0.0;
    for m in 0..count {
        let w = if m == 0 || m + 1 == count { 0.5 } else { 1.0 };
        acc += w * dt * f(m);
    }
    acc
}

/// ∫ ‖f(t)‖_{L²} dt (trapezoidal), for n-dim slices.
pub fn l1l2(slices: &[Vec<C>], dt: f64, grid: &RadialGrid) -> f64 {
    let h = grid.h;
    trapezoid(slices.len(), dt, |m| {
        slices[m].iter().map(|z| h * z.norm_sqr()).sum::<f64>().sqrt()
    })
}

/// sup_t ‖·‖ of the flat derivative energy over 2n-states.
pub fn linf_energy(states: &[Vec<C>], functional: &NormFunctional) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in states {
        let e = functional.apply(&Field::State(s))?;
        worst = worst.max(e);
    }
    Ok(worst)
}

/// The sum space LE* + L¹L²: infimum over the splitting family
/// {0, ½, 1}·f, which collapses to min(‖f‖_{LE*}, ‖f‖_{L¹L²}) since the
/// midpoint splitting can never beat the better endpoint.
pub fn sum_space(slices: &[Vec<C>], dt: f64, functional: &NormFunctional) -> Result<f64> {
    if functional.kind != NormKind::LEstar {
        return Err(Error::Precondition(
            "sum_space expects an LEstar functional".into(),
        ));
    }
    let lestar = functional.apply(&Field::Series { slices, dt })?;
    let mut l1 = match functional.restriction {
        Restriction::None => l1l2(slices, dt, &functional.grid),
        Restriction::Beyond(cut) => {
            let h = functional.grid.h;
            trapezoid(slices.len(), dt, |m| {
                slices[m]
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| functional.grid.node(*i) > cut)
                    .map(|(_, z)| h * z.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
        }
        Restriction::SingleAnnulus(_) => f64::INFINITY,
    };
    if slices.len() == 1 {
        l1 = f64::INFINITY; // a spatial slice has no time integral
    }
    Ok(lestar.min(l1))
}
