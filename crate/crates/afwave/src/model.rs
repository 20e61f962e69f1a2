//! Asymptotically flat operator instances: radial coefficient families with
//! optional time modulation, the dyadic weighted norms quantifying flatness,
//! frequency envelopes, and the ray-sampling nontrapping diagnostic.

use crate::error::{Error, Result};
use crate::rays;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which coefficient of the operator a field perturbs. Metric kinds store the
/// deviation from the flat values g⁰⁰ = −1, g⁰ʳ = 0, gʳʳ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    MetricTt,
    MetricTr,
    MetricRr,
    MagneticT,
    MagneticR,
    Potential,
}

impl CoefficientKind {
    pub fn is_metric(self) -> bool {
        matches!(
            self,
            CoefficientKind::MetricTt | CoefficientKind::MetricTr | CoefficientKind::MetricRr
        )
    }

    pub fn is_magnetic(self) -> bool {
        matches!(self, CoefficientKind::MagneticT | CoefficientKind::MagneticR)
    }
}

/// Closed-form radial profile with two computable derivatives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Profile {
    /// a·ψ((r−r_c)/(3w)) with the mollifier ψ(s) = exp(1 − 1/(1−s²)) on
    /// |s| < 1, zero outside: amplitude a at the center, support exactly
    /// |r − r_c| < 3w.
    Bump { a: f64, r_c: f64, w: f64 },
    /// a·⟨r⟩^{−p} = a·(1+r²)^{−p/2}.
    Power { a: f64, p: f64 },
}

fn mollifier_jet(s: f64) -> [f64; 3] {
    if s.abs() >= 1.0 - 1e-12 {
        return [0.0; 3];
    }
    let e = 1.0 - s * s;
    let psi = (1.0 - 1.0 / e).exp();
    let d1 = psi * (-2.0 * s) / (e * e);
    let d2 = psi * ((2.0 * s / (e * e)).powi(2) - 2.0 * (1.0 + 3.0 * s * s) / (e * e * e));
    [psi, d1, d2]
}

impl Profile {
    /// (f, f′, f″) at radius r.
    pub fn jet(&self, r: f64) -> [f64; 3] {
        match *self {
            Profile::Bump { a, r_c, w } => {
                let s = (r - r_c) / (3.0 * w);
                let [p, p1, p2] = mollifier_jet(s);
                [a * p, a * p1 / (3.0 * w), a * p2 / (9.0 * w * w)]
            }
            Profile::Power { a, p } => {
                let q = 1.0 + r * r;
                let f = a * q.powf(-p / 2.0);
                let d1 = -a * p * r * q.powf(-p / 2.0 - 1.0);
                let d2 = -a * p * q.powf(-p / 2.0 - 2.0) * (1.0 - (p + 1.0) * r * r);
                [f, d1, d2]
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.jet(r)[0]
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Profile::Bump { a, .. } => a,
            Profile::Power { a, .. } => a,
        }
    }

    /// Same shape with amplitude 1 (carrier for the imaginary part).
    pub fn unit(&self) -> Profile {
        match *self {
            Profile::Bump { r_c, w, .. } => Profile::Bump { a: 1.0, r_c, w },
            Profile::Power { p, .. } => Profile::Power { a: 1.0, p },
        }
    }

    /// Outer edge of the support for compactly supported shapes.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            Profile::Bump { r_c, w, .. } => Some(r_c + 3.0 * w),
            Profile::Power { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Bump { a, r_c, w } => a.is_finite() && r_c.is_finite() && r_c >= 0.0 && w > 0.0,
            Profile::Power { a, p } => a.is_finite() && p > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("malformed profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TimeModulation {
    None,
    /// Multiplies the profile by cos(rate·t).
    Sinusoidal { rate: f64 },
}

impl TimeModulation {
    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            TimeModulation::None => 1.0,
            TimeModulation::Sinusoidal { rate } => (rate * t).cos(),
        }
    }

    pub fn dfactor(&self, t: f64) -> f64 {
        match *self {
            TimeModulation::None => 0.0,
            TimeModulation::Sinusoidal { rate } => -rate * (rate * t).sin(),
        }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            TimeModulation::None => 0.0,
            TimeModulation::Sinusoidal { rate } => rate,
        }
    }
}

/// One radial coefficient perturbation. The complex value at (r, t) is
/// (profile(r) + i·imaginary_amplitude·unit_profile(r))·modulation(t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientField {
    pub kind: CoefficientKind,
    pub profile: Profile,
    pub time_modulation: TimeModulation,
    pub imaginary_amplitude: f64,
}

impl CoefficientField {
    pub fn stationary(kind: CoefficientKind, profile: Profile) -> Self {
        CoefficientField {
            kind,
            profile,
            time_modulation: TimeModulation::None,
            imaginary_amplitude: 0.0,
        }
    }

    /// Spatial jet (f, f′, f″) without the time factor; real part from the
    /// profile, imaginary part riding on the unit-amplitude shape.
    pub fn jet(&self, r: f64) -> [C; 3] {
        let re = self.profile.jet(r);
        if self.imaginary_amplitude == 0.0 {
            [C::new(re[0], 0.0), C::new(re[1], 0.0), C::new(re[2], 0.0)]
        } else {
            let im = self.profile.unit().jet(r);
            let k = self.imaginary_amplitude;
            [
                C::new(re[0], k * im[0]),
                C::new(re[1], k * im[1]),
                C::new(re[2], k * im[2]),
            ]
        }
    }

    pub fn value(&self, r: f64, t: f64) -> C {
        self.jet(r)[0] * self.time_modulation.factor(t)
    }

    pub fn value_dt(&self, r: f64, t: f64) -> C {
        self.jet(r)[0] * self.time_modulation.dfactor(t)
    }
}

/// Frequency envelope over dyadic annuli A_k = {2^k ≤ r < 2^{k+1}},
/// k = k0 … k0 + values.len() − 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyEnvelope {
    pub k0: i32,
    pub values: Vec<f64>,
    pub delta: f64,
}

impl FrequencyEnvelope {
    /// Minimal envelope dominating the raw dyadic contributions d_k:
    /// c_k = max_j 2^{−δ|j−k|} d_j. Slowly varying by construction.
    pub fn from_dyadic(k0: i32, raw: &[f64], delta: f64) -> Self {
        let n = raw.len();
        let values = (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| raw[j] * 2f64.powf(-delta * (j as f64 - k as f64).abs()))
                    .fold(0.0, f64::max)
            })
            .collect();
        FrequencyEnvelope { k0, values, delta }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// 2^{−δ|j−k|} ≤ c_k/c_j ≤ 2^{δ|j−k|} for all pairs (zeros allowed only
    /// if the whole envelope vanishes).
    pub fn is_slowly_varying(&self, tol: f64) -> bool {
        let n = self.values.len();
        if self.values.iter().all(|&c| c == 0.0) {
            return true;
        }
        for k in 0..n {
            for j in 0..n {
                let (ck, cj) = (self.values[k], self.values[j]);
                if cj == 0.0 {
                    return false;
                }
                let bound = 2f64.powf(self.delta * (k as f64 - j as f64).abs());
                if ck / cj > bound * (1.0 + tol) {
                    return false;
                }
            }
        }
        true
    }
}

/// Library smallness threshold for the AF norm beyond R₀ ("small but
/// universal"); configurable at call sites, this is the default.
pub const SMALLNESS_C: f64 = 0.1;

/// Default slow-variation exponent for constructed envelopes.
pub const ENVELOPE_DELTA: f64 = 0.25;

/// An asymptotically flat radial background: coefficient perturbations plus
/// the quantitative parameters (R₀, M₀) and a frequency envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AFModel {
    pub coefficients: Vec<CoefficientField>,
    pub r0: f64,
    pub m0: f64,
    pub envelope: FrequencyEnvelope,
}

/// Pointwise coefficient values entering the operator: full metric entries
/// (flat part included) and complex lower-order terms.
#[derive(Debug, Clone, Copy)]
pub struct Coeffs {
    pub g00: f64,
    pub g0r: f64,
    pub grr: f64,
    pub a0: C,
    pub ar: C,
    pub v: C,
}

/// Metric values with radial and time derivatives, for ray tracing.
#[derive(Debug, Clone, Copy)]
pub struct MetricJet {
    pub g00: f64,
    pub g0r: f64,
    pub grr: f64,
    pub dr: [f64; 3],
    pub dt: [f64; 3],
}

impl AFModel {
    /// Build a model, deriving M₀ (declared AF bound) and the frequency
    /// envelope from the coefficients themselves.
    pub fn new(coefficients: Vec<CoefficientField>, r0: f64, delta: f64) -> Result<AFModel> {
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::Config(format!("R0 must be positive, got {r0}")));
        }
        for f in &coefficients {
            f.profile.validate()?;
            if f.imaginary_amplitude < 0.0 || !f.imaginary_amplitude.is_finite() {
                return Err(Error::Config(
                    "imaginary_amplitude must be a finite nonnegative real".into(),
                ));
            }
            if f.kind.is_metric() && f.imaginary_amplitude != 0.0 {
                return Err(Error::Config(
                    "metric coefficients must be real (imaginary_amplitude = 0)".into(),
                ));
            }
            if f.time_modulation.rate() < 0.0 {
                return Err(Error::Config("modulation rate must be nonnegative".into()));
            }
        }
        let mut model = AFModel {
            coefficients,
            r0,
            m0: 0.0,
            envelope: FrequencyEnvelope {
                k0: 0,
                values: vec![],
                delta,
            },
        };
        model.m0 = af_norm(&model, None) * (1.0 + 1e-9);
        model.envelope = model.build_envelope(delta);
        Ok(model)
    }

    fn build_envelope(&self, delta: f64) -> FrequencyEnvelope {
        let k0 = self.r0.log2().ceil() as i32;
        let mut raw = Vec::new();
        let mut k = k0;
        loop {
            let lo = 2f64.powi(k);
            let hi = 2.0 * lo;
            let (_, d) = region_contribution(&self.coefficients, lo, hi, -1.0, NormMode::Full);
            raw.push(d);
            k += 1;
            let len = raw.len();
            let total: f64 = raw.iter().sum();
            let negligible = d <= 1e-12 * total.max(1e-300);
            if (len >= 5 && negligible) || len >= 80 {
                break;
            }
        }
        while raw.len() > 5 && *raw.last().unwrap() == 0.0 && raw[raw.len() - 2] == 0.0 {
            raw.pop();
        }
        FrequencyEnvelope::from_dyadic(k0, &raw, delta)
    }

    /// Full coefficient values at (r, t).
    pub fn coeffs(&self, r: f64, t: f64) -> Coeffs {
        let mut c = Coeffs {
            g00: -1.0,
            g0r: 0.0,
            grr: 1.0,
            a0: C::new(0.0, 0.0),
            ar: C::new(0.0, 0.0),
            v: C::new(0.0, 0.0),
        };
        for f in &self.coefficients {
            let val = f.value(r, t);
            match f.kind {
                CoefficientKind::MetricTt => c.g00 += val.re,
                CoefficientKind::MetricTr => c.g0r += val.re,
                CoefficientKind::MetricRr => c.grr += val.re,
                CoefficientKind::MagneticT => c.a0 += val,
                CoefficientKind::MagneticR => c.ar += val,
                CoefficientKind::Potential => c.v += val,
            }
        }
        c
    }

    /// Time derivative of the coefficient values at (r, t).
    pub fn coeffs_dt(&self, r: f64, t: f64) -> Coeffs {
        let mut c = Coeffs {
            g00: 0.0,
            g0r: 0.0,
            grr: 0.0,
            a0: C::new(0.0, 0.0),
            ar: C::new(0.0, 0.0),
            v: C::new(0.0, 0.0),
        };
        for f in &self.coefficients {
            let val = f.value_dt(r, t);
            match f.kind {
                CoefficientKind::MetricTt => c.g00 += val.re,
                CoefficientKind::MetricTr => c.g0r += val.re,
                CoefficientKind::MetricRr => c.grr += val.re,
                CoefficientKind::MagneticT => c.a0 += val,
                CoefficientKind::MagneticR => c.ar += val,
                CoefficientKind::Potential => c.v += val,
            }
        }
        c
    }

    /// Metric entries with ∂_r and ∂_t, for the ray Hamiltonian.
    pub fn metric_jet(&self, r: f64, t: f64) -> MetricJet {
        let mut m = MetricJet {
            g00: -1.0,
            g0r: 0.0,
            grr: 1.0,
            dr: [0.0; 3],
            dt: [0.0; 3],
        };
        for f in &self.coefficients {
            if !f.kind.is_metric() {
                continue;
            }
            let jet = f.profile.jet(r);
            let fac = f.time_modulation.factor(t);
            let dfac = f.time_modulation.dfactor(t);
            let idx = match f.kind {
                CoefficientKind::MetricTt => 0,
                CoefficientKind::MetricTr => 1,
                _ => 2,
            };
            match idx {
                0 => m.g00 += jet[0] * fac,
                1 => m.g0r += jet[0] * fac,
                _ => m.grr += jet[0] * fac,
            }
            m.dr[idx] += jet[1] * fac;
            m.dt[idx] += jet[0] * dfac;
        }
        m
    }

    /// Radius beyond which the metric is flat to within 10⁻⁶ (bounds bump
    /// supports exactly; power tails by amplitude decay).
    pub fn metric_support_radius(&self) -> f64 {
        let mut r_max = 0.0f64;
        for f in &self.coefficients {
            if !f.kind.is_metric() {
                continue;
            }
            let r = match f.profile {
                Profile::Bump { r_c, w, .. } => r_c + 3.0 * w,
                Profile::Power { a, p } => {
                    let target = (a.abs() / 1e-6).max(1.0);
                    (target.powf(2.0 / p) - 1.0).max(0.0).sqrt()
                }
            };
            r_max = r_max.max(r);
        }
        r_max
    }

    /// Outer edge of all compact supports (any kind); power tails excluded.
    pub fn bump_support_radius(&self) -> f64 {
        self.coefficients
            .iter()
            .filter_map(|f| f.profile.support_radius())
            .fold(0.0, f64::max)
    }

    pub fn is_stationary(&self) -> bool {
        self.coefficients
            .iter()
            .all(|f| matches!(f.time_modulation, TimeModulation::None))
    }

    /// Slowest modulation period present, if any.
    pub fn min_modulation_rate(&self) -> Option<f64> {
        self.coefficients
            .iter()
            .filter_map(|f| match f.time_modulation {
                TimeModulation::Sinusoidal { rate } if rate > 0.0 => Some(rate),
                _ => None,
            })
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.min(r))))
    }

    pub fn max_modulation_rate(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|f| f.time_modulation.rate())
            .fold(0.0, f64::max)
    }

    /// Structural-hypothesis survey at `n` quasi-random sample points.
    pub fn check_hypotheses(&self, n: usize, seed: u64, smallness: f64) -> HypothesesReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r_hi = (2.0 * self.metric_support_radius()).max(4.0 * self.r0);
        let t_hi = match self.min_modulation_rate() {
            Some(rate) => 2.0 * std::f64::consts::PI / rate,
            None => 1.0,
        };
        let mut timelike_margin = f64::INFINITY;
        let mut spacelike_min = f64::INFINITY;
        for _ in 0..n {
            let r = rng.gen_range(0.0..r_hi);
            let t = rng.gen_range(0.0..t_hi);
            let c = self.coeffs(r, t);
            timelike_margin = timelike_margin.min(-c.g00);
            spacelike_min = spacelike_min.min(c.grr);
        }
        let af = af_norm(self, None);
        let af_tail = af_norm(self, Some(self.r0));
        HypothesesReport {
            timelike_margin,
            spacelike_min,
            af_norm: af,
            af_tail,
            smallness,
            envelope_sum: self.envelope.sum(),
            envelope_slowly_varying: self.envelope.is_slowly_varying(1e-9),
            samples: n,
        }
    }
}

/// Outcome of the sampled structural checks; individual predicates exposed so
/// callers can enforce exactly the hypotheses a given experiment needs.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesesReport {
    /// min over samples of −g⁰⁰ (must stay strictly positive: ∂_t time-like).
    pub timelike_margin: f64,
    /// min over samples of gʳʳ (must stay strictly positive: slices space-like).
    pub spacelike_min: f64,
    pub af_norm: f64,
    /// AF norm restricted to r > R₀.
    pub af_tail: f64,
    /// Threshold the tail norm is compared against.
    pub smallness: f64,
    pub envelope_sum: f64,
    pub envelope_slowly_varying: bool,
    pub samples: usize,
}

impl HypothesesReport {
    pub fn causal_structure_ok(&self) -> bool {
        self.timelike_margin > 0.0 && self.spacelike_min > 0.0
    }

    pub fn tail_small(&self) -> bool {
        self.af_tail <= self.smallness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormMode {
    /// The weighted norm of the coefficients themselves.
    Full,
    /// Norm of ∂_t applied to the coefficients (slow-variation measure).
    TimeDeriv,
    /// Norm of (0, Im A, Im V) (symmetry-defect measure).
    ImagOnly,
}

/// Term accumulators for one region: separate running suprema per weighted
/// derivative term, summed at the end (the sups of distinct terms do not mix).
#[derive(Default, Clone, Copy)]
struct RegionSups {
    // metric groups (tt, tr, rr): |h|, ⟨r⟩|∂h|, ⟨r⟩²|∂²h|
    metric: [[f64; 3]; 3],
    // magnetic groups (t, r): |⟨r⟩A|, ⟨r⟩|∂(⟨r⟩A)|
    magnetic: [[f64; 2]; 2],
    // potential: ⟨r⟩²|V|
    potential: f64,
}

impl RegionSups {
    fn total(&self) -> f64 {
        self.metric.iter().flatten().sum::<f64>()
            + self.magnetic.iter().flatten().sum::<f64>()
            + self.potential
    }
}

fn japanese_bracket(r: f64) -> f64 {
    (1.0 + r * r).sqrt()
}

/// Pointwise magnitudes |f|, |f′|, |f″ + (2/r)f′-type| for one coefficient
/// group at radius r, combining stationary fields coherently and modulated
/// fields by absolute value (the supremum over all times; an upper bound when
/// several incommensurate rates are present, which is the conservative
/// direction for hypothesis checking).
fn group_magnitudes(fields: &[&CoefficientField], r: f64, mode: NormMode) -> [f64; 3] {
    let mut stat = [C::new(0.0, 0.0); 3];
    let mut modsum = [0.0f64; 3];
    for f in fields {
        let jet = match mode {
            NormMode::Full => f.jet(r),
            NormMode::TimeDeriv => {
                let rate = f.time_modulation.rate();
                if rate == 0.0 {
                    continue;
                }
                let j = f.jet(r);
                [j[0] * rate, j[1] * rate, j[2] * rate]
            }
            NormMode::ImagOnly => {
                if f.imaginary_amplitude == 0.0 {
                    continue;
                }
                let im = f.profile.unit().jet(r);
                let k = f.imaginary_amplitude;
                [
                    C::new(k * im[0], 0.0),
                    C::new(k * im[1], 0.0),
                    C::new(k * im[2], 0.0),
                ]
            }
        };
        let modulated = !matches!(f.time_modulation, TimeModulation::None);
        if modulated || mode == NormMode::TimeDeriv {
            for i in 0..3 {
                modsum[i] += jet[i].norm();
            }
        } else {
            for i in 0..3 {
                stat[i] += jet[i];
            }
        }
    }
    [
        stat[0].norm() + modsum[0],
        stat[1].norm() + modsum[1],
        stat[2].norm() + modsum[2],
    ]
}

/// Update the running suprema with the integrand values at radius r.
fn accumulate_at(sups: &mut RegionSups, fields: &[CoefficientField], r: f64, mode: NormMode) {
    let w = japanese_bracket(r);
    let groups: [(usize, CoefficientKind); 3] = [
        (0, CoefficientKind::MetricTt),
        (1, CoefficientKind::MetricTr),
        (2, CoefficientKind::MetricRr),
    ];
    for (gi, kind) in groups {
        if mode == NormMode::ImagOnly {
            continue; // the defect measures (0, Im A, Im V) only
        }
        let members: Vec<&CoefficientField> =
            fields.iter().filter(|f| f.kind == kind).collect();
        if members.is_empty() {
            continue;
        }
        let m = group_magnitudes(&members, r, mode);
        // Radial bound for the full Hessian: |∂²f| ≤ |f″| + 2|f′|/r, with the
        // tangential part f′/r → f″(0) as r → 0 for smooth radial functions.
        let inv_r_d1 = if r > 1e-9 { m[1] / r } else { m[2] };
        sups.metric[gi][0] = sups.metric[gi][0].max(m[0]);
        sups.metric[gi][1] = sups.metric[gi][1].max(w * m[1]);
        sups.metric[gi][2] = sups.metric[gi][2].max(w * w * (m[2] + 2.0 * inv_r_d1));
    }
    let mag: [(usize, CoefficientKind); 2] = [
        (0, CoefficientKind::MagneticT),
        (1, CoefficientKind::MagneticR),
    ];
    for (gi, kind) in mag {
        let members: Vec<&CoefficientField> =
            fields.iter().filter(|f| f.kind == kind).collect();
        if members.is_empty() {
            continue;
        }
        let m = group_magnitudes(&members, r, mode);
        // q = ⟨r⟩A (treated as a scalar): |q| and ⟨r⟩|q′| with
        // q′ = (r/⟨r⟩)A + ⟨r⟩A′.
        let q = w * m[0];
        let q1 = (r / w) * m[0] + w * m[1];
        sups.magnetic[gi][0] = sups.magnetic[gi][0].max(q);
        sups.magnetic[gi][1] = sups.magnetic[gi][1].max(w * q1);
    }
    let members: Vec<&CoefficientField> = fields
        .iter()
        .filter(|f| f.kind == CoefficientKind::Potential)
        .collect();
    if !members.is_empty() {
        let m = group_magnitudes(&members, r, mode);
        sups.potential = sups.potential.max(w * w * m[0]);
    }
}

/// Supremum-based contribution of the region [lo, hi), by dense sampling
/// doubled until the change drops below 1%. Returns (restricted, full): the
/// sup over samples with r > cut, and over all samples. The mesh and the
/// stopping decision depend only on the unrestricted sups, so the restricted
/// values are exactly nested in the cutoff.
fn region_contribution(
    fields: &[CoefficientField],
    lo: f64,
    hi: f64,
    cut: f64,
    mode: NormMode,
) -> (f64, f64) {
    if hi <= lo || fields.is_empty() {
        return (0.0, 0.0);
    }
    let mut m = 64usize;
    let mut prev = -1.0f64;
    loop {
        let mut full = RegionSups::default();
        let mut kept = RegionSups::default();
        let restricting = cut >= lo;
        let mut visit = |r: f64| {
            accumulate_at(&mut full, fields, r, mode);
            if restricting && r > cut {
                accumulate_at(&mut kept, fields, r, mode);
            }
        };
        for i in 0..m {
            visit(lo + (hi - lo) * (i as f64) / (m as f64));
        }
        // Bump centers are the generic maxima; pin them into the sample set.
        for f in fields {
            if let Profile::Bump { r_c, .. } = f.profile {
                if r_c >= lo && r_c < hi {
                    visit(r_c);
                }
            }
        }
        let total = full.total();
        if (prev >= 0.0 && (total - prev).abs() <= 0.01 * total.max(1e-300)) || m >= 4096 {
            let restricted = if restricting { kept.total() } else { total };
            return (restricted, total);
        }
        prev = total;
        m *= 2;
    }
}

fn af_norm_mode(fields: &[CoefficientField], cutoff: Option<f64>, mode: NormMode) -> f64 {
    let cut = cutoff.unwrap_or(-1.0);
    let mut total = 0.0f64;
    let mut full_total = 0.0f64;
    // inner ball {r < 1}
    if cut < 1.0 {
        let (c, f) = region_contribution(fields, 0.0, 1.0, cut, mode);
        total += c;
        full_total += f;
    }
    // annuli {2^k ≤ r < 2^{k+1}}; the stop rule watches the unrestricted
    // contributions so the annulus set shrinks monotonically with the cutoff
    let mut negligible_run = 0;
    for k in 0..120 {
        let lo = 2f64.powi(k);
        let hi = 2.0 * lo;
        let (c, f) = region_contribution(fields, lo, hi, cut, mode);
        total += c;
        full_total += f;
        if f <= 1e-12 * full_total.max(1e-300) {
            negligible_run += 1;
            if negligible_run >= 3 {
                break;
            }
        } else {
            negligible_run = 0;
        }
    }
    total
}

/// The asymptotic-flatness norm of the model's coefficient perturbations,
/// optionally restricted to the tail {r > cutoff}: the ℓ¹-over-dyadic-regions
/// sum of weighted suprema Σ_{|α|≤2}⟨r⟩^{|α|}|∂^α h| for the metric,
/// Σ_{|α|≤1}⟨r⟩^{|α|}|∂^α(⟨r⟩A)| for the magnetic terms, and ⟨r⟩²|V| for the
/// potential.
pub fn af_norm(model: &AFModel, cutoff: Option<f64>) -> f64 {
    af_norm_mode(&model.coefficients, cutoff, NormMode::Full)
}

/// AF-norm size of ∂_t applied to the coefficients; zero iff stationary.
/// (The decomposition in the underlying definition is taken trivially, with
/// the whole perturbation in the time-differentiated part — an upper bound,
/// conservative for hypothesis checking.)
pub fn slow_variation(model: &AFModel) -> f64 {
    af_norm_mode(&model.coefficients, None, NormMode::TimeDeriv)
}

/// AF-norm size of (0, Im A, Im V); zero iff the lower-order terms are real.
pub fn symmetry_defect(model: &AFModel) -> f64 {
    af_norm_mode(&model.coefficients, None, NormMode::ImagOnly)
}

/// Sampled nontrapping diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct TrappingReport {
    /// Uniform sojourn bound: max time inside B(0, R₀) over escaped rays.
    pub t0: f64,
    /// Number of integrated null bicharacteristics.
    pub samples: usize,
    /// Worst sojourn over all rays, escaped or not.
    pub max_sojourn: f64,
    /// Per-ray escape flags (reached the escape radius moving outward).
    pub escaped: Vec<bool>,
    /// True if any ray failed to escape before the integration cap.
    pub possibly_trapping: bool,
}

/// Integrate `n_rays` null bicharacteristics launched from the sphere
/// r = R₀ with stratified angular momenta and both radial directions, and
/// report the time spent inside B(0, R₀).
pub fn trapping_time(model: &AFModel, n_rays: usize, cap: f64) -> Result<TrappingReport> {
    if n_rays == 0 {
        return Err(Error::Config("trapping_time needs at least one ray".into()));
    }
    if !(cap > 0.0) {
        return Err(Error::Config("integration cap must be positive".into()));
    }
    let outcomes = rays::trace_fan(model, n_rays, cap)?;
    let mut t0 = 0.0f64;
    let mut max_sojourn = 0.0f64;
    let mut escaped = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        max_sojourn = max_sojourn.max(o.sojourn);
        if o.escaped {
            t0 = t0.max(o.sojourn);
        }
        escaped.push(o.escaped);
    }
    let possibly_trapping = escaped.iter().any(|&e| !e);
    Ok(TrappingReport {
        t0,
        samples: outcomes.len(),
        max_sojourn,
        escaped,
        possibly_trapping,
    })
}

/// Ready-made backgrounds used across the test and experiment suite.
pub mod gallery {
    use super::*;

    /// Flat space: no perturbation at all.
    pub fn minkowski(r0: f64) -> AFModel {
        AFModel::new(vec![], r0, ENVELOPE_DELTA).expect("flat model is always valid")
    }

    /// Purely potential perturbation V = a·⟨r⟩^{−p}.
    pub fn potential_tail(a: f64, p: f64) -> AFModel {
        AFModel::new(
            vec![CoefficientField::stationary(
                CoefficientKind::Potential,
                Profile::Power { a, p },
            )],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("power tail model is valid")
    }

    /// Attractive compact potential well V = −depth·bump at the origin
    /// (width 1, support r < 3). Deep enough wells carry negative-spectrum
    /// growing modes.
    pub fn potential_well(depth: f64) -> AFModel {
        AFModel::new(
            vec![CoefficientField::stationary(
                CoefficientKind::Potential,
                Profile::Bump {
                    a: -depth,
                    r_c: 0.0,
                    w: 1.0,
                },
            )],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("well model is valid")
    }

    /// Small metric perturbation on g⁰⁰, nontrapping for |a| ≪ 1.
    pub fn gentle_metric_bump(a: f64) -> AFModel {
        AFModel::new(
            vec![CoefficientField::stationary(
                CoefficientKind::MetricTt,
                Profile::Bump {
                    a,
                    r_c: 1.0,
                    w: 1.0 / 3.0,
                },
            )],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("gentle bump model is valid")
    }

    /// Strong attractive metric well g⁰⁰ = −1 − 5·bump centered at r = 1:
    /// tangentially launched rays at the center oscillate in the well
    /// forever, so the ray survey flags the model as possibly trapping.
    pub fn strong_trapping() -> AFModel {
        AFModel::new(
            vec![CoefficientField::stationary(
                CoefficientKind::MetricTt,
                Profile::Bump {
                    a: -5.0,
                    r_c: 1.0,
                    w: 1.0 / 3.0,
                },
            )],
            1.0,
            ENVELOPE_DELTA,
        )
        .expect("trapping model is valid")
    }

    /// Mixed background exercising every pencil term: metric cross term,
    /// magnetic potentials, and a potential tail, all small.
    pub fn kitchen_sink(scale: f64) -> AFModel {
        AFModel::new(
            vec![
                CoefficientField::stationary(
                    CoefficientKind::MetricTt,
                    Profile::Bump {
                        a: -0.3 * scale,
                        r_c: 1.2,
                        w: 0.4,
                    },
                ),
                CoefficientField::stationary(
                    CoefficientKind::MetricTr,
                    Profile::Bump {
                        a: 0.15 * scale,
                        r_c: 1.5,
                        w: 0.4,
                    },
                ),
                CoefficientField::stationary(
                    CoefficientKind::MetricRr,
                    Profile::Bump {
                        a: 0.2 * scale,
                        r_c: 1.0,
                        w: 0.5,
                    },
                ),
                CoefficientField::stationary(
                    CoefficientKind::MagneticT,
                    Profile::Bump {
                        a: 0.1 * scale,
                        r_c: 1.0,
                        w: 0.5,
                    },
                ),
                CoefficientField::stationary(
                    CoefficientKind::MagneticR,
                    Profile::Bump {
                        a: 0.1 * scale,
                        r_c: 1.4,
                        w: 0.5,
                    },
                ),
                CoefficientField::stationary(
                    CoefficientKind::Potential,
                    Profile::Power {
                        a: 0.2 * scale,
                        p: 3.0,
                    },
                ),
            ],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("mixed model is valid")
    }

    /// Potential well with a non-real part: Im V = amp·bump shape.
    pub fn almost_symmetric_well(depth: f64, imag_amp: f64) -> AFModel {
        AFModel::new(
            vec![CoefficientField {
                kind: CoefficientKind::Potential,
                profile: Profile::Bump {
                    a: -depth,
                    r_c: 0.0,
                    w: 1.0,
                },
                time_modulation: TimeModulation::None,
                imaginary_amplitude: imag_amp,
            }],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("almost symmetric model is valid")
    }

    /// Deep stationary well plus a slow sinusoidal modulation of gʳʳ:
    /// the slowly-varying testbed for dichotomy experiments.
    pub fn modulated_well(depth: f64, eps_t: f64) -> AFModel {
        AFModel::new(
            vec![
                CoefficientField::stationary(
                    CoefficientKind::Potential,
                    Profile::Bump {
                        a: -depth,
                        r_c: 0.0,
                        w: 1.0,
                    },
                ),
                CoefficientField {
                    kind: CoefficientKind::MetricRr,
                    profile: Profile::Bump {
                        a: 0.1,
                        r_c: 1.0,
                        w: 0.5,
                    },
                    time_modulation: TimeModulation::Sinusoidal { rate: eps_t },
                    imaginary_amplitude: 0.0,
                },
            ],
            2.0,
            ENVELOPE_DELTA,
        )
        .expect("modulated model is valid")
    }

    /// Family of symmetric (real-coefficient) wells of increasing depth, each
    /// deep enough to carry at least one growing mode.
    pub fn symmetric_well_family() -> Vec<AFModel> {
        [6.0, 8.0, 10.0, 13.0, 16.0]
            .into_iter()
            .map(potential_well)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mollifier_jet_matches_finite_differences() {
        let h = 1e-5;
        for &s in &[0.0, 0.3, -0.55, 0.9] {
            let [f, d1, d2] = mollifier_jet(s);
            let fp = mollifier_jet(s + h)[0];
            let fm = mollifier_jet(s - h)[0];
            assert_relative_eq!(d1, (fp - fm) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-8);
            assert_relative_eq!(
                d2,
                (fp - 2.0 * f + fm) / (h * h),
                max_relative = 1e-4,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn power_jet_matches_finite_differences() {
        let p = Profile::Power { a: 0.7, p: 3.0 };
        let h = 1e-5;
        for &r in &[0.0, 0.5, 1.7, 8.0] {
            let [f, d1, d2] = p.jet(r);
            let fp = p.jet(r + h)[0];
            let fm = p.jet((r - h).max(0.0))[0];
            if r > h {
                assert_relative_eq!(d1, (fp - fm) / (2.0 * h), max_relative = 1e-5, epsilon = 1e-9);
                assert_relative_eq!(
                    d2,
                    (fp - 2.0 * f + fm) / (h * h),
                    max_relative = 1e-3,
                    epsilon = 1e-5
                );
            }
        }
    }

    #[test]
    fn bump_support_is_exact() {
        let b = Profile::Bump {
            a: 2.0,
            r_c: 1.0,
            w: 1.0 / 3.0,
        };
        assert_eq!(b.value(2.0), 0.0);
        assert_eq!(b.value(2.5), 0.0);
        assert!(b.value(1.0) == 2.0);
        assert!(b.value(1.9) > 0.0);
        assert_eq!(b.support_radius(), Some(2.0));
    }

    #[test]
    fn metric_fields_must_be_real() {
        let bad = AFModel::new(
            vec![CoefficientField {
                kind: CoefficientKind::MetricTt,
                profile: Profile::Bump {
                    a: 0.1,
                    r_c: 1.0,
                    w: 0.3,
                },
                time_modulation: TimeModulation::None,
                imaginary_amplitude: 0.5,
            }],
            2.0,
            ENVELOPE_DELTA,
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn envelope_from_dyadic_is_slowly_varying_and_dominates() {
        let raw = [0.5, 0.0, 0.02, 0.3, 0.0, 0.001];
        let env = FrequencyEnvelope::from_dyadic(1, &raw, 0.25);
        assert!(env.is_slowly_varying(1e-12));
        for (k, &d) in raw.iter().enumerate() {
            assert!(env.values[k] >= d);
        }
    }

    #[test]
    fn coeffs_sum_all_fields() {
        let m = gallery::kitchen_sink(1.0);
        let c = m.coeffs(1.2, 0.0);
        assert!(c.g00 < -1.0); // attractive tt bump deepens it
        assert!(c.grr > 1.0);
        assert!(c.v.re > 0.0);
        let j = m.metric_jet(1.2, 0.0);
        assert_relative_eq!(j.g00, c.g00);
        assert_relative_eq!(j.grr, c.grr);
        // stationary model: no time derivatives
        assert_eq!(j.dt, [0.0; 3]);
    }

    #[test]
    fn modulated_metric_jet_has_time_derivative() {
        let m = gallery::modulated_well(8.0, 0.05);
        let j = m.metric_jet(1.0, 7.0);
        let fd = (m.coeffs(1.0, 7.0 + 1e-5).grr - m.coeffs(1.0, 7.0 - 1e-5).grr) / 2e-5;
        assert_relative_eq!(j.dt[2], fd, max_relative = 1e-6, epsilon = 1e-10);
    }
}
