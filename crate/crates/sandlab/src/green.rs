//! Avalanche propagators.
//!
//! Finite volume: G_L(x) = (1/n)[Δ_L⁻¹](0, x), evaluated as the Fourier
//! sum over the (2L+1)^d torus modes,
//!
//!   G_L(x) = (1/(n P^d)) Σ_k cos(2π x·k/P) / λ(k),
//!
//! with λ(k) the toppling-operator eigenvalue (imaginary parts cancel by
//! symmetry). Infinite volume:
//!
//!   G(x) = (1/(2dn)) ∫_0^∞ ds e^{-as} ∏_i [e^{-s/d} I_{x_i}(s/d)],
//!
//! using exponentially scaled Bessel factors so the integrand stays in
//! range, plus a d-dimensional tensor Gauss–Legendre route over the
//! Brillouin zone as an independent cross-check for d = 2, 3. Long
//! distances decay exponentially with
//!
//!   ξ(d, a) = 1/(√d asinh √(a(a+2))),  λ = √d/ξ,
//!   Ḡ(r) = (c₁/n) e^{-r/ξ} / r^{(d-1)/2}.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::bessel::scaled_bessel_vector;
use crate::error::{Result, SandlabError};
use crate::lattice::{Displacement, ModelParams};
use crate::quad::integrate_vec_seeded;

/// Smallest tolerance the infinite-volume evaluators accept.
pub const MIN_TOL: f64 = 1e-12;

/// How a Green table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenMethod {
    FiniteFourier { half_width: i64 },
    InfiniteBessel,
    InfiniteTensor,
}

impl GreenMethod {
    pub fn label(&self) -> String {
        match self {
            GreenMethod::FiniteFourier { half_width } => format!("finite_fourier(L={half_width})"),
            GreenMethod::InfiniteBessel => "infinite_bessel".into(),
            GreenMethod::InfiniteTensor => "infinite_tensor_quadrature".into(),
        }
    }
}

/// Table of propagator values keyed by displacement class.
///
/// G is even and symmetric under coordinate permutations and sign flips,
/// so entries are stored under the canonical representative (absolute
/// coordinates, descending); lookups reduce their argument first.
#[derive(Debug, Clone)]
pub struct GreenTable {
    dim: usize,
    dissipation_rate: f64,
    granularity: u64,
    method: GreenMethod,
    entries: HashMap<Displacement, (f64, f64)>,
}

impl GreenTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dissipation_rate(&self) -> f64 {
        self.dissipation_rate
    }

    pub fn granularity(&self) -> u64 {
        self.granularity
    }

    pub fn method(&self) -> GreenMethod {
        self.method
    }

    /// Lookup key: minimal image first on finite tori, then the isotropy
    /// class representative.
    fn key(&self, x: &Displacement) -> Displacement {
        match self.method {
            GreenMethod::FiniteFourier { half_width } => {
                let p = 2 * half_width + 1;
                Displacement::new(
                    x.coords()
                        .iter()
                        .map(|&c| (c.rem_euclid(p) + half_width) % p - half_width)
                        .collect(),
                )
                .canonical()
            }
            _ => x.canonical(),
        }
    }

    pub fn value(&self, x: &Displacement) -> Result<f64> {
        self.entries
            .get(&self.key(x))
            .map(|&(v, _)| v)
            .ok_or_else(|| SandlabError::MissingDisplacement(x.coords().to_vec()))
    }

    pub fn est_abs_error(&self, x: &Displacement) -> Result<f64> {
        self.entries
            .get(&self.key(x))
            .map(|&(_, e)| e)
            .ok_or_else(|| SandlabError::MissingDisplacement(x.coords().to_vec()))
    }

    /// Absorb another table built with the same parameters and method.
    /// Keeping magnitude-homogeneous batches separate and merging after
    /// lets each batch refine at its own scale.
    pub fn merge(&mut self, other: GreenTable) -> Result<()> {
        if self.dim != other.dim
            || self.granularity != other.granularity
            || self.dissipation_rate != other.dissipation_rate
            || self.method != other.method
        {
            return Err(SandlabError::Precondition(
                "cannot merge Green tables with different parameters".into(),
            ));
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    /// Entries sorted by coordinates, for CSV output.
    pub fn sorted_entries(&self) -> Vec<(Displacement, f64, f64)> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .map(|(k, &(v, e))| (k.clone(), v, e))
            .collect();
        out.sort_by(|a, b| a.0.coords().cmp(b.0.coords()));
        out
    }

    /// Finite-L Fourier table over the given displacements.
    pub fn build_finite(p: &ModelParams, displacements: &[Displacement]) -> Result<GreenTable> {
        let mut canon: Vec<Displacement> = Vec::new();
        for x in displacements {
            let c = p.min_image(x.coords())?.canonical();
            if !canon.contains(&c) {
                canon.push(c);
            }
        }
        let mut entries = HashMap::new();
        for c in canon {
            let v = green_finite(p, &c)?;
            let err = 1e-13 * v.abs().max(1.0 / p.dissipation() as f64);
            entries.insert(c, (v, err));
        }
        Ok(GreenTable {
            dim: p.dim(),
            dissipation_rate: p.dissipation_rate(),
            granularity: p.granularity(),
            method: GreenMethod::FiniteFourier {
                half_width: p.half_width(),
            },
            entries,
        })
    }

    /// Infinite-volume table via the scaled-Bessel integral; one shared
    /// quadrature pass over all displacement classes. Entries of very
    /// different magnitude should go in separate tables (the refinement
    /// pass targets the smallest entry of the batch).
    pub fn build_infinite(
        dim: usize,
        a: f64,
        granularity: u64,
        displacements: &[Displacement],
        tol: f64,
    ) -> Result<GreenTable> {
        check_infinite_pre(dim, a, tol)?;
        let mut canon: Vec<Displacement> = Vec::new();
        for x in displacements {
            if x.dim() != dim {
                return Err(SandlabError::LengthMismatch {
                    expected: dim,
                    got: x.dim(),
                });
            }
            let c = x.canonical();
            if !canon.contains(&c) {
                canon.push(c);
            }
        }
        let max_order = canon
            .iter()
            .flat_map(|c| c.coords().iter().map(|&v| v.unsigned_abs() as u32))
            .max()
            .unwrap_or(0);

        let s_max = tail_cutoff(dim, a, tol);
        let tail = tail_bound(dim, a, s_max);
        let prefactor = 1.0 / (2.0 * dim as f64 * granularity as f64);

        let integrand = |s: f64, out: &mut [f64]| {
            let bes = scaled_bessel_vector(max_order, s / dim as f64);
            let damp = (-a * s).exp();
            for (slot, c) in out.iter_mut().zip(canon.iter()) {
                let mut prod = damp;
                for &xi in c.coords() {
                    prod *= bes[xi.unsigned_abs() as usize];
                }
                *slot = prod;
            }
        };

        // dyadic seed panels: the integrand has O(1)-scale structure near
        // the origin and only slow exponential decay further out
        let mut seeds = vec![0.0f64];
        let mut t = 1.0;
        while t < s_max {
            seeds.push(t);
            t *= 2.0;
        }
        seeds.push(s_max);

        // raw-scale tolerance; a second pass tightens when the values turn
        // out to be far below the requested absolute tolerance
        let raw_tol = 0.8 * tol / prefactor;
        let (mut values, mut errs) =
            integrate_vec_seeded(integrand, canon.len(), &seeds, raw_tol)?;
        let vmax = values.iter().cloned().fold(0.0, f64::max);
        let vmin_pos = values
            .iter()
            .cloned()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if vmin_pos.is_finite() && errs.iter().cloned().fold(0.0, f64::max) > 1e-11 * vmin_pos {
            let tol2 = (1e-13 * vmin_pos).max(1e-16 * vmax).min(raw_tol);
            if tol2 > 0.0 {
                if let Ok((v2, e2)) = integrate_vec_seeded(integrand, canon.len(), &seeds, tol2) {
                    values = v2;
                    errs = e2;
                }
            }
        }

        let entries = canon
            .into_iter()
            .zip(values.iter().zip(errs.iter()))
            .map(|(c, (&v, &e))| (c, (prefactor * v, prefactor * (e + tail))))
            .collect();
        Ok(GreenTable {
            dim,
            dissipation_rate: a,
            granularity,
            method: GreenMethod::InfiniteBessel,
            entries,
        })
    }

    /// Tensor Gauss–Legendre evaluation over the Brillouin zone; d = 2, 3
    /// only. Kept as an independent route against the Bessel integral.
    pub fn build_infinite_tensor(
        dim: usize,
        a: f64,
        granularity: u64,
        displacements: &[Displacement],
        tol: f64,
    ) -> Result<GreenTable> {
        let mut entries = HashMap::new();
        for x in displacements {
            let c = x.canonical();
            if entries.contains_key(&c) {
                continue;
            }
            let (v, e) = green_infinite_tensor(dim, a, granularity, &c, tol)?;
            entries.insert(c, (v, e));
        }
        Ok(GreenTable {
            dim,
            dissipation_rate: a,
            granularity,
            method: GreenMethod::InfiniteTensor,
            entries,
        })
    }
}

fn check_infinite_pre(dim: usize, a: f64, tol: f64) -> Result<()> {
    if dim < 2 {
        return Err(SandlabError::Precondition("dimension must be ≥ 2".into()));
    }
    if !(a > 0.0) {
        return Err(SandlabError::Precondition(
            "dissipation rate a must be positive".into(),
        ));
    }
    if tol < MIN_TOL {
        return Err(SandlabError::Precondition(format!(
            "tolerance {tol} below the supported minimum {MIN_TOL}"
        )));
    }
    Ok(())
}

/// Tail of the scaled-Bessel integral beyond S: e^{-aS}/(a S^{d/2}).
fn tail_bound(dim: usize, a: f64, s: f64) -> f64 {
    (-a * s).exp() / (a * s.powf(dim as f64 / 2.0))
}

fn tail_cutoff(dim: usize, a: f64, tol: f64) -> f64 {
    let mut s = (40.0 / a).max(50.0);
    while tail_bound(dim, a, s) >= 0.1 * tol {
        s *= 1.25;
    }
    s
}

/// Finite-L propagator by the torus Fourier sum. The displacement is
/// reduced to its canonical class first, so symmetric arguments evaluate
/// the bit-identical sum.
pub fn green_finite(p: &ModelParams, x: &Displacement) -> Result<f64> {
    let c = p.min_image(x.coords())?.canonical();
    let dim = p.dim();
    let period = p.period();
    let pf = period as f64;
    // per-axis tables over k = -L..L (index k+L)
    let sin2: Vec<f64> = (-p.half_width()..=p.half_width())
        .map(|k| {
            let t = (PI * k as f64 / pf).sin();
            4.0 * t * t
        })
        .collect();
    let cos_table: Vec<f64> = (0..period).map(|q| (2.0 * PI * q as f64 / pf).cos()).collect();
    let a0 = p.dissipation() as f64 / p.granularity() as f64;

    let mut total = 0.0;
    let mut counter = vec![0usize; dim];
    loop {
        let mut lam = a0;
        let mut phase: i64 = 0;
        for (i, &ci) in counter.iter().enumerate() {
            lam += sin2[ci];
            phase += c.coords()[i] * (ci as i64 - p.half_width());
        }
        total += cos_table[phase.rem_euclid(period) as usize] / lam;
        let mut i = dim;
        loop {
            if i == 0 {
                return Ok(total / (p.granularity() as f64 * p.sites() as f64));
            }
            i -= 1;
            counter[i] += 1;
            if counter[i] < sin2.len() {
                break;
            }
            counter[i] = 0;
        }
    }
}

/// Infinite-volume propagator via the 1-D scaled-Bessel integral.
/// Returns (value, estimated absolute error).
pub fn green_infinite(
    dim: usize,
    a: f64,
    granularity: u64,
    x: &Displacement,
    tol: f64,
) -> Result<(f64, f64)> {
    let table = GreenTable::build_infinite(dim, a, granularity, std::slice::from_ref(x), tol)?;
    Ok((table.value(x)?, table.est_abs_error(x)?))
}

/// Tensor-quadrature route: nested adaptive Gauss–Legendre over [0, π]^d
/// of ∏ cos(x_i θ_i) / [a + (1/d) Σ (1 - cos θ_i)].
pub fn green_infinite_tensor(
    dim: usize,
    a: f64,
    granularity: u64,
    x: &Displacement,
    tol: f64,
) -> Result<(f64, f64)> {
    check_infinite_pre(dim, a, tol)?;
    if !(2..=3).contains(&dim) {
        return Err(SandlabError::Precondition(
            "tensor quadrature route supports d = 2, 3 only".into(),
        ));
    }
    if x.dim() != dim {
        return Err(SandlabError::LengthMismatch {
            expected: dim,
            got: x.dim(),
        });
    }
    let prefactor = 1.0 / (2.0 * dim as f64 * granularity as f64 * PI.powi(dim as i32));
    let raw_tol = 0.5 * tol / prefactor;
    let coords: Vec<f64> = x.coords().iter().map(|&c| c as f64).collect();
    let (raw, raw_err) = tensor_level(&coords, a, dim, &mut Vec::new(), raw_tol)?;
    Ok((prefactor * raw, prefactor * raw_err + 0.5 * tol))
}

/// Scalar θ-integral over [0, π] with panels graded toward the origin,
/// where the Brillouin-zone denominator concentrates for small a.
fn integrate_theta<F: FnMut(f64) -> f64>(mut f: F, abs_tol: f64) -> Result<(f64, f64)> {
    const SEEDS: [f64; 7] = [0.0, 0.02, 0.08, 0.3, 1.0, 2.0, PI];
    let (v, e) = integrate_vec_seeded(|x, out| out[0] = f(x), 1, &SEEDS, abs_tol)?;
    Ok((v[0], e[0]))
}

/// One nesting level of the tensor integral; integrates the next θ with
/// the remaining levels evaluated recursively.
fn tensor_level(
    x: &[f64],
    a: f64,
    dim: usize,
    fixed: &mut Vec<f64>,
    raw_tol: f64,
) -> Result<(f64, f64)> {
    let level = fixed.len();
    if level == dim {
        // integrand proper
        let mut num = 1.0;
        let mut denom = a;
        for (i, &theta) in fixed.iter().enumerate() {
            num *= (x[i] * theta).cos();
            denom += (1.0 - theta.cos()) / dim as f64;
        }
        return Ok((num / denom, 0.0));
    }
    // nested levels get a share of the budget shrunk by the remaining volume
    let inner_tol = raw_tol / (4.0 * PI.powi((dim - level) as i32 - 1)).max(1.0);
    let mut worst_inner_err = 0.0f64;
    let mut inner_failure: Option<SandlabError> = None;
    let (v, e) = integrate_theta(
        |theta| {
            fixed.push(theta);
            let r = tensor_level(x, a, dim, fixed, inner_tol);
            fixed.pop();
            match r {
                Ok((val, err)) => {
                    worst_inner_err = worst_inner_err.max(err);
                    val
                }
                Err(err) => {
                    if inner_failure.is_none() {
                        inner_failure = Some(err);
                    }
                    f64::NAN
                }
            }
        },
        raw_tol,
    )?;
    if let Some(err) = inner_failure {
        return Err(err);
    }
    Ok((v, e + PI * worst_inner_err))
}

/// γ̄(d): the a → 0 limit of g0 - g3 = n[G(0) - G(e₁+e₂)], evaluated as
/// the regularized Brillouin-zone integral with numerator
/// 1 - cos θ₁ cos θ₂ (the odd part drops by symmetry). When
/// `double_phase` is set, the numerator uses the doubled angles instead
/// (both variants are reported by the scaling checks).
pub fn gamma_bar(dim: usize, double_phase: bool, tol: f64) -> Result<f64> {
    if !(2..=3).contains(&dim) {
        return Err(SandlabError::Precondition(
            "gamma_bar supports d = 2, 3 only".into(),
        ));
    }
    let mult = if double_phase { 2.0 } else { 1.0 };
    let prefactor = 1.0 / (2.0 * dim as f64 * PI.powi(dim as i32));
    let raw_tol = 0.5 * tol / prefactor;
    let (raw, _) = gamma_bar_level(dim, mult, &mut Vec::new(), raw_tol)?;
    Ok(prefactor * raw)
}

fn gamma_bar_level(
    dim: usize,
    mult: f64,
    fixed: &mut Vec<f64>,
    raw_tol: f64,
) -> Result<(f64, f64)> {
    let level = fixed.len();
    if level == dim {
        let num = 1.0 - (mult * fixed[0]).cos() * (mult * fixed[1]).cos();
        let mut denom = 0.0;
        for &theta in fixed.iter() {
            denom += (1.0 - theta.cos()) / dim as f64;
        }
        // bounded ratio; the origin is a removable direction-dependent point
        if denom == 0.0 {
            return Ok((0.0, 0.0));
        }
        return Ok((num / denom, 0.0));
    }
    let inner_tol = raw_tol / (4.0 * PI.powi((dim - level) as i32 - 1)).max(1.0);
    let mut worst_inner_err = 0.0f64;
    let (v, e) = integrate_theta(
        |theta| {
            fixed.push(theta);
            let r = gamma_bar_level(dim, mult, fixed, inner_tol);
            fixed.pop();
            match r {
                Ok((val, err)) => {
                    worst_inner_err = worst_inner_err.max(err);
                    val
                }
                Err(_) => f64::NAN,
            }
        },
        raw_tol,
    )?;
    Ok((v, e + PI * worst_inner_err))
}

/// Long-distance decay parameters of the diagonal asymptotics.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticParams {
    pub dim: usize,
    pub dissipation_rate: f64,
    /// Correlation length ξ(d, a) = 1/(√d asinh √(a(a+2))).
    pub xi: f64,
    /// λ(a) = √d/ξ = asinh √(a(a+2)), independent of d.
    pub lambda: f64,
    /// Prefactor c₁(d, a).
    pub c1: f64,
}

pub fn asymptotic_params(dim: usize, a: f64) -> AsymptoticParams {
    assert!(a > 0.0 && dim >= 2);
    let lambda = (a * (a + 2.0)).sqrt().asinh();
    let xi = 1.0 / ((dim as f64).sqrt() * lambda);
    let c1 = 1.0 / (4.0 * PI * (a + 1.0))
        * ((a * (a + 2.0) * dim as f64).sqrt() / (2.0 * PI * (a + 1.0)))
            .powf((dim as f64 - 3.0) / 2.0);
    AsymptoticParams {
        dim,
        dissipation_rate: a,
        xi,
        lambda,
        c1,
    }
}

/// Asymptotic propagator along the diagonal: Ḡ(r) = (c₁/n) e^{-r/ξ} / r^{(d-1)/2}.
pub fn gbar(r: f64, ap: &AsymptoticParams, granularity: u64) -> f64 {
    assert!(r > 0.0);
    ap.c1 / granularity as f64 * (-r / ap.xi).exp() / r.powf((ap.dim as f64 - 1.0) / 2.0)
}

/// Left side of the saddle-point equation Σ_i √(1 + (d x_i/s)²) = (1+a) d.
fn saddle_lhs(x: &Displacement, dim: usize, s: f64) -> f64 {
    x.coords()
        .iter()
        .map(|&xi| {
            let t = dim as f64 * xi as f64 / s;
            (1.0 + t * t).sqrt()
        })
        .sum()
}

/// Positive root s₀ of the saddle equation; unique since the left side is
/// strictly decreasing from ∞ to d < (1+a)d.
pub fn saddle_point(x: &Displacement, dim: usize, a: f64) -> Result<f64> {
    if x.is_zero() {
        return Err(SandlabError::Precondition(
            "saddle point needs x ≠ 0".into(),
        ));
    }
    let target = (1.0 + a) * dim as f64;
    let xmax = x.coords().iter().map(|&c| c.abs()).max().unwrap() as f64;
    let mut lo = dim as f64 * xmax / target; // single term already exceeds target here
    let mut hi = lo.max(1.0);
    while saddle_lhs(x, dim, hi) >= target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if saddle_lhs(x, dim, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    let mut s = 0.5 * (lo + hi);
    // one Newton polish; derivative of the left side wrt s
    for _ in 0..2 {
        let f = saddle_lhs(x, dim, s) - target;
        let df: f64 = x
            .coords()
            .iter()
            .map(|&xi| {
                let t = dim as f64 * xi as f64 / s;
                -t * t / (s * (1.0 + t * t).sqrt())
            })
            .sum();
        if df != 0.0 {
            let next = s - f / df;
            if next > 0.0 {
                s = next;
            }
        }
    }
    Ok(s)
}
