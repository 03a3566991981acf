//! Height-0 density and height-(0,0) correlations via determinants.
//!
//! The probability that a site has height 0 is a ratio of spanning-tree
//! counts for the lattice with and without the defect that isolates the
//! site, which collapses to a (2d+1)-dimensional determinant
//!
//!   P₀ = det(E + n 𝒢(0) ℬ),
//!
//! where 𝒢 collects propagator values on the defect cluster {0, ±e_i}
//! and ℬ is the defect matrix (the retained single edge points along
//! -e_d). The pair probability P₀₀(x) doubles the construction with a
//! 2(2d+1) block matrix, and C₀₀(x) = (P₀₀ - P₀²)/P₀². Closed forms in
//! the four propagator values g₀..g₃ follow from a structured-matrix
//! reduction; the large-r prefactor of C₀₀ is
//!
//!   c₂ = (a c₁)² det m*(λ) det m*(-λ) / (det m)².

use serde::Serialize;

use crate::error::{Result, SandlabError};
use crate::green::{asymptotic_params, green_finite, GreenMethod, GreenTable};
use crate::lattice::{Displacement, ModelParams};
use crate::linalg::DenseMatrix;

/// |C₀₀| below this is dominated by cancellation in P₀₀ - P₀².
pub const C00_RELIABLE_FLOOR: f64 = 1e-10;

/// Defect-cluster offsets q₁ = 0, q_{1+i} = e_i, q_{1+d+i} = -e_i
/// (0-based: index 0 is the origin, 1..=d the +e_i, d+1..=2d the -e_i).
pub fn cluster_offsets(dim: usize) -> Vec<Displacement> {
    let mut out = Vec::with_capacity(2 * dim + 1);
    out.push(Displacement::zero(dim));
    for i in 0..dim {
        let mut c = vec![0i64; dim];
        c[i] = 1;
        out.push(Displacement::new(c));
    }
    for i in 0..dim {
        let mut c = vec![0i64; dim];
        c[i] = -1;
        out.push(Displacement::new(c));
    }
    out
}

/// Displacements a Green table must cover for the one-point determinant.
pub fn displacements_for_p0(dim: usize) -> Vec<Displacement> {
    let qs = cluster_offsets(dim);
    let mut out = Vec::new();
    for qi in &qs {
        for qj in &qs {
            let d = qj.add(&qi.negated()).canonical();
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out
}

/// Additional displacements needed for the two-point determinant at x.
pub fn displacements_for_pair(dim: usize, x: &Displacement) -> Vec<Displacement> {
    let qs = cluster_offsets(dim);
    let mut out = Vec::new();
    for qi in &qs {
        for qj in &qs {
            let d = x.add(&qj.add(&qi.negated())).canonical();
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out
}

/// Defect matrix ℬ of size 2d+1: diagonal -h_c+1/n at the origin slot,
/// -1 on the neighbor slots (-1+1/n at the retained -e_d edge), and ±1
/// couplings between the origin and its neighbors in both orientations.
///
/// The one-sided couplings are mirrored: as a symmetric matrix, Δ + ℬ is
/// the toppling matrix of the lattice with the defect edges deleted in
/// both directions, the origin row sums vanish (no root edges remain
/// there), and the determinant reproduces the exactly enumerated P₀ on
/// the 3×3 lattice; the one-sided variant does not.
pub fn defect_matrix(dim: usize, a: f64, granularity: u64) -> DenseMatrix {
    let k = 2 * dim + 1;
    let hc = 2.0 * dim as f64 * (1.0 + a);
    let ninv = 1.0 / granularity as f64;
    let mut b = DenseMatrix::zeros(k);
    *b.at_mut(0, 0) = -hc + ninv;
    for j in 1..k - 1 {
        *b.at_mut(j, j) = -1.0;
        *b.at_mut(0, j) = 1.0;
        *b.at_mut(j, 0) = 1.0;
    }
    *b.at_mut(k - 1, k - 1) = -1.0 + ninv;
    *b.at_mut(0, k - 1) = 1.0 - ninv;
    *b.at_mut(k - 1, 0) = 1.0 - ninv;
    b
}

/// 𝒢(x): (2d+1)² matrix of G(x + q_j - q_i) drawn from a Green table.
pub fn reduced_green_matrix(source: &GreenTable, x: &Displacement) -> Result<DenseMatrix> {
    let dim = source.dim();
    let qs = cluster_offsets(dim);
    let k = 2 * dim + 1;
    let mut g = DenseMatrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            let disp = x.add(&qs[j].add(&qs[i].negated()));
            *g.at_mut(i, j) = source.value(&disp)?;
        }
    }
    Ok(g)
}

/// P₀ = det(E + n 𝒢(0) ℬ) from any Green source (finite-L or infinite).
pub fn p0_determinantal(source: &GreenTable) -> Result<f64> {
    let dim = source.dim();
    let k = 2 * dim + 1;
    let g = reduced_green_matrix(source, &Displacement::zero(dim))?;
    let b = defect_matrix(dim, source.dissipation_rate(), source.granularity());
    let gb = g.matmul(&b);
    let n = source.granularity() as f64;
    let m = DenseMatrix::from_fn(k, |i, j| f64::from(i == j) + n * gb.at(i, j));
    Ok(m.lu().map(|lu| lu.det()).unwrap_or(0.0))
}

/// Finite-L one-point density: build the needed table and evaluate.
pub fn p0_finite(p: &ModelParams) -> Result<f64> {
    let table = GreenTable::build_finite(p, &displacements_for_p0(p.dim()))?;
    p0_determinantal(&table)
}

/// Infinite-volume Green source covering the one-point cluster and the
/// pair clusters at every requested displacement. Each displacement gets
/// its own quadrature batch (far entries are exponentially smaller than
/// near ones and need their own refinement scale) before merging.
pub fn build_pair_source(
    dim: usize,
    a: f64,
    granularity: u64,
    pair_displacements: &[Displacement],
    tol: f64,
) -> Result<GreenTable> {
    use rayon::prelude::*;
    let mut table =
        GreenTable::build_infinite(dim, a, granularity, &displacements_for_p0(dim), tol)?;
    let far: Vec<Result<GreenTable>> = pair_displacements
        .par_iter()
        .map(|x| {
            GreenTable::build_infinite(dim, a, granularity, &displacements_for_pair(dim, x), tol)
        })
        .collect();
    for t in far {
        table.merge(t?)?;
    }
    Ok(table)
}

/// Two-point result with the cancellation flag.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairCorrelation {
    pub p00: f64,
    pub c00: f64,
    /// False when |C₀₀| sits below the cancellation floor.
    pub reliable: bool,
}

/// P₀₀(x) = det(E + n G̃(0,x) B̃) and C₀₀ = (P₀₀ - P₀²)/P₀².
///
/// Requires |x| ≥ 2 (the two defect clusters must not share sites) and,
/// for finite-L sources, |x| < L.
pub fn p00_c00(source: &GreenTable, x: &Displacement) -> Result<PairCorrelation> {
    let dim = source.dim();
    if x.norm() < 2.0 {
        return Err(SandlabError::Precondition(format!(
            "pair correlation needs |x| ≥ 2, got {:?}",
            x.coords()
        )));
    }
    if let GreenMethod::FiniteFourier { half_width } = source.method() {
        if x.norm() >= half_width as f64 {
            return Err(SandlabError::Precondition(format!(
                "finite-L pair correlation needs |x| < L = {half_width}"
            )));
        }
    }
    let k = 2 * dim + 1;
    let g0 = reduced_green_matrix(source, &Displacement::zero(dim))?;
    let gx = reduced_green_matrix(source, x)?;
    let b = defect_matrix(dim, source.dissipation_rate(), source.granularity());
    let n = source.granularity() as f64;

    // block matrix [[𝒢(0), 𝒢(x)], [𝒢(x)ᵀ, 𝒢(0)]] times diag(ℬ, ℬ)
    let big = DenseMatrix::from_fn(2 * k, |i, j| {
        let (bi, ii) = (i / k, i % k);
        let (bj, jj) = (j / k, j % k);
        let gval = match (bi, bj) {
            (0, 0) | (1, 1) => g0.at(ii, jj),
            (0, 1) => gx.at(ii, jj),
            (1, 0) => gx.at(jj, ii),
            _ => unreachable!(),
        };
        gval
    });
    let bb = DenseMatrix::from_fn(2 * k, |i, j| {
        if i / k == j / k {
            b.at(i % k, j % k)
        } else {
            0.0
        }
    });
    let gb = big.matmul(&bb);
    let m = DenseMatrix::from_fn(2 * k, |i, j| f64::from(i == j) + n * gb.at(i, j));
    let p00 = m.lu().map(|lu| lu.det()).unwrap_or(0.0);

    let p0 = p0_determinantal(source)?;
    let c00 = (p00 - p0 * p0) / (p0 * p0);
    Ok(PairCorrelation {
        p00,
        c00,
        reliable: c00.abs() >= C00_RELIABLE_FLOOR,
    })
}

/// Full-size route of the one-point determinant: det(E_L + n G_L B_L)
/// with the (2L+1)^d defect matrix entered verbatim. Desk scale only.
pub fn p0_full_dense(p: &ModelParams) -> Result<f64> {
    let defects = vec![Displacement::zero(p.dim())];
    full_dense_determinant(p, &defects)
}

/// Full-size route of the two-point determinant at displacement x.
pub fn p00_full_dense(p: &ModelParams, x: &Displacement) -> Result<f64> {
    if x.norm() < 2.0 || x.norm() >= p.half_width() as f64 {
        return Err(SandlabError::Precondition(
            "two-point defect needs 2 ≤ |x| < L".into(),
        ));
    }
    let defects = vec![Displacement::zero(p.dim()), p.min_image(x.coords())?];
    full_dense_determinant(p, &defects)
}

/// det(E_L + n G_L B) where B carries one defect cluster per entry of
/// `defects`. G_L is the dense inverse (1/n)Δ_L⁻¹; B has 6d+1 nonzero
/// entries per cluster, so E + nG·B is built column-wise.
fn full_dense_determinant(p: &ModelParams, defects: &[Displacement]) -> Result<f64> {
    let sites = p.sites();
    let dense = p.dense_delta()?;
    let inv = dense.lu()?.inverse(); // n G_L
    let hc = p.height_cap();
    let ninv = 1.0 / p.granularity() as f64;
    let dim = p.dim();

    // nonzero entries (site_v, site_w, value) of the defect matrix
    let mut nonzeros: Vec<(usize, usize, f64)> = Vec::new();
    for center in defects {
        let c = p.site(center.coords())?;
        let retained = {
            let mut coords = center.coords().to_vec();
            coords[dim - 1] -= 1; // the -e_d neighbor keeps a single edge
            p.site(p.min_image(&coords)?.coords())?
        };
        nonzeros.push((c.index(), c.index(), -hc + ninv));
        for nb in p.neighbors(c) {
            let coupling = if nb == retained { 1.0 - ninv } else { 1.0 };
            nonzeros.push((nb.index(), nb.index(), -coupling));
            nonzeros.push((c.index(), nb.index(), coupling));
            nonzeros.push((nb.index(), c.index(), coupling));
        }
    }

    let mut m = DenseMatrix::identity(sites);
    for &(v, w, val) in &nonzeros {
        // column w of M += val · (n G)[:, v]
        for row in 0..sites {
            *m.at_mut(row, w) += val * inv.at(row, v);
        }
    }
    Ok(m.lu().map(|lu| lu.det()).unwrap_or(0.0))
}

/// The four independent propagator values entering every closed form:
/// g_k = n G at 0, e₁, 2e₁, e₁+e₂ (n-independent).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GValues {
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl GValues {
    fn probe_displacements(dim: usize) -> Vec<Displacement> {
        let mut e1 = vec![0i64; dim];
        e1[0] = 1;
        let mut e1e2 = vec![0i64; dim];
        e1e2[0] = 1;
        e1e2[1] = 1;
        let mut twoe1 = vec![0i64; dim];
        twoe1[0] = 2;
        vec![
            Displacement::zero(dim),
            Displacement::new(e1),
            Displacement::new(twoe1),
            Displacement::new(e1e2),
        ]
    }

    pub fn from_table(source: &GreenTable) -> Result<GValues> {
        let dim = source.dim();
        let probes = Self::probe_displacements(dim);
        let n = source.granularity() as f64;
        Ok(GValues {
            g0: n * source.value(&probes[0])?,
            g1: n * source.value(&probes[1])?,
            g2: n * source.value(&probes[2])?,
            g3: n * source.value(&probes[3])?,
        })
    }

    /// Infinite-volume values at (d, a).
    pub fn infinite(dim: usize, a: f64, tol: f64) -> Result<GValues> {
        let table = GreenTable::build_infinite(dim, a, 1, &Self::probe_displacements(dim), tol)?;
        GValues::from_table(&table)
    }

    /// Finite-L values for exact cross-checks.
    pub fn finite(p: &ModelParams) -> Result<GValues> {
        let n = p.granularity() as f64;
        let probes = Self::probe_displacements(p.dim());
        Ok(GValues {
            g0: n * green_finite(p, &probes[0])?,
            g1: n * green_finite(p, &probes[1])?,
            g2: n * green_finite(p, &probes[2])?,
            g3: n * green_finite(p, &probes[3])?,
        })
    }

    /// Residuals of the two linear identities tying g₀..g₃ together:
    /// g₁ = (1+a)g₀ - 1/(2d) and
    /// g₂ = [2d(1+a)² - 1]g₀ - 2(d-1)g₃ - (1+a).
    pub fn identity_residuals(&self, dim: usize, a: f64) -> (f64, f64) {
        let d = dim as f64;
        let r1 = self.g1 - ((1.0 + a) * self.g0 - 1.0 / (2.0 * d));
        let r2 = self.g2
            - ((2.0 * d * (1.0 + a) * (1.0 + a) - 1.0) * self.g0
                - 2.0 * (d - 1.0) * self.g3
                - (1.0 + a));
        (r1, r2)
    }
}

/// Parameters of the structured (2d+1)-matrix pattern shared by m and
/// m*(λ): a distinguished first row/column and four interior bands.
#[derive(Debug, Clone, Copy)]
pub struct StructuredParams {
    pub u: f64,
    pub b: f64,
    pub c: f64,
    pub q: f64,
    pub e: f64,
    pub f: f64,
    pub v: f64,
    pub h: f64,
    pub s: f64,
    pub t: f64,
    pub k: f64,
}

/// Build the structured matrix from its band parameters (0-based layout
/// of the 17-case pattern; β = 1 - 1/n weights the last column).
pub fn structured_matrix(dim: usize, granularity: u64, rp: &StructuredParams) -> DenseMatrix {
    let d = dim;
    let size = 2 * d + 1;
    let beta = 1.0 - 1.0 / granularity as f64;
    DenseMatrix::from_fn(size, |r, c| {
        if r == 0 {
            if c == 0 {
                rp.u
            } else if c <= d {
                rp.b
            } else if c < 2 * d {
                rp.c
            } else {
                beta * rp.c
            }
        } else if r <= d {
            // rows of the +e block
            if c == 0 {
                rp.q
            } else if c == r {
                1.0 + rp.v
            } else if c == r + d && c < 2 * d {
                rp.h
            } else if c == 2 * d {
                if r == d {
                    beta * rp.h
                } else {
                    beta * rp.f
                }
            } else {
                rp.f
            }
        } else {
            // rows of the -e block
            if c == 0 {
                rp.e
            } else if c == r - d {
                rp.t
            } else if c == r && c < 2 * d {
                1.0 + rp.k
            } else if c == 2 * d {
                if r == 2 * d {
                    1.0 + beta * rp.k
                } else {
                    beta * rp.s
                }
            } else {
                rp.s
            }
        }
    })
}

/// Band parameters of m (the P₀ matrix) in terms of g₀..g₃.
pub fn m_params(gv: &GValues, dim: usize, a: f64) -> StructuredParams {
    let tda = 2.0 * dim as f64 * a;
    StructuredParams {
        u: 1.0 - tda * gv.g0,
        b: gv.g0 - gv.g1,
        c: gv.g0 - gv.g1,
        q: 1.0 - tda * gv.g1,
        e: 1.0 - tda * gv.g1,
        f: gv.g1 - gv.g3,
        s: gv.g1 - gv.g3,
        v: gv.g1 - gv.g0,
        k: gv.g1 - gv.g0,
        h: gv.g1 - gv.g2,
        t: gv.g1 - gv.g2,
    }
}

/// Band parameters of m*(λ); m*(-λ) follows by negating `lambda`.
pub fn mstar_params(gv: &GValues, dim: usize, a: f64, lambda: f64) -> StructuredParams {
    let d = dim as f64;
    let el = lambda.exp();
    let eml = (-lambda).exp();
    let sa = a.sqrt();
    StructuredParams {
        u: -2.0 * d,
        b: (1.0 - el) / sa,
        c: (1.0 - eml) / sa,
        q: (1.0 - el) / sa - 2.0 * d * sa * (gv.g1 - el * gv.g0),
        e: (1.0 - eml) / sa - 2.0 * d * sa * (gv.g1 - eml * gv.g0),
        f: (gv.g1 - gv.g3) - el * (gv.g0 - gv.g1),
        s: (gv.g1 - gv.g3) - eml * (gv.g0 - gv.g1),
        v: (gv.g1 - gv.g0) - el * (gv.g0 - gv.g1),
        k: (gv.g1 - gv.g0) - eml * (gv.g0 - gv.g1),
        h: (gv.g1 - gv.g2) - el * (gv.g0 - gv.g1),
        t: (gv.g1 - gv.g2) - eml * (gv.g0 - gv.g1),
    }
}

/// Determinant of the structured matrix by the row/column reduction to a
/// 4×4 block (the 1/(n-1) entry and the (1-1/n) column factors cancel
/// analytically, so n = 1 is fine).
pub fn structured_det_reduced(dim: usize, granularity: u64, rp: &StructuredParams) -> f64 {
    let d = dim as f64;
    let n = granularity as f64;
    let StructuredParams {
        u,
        b,
        c,
        q,
        e,
        f,
        v,
        h,
        s,
        t,
        k,
    } = *rp;
    let beta = 1.0 - 1.0 / n;

    let s11 = 1.0 + v + (d - 1.0) * f - d * b * q / u;
    let s12 = h + (d - 1.0) * f - d * c * q / u;
    let s14 = f - b * q / u;
    let s21 = t + (d - 1.0) * s - d * b * e / u;
    let s22 = 1.0 + k + (d - 1.0) * s - d * c * e / u;
    let s24 = s - b * e / u;
    let s33 = 1.0 + beta * (k - s);
    let s34 = t - s;
    let s44 = 1.0 + v - f;
    // β-stripped third-column entries
    let u13 = f - c * q / u;
    let u23 = s - c * e / u;
    let u43 = h - f;

    let det3 = |a11: f64, a12: f64, a13: f64, a21: f64, a22: f64, a23: f64, a32: f64, a33: f64| {
        a11 * (a22 * a33 - a23 * a32) - a12 * (a21 * a33 - a23 * 0.0)
            + a13 * (a21 * a32 - a22 * 0.0)
    };
    // minor at (3,2) with β factored from its middle column, times -1/n
    let m32 = det3(s11, u13, s14, s21, u23, s24, u43, s44);
    let core = s11 * s22 - s12 * s21;
    let det_s = -(1.0 / n) * m32 + s33 * s44 * core - s34 * beta * u43 * core;

    let band = (1.0 + v - f) * (1.0 + k - s) - (t - s) * (h - f);
    u * band.powi(dim as i32 - 2) * det_s
}

/// det m from the structured parameters via plain LU.
pub fn structured_det_lu(dim: usize, granularity: u64, rp: &StructuredParams) -> f64 {
    structured_matrix(dim, granularity, rp).det()
}

/// Closed form of P₀ in g₀..g₃ (the determinantal route fixes the a²
/// ending of the first bracket; see `p0_closed_form_variants`).
pub fn p0_closed_form(gv: &GValues, dim: usize, a: f64, granularity: u64) -> f64 {
    p0_closed_form_variants(gv, dim, a, granularity).0
}

/// Both printed endings of the first bracket: (quadratic, linear) in a.
/// The quadratic one matches the determinantal value; the linear one is
/// kept for the documented comparison.
pub fn p0_closed_form_variants(
    gv: &GValues,
    dim: usize,
    a: f64,
    granularity: u64,
) -> (f64, f64) {
    let d = dim as f64;
    let g03 = gv.g0 - gv.g3;
    let g23 = gv.g2 - gv.g3;
    let prefactor = (1.0 - 2.0 * d * a * gv.g0) / (2.0 * d * granularity as f64);
    let bracket1_base = 2.0 * (1.0 - d * g03) + (1.0 - 4.0 * d * gv.g0) * a;
    let bracket2 = 2.0 * (d - 1.0) * g03 - (1.0 - 4.0 * d * gv.g0) * a
        + 2.0 * d * gv.g0 * a * a;
    let tail = ((1.0 - g03) * (1.0 - g03) - g23 * g23).powi(dim as i32 - 2);
    let quadratic =
        prefactor * (bracket1_base - 2.0 * d * gv.g0 * a * a) * bracket2 * bracket2 * tail;
    let linear = prefactor * (bracket1_base - 2.0 * d * gv.g0 * a) * bracket2 * bracket2 * tail;
    (quadratic, linear)
}

/// c₂(d, a, n) = -(a c₁)² det m*(λ) det m*(-λ) / (det m)².
///
/// The determinant-ratio factor is positive; the overall sign is fixed
/// by the exact determinantal C₀₀, which is negative along the diagonal
/// (the conservative-limit value -r^{-4}/2 in two dimensions has the
/// same sign), so the cross term enters with a minus.
pub fn c2_factor(gv: &GValues, dim: usize, a: f64, granularity: u64) -> Result<f64> {
    let ap = asymptotic_params(dim, a);
    let m = structured_det_lu(dim, granularity, &m_params(gv, dim, a));
    if m.abs() < 1e-14 {
        return Err(SandlabError::Singular);
    }
    let plus = structured_det_lu(dim, granularity, &mstar_params(gv, dim, a, ap.lambda));
    let minus = structured_det_lu(dim, granularity, &mstar_params(gv, dim, a, -ap.lambda));
    Ok(-(a * ap.c1).powi(2) * plus * minus / (m * m))
}

/// Magnitude of the c₂/a^{(d+1)/2} limit as a → 0, in terms of
/// γ̄ = lim (g₀ - g₃); c₂ itself approaches minus this.
pub fn c2_small_a_limit(dim: usize, gamma_bar: f64) -> f64 {
    let d = dim as f64;
    (d / (2.0 * std::f64::consts::PI * std::f64::consts::PI)).powf((d - 3.0) / 2.0)
        * ((d * (1.0 + (d - 1.0) * gamma_bar))
            / (2.0 * std::f64::consts::PI * (d - 1.0) * gamma_bar))
            .powi(2)
}

/// Per-run summary emitted by the heights CLI.
#[derive(Debug, Clone, Serialize)]
pub struct HeightSummary {
    pub p0_det: f64,
    pub p0_closed: f64,
    pub c2: f64,
    pub xi: f64,
    pub lambda: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::green_infinite;
    use crate::rng::SplitMix64;

    fn rand_params(rng: &mut SplitMix64) -> StructuredParams {
        let mut r = || rng.next_f64() * 2.0 - 1.0;
        StructuredParams {
            u: 2.0 + r(),
            b: r(),
            c: r(),
            q: r(),
            e: r(),
            f: r(),
            v: r(),
            h: r(),
            s: r(),
            t: r(),
            k: r(),
        }
    }

    #[test]
    fn structured_reduction_matches_lu() {
        let mut rng = SplitMix64::new(17);
        for dim in [2usize, 3, 4] {
            for n in [1u64, 2, 3, 7] {
                for _ in 0..50 {
                    let rp = rand_params(&mut rng);
                    let lu = structured_det_lu(dim, n, &rp);
                    let red = structured_det_reduced(dim, n, &rp);
                    assert!(
                        (lu - red).abs() <= 1e-10 * lu.abs().max(1.0),
                        "d={dim} n={n}: {lu} vs {red}"
                    );
                }
            }
        }
    }

    #[test]
    fn m_matrix_equals_reduced_determinant_route() {
        // det(E + n𝒢(0)ℬ) == det m (column operation) == structured form
        for (dim, a, n) in [(2usize, 0.25, 1u64), (2, 0.1, 2), (3, 0.5, 1)] {
            let table =
                GreenTable::build_infinite(dim, a, n, &displacements_for_p0(dim), 1e-11).unwrap();
            let p0 = p0_determinantal(&table).unwrap();
            let gv = GValues::from_table(&table).unwrap();
            let det_m = structured_det_lu(dim, n, &m_params(&gv, dim, a));
            assert!(
                (p0 - det_m).abs() < 1e-10,
                "d={dim} a={a} n={n}: {p0} vs {det_m}"
            );
        }
    }

    #[test]
    fn closed_form_matches_determinantal() {
        for (dim, a) in [(2usize, 0.05), (2, 0.25), (3, 0.1), (3, 0.5)] {
            for n in [1u64, 2, 4] {
                let table = GreenTable::build_infinite(dim, a, n, &displacements_for_p0(dim), 1e-11)
                    .unwrap();
                let p0 = p0_determinantal(&table).unwrap();
                let gv = GValues::from_table(&table).unwrap();
                let (quad, _lin) = p0_closed_form_variants(&gv, dim, a, n);
                assert!(
                    (p0 - quad).abs() < 1e-8,
                    "d={dim} a={a} n={n}: det {p0} vs closed {quad}"
                );
                assert!(p0 > 0.0 && p0 < 1.0);
            }
        }
    }

    #[test]
    fn linear_variant_disagrees_with_determinant() {
        // the a-linear ending of the first bracket does not reproduce the
        // determinantal value away from a = 0
        let (dim, a, n) = (2usize, 0.25, 1u64);
        let table =
            GreenTable::build_infinite(dim, a, n, &displacements_for_p0(dim), 1e-11).unwrap();
        let p0 = p0_determinantal(&table).unwrap();
        let gv = GValues::from_table(&table).unwrap();
        let (quad, lin) = p0_closed_form_variants(&gv, dim, a, n);
        assert!((p0 - quad).abs() < 1e-9);
        assert!((p0 - lin).abs() > 1e-4, "variants: quad {quad}, lin {lin}");
    }

    #[test]
    fn doubled_phase_gamma2_rejected() {
        // reading the closed form with the doubled-phase value
        // nG(2e₁+2e₂) in place of g₃ does not reproduce the determinant
        let (dim, a) = (2usize, 0.25);
        let table =
            GreenTable::build_infinite(dim, a, 1, &displacements_for_p0(dim), 1e-11).unwrap();
        let p0 = p0_determinantal(&table).unwrap();
        let gv = GValues::from_table(&table).unwrap();
        let (doubled, _) = green_infinite(dim, a, 1, &Displacement::new(vec![2, 2]), 1e-11).unwrap();
        let gv_doubled = GValues { g3: doubled, ..gv };
        let literal = p0_closed_form(&gv_doubled, dim, a, 1);
        assert!((p0 - p0_closed_form(&gv, dim, a, 1)).abs() < 1e-9);
        assert!((p0 - literal).abs() > 1e-4, "{p0} vs {literal}");
    }

    #[test]
    fn g_value_identities() {
        for (dim, a) in [(2usize, 0.25), (3, 0.1)] {
            let gv = GValues::infinite(dim, a, 1e-11).unwrap();
            let (r1, r2) = gv.identity_residuals(dim, a);
            assert!(r1.abs() < 1e-9, "d={dim} a={a}: r1={r1}");
            assert!(r2.abs() < 1e-8, "d={dim} a={a}: r2={r2}");
        }
    }

    #[test]
    fn p0_determinant_matches_exact_enumeration_3x3() {
        // brute force: allowed configurations with the origin empty,
        // against the reduced and full-size determinants
        use crate::dynamics::GrainConfig;
        use crate::recurrence::is_allowed;
        use std::sync::Arc;
        let p = Arc::new(ModelParams::new(2, 1, 1, 1).unwrap());
        let origin = p.site(&[0, 0]).unwrap();
        let base = p.threshold();
        let mut count = 0u64;
        let mut grains = vec![0u64; 9];
        for ordinal in 0..base.pow(8) {
            let mut o = ordinal;
            for i in 0..9 {
                if i == origin.index() {
                    grains[i] = 0;
                    continue;
                }
                grains[i] = o % base;
                o /= base;
            }
            let h = GrainConfig::from_grains(Arc::clone(&p), grains.clone()).unwrap();
            if is_allowed(&h) {
                count += 1;
            }
        }
        assert_eq!(count, 55_545);
        let exact = count as f64 / 614_656.0;
        let reduced = p0_finite(&p).unwrap();
        let full = p0_full_dense(&p).unwrap();
        assert!((reduced - exact).abs() < 1e-12, "{reduced} vs {exact}");
        assert!((full - exact).abs() < 1e-12, "{full} vs {exact}");
    }

    #[test]
    fn full_size_equals_reduced_p0() {
        for (l, n, m) in [(3i64, 1u64, 1u64), (3, 2, 1), (4, 1, 2)] {
            let p = ModelParams::new(2, l, n, m).unwrap();
            let full = p0_full_dense(&p).unwrap();
            let reduced = p0_finite(&p).unwrap();
            assert!(
                (full - reduced).abs() < 1e-9,
                "L={l} n={n} m={m}: {full} vs {reduced}"
            );
        }
    }

    #[test]
    fn full_size_equals_reduced_p00() {
        let p = ModelParams::new(2, 4, 1, 2).unwrap();
        let x = Displacement::new(vec![2, 1]);
        let full = p00_full_dense(&p, &x).unwrap();
        let table = GreenTable::build_finite(
            &p,
            &[displacements_for_p0(2), displacements_for_pair(2, &x)].concat(),
        )
        .unwrap();
        let pair = p00_c00(&table, &x).unwrap();
        assert!(
            (full - pair.p00).abs() < 1e-9,
            "{full} vs {:?}",
            pair
        );
    }

    #[test]
    fn p00_needs_separation() {
        let table =
            GreenTable::build_infinite(2, 0.25, 1, &displacements_for_p0(2), 1e-10).unwrap();
        assert!(p00_c00(&table, &Displacement::new(vec![1, 1])).is_err());
    }

    #[test]
    fn p00_approaches_p0_squared() {
        let dim = 2;
        let a = 0.5;
        let xs: Vec<Displacement> = [2i64, 3, 4]
            .iter()
            .map(|&k| Displacement::diagonal(dim, k))
            .collect();
        let table = build_pair_source(dim, a, 1, &xs, 1e-11).unwrap();
        let p0 = p0_determinantal(&table).unwrap();
        let mut prev = f64::INFINITY;
        for x in &xs {
            let pair = p00_c00(&table, x).unwrap();
            let gap = (pair.p00 - p0 * p0).abs();
            assert!(gap < prev, "x={:?}: gap {gap}", x.coords());
            prev = gap;
        }
    }

    #[test]
    fn p0_determinantal_missing_entries_error() {
        let table = GreenTable::build_infinite(
            2,
            0.25,
            1,
            &[Displacement::zero(2)], // deliberately incomplete
            1e-10,
        )
        .unwrap();
        assert!(matches!(
            p0_determinantal(&table),
            Err(SandlabError::MissingDisplacement(_))
        ));
    }

    #[test]
    fn c2_factor_small_a_limit_d2() {
        // γ̄ = 1/π at d = 2; c₂/a^{3/2} approaches the closed limit
        let gamma = 1.0 / std::f64::consts::PI;
        let want = c2_small_a_limit(2, gamma);
        let a = 1e-4;
        let gv = GValues::infinite(2, a, 1e-11).unwrap();
        let c2 = c2_factor(&gv, 2, a, 1).unwrap();
        assert!(c2 < 0.0, "c2 carries the sign of C00");
        let got = c2.abs() / a.powf(1.5);
        assert!(
            (got - want).abs() / want.abs() < 0.02,
            "|c2|/a^1.5 = {got}, limit {want}"
        );
    }

    #[test]
    fn row_reduced_matrix_determinant_invariance() {
        // the λ-reduced matrix m'(λ) built row by row from 𝒢(0) has the
        // same determinant as m for both signs of λ
        let (dim, a, n) = (2usize, 0.25, 2u64);
        let table =
            GreenTable::build_infinite(dim, a, n, &displacements_for_p0(dim), 1e-11).unwrap();
        let g = reduced_green_matrix(&table, &Displacement::zero(dim)).unwrap();
        let gv = GValues::from_table(&table).unwrap();
        let det_m = structured_det_lu(dim, n, &m_params(&gv, dim, a));
        let nn = n as f64;
        let beta = 1.0 - 1.0 / nn;
        let lambda = asymptotic_params(dim, a).lambda;
        let k = 2 * dim + 1;
        let tda = 2.0 * dim as f64 * a;
        for sign in [1.0f64, -1.0] {
            let e = (sign * lambda).exp();
            let mp = crate::linalg::DenseMatrix::from_fn(k, |i, j| {
                let phi_i = |jj: usize| g.at(i, 0) - g.at(i, jj);
                let phi_0 = |jj: usize| g.at(0, 0) - g.at(0, jj);
                let ee = if i >= 1 && i <= dim { e } else { 1.0 / e };
                if i == 0 {
                    if j == 0 {
                        1.0 - tda * nn * g.at(0, 0)
                    } else if j < 2 * dim {
                        nn * phi_0(j)
                    } else {
                        beta * nn * phi_0(j)
                    }
                } else if j == 0 {
                    (1.0 - ee) - tda * nn * (g.at(i, 0) - ee * g.at(0, 0))
                } else if j < 2 * dim {
                    f64::from(i == j) + nn * (phi_i(j) - ee * phi_0(j))
                } else {
                    f64::from(i == j) + beta * nn * (phi_i(j) - ee * phi_0(j))
                }
            });
            let det_mp = mp.det();
            assert!(
                (det_mp - det_m).abs() < 1e-10,
                "sign {sign}: {det_mp} vs {det_m}"
            );
        }
    }

    #[test]
    fn c2_matches_corrected_c00_prefactor() {
        // |c₂| against the fitted prefactor of the exact C₀₀ decay with
        // the O(1/r) correction modeled
        use crate::fit::fit_decay_with_inverse_correction;
        let (dim, a) = (2usize, 0.02);
        let ap = asymptotic_params(dim, a);
        let ks: Vec<i64> = (4..=18).collect();
        let xs: Vec<Displacement> = ks.iter().map(|&k| Displacement::diagonal(dim, k)).collect();
        let src = build_pair_source(dim, a, 1, &xs, 1e-11).unwrap();
        let mut pts = Vec::new();
        for (x, &k) in xs.iter().zip(ks.iter()) {
            let pair = p00_c00(&src, x).unwrap();
            if pair.reliable {
                assert!(pair.c00 < 0.0, "C00 negative along the diagonal");
                let r = k as f64 * (dim as f64).sqrt();
                pts.push((r, (pair.c00.abs() * r).ln()));
            }
        }
        let fit = fit_decay_with_inverse_correction(&pts).unwrap();
        let gv = GValues::infinite(dim, a, 1e-11).unwrap();
        let c2 = c2_factor(&gv, dim, a, 1).unwrap();
        assert!(
            (fit.rate - 2.0 / ap.xi).abs() * ap.xi / 2.0 < 0.02,
            "rate {} vs {}",
            fit.rate,
            2.0 / ap.xi
        );
        let pref = fit.log_prefactor.exp();
        assert!(
            (pref - c2.abs()).abs() / c2.abs() < 0.2,
            "prefactor {pref} vs |c2| {}",
            c2.abs()
        );
    }

    #[test]
    fn nearest_neighbor_pair_probability_zero_mechanism() {
        // adjacent both-below-one-grain-unit configurations are forbidden,
        // so the exact nearest-neighbor pair probability vanishes; checked
        // here through the recurrence module on a desk-scale lattice
        use crate::recurrence::is_allowed;
        use std::sync::Arc;
        let p = Arc::new(ModelParams::new(2, 1, 1, 1).unwrap());
        let mut grains = vec![p.threshold() - 1; p.sites()];
        let a = p.site(&[0, 0]).unwrap();
        let b = p.site(&[1, 0]).unwrap();
        grains[a.index()] = 0;
        grains[b.index()] = 0;
        let h = crate::dynamics::GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
        assert!(!is_allowed(&h));
    }

    #[test]
    fn c00_decays_at_twice_inverse_xi() {
        // fit the exponential rate of |C₀₀| along the diagonal
        let dim = 2;
        let a = 0.1;
        let ap = asymptotic_params(dim, a);
        // fit beyond r ≈ 3ξ where the O(1/r) prefactor corrections settle
        let ks: Vec<i64> = (4..=9).collect();
        let xs: Vec<Displacement> = ks.iter().map(|&k| Displacement::diagonal(dim, k)).collect();
        let table = build_pair_source(dim, a, 1, &xs, 1e-11).unwrap();
        let mut points = Vec::new();
        let mut prev_abs = f64::INFINITY;
        for &k in &ks {
            let pair = p00_c00(&table, &Displacement::diagonal(dim, k)).unwrap();
            if pair.reliable {
                // monotone exponential decay beyond r = 3ξ
                assert!(pair.c00.abs() < prev_abs, "k={k}");
                prev_abs = pair.c00.abs();
                let r = (k as f64) * (dim as f64).sqrt();
                points.push((r, (pair.c00.abs() * r.powf(dim as f64 - 1.0)).ln()));
            }
        }
        assert!(points.len() >= 4);
        // least squares slope
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let want = -2.0 / ap.xi;
        assert!(
            (slope - want).abs() / want.abs() < 0.05,
            "slope {slope} vs {want}"
        );
    }
}
