//! Torus geometry, site indexing and the toppling operator.
//!
//! The lattice is the d-dimensional torus {-L, ..., L}^d with odd period
//! P = 2L+1 in every direction. The toppling operator acts on per-site
//! vectors as
//!
//!   (Δ f)(z) = h_c f(z) - Σ_{|y-z|=1} f(y),     h_c = 2d(1+a),
//!
//! with dissipation rate a = m/(2dn) > 0. Its Fourier modes k ∈ {-L..L}^d
//! have eigenvalues
//!
//!   λ(k) = 2d[(1+a) - (1/d) Σ_i cos(2π k_i / P)]
//!        = m/n + 4 Σ_i sin²(π k_i / P),
//!
//! all strictly positive. The second form is used throughout because it
//! stays accurate for small a.

use crate::error::{Result, SandlabError};
use crate::linalg::DenseMatrix;

/// Dense verification paths refuse lattices larger than this.
pub const DENSE_SITE_LIMIT: usize = 10_000;

/// A lattice site, identified by its flat index.
///
/// The flat index is row-major over the shifted coordinates
/// (x_1 + L, ..., x_d + L): the last coordinate varies fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site(pub usize);

impl Site {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An integer lattice displacement.
///
/// On the torus it is kept in minimal image (every component in [-L, L],
/// unique because the period is odd). In the infinite-volume setting any
/// integer vector is a valid displacement.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Displacement(Vec<i64>);

impl Displacement {
    pub fn new(coords: Vec<i64>) -> Self {
        Displacement(coords)
    }

    pub fn zero(dim: usize) -> Self {
        Displacement(vec![0; dim])
    }

    /// Diagonal point (k, ..., k).
    pub fn diagonal(dim: usize, k: i64) -> Self {
        Displacement(vec![k; dim])
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Displacement(self.0.iter().map(|&c| -c).collect())
    }

    pub fn add(&self, other: &Displacement) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Displacement(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    /// Canonical representative of the isotropy class: absolute values
    /// sorted in descending order. G(x) depends only on this.
    pub fn canonical(&self) -> Self {
        let mut abs: Vec<i64> = self.0.iter().map(|&c| c.abs()).collect();
        abs.sort_unstable_by(|a, b| b.cmp(a));
        Displacement(abs)
    }
}

/// Model parameters of the dissipative sandpile on the torus.
///
/// All derived quantities are recomputable from the four integers
/// (dim, half_width, granularity, dissipation); rational quantities are
/// kept as exact integer pairs and only converted to f64 at the numerics
/// boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelParams {
    dim: usize,
    half_width: i64,
    granularity: u64,
    dissipation: u64,
    period: i64,
    sites: usize,
    threshold: u64,
    /// strides[i] = P^(d-1-i); stride of coordinate i in the flat index.
    strides: Vec<usize>,
}

impl ModelParams {
    /// (dim, half_width, granularity, dissipation) = (d, L, n, m).
    pub fn new(dim: usize, half_width: i64, granularity: u64, dissipation: u64) -> Result<Self> {
        if dim < 2 {
            return Err(SandlabError::InvalidParams(format!(
                "dimension must be at least 2, got {dim}"
            )));
        }
        if half_width < 1 {
            return Err(SandlabError::InvalidParams(format!(
                "half-width must be at least 1 (period 2L+1 >= 3), got {half_width}"
            )));
        }
        if granularity < 1 || dissipation < 1 {
            return Err(SandlabError::InvalidParams(
                "granularity n and dissipation m must be positive integers".into(),
            ));
        }
        let period = 2 * half_width + 1;
        let mut sites: usize = 1;
        for _ in 0..dim {
            sites = sites
                .checked_mul(period as usize)
                .ok_or_else(|| SandlabError::InvalidParams("lattice too large".into()))?;
        }
        let threshold = (2 * dim as u64)
            .checked_mul(granularity)
            .and_then(|v| v.checked_add(dissipation))
            .ok_or_else(|| SandlabError::InvalidParams("threshold overflows u64".into()))?;
        // Total grain count of any stable configuration plus one deposit
        // must fit in u64 (mass-balance identities are exact integers).
        (sites as u64)
            .checked_mul(threshold)
            .ok_or_else(|| SandlabError::InvalidParams("total grain bound overflows u64".into()))?;
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * period as usize;
        }
        Ok(ModelParams {
            dim,
            half_width,
            granularity,
            dissipation,
            period,
            sites,
            threshold,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    /// Grains sent per neighbor in a toppling; one grain is 1/n height units.
    pub fn granularity(&self) -> u64 {
        self.granularity
    }

    /// Grains dissipated per toppling.
    pub fn dissipation(&self) -> u64 {
        self.dissipation
    }

    pub fn period(&self) -> i64 {
        self.period
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Toppling threshold in grains: 2dn + m = n h_c.
    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Dissipation rate a = m/(2dn) as an exact fraction (num, den).
    pub fn dissipation_rate_exact(&self) -> (u64, u64) {
        (self.dissipation, 2 * self.dim as u64 * self.granularity)
    }

    /// Dissipation rate a = m/(2dn).
    pub fn dissipation_rate(&self) -> f64 {
        let (num, den) = self.dissipation_rate_exact();
        num as f64 / den as f64
    }

    /// Height threshold h_c = 2d(1+a) = threshold/n.
    pub fn height_cap(&self) -> f64 {
        self.threshold as f64 / self.granularity as f64
    }

    pub fn site_from_index(&self, idx: usize) -> Result<Site> {
        if idx < self.sites {
            Ok(Site(idx))
        } else {
            Err(SandlabError::Precondition(format!(
                "site index {idx} out of range (sites = {})",
                self.sites
            )))
        }
    }

    /// Site from coordinates, each in [-L, L].
    pub fn site(&self, coords: &[i64]) -> Result<Site> {
        if coords.len() != self.dim {
            return Err(SandlabError::LengthMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        let mut idx = 0usize;
        for (i, &c) in coords.iter().enumerate() {
            if c < -self.half_width || c > self.half_width {
                return Err(SandlabError::Precondition(format!(
                    "coordinate {c} outside [-{l}, {l}]",
                    l = self.half_width
                )));
            }
            idx += (c + self.half_width) as usize * self.strides[i];
        }
        Ok(Site(idx))
    }

    pub fn coords(&self, site: Site) -> Vec<i64> {
        let mut rem = site.0;
        let mut out = vec![0i64; self.dim];
        for i in 0..self.dim {
            out[i] = (rem / self.strides[i]) as i64 - self.half_width;
            rem %= self.strides[i];
        }
        out
    }

    /// Coordinate of `site` along `axis`, in [-L, L].
    fn coord_along(&self, site: Site, axis: usize) -> i64 {
        ((site.0 / self.strides[axis]) % self.period as usize) as i64 - self.half_width
    }

    /// Neighbor of `site` one step along `axis` in direction `sign`.
    pub fn neighbor(&self, site: Site, axis: usize, sign: i64) -> Site {
        let c = self.coord_along(site, axis);
        let s = self.strides[axis];
        if sign > 0 {
            if c == self.half_width {
                Site(site.0 - (self.period as usize - 1) * s)
            } else {
                Site(site.0 + s)
            }
        } else if c == -self.half_width {
            Site(site.0 + (self.period as usize - 1) * s)
        } else {
            Site(site.0 - s)
        }
    }

    /// The 2d nearest neighbors of `site` in canonical order
    /// +e_1, ..., +e_d, -e_1, ..., -e_d.
    pub fn neighbors(&self, site: Site) -> Vec<Site> {
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            out.push(self.neighbor(site, axis, 1));
        }
        for axis in 0..self.dim {
            out.push(self.neighbor(site, axis, -1));
        }
        out
    }

    /// Minimal-image reduction of an integer vector; every component lands
    /// in [-L, L] (unique since the period is odd).
    pub fn min_image(&self, coords: &[i64]) -> Result<Displacement> {
        if coords.len() != self.dim {
            return Err(SandlabError::LengthMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        let p = self.period;
        Ok(Displacement(
            coords
                .iter()
                .map(|&c| (c.rem_euclid(p) + self.half_width) % p - self.half_width)
                .collect(),
        ))
    }

    /// Displacement from `from` to `to` in minimal image.
    pub fn displacement(&self, from: Site, to: Site) -> Displacement {
        let a = self.coords(from);
        let b = self.coords(to);
        let diff: Vec<i64> = b.iter().zip(&a).map(|(&x, &y)| x - y).collect();
        self.min_image(&diff).expect("dimensions match")
    }

    /// Site reached from `site` by `disp` (reduced mod the torus).
    pub fn shift(&self, site: Site, disp: &Displacement) -> Result<Site> {
        let c = self.coords(site);
        let moved: Vec<i64> = c.iter().zip(disp.coords()).map(|(&x, &dx)| x + dx).collect();
        let red = self.min_image(&moved)?;
        self.site(red.coords())
    }

    /// Apply the toppling operator to a per-site vector:
    /// g(z) = h_c f(z) - Σ_{neighbors y} f(y).
    pub fn delta_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.sites {
            return Err(SandlabError::LengthMismatch {
                expected: self.sites,
                got: f.len(),
            });
        }
        let hc = self.height_cap();
        let mut g = vec![0.0; self.sites];
        for idx in 0..self.sites {
            let site = Site(idx);
            let mut acc = hc * f[idx];
            for axis in 0..self.dim {
                acc -= f[self.neighbor(site, axis, 1).0];
                acc -= f[self.neighbor(site, axis, -1).0];
            }
            g[idx] = acc;
        }
        Ok(g)
    }

    /// Exact integer form of the toppling operator, scaled by n:
    /// (nΔ f)(z) = threshold·f(z) - n Σ_{neighbors y} f(y).
    ///
    /// Used for exact rational identities (e.g. row sums equal m).
    pub fn delta_apply_grains(&self, f: &[i64]) -> Result<Vec<i64>> {
        if f.len() != self.sites {
            return Err(SandlabError::LengthMismatch {
                expected: self.sites,
                got: f.len(),
            });
        }
        let n = self.granularity as i64;
        let thr = self.threshold as i64;
        let mut g = vec![0i64; self.sites];
        for idx in 0..self.sites {
            let site = Site(idx);
            let mut acc = thr * f[idx];
            for axis in 0..self.dim {
                acc -= n * f[self.neighbor(site, axis, 1).0];
                acc -= n * f[self.neighbor(site, axis, -1).0];
            }
            g[idx] = acc;
        }
        Ok(g)
    }

    /// Eigenvalue of the Fourier mode k ∈ [-L, L]^d:
    /// λ(k) = m/n + 4 Σ_i sin²(π k_i / P).
    pub fn mode_eigenvalue(&self, mode: &[i64]) -> f64 {
        debug_assert_eq!(mode.len(), self.dim);
        let p = self.period as f64;
        let mut s = 0.0;
        for &k in mode {
            let t = (std::f64::consts::PI * k as f64 / p).sin();
            s += t * t;
        }
        self.dissipation as f64 / self.granularity as f64 + 4.0 * s
    }

    /// log det Δ_L = Σ_k log λ(k) over all (2L+1)^d modes.
    pub fn log_det_delta(&self) -> f64 {
        let p = self.period as f64;
        let dim = self.dim;
        // Per-axis values of 4 sin²(π k / P), k = -L..L.
        let axis: Vec<f64> = (-self.half_width..=self.half_width)
            .map(|k| {
                let t = (std::f64::consts::PI * k as f64 / p).sin();
                4.0 * t * t
            })
            .collect();
        let a0 = self.dissipation as f64 / self.granularity as f64;
        let mut total = 0.0;
        let mut counter = vec![0usize; dim];
        loop {
            let lam: f64 = a0 + counter.iter().map(|&c| axis[c]).sum::<f64>();
            total += lam.ln();
            // mixed-radix increment
            let mut i = dim;
            loop {
                if i == 0 {
                    return total;
                }
                i -= 1;
                counter[i] += 1;
                if counter[i] < axis.len() {
                    break;
                }
                counter[i] = 0;
            }
        }
    }

    /// Number of recurrent configurations, in logs:
    /// sites·log n + log det Δ_L. Valid at any lattice size.
    pub fn recurrent_log_count(&self) -> f64 {
        self.sites as f64 * (self.granularity as f64).ln() + self.log_det_delta()
    }

    /// Dense matrix of Δ_L for desk-scale verification (sites ≤ 10⁴).
    pub fn dense_delta(&self) -> Result<DenseMatrix> {
        if self.sites > DENSE_SITE_LIMIT {
            return Err(SandlabError::SizeGuard(format!(
                "dense Δ wants {} sites, limit {DENSE_SITE_LIMIT}",
                self.sites
            )));
        }
        let hc = self.height_cap();
        let mut mat = DenseMatrix::zeros(self.sites);
        for idx in 0..self.sites {
            *mat.at_mut(idx, idx) = hc;
            let site = Site(idx);
            for axis in 0..self.dim {
                for sign in [1, -1] {
                    let nb = self.neighbor(site, axis, sign).0;
                    *mat.at_mut(idx, nb) -= 1.0;
                }
            }
        }
        Ok(mat)
    }
}
