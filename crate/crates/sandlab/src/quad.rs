//! Adaptive composite Gauss–Legendre quadrature.
//!
//! Panels carry a 15-point rule; refinement is global: the panel whose
//! bisection disagrees the most is split until the summed disagreement
//! meets the absolute tolerance. Integrands may be vector-valued
//! (several integrals sharing the expensive part of an evaluation); the
//! worst component steers refinement.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SandlabError};

/// 15-point Gauss–Legendre abscissas on [-1, 1] (positive half; the rule
/// is symmetric) and the matching weights.
#[allow(clippy::excessive_precision)]
const GL15_X: [f64; 8] = [
    0.000000000000000000,
    0.201194093997434522,
    0.394151347077563370,
    0.570972172608538848,
    0.724417731360170047,
    0.848206583410427216,
    0.937273392400705904,
    0.987992518020485428,
];
#[allow(clippy::excessive_precision)]
const GL15_W: [f64; 8] = [
    0.202578241925561273,
    0.198431485327111576,
    0.186161000015562211,
    0.166269205816993934,
    0.139570677926154314,
    0.107159220467171935,
    0.070366047488108125,
    0.030753241996117268,
];

const MAX_PANELS: usize = 200_000;

/// One 15-point panel of a vector integrand; writes into `acc`.
fn gl15_vec<F: FnMut(f64, &mut [f64])>(f: &mut F, a: f64, b: f64, buf: &mut [f64], acc: &mut [f64]) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    acc.fill(0.0);
    for i in 0..8 {
        let w = GL15_W[i];
        let off = half * GL15_X[i];
        f(mid + off, buf);
        for (s, &v) in acc.iter_mut().zip(buf.iter()) {
            *s += w * v;
        }
        if i != 0 {
            f(mid - off, buf);
            for (s, &v) in acc.iter_mut().zip(buf.iter()) {
                *s += w * v;
            }
        }
    }
    for s in acc.iter_mut() {
        *s *= half;
    }
}

struct Panel {
    lo: f64,
    hi: f64,
    /// GL15 over [lo, mid]; becomes the child's coarse estimate on split.
    left: Vec<f64>,
    /// GL15 over [mid, hi].
    right: Vec<f64>,
    /// |left + right - coarse| per component.
    err: Vec<f64>,
    alive: bool,
}

struct Key(f64, usize);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal && self.1 == other.1
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Adaptive integration of a vector integrand over [a, b], seeded with
/// 16 uniform panels so moderate interior features cannot hide between
/// the nodes of a single coarse rule.
///
/// Returns per-component values and error estimates; errors if the
/// summed disagreement cannot be brought under `abs_tol` within the
/// panel budget.
pub fn integrate_vec<F: FnMut(f64, &mut [f64])>(
    f: F,
    dim: usize,
    a: f64,
    b: f64,
    abs_tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let seeds: Vec<f64> = (0..=16).map(|i| a + (b - a) * i as f64 / 16.0).collect();
    integrate_vec_seeded(f, dim, &seeds, abs_tol)
}

/// Adaptive integration with caller-chosen initial panel boundaries
/// (sorted, at least two). Callers that know where their integrand has
/// structure seed it here; refinement proceeds globally as usual.
pub fn integrate_vec_seeded<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    dim: usize,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert!(breakpoints.len() >= 2 && dim > 0 && abs_tol > 0.0);
    let a = breakpoints[0];
    let b = *breakpoints.last().unwrap();
    assert!(b > a && breakpoints.windows(2).all(|w| w[1] > w[0]));
    let width = b - a;
    let mut buf = vec![0.0; dim];
    let mut panels: Vec<Panel> = Vec::new();
    let mut heap: BinaryHeap<Key> = BinaryHeap::new();
    let mut err_total = vec![0.0f64; dim];

    let make_panel = |lo: f64,
                          hi: f64,
                          coarse: &[f64],
                          f: &mut F,
                          buf: &mut [f64],
                          panels: &mut Vec<Panel>,
                          heap: &mut BinaryHeap<Key>,
                          err_total: &mut [f64]| {
        let mid = 0.5 * (lo + hi);
        let mut left = vec![0.0; dim];
        let mut right = vec![0.0; dim];
        gl15_vec(f, lo, mid, buf, &mut left);
        gl15_vec(f, mid, hi, buf, &mut right);
        let err: Vec<f64> = (0..dim)
            .map(|j| (left[j] + right[j] - coarse[j]).abs())
            .collect();
        let mut key = 0.0f64;
        for (j, &e) in err.iter().enumerate() {
            err_total[j] += e;
            key = key.max(e);
        }
        // panels too narrow to split further drop out of the queue
        if hi - lo >= 1e-13 * width {
            heap.push(Key(key, panels.len()));
        }
        panels.push(Panel {
            lo,
            hi,
            left,
            right,
            err,
            alive: true,
        });
    };

    let mut coarse0 = vec![0.0; dim];
    for w in breakpoints.windows(2) {
        gl15_vec(&mut f, w[0], w[1], &mut buf, &mut coarse0);
        make_panel(w[0], w[1], &coarse0, &mut f, &mut buf, &mut panels, &mut heap, &mut err_total);
    }

    while err_total.iter().cloned().fold(0.0, f64::max) > abs_tol {
        let Some(Key(_, idx)) = heap.pop() else {
            break; // everything else is at the width floor
        };
        if !panels[idx].alive {
            continue;
        }
        if panels.len() >= MAX_PANELS {
            break;
        }
        panels[idx].alive = false;
        let (lo, hi) = (panels[idx].lo, panels[idx].hi);
        let mid = 0.5 * (lo + hi);
        let left_coarse = std::mem::take(&mut panels[idx].left);
        let right_coarse = std::mem::take(&mut panels[idx].right);
        for (j, e) in panels[idx].err.iter().enumerate() {
            err_total[j] -= e;
        }
        make_panel(lo, mid, &left_coarse, &mut f, &mut buf, &mut panels, &mut heap, &mut err_total);
        make_panel(mid, hi, &right_coarse, &mut f, &mut buf, &mut panels, &mut heap, &mut err_total);
    }

    let mut value = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    for p in panels.iter().filter(|p| p.alive) {
        for j in 0..dim {
            value[j] += p.left[j] + p.right[j];
            err[j] += p.err[j];
        }
    }
    let achieved = err.iter().cloned().fold(0.0, f64::max);
    if achieved > abs_tol || achieved.is_nan() {
        return Err(SandlabError::ToleranceNotReached {
            requested: abs_tol,
            achieved,
        });
    }
    Ok((value, err))
}

/// Scalar convenience wrapper.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<(f64, f64)> {
    let (v, e) = integrate_vec(|x, out| out[0] = f(x), 1, a, b, abs_tol)?;
    Ok((v[0], e[0]))
}
