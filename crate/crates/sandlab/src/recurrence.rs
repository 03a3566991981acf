//! Allowed configurations: forbidden-subconfiguration tests, the burning
//! algorithm with its spanning-tree certificate, and brute-force counting.
//!
//! A stable configuration is *allowed* iff it has no forbidden
//! subconfiguration (FSC): a nonempty site set F with
//! H(y) < n·#{neighbors of y inside F} for every y ∈ F. Burning decides
//! allowedness greedily: starting from the root, a site burns in round
//! t+1 once H(y) ≥ n·(number of its still-unburnt lattice neighbors).
//! Every site burning is equivalent to having no FSC, and the chosen
//! edges form a spanning tree of the multigraph with n parallel edges per
//! adjacent pair and m root edges per site. Greedy burning is
//! O(sites·rounds); the subset test is exponential and kept as the
//! independent oracle.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::dynamics::GrainConfig;
use crate::error::{Result, SandlabError};
use crate::lattice::{ModelParams, Site};

/// Sites above this refuse the exhaustive subset search.
pub const FSC_SITE_LIMIT: usize = 20;
/// Configurations above this refuse brute-force enumeration.
pub const ENUMERATION_LIMIT: u64 = 20_000_000;

/// Edge of the sandpile multigraph chosen by the burning rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurnEdge {
    /// One of the n parallel edges toward the neighbor in the given
    /// canonical direction (0..2d: +e_1..+e_d, -e_1..-e_d).
    Neighbor { direction: u8, copy: u32 },
    /// One of the m edges to the root.
    Root { copy: u32 },
}

/// (site, direction-or-root, copy) triple certifying how `site` burnt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeEdge {
    pub site: Site,
    pub edge: BurnEdge,
}

/// Outcome of the burning process.
#[derive(Debug, Clone)]
pub struct BurnResult {
    pub allowed: bool,
    /// (site, round) pairs in burn order; the root burns at round 0.
    pub burn_order: Vec<(Site, u32)>,
    /// Chosen edge e(y) for every burnt site; spans all sites plus the
    /// root with no cycles exactly when `allowed`.
    pub tree_edges: Vec<TreeEdge>,
    /// Sites never burnt; empty iff `allowed`.
    pub unburnt: Vec<Site>,
}

/// Reusable buffers for the burn loop.
struct BurnScratch {
    unburnt_neighbors: Vec<u32>,
    burn_round: Vec<u32>,
    frontier: Vec<usize>,
    next_frontier: Vec<usize>,
    candidate_stamp: Vec<u32>,
}

impl BurnScratch {
    fn new(sites: usize) -> Self {
        BurnScratch {
            unburnt_neighbors: vec![0; sites],
            burn_round: vec![0; sites],
            frontier: Vec::with_capacity(sites),
            next_frontier: Vec::with_capacity(sites),
            candidate_stamp: vec![0; sites],
        }
    }
}

const UNBURNT: u32 = u32::MAX;

/// Core synchronous burn loop. Returns the number of burnt sites; burn
/// rounds are left in `scratch.burn_round` (UNBURNT marker elsewhere).
/// When `edges` is given, the chosen edge per burnt site is pushed.
fn burn_core(
    p: &ModelParams,
    grains: &[u64],
    scratch: &mut BurnScratch,
    mut edges: Option<&mut Vec<TreeEdge>>,
) -> usize {
    let sites = p.sites();
    let dim = p.dim();
    let n = p.granularity();
    let two_d = 2 * dim as u32;

    scratch.unburnt_neighbors[..sites].fill(two_d);
    scratch.burn_round[..sites].fill(UNBURNT);
    scratch.candidate_stamp[..sites].fill(u32::MAX);
    scratch.frontier.clear();
    scratch.next_frontier.clear();

    let mut burnt_count = 0usize;

    // Round 1: the root (burnt at round 0) is adjacent to every site via
    // its m edges, so every site is a candidate.
    for idx in 0..sites {
        let needed = n * u64::from(scratch.unburnt_neighbors[idx]);
        if grains[idx] >= needed {
            let surplus = grains[idx] - needed;
            assert!(
                surplus < p.dissipation(),
                "burning rule: surplus {surplus} exceeds the {} root edges",
                p.dissipation()
            );
            if let Some(e) = edges.as_deref_mut() {
                e.push(TreeEdge {
                    site: Site(idx),
                    edge: BurnEdge::Root {
                        copy: surplus as u32,
                    },
                });
            }
            scratch.frontier.push(idx);
        }
    }
    let mut round: u32 = 1;
    while !scratch.frontier.is_empty() {
        burnt_count += scratch.frontier.len();
        for i in 0..scratch.frontier.len() {
            let idx = scratch.frontier[i];
            scratch.burn_round[idx] = round;
        }
        for i in 0..scratch.frontier.len() {
            let idx = scratch.frontier[i];
            let site = Site(idx);
            for axis in 0..dim {
                for sign in [1i64, -1] {
                    let nb = p.neighbor(site, axis, sign).index();
                    if scratch.burn_round[nb] == UNBURNT {
                        scratch.unburnt_neighbors[nb] -= 1;
                    }
                }
            }
        }
        // candidates for the next round: unburnt neighbors of this frontier
        scratch.next_frontier.clear();
        for i in 0..scratch.frontier.len() {
            let idx = scratch.frontier[i];
            let site = Site(idx);
            for axis in 0..dim {
                for sign in [1i64, -1] {
                    let nb = p.neighbor(site, axis, sign).index();
                    if scratch.burn_round[nb] != UNBURNT || scratch.candidate_stamp[nb] == round {
                        continue;
                    }
                    scratch.candidate_stamp[nb] = round;
                    let needed = n * u64::from(scratch.unburnt_neighbors[nb]);
                    if grains[nb] >= needed {
                        let surplus = grains[nb] - needed;
                        if let Some(e) = edges.as_deref_mut() {
                            // candidate edges: for each canonical direction
                            // whose neighbor burnt exactly this round, its n
                            // parallel copies
                            let nb_site = Site(nb);
                            let mut fresh_dirs: Vec<u8> = Vec::with_capacity(2 * dim);
                            for (dir, (axis2, sign2)) in (0..dim)
                                .map(|a| (a, 1i64))
                                .chain((0..dim).map(|a| (a, -1i64)))
                                .enumerate()
                            {
                                let other = p.neighbor(nb_site, axis2, sign2).index();
                                if scratch.burn_round[other] == round {
                                    fresh_dirs.push(dir as u8);
                                }
                            }
                            let count = n * fresh_dirs.len() as u64;
                            assert!(
                                surplus < count,
                                "burning rule: surplus {surplus} exceeds {count} candidate edges"
                            );
                            e.push(TreeEdge {
                                site: nb_site,
                                edge: BurnEdge::Neighbor {
                                    direction: fresh_dirs[(surplus / n) as usize],
                                    copy: (surplus % n) as u32,
                                },
                            });
                        }
                        scratch.next_frontier.push(nb);
                    }
                }
            }
        }
        std::mem::swap(&mut scratch.frontier, &mut scratch.next_frontier);
        round += 1;
    }
    burnt_count
}

/// Run the burning process and report the full certificate.
pub fn burning_allowed(h: &GrainConfig) -> BurnResult {
    let p = h.params();
    let mut scratch = BurnScratch::new(p.sites());
    let mut edges = Vec::with_capacity(p.sites());
    let burnt = burn_core(p, h.grains(), &mut scratch, Some(&mut edges));
    let allowed = burnt == p.sites();
    let mut burn_order: Vec<(Site, u32)> = (0..p.sites())
        .filter(|&i| scratch.burn_round[i] != UNBURNT)
        .map(|i| (Site(i), scratch.burn_round[i]))
        .collect();
    burn_order.sort_by_key(|&(s, r)| (r, s));
    let unburnt = (0..p.sites())
        .filter(|&i| scratch.burn_round[i] == UNBURNT)
        .map(Site)
        .collect();
    BurnResult {
        allowed,
        burn_order,
        tree_edges: edges,
        unburnt,
    }
}

/// Allowedness only, without the certificate.
pub fn is_allowed(h: &GrainConfig) -> bool {
    let p = h.params();
    let mut scratch = BurnScratch::new(p.sites());
    burn_core(p, h.grains(), &mut scratch, None) == p.sites()
}

/// Exhaustive forbidden-subconfiguration search over all nonempty site
/// subsets. True iff some F satisfies H(y) < n·#{F-neighbors of y} for
/// every y ∈ F. Exponential; sites ≤ 20 enforced.
pub fn fsc_exhaustive(h: &GrainConfig) -> Result<bool> {
    let p = h.params();
    let sites = p.sites();
    if sites > FSC_SITE_LIMIT {
        return Err(SandlabError::SizeGuard(format!(
            "{sites} sites exceed the subset-search limit {FSC_SITE_LIMIT}; use burning_allowed"
        )));
    }
    let neighbor_mask: Vec<u32> = (0..sites)
        .map(|i| {
            p.neighbors(Site(i))
                .into_iter()
                .fold(0u32, |m, s| m | 1 << s.index())
        })
        .collect();
    let grains = h.grains();
    let n = p.granularity();
    'subsets: for mask in 1u32..(1u32 << sites) {
        let mut rest = mask;
        while rest != 0 {
            let y = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let inside = (neighbor_mask[y] & mask).count_ones() as u64;
            if grains[y] >= n * inside {
                continue 'subsets;
            }
        }
        return Ok(true);
    }
    Ok(false)
}

/// JSON-facing summary of a brute-force enumeration run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnumerationReport {
    pub total_states: u64,
    pub allowed_count: u64,
    pub log_det: f64,
    pub recurrent_log_count: f64,
    pub elapsed_s: f64,
}

fn enumeration_total(p: &ModelParams) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..p.sites() {
        total = total
            .checked_mul(p.threshold())
            .filter(|&t| t <= ENUMERATION_LIMIT)
            .ok_or_else(|| {
                SandlabError::SizeGuard(format!(
                    "threshold^sites exceeds enumeration limit {ENUMERATION_LIMIT}"
                ))
            })?;
    }
    Ok(total)
}

/// Count allowed configurations in the index range [start, end) of the
/// mixed-radix enumeration (least-significant digit = last site).
fn count_allowed_range(p: &ModelParams, start: u64, end: u64) -> u64 {
    let sites = p.sites();
    let base = p.threshold();
    let mut grains = vec![0u64; sites];
    let mut ordinal = start;
    for i in (0..sites).rev() {
        grains[i] = ordinal % base;
        ordinal /= base;
    }
    let mut scratch = BurnScratch::new(sites);
    let mut count = 0u64;
    for _ in start..end {
        if burn_core(p, &grains, &mut scratch, None) == sites {
            count += 1;
        }
        // mixed-radix increment
        for i in (0..sites).rev() {
            grains[i] += 1;
            if grains[i] < base {
                break;
            }
            grains[i] = 0;
        }
    }
    count
}

fn enumerate_impl(p: &ModelParams, parallel: bool) -> Result<EnumerationReport> {
    let total = enumeration_total(p)?;
    let started = Instant::now();
    let allowed_count = if parallel {
        let workers = rayon::current_num_threads().max(1) as u64 * 8;
        let chunk = total.div_ceil(workers);
        (0..workers)
            .into_par_iter()
            .map(|w| {
                let start = w * chunk;
                let end = ((w + 1) * chunk).min(total);
                if start >= end {
                    0
                } else {
                    count_allowed_range(p, start, end)
                }
            })
            .sum()
    } else {
        count_allowed_range(p, 0, total)
    };
    Ok(EnumerationReport {
        total_states: total,
        allowed_count,
        log_det: p.log_det_delta(),
        recurrent_log_count: p.recurrent_log_count(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Brute-force count of allowed stable configurations (parallel).
pub fn enumerate_allowed_count(p: &ModelParams) -> Result<EnumerationReport> {
    enumerate_impl(p, true)
}

/// Single-threaded variant for timed reproduction runs.
pub fn enumerate_allowed_count_sequential(p: &ModelParams) -> Result<EnumerationReport> {
    enumerate_impl(p, false)
}

/// A random stable configuration (uniform over all stable ones).
pub fn random_stable(params: &Arc<ModelParams>, rng: &mut crate::rng::SplitMix64) -> GrainConfig {
    let grains: Vec<u64> = (0..params.sites())
        .map(|_| rng.next_below(params.threshold()))
        .collect();
    GrainConfig::from_grains(Arc::clone(params), grains).expect("below threshold by construction")
}
