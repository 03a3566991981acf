//! Exact sandpile dynamics: deposits, topplings, avalanches and the
//! avalanche-operator algebra.
//!
//! Heights are stored as integer grain counts H = n·h, so the whole chain
//! is bit-exact integer arithmetic: a site is unstable when H ≥ 2dn + m,
//! a toppling removes 2dn + m grains, sends n to each of the 2d neighbors
//! and dissipates m. Stabilization proceeds in parallel rounds (all
//! unstable sites topple once per round); by the abelian property any
//! other order gives the same result, which is itself a tested property.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Result, SandlabError};
use crate::lattice::{ModelParams, Site};
use crate::rng::SplitMix64;

const SNAPSHOT_MAGIC: &[u8; 8] = b"DASMSNAP";
const SNAPSHOT_VERSION: u32 = 1;

/// Per-site grain counts; stable means H(z) < threshold everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainConfig {
    params: Arc<ModelParams>,
    grains: Vec<u64>,
}

/// Everything observed during one deposit-and-stabilize transition.
#[derive(Debug, Clone)]
pub struct AvalancheRecord {
    pub seed: Site,
    /// Per-site toppling counts T(seed, ·, h), dense in flat-index order.
    pub topplings: Vec<u64>,
    pub total_topplings: u64,
    /// Toppling count at the seed site; its stationary mean is the
    /// diagonal propagator (average number of waves).
    pub waves: u64,
    /// Grains dissipated: m · total_topplings.
    pub dissipated: u64,
    /// Number of relaxation rounds counted through the final stable
    /// configuration; 1 when the deposit causes no toppling.
    pub rounds: u64,
}

impl GrainConfig {
    /// Validated construction from explicit grain counts (must be stable).
    pub fn from_grains(params: Arc<ModelParams>, grains: Vec<u64>) -> Result<Self> {
        if grains.len() != params.sites() {
            return Err(SandlabError::LengthMismatch {
                expected: params.sites(),
                got: grains.len(),
            });
        }
        let thr = params.threshold();
        if let Some((idx, &g)) = grains.iter().enumerate().find(|(_, &g)| g >= thr) {
            return Err(SandlabError::Precondition(format!(
                "site {idx} holds {g} grains, threshold is {thr}"
            )));
        }
        Ok(GrainConfig { params, grains })
    }

    /// All sites one grain below threshold; provably recurrent.
    pub fn max_stable(params: Arc<ModelParams>) -> Self {
        let thr = params.threshold();
        let grains = vec![thr - 1; params.sites()];
        GrainConfig { params, grains }
    }

    pub fn uniform(params: Arc<ModelParams>, grains_per_site: u64) -> Result<Self> {
        let g = vec![grains_per_site; params.sites()];
        Self::from_grains(params, g)
    }

    pub fn params(&self) -> &Arc<ModelParams> {
        &self.params
    }

    pub fn grains(&self) -> &[u64] {
        &self.grains
    }

    pub fn grains_at(&self, site: Site) -> u64 {
        self.grains[site.index()]
    }

    pub fn total_grains(&self) -> u64 {
        self.grains.iter().sum()
    }

    pub fn is_stable(&self) -> bool {
        let thr = self.params.threshold();
        self.grains.iter().all(|&g| g < thr)
    }

    /// Drop one grain at `seed` and relax to the next stable configuration.
    /// Pure version; see [`deposit_and_stabilize_mut`](Self::deposit_and_stabilize_mut)
    /// for the in-place one used in sampling loops.
    pub fn deposit_and_stabilize(&self, seed: Site) -> (GrainConfig, AvalancheRecord) {
        let mut next = self.clone();
        let record = next.deposit_and_stabilize_mut(seed);
        (next, record)
    }

    /// In-place deposit and parallel-round stabilization.
    ///
    /// Terminates because every toppling removes m ≥ 1 grains, so
    /// total_topplings ≤ (Σ H + 1)/m.
    pub fn deposit_and_stabilize_mut(&mut self, seed: Site) -> AvalancheRecord {
        let p = Arc::clone(&self.params);
        let thr = p.threshold();
        let n = p.granularity();
        let dim = p.dim();
        let sites = p.sites();

        self.grains[seed.index()] += 1;

        let mut topplings = vec![0u64; sites];
        let mut total: u64 = 0;
        let mut toppling_rounds: u64 = 0;

        let mut current: Vec<usize> = Vec::new();
        if self.grains[seed.index()] >= thr {
            current.push(seed.index());
        }
        let mut next: Vec<usize> = Vec::new();
        let mut stamp = vec![0u64; sites];
        let mut round_id: u64 = 0;

        while !current.is_empty() {
            toppling_rounds += 1;
            round_id += 1;
            // every unstable site sheds one threshold's worth simultaneously
            for &z in &current {
                self.grains[z] -= thr;
                topplings[z] += 1;
                total += 1;
                let site = Site(z);
                for axis in 0..dim {
                    self.grains[p.neighbor(site, axis, 1).index()] += n;
                    self.grains[p.neighbor(site, axis, -1).index()] += n;
                }
            }
            // the next unstable set lives inside current ∪ neighbors(current)
            next.clear();
            for &z in &current {
                if self.grains[z] >= thr && stamp[z] != round_id {
                    stamp[z] = round_id;
                    next.push(z);
                }
                let site = Site(z);
                for axis in 0..dim {
                    for sign in [1i64, -1] {
                        let nb = p.neighbor(site, axis, sign).index();
                        if self.grains[nb] >= thr && stamp[nb] != round_id {
                            stamp[nb] = round_id;
                            next.push(nb);
                        }
                    }
                }
            }
            std::mem::swap(&mut current, &mut next);
        }

        let waves = topplings[seed.index()];
        AvalancheRecord {
            seed,
            topplings,
            total_topplings: total,
            waves,
            dissipated: p.dissipation() * total,
            rounds: toppling_rounds + 1,
        }
    }

    /// Deposit and stabilize by toppling one unstable site at a time in
    /// an rng-chosen order. Must agree exactly with the parallel-round
    /// version (abelian property); kept as an independent route for tests.
    pub fn deposit_and_stabilize_unordered(
        &self,
        seed: Site,
        rng: &mut SplitMix64,
    ) -> (GrainConfig, AvalancheRecord) {
        let mut out = self.clone();
        let p = Arc::clone(&out.params);
        let thr = p.threshold();
        let n = p.granularity();
        let dim = p.dim();

        out.grains[seed.index()] += 1;
        let mut topplings = vec![0u64; p.sites()];
        let mut total = 0u64;
        let mut queue: Vec<usize> = Vec::new();
        let mut queued = vec![false; p.sites()];
        if out.grains[seed.index()] >= thr {
            queue.push(seed.index());
            queued[seed.index()] = true;
        }
        while !queue.is_empty() {
            let pick = rng.next_below(queue.len() as u64) as usize;
            let z = queue.swap_remove(pick);
            queued[z] = false;
            if out.grains[z] < thr {
                continue;
            }
            out.grains[z] -= thr;
            topplings[z] += 1;
            total += 1;
            let site = Site(z);
            for axis in 0..dim {
                for sign in [1i64, -1] {
                    let nb = p.neighbor(site, axis, sign).index();
                    out.grains[nb] += n;
                    if out.grains[nb] >= thr && !queued[nb] {
                        queued[nb] = true;
                        queue.push(nb);
                    }
                }
            }
            if out.grains[z] >= thr && !queued[z] {
                queued[z] = true;
                queue.push(z);
            }
        }
        let waves = topplings[seed.index()];
        let record = AvalancheRecord {
            seed,
            topplings,
            total_topplings: total,
            waves,
            dissipated: p.dissipation() * total,
            rounds: 0, // round structure is not defined for this route
        };
        (out, record)
    }

    /// One Markov-chain step: uniform random site, then deposit and
    /// stabilize.
    pub fn chain_step_mut(&mut self, rng: &mut SplitMix64) -> AvalancheRecord {
        let idx = rng.next_below(self.params.sites() as u64) as usize;
        self.deposit_and_stabilize_mut(Site(idx))
    }

    pub fn chain_step(&self, rng: &mut SplitMix64) -> (GrainConfig, AvalancheRecord) {
        let mut next = self.clone();
        let record = next.chain_step_mut(rng);
        (next, record)
    }

    /// Apply the avalanche operators a(x) for each x in `word`, in order.
    pub fn apply_operator_word(&self, word: &[Site]) -> GrainConfig {
        let mut out = self.clone();
        for &x in word {
            out.deposit_and_stabilize_mut(x);
        }
        out
    }

    /// Smallest k ≤ cap with a(x)^k h = h, or None if the orbit does not
    /// return within cap (h may be transient, or cap too small). For
    /// recurrent h, a(x)^(k-1) realizes the inverse operator.
    pub fn operator_period(&self, x: Site, cap: u64) -> Option<u64> {
        let mut current = self.clone();
        for k in 1..=cap {
            current.deposit_and_stabilize_mut(x);
            if current.grains == self.grains {
                return Some(k);
            }
        }
        None
    }

    /// Binary snapshot: magic, version, d, L, n, m (LE u32) followed by
    /// little-endian 32-bit grain counts in flat-index order.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        let p = &self.params;
        if p.threshold() > u32::MAX as u64 {
            return Err(SandlabError::Snapshot(
                "grain counts do not fit 32 bits".into(),
            ));
        }
        w.write_all(SNAPSHOT_MAGIC)?;
        for v in [
            SNAPSHOT_VERSION,
            p.dim() as u32,
            p.half_width() as u32,
            p.granularity() as u32,
            p.dissipation() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &g in &self.grains {
            w.write_all(&(g as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<GrainConfig> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(SandlabError::Snapshot("bad magic".into()));
        }
        let mut buf = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut buf)?;
            Ok(u32::from_le_bytes(buf))
        };
        let version = next_u32(r)?;
        if version != SNAPSHOT_VERSION {
            return Err(SandlabError::Snapshot(format!(
                "unsupported version {version}"
            )));
        }
        let dim = next_u32(r)? as usize;
        let half_width = next_u32(r)? as i64;
        let n = next_u32(r)? as u64;
        let m = next_u32(r)? as u64;
        let params = Arc::new(ModelParams::new(dim, half_width, n, m)?);
        let mut grains = Vec::with_capacity(params.sites());
        for _ in 0..params.sites() {
            grains.push(next_u32(r)? as u64);
        }
        GrainConfig::from_grains(params, grains)
    }
}

/// Brute-force forward-orbit scan under a single operator a(x): returns
/// the index pair (cycle_start, cycle_len) of the orbit of `start`.
/// Desk-scale only; used to certify transience of small configurations.
pub fn orbit_structure(start: &GrainConfig, x: Site, cap: u64) -> Option<(u64, u64)> {
    let mut seen: HashMap<Vec<u64>, u64> = HashMap::new();
    seen.insert(start.grains.clone(), 0);
    let mut cur = start.clone();
    for step in 1..=cap {
        cur.deposit_and_stabilize_mut(x);
        if let Some(&first) = seen.get(&cur.grains) {
            return Some((first, step - first));
        }
        seen.insert(cur.grains.clone(), step);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc_params(d: usize, l: i64, n: u64, m: u64) -> Arc<ModelParams> {
        Arc::new(ModelParams::new(d, l, n, m).unwrap())
    }

    #[test]
    fn deposit_below_threshold() {
        let p = arc_params(2, 1, 1, 1);
        let h = GrainConfig::uniform(Arc::clone(&p), 3).unwrap();
        let x = p.site(&[0, 0]).unwrap();
        let (h2, rec) = h.deposit_and_stabilize(x);
        assert_eq!(h2.grains_at(x), 4);
        assert_eq!(rec.total_topplings, 0);
        assert_eq!(rec.waves, 0);
        assert_eq!(rec.rounds, 1);
        assert_eq!(rec.dissipated, 0);
    }

    #[test]
    fn single_toppling_trace() {
        // 3×3, n=m=1 (threshold 5): seed at 4 grains, everything else 0.
        let p = arc_params(2, 1, 1, 1);
        let x = p.site(&[0, 0]).unwrap();
        let mut grains = vec![0u64; 9];
        grains[x.index()] = 4;
        let h = GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
        let (h2, rec) = h.deposit_and_stabilize(x);
        assert_eq!(rec.total_topplings, 1);
        assert_eq!(rec.waves, 1);
        assert_eq!(rec.dissipated, 1);
        assert_eq!(rec.rounds, 2);
        assert_eq!(h2.grains_at(x), 0);
        for nb in p.neighbors(x) {
            assert_eq!(h2.grains_at(nb), 1);
        }
        assert_eq!(h2.total_grains(), 4);
    }

    #[test]
    fn mass_balance_random_walk() {
        let p = arc_params(2, 2, 2, 3);
        let mut h = GrainConfig::max_stable(Arc::clone(&p));
        let mut rng = SplitMix64::new(11);
        for _ in 0..2000 {
            let before = h.total_grains();
            let rec = h.chain_step_mut(&mut rng);
            let after = h.total_grains();
            assert_eq!(
                after as i128,
                before as i128 + 1 - (p.dissipation() * rec.total_topplings) as i128
            );
            assert!(rec.total_topplings <= (before + 1) / p.dissipation());
            assert!(h.is_stable());
            assert!(rec.waves <= rec.total_topplings);
            assert!(rec.rounds >= 1);
        }
    }

    #[test]
    fn abelian_pairs_random() {
        // operators commute: a(x)a(y)h == a(y)a(x)h bit-exact
        let mut rng = SplitMix64::new(99);
        for (d, l, n, m) in [(2, 1, 1, 1), (2, 2, 2, 1), (3, 1, 1, 2)] {
            let p = arc_params(d, l, n, m);
            for _ in 0..200 {
                let grains: Vec<u64> = (0..p.sites())
                    .map(|_| rng.next_below(p.threshold()))
                    .collect();
                let h = GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
                let x = Site(rng.next_below(p.sites() as u64) as usize);
                let y = Site(rng.next_below(p.sites() as u64) as usize);
                let hxy = h.apply_operator_word(&[x, y]);
                let hyx = h.apply_operator_word(&[y, x]);
                assert_eq!(hxy, hyx);
            }
        }
    }

    #[test]
    fn empty_word_is_identity_and_powers_compose() {
        let p = arc_params(2, 1, 1, 1);
        let h = GrainConfig::max_stable(Arc::clone(&p));
        assert_eq!(h.apply_operator_word(&[]), h);
        let x = p.site(&[1, -1]).unwrap();
        let by_word = h.apply_operator_word(&[x, x, x]);
        let mut by_steps = h.clone();
        for _ in 0..3 {
            by_steps.deposit_and_stabilize_mut(x);
        }
        assert_eq!(by_word, by_steps);
    }

    #[test]
    fn unordered_route_matches_rounds() {
        let mut rng = SplitMix64::new(3);
        let p = arc_params(2, 2, 1, 1);
        for trial in 0..300 {
            let grains: Vec<u64> = (0..p.sites())
                .map(|_| rng.next_below(p.threshold()))
                .collect();
            let h = GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
            let x = Site(rng.next_below(p.sites() as u64) as usize);
            let (a, rec_a) = h.deposit_and_stabilize(x);
            let (b, rec_b) = h.deposit_and_stabilize_unordered(x, &mut rng);
            assert_eq!(a, b, "trial {trial}");
            assert_eq!(rec_a.topplings, rec_b.topplings);
            assert_eq!(rec_a.total_topplings, rec_b.total_topplings);
        }
    }

    #[test]
    fn operator_period_on_max_stable() {
        let p = arc_params(2, 1, 1, 1);
        let h = GrainConfig::max_stable(Arc::clone(&p));
        let x = p.site(&[0, 0]).unwrap();
        let k = h.operator_period(x, 100_000).expect("h̄ is recurrent");
        assert!(k >= 1);
        // a(x)^(k-1) then a(x) returns to h: the inverse property
        let mut inv = h.clone();
        for _ in 0..k - 1 {
            inv.deposit_and_stabilize_mut(x);
        }
        inv.deposit_and_stabilize_mut(x);
        assert_eq!(inv, h);
    }

    #[test]
    fn all_zero_config_is_transient() {
        let p = arc_params(2, 1, 1, 1);
        let h = GrainConfig::uniform(Arc::clone(&p), 0).unwrap();
        let x = p.site(&[0, 0]).unwrap();
        assert_eq!(h.operator_period(x, 50_000), None);
        // the forward orbit becomes periodic but the cycle excludes the start
        let (cycle_start, cycle_len) = orbit_structure(&h, x, 100_000).unwrap();
        assert!(cycle_start > 0, "all-zero configuration must be transient");
        assert!(cycle_len >= 1);
    }

    #[test]
    fn chain_step_deterministic_and_uniform() {
        let p = arc_params(2, 1, 1, 1);
        let run = |seed: u64| {
            let mut h = GrainConfig::max_stable(Arc::clone(&p));
            let mut rng = SplitMix64::new(seed);
            let mut seeds = Vec::new();
            for _ in 0..500 {
                seeds.push(h.chain_step_mut(&mut rng).seed);
            }
            (h, seeds)
        };
        let (h1, s1) = run(77);
        let (h2, s2) = run(77);
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);

        // site-choice frequencies uniform within 4σ over 10^5 steps
        let mut h = GrainConfig::max_stable(Arc::clone(&p));
        let mut rng = SplitMix64::new(123);
        let steps = 100_000usize;
        let mut counts = vec![0u64; p.sites()];
        for _ in 0..steps {
            counts[h.chain_step_mut(&mut rng).seed.index()] += 1;
        }
        let pr = 1.0 / p.sites() as f64;
        let sigma = (steps as f64 * pr * (1.0 - pr)).sqrt();
        for &c in &counts {
            assert!((c as f64 - steps as f64 * pr).abs() < 4.0 * sigma);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mass_balance_and_stability(
                grains in proptest::collection::vec(0u64..5, 9),
                seed_idx in 0usize..9,
            ) {
                let p = arc_params(2, 1, 1, 1);
                let h = GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
                let before = h.total_grains();
                let (after, rec) = h.deposit_and_stabilize(Site(seed_idx));
                prop_assert!(after.is_stable());
                prop_assert_eq!(
                    after.total_grains() as i128,
                    before as i128 + 1 - rec.total_topplings as i128
                );
                prop_assert!(rec.total_topplings <= before + 1);
                prop_assert_eq!(rec.dissipated, rec.total_topplings);
                prop_assert_eq!(rec.waves, rec.topplings[seed_idx]);
            }

            #[test]
            fn operators_commute(
                grains in proptest::collection::vec(0u64..6, 9),
                x in 0usize..9,
                y in 0usize..9,
            ) {
                let p = arc_params(2, 1, 1, 2);
                let h = GrainConfig::from_grains(Arc::clone(&p), grains).unwrap();
                prop_assert_eq!(
                    h.apply_operator_word(&[Site(x), Site(y)]),
                    h.apply_operator_word(&[Site(y), Site(x)])
                );
            }
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let p = arc_params(2, 2, 2, 1);
        let mut h = GrainConfig::max_stable(Arc::clone(&p));
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            h.chain_step_mut(&mut rng);
        }
        let mut buf = Vec::new();
        h.write_snapshot(&mut buf).unwrap();
        let back = GrainConfig::read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(back, h);
        // corrupt magic
        buf[0] ^= 0xFF;
        assert!(GrainConfig::read_snapshot(&mut buf.as_slice()).is_err());
    }
}
