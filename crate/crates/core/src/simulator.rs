//! Event-by-event simulation of the RFQ process under a quoting policy, with
//! exploration noise recorded alongside the played quotes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::SuJohnsonCurve;
use crate::model::{MarketSpec, RiskLimits, Side};
use crate::tabular::PolicyTable;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of the named `stream` under `master`.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let tag = stream.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    mix(mix(mix(master) ^ tag) ^ index)
}

pub fn stream_rng(master: u64, stream: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `ε ~ U[−amplitude, amplitude]`.
    pub amplitude: f64,
    /// Probability floor `ν`; perturbed probabilities live in `[ν, 1−ν]`.
    pub floor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { amplitude: 0.05, floor: 0.005 }
    }
}

impl NoiseSpec {
    pub fn new(amplitude: f64, floor: f64) -> Result<Self> {
        let n = Self { amplitude, floor };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter("noise amplitude must be positive".into()));
        }
        if !(self.floor > 0.0 && self.floor < 0.5) {
            return Err(Error::InvalidParameter("probability floor must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.gen_range(-self.amplitude..=self.amplitude)
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.floor, 1.0 - self.floor)
    }
}

/// `p_ε = ν ∨ (f(δ) + ε) ∧ (1 − ν)` and `δ_ε = f⁻¹(p_ε)`.
pub fn perturbed_policy(curve: &SuJohnsonCurve, delta: f64, eps: f64, nu: f64) -> Result<(f64, f64)> {
    if !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("quote {delta} is not finite")));
    }
    let p = curve.prob(delta);
    let pe = (p + eps).clamp(nu, 1.0 - nu);
    if eps == 0.0 && pe == p {
        return Ok((p, delta));
    }
    Ok((pe, curve.quote(pe)?))
}

/// Source of quotes for the simulator: fill probability and quote on an
/// admissible side of `bond` at inventory `units`.
pub trait QuotePolicy: Sync {
    fn quote(&self, market: &MarketSpec, bond: usize, side: Side, units: &[i32]) -> Result<(f64, f64)>;
}

impl QuotePolicy for PolicyTable {
    fn quote(&self, _market: &MarketSpec, bond: usize, side: Side, units: &[i32]) -> Result<(f64, f64)> {
        let idx = self.grid.index(units)?;
        match (self.prob(bond, side, idx), self.delta(bond, side, idx)) {
            (Some(p), Some(d)) => Ok((p, d)),
            _ => Err(Error::StateOutOfBounds(units.to_vec())),
        }
    }
}

/// Which of the two quotes drives the fills.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayedQuote {
    /// States follow the current strategy; the perturbed quote is only evaluated.
    #[default]
    Unperturbed,
    Perturbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub state: Vec<i32>,
    pub bond: usize,
    pub side: Side,
    /// False when the side is blocked by the risk limit; quotes are then zero.
    pub quoted: bool,
    pub prob: f64,
    pub delta: f64,
    pub prob_eps: f64,
    pub delta_eps: f64,
    pub filled: bool,
    pub next: Vec<i32>,
}

fn draw_event<R: Rng>(cumulative: &[(usize, Side, f64)], rng: &mut R) -> (usize, Side) {
    let u = rng.gen::<f64>() * cumulative.last().map_or(0.0, |c| c.2);
    let k = cumulative.partition_point(|c| c.2 <= u).min(cumulative.len() - 1);
    (cumulative[k].0, cumulative[k].1)
}

fn cumulative_events(market: &MarketSpec) -> Vec<(usize, Side, f64)> {
    let mut acc = 0.0;
    market
        .rfq_event_distribution()
        .into_iter()
        .map(|e| {
            acc += e.prob;
            (e.bond, e.side, acc)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub noise: NoiseSpec,
    pub played: PlayedQuote,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self { noise: NoiseSpec::default(), played: PlayedQuote::Unperturbed }
    }
}

/// Simulates `len` RFQs from `start`.
pub fn rollout<P: QuotePolicy + ?Sized>(
    market: &MarketSpec,
    limits: &RiskLimits,
    policy: &P,
    start: &[i32],
    len: usize,
    options: &RolloutOptions,
    seed: u64,
) -> Result<Vec<RolloutRecord>> {
    options.noise.validate()?;
    if start.len() != market.dim() || limits.dim() != market.dim() {
        return Err(Error::DimensionMismatch { expected: market.dim(), got: start.len() });
    }
    if !limits.contains(start) {
        return Err(Error::StateOutOfBounds(start.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative = cumulative_events(market);
    let mut state = start.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let (bond, side) = draw_event(&cumulative, &mut rng);
        let eps = options.noise.sample(&mut rng);
        let u: f64 = rng.gen();
        let mut rec = RolloutRecord {
            state: state.clone(),
            bond,
            side,
            quoted: false,
            prob: 0.0,
            delta: 0.0,
            prob_eps: 0.0,
            delta_eps: 0.0,
            filled: false,
            next: Vec::new(),
        };
        if limits.admits(&state, bond, side) {
            let (p, d) = policy.quote(market, bond, side, &state)?;
            let curve = &market.bonds[bond].curve;
            let nu = options.noise.floor;
            let pe = (p + eps).clamp(nu, 1.0 - nu);
            let de = curve.quote(pe)?;
            let played = match options.played {
                PlayedQuote::Unperturbed => p,
                PlayedQuote::Perturbed => pe,
            };
            rec.quoted = true;
            rec.prob = p;
            rec.delta = d;
            rec.prob_eps = pe;
            rec.delta_eps = de;
            rec.filled = u < played;
            if rec.filled {
                state[bond] += side.step();
            }
        }
        rec.next = state.clone();
        out.push(rec);
    }
    Ok(out)
}

/// One training step's worth of simulated data.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutSet {
    pub long: Vec<RolloutRecord>,
    pub additional: Vec<RolloutRecord>,
}

impl RolloutSet {
    pub fn all(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.long.iter().chain(&self.additional)
    }

    pub fn len(&self) -> usize {
        self.long.len() + self.additional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform draw over the inventory box of `limits`.
pub fn uniform_state<R: Rng>(limits: &RiskLimits, rng: &mut R) -> Vec<i32> {
    limits.as_slice().iter().map(|&l| rng.gen_range(-l..=l)).collect()
}

/// One long rollout from a flat inventory and `n_additional` short rollouts
/// from uniform random admissible inventories. All randomness derives from
/// `seed`; the short rollouts run in parallel and are concatenated in order.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<P: QuotePolicy + ?Sized>(
    market: &MarketSpec,
    limits: &RiskLimits,
    policy: &P,
    long_len: usize,
    n_additional: usize,
    additional_len: usize,
    options: &RolloutOptions,
    seed: u64,
) -> Result<RolloutSet> {
    let flat = vec![0; market.dim()];
    let long = rollout(market, limits, policy, &flat, long_len, options, derive_seed(seed, "long", 0))?;
    let chunks = (0..n_additional as u64)
        .into_par_iter()
        .map(|k| {
            let start = uniform_state(limits, &mut stream_rng(seed, "start", k));
            rollout(market, limits, policy, &start, additional_len, options, derive_seed(seed, "additional", k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutSet { long, additional: chunks.into_iter().flatten().collect() })
}

/// Expected per-RFQ reward of a record under the unperturbed quote:
/// `f(δ)·Δ·δ − ψ(q)/Λ`.
pub fn expected_reward(market: &MarketSpec, rec: &RolloutRecord) -> f64 {
    let spread = if rec.quoted { rec.prob * market.bonds[rec.bond].trade_size * rec.delta } else { 0.0 };
    spread - market.penalty_at(&rec.state) / market.total_rate()
}

/// Average expected reward per RFQ over `records`.
pub fn estimate_r_mean(records: &[RolloutRecord], market: &MarketSpec) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("rollout records"));
    }
    Ok(records.iter().map(|r| expected_reward(market, r)).sum::<f64>() / records.len() as f64)
}

/// Standard error of the mean of an autocorrelated series by non-overlapping
/// batch means.
pub fn batch_means_std_error(values: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || values.len() < batches {
        return Err(Error::InvalidParameter(format!("need at least {batches} values for {batches} batches")));
    }
    let size = values.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Mean expected reward with its batch-means standard error.
pub fn r_mean_with_error(records: &[RolloutRecord], market: &MarketSpec, batches: usize) -> Result<(f64, f64)> {
    let rewards: Vec<f64> = records.iter().map(|r| expected_reward(market, r)).collect();
    let mean = estimate_r_mean(records, market)?;
    Ok((mean, batch_means_std_error(&rewards, batches)?))
}

/// Uniform random permutation.
pub fn shuffle<T>(records: &mut [T], seed: u64) {
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

pub fn write_trace(records: &[RolloutRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["state", "bond", "side", "quoted", "prob", "delta", "prob_eps", "delta_eps", "filled", "next"])?;
    let join = |v: &[i32]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";");
    for r in records {
        w.write_record([
            join(&r.state),
            r.bond.to_string(),
            r.side.to_string(),
            r.quoted.to_string(),
            r.prob.to_string(),
            r.delta.to_string(),
            r.prob_eps.to_string(),
            r.delta_eps.to_string(),
            r.filled.to_string(),
            join(&r.next),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bundled_market;
    use crate::model::PenaltySpec;
    use crate::tabular::{average_reward_per_rfq, solve_exact};
    use proptest::prelude::*;

    struct ConstProb(f64);

    impl QuotePolicy for ConstProb {
        fn quote(&self, market: &MarketSpec, bond: usize, _: Side, _: &[i32]) -> Result<(f64, f64)> {
            Ok((self.0, market.bonds[bond].curve.quote(self.0)?))
        }
    }

    fn pair() -> MarketSpec {
        bundled_market().unwrap().subset(&["BOND.1", "BOND.6"]).unwrap()
    }

    #[test]
    fn perturbation_identity_and_clamps() {
        let m = pair();
        let c = &m.bonds[0].curve;
        let d = c.quote(0.4).unwrap();
        let (p, de) = perturbed_policy(c, d, 0.0, 0.005).unwrap();
        assert!((de - d).abs() < 1e-10 && (p - 0.4).abs() < 1e-12);
        let d = c.quote(0.99).unwrap();
        let (p, _) = perturbed_policy(c, d, 0.05, 0.005).unwrap();
        assert!((p - 0.995).abs() < 1e-12);
        let dm = c.myopic_quote().unwrap();
        let (p, de) = perturbed_policy(c, dm, -0.03, 0.005).unwrap();
        assert!((p - (c.prob(dm) - 0.03)).abs() < 1e-12);
        assert!((c.prob(de) - p).abs() < 1e-10);
        assert!(perturbed_policy(c, f64::NAN, 0.0, 0.005).is_err());
    }

    #[test]
    fn fill_rate_at_floor() {
        let m = pair();
        let limits = RiskLimits::uniform(2, 1000);
        let opts = RolloutOptions { played: PlayedQuote::Perturbed, ..Default::default() };
        let nu = opts.noise.floor;
        let recs = rollout(&m, &limits, &ConstProb(nu), &[0, 0], 100_000, &RolloutOptions { noise: NoiseSpec::new(1e-9, nu).unwrap(), ..opts }, 3).unwrap();
        let fills = recs.iter().filter(|r| r.filled).count() as f64;
        let n = recs.len() as f64;
        let sd = (n * nu * (1.0 - nu)).sqrt();
        assert!((fills - n * nu).abs() < 3.0 * sd, "{fills} vs {}", n * nu);
    }

    #[test]
    fn blocked_at_upper_limit() {
        let m = pair();
        let limits = RiskLimits::uniform(2, 2);
        let recs = rollout(&m, &limits, &ConstProb(0.9), &[2, 2], 200, &RolloutOptions::default(), 5).unwrap();
        let first = recs.iter().find(|r| r.filled).unwrap();
        assert_eq!(first.side, Side::Ask);
        assert!(recs.iter().filter(|r| r.state.iter().any(|&n| n == 2) && r.side == Side::Bid).all(|r| {
            r.state[r.bond] < 2 || (!r.quoted && !r.filled)
        }));
        assert!(rollout(&m, &limits, &ConstProb(0.9), &[3, 0], 1, &RolloutOptions::default(), 5).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = pair();
        let limits = RiskLimits::uniform(2, 5);
        let a = collect_rollouts(&m, &limits, &ConstProb(0.3), 500, 10, 20, &RolloutOptions::default(), 11).unwrap();
        let b = collect_rollouts(&m, &limits, &ConstProb(0.3), 500, 10, 20, &RolloutOptions::default(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.long.len(), 500);
        assert_eq!(a.additional.len(), 200);
        let c = collect_rollouts(&m, &limits, &ConstProb(0.3), 500, 10, 20, &RolloutOptions::default(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn long_run_bounds_and_event_frequencies() {
        let m = bundled_market().unwrap().subset(&["BOND.1", "BOND.5", "BOND.9"]).unwrap();
        let limits = RiskLimits(vec![5, 3, 4]);
        let recs = rollout(&m, &limits, &ConstProb(0.45), &[0, 0, 0], 1_000_000, &RolloutOptions::default(), 17).unwrap();
        assert!(recs.iter().all(|r| limits.contains(&r.next)));
        assert!(recs.iter().all(|r| {
            let moved: i32 = r.next.iter().zip(&r.state).map(|(a, b)| (a - b).abs()).sum();
            if r.filled { moved == 1 && r.next[r.bond] - r.state[r.bond] == r.side.step() } else { moved == 0 }
        }));
        let n = recs.len() as f64;
        for e in m.rfq_event_distribution() {
            let k = recs.iter().filter(|r| r.bond == e.bond && r.side == e.side).count() as f64;
            let sd = (n * e.prob * (1.0 - e.prob)).sqrt();
            assert!((k - n * e.prob).abs() < 3.0 * sd, "{e:?}: {k}");
        }
    }

    #[test]
    fn fills_follow_perturbed_probability_by_decile() {
        let m = pair();
        let limits = RiskLimits::uniform(2, 1000);
        let opts = RolloutOptions { noise: NoiseSpec::new(0.3, 0.005).unwrap(), played: PlayedQuote::Perturbed };
        let recs = rollout(&m, &limits, &ConstProb(0.5), &[0, 0], 200_000, &opts, 23).unwrap();
        for dec in 0..10 {
            let (lo, hi) = (dec as f64 / 10.0, (dec + 1) as f64 / 10.0);
            let bucket: Vec<_> = recs.iter().filter(|r| r.prob_eps >= lo && r.prob_eps < hi).collect();
            if bucket.len() < 100 {
                continue;
            }
            let n = bucket.len() as f64;
            let expected: f64 = bucket.iter().map(|r| r.prob_eps).sum();
            let var: f64 = bucket.iter().map(|r| r.prob_eps * (1.0 - r.prob_eps)).sum();
            let k = bucket.iter().filter(|r| r.filled).count() as f64;
            assert!((k - expected).abs() < 3.0 * var.sqrt(), "decile {dec}: {k} vs {expected} of {n}");
        }
    }

    #[test]
    fn r_mean_no_trade_zero_penalty() {
        let m = pair().with_penalty(PenaltySpec::std_dev(0.0));
        let limits = RiskLimits::uniform(2, 5);
        let recs = rollout(&m, &limits, &ConstProb(1e-12), &[0, 0], 1000, &RolloutOptions::default(), 1).unwrap();
        let no_trade: Vec<_> = recs.into_iter().map(|r| RolloutRecord { prob: 0.0, ..r }).collect();
        assert_eq!(estimate_r_mean(&no_trade, &m).unwrap(), 0.0);
        assert!(estimate_r_mean(&[], &m).is_err());
    }

    #[test]
    fn r_mean_matches_exact_average_reward() {
        let m = bundled_market().unwrap().subset(&["BOND.1"]).unwrap();
        let limits = m.max_limits();
        let exact = solve_exact(&m, &limits, 1e-6).unwrap();
        let target = average_reward_per_rfq(&m, &exact.policy).unwrap();
        let recs = rollout(&m, &limits, &exact.policy, &[0], 1_000_000, &RolloutOptions::default(), 29).unwrap();
        let (mean, se) = r_mean_with_error(&recs, &m, 100).unwrap();
        assert!((mean - target).abs() < 3.0 * se, "{mean} ± {se} vs {target}");
    }

    #[test]
    fn shuffle_is_uniform_like() {
        let mut one = vec![7];
        shuffle(&mut one, 3);
        assert_eq!(one, vec![7]);
        let n = 10_000usize;
        let mut v: Vec<usize> = (0..n).collect();
        shuffle(&mut v, 99);
        let mut w: Vec<usize> = (0..n).collect();
        shuffle(&mut w, 99);
        assert_eq!(v, w);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let mut concordant = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                concordant += if v[j] > v[i] { 1 } else { -1 };
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let tau = concordant as f64 / pairs;
        let sd = (2.0 * (2.0 * n as f64 + 5.0) / (9.0 * n as f64 * (n as f64 - 1.0))).sqrt();
        assert!(tau.abs() < 3.0 * sd, "tau {tau}");
    }

    #[test]
    fn trace_has_one_row_per_record() {
        let m = pair();
        let recs = rollout(&m, &RiskLimits::uniform(2, 3), &ConstProb(0.3), &[0, 0], 50, &RolloutOptions::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        write_trace(&recs, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 51);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "long", 0), derive_seed(1, "additional", 0));
        assert_ne!(derive_seed(1, "long", 0), derive_seed(2, "long", 0));
        assert_ne!(derive_seed(1, "start", 0), derive_seed(1, "start", 1));
    }

    proptest! {
        #[test]
        fn perturbed_prob_in_band(p in 0.001f64..0.999, eps in -0.05f64..0.05) {
            let m = pair();
            let c = &m.bonds[1].curve;
            let d = c.quote(p).unwrap();
            let (pe, de) = perturbed_policy(c, d, eps, 0.005).unwrap();
            prop_assert!((0.005..=0.995).contains(&pe));
            prop_assert!((c.prob(de) - pe).abs() < 1e-8);
        }
    }
}
