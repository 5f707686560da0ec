//! Model-based actor-critic: TD learning of the per-RFQ value function with
//! expected rewards, noise-guided updates of the fill-probability networks,
//! and progressive widening of the risk limits.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MarketConfig;
use crate::error::{Error, Result};
use crate::grid::InventoryGrid;
use crate::model::{MarketSpec, PenaltyKind, RiskLimits, Side};
use crate::neural::{pretrain_supervised, sgd_step, FeedForwardNet, OptimizerState, OutputActivation, PretrainConfig, Workspace};
use crate::simulator::{collect_rollouts, derive_seed, shuffle, stream_rng, NoiseSpec, PlayedQuote, QuotePolicy, RolloutOptions, RolloutRecord};
use crate::tabular::{greedy_policy, policy_evaluation, value_iteration, PolicyTable};

fn one() -> usize {
    1
}

/// Default passes over each step's actor data.
pub const ACTOR_EPOCHS: usize = 1;

/// Default function-space step of one critic update.
pub const CRITIC_STEP: f64 = 1.0;

/// Grid points used for pre-training when the active grid is larger.
pub const PRETRAIN_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorVariant {
    #[default]
    MultiNet,
    SingleNetOneHot,
}

/// Quotes the actor is pre-trained to reproduce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialQuotes {
    Myopic,
    /// Optimal single-bond quotes from value iteration, bond by bond.
    #[default]
    SingleBondExact,
    /// Quotes learned by running the single-bond trainer on each bond.
    SingleBondTrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub rollout_len: usize,
    pub n_additional: usize,
    pub additional_len: usize,
    /// Critic mini-batch size `K`.
    pub critic_batch: usize,
    /// Critic mini-batch count `N`; `None` uses every record once.
    #[serde(default)]
    pub critic_batches: Option<usize>,
    /// Actor mini-batch size `L`.
    pub actor_batch: usize,
    /// Actor mini-batch count `M` per bond; `None` uses every record once.
    #[serde(default)]
    pub actor_batches: Option<usize>,
    /// Passes over each step's actor mini-batches.
    #[serde(default = "one")]
    pub actor_epochs: usize,
    pub critic_rate: f64,
    /// Target for `critic_rate·E|∇θ|²` over the pre-training inputs, reached by
    /// redistributing the value scale between the critic's layers.
    #[serde(default)]
    pub critic_step: Option<f64>,
    pub actor_rate: f64,
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    pub hidden_layers: usize,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub played: PlayedQuote,
    /// Starting risk limit in units (capped by each bond's maximum); `None` starts at the maximum.
    #[serde(default)]
    pub initial_limit: Option<u32>,
    /// Steps between limit increases of one unit; 0 disables.
    #[serde(default)]
    pub limit_period: usize,
    /// Overrides every bond's maximum risk limit.
    #[serde(default)]
    pub max_units: Option<u32>,
    /// Per-bond maximum risk limits, applied after `max_units`.
    #[serde(default)]
    pub max_units_by_bond: BTreeMap<String, u32>,
    /// Step counts for single-bond runs on specific bonds.
    #[serde(default)]
    pub steps_by_bond: BTreeMap<String, usize>,
    pub variant: ActorVariant,
    pub initial: InitialQuotes,
    pub pretrain: PretrainConfig,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn base(steps: usize, hidden: usize) -> Self {
        Self {
            steps,
            rollout_len: 10_000,
            n_additional: 100,
            additional_len: 100,
            critic_batch: 70,
            critic_batches: None,
            actor_batch: 50,
            actor_batches: None,
            actor_epochs: ACTOR_EPOCHS,
            critic_rate: 5e-8,
            critic_step: Some(CRITIC_STEP),
            actor_rate: 0.01,
            critic_hidden: hidden,
            actor_hidden: hidden,
            hidden_layers: 2,
            noise: NoiseSpec::default(),
            played: PlayedQuote::Unperturbed,
            initial_limit: None,
            limit_period: 0,
            max_units: None,
            max_units_by_bond: BTreeMap::new(),
            steps_by_bond: BTreeMap::new(),
            variant: ActorVariant::MultiNet,
            initial: InitialQuotes::SingleBondExact,
            pretrain: PretrainConfig { batches: 50_000, rate: 1e-2, ..PretrainConfig::default() },
            checkpoint_every: 100,
            seed: 0,
        }
    }

    fn bond5_capped(mut self) -> Self {
        self.max_units = Some(10);
        self.max_units_by_bond.insert("BOND.5".into(), 5);
        self
    }

    fn widening(mut self, initial: u32, period: usize) -> Self {
        self.initial_limit = Some(initial);
        self.limit_period = period;
        self
    }

    /// Single bond, standard-deviation penalty, from myopic quotes.
    pub fn single() -> Self {
        let mut c = Self { initial: InitialQuotes::Myopic, ..Self::base(200, 10) };
        c.steps_by_bond = [("BOND.5".to_string(), 300), ("BOND.7".to_string(), 300)].into_iter().collect();
        c
    }

    /// Single bond, variance penalty: limits widen from 3 to 5 units.
    pub fn single_variance() -> Self {
        Self::single().widening(3, 20)
    }

    pub fn two_bond() -> Self {
        Self::base(500, 12)
    }

    pub fn two_bond_variance() -> Self {
        Self { critic_rate: 1e-8, ..Self::base(500, 12) }.widening(3, 50)
    }

    /// Shorter rollouts and fewer steps than [`TrainConfig::two_bond`].
    pub fn two_bond_reduced() -> Self {
        Self { rollout_len: 2000, ..Self::base(200, 12) }
    }

    pub fn eight_bond() -> Self {
        Self { critic_batch: 50, ..Self::base(3000, 18) }.bond5_capped().widening(5, 500)
    }

    pub fn eight_bond_variance() -> Self {
        Self { critic_rate: 1e-8, actor_rate: 0.001, ..Self::base(3000, 18) }.widening(3, 500)
    }

    pub fn twenty_bond() -> Self {
        Self::base(5000, 30).bond5_capped().widening(5, 500)
    }

    pub fn twenty_bond_variance() -> Self {
        Self { critic_rate: 1e-8, ..Self::base(4000, 30) }.bond5_capped().widening(3, 500)
    }

    pub fn single_net_two_bond() -> Self {
        Self { variant: ActorVariant::SingleNetOneHot, ..Self::base(500, 12) }
    }

    pub fn single_net_eight_bond() -> Self {
        Self {
            variant: ActorVariant::SingleNetOneHot,
            critic_rate: 5e-9,
            critic_batch: 100,
            actor_rate: 0.001,
            actor_batch: 100,
            ..Self::base(3000, 28)
        }
        .bond5_capped()
        .widening(5, 500)
    }

    pub fn single_net_twenty_bond() -> Self {
        Self {
            variant: ActorVariant::SingleNetOneHot,
            rollout_len: 5000,
            additional_len: 50,
            critic_batch: 50,
            actor_rate: 5e-4,
            actor_hidden: 300,
            ..Self::base(20_000, 30)
        }
        .bond5_capped()
        .widening(5, 200)
    }

    pub const PRESETS: [&'static str; 12] = [
        "single",
        "single-variance",
        "two-bond",
        "two-bond-variance",
        "two-bond-reduced",
        "eight-bond",
        "eight-bond-variance",
        "twenty-bond",
        "twenty-bond-variance",
        "single-net-two-bond",
        "single-net-eight-bond",
        "single-net-twenty-bond",
    ];

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "single" => Self::single(),
            "single-variance" => Self::single_variance(),
            "two-bond" => Self::two_bond(),
            "two-bond-variance" => Self::two_bond_variance(),
            "two-bond-reduced" => Self::two_bond_reduced(),
            "eight-bond" => Self::eight_bond(),
            "eight-bond-variance" => Self::eight_bond_variance(),
            "twenty-bond" => Self::twenty_bond(),
            "twenty-bond-variance" => Self::twenty_bond_variance(),
            "single-net-two-bond" => Self::single_net_two_bond(),
            "single-net-eight-bond" => Self::single_net_eight_bond(),
            "single-net-twenty-bond" => Self::single_net_twenty_bond(),
            _ => return Err(Error::Unknown { kind: "preset", name: name.to_string() }),
        })
    }

    /// The single-bond preset matching a penalty kind.
    pub fn single_for(kind: PenaltyKind) -> Self {
        match kind {
            PenaltyKind::StdDev => Self::single(),
            PenaltyKind::Variance => Self::single_variance(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets `steps` and drops per-bond overrides.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self.steps_by_bond.clear();
        self
    }

    /// Step count for a market: the per-bond override for a single bond, else `steps`.
    pub fn steps_for(&self, market: &MarketSpec) -> usize {
        match market.bonds.as_slice() {
            [b] => *self.steps_by_bond.get(&b.id).unwrap_or(&self.steps),
            _ => self.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.rollout_len,
            self.critic_batch,
            self.actor_batch,
            self.critic_hidden,
            self.actor_hidden,
            self.hidden_layers,
        ];
        if counts.iter().any(|&c| c == 0) || self.critic_batches == Some(0) || self.actor_batches == Some(0) || self.actor_epochs == 0 {
            return Err(Error::InvalidParameter("training counts must be positive".into()));
        }
        if !(self.critic_rate > 0.0 && self.actor_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        if self.initial_limit == Some(0) || self.max_units == Some(0) {
            return Err(Error::InvalidParameter("risk limits must be at least one unit".into()));
        }
        self.noise.validate()
    }

    /// Market with this configuration's maximum risk limits applied.
    pub fn apply_limits(&self, market: &MarketSpec) -> Result<MarketSpec> {
        let mut m = market.clone();
        if let Some(u) = self.max_units {
            m = m.with_max_units(u);
        }
        for (id, &u) in &self.max_units_by_bond {
            if let Some(i) = m.index_of(id) {
                m.bonds[i].max_units = u;
            }
        }
        Ok(m)
    }

    /// Active limits at the start of training.
    pub fn initial_limits(&self, market: &MarketSpec) -> RiskLimits {
        RiskLimits(
            market
                .bonds
                .iter()
                .map(|b| self.initial_limit.map_or(b.max_units, |u| u.min(b.max_units)) as i32)
                .collect(),
        )
    }

    /// Limits in force during 1-based step `j`, given those of step `j − 1`.
    pub fn limits_for_step(&self, market: &MarketSpec, previous: &RiskLimits, j: usize) -> RiskLimits {
        if self.limit_period == 0 || j % self.limit_period != 0 {
            return previous.clone();
        }
        RiskLimits(previous.0.iter().zip(&market.bonds).map(|(&l, b)| (l + 1).min(b.max_units as i32)).collect())
    }
}

fn normalized(units: &[i32], max_units: &[u32]) -> Vec<f64> {
    units.iter().zip(max_units).map(|(&n, &m)| n as f64 / m as f64).collect()
}

fn check_domain(units: &[i32], max_units: &[u32]) -> Result<()> {
    if units.len() != max_units.len() || units.iter().zip(max_units).any(|(&n, &m)| n.unsigned_abs() > m) {
        return Err(Error::StateOutOfBounds(units.to_vec()));
    }
    Ok(())
}

/// Value network `θ[ω⁰]` on inventories scaled by the maximum risk limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: FeedForwardNet,
    pub max_units: Vec<u32>,
}

impl Critic {
    pub fn new<R: Rng>(market: &MarketSpec, hidden: usize, layers: usize, rng: &mut R) -> Result<Self> {
        let max_units = market.bonds.iter().map(|b| b.max_units).collect::<Vec<_>>();
        let net = FeedForwardNet::mlp(market.dim(), hidden, layers, OutputActivation::Affine, rng)?;
        Ok(Self { net, max_units })
    }

    pub fn input(&self, units: &[i32]) -> Vec<f64> {
        normalized(units, &self.max_units)
    }

    pub fn value(&self, units: &[i32]) -> Result<f64> {
        check_domain(units, &self.max_units)?;
        self.net.forward(&self.input(units))
    }
}

/// Fill-probability networks. Each net gives the bid probability of its bond;
/// the ask probability at `q` is the bid probability at `−q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorBundle {
    pub variant: ActorVariant,
    pub nets: Vec<FeedForwardNet>,
    pub max_units: Vec<u32>,
    /// Probabilities are clamped to `[floor, 1 − floor]`.
    pub floor: f64,
}

impl ActorBundle {
    pub fn new<R: Rng>(market: &MarketSpec, variant: ActorVariant, hidden: usize, layers: usize, floor: f64, rng: &mut R) -> Result<Self> {
        let d = market.dim();
        let nets = match variant {
            ActorVariant::MultiNet => (0..d)
                .map(|_| FeedForwardNet::mlp(d, hidden, layers, OutputActivation::Logistic, rng))
                .collect::<Result<Vec<_>>>()?,
            ActorVariant::SingleNetOneHot => vec![FeedForwardNet::mlp(2 * d, hidden, layers, OutputActivation::Logistic, rng)?],
        };
        Ok(Self { variant, nets, max_units: market.bonds.iter().map(|b| b.max_units).collect(), floor })
    }

    pub fn dim(&self) -> usize {
        self.max_units.len()
    }

    pub fn net_for(&self, bond: usize) -> usize {
        match self.variant {
            ActorVariant::MultiNet => bond,
            ActorVariant::SingleNetOneHot => 0,
        }
    }

    /// Network input for a quote on `bond`/`side` at `units`.
    pub fn input(&self, bond: usize, side: Side, units: &[i32]) -> Vec<f64> {
        let sign = match side {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        };
        let mut x: Vec<f64> = units.iter().zip(&self.max_units).map(|(&n, &m)| sign * n as f64 / m as f64).collect();
        if self.variant == ActorVariant::SingleNetOneHot {
            x.extend((0..self.dim()).map(|i| if i == bond { 1.0 } else { 0.0 }));
        }
        x
    }

    /// Clamped fill probability.
    pub fn prob(&self, bond: usize, side: Side, units: &[i32]) -> Result<f64> {
        check_domain(units, &self.max_units)?;
        let p = self.nets[self.net_for(bond)].forward(&self.input(bond, side, units))?;
        Ok(p.clamp(self.floor, 1.0 - self.floor))
    }

    /// Tabulates the actor's quotes on the grid of `limits`.
    pub fn to_policy_table(&self, market: &MarketSpec, limits: &RiskLimits) -> Result<PolicyTable> {
        let grid = InventoryGrid::new(limits);
        let mut quotes = BTreeMap::new();
        for idx in 0..grid.len() {
            let units = grid.state(idx);
            for i in 0..market.dim() {
                for side in Side::BOTH {
                    if limits.admits(&units, i, side) {
                        let p = self.prob(i, side, &units)?;
                        quotes.insert((idx, i, side == Side::Bid), market.bonds[i].curve.quote(p)?);
                    }
                }
            }
        }
        PolicyTable::from_quotes(market, limits, |i, side, units| {
            quotes.get(&(grid.index_unchecked(units), i, side == Side::Bid)).copied().unwrap_or(f64::NAN)
        })
    }
}

impl QuotePolicy for ActorBundle {
    fn quote(&self, market: &MarketSpec, bond: usize, side: Side, units: &[i32]) -> Result<(f64, f64)> {
        let p = self.prob(bond, side, units)?;
        Ok((p, market.bonds[bond].curve.quote(p)?))
    }
}

/// TD target `θ̂` of one record: expected one-step value under the
/// unperturbed quote minus `R_mean`.
pub fn td_target(market: &MarketSpec, critic: &Critic, rec: &RolloutRecord, r_mean: f64) -> Result<f64> {
    let mut ws = Workspace::default();
    td_target_with(market, critic, rec, r_mean, &mut ws)
}

fn one_step_value(
    market: &MarketSpec,
    critic: &Critic,
    rec: &RolloutRecord,
    prob: f64,
    delta: f64,
    here: f64,
    ws: &mut Workspace,
) -> f64 {
    let denom = market.discount + market.total_rate();
    let gamma = market.gamma_rl();
    let stay = -market.penalty_at(&rec.state) / denom + gamma * here;
    if !rec.quoted || prob == 0.0 {
        return stay;
    }
    let mut moved = rec.state.clone();
    moved[rec.bond] += rec.side.step();
    let there = critic.net.forward_with(&critic.input(&moved), ws);
    let fill = market.bonds[rec.bond].trade_size * delta - market.penalty_at(&moved) / denom + gamma * there;
    prob * fill + (1.0 - prob) * stay
}

fn td_target_with(market: &MarketSpec, critic: &Critic, rec: &RolloutRecord, r_mean: f64, ws: &mut Workspace) -> Result<f64> {
    check_domain(&rec.state, &critic.max_units)?;
    let here = critic.net.forward_with(&critic.input(&rec.state), ws);
    Ok(one_step_value(market, critic, rec, rec.prob, rec.delta, here, ws) - r_mean)
}

/// `N` semi-gradient steps on mini-batches of `K` consecutive records. Returns
/// the mean squared TD error seen before each update.
pub fn critic_update(
    market: &MarketSpec,
    critic: &mut Critic,
    records: &[RolloutRecord],
    r_mean: f64,
    batch: usize,
    batches: Option<usize>,
    rate: f64,
) -> Result<f64> {
    let mut opt = OptimizerState::sgd(rate)?;
    let mut grad = vec![0.0; critic.net.param_count()];
    let mut ws = Workspace::default();
    let mut sq = 0.0;
    let mut seen = 0usize;
    let n = batches.unwrap_or(usize::MAX);
    for chunk in records.chunks(batch.max(1)).take(n) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let k = chunk.len() as f64;
        for rec in chunk {
            let target = td_target_with(market, critic, rec, r_mean, &mut ws)?;
            let x = critic.input(&rec.state);
            let y = critic.net.forward_with(&x, &mut ws);
            critic.net.accumulate_grad(&x, (target - y) / k, &mut grad, &mut ws);
            sq += (target - y).powi(2);
            seen += 1;
        }
        sgd_step(&mut critic.net, &mut opt, &grad, 1.0)?;
    }
    Ok(if seen > 0 { sq / seen as f64 } else { 0.0 })
}

/// Difference between the one-step values under the perturbed and the
/// unperturbed quotes. Zero for blocked sides.
pub fn exploration_advantage(market: &MarketSpec, critic: &Critic, rec: &RolloutRecord) -> Result<f64> {
    if !rec.quoted {
        return Ok(0.0);
    }
    check_domain(&rec.state, &critic.max_units)?;
    let mut ws = Workspace::default();
    let here = critic.net.forward_with(&critic.input(&rec.state), &mut ws);
    let with = one_step_value(market, critic, rec, rec.prob_eps, rec.delta_eps, here, &mut ws);
    let without = one_step_value(market, critic, rec, rec.prob, rec.delta, here, &mut ws);
    Ok(with - without)
}

/// One actor training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSample {
    pub input: Vec<f64>,
    pub dv: f64,
    pub dp: f64,
}

/// Divides by the sample standard deviation; all zeros when it vanishes.
pub fn normalize_advantages(raw: &mut [f64]) {
    let n = raw.len();
    if n < 2 {
        raw.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        raw.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    raw.iter_mut().for_each(|v| *v /= sd);
}

/// Per-bond actor datasets from quoted records, advantages normalized per bond.
pub fn actor_datasets(market: &MarketSpec, critic: &Critic, actor: &ActorBundle, records: &[RolloutRecord]) -> Result<Vec<Vec<ActorSample>>> {
    let quoted: Vec<&RolloutRecord> = records.iter().filter(|r| r.quoted).collect();
    let raw = quoted.par_iter().map(|r| exploration_advantage(market, critic, r)).collect::<Result<Vec<_>>>()?;
    let mut per_bond: Vec<Vec<(f64, &RolloutRecord)>> = vec![Vec::new(); market.dim()];
    for (a, r) in raw.into_iter().zip(quoted) {
        per_bond[r.bond].push((a, r));
    }
    Ok(per_bond
        .into_iter()
        .map(|rows| {
            let mut adv: Vec<f64> = rows.iter().map(|(a, _)| *a).collect();
            normalize_advantages(&mut adv);
            rows.iter()
                .zip(adv)
                .map(|((_, r), dv)| ActorSample { input: actor.input(r.bond, r.side, &r.state), dv, dp: r.prob_eps - r.prob })
                .collect()
        })
        .collect())
}

fn ascend(net: &mut FeedForwardNet, batches: &[&[ActorSample]], rate: f64) -> Result<()> {
    let mut opt = OptimizerState::sgd(rate)?;
    let mut grad = vec![0.0; net.param_count()];
    let mut ws = Workspace::default();
    for chunk in batches {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = chunk.len() as f64;
        for s in chunk.iter() {
            if s.dv != 0.0 && s.dp != 0.0 {
                net.accumulate_grad(&s.input, s.dv * s.dp / l, &mut grad, &mut ws);
            }
        }
        sgd_step(net, &mut opt, &grad, 1.0)?;
    }
    Ok(())
}

/// `M` ascent steps per bond on mini-batches of `L` samples. Multi-net bundles
/// update each bond's net independently; a single net takes the bonds'
/// mini-batches in round-robin order.
pub fn actor_update(
    actor: &mut ActorBundle,
    datasets: &[Vec<ActorSample>],
    batch: usize,
    batches: Option<usize>,
    epochs: usize,
    rate: f64,
) -> Result<()> {
    let m = batches.unwrap_or(usize::MAX);
    let chunks: Vec<Vec<&[ActorSample]>> = datasets
        .iter()
        .map(|d| {
            let one: Vec<&[ActorSample]> = d.chunks(batch.max(1)).take(m).collect();
            one.iter().copied().cycle().take(one.len() * epochs).collect()
        })
        .collect();
    match actor.variant {
        ActorVariant::MultiNet => actor
            .nets
            .par_iter_mut()
            .zip(chunks.par_iter())
            .try_for_each(|(net, c)| ascend(net, c, rate)),
        ActorVariant::SingleNetOneHot => {
            let longest = chunks.iter().map(Vec::len).max().unwrap_or(0);
            let order: Vec<&[ActorSample]> =
                (0..longest).flat_map(|k| chunks.iter().filter_map(move |c| c.get(k).copied())).collect();
            ascend(&mut actor.nets[0], &order, rate)
        }
    }
}

/// Bid fill probabilities of the initial quotes, per bond, indexed by
/// `q + max_units` for `q ∈ [−max, max]`.
pub fn initial_bid_probs(market: &MarketSpec, config: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    (0..market.dim())
        .map(|i| {
            let single = market.subset_indices(&[i]);
            let lim = single.bonds[0].max_units as i32;
            let limits = RiskLimits(vec![lim]);
            let curve = &single.bonds[0].curve;
            let mut probs: Vec<f64> = match config.initial {
                InitialQuotes::Myopic => vec![curve.prob(curve.myopic_quote()?); (2 * lim + 1) as usize],
                InitialQuotes::SingleBondExact => {
                    let vi = value_iteration(&single, &limits, 1e-6 * single_bond_scale(&single))?;
                    let pol = greedy_policy(&single, &vi.table)?;
                    (-lim..=lim).map(|n| pol.prob_at(0, Side::Bid, &[n]).map(|p| p.unwrap_or(f64::NAN))).collect::<Result<_>>()?
                }
                InitialQuotes::SingleBondTrained => {
                    let cfg = TrainConfig::single_for(market.penalty.kind).with_seed(derive_seed(config.seed, "single-bond", i as u64));
                    let mut t = Trainer::new(&single, cfg)?;
                    t.run(None)?;
                    (-lim..=lim)
                        .map(|n| if n < lim { t.actor.prob(0, Side::Bid, &[n]) } else { Ok(f64::NAN) })
                        .collect::<Result<_>>()?
                }
            };
            // The bid is never quoted at +limit; extend the last quoted value.
            let last = probs.len() - 1;
            probs[last] = probs[last - 1];
            Ok(probs)
        })
        .collect()
}

fn single_bond_scale(single: &MarketSpec) -> f64 {
    let lim = single.bonds[0].max_units as i32;
    let psi = single.penalty_at(&[lim]);
    (psi / single.discount).max(1.0)
}

/// Single-bond value functions `θ̃` of the initial quotes, per bond.
fn initial_single_values(market: &MarketSpec, bid_probs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    (0..market.dim())
        .map(|i| {
            let single = market.subset_indices(&[i]);
            let lim = single.bonds[0].max_units as i32;
            let probs = &bid_probs[i];
            let curve = single.bonds[0].curve;
            let policy = PolicyTable::from_quotes(&single, &RiskLimits(vec![lim]), |_, side, units| {
                let n = match side {
                    Side::Bid => units[0],
                    Side::Ask => -units[0],
                };
                curve.quote(probs[(n + lim) as usize]).unwrap_or(f64::NAN)
            })?;
            Ok(policy_evaluation(&single, &policy)?.values)
        })
        .collect()
}

fn pretrain_states<R: Rng>(limits: &RiskLimits, rng: &mut R) -> Vec<Vec<i32>> {
    let grid = InventoryGrid::new(limits);
    let total: f64 = limits.0.iter().map(|&l| (2 * l + 1) as f64).product();
    if total <= PRETRAIN_SAMPLES as f64 {
        grid.states().collect()
    } else {
        (0..PRETRAIN_SAMPLES).map(|_| crate::simulator::uniform_state(limits, rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    pub critic_mse: f64,
    pub critic_variance: f64,
    pub actor_mse: Vec<f64>,
}

/// Fits the actor to the initial quotes and the critic to the sum of the
/// single-bond values of those quotes, shifted to vanish at the flat inventory.
pub fn pretrain(market: &MarketSpec, config: &TrainConfig) -> Result<(Critic, ActorBundle, PretrainSummary)> {
    config.validate()?;
    let d = market.dim();
    let limits = config.initial_limits(market);
    let mut init_rng = stream_rng(config.seed, "init", 0);
    let mut critic = Critic::new(market, config.critic_hidden, config.hidden_layers, &mut init_rng)?;
    let mut actor = ActorBundle::new(market, config.variant, config.actor_hidden, config.hidden_layers, config.noise.floor, &mut init_rng)?;
    let bid_probs = initial_bid_probs(market, config)?;
    let singles = initial_single_values(market, &bid_probs)?;
    let max: Vec<i32> = market.bonds.iter().map(|b| b.max_units as i32).collect();

    let mut rng = stream_rng(config.seed, "pretrain", 0);
    let states = pretrain_states(&limits, &mut rng);
    let gamma = market.gamma_rl();
    let denom = market.discount + market.total_rate();
    let theta = |units: &[i32]| {
        let any_time: f64 = units.iter().enumerate().map(|(i, &n)| singles[i][(n + max[i]) as usize]).sum();
        (any_time + market.penalty_at(units) / denom) / gamma
    };
    let origin = theta(&vec![0; d]);
    let inputs: Vec<Vec<f64>> = states.iter().map(|s| critic.input(s)).collect();
    let targets: Vec<f64> = states.iter().map(|s| theta(s) - origin).collect();
    let rep = pretrain_supervised(&mut critic.net, &inputs, &targets, &config.pretrain, &mut rng)?;
    if let Some(step) = config.critic_step {
        calibrate_critic(&mut critic.net, &inputs, config.critic_rate, step)?;
    }

    let bid_prob = |i: usize, n: i32| bid_probs[i][(n + max[i]) as usize].clamp(config.noise.floor, 1.0 - config.noise.floor);
    let mut actor_mse = Vec::new();
    match config.variant {
        ActorVariant::MultiNet => {
            let reports = actor
                .nets
                .par_iter_mut()
                .enumerate()
                .map(|(i, net)| {
                    let mut rng = stream_rng(config.seed, "pretrain-actor", i as u64);
                    let own: Vec<&Vec<i32>> = states.iter().filter(|s| s[i] < limits.0[i]).collect();
                    let xs: Vec<Vec<f64>> = own.iter().map(|s| normalized(s, &actor_max(market))).collect();
                    let ts: Vec<f64> = own.iter().map(|s| bid_prob(i, s[i])).collect();
                    pretrain_supervised(net, &xs, &ts, &actor_pretrain_config(&config.pretrain), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            actor_mse.extend(reports.iter().map(|r| r.mse));
        }
        ActorVariant::SingleNetOneHot => {
            let mut xs = Vec::new();
            let mut ts = Vec::new();
            for (k, s) in states.iter().enumerate() {
                let i = k % d;
                if s[i] < limits.0[i] {
                    xs.push(actor.input(i, Side::Bid, s));
                    ts.push(bid_prob(i, s[i]));
                }
            }
            let mut rng = stream_rng(config.seed, "pretrain-actor", 0);
            let r = pretrain_supervised(&mut actor.nets[0], &xs, &ts, &actor_pretrain_config(&config.pretrain), &mut rng)?;
            actor_mse.push(r.mse);
        }
    }
    Ok((critic, actor, PretrainSummary { critic_mse: rep.mse, critic_variance: rep.target_variance, actor_mse }))
}

/// Picks the layer allocation whose `rate·E|∇θ|²` is closest to `step` in log scale.
pub fn calibrate_critic(net: &mut FeedForwardNet, inputs: &[Vec<f64>], rate: f64, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter("critic step must be positive".into()));
    }
    let probe = &inputs[..inputs.len().min(500)];
    let eval = |lk: f64| {
        let mut n = net.clone();
        n.rebalance(lk.exp()).map(|_| (rate * n.mean_grad_sq(probe) / step).ln().abs())
    };
    let mut best = (0.0, eval(0.0)?);
    let mut lk = -12.0;
    while lk <= 16.0 {
        let e = eval(lk)?;
        if e < best.1 {
            best = (lk, e);
        }
        lk += 0.05;
    }
    net.rebalance(best.0.exp())?;
    Ok(rate * net.mean_grad_sq(probe))
}

fn actor_max(market: &MarketSpec) -> Vec<u32> {
    market.bonds.iter().map(|b| b.max_units).collect()
}

fn actor_pretrain_config(base: &PretrainConfig) -> PretrainConfig {
    PretrainConfig { abs_tol: base.abs_tol.min(1e-7), ..*base }
}

/// One learning-curve point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub r_mean: f64,
    pub active_limits: Vec<i32>,
}

/// Moving median over the last `window` points (fewer at the start).
pub fn moving_median(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(window.max(1));
            let mut w = values[lo..=k].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            if m % 2 == 1 {
                w[m / 2]
            } else {
                0.5 * (w[m / 2 - 1] + w[m / 2])
            }
        })
        .collect()
}

pub fn write_learning_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "r_mean", "active_limits"])?;
    for p in curve {
        let lim = p.active_limits.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([p.step.to_string(), p.r_mean.to_string(), lim])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_learning_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|row| {
            let row = row?;
            let bad = |what: &str| Error::Config(format!("learning curve: bad {what}"));
            let step = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("step"))?;
            let r_mean = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("r_mean"))?;
            let active_limits = row
                .get(2)
                .ok_or_else(|| bad("limits"))?
                .split(';')
                .map(|s| s.parse().map_err(|_| bad("limits")))
                .collect::<Result<_>>()?;
            Ok(CurvePoint { step, r_mean, active_limits })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub r_mean: f64,
    pub td_mse: f64,
    pub limits: RiskLimits,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    limits: Vec<i32>,
    seed: u64,
}

/// Training loop state: market, configuration, networks, active limits and
/// learning curve.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub market: MarketSpec,
    pub config: TrainConfig,
    pub critic: Critic,
    pub actor: ActorBundle,
    pub limits: RiskLimits,
    pub step: usize,
    pub curve: Vec<CurvePoint>,
    pub pretrain: Option<PretrainSummary>,
}

impl Trainer {
    /// Applies the configured limits to `market` and pre-trains both networks.
    pub fn new(market: &MarketSpec, config: TrainConfig) -> Result<Self> {
        let market = config.apply_limits(market)?;
        let (critic, actor, summary) = pretrain(&market, &config)?;
        let limits = config.initial_limits(&market);
        Ok(Self { market, config, critic, actor, limits, step: 0, curve: Vec::new(), pretrain: Some(summary) })
    }

    pub fn from_parts(market: &MarketSpec, config: TrainConfig, critic: Critic, actor: ActorBundle) -> Result<Self> {
        config.validate()?;
        let market = config.apply_limits(market)?;
        if critic.max_units.len() != market.dim() || actor.dim() != market.dim() {
            return Err(Error::DimensionMismatch { expected: market.dim(), got: actor.dim() });
        }
        let limits = config.initial_limits(&market);
        Ok(Self { market, config, critic, actor, limits, step: 0, curve: Vec::new(), pretrain: None })
    }

    fn rollout_options(&self) -> RolloutOptions {
        RolloutOptions { noise: self.config.noise, played: self.config.played }
    }

    /// One iteration: limit schedule, rollouts, `R_mean`, critic, actor.
    pub fn step_once(&mut self) -> Result<StepReport> {
        let j = self.step + 1;
        self.limits = self.config.limits_for_step(&self.market, &self.limits, j);
        let cfg = &self.config;
        let seed = derive_seed(cfg.seed, "step", j as u64);
        let set = collect_rollouts(
            &self.market,
            &self.limits,
            &self.actor,
            cfg.rollout_len,
            cfg.n_additional,
            cfg.additional_len,
            &self.rollout_options(),
            seed,
        )?;
        let r_mean = crate::simulator::estimate_r_mean(&set.long, &self.market)?;
        let mut records: Vec<RolloutRecord> = set.long.into_iter().chain(set.additional).collect();
        shuffle(&mut records, derive_seed(seed, "shuffle", 0));
        let td_mse = critic_update(&self.market, &mut self.critic, &records, r_mean, cfg.critic_batch, cfg.critic_batches, cfg.critic_rate)?;
        let datasets = actor_datasets(&self.market, &self.critic, &self.actor, &records)?;
        actor_update(&mut self.actor, &datasets, cfg.actor_batch, cfg.actor_batches, cfg.actor_epochs, cfg.actor_rate)?;
        self.step = j;
        self.curve.push(CurvePoint { step: j, r_mean, active_limits: self.limits.0.clone() });
        log::debug!("step {j}: R_mean {r_mean:.4}, TD mse {td_mse:.4e}");
        Ok(StepReport { step: j, r_mean, td_mse, limits: self.limits.clone() })
    }

    /// Runs until [`TrainConfig::steps_for`], checkpointing to `dir` when given.
    pub fn run(&mut self, dir: Option<&Path>) -> Result<()> {
        let steps = self.config.steps_for(&self.market);
        while self.step < steps {
            self.step_once()?;
            if let Some(dir) = dir {
                if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                    self.save_checkpoint(dir)?;
                }
            }
        }
        if let Some(dir) = dir {
            self.save_checkpoint(dir)?;
        }
        Ok(())
    }

    /// Writes `market.json`, `config.json`, `critic.json`, `actor.json`,
    /// `state.json` and `learning_curve.csv` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        MarketConfig::from(&self.market).save(&dir.join("market.json"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        std::fs::write(dir.join("critic.json"), serde_json::to_string(&self.critic)?)?;
        std::fs::write(dir.join("actor.json"), serde_json::to_string(&self.actor)?)?;
        let state = TrainerState { step: self.step, limits: self.limits.0.clone(), seed: self.config.seed };
        let mut f = std::fs::File::create(dir.join("state.json"))?;
        f.write_all(serde_json::to_string_pretty(&state)?.as_bytes())?;
        write_learning_curve(&self.curve, &dir.join("learning_curve.csv"))
    }

    pub fn resume(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        let market = MarketConfig::load(&dir.join("market.json"))?.build()?;
        let config: TrainConfig = serde_json::from_str(&read("config.json")?)?;
        let critic: Critic = serde_json::from_str(&read("critic.json")?)?;
        let actor: ActorBundle = serde_json::from_str(&read("actor.json")?)?;
        let state: TrainerState = serde_json::from_str(&read("state.json")?)?;
        let curve = read_learning_curve(&dir.join("learning_curve.csv"))?;
        if curve.len() != state.step {
            return Err(Error::Config(format!("checkpoint at step {} has {} curve rows", state.step, curve.len())));
        }
        Ok(Self { market, config, critic, actor, limits: RiskLimits(state.limits), step: state.step, curve, pretrain: None })
    }

    pub fn r_means(&self) -> Vec<f64> {
        self.curve.iter().map(|p| p.r_mean).collect()
    }
}

/// Pre-trains and trains in one call.
pub fn train(market: &MarketSpec, config: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(market, config)?;
    t.run(None)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bundled_market;
    use crate::model::PenaltySpec;
    use crate::simulator::rollout;
    use crate::tabular::{rfq_value_from_policy, stationary_distribution};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(id: &str) -> MarketSpec {
        bundled_market().unwrap().subset(&[id]).unwrap()
    }

    fn record(state: Vec<i32>, side: Side, prob: f64, delta: f64) -> RolloutRecord {
        let mut next = state.clone();
        next[0] += side.step();
        RolloutRecord { state, bond: 0, side, quoted: true, prob, delta, prob_eps: prob, delta_eps: delta, filled: false, next }
    }

    fn zero_critic(market: &MarketSpec) -> Critic {
        Critic { net: FeedForwardNet::zeros(&[market.dim(), 4, 4, 1], OutputActivation::Affine).unwrap(), max_units: vec![5; market.dim()] }
    }

    #[test]
    fn td_target_trivial_cases() {
        let m = single("BOND.1").with_penalty(PenaltySpec::std_dev(0.0));
        let mut critic = zero_critic(&m);
        let b = critic.net.param_count() - 1;
        critic.net.params_mut()[b] = 40.0;
        let rec = record(vec![1], Side::Bid, 0.0, 3.0);
        assert!((td_target(&m, &critic, &rec, 0.0).unwrap() - m.gamma_rl() * 40.0).abs() < 1e-9);
        let critic = zero_critic(&m);
        let rec = record(vec![1], Side::Bid, 1.0, 3.0);
        let expected = m.bonds[0].trade_size * 3.0;
        assert!((td_target(&m, &critic, &rec, 0.0).unwrap() - expected).abs() < 1e-9);
        assert!(td_target(&m, &critic, &record(vec![9], Side::Bid, 0.5, 1.0), 0.0).is_err());
    }

    /// Exact `θ` of a fixed policy, shifted by `R/(1−γ)`, has zero mean TD
    /// error under the stationary law when `R_mean` is the exact average reward.
    #[test]
    fn td_error_vanishes_at_tabular_fixed_point() {
        let m = single("BOND.3").with_max_units(1);
        let limits = RiskLimits(vec![1]);
        let policy = PolicyTable::myopic(&m, &limits).unwrap();
        let any_time = policy_evaluation(&m, &policy).unwrap();
        let theta = rfq_value_from_policy(&m, &any_time, &policy).unwrap();
        let stat = stationary_distribution(&m, &policy).unwrap();
        let r = crate::tabular::average_reward_per_rfq(&m, &policy).unwrap();
        let gamma = m.gamma_rl();
        let denom = m.discount + m.total_rate();
        // Same target as td_target with a tabular critic.
        let target = |n: i32, side: Side| {
            let idx = (n + 1) as usize;
            let stay = -m.penalty_at(&[n]) / denom + gamma * theta.values[idx];
            match policy.delta_at(0, side, &[n]).unwrap() {
                None => stay,
                Some(d) => {
                    let p = m.bonds[0].curve.prob(d);
                    let n2 = n + side.step();
                    let fill = m.bonds[0].trade_size * d - m.penalty_at(&[n2]) / denom + gamma * theta.values[(n2 + 1) as usize];
                    p * fill + (1.0 - p) * stay
                }
            }
        };
        let shift = r / (1.0 - gamma);
        let mut mean_err = 0.0;
        for n in -1..=1 {
            let idx = (n + 1) as usize;
            for side in Side::BOTH {
                let t = target(n, side) - gamma * shift - r;
                mean_err += stat.mass[idx] * m.rfq_prob(0, side) * (t - (theta.values[idx] - shift));
            }
        }
        assert!(mean_err.abs() < 1e-8 * shift.abs().max(1.0), "{mean_err}");
    }

    #[test]
    fn critic_update_trivial_cases() {
        let m = single("BOND.1").with_penalty(PenaltySpec::std_dev(0.0));
        let mut critic = zero_critic(&m);
        let rec = record(vec![0], Side::Bid, 0.0, 1.0);
        let before = critic.clone();
        critic_update(&m, &mut critic, &[rec.clone(), rec.clone()], 0.0, 2, None, 0.1).unwrap();
        assert_eq!(critic, before);

        // Bias-only critic: θ ≡ b, target γb + Δδ·f − R, step η·(θ̂ − θ).
        let mut critic = Critic { net: FeedForwardNet::zeros(&[1, 1], OutputActivation::Affine).unwrap(), max_units: vec![5] };
        critic.net.params_mut()[1] = 2.0;
        let rec = record(vec![0], Side::Bid, 0.5, 4.0);
        let target = td_target(&m, &critic, &rec, 1.0).unwrap();
        critic_update(&m, &mut critic, &[rec], 1.0, 1, None, 0.01).unwrap();
        assert!((critic.net.params()[1] - (2.0 + 0.01 * (target - 2.0))).abs() < 1e-12);
    }

    #[test]
    fn advantage_cases() {
        let m = single("BOND.2").with_penalty(PenaltySpec::std_dev(0.0));
        let critic = zero_critic(&m);
        let c = m.bonds[0].curve;
        let d = c.quote(0.3).unwrap();
        let rec = record(vec![0], Side::Bid, 0.3, d);
        assert_eq!(exploration_advantage(&m, &critic, &rec).unwrap(), 0.0);
        let dm = c.myopic_quote().unwrap();
        let size = m.bonds[0].trade_size;
        for eps in [-0.04, 0.04] {
            let pe = 0.3 + eps;
            let de = c.quote(pe).unwrap();
            let rec = RolloutRecord { prob_eps: pe, delta_eps: de, ..rec.clone() };
            let a = exploration_advantage(&m, &critic, &rec).unwrap();
            assert!((a - size * (de * pe - d * 0.3)).abs() < 1e-9 * size.max(1.0));
            // Toward the myopic quote raises the myopic objective.
            let toward = (de - dm).abs() < (d - dm).abs();
            assert_eq!(a > 0.0, toward);
        }
    }

    #[test]
    fn normalization_gives_unit_sd() {
        let mut v = vec![1.0, -2.0, 3.5, 0.25, 8.0];
        normalize_advantages(&mut v);
        let mean = v.iter().sum::<f64>() / 5.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((sd - 1.0).abs() < 1e-9);
        let mut flat = vec![2.0; 4];
        normalize_advantages(&mut flat);
        assert_eq!(flat, vec![0.0; 4]);
    }

    #[test]
    fn actor_update_direction() {
        let m = single("BOND.1");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut actor = ActorBundle::new(&m, ActorVariant::MultiNet, 6, 2, 0.005, &mut rng).unwrap();
        let before = actor.clone();
        let x = actor.input(0, Side::Bid, &[1]);
        actor_update(&mut actor, &[vec![ActorSample { input: x.clone(), dv: 0.0, dp: 0.03 }]], 50, None, 1, 0.01).unwrap();
        assert_eq!(actor, before);
        let p0 = actor.nets[0].forward(&x).unwrap();
        actor_update(&mut actor, &[vec![ActorSample { input: x.clone(), dv: 1.0, dp: 0.03 }]], 50, None, 1, 0.01).unwrap();
        assert!(actor.nets[0].forward(&x).unwrap() > p0);
        actor_update(&mut actor, &[vec![]], 50, None, 1, 0.01).unwrap();
    }

    #[test]
    fn ask_is_mirrored_bid() {
        let m = bundled_market().unwrap().subset(&["BOND.1", "BOND.6"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for variant in [ActorVariant::MultiNet, ActorVariant::SingleNetOneHot] {
            let actor = ActorBundle::new(&m, variant, 8, 2, 0.005, &mut rng).unwrap();
            for q in [[1, -2], [0, 3], [-4, 4]] {
                let neg = [-q[0], -q[1]];
                for i in 0..2 {
                    assert_eq!(actor.prob(i, Side::Ask, &q).unwrap(), actor.prob(i, Side::Bid, &neg).unwrap());
                }
            }
        }
    }

    #[test]
    fn myopic_pretraining_is_flat() {
        let m = single("BOND.1");
        let cfg = TrainConfig::single().with_seed(5);
        let (critic, actor, summary) = pretrain(&m, &cfg).unwrap();
        let c = m.bonds[0].curve;
        let pm = c.prob(c.myopic_quote().unwrap());
        for n in -5..5 {
            assert!((actor.prob(0, Side::Bid, &[n]).unwrap() - pm).abs() < 1e-3, "{n}");
        }
        assert!(summary.actor_mse[0] < 1e-6, "{summary:?}");
        // Critic against the single-bond value of the myopic policy.
        let limits = RiskLimits(vec![5]);
        let policy = PolicyTable::myopic(&m, &limits).unwrap();
        let exact = rfq_value_from_policy(&m, &policy_evaluation(&m, &policy).unwrap(), &policy).unwrap();
        let range = exact.span();
        let shift = exact.at(&[0]).unwrap();
        for n in -5..=5 {
            let err = (critic.value(&[n]).unwrap() - (exact.at(&[n]).unwrap() - shift)).abs();
            assert!(err < 0.01 * range, "{n}: {err} vs range {range}");
        }
    }

    #[test]
    fn two_bond_critic_pretraining_is_separable() {
        let m = bundled_market().unwrap().subset(&["BOND.1", "BOND.6"]).unwrap().with_penalty(PenaltySpec::variance(2e-5));
        let cfg = TrainConfig::two_bond().with_seed(6);
        let (critic, _, _) = pretrain(&m, &cfg).unwrap();
        let probs = initial_bid_probs(&m, &cfg).unwrap();
        let singles = initial_single_values(&m, &probs).unwrap();
        let gamma = m.gamma_rl();
        let denom = m.discount + m.total_rate();
        let theta = |q: [i32; 2]| (singles[0][(q[0] + 5) as usize] + singles[1][(q[1] + 5) as usize] + m.penalty_at(&q) / denom) / gamma;
        let origin = theta([0, 0]);
        let mut vals = Vec::new();
        for a in -5..=5 {
            for b in -5..=5 {
                vals.push((critic.value(&[a, b]).unwrap(), theta([a, b]) - origin));
            }
        }
        let range = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max) - vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        for (got, want) in vals {
            assert!((got - want).abs() < 0.01 * range, "{got} vs {want}");
        }
    }

    #[test]
    fn limits_schedule_is_monotone_and_capped() {
        let m = TrainConfig::eight_bond().apply_limits(&bundled_market().unwrap().subset(&["BOND.1", "BOND.5"]).unwrap()).unwrap();
        let cfg = TrainConfig::eight_bond();
        let mut lim = cfg.initial_limits(&m);
        assert_eq!(lim.0, vec![5, 5]);
        for j in 1..=4000 {
            let next = cfg.limits_for_step(&m, &lim, j);
            assert!(next.0.iter().zip(&lim.0).all(|(a, b)| a >= b));
            assert!(next.0.iter().zip(&m.bonds).all(|(&a, b)| a <= b.max_units as i32));
            lim = next;
        }
        assert_eq!(lim.0, vec![10, 5]);
    }

    #[test]
    fn presets_validate() {
        for name in TrainConfig::PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("nope").is_err());
        let cfg = TrainConfig::single_net_twenty_bond();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn moving_median_window() {
        let v = [1.0, 5.0, 2.0, 8.0, 3.0];
        assert_eq!(moving_median(&v, 3), vec![1.0, 3.0, 2.0, 5.0, 3.0]);
        assert_eq!(moving_median(&v, 40).len(), 5);
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            rollout_len: 300,
            n_additional: 5,
            additional_len: 20,
            checkpoint_every: 2,
            pretrain: PretrainConfig { batches: 300, ..Default::default() },
            ..TrainConfig::two_bond().with_steps(4).with_seed(8)
        }
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let m = bundled_market().unwrap().subset(&["BOND.1", "BOND.6"]).unwrap();
        let full = train(&m, tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut half = Trainer::new(&m, TrainConfig { steps: 2, ..tiny() }).unwrap();
        half.run(Some(dir.path())).unwrap();
        let mut resumed = Trainer::resume(dir.path()).unwrap();
        resumed.config.steps = 4;
        resumed.run(None).unwrap();
        assert_eq!(resumed.critic, full.critic);
        assert_eq!(resumed.actor, full.actor);
        assert_eq!(resumed.curve, full.curve);
        assert_eq!(read_learning_curve(&dir.path().join("learning_curve.csv")).unwrap().len(), 2);
    }

    #[test]
    fn training_respects_limits_and_symmetry() {
        let m = bundled_market().unwrap().subset(&["BOND.1", "BOND.6"]).unwrap();
        let cfg = TrainConfig { initial_limit: Some(3), limit_period: 2, ..tiny() };
        let t = train(&m, cfg).unwrap();
        assert_eq!(t.curve.iter().map(|p| p.active_limits[0]).collect::<Vec<_>>(), vec![3, 4, 4, 5]);
        let recs = rollout(&m, &t.limits, &t.actor, &[0, 0], 5000, &RolloutOptions::default(), 1).unwrap();
        assert!(recs.iter().all(|r| t.limits.contains(&r.next)));
    }
}
