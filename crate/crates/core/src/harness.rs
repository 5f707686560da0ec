//! Experiment orchestration: market ingestion, solver and trainer dispatch,
//! comparison reports, per-bond tables and plot data.
//!
//! Every operation writes its files into [`ExperimentSpec::out`] and returns a
//! summary that is also saved there as `summary.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actor_critic::{moving_median, read_learning_curve, TrainConfig, Trainer};
use crate::data::{bundled_config, MarketConfig};
use crate::error::{Error, Result};
use crate::fd::{solve_stationary, FdConfig, StopReason};
use crate::grid::InventoryGrid;
use crate::model::{MarketSpec, PenaltyKind, PenaltySpec, RiskLimits, Side};
use crate::simulator::{derive_seed, r_mean_with_error, rollout, QuotePolicy, RolloutOptions};
use crate::tabular::{average_reward_per_rfq, greedy_policy, to_rfq_value, value_iteration, Flavor, PolicyTable, ValueTable};

pub const DEFAULT_GAMMA_STDDEV: f64 = 5e-2;
pub const DEFAULT_GAMMA_VARIANCE: f64 = 2e-5;
/// Largest dimension handled by the exact side of a comparison.
pub const EXACT_MAX_DIM: usize = 2;
/// RFQs simulated when a policy is evaluated by rollout.
pub const EVALUATION_EVENTS: usize = 1_000_000;
/// Batches for the batch-means standard error of rollout averages.
pub const SE_BATCHES: usize = 100;
pub const MEDIAN_WINDOW: usize = 40;
/// Value-iteration tolerance relative to the value scale `max ψ / r`.
pub const VI_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveFd,
    SolveVi,
    EvaluatePolicy,
    Train,
    Compare,
}

/// Exact solver used on the exact side of a comparison or table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactMethod {
    #[default]
    ValueIteration,
    FiniteDifference,
    /// Value iteration, cross-checked against the finite-difference scheme.
    Both,
}

/// One experiment: which market, which bonds, what to run and where to write.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Market file (TOML or JSON); the bundled market when absent.
    pub config: Option<PathBuf>,
    pub mode: Mode,
    /// Bond ids to keep, in order; all bonds when empty.
    pub bonds: Vec<String>,
    pub preset: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub penalty: Option<PenaltyKind>,
    pub gamma: Option<f64>,
    pub discount: Option<f64>,
    /// Overrides the preset's step count.
    #[serde(default)]
    pub steps: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(mode: Mode, out: impl Into<PathBuf>) -> Self {
        Self {
            config: None,
            mode,
            bonds: Vec::new(),
            preset: None,
            out: out.into(),
            seed: 0,
            penalty: None,
            gamma: None,
            discount: None,
            steps: None,
        }
    }

    pub fn with_bonds<S: AsRef<str>>(mut self, ids: &[S]) -> Self {
        self.bonds = ids.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_preset(mut self, name: &str) -> Self {
        self.preset = Some(name.to_string());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_penalty(mut self, kind: PenaltyKind) -> Self {
        self.penalty = Some(kind);
        self
    }

    /// The full market with penalty and discount overrides applied.
    pub fn full_market(&self) -> Result<MarketSpec> {
        let cfg = match &self.config {
            Some(p) => MarketConfig::load(p)?,
            None => bundled_config()?,
        };
        let mut market = cfg.build()?;
        if self.penalty.is_some() || self.gamma.is_some() {
            let kind = self.penalty.unwrap_or(market.penalty.kind);
            let gamma = match (self.gamma, self.penalty) {
                (Some(g), _) => g,
                (None, Some(PenaltyKind::StdDev)) => DEFAULT_GAMMA_STDDEV,
                (None, Some(PenaltyKind::Variance)) => DEFAULT_GAMMA_VARIANCE,
                (None, None) => market.penalty.gamma,
            };
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidParameter(format!("risk aversion {gamma} must be finite and nonnegative")));
            }
            market = market.with_penalty(PenaltySpec { kind, gamma });
        }
        if let Some(r) = self.discount {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("discount rate {r} must be positive")));
            }
            market = market.with_discount(r);
        }
        Ok(market)
    }

    /// The market restricted to [`ExperimentSpec::bonds`].
    pub fn market(&self) -> Result<MarketSpec> {
        let full = self.full_market()?;
        if self.bonds.is_empty() {
            Ok(full)
        } else {
            full.subset(&self.bonds)
        }
    }

    /// Checks that the bonds exist and that the output directory is writable.
    pub fn validate(&self) -> Result<()> {
        self.market()?;
        std::fs::create_dir_all(&self.out)?;
        let probe = self.out.join(".write-probe");
        std::fs::write(&probe, b"")?;
        std::fs::remove_file(&probe)?;
        Ok(())
    }

    /// The named preset, or the default one for the market's size and penalty.
    pub fn train_config(&self, market: &MarketSpec) -> Result<TrainConfig> {
        let name = match &self.preset {
            Some(p) => p.clone(),
            None => default_preset(market.dim(), market.penalty.kind)?.to_string(),
        };
        let config = TrainConfig::preset(&name)?.with_seed(self.seed);
        Ok(match self.steps {
            Some(n) => config.with_steps(n),
            None => config,
        })
    }
}

/// Preset matching a market of `dim` bonds.
pub fn default_preset(dim: usize, kind: PenaltyKind) -> Result<&'static str> {
    let variance = kind == PenaltyKind::Variance;
    Ok(match (dim, variance) {
        (1, false) => "single",
        (1, true) => "single-variance",
        (2, false) => "two-bond",
        (2, true) => "two-bond-variance",
        (8, false) => "eight-bond",
        (8, true) => "eight-bond-variance",
        (20, false) => "twenty-bond",
        (20, true) => "twenty-bond-variance",
        _ => return Err(Error::InvalidParameter(format!("no default preset for {dim} bonds; name one"))),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn vi_tolerance(market: &MarketSpec, limits: &RiskLimits) -> Result<f64> {
    Ok(VI_REL_TOL * crate::fd::value_scale(market, limits)?)
}

/// Exact solution on `limits`: `θ`, its greedy policy and the exact average
/// reward per RFQ.
#[derive(Clone, Debug)]
pub struct ExactSide {
    pub theta: ValueTable,
    pub policy: PolicyTable,
    pub average_reward: f64,
    /// Aligned sup distance between value iteration and the FD scheme, when both ran.
    pub cross_check: Option<f64>,
}

pub fn solve_exact_side(market: &MarketSpec, limits: &RiskLimits, method: ExactMethod) -> Result<ExactSide> {
    let vi = || -> Result<ValueTable> { Ok(value_iteration(market, limits, vi_tolerance(market, limits)?)?.table) };
    let fd = || -> Result<ValueTable> {
        let report = solve_stationary(market, limits, &FdConfig::for_market(market, limits)?)?;
        if report.stop != StopReason::Stationary {
            log::warn!("finite-difference march stopped before stationarity");
        }
        to_rfq_value(market, &report.table)
    };
    let (theta, cross_check) = match method {
        ExactMethod::ValueIteration => (vi()?, None),
        ExactMethod::FiniteDifference => (fd()?, None),
        ExactMethod::Both => {
            let a = vi()?;
            let b = fd()?;
            let d = a.aligned_distance(&b);
            (a, Some(d))
        }
    };
    let policy = greedy_policy(market, &theta)?;
    let average_reward = average_reward_per_rfq(market, &policy)?;
    Ok(ExactSide { theta, policy, average_reward, cross_check })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub method: ExactMethod,
    pub bonds: Vec<String>,
    pub limits: Vec<i32>,
    pub average_reward: f64,
    /// `max |θ|` over the grid.
    pub value_range: f64,
    pub cross_check: Option<f64>,
}

/// Solves the market exactly on its maximum limits; writes `market.json`,
/// `value.csv` (`θ`), `policy.csv` and `summary.json`.
pub fn run_solve(spec: &ExperimentSpec, method: ExactMethod) -> Result<SolveSummary> {
    spec.validate()?;
    let market = spec.market()?;
    let limits = market.max_limits();
    let exact = solve_exact_side(&market, &limits, method)?;
    MarketConfig::from(&market).save(&spec.out.join("market.json"))?;
    exact.theta.write_csv(&spec.out.join("value.csv"))?;
    exact.policy.write_csv(&spec.out.join("policy.csv"))?;
    let summary = SolveSummary {
        method,
        bonds: market.bonds.iter().map(|b| b.id.clone()).collect(),
        limits: limits.0,
        average_reward: exact.average_reward,
        value_range: exact.theta.max_abs(),
        cross_check: exact.cross_check,
    };
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Rollout average reward per RFQ with its batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub events: usize,
}

/// Average reward per RFQ of `policy` over one long rollout from a flat inventory.
pub fn rollout_estimate<P: QuotePolicy + ?Sized>(
    market: &MarketSpec,
    limits: &RiskLimits,
    policy: &P,
    events: usize,
    seed: u64,
) -> Result<RolloutEstimate> {
    let start = vec![0; market.dim()];
    let recs = rollout(market, limits, policy, &start, events, &RolloutOptions::default(), derive_seed(seed, "evaluate", 0))?;
    let (mean, std_error) = r_mean_with_error(&recs, market, SE_BATCHES)?;
    Ok(RolloutEstimate { mean, std_error, events })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    /// `"myopic"` or the checkpoint directory.
    pub policy: String,
    pub limits: Vec<i32>,
    /// Exact average reward per RFQ (stationary law), when the grid allows it.
    pub exact: Option<f64>,
    pub rollout: RolloutEstimate,
}

/// Evaluates a trained policy (checkpoint directory) or, without one, the
/// myopic policy on the market's maximum limits.
pub fn run_evaluate(spec: &ExperimentSpec, checkpoint: Option<&Path>) -> Result<EvaluationSummary> {
    spec.validate()?;
    let (market, limits, table, name) = match checkpoint {
        Some(dir) => {
            let t = Trainer::resume(dir)?;
            let table = (t.market.dim() <= EXACT_MAX_DIM).then(|| t.actor.to_policy_table(&t.market, &t.limits)).transpose()?;
            let est = rollout_estimate(&t.market, &t.limits, &t.actor, EVALUATION_EVENTS, spec.seed)?;
            let exact = table.as_ref().map(|p| average_reward_per_rfq(&t.market, p)).transpose()?;
            let summary =
                EvaluationSummary { policy: dir.display().to_string(), limits: t.limits.0.clone(), exact, rollout: est };
            write_json(&spec.out.join("summary.json"), &summary)?;
            return Ok(summary);
        }
        None => {
            let market = spec.market()?;
            let limits = market.max_limits();
            let table = PolicyTable::myopic(&market, &limits)?;
            (market, limits, table, "myopic".to_string())
        }
    };
    let exact = (market.dim() <= EXACT_MAX_DIM).then(|| average_reward_per_rfq(&market, &table)).transpose()?;
    let rollout = rollout_estimate(&market, &limits, &table, EVALUATION_EVENTS, spec.seed)?;
    let summary = EvaluationSummary { policy: name, limits: limits.0, exact, rollout };
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub preset: Option<String>,
    pub seed: u64,
    pub steps: usize,
    pub limits: Vec<i32>,
    pub first_median: f64,
    pub last_median: f64,
}

/// Pre-trains and trains, checkpointing into `spec.out`.
pub fn run_train(spec: &ExperimentSpec) -> Result<(Trainer, TrainSummary)> {
    spec.validate()?;
    let market = spec.market()?;
    let config = spec.train_config(&market)?;
    let mut t = Trainer::new(&market, config)?;
    t.run(Some(&spec.out))?;
    let med = moving_median(&t.r_means(), MEDIAN_WINDOW);
    let summary = TrainSummary {
        preset: spec.preset.clone(),
        seed: spec.seed,
        steps: t.step,
        limits: t.limits.0.clone(),
        first_median: med.first().copied().unwrap_or(f64::NAN),
        last_median: med.last().copied().unwrap_or(f64::NAN),
    };
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok((t, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub bonds: Vec<String>,
    pub limits: Vec<i32>,
    pub max_prob_gap: f64,
    pub mean_prob_gap: f64,
    pub exact_average_reward: f64,
    /// Exact evaluation of the learned policy.
    pub learned_average_reward: f64,
    pub learned_rollout: RolloutEstimate,
    pub cross_check: Option<f64>,
}

/// Exact solution against a trained policy on the trained limits.
///
/// Without a checkpoint the preset is trained first into `out/train`. Writes
/// `compare.csv` with one row per grid point, bond and quotable side.
pub fn run_compare(spec: &ExperimentSpec, checkpoint: Option<&Path>, method: ExactMethod) -> Result<CompareSummary> {
    spec.validate()?;
    let d = match checkpoint {
        Some(dir) => MarketConfig::load(&dir.join("market.json"))?.bonds.len(),
        None => spec.market()?.dim(),
    };
    if d > EXACT_MAX_DIM {
        return Err(Error::InvalidParameter(format!("exact comparison needs at most {EXACT_MAX_DIM} bonds, got {d}")));
    }
    let trainer = match checkpoint {
        Some(dir) => Trainer::resume(dir)?,
        None => {
            let sub = ExperimentSpec { out: spec.out.join("train"), ..spec.clone() };
            run_train(&sub)?.0
        }
    };
    let market = &trainer.market;
    let limits = &trainer.limits;
    let exact = solve_exact_side(market, limits, method)?;
    let learned = trainer.actor.to_policy_table(market, limits)?;
    let grid = &exact.theta.grid;
    let critic: Vec<f64> = grid.states().map(|s| trainer.critic.value(&s)).collect::<Result<_>>()?;
    let shift = exact.theta.values.iter().zip(&critic).map(|(e, c)| e - c).sum::<f64>() / grid.len() as f64;

    let mut w = csv::Writer::from_path(spec.out.join("compare.csv"))?;
    w.write_record([
        "state",
        "bond",
        "side",
        "exact_quote",
        "learned_quote",
        "exact_prob",
        "learned_prob",
        "exact_value",
        "learned_value",
    ])?;
    let (mut max_gap, mut sum_gap, mut count) = (0.0f64, 0.0, 0usize);
    for idx in 0..grid.len() {
        let state = grid.state(idx).iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";");
        for (i, b) in market.bonds.iter().enumerate() {
            for side in Side::BOTH {
                let (Some(de), Some(pe), Some(dl), Some(pl)) = (
                    exact.policy.delta(i, side, idx),
                    exact.policy.prob(i, side, idx),
                    learned.delta(i, side, idx),
                    learned.prob(i, side, idx),
                ) else {
                    continue;
                };
                let gap = (pe - pl).abs();
                max_gap = max_gap.max(gap);
                sum_gap += gap;
                count += 1;
                w.write_record([
                    state.clone(),
                    b.id.clone(),
                    side.to_string(),
                    de.to_string(),
                    dl.to_string(),
                    pe.to_string(),
                    pl.to_string(),
                    exact.theta.values[idx].to_string(),
                    (critic[idx] + shift).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    let summary = CompareSummary {
        bonds: market.bonds.iter().map(|b| b.id.clone()).collect(),
        limits: limits.0.clone(),
        max_prob_gap: max_gap,
        mean_prob_gap: if count > 0 { sum_gap / count as f64 } else { 0.0 },
        exact_average_reward: exact.average_reward,
        learned_average_reward: average_reward_per_rfq(market, &learned)?,
        learned_rollout: rollout_estimate(market, limits, &trainer.actor, EVALUATION_EVENTS, spec.seed)?,
        cross_check: exact.cross_check,
    };
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One bond's exact average reward per RFQ, or the reason it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub bond: String,
    pub average_reward: Option<f64>,
    pub error: Option<String>,
}

/// Single-bond exact average reward per RFQ for every bond of the market, in
/// market order. Failures are recorded per row. Writes `table.csv`.
pub fn run_table4(spec: &ExperimentSpec, method: ExactMethod) -> Result<Vec<TableRow>> {
    spec.validate()?;
    let market = spec.market()?;
    let rows: Vec<TableRow> = (0..market.dim())
        .map(|i| {
            let single = market.subset_indices(&[i]);
            let id = single.bonds[0].id.clone();
            match solve_exact_side(&single, &single.max_limits(), method) {
                Ok(ex) => TableRow { bond: id, average_reward: Some(ex.average_reward), error: None },
                Err(e) => {
                    log::error!("{id}: {e}");
                    TableRow { bond: id, average_reward: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(spec.out.join("table.csv"))?;
    w.write_record(["bond", "average_reward", "error"])?;
    for r in &rows {
        w.write_record([
            r.bond.clone(),
            r.average_reward.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    LearningCurve,
    Quotes,
    Values,
    ValueDiff,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "learning-curve" => Self::LearningCurve,
            "quotes" => Self::Quotes,
            "values" => Self::Values,
            "value-diff" => Self::ValueDiff,
            _ => return Err(Error::Unknown { kind: "plot kind", name: s.to_string() }),
        })
    }
}

/// Quotes and values stored in a training checkpoint or a solve directory.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub market: MarketSpec,
    pub policy: PolicyTable,
    /// `θ` on the policy's grid.
    pub values: ValueTable,
}

/// Loads a checkpoint (`actor.json` present) or a solve directory (`value.csv`).
pub fn load_artifact(dir: &Path) -> Result<Artifact> {
    if dir.join("actor.json").exists() {
        let t = Trainer::resume(dir)?;
        let policy = t.actor.to_policy_table(&t.market, &t.limits)?;
        let values = policy.grid.states().map(|s| t.critic.value(&s)).collect::<Result<Vec<_>>>()?;
        let values = ValueTable { grid: policy.grid.clone(), values, flavor: Flavor::AtRfq };
        return Ok(Artifact { market: t.market, policy, values });
    }
    let market = MarketConfig::load(&dir.join("market.json"))?.build()?;
    let values = read_value_csv(&dir.join("value.csv"))?;
    let policy = greedy_policy(&market, &values)?;
    Ok(Artifact { market, policy, values })
}

/// Reads a `θ` table written by [`ValueTable::write_csv`].
pub fn read_value_csv(path: &Path) -> Result<ValueTable> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len().saturating_sub(1);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Config(format!("bad value row {rec:?}")))
        };
        let units = (0..d).map(|k| parse(k).map(|v| v as i32)).collect::<Result<Vec<_>>>()?;
        rows.push((units, parse(d)?));
    }
    let limits = RiskLimits((0..d).map(|k| rows.iter().map(|(u, _)| u[k].abs()).max().unwrap_or(0)).collect());
    let grid = InventoryGrid::new(&limits);
    if rows.len() != grid.len() {
        return Err(Error::Config(format!("{} rows for a grid of {} points", rows.len(), grid.len())));
    }
    let mut values = vec![f64::NAN; grid.len()];
    for (u, v) in rows {
        values[grid.index(&u)?] = v;
    }
    Ok(ValueTable { grid, values, flavor: Flavor::AtRfq })
}

/// Writes plot data for `artifact` into `out` and returns the file written.
///
/// * `learning-curve`: `step,r_mean,median` with a 40-point moving median.
/// * `quotes`: one row per grid point with quotes and probabilities per bond and side.
/// * `values`: `n1..nd,value`.
/// * `value-diff`: `n1..nd,value_a,value_b,diff,aligned_diff` against `other`.
pub fn emit_plotdata(artifact: &Path, kind: PlotKind, other: Option<&Path>, out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    match kind {
        PlotKind::LearningCurve => {
            let curve = read_learning_curve(&artifact.join("learning_curve.csv"))?;
            let r: Vec<f64> = curve.iter().map(|p| p.r_mean).collect();
            let med = moving_median(&r, MEDIAN_WINDOW);
            let path = out.join("learning_curve.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["step", "r_mean", "median"])?;
            for ((p, r), m) in curve.iter().zip(&r).zip(&med) {
                w.write_record([p.step.to_string(), r.to_string(), m.to_string()])?;
            }
            w.flush()?;
            Ok(path)
        }
        PlotKind::Quotes => {
            let path = out.join("quotes.csv");
            load_artifact(artifact)?.policy.write_csv(&path)?;
            Ok(path)
        }
        PlotKind::Values => {
            let path = out.join("values.csv");
            load_artifact(artifact)?.values.write_csv(&path)?;
            Ok(path)
        }
        PlotKind::ValueDiff => {
            let other = other.ok_or_else(|| Error::InvalidParameter("value-diff needs a second artifact".into()))?;
            let a = load_artifact(artifact)?.values;
            let b = load_artifact(other)?.values;
            if a.grid != b.grid {
                return Err(Error::InvalidParameter("value-diff needs artifacts on the same grid".into()));
            }
            let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
            let mean = diff.iter().sum::<f64>() / diff.len() as f64;
            let path = out.join("value_diff.csv");
            let mut w = csv::Writer::from_path(&path)?;
            let mut header: Vec<String> = (1..=a.grid.dim()).map(|i| format!("n{i}")).collect();
            header.extend(["value_a", "value_b", "diff", "aligned_diff"].map(String::from));
            w.write_record(&header)?;
            for (idx, dv) in diff.iter().enumerate() {
                let mut row: Vec<String> = a.grid.state(idx).iter().map(|n| n.to_string()).collect();
                row.extend([a.values[idx].to_string(), b.values[idx].to_string(), dv.to_string(), (dv - mean).to_string()]);
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(path)
        }
    }
}
