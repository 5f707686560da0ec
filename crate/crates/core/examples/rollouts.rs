//! Simulated RFQ streams under the myopic policy: exploration noise, the
//! R_mean estimate and its batch-means standard error against the exact value.

use bondmm::data::bundled_market;
use bondmm::simulator::{collect_rollouts, r_mean_with_error, RolloutOptions};
use bondmm::tabular::{average_reward_per_rfq, PolicyTable};

fn main() -> anyhow::Result<()> {
    let market = bundled_market()?.subset(&["BOND.1", "BOND.6"])?;
    let limits = market.max_limits();
    let policy = PolicyTable::myopic(&market, &limits)?;
    let set = collect_rollouts(&market, &limits, &policy, 200_000, 100, 100, &RolloutOptions::default(), 42)?;
    let (mean, se) = r_mean_with_error(&set.long, &market, 50)?;
    let exact = average_reward_per_rfq(&market, &policy)?;
    println!("R_mean {mean:.3} ± {se:.3} (exact {exact:.3})");
    let quoted = set.all().filter(|r| r.quoted).count();
    let filled = set.all().filter(|r| r.filled).count();
    println!("{} records, {quoted} quoted, {filled} filled", set.len());
    for r in set.long.iter().filter(|r| r.quoted).take(5) {
        println!(
            "state {:?} bond {} {}: p {:.4} -> p_ε {:.4}, δ {:.5} -> δ_ε {:.5}, filled {}",
            r.state, r.bond, r.side, r.prob, r.prob_eps, r.delta, r.delta_eps, r.filled
        );
    }
    Ok(())
}
