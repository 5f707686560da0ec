//! Exact optimal quotes for one bond by value iteration, with the stationary
//! inventory law and the average reward per RFQ.
//!
//! `cargo run --release --example exact_solve -- BOND.7`

use bondmm::data::bundled_market;
use bondmm::model::Side;
use bondmm::tabular::{solve_exact, stationary_distribution, PolicyTable, average_reward_per_rfq};

fn main() -> anyhow::Result<()> {
    let id = std::env::args().nth(1).unwrap_or_else(|| "BOND.1".into());
    let market = bundled_market()?.subset(&[&id])?;
    let limits = market.max_limits();
    let exact = solve_exact(&market, &limits, 1e-6)?;
    let stat = stationary_distribution(&market, &exact.policy)?;

    println!("{id}: {} sweeps", exact.iterations);
    println!("{:>4} {:>12} {:>8} {:>12} {:>8} {:>10}", "n", "δ bid", "p bid", "δ ask", "p ask", "mass");
    let lim = limits.0[0];
    for n in -lim..=lim {
        let q = [n];
        let fmt = |v: Option<f64>, w: usize, p: usize| v.map_or(format!("{:>w$}", "-"), |x| format!("{x:>w$.p$}"));
        println!(
            "{n:>4} {} {} {} {} {:>10.5}",
            fmt(exact.policy.delta_at(0, Side::Bid, &q)?, 12, 6),
            fmt(exact.policy.prob_at(0, Side::Bid, &q)?, 8, 4),
            fmt(exact.policy.delta_at(0, Side::Ask, &q)?, 12, 6),
            fmt(exact.policy.prob_at(0, Side::Ask, &q)?, 8, 4),
            stat.at(&q)?,
        );
    }
    let myopic = average_reward_per_rfq(&market, &PolicyTable::myopic(&market, &limits)?)?;
    println!("average reward per RFQ: optimal {:.3}, myopic {:.3}", exact.average_reward, myopic);
    Ok(())
}
