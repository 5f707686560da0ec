//! Actor-critic training on BOND.1 + BOND.6 from single-bond quotes, with the
//! learned policy evaluated exactly after training.
//!
//! `cargo run --release --example two_bond_training -- 200`

use bondmm::actor_critic::{moving_median, TrainConfig, Trainer};
use bondmm::data::bundled_market;
use bondmm::tabular::{average_reward_per_rfq, solve_exact};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let market = bundled_market()?.subset(&["BOND.1", "BOND.6"])?;
    let exact = solve_exact(&market, &market.max_limits(), 1e-6)?;

    let config = TrainConfig::two_bond_reduced().with_seed(7).with_steps(steps);
    let mut trainer = Trainer::new(&market, config)?;
    let start = average_reward_per_rfq(&market, &trainer.actor.to_policy_table(&market, &trainer.limits)?)?;
    for _ in 0..steps {
        let r = trainer.step_once()?;
        if r.step % 10 == 0 {
            println!("step {:>4}: R_mean {:>8.2}  TD mse {:.3e}", r.step, r.r_mean, r.td_mse);
        }
    }
    let end = average_reward_per_rfq(&market, &trainer.actor.to_policy_table(&market, &trainer.limits)?)?;
    let med = moving_median(&trainer.r_means(), 40);
    println!("moving median: {:.2} -> {:.2}", med[0], med[med.len() - 1]);
    println!("exact average reward: pre-trained {start:.3}, trained {end:.3}, optimum {:.3}", exact.average_reward);
    Ok(())
}
