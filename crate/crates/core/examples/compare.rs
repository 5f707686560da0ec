//! Trains one bond and compares the learned quotes with the exact ones.
//!
//! `cargo run --release --example compare -- BOND.2`

use bondmm::harness::{run_compare, ExactMethod, ExperimentSpec, Mode};

fn main() -> anyhow::Result<()> {
    let id = std::env::args().nth(1).unwrap_or_else(|| "BOND.10".into());
    let out = std::env::temp_dir().join("bondmm-compare").join(&id);
    let spec = ExperimentSpec::new(Mode::Compare, &out).with_bonds(&[&id]).with_preset("single").with_seed(1);
    let s = run_compare(&spec, None, ExactMethod::Both)?;
    println!("{id} on limits {:?}", s.limits);
    println!("probability gap: max {:.4}, mean {:.4}", s.max_prob_gap, s.mean_prob_gap);
    println!("average reward per RFQ: exact {:.3}, learned {:.3}", s.exact_average_reward, s.learned_average_reward);
    println!(
        "learned, by rollout: {:.3} ± {:.3} over {} RFQs",
        s.learned_rollout.mean, s.learned_rollout.std_error, s.learned_rollout.events
    );
    if let Some(d) = s.cross_check {
        println!("VI vs FD aligned sup distance: {d:.3e}");
    }
    println!("per-state rows in {}", out.join("compare.csv").display());
    Ok(())
}
