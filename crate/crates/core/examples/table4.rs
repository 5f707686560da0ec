//! Single-bond exact average rewards per RFQ for every bundled bond, under the
//! standard-deviation and the variance penalties.

use bondmm::harness::{run_table4, ExactMethod, ExperimentSpec, Mode};
use bondmm::model::PenaltyKind;

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("bondmm-table4");
    let std = run_table4(&ExperimentSpec::new(Mode::SolveVi, out.join("stddev")), ExactMethod::ValueIteration)?;
    let var = run_table4(
        &ExperimentSpec::new(Mode::SolveVi, out.join("variance")).with_penalty(PenaltyKind::Variance),
        ExactMethod::ValueIteration,
    )?;
    println!("{:<8} {:>12} {:>12}", "bond", "std-dev", "variance");
    for (a, b) in std.iter().zip(&var) {
        let show = |r: &bondmm::harness::TableRow| r.average_reward.map_or("error".to_string(), |v| format!("{v:.2}"));
        println!("{:<8} {:>12} {:>12}", a.bond, show(a), show(b));
    }
    println!("CSV files under {}", out.display());
    Ok(())
}
