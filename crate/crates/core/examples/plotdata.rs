//! Quote and value surfaces for a 2-bond exact solution, and the difference
//! between the standard-deviation and variance penalty value functions.

use bondmm::harness::{emit_plotdata, run_solve, ExactMethod, ExperimentSpec, Mode, PlotKind};
use bondmm::model::PenaltyKind;

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("bondmm-plotdata");
    let bonds = ["BOND.1", "BOND.6"];
    let a = ExperimentSpec::new(Mode::SolveVi, root.join("stddev")).with_bonds(&bonds);
    let b = ExperimentSpec::new(Mode::SolveVi, root.join("variance")).with_bonds(&bonds).with_penalty(PenaltyKind::Variance);
    run_solve(&a, ExactMethod::ValueIteration)?;
    run_solve(&b, ExactMethod::ValueIteration)?;
    for kind in [PlotKind::Quotes, PlotKind::Values] {
        println!("{}", emit_plotdata(&a.out, kind, None, &root.join("plots"))?.display());
    }
    println!("{}", emit_plotdata(&a.out, PlotKind::ValueDiff, Some(&b.out), &root.join("plots"))?.display());
    Ok(())
}
