//! The finite-difference HJB scheme against value iteration on a 2-bond grid.

use std::time::Instant;

use bondmm::data::bundled_market;
use bondmm::fd::{solve_stationary, value_scale, FdConfig};
use bondmm::tabular::{to_any_time_value, value_iteration};

fn main() -> anyhow::Result<()> {
    let market = bundled_market()?.subset(&["BOND.1", "BOND.6"])?;
    let limits = market.max_limits();
    let scale = value_scale(&market, &limits)?;

    let t = Instant::now();
    let vi = value_iteration(&market, &limits, 1e-9 * scale)?;
    let vi = to_any_time_value(&market, &vi.table)?;
    println!("value iteration: {:?}", t.elapsed());

    let t = Instant::now();
    let mut cfg = FdConfig::for_market(&market, &limits)?;
    cfg.stationarity_tol *= 1e-3;
    let fd = solve_stationary(&market, &limits, &cfg)?;
    println!("finite differences: {} steps ({:?}), {:?}", fd.steps, fd.stop, t.elapsed());

    let range = vi.max_abs();
    let gap = vi.sup_distance(&fd.table);
    println!("sup |θ̃_VI − θ̃_FD| = {gap:.4e} ({:.2e} of the value range {range:.4e})", gap / range);
    Ok(())
}
