//! Fill-probability curves of the bundled bonds: myopic quotes, the fill
//! probability they give, and the concavity condition behind the Hamiltonian.

use bondmm::data::bundled_market;
use bondmm::intensity::{check_condition, standardized_grid};

fn main() -> anyhow::Result<()> {
    let market = bundled_market()?;
    println!("{:<8} {:>12} {:>10} {:>12} {:>10}", "bond", "myopic δ", "f(δ)", "max ff''/f'²", "ok");
    for b in &market.bonds {
        let c = &b.curve;
        let d = c.myopic_quote()?;
        let check = check_condition(c, standardized_grid(c, -6.0, 6.0, 2001))?;
        println!("{:<8} {:>12.6} {:>10.4} {:>12.4} {:>10}", b.id, d, c.prob(d), check.max_ratio, check.satisfied());
    }

    let c = &market.bonds[0].curve;
    println!("\n{} quote for a target fill probability:", market.bonds[0].id);
    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        println!("  p = {p:.1} -> δ = {:.6}", c.quote(p)?);
    }
    Ok(())
}
