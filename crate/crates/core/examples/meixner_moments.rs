//! Lévy-measure moments of a Meixner process against cumulant derivatives; `m_1` diverges near zero.

use levy_teugels::levy_model::{meixner_cumulant, LevyModel, MeixnerParams};
use levy_teugels::{MultiIndex, Result};

fn main() -> Result<()> {
    let params = MeixnerParams::new(1.0, 0.3, 1.0, 0.0)?;
    let model = LevyModel::meixner(params)?;
    let h = 1e-2;
    let k = |t: f64| meixner_cumulant(t, &params).unwrap();
    // central differences for K'', K''', K''''
    let fd = [
        (k(h) - 2.0 * k(0.0) + k(-h)) / (h * h),
        (k(2.0 * h) - 2.0 * k(h) + 2.0 * k(-h) - k(-2.0 * h)) / (2.0 * h.powi(3)),
        (k(2.0 * h) - 4.0 * k(h) + 6.0 * k(0.0) - 4.0 * k(-h) + k(-2.0 * h)) / h.powi(4),
    ];
    println!("{:>3} {:>16} {:>16}", "k", "m_k", "K^(k)(0)");
    for (order, d) in (2u32..).zip(fd) {
        let m = model.moment(&MultiIndex::new(vec![order]), Default::default())?;
        println!("{order:>3} {m:>16.10} {d:>16.10}");
    }
    match model.moment(&MultiIndex::new(vec![1]), Default::default()) {
        Ok(m) => println!("  1 {m:>16.10}"),
        Err(e) => println!("  1 {e}"),
    }
    Ok(())
}
