//! Picard iteration of a regression BSDE on the atomic Poisson-copula model.

use std::sync::Arc;

use levy_teugels::bsde::{picard_iterate, solve_bsde, BsdeData, TerminalFn};
use levy_teugels::levy_model::{poisson_copula_measure, ClaytonCopulaParams};
use levy_teugels::orthobasis::{build_basis, DEFAULT_PRUNE_TOL};
use levy_teugels::pdie::DriverFunction;
use levy_teugels::simulator::{TimeGrid, DEFAULT_EPS};
use levy_teugels::Result;

fn main() -> Result<()> {
    let model = poisson_copula_measure(1.0, 1.0, ClaytonCopulaParams::new(1.0, 1.0)?)?;
    let basis = build_basis(&model, 2, DEFAULT_PRUNE_TOL)?;
    let c = 0.5;
    let driver = DriverFunction::new(c, true, move |_, y, z| vec![0.5 * c * (y[0].sin() + z[0][0].cos())]);
    let g: TerminalFn = Arc::new(|x: &[f64]| vec![(-(x[0] * x[0] + x[1] * x[1]) / 8.0).exp()]);
    let data = BsdeData::simulate(
        &model,
        &basis,
        TimeGrid::new(1.0, 20)?,
        vec![0.0, 0.0],
        g,
        driver,
        10_000,
        1,
        DEFAULT_EPS,
    )?;
    let beta = 4.0 * c * c + 1.0;
    let report = picard_iterate(&data, beta, 25, 1e-6)?;
    for s in &report.steps {
        let ratio = s.ratio.map_or(String::from("-"), |r| format!("{r:.3}"));
        println!(
            "iteration {:>2}: difference {:.3e}  ratio {ratio}",
            s.iteration, s.difference
        );
    }
    let direct = solve_bsde(&data)?;
    println!("Y0 Picard {:.6}, direct {:.6}", report.solution.y0()[0], direct.y0()[0]);
    Ok(())
}
