//! Linear PDIE value against a Monte Carlo mean of the terminal function.

use levy_teugels::bsde::mean_se;
use levy_teugels::levy_model::{LevyModel, MeixnerParams};
use levy_teugels::pdie::{solve_linear_pdie, PdieOptions, SpaceGrid};
use levy_teugels::simulator::{JumpSampler, DEFAULT_EPS};
use levy_teugels::Result;

fn main() -> Result<()> {
    let model = LevyModel::meixner(MeixnerParams::new(0.5, 0.0, 1.0, 0.0)?)?;
    let g = |x: &[f64]| vec![(-x[0] * x[0]).exp() + 0.5 * x[0]];
    let grid = SpaceGrid::with_spacing(&[-4.0], &[4.0], 0.02, &[0.0])?;
    let sol = solve_linear_pdie(&model, &g, &grid, 1.0, PdieOptions::default())?;
    let sampler = JumpSampler::new(&model, DEFAULT_EPS)?;
    for x0 in [-1.0, 0.0, 1.0] {
        let vals: Vec<f64> = sampler
            .terminals(1.0, 3, 50_000)
            .iter()
            .map(|x| g(&[x0 + x[0]])[0])
            .collect();
        let (mc, se) = mean_se(&vals);
        println!(
            "x0 {x0:+.1}: PDIE {:.5}  MC {mc:.5} ± {se:.1e}",
            sol.value(0, 0.0, &[x0])
        );
    }
    Ok(())
}
