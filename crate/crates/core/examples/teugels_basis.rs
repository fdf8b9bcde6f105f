//! Orthogonalised Teugels basis of a two-dimensional Meixner model with Clayton dependence.

use levy_teugels::levy_model::{ClaytonCopulaParams, LevyModel, MarginalMeasure, MeixnerParams};
use levy_teugels::orthobasis::{build_basis, DEFAULT_PRUNE_TOL};
use levy_teugels::Result;

fn main() -> Result<()> {
    let marginal = MarginalMeasure::Meixner(MeixnerParams::new(0.5, 0.0, 1.0, 0.0)?);
    let model = LevyModel::zero(2)?.with_copula(vec![marginal, marginal], Some(ClaytonCopulaParams::new(1.0, 0.5)?))?;
    let basis = build_basis(&model, 2, DEFAULT_PRUNE_TOL)?;
    basis.describe(&mut std::io::stdout())?;
    Ok(())
}
