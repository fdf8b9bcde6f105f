//! Clayton Lévy copula: joint tail integrals and the density of a two-dimensional Meixner measure.

use levy_teugels::levy_model::{
    clayton_copula, common_jump_intensity, joint_levy_density, ClaytonCopulaParams, LevyModel, MarginalMeasure,
    MeixnerParams,
};
use levy_teugels::Result;

fn main() -> Result<()> {
    let params = ClaytonCopulaParams::new(1.0, 0.75)?;
    println!("F(u, v) on the positive quadrant");
    for u in [0.5, 1.0, 2.0] {
        let row: Vec<String> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&v| format!("{:.4}", clayton_copula(&[u, v], &params).unwrap()))
            .collect();
        println!("  u {u:.1}: {}", row.join("  "));
    }
    println!(
        "common jump intensity of Poisson(1) x Poisson(2): {:.6}",
        common_jump_intensity(1.0, 2.0, &params)
    );
    let marginal = MarginalMeasure::Meixner(MeixnerParams::new(1.0, 0.0, 1.0, 0.0)?);
    let model = LevyModel::zero(2)?.with_copula(vec![marginal, marginal], Some(params))?;
    for x in [[0.5, 0.5], [0.5, -0.5], [1.0, 2.0]] {
        println!("density at {x:?}: {:.6e}", joint_levy_density(&x, &model)?);
    }
    Ok(())
}
