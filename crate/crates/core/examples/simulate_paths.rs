//! Compound-Poisson approximation of a Meixner process: terminal mean and variance against the exact values.

use levy_teugels::bsde::mean_se;
use levy_teugels::levy_model::{LevyModel, MeixnerParams};
use levy_teugels::simulator::JumpSampler;
use levy_teugels::Result;

fn main() -> Result<()> {
    let params = MeixnerParams::new(0.5, 0.2, 1.0, 0.0)?;
    let model = LevyModel::meixner(params)?;
    for eps in [1e-1, 1e-2, 1e-3] {
        let sampler = JumpSampler::new(&model, eps)?;
        let x: Vec<f64> = sampler.terminals(1.0, 42, 50_000).into_iter().map(|v| v[0]).collect();
        let (mean, se) = mean_se(&x);
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        println!(
            "eps {eps:>6}: rate {:>9.3}  mean {mean:+.4} ± {se:.4} (exact {:+.4})  variance {var:.4} (exact {:.4})",
            sampler.rate(),
            params.mean(),
            params.variance()
        );
    }
    Ok(())
}
