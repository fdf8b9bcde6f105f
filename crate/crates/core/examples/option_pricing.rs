//! European call under a risk-neutral Meixner model: PIDE, Monte Carlo and put-call parity.

use levy_teugels::levy_model::{LevyModel, MeixnerParams};
use levy_teugels::pricing::{price_report, MarketSpec, Payoff, PideSpec};
use levy_teugels::simulator::DEFAULT_EPS;
use levy_teugels::Result;

fn main() -> Result<()> {
    let model = LevyModel::meixner(MeixnerParams::new(0.3, -0.2, 1.5, 0.0)?)?;
    for strike in [90.0, 100.0, 110.0] {
        let market = MarketSpec {
            s0: vec![100.0],
            r: 0.03,
            maturity: 0.5,
            strike,
        };
        let rep = price_report(
            &model,
            &market,
            &Payoff::Call,
            200_000,
            7,
            DEFAULT_EPS,
            PideSpec::default(),
        )?;
        let pide = rep.pide.as_ref().map_or(f64::NAN, |p| p.price);
        let parity = rep.pide_parity.as_ref().map_or(f64::NAN, |p| p.relative_error);
        println!(
            "K {strike:>5}: PIDE {pide:.4}  MC {:.4} ± {:.4}  parity residual {parity:.1e}",
            rep.mc.price, rep.mc.standard_error
        );
    }
    Ok(())
}
