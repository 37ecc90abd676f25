//! Gated transfer: calibrate only where the twin fit is good, and sweep the
//! threshold.

use twincal::calibrate::{default_tau_grid, loo_evaluate, tau_sweep, LooOptions, Method};
use twincal::matcore::Orientation;
use twincal::regress::RegressConfig;
use twincal::synth::{generate_gating_suite, GatingSuiteParams};

fn main() -> twincal::Result<()> {
    let suite = generate_gating_suite(&GatingSuiteParams::default())?;
    let method = Method::Regress(RegressConfig::ridge(1e-3));
    let out = loo_evaluate(&suite.human, &suite.twin, &method, Orientation::NewQuestion, &LooOptions::default())?;
    let sweep = tau_sweep(&out.report, &default_tau_grid())?;
    println!("always {:.3}  never {:.3}", sweep.always, sweep.never);
    for p in sweep.points.iter().step_by(4) {
        println!("tau {:>9.4}  mean {:.3}  calibrated {:>5.1}%", p.tau, p.mean, 100.0 * p.transferred);
    }
    println!("best tau {:?}", sweep.best_tau);
    Ok(())
}
