//! Fits each regression family on the twin and transfers it to a held-out
//! human question.

use twincal::calibrate::{fit_and_transfer, CalibrationTask, Method};
use twincal::matcore::{pearson, Orientation};
use twincal::regress::RegressConfig;
use twincal::synth::{generate_latent_world, Alignment, LatentParams};

fn main() -> twincal::Result<()> {
    let sample = generate_latent_world(&LatentParams {
        noise_sigma: 0.1,
        distortion: 0.1,
        seed: 1,
        ..LatentParams::new(200, 40, 4, Alignment::LinearDistortion)
    })?;
    let target = sample.target.as_slice();
    let twin_col: Vec<f64> = sample.twin.values().column(sample.target_index()).iter().copied().collect();
    println!("raw twin          r = {:.3}", pearson(&twin_col, target)?);

    for cfg in [
        RegressConfig::ridge(1.0),
        RegressConfig::lasso(0.01),
        RegressConfig::elastic_net(0.1, 0.1),
        RegressConfig::simplex(0.0),
        RegressConfig::si(4, 1.0),
        RegressConfig::nn(vec![16], 1e-3),
    ] {
        let task = CalibrationTask::new(
            sample.human.clone(),
            sample.twin.clone(),
            sample.target_index(),
            Orientation::NewQuestion,
            Method::Regress(cfg),
        )?;
        let (pred, diag) = fit_and_transfer(&task)?;
        println!(
            "{:<6} train mse {:.3}  r = {:.3}",
            task.method.name(),
            diag.train_mse,
            pearson(pred.as_slice(), target)?
        );
    }
    Ok(())
}
