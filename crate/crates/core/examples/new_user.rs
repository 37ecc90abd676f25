//! Predicts a held-out user's responses from the transposed problem.

use twincal::calibrate::{calibrate_new_user, CalibrationTask, Method};
use twincal::matcore::{pearson, Orientation};
use twincal::regress::RegressConfig;
use twincal::synth::{generate_latent_world, Alignment, LatentParams};

fn main() -> twincal::Result<()> {
    let sample = generate_latent_world(&LatentParams {
        orientation: Orientation::NewUser,
        noise_sigma: 0.05,
        seed: 4,
        ..LatentParams::new(60, 150, 4, Alignment::RotatedSuperset)
    })?;
    let task = CalibrationTask::new(
        sample.human.clone(),
        sample.twin.clone(),
        sample.target_index(),
        Orientation::NewUser,
        Method::Regress(RegressConfig::ridge(1e-2)),
    )?;
    let pred = calibrate_new_user(&task)?;
    let twin_row: Vec<f64> = sample.twin.values().row(sample.target_index()).iter().copied().collect();
    println!("raw twin   r = {:.3}", pearson(&twin_row, sample.target.as_slice())?);
    println!("calibrated r = {:.3}", pearson(pred.as_slice(), sample.target.as_slice())?);
    Ok(())
}
