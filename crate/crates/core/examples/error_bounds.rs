//! Checks the ridge transfer bound as the number of users grows.

use twincal::calibrate::ridge_bound_check;
use twincal::synth::{generate_latent_world, Alignment, LatentParams};

fn main() -> twincal::Result<()> {
    for n in [50, 100, 200, 400, 800] {
        let sample = generate_latent_world(&LatentParams {
            noise_sigma: 0.1,
            seed: 8,
            ..LatentParams::new(n, 30, 3, Alignment::LinearDistortion)
        })?;
        let c = ridge_bound_check(&sample, (n as f64).powi(-3))?;
        println!(
            "n {n:>4}: error/sqrt(n) {:.4}  bound/sqrt(n) {:.4}  holds {}",
            c.error / (n as f64).sqrt(),
            c.bound / (n as f64).sqrt(),
            c.error <= c.bound
        );
    }
    Ok(())
}
