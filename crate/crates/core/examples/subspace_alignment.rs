//! Compares human and twin question spaces against Gaussian and shuffled
//! baselines.

use twincal::diagnostics::{alignment_report, variance_explained, AlignmentOptions, Axis};
use twincal::synth::{generate_latent_world, Alignment, LatentParams};

fn main() -> twincal::Result<()> {
    for alignment in [Alignment::RotatedSuperset, Alignment::Independent] {
        let sample = generate_latent_world(&LatentParams {
            noise_sigma: 0.1,
            seed: 6,
            ..LatentParams::new(200, 50, 3, alignment)
        })?;
        let human = sample.human_with_target();
        let rep = alignment_report(&human, &sample.twin, Axis::RowSpace, &AlignmentOptions::default())?;
        println!("{alignment:?}: r = {}, r_max = {}", rep.r, rep.r_max);
        println!("  twin     cosines {:.3?}", rep.twin.cosines);
        println!("  gaussian cosines {:.3?}", rep.gaussian.cosines);
        let ve = variance_explained(&sample.twin)?;
        println!("  twin variance explained {:.3?}", &ve[..rep.r_max]);
    }
    Ok(())
}
