//! Generates latent and discrete worlds and prints their ground-truth
//! summaries.

use twincal::synth::{generate_discrete_world, generate_latent_world, Alignment, DiscreteParams, LatentParams};

fn main() -> twincal::Result<()> {
    for alignment in [
        Alignment::Identical,
        Alignment::RotatedSuperset,
        Alignment::LinearDistortion,
        Alignment::Independent,
    ] {
        let s = generate_latent_world(&LatentParams {
            distortion: 0.2,
            seed: 7,
            ..LatentParams::new(100, 40, 4, alignment)
        })?;
        println!(
            "{alignment:?}: row residual {:.2e}, column residual {:.2e}",
            s.world.row_inclusion_residual(),
            s.world.column_inclusion_residual()
        );
    }

    let d = generate_discrete_world(&DiscreteParams { seed: 7, ..Default::default() })?;
    let w = &d.world;
    println!("discrete: reweight bound {:.2}, gap {:.2e}", w.reweight_bound, w.reweighting_gap()?);
    for t in 0..w.params.m_test {
        println!("  test {t}: mixing factor {:.2}, bound {:.3}", w.mixing_factor(t), w.error_bound(t, 0.05)?);
    }
    Ok(())
}
