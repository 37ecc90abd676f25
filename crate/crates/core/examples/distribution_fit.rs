//! Reweights a twin panel to match human answer distributions on training
//! questions, then scores held-out questions.

use twincal::distcal::{cross_table, Discrepancy, MirrorDescentConfig, Variant};
use twincal::synth::{generate_discrete_world, DiscreteParams};

fn main() -> twincal::Result<()> {
    let sample = generate_discrete_world(&DiscreteParams { seed: 5, ..Default::default() })?;
    let panel = sample.sampled_panel()?;
    let w = &sample.world;
    let table = cross_table(&sample.human, &panel, &w.train_indices(), &w.test_indices(), &MirrorDescentConfig::default())?;
    println!("baseline      tv {:.4}", table.baseline.metric(Discrepancy::TV));
    for spec in [Discrepancy::TV, Discrepancy::KL, Discrepancy::CdfL1] {
        let row = table.row(spec, Variant::PersonasAndDummies).unwrap();
        println!("fit {:<10} tv {:.4}", spec.name(), row.metric(Discrepancy::TV));
    }
    print!("{}", table.to_csv());
    Ok(())
}
