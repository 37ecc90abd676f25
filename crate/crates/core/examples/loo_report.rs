//! Leave-one-out evaluation of one regression and one completion method.

use twincal::calibrate::{loo_evaluate, LooOptions, Method};
use twincal::completion::CompletionConfig;
use twincal::matcore::Orientation;
use twincal::regress::RegressConfig;
use twincal::synth::{generate_latent_world, Alignment, LatentParams};

fn main() -> twincal::Result<()> {
    let sample = generate_latent_world(&LatentParams {
        noise_sigma: 0.2,
        distortion: 0.1,
        row_bias: 0.5,
        missing_frac: 0.1,
        seed: 2,
        ..LatentParams::new(150, 30, 3, Alignment::LinearDistortion)
    })?;
    let human = sample.human_with_target();
    let opts = LooOptions::default();
    for method in [
        Method::Regress(RegressConfig::elastic_net(0.1, 0.1)),
        Method::Completion(CompletionConfig::hard(3)),
    ] {
        let out = loo_evaluate(&human, &sample.twin, &method, Orientation::NewQuestion, &opts)?;
        let r = &out.report;
        println!(
            "{:<4} mean r {:.3} (se {:.3})  twin {:.3}  evaluated {}",
            r.method, r.mean, r.se, r.baseline_mean, r.evaluated
        );
    }
    Ok(())
}
