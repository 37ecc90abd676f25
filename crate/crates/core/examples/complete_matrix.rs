//! Fills a masked low-rank matrix with the three completion solvers and
//! picks the effective rank from held-out cells.

use twincal::completion::{estimate_effective_rank, impute, CompletionConfig};
use twincal::linalg;
use twincal::matcore::MaskedMatrix;

fn main() -> twincal::Result<()> {
    let mut rng = linalg::seeded(3);
    let truth = linalg::gaussian_matrix(&mut rng, 120, 3, 1.0) * linalg::gaussian_matrix(&mut rng, 3, 60, 1.0);
    let mut m = MaskedMatrix::full(truth.clone())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if (i * 7 + j * 13) % 5 == 0 {
                m.hide(i, j);
            }
        }
    }

    let sel = estimate_effective_rank(&m, &(1..=8).collect::<Vec<_>>(), 0.1, 0)?;
    println!("selected rank {} (grid rmse {:.4?})", sel.rank, sel.rmse);

    for cfg in [
        CompletionConfig::hard(sel.rank),
        CompletionConfig::soft(sel.rank, 0.5),
        CompletionConfig::als(sel.rank, 0.1),
    ] {
        let out = impute(&m, &cfg)?;
        let mut se = 0.0;
        let mut hidden = 0;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !m.is_observed(i, j) {
                    se += (out.filled[(i, j)] - truth[(i, j)]).powi(2);
                    hidden += 1;
                }
            }
        }
        println!(
            "{:<4} rmse on hidden cells {:.2e} after {} iterations",
            cfg.method.name(),
            (se / hidden as f64).sqrt(),
            out.iterations
        );
    }
    Ok(())
}
