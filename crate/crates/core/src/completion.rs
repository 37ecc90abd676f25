//! Matrix completion: iterative hard/soft-thresholded SVD, alternating least
//! squares, the twin-warm-started variant, stacked human/twin completion, and
//! validation-based effective-rank selection.
//!
//! The SVD solvers expect column-standardized input: missing cells start at
//! their column's observed mean (0 after standardization) and every iteration
//! refits a low-rank model to the current fill. With `center` set, column means
//! are recomputed and removed before each SVD instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_symmetric};
use crate::matcore::{demean_columns, svd_topk, MaskedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompletionMethod {
    #[serde(rename = "hsv")]
    HardSvd,
    #[serde(rename = "ssv")]
    SoftSvd,
    #[serde(rename = "als")]
    Als,
    #[serde(rename = "sp")]
    SyntheticPrior,
}

impl CompletionMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::HardSvd => "hsv",
            Self::SoftSvd => "ssv",
            Self::Als => "als",
            Self::SyntheticPrior => "sp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hsv" => Some(Self::HardSvd),
            "ssv" => Some(Self::SoftSvd),
            "als" => Some(Self::Als),
            "sp" => Some(Self::SyntheticPrior),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub method: CompletionMethod,
    pub rank: usize,
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative Frobenius change of the reconstruction that counts as converged.
    pub tol: f64,
    /// Only ALS draws random numbers (factor initialization).
    pub seed: u64,
    /// Demean columns before every SVD step (HSV/SSV/SP only).
    #[serde(default)]
    pub center: bool,
}

impl CompletionConfig {
    pub const DEFAULT_MAX_ITERS: usize = 200;
    pub const DEFAULT_TOL: f64 = 1e-5;

    pub fn new(method: CompletionMethod, rank: usize, lambda: f64) -> Self {
        Self {
            method,
            rank,
            lambda,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
            seed: 0,
            center: false,
        }
    }

    pub fn hard(rank: usize) -> Self {
        Self::new(CompletionMethod::HardSvd, rank, 0.0)
    }

    pub fn soft(rank: usize, lambda: f64) -> Self {
        Self::new(CompletionMethod::SoftSvd, rank, lambda)
    }

    pub fn als(rank: usize, lambda: f64) -> Self {
        Self::new(CompletionMethod::Als, rank, lambda)
    }

    pub fn synthetic_prior(rank: usize) -> Self {
        Self::new(CompletionMethod::SyntheticPrior, rank, 0.0)
    }

    pub fn with_iters(mut self, max_iters: usize, tol: f64) -> Self {
        self.max_iters = max_iters;
        self.tol = tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        let max = n.min(m);
        if self.rank == 0 || self.rank > max {
            return Err(Error::RankOutOfRange {
                rank: self.rank,
                max,
            });
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param("lambda must be nonnegative"));
        }
        Ok(())
    }
}

/// Output of a completion solver.
#[derive(Debug, Clone)]
pub struct Imputation {
    /// Observed cells carry their original values; the rest are imputed.
    pub filled: DMatrix<f64>,
    /// The solver's low-rank model on every cell.
    pub reconstruction: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// ALS objective after each full sweep; empty for the SVD solvers.
    pub objective_trace: Vec<f64>,
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm().max(f64::MIN_POSITIVE);
    (new - old).norm() / denom
}

enum Threshold {
    Hard,
    Soft(f64),
}

fn low_rank_step(
    filled: &DMatrix<f64>,
    rank: usize,
    threshold: &Threshold,
    center: bool,
) -> Result<DMatrix<f64>> {
    let (centered, means) = if center {
        demean_columns(filled)
    } else {
        (filled.clone(), DVector::zeros(filled.ncols()))
    };
    let svd = svd_topk(&centered, rank)?;
    let svd = match threshold {
        Threshold::Hard => svd,
        Threshold::Soft(lambda) => svd.map_values(|s| (s - lambda).max(0.0)),
    };
    let mut recon = svd.reconstruct();
    for j in 0..recon.ncols() {
        recon.column_mut(j).add_scalar_mut(means[j]);
    }
    Ok(recon)
}

fn svd_iterate(
    m: &MaskedMatrix,
    init: DMatrix<f64>,
    cfg: &CompletionConfig,
    threshold: Threshold,
) -> Result<Imputation> {
    let max_iters = cfg.max_iters;
    let mut recon = init;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        let filled = m.overlay(&recon);
        let next = low_rank_step(&filled, cfg.rank, &threshold, cfg.center)?;
        let change = relative_change(&next, &recon);
        recon = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("SVD impute did not converge in {max_iters} iterations");
    }
    Ok(Imputation {
        filled: m.overlay(&recon),
        reconstruction: recon,
        iterations,
        converged,
        objective_trace: Vec::new(),
    })
}

fn fully_observed(m: &MaskedMatrix) -> Imputation {
    let values = m.values().clone();
    Imputation {
        filled: values.clone(),
        reconstruction: values,
        iterations: 0,
        converged: true,
        objective_trace: Vec::new(),
    }
}

/// Iterative hard-thresholded SVD imputation at `cfg.rank`.
pub fn hard_impute(m: &MaskedMatrix, cfg: &CompletionConfig) -> Result<Imputation> {
    cfg.validate(m.nrows(), m.ncols())?;
    m.check_coverage()?;
    if m.is_fully_observed() {
        return Ok(fully_observed(m));
    }
    svd_iterate(m, m.mean_filled(), cfg, Threshold::Hard)
}

/// Hard-thresholded SVD imputation from a caller-supplied starting fill.
pub fn hard_impute_from(
    m: &MaskedMatrix,
    init: DMatrix<f64>,
    cfg: &CompletionConfig,
) -> Result<Imputation> {
    cfg.validate(m.nrows(), m.ncols())?;
    if init.shape() != m.shape() {
        return Err(Error::dim("initial fill shape differs from matrix"));
    }
    if m.is_fully_observed() {
        return Ok(fully_observed(m));
    }
    svd_iterate(m, init, cfg, Threshold::Hard)
}

/// Soft-thresholded (nuclear-norm) SVD imputation, truncated at `cfg.rank`.
pub fn soft_impute(m: &MaskedMatrix, cfg: &CompletionConfig) -> Result<Imputation> {
    cfg.validate(m.nrows(), m.ncols())?;
    m.check_coverage()?;
    if m.is_fully_observed() {
        return Ok(fully_observed(m));
    }
    svd_iterate(m, m.mean_filled(), cfg, Threshold::Soft(cfg.lambda))
}

fn als_objective(m: &MaskedMatrix, a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> f64 {
    let mut loss = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if let Some(v) = m.get(i, j) {
                let pred = a.row(i).dot(&b.row(j));
                loss += (v - pred).powi(2);
            }
        }
    }
    loss + lambda * (a.norm_squared() + b.norm_squared())
}

/// Ridge-solves every row of `target` given fixed `other` factors; `by_rows`
/// selects whether observed cells are read along rows or columns of `m`.
fn als_half_step(
    m: &MaskedMatrix,
    other: &DMatrix<f64>,
    lambda: f64,
    by_rows: bool,
) -> Result<DMatrix<f64>> {
    let r = other.ncols();
    let count = if by_rows { m.nrows() } else { m.ncols() };
    let mut out = DMatrix::zeros(count, r);
    for t in 0..count {
        let mut gram = DMatrix::<f64>::identity(r, r) * lambda;
        let mut rhs = DMatrix::<f64>::zeros(r, 1);
        let len = if by_rows { m.ncols() } else { m.nrows() };
        for s in 0..len {
            let (i, j) = if by_rows { (t, s) } else { (s, t) };
            if let Some(v) = m.get(i, j) {
                let f = other.row(s);
                gram += f.transpose() * f;
                for k in 0..r {
                    rhs[(k, 0)] += v * f[k];
                }
            }
        }
        let sol = solve_symmetric(&gram, &rhs).map_err(|_| {
            Error::Singular(format!(
                "ALS normal equations for {} {t}; use lambda > 0",
                if by_rows { "row" } else { "column" }
            ))
        })?;
        out.row_mut(t).copy_from(&sol.transpose());
    }
    Ok(out)
}

/// Alternating ridge solves for a rank-`cfg.rank` factorization `A B^T`.
pub fn als_impute(m: &MaskedMatrix, cfg: &CompletionConfig) -> Result<Imputation> {
    cfg.validate(m.nrows(), m.ncols())?;
    m.check_coverage()?;
    let r = cfg.rank;
    let mut rng = linalg::seeded(cfg.seed);
    let scale = 1.0 / (r as f64).sqrt();
    let mut a = linalg::gaussian_matrix(&mut rng, m.nrows(), r, scale);
    let mut b = linalg::gaussian_matrix(&mut rng, m.ncols(), r, scale);
    let mut recon = &a * b.transpose();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iters {
        iterations = it;
        a = als_half_step(m, &b, cfg.lambda, true)?;
        b = als_half_step(m, &a, cfg.lambda, false)?;
        trace.push(als_objective(m, &a, &b, cfg.lambda));
        let next = &a * b.transpose();
        let change = relative_change(&next, &recon);
        recon = next;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ALS did not converge in {} iterations", cfg.max_iters);
    }
    Ok(Imputation {
        filled: m.overlay(&recon),
        reconstruction: recon,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Dispatches on `cfg.method` (SyntheticPrior needs a stacked task and is
/// rejected here).
pub fn impute(m: &MaskedMatrix, cfg: &CompletionConfig) -> Result<Imputation> {
    match cfg.method {
        CompletionMethod::HardSvd => hard_impute(m, cfg),
        CompletionMethod::SoftSvd => soft_impute(m, cfg),
        CompletionMethod::Als => als_impute(m, cfg),
        CompletionMethod::SyntheticPrior => Err(Error::param(
            "synthetic prior needs a twin column; use synthetic_prior_impute",
        )),
    }
}

/// Human matrix (`n x m`) paired with a twin matrix (`n x (m+1)`) whose last
/// column is the target the human side is missing.
#[derive(Debug, Clone)]
pub struct StackedTask {
    pub human: MaskedMatrix,
    pub twin: MaskedMatrix,
}

impl StackedTask {
    pub fn new(human: MaskedMatrix, twin: MaskedMatrix) -> Result<Self> {
        if human.nrows() != twin.nrows() {
            return Err(Error::dim("human and twin row counts differ"));
        }
        if twin.ncols() != human.ncols() + 1 {
            return Err(Error::dim("twin must have exactly one more column than human"));
        }
        Ok(Self { human, twin })
    }

    /// Builds a task from equally shaped matrices by holding out column
    /// `target` of the human side and moving the twin's copy to the end.
    pub fn from_target(human: &MaskedMatrix, twin: &MaskedMatrix, target: usize) -> Result<Self> {
        if human.shape() != twin.shape() {
            return Err(Error::dim("human and twin shapes differ"));
        }
        if target >= human.ncols() {
            return Err(Error::dim("target column out of range"));
        }
        let h = human.remove_column(target);
        let n = twin.nrows();
        let m = twin.ncols();
        let order: Vec<usize> = (0..m).filter(|&j| j != target).chain([target]).collect();
        let values = DMatrix::from_fn(n, m, |i, c| twin.values()[(i, order[c])]);
        let mask = DMatrix::from_fn(n, m, |i, c| twin.mask()[(i, order[c])]);
        Self::new(h, MaskedMatrix::new(values, mask)?)
    }

    pub fn target_col(&self) -> usize {
        self.human.ncols()
    }

    /// Twin's target column; errors unless fully observed.
    pub fn twin_target(&self) -> Result<DVector<f64>> {
        let t = self.target_col();
        let mut out = DVector::zeros(self.twin.nrows());
        for i in 0..self.twin.nrows() {
            out[i] = self
                .twin
                .get(i, t)
                .ok_or_else(|| Error::param(format!("twin target missing at row {i}")))?;
        }
        Ok(out)
    }

    /// The `2n x (m+1)` stacked matrix: human block with an empty target
    /// column on top of the twin block.
    pub fn stacked(&self) -> Result<MaskedMatrix> {
        let (n, m1) = self.twin.shape();
        let m = self.human.ncols();
        let values = DMatrix::from_fn(2 * n, m1, |i, j| {
            if i < n {
                if j < m {
                    self.human.values()[(i, j)]
                } else {
                    f64::NAN
                }
            } else {
                self.twin.values()[(i - n, j)]
            }
        });
        let mask = DMatrix::from_fn(2 * n, m1, |i, j| {
            if i < n {
                j < m && self.human.mask()[(i, j)]
            } else {
                self.twin.mask()[(i - n, j)]
            }
        });
        MaskedMatrix::new(values, mask)
    }
}

/// Uses the twin's target column as the starting estimate of the missing
/// human column, then runs hard-impute on the human data alone.
pub fn synthetic_prior_impute(task: &StackedTask, cfg: &CompletionConfig) -> Result<DVector<f64>> {
    let warm = task.twin_target()?;
    let (n, m) = task.human.shape();
    let values = DMatrix::from_fn(n, m + 1, |i, j| {
        if j < m {
            task.human.values()[(i, j)]
        } else {
            f64::NAN
        }
    });
    let mask = DMatrix::from_fn(n, m + 1, |i, j| j < m && task.human.mask()[(i, j)]);
    let aug = MaskedMatrix::new(values, mask)?;
    for j in 0..m {
        if !aug.mask().column(j).iter().any(|&o| o) {
            return Err(Error::EmptyColumn(j));
        }
    }
    let means = aug.observed_column_means();
    let init = DMatrix::from_fn(n, m + 1, |i, j| {
        if j == m {
            warm[i]
        } else if aug.is_observed(i, j) {
            aug.values()[(i, j)]
        } else {
            means[j]
        }
    });
    let hard = CompletionConfig {
        method: CompletionMethod::HardSvd,
        ..cfg.clone()
    };
    let out = hard_impute_from(&aug, init, &hard)?;
    Ok(out.filled.column(m).into_owned())
}

/// Completes the stacked human/twin matrix with HSV, SSV or ALS and returns
/// the human block's target column.
pub fn stacked_complete(task: &StackedTask, cfg: &CompletionConfig) -> Result<DVector<f64>> {
    let stacked = task.stacked()?;
    let out = match cfg.method {
        CompletionMethod::HardSvd => hard_impute(&stacked, cfg)?,
        CompletionMethod::SoftSvd => soft_impute(&stacked, cfg)?,
        CompletionMethod::Als => als_impute(&stacked, cfg)?,
        CompletionMethod::SyntheticPrior => return synthetic_prior_impute(task, cfg),
    };
    let n = task.human.nrows();
    let t = task.target_col();
    Ok(DVector::from_fn(n, |i, _| out.filled[(i, t)]))
}

/// Held-out RMSE per candidate rank and the selected rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub rank: usize,
    pub grid: Vec<usize>,
    pub rmse: Vec<f64>,
}

/// Ranks whose held-out RMSE is within this relative margin of the best are
/// treated as tied (and the smallest wins).
pub const RANK_TIE_RTOL: f64 = 1e-2;

/// Picks the rank with the smallest held-out RMSE under hard-impute.
pub fn estimate_effective_rank(
    m: &MaskedMatrix,
    rank_grid: &[usize],
    holdout_frac: f64,
    seed: u64,
) -> Result<RankSelection> {
    let mut grid: Vec<usize> = rank_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::param("rank grid is empty"));
    }
    if !(holdout_frac > 0.0 && holdout_frac <= 0.5) {
        return Err(Error::param("holdout fraction must lie in (0, 0.5]"));
    }
    let max = m.nrows().min(m.ncols());
    if let Some(&bad) = grid.iter().find(|&&r| r == 0 || r > max) {
        return Err(Error::RankOutOfRange { rank: bad, max });
    }
    m.check_coverage()?;

    let observed: Vec<(usize, usize)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter(|&(i, j)| m.is_observed(i, j))
        .collect();
    let count = ((observed.len() as f64) * holdout_frac).ceil() as usize;
    let mut rng = linalg::seeded(seed);
    let mut split = None;
    for _ in 0..10 {
        let perm = linalg::permutation(&mut rng, observed.len());
        let held: Vec<(usize, usize)> = perm[..count].iter().map(|&p| observed[p]).collect();
        let mut train = m.clone();
        for &(i, j) in &held {
            train.hide(i, j);
        }
        if train.check_coverage().is_ok() {
            split = Some((train, held));
            break;
        }
    }
    let (train, held) = split.ok_or_else(|| {
        Error::param("holdout breaks row/column coverage after 10 resamples")
    })?;

    let mut rmse = Vec::with_capacity(grid.len());
    for &r in &grid {
        let out = hard_impute(&train, &CompletionConfig::hard(r))?;
        let se: f64 = held
            .iter()
            .map(|&(i, j)| (out.filled[(i, j)] - m.values()[(i, j)]).powi(2))
            .sum();
        rmse.push((se / held.len() as f64).sqrt());
    }
    let best = rmse.iter().cloned().fold(f64::INFINITY, f64::min);
    let pick = rmse
        .iter()
        .position(|&e| e <= best * (1.0 + RANK_TIE_RTOL))
        .unwrap_or(0);
    Ok(RankSelection {
        rank: grid[pick],
        grid,
        rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, seeded};
    use rand::Rng;

    fn low_rank(n: usize, m: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        gaussian_matrix(&mut rng, n, r, 1.0) * gaussian_matrix(&mut rng, m, r, 1.0).transpose()
    }

    fn mask_random(full: &DMatrix<f64>, frac: f64, seed: u64) -> MaskedMatrix {
        let mut rng = seeded(seed);
        loop {
            let mask = full.map(|_| rng.gen::<f64>() >= frac);
            let m = MaskedMatrix::new(full.clone(), mask).unwrap();
            if m.check_coverage().is_ok() {
                return m;
            }
        }
    }

    fn masked_rmse(m: &MaskedMatrix, truth: &DMatrix<f64>, filled: &DMatrix<f64>) -> f64 {
        let mut se = 0.0;
        let mut c = 0;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m.is_observed(i, j) {
                    se += (filled[(i, j)] - truth[(i, j)]).powi(2);
                    c += 1;
                }
            }
        }
        (se / c as f64).sqrt()
    }

    #[test]
    fn fully_observed_is_unchanged() {
        let full = low_rank(6, 5, 2, 1);
        let m = MaskedMatrix::full(full.clone()).unwrap();
        let out = hard_impute(&m, &CompletionConfig::hard(1)).unwrap();
        assert_eq!(out.filled, full);
    }

    #[test]
    fn rank_one_single_cell() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.5, 0.7, 3.0]);
        let v = DVector::from_vec(vec![0.5, -2.0, 1.0, 1.5]);
        let full = &u * v.transpose();
        let mut m = MaskedMatrix::full(full.clone()).unwrap();
        m.hide(2, 1);
        let out = hard_impute(&m, &CompletionConfig::hard(1).with_iters(5000, 1e-12)).unwrap();
        // closed form: u_i * v_j
        assert!((out.filled[(2, 1)] - u[2] * v[1]).abs() < 1e-6);
        assert_eq!(out.filled[(0, 0)], full[(0, 0)]);
    }

    #[test]
    fn hard_impute_rank_two() {
        let full = low_rank(10, 10, 2, 7);
        let m = mask_random(&full, 0.2, 8);
        let out = hard_impute(&m, &CompletionConfig::hard(2).with_iters(5000, 1e-10)).unwrap();
        assert!(masked_rmse(&m, &full, &out.filled) < 1e-4);
        for j in 0..10 {
            for i in 0..10 {
                if m.is_observed(i, j) {
                    assert_eq!(out.filled[(i, j)], full[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn soft_impute_zero_lambda_matches_hard_at_full_rank() {
        let full = low_rank(8, 6, 2, 3);
        let m = mask_random(&full, 0.2, 4);
        let hard = hard_impute(&m, &CompletionConfig::hard(6)).unwrap();
        let soft = soft_impute(&m, &CompletionConfig::soft(6, 0.0)).unwrap();
        assert!((hard.filled - soft.filled).abs().max() < 1e-6);
    }

    #[test]
    fn soft_impute_large_lambda_kills_everything() {
        let full = low_rank(8, 6, 2, 5);
        let m = mask_random(&full, 0.2, 6);
        let s1 = svd_topk(&m.mean_filled(), 1).unwrap().singular_values[0];
        let out = soft_impute(&m, &CompletionConfig::soft(3, s1)).unwrap();
        assert!(out.reconstruction.norm() < 1e-12);
        // centered variant leaves only the column means
        let mut cfg = CompletionConfig::soft(3, 10.0 * s1);
        cfg.center = true;
        let out = soft_impute(&m, &cfg).unwrap();
        let (c, _) = demean_columns(&out.reconstruction);
        assert!(c.norm() < 1e-9);
    }

    #[test]
    fn soft_impute_rank_two() {
        let full = low_rank(10, 10, 2, 7);
        let m = mask_random(&full, 0.2, 8);
        let out = soft_impute(&m, &CompletionConfig::soft(2, 1e-3).with_iters(5000, 1e-10)).unwrap();
        let e = masked_rmse(&m, &full, &out.filled);
        assert!(e < 1e-2, "rmse {e}");
    }

    #[test]
    fn soft_impute_nuclear_norm_shrinks_with_lambda() {
        let full = low_rank(12, 9, 3, 11);
        let m = mask_random(&full, 0.25, 12);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let out = soft_impute(&m, &CompletionConfig::soft(9, lambda).with_iters(2000, 1e-9)).unwrap();
            let nuc: f64 = svd_topk(&out.reconstruction, 9).unwrap().singular_values.iter().sum();
            assert!(nuc <= prev + 1e-6, "lambda {lambda}: {nuc} > {prev}");
            prev = nuc;
        }
    }

    #[test]
    fn als_rank_one() {
        let full = low_rank(12, 10, 1, 21);
        let m = mask_random(&full, 0.2, 22);
        let out = als_impute(&m, &CompletionConfig::als(1, 1e-8).with_iters(2000, 1e-12)).unwrap();
        assert!(masked_rmse(&m, &full, &out.filled) < 1e-4);
    }

    #[test]
    fn als_objective_nonincreasing() {
        let full = low_rank(15, 12, 3, 31) + gaussian_matrix(&mut seeded(32), 15, 12, 0.3);
        let m = mask_random(&full, 0.3, 33);
        let out = als_impute(&m, &CompletionConfig::als(3, 0.1).with_iters(100, 1e-14)).unwrap();
        for w in out.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn als_heavy_regularization_goes_to_zero() {
        let full = low_rank(8, 8, 2, 41);
        let m = mask_random(&full, 0.2, 42);
        let out = als_impute(&m, &CompletionConfig::als(2, 1e6)).unwrap();
        assert!(out.reconstruction.abs().max() < 1e-3);
    }

    #[test]
    fn als_zero_lambda_singular_errors() {
        // a column observed in a single row leaves a rank-2 normal matrix singular
        let full = low_rank(4, 3, 2, 51);
        let mut m = MaskedMatrix::full(full).unwrap();
        for i in 1..4 {
            m.hide(i, 0);
        }
        let err = als_impute(&m, &CompletionConfig::als(2, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn synthetic_prior_fixed_point() {
        let full = low_rank(10, 7, 1, 61);
        let human = MaskedMatrix::full(full.clone()).unwrap();
        let twin = human.clone();
        let task = StackedTask::from_target(&human, &twin, 6).unwrap();
        let out = synthetic_prior_impute(&task, &CompletionConfig::synthetic_prior(1)).unwrap();
        for i in 0..10 {
            assert!((out[i] - full[(i, 6)]).abs() < 1e-10);
        }
    }

    #[test]
    fn synthetic_prior_refines_biased_warm_start() {
        let full = low_rank(30, 12, 1, 71);
        let mut twin_vals = full.clone();
        twin_vals.column_mut(11).add_scalar_mut(0.5);
        let human = MaskedMatrix::full(full.clone()).unwrap();
        let twin = MaskedMatrix::full(twin_vals).unwrap();
        let task = StackedTask::from_target(&human, &twin, 11).unwrap();
        let out = synthetic_prior_impute(&task, &CompletionConfig::synthetic_prior(1)).unwrap();
        let truth = full.column(11);
        let warm = task.twin_target().unwrap();
        let err_out = (&out - truth).norm();
        let err_warm = (&warm - truth).norm();
        assert!(err_out < err_warm, "{err_out} vs {err_warm}");
    }

    #[test]
    fn synthetic_prior_true_column_beats_cold_start() {
        let full = low_rank(20, 10, 2, 81);
        let human = mask_random(&full, 0.2, 82);
        let twin = MaskedMatrix::full(full.clone()).unwrap();
        let task = StackedTask::from_target(&human, &twin, 9).unwrap();
        let cfg = CompletionConfig::synthetic_prior(2);
        let warm = synthetic_prior_impute(&task, &cfg).unwrap();
        // cold start: same human data, target column initialized at zero
        let (n, m) = task.human.shape();
        let aug_vals = DMatrix::from_fn(n, m + 1, |i, j| if j < m { task.human.values()[(i, j)] } else { f64::NAN });
        let aug_mask = DMatrix::from_fn(n, m + 1, |i, j| j < m && task.human.is_observed(i, j));
        let aug = MaskedMatrix::new(aug_vals, aug_mask).unwrap();
        let mut init = aug.mean_filled();
        init.column_mut(m).fill(0.0);
        let cold = hard_impute_from(&aug, init, &CompletionConfig::hard(2)).unwrap();
        let truth = full.column(9);
        let cold_err = (cold.filled.column(m) - truth).norm();
        let warm_err = (&warm - truth).norm();
        assert!(warm_err <= cold_err + 1e-12, "{warm_err} vs {cold_err}");
    }

    #[test]
    fn stacked_identical_twin_recovers_target() {
        let full = low_rank(20, 8, 1, 91);
        let human = MaskedMatrix::full(full.clone()).unwrap();
        let task = StackedTask::from_target(&human, &human, 3).unwrap();
        let cfg = CompletionConfig::hard(1).with_iters(5000, 1e-12);
        let out = stacked_complete(&task, &cfg).unwrap();
        let rmse = ((&out - full.column(3)).norm_squared() / 20.0).sqrt();
        assert!(rmse < 1e-4, "rmse {rmse}");
    }

    #[test]
    fn stacked_user_mixed_twin_recovers_target() {
        // twin = Q * human mixes users, leaving the question (row) space intact
        let full = low_rank(20, 10, 2, 101);
        let q = linalg::random_orthogonal(&mut seeded(102), 20);
        let human = MaskedMatrix::full(full.clone()).unwrap();
        let twin = MaskedMatrix::full(&q * &full).unwrap();
        let task = StackedTask::from_target(&human, &twin, 4).unwrap();
        let cfg = CompletionConfig::hard(2).with_iters(5000, 1e-12);
        let out = stacked_complete(&task, &cfg).unwrap();
        let rmse = ((&out - full.column(4)).norm_squared() / 20.0).sqrt();
        assert!(rmse < 1e-3, "rmse {rmse}");
    }

    #[test]
    fn stacked_independent_twin_runs() {
        let full = low_rank(15, 6, 2, 111);
        let noise = gaussian_matrix(&mut seeded(112), 15, 6, 1.0);
        let task = StackedTask::from_target(
            &MaskedMatrix::full(full).unwrap(),
            &MaskedMatrix::full(noise).unwrap(),
            0,
        )
        .unwrap();
        let out = stacked_complete(&task, &CompletionConfig::hard(2)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn effective_rank_recovers_three() {
        let full = low_rank(50, 40, 3, 121);
        let m = MaskedMatrix::full(full).unwrap();
        let grid: Vec<usize> = (1..=8).collect();
        let sel = estimate_effective_rank(&m, &grid, 0.1, 5).unwrap();
        assert_eq!(sel.rank, 3, "{:?}", sel.rmse);
    }

    #[test]
    fn effective_rank_singleton_grid() {
        let full = low_rank(10, 8, 1, 131);
        let m = MaskedMatrix::full(full).unwrap();
        assert_eq!(estimate_effective_rank(&m, &[1], 0.1, 0).unwrap().rank, 1);
    }

    #[test]
    fn effective_rank_is_deterministic() {
        let noise = gaussian_matrix(&mut seeded(141), 20, 15, 1.0);
        let m = MaskedMatrix::full(noise).unwrap();
        let grid: Vec<usize> = (1..=5).collect();
        let a = estimate_effective_rank(&m, &grid, 0.1, 9).unwrap();
        let b = estimate_effective_rank(&m, &grid, 0.1, 9).unwrap();
        assert_eq!(a.rank, b.rank);
        assert_eq!(a.rmse, b.rmse);
    }

    #[test]
    fn effective_rank_rejects_bad_input() {
        let m = MaskedMatrix::full(low_rank(5, 5, 1, 1)).unwrap();
        assert!(estimate_effective_rank(&m, &[], 0.1, 0).is_err());
        assert!(estimate_effective_rank(&m, &[1], 0.0, 0).is_err());
        assert!(estimate_effective_rank(&m, &[9], 0.1, 0).is_err());
    }
}
