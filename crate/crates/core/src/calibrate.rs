//! Fit-and-transfer, stacked completion and the leave-one-out harness.
//!
//! Everything is expressed for a held-out *column*; new-user tasks are
//! transposed first so the same code path serves both orientations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{self, CompletionConfig, CompletionMethod, StackedTask};
use crate::error::{Error, Result};
use crate::linalg;
use crate::matcore::{
    mean_correlation, pearson, select_columns, standardize_columns, ColumnStats, MaskedMatrix,
    Orientation,
};
use crate::regress::{self, RegressConfig};
use crate::synth::LatentSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Regress(RegressConfig),
    Completion(CompletionConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Regress(c) => c.family.name(),
            Method::Completion(c) => c.method.name(),
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, Method::Regress(_))
    }
}

/// How human features are put on the scale the model was fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Human columns are standardized with the twin's column statistics, so a
    /// linear relation among twin columns carries over unchanged.
    #[default]
    TwinStats,
    /// Each matrix is standardized with its own statistics.
    OwnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    /// Hard-impute rank for pre-imputation; estimated per matrix when unset.
    pub impute_rank: Option<usize>,
    pub rank_grid: Vec<usize>,
    pub holdout_frac: f64,
    pub scaling: Scaling,
    pub seed: u64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            impute_rank: None,
            rank_grid: (1..=10).collect(),
            holdout_frac: 0.1,
            scaling: Scaling::TwinStats,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationTask {
    pub human: MaskedMatrix,
    pub twin: MaskedMatrix,
    /// Column (new question) or row (new user) to predict.
    pub target_index: usize,
    pub orientation: Orientation,
    pub method: Method,
    pub preprocess: Preprocess,
}

impl CalibrationTask {
    pub fn new(
        human: MaskedMatrix,
        twin: MaskedMatrix,
        target_index: usize,
        orientation: Orientation,
        method: Method,
    ) -> Result<Self> {
        if human.shape() != twin.shape() {
            return Err(Error::dim(format!(
                "human is {:?}, twin is {:?}",
                human.shape(),
                twin.shape()
            )));
        }
        let bound = match orientation {
            Orientation::NewQuestion => human.ncols(),
            Orientation::NewUser => human.nrows(),
        };
        if target_index >= bound {
            return Err(Error::dim(format!("target {target_index} out of range ({bound})")));
        }
        Ok(Self {
            human,
            twin,
            target_index,
            orientation,
            method,
            preprocess: Preprocess::default(),
        })
    }

    pub fn with_preprocess(mut self, preprocess: Preprocess) -> Self {
        self.preprocess = preprocess;
        self
    }

    /// The same task with users and questions swapped.
    pub fn transposed(&self) -> Self {
        Self {
            human: self.human.transpose(),
            twin: self.twin.transpose(),
            orientation: match self.orientation {
                Orientation::NewQuestion => Orientation::NewUser,
                Orientation::NewUser => Orientation::NewQuestion,
            },
            ..self.clone()
        }
    }

    fn column_view(&self) -> (MaskedMatrix, MaskedMatrix) {
        match self.orientation {
            Orientation::NewQuestion => (self.human.clone(), self.twin.clone()),
            Orientation::NewUser => (self.human.transpose(), self.twin.transpose()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferDiagnostic {
    /// In-sample MSE of the model on the twin target, standardized scale.
    pub train_mse: f64,
    /// `None` means no gate (always transfer).
    pub threshold: Option<f64>,
    pub transferred: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Ranks {
    human: Option<usize>,
    twin: Option<usize>,
}

fn clamp_grid(grid: &[usize], m: &MaskedMatrix) -> Vec<usize> {
    let max = m.nrows().min(m.ncols());
    let g: Vec<usize> = grid.iter().copied().filter(|&r| r >= 1 && r <= max).collect();
    if g.is_empty() {
        vec![1]
    } else {
        g
    }
}

fn resolve_rank(m: &MaskedMatrix, fixed: Option<usize>, prep: &Preprocess) -> Result<usize> {
    if let Some(r) = fixed.or(prep.impute_rank) {
        return Ok(r.min(m.nrows().min(m.ncols())).max(1));
    }
    let sel = completion::estimate_effective_rank(
        m,
        &clamp_grid(&prep.rank_grid, m),
        prep.holdout_frac,
        prep.seed,
    )?;
    Ok(sel.rank)
}

fn pre_impute(m: &MaskedMatrix, fixed: Option<usize>, prep: &Preprocess) -> Result<DMatrix<f64>> {
    if m.is_fully_observed() {
        return Ok(m.values().clone());
    }
    let rank = resolve_rank(m, fixed, prep)?;
    Ok(completion::hard_impute(m, &CompletionConfig::hard(rank))?.filled)
}

fn twin_column(twin: &MaskedMatrix, j: usize) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(twin.nrows());
    for i in 0..twin.nrows() {
        out[i] = twin
            .get(i, j)
            .ok_or_else(|| Error::param(format!("twin target {j} missing at row {i}")))?;
    }
    Ok(out)
}

fn target_scale(stats: &ColumnStats, j: usize) -> Result<(f64, f64)> {
    let (mean, std) = (stats.means[j], stats.stds[j]);
    if std == 0.0 {
        return Err(Error::DegenerateTarget(format!("twin column {j} is constant")));
    }
    Ok((mean, std))
}

struct Design {
    x_twin: DMatrix<f64>,
    y_twin: DVector<f64>,
    x_human: DMatrix<f64>,
    mean: f64,
    std: f64,
}

fn design(human: &MaskedMatrix, twin: &MaskedMatrix, j: usize, prep: &Preprocess, ranks: Ranks) -> Result<Design> {
    twin_column(twin, j)?;
    let features: Vec<usize> = (0..twin.ncols()).filter(|&c| c != j).collect();
    let twin_filled = MaskedMatrix::full(pre_impute(twin, ranks.twin, prep)?)?;
    let (twin_std, stats) = standardize_columns(&twin_filled)?;
    let (mean, std) = target_scale(&stats, j)?;
    let human_feat = MaskedMatrix::full(pre_impute(&human.remove_column(j), ranks.human, prep)?)?;
    let human_std = match prep.scaling {
        Scaling::TwinStats => stats.remove(j).apply(&human_feat)?,
        Scaling::OwnStats => standardize_columns(&human_feat)?.0,
    };
    Ok(Design {
        x_twin: select_columns(twin_std.values(), &features),
        y_twin: twin_std.values().column(j).into_owned(),
        x_human: human_std.values().clone(),
        mean,
        std,
    })
}

fn transfer_column(
    human: &MaskedMatrix,
    twin: &MaskedMatrix,
    j: usize,
    cfg: &RegressConfig,
    prep: &Preprocess,
    ranks: Ranks,
) -> Result<(DVector<f64>, f64)> {
    let d = design(human, twin, j, prep, ranks)?;
    let model = regress::fit(&d.x_twin, &d.y_twin, cfg)?;
    let fitted = model.predict(&d.x_twin)?;
    let train_mse = (fitted - &d.y_twin).norm_squared() / d.y_twin.len() as f64;
    let z = model.predict(&d.x_human)?;
    Ok((z.map(|v| d.mean + d.std * v), train_mse))
}

fn move_column_last(m: &MaskedMatrix, j: usize) -> Result<MaskedMatrix> {
    let order: Vec<usize> = (0..m.ncols()).filter(|&c| c != j).chain([j]).collect();
    let values = DMatrix::from_fn(m.nrows(), m.ncols(), |i, c| m.values()[(i, order[c])]);
    let mask = DMatrix::from_fn(m.nrows(), m.ncols(), |i, c| m.mask()[(i, order[c])]);
    MaskedMatrix::new(values, mask)
}

fn complete_column(
    human: &MaskedMatrix,
    twin: &MaskedMatrix,
    j: usize,
    cfg: &CompletionConfig,
    prep: &Preprocess,
) -> Result<DVector<f64>> {
    twin_column(twin, j)?;
    let (twin_std, stats) = standardize_columns(twin)?;
    let (mean, std) = target_scale(&stats, j)?;
    let human_feat = human.remove_column(j);
    let human_std = match prep.scaling {
        Scaling::TwinStats => stats.remove(j).apply(&human_feat)?,
        Scaling::OwnStats => standardize_columns(&human_feat)?.0,
    };
    let task = StackedTask::new(human_std, move_column_last(&twin_std, j)?)?;
    let z = completion::stacked_complete(&task, cfg)?;
    Ok(z.map(|v| mean + std * v))
}

/// Fits the configured regression on the twin's other columns against its
/// target, then applies it to the human columns. Returns the prediction on the
/// human scale (inverted with the twin target's statistics).
pub fn fit_and_transfer(task: &CalibrationTask) -> Result<(DVector<f64>, TransferDiagnostic)> {
    let Method::Regress(cfg) = &task.method else {
        return Err(Error::param(format!(
            "{} is a completion method; use predict_target",
            task.method.name()
        )));
    };
    let (h, t) = task.column_view();
    let (pred, train_mse) = transfer_column(&h, &t, task.target_index, cfg, &task.preprocess, Ranks::default())?;
    Ok((
        pred,
        TransferDiagnostic {
            train_mse,
            threshold: None,
            transferred: true,
        },
    ))
}

/// Prediction for any configured method: fit-and-transfer for regression
/// families, stacked completion (or the synthetic prior) otherwise.
pub fn predict_target(task: &CalibrationTask) -> Result<DVector<f64>> {
    match &task.method {
        Method::Regress(_) => Ok(fit_and_transfer(task)?.0),
        Method::Completion(cfg) => {
            let (h, t) = task.column_view();
            complete_column(&h, &t, task.target_index, cfg, &task.preprocess)
        }
    }
}

/// The calibrated prediction when the twin training MSE is below `tau`,
/// otherwise `fallback`.
pub fn adaptive_transfer(
    task: &CalibrationTask,
    tau: f64,
    fallback: &DVector<f64>,
) -> Result<(DVector<f64>, TransferDiagnostic)> {
    if !(tau >= 0.0) {
        return Err(Error::param("tau must be nonnegative"));
    }
    let (pred, diag) = fit_and_transfer(task)?;
    if pred.len() != fallback.len() {
        return Err(Error::dim("fallback length differs from the prediction"));
    }
    let transferred = diag.train_mse < tau;
    let diag = TransferDiagnostic {
        threshold: Some(tau),
        transferred,
        ..diag
    };
    Ok((if transferred { pred } else { fallback.clone() }, diag))
}

/// Predicts a new user's responses (the target row) by running
/// fit-and-transfer on the transposed matrices.
pub fn calibrate_new_user(task: &CalibrationTask) -> Result<DVector<f64>> {
    if task.orientation != Orientation::NewUser {
        return Err(Error::param("calibrate_new_user needs a new-user task"));
    }
    Ok(fit_and_transfer(task)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LooOptions {
    pub fisher_z: bool,
    /// Gate for adaptive transfer (regression methods only).
    pub tau: Option<f64>,
    pub preprocess: Preprocess,
}

impl Default for LooOptions {
    fn default() -> Self {
        Self {
            fisher_z: false,
            tau: None,
            preprocess: Preprocess::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub index: usize,
    /// Correlation of the reported prediction (after gating, if any).
    pub correlation: Option<f64>,
    /// Correlation of the calibrated prediction before gating.
    pub calibrated: Option<f64>,
    /// Correlation of the raw twin column.
    pub baseline: Option<f64>,
    pub train_mse: Option<f64>,
    pub transferred: Option<bool>,
    pub observed: usize,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub orientation: Orientation,
    pub fisher_z: bool,
    pub tau: Option<f64>,
    pub per_target: Vec<TargetResult>,
    pub mean: f64,
    pub se: f64,
    pub baseline_mean: f64,
    pub baseline_se: f64,
    pub pct_improvement: Option<f64>,
    pub evaluated: usize,
    pub skipped_count: usize,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "method,orientation,target,correlation,calibrated,baseline,train_mse,transferred,observed,skipped"
    }

    /// One CSV line per target, without the header.
    pub fn csv_rows(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        self.per_target
            .iter()
            .map(|t| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.method,
                    self.orientation.name(),
                    t.index,
                    f(t.correlation),
                    f(t.calibrated),
                    f(t.baseline),
                    f(t.train_mse),
                    t.transferred.map(|b| b.to_string()).unwrap_or_default(),
                    t.observed,
                    t.skipped.as_deref().unwrap_or("").replace([',', '\n'], ";")
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LooOutcome {
    pub report: EvalReport,
    /// One column per target (rows follow the oriented matrix); NaN where skipped.
    pub predictions: DMatrix<f64>,
}

struct TargetRun {
    result: TargetResult,
    prediction: Option<DVector<f64>>,
}

fn skip(index: usize, observed: usize, reason: String) -> TargetRun {
    TargetRun {
        result: TargetResult {
            index,
            correlation: None,
            calibrated: None,
            baseline: None,
            train_mse: None,
            transferred: None,
            observed,
            skipped: Some(reason),
        },
        prediction: None,
    }
}

fn corr_on(rows: &[usize], pred: &DVector<f64>, truth: &[f64]) -> Option<f64> {
    let p: Vec<f64> = rows.iter().map(|&i| pred[i]).collect();
    pearson(&p, truth).ok()
}

fn run_target(
    human: &MaskedMatrix,
    twin: &MaskedMatrix,
    j: usize,
    method: &Method,
    opts: &LooOptions,
    ranks: Ranks,
) -> TargetRun {
    let obs = human.column_observed(j);
    let rows: Vec<usize> = obs.iter().map(|(i, _)| *i).collect();
    let truth: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
    if obs.len() < 2 {
        return skip(j, obs.len(), "fewer than two observed truth entries".into());
    }
    let fallback = match twin_column(twin, j) {
        Ok(c) => c,
        Err(e) => return skip(j, obs.len(), e.to_string()),
    };
    let mut masked = human.clone();
    masked.hide_column(j);
    let outcome = match method {
        Method::Regress(cfg) => transfer_column(&masked, twin, j, cfg, &opts.preprocess, ranks).map(|(p, m)| (p, Some(m))),
        Method::Completion(cfg) => complete_column(&masked, twin, j, cfg, &opts.preprocess).map(|p| (p, None)),
    };
    let (calibrated, train_mse) = match outcome {
        Ok(v) => v,
        Err(e) => return skip(j, obs.len(), e.to_string()),
    };
    let transferred = match (opts.tau, train_mse) {
        (Some(tau), Some(mse)) => Some(mse < tau),
        _ => None,
    };
    let used = if transferred == Some(false) { fallback.clone() } else { calibrated.clone() };
    let c_cal = corr_on(&rows, &calibrated, &truth);
    let c_base = corr_on(&rows, &fallback, &truth);
    let c_used = corr_on(&rows, &used, &truth);
    let skipped = match (c_used, c_base) {
        (Some(_), Some(_)) => None,
        (None, _) => Some("prediction or truth is constant".to_string()),
        (_, None) => Some("twin column or truth is constant".to_string()),
    };
    TargetRun {
        result: TargetResult {
            index: j,
            correlation: c_used,
            calibrated: c_cal,
            baseline: c_base,
            train_mse,
            transferred,
            observed: obs.len(),
            skipped,
        },
        prediction: Some(used),
    }
}

fn summarize(values: &[f64], fisher_z: bool) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let s = mean_correlation(values, fisher_z)?;
    Ok((s.mean, s.se))
}

fn pct(mean: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0 && baseline.is_finite() && mean.is_finite()).then(|| 100.0 * (mean - baseline) / baseline.abs())
}

/// Leave-one-out evaluation: every column (new question) or row (new user) is
/// held out in turn and predicted from everything else. Targets run in
/// parallel; results are ordered by target index.
pub fn loo_evaluate(
    human: &MaskedMatrix,
    twin: &MaskedMatrix,
    method: &Method,
    orientation: Orientation,
    opts: &LooOptions,
) -> Result<LooOutcome> {
    if human.shape() != twin.shape() {
        return Err(Error::dim("human and twin shapes differ"));
    }
    if opts.tau.is_some() && !method.is_regression() {
        return Err(Error::param("adaptive transfer needs a regression method"));
    }
    let (h, t) = match orientation {
        Orientation::NewQuestion => (human.clone(), twin.clone()),
        Orientation::NewUser => (human.transpose(), twin.transpose()),
    };
    // The twin is imputed once up front since every target needs a complete
    // twin column; human ranks are fixed once so each target imputes alike.
    let t = if t.is_fully_observed() {
        t
    } else {
        MaskedMatrix::full(pre_impute(&t, None, &opts.preprocess)?)?
    };
    let mut ranks = Ranks::default();
    if method.is_regression() && opts.preprocess.impute_rank.is_none() && !h.is_fully_observed() {
        ranks.human = Some(resolve_rank(&h, None, &opts.preprocess)?);
    }
    let runs: Vec<TargetRun> = (0..h.ncols())
        .into_par_iter()
        .map(|j| run_target(&h, &t, j, method, opts, ranks))
        .collect();

    let mut predictions = DMatrix::from_element(h.nrows(), h.ncols(), f64::NAN);
    for (j, r) in runs.iter().enumerate() {
        if let Some(p) = &r.prediction {
            predictions.set_column(j, p);
        }
    }
    let per_target: Vec<TargetResult> = runs.into_iter().map(|r| r.result).collect();
    let kept: Vec<&TargetResult> = per_target.iter().filter(|r| r.skipped.is_none()).collect();
    let corr: Vec<f64> = kept.iter().filter_map(|r| r.correlation).collect();
    let base: Vec<f64> = kept.iter().filter_map(|r| r.baseline).collect();
    let (mean, se) = summarize(&corr, opts.fisher_z)?;
    let (baseline_mean, baseline_se) = summarize(&base, opts.fisher_z)?;
    Ok(LooOutcome {
        report: EvalReport {
            method: method.name().to_string(),
            orientation,
            fisher_z: opts.fisher_z,
            tau: opts.tau,
            skipped_count: per_target.len() - kept.len(),
            evaluated: kept.len(),
            per_target,
            mean,
            se,
            baseline_mean,
            baseline_se,
            pct_improvement: pct(mean, baseline_mean),
        },
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub mean: f64,
    pub se: f64,
    /// Fraction of evaluated targets that were calibrated.
    pub transferred: f64,
    pub pct_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: String,
    /// Mean correlation when calibration is always applied.
    pub always: f64,
    /// Mean correlation of the raw twin (never calibrate).
    pub never: f64,
    pub points: Vec<SweepPoint>,
    pub best_tau: Option<f64>,
}

/// Default threshold grid: 0 followed by 31 log-spaced values in `[1e-4, 10]`.
pub fn default_tau_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=30).map(|i| 10f64.powf(-4.0 + 5.0 * i as f64 / 30.0)))
        .collect()
}

/// Re-gates an ungated leave-one-out report at every threshold in `taus`.
pub fn tau_sweep(report: &EvalReport, taus: &[f64]) -> Result<SweepReport> {
    let rows: Vec<(f64, f64, f64)> = report
        .per_target
        .iter()
        .filter(|r| r.skipped.is_none())
        .filter_map(|r| Some((r.calibrated?, r.baseline?, r.train_mse?)))
        .collect();
    if rows.is_empty() {
        return Err(Error::param("sweep needs a regression report with evaluated targets"));
    }
    let at = |gate: &dyn Fn(f64) -> bool| -> Result<(f64, f64, f64)> {
        let vals: Vec<f64> = rows.iter().map(|&(c, b, m)| if gate(m) { c } else { b }).collect();
        let moved = rows.iter().filter(|&&(_, _, m)| gate(m)).count() as f64 / rows.len() as f64;
        let (mean, se) = summarize(&vals, report.fisher_z)?;
        Ok((mean, se, moved))
    };
    let (always, _, _) = at(&|_| true)?;
    let (never, _, _) = at(&|_| false)?;
    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::param("sweep thresholds must be finite and nonnegative"));
        }
        let (mean, se, transferred) = at(&|m| m < tau)?;
        points.push(SweepPoint {
            tau,
            mean,
            se,
            transferred,
            pct_improvement: pct(mean, never),
        });
    }
    let best_tau = points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| match best {
            Some(b) if b.mean >= p.mean => Some(b),
            _ => Some(p),
        })
        .map(|p| p.tau);
    Ok(SweepReport {
        method: report.method.clone(),
        always,
        never,
        points,
        best_tau,
    })
}

/// Terms of the new-question error bound for uncentered ridge on raw
/// responses, computed against the generating world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeBoundCheck {
    pub n: usize,
    pub lambda: f64,
    /// `||Y_hat_v - Y_v||_2`.
    pub error: f64,
    /// `||r||_2` with `r = Y_v - Y beta*`.
    pub structural: f64,
    pub estimation: f64,
    pub bound: f64,
    /// Norm of the part of the target embedding outside the span of the others.
    pub residual_embedding: f64,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Evaluates the bound on a fully observed new-question latent sample. The
/// population moments of the twin come from the world's factor, bias and noise
/// variances.
pub fn ridge_bound_check(sample: &LatentSample, lambda: f64) -> Result<RidgeBoundCheck> {
    if sample.orientation() != Orientation::NewQuestion {
        return Err(Error::param("the bound is stated for new questions"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda must be nonnegative"));
    }
    let w = &sample.world;
    let t = w.target_index;
    let human = sample.human_with_target().to_dense()?;
    let twin = sample.twin.to_dense()?;
    let n = human.nrows();
    let feats: Vec<usize> = (0..human.ncols()).filter(|&c| c != t).collect();
    let y = select_columns(&human, &feats);
    let yt = select_columns(&twin, &feats);
    let yv = human.column(t).into_owned();
    let ytv = twin.column(t).into_owned();
    let m = feats.len();
    let nf = n as f64;
    let eye = DMatrix::<f64>::identity(m, m);

    let sigma_hat = yt.transpose() * &yt / nf;
    let gamma_hat = yt.transpose() * &ytv / nf;
    let beta_hat = linalg::solve_symmetric_vec(&(&sigma_hat + &eye * lambda), &gamma_hat)?;
    let error = (&y * &beta_hat - &yv).norm();

    let vt = select_columns(&w.v_twin.transpose(), &feats).transpose();
    let vt_target = w.v_twin.row(t).transpose();
    let c2 = w.twin_factor_variance();
    let bias2 = w.params.row_bias.powi(2) * w.twin_row_bias.is_some() as u8 as f64;
    let noise2 = w.twin_noise_sigma().powi(2);
    let ones = DMatrix::<f64>::from_element(m, m, 1.0);
    let sigma = &vt * vt.transpose() * c2 + ones * bias2 + &eye * noise2;
    let gamma = &vt * vt_target * c2 + DVector::from_element(m, bias2);
    let beta_star = linalg::solve_symmetric_vec(&(&sigma + &eye * lambda), &gamma)?;
    let structural = (&yv - &y * &beta_star).norm();
    let denom = min_eigenvalue(&sigma_hat).max(0.0) + lambda;
    let est_num = spectral_norm(&(&sigma_hat - &sigma)) * beta_star.norm() + (&gamma_hat - &gamma).norm();
    let estimation = if est_num == 0.0 { 0.0 } else { spectral_norm(&y) * est_num / denom };

    let v_feats = select_columns(&w.v.transpose(), &feats);
    let v_target = w.v.row(t).transpose();
    let q = linalg::orthonormal_basis(&v_feats);
    let residual_embedding = (&v_target - &q * (q.transpose() * &v_target)).norm();

    Ok(RidgeBoundCheck {
        n,
        lambda,
        error,
        structural,
        estimation,
        bound: structural + estimation,
        residual_embedding,
    })
}

/// Uses the twin's column (or row) as is; the zero-shot baseline.
pub fn zero_shot(task: &CalibrationTask) -> Result<DVector<f64>> {
    let (_, t) = task.column_view();
    twin_column(&t, task.target_index)
}

/// Convenience: the completion config for the synthetic prior at `rank`.
pub fn synthetic_prior(rank: usize) -> Method {
    Method::Completion(CompletionConfig::new(CompletionMethod::SyntheticPrior, rank, 0.0))
}
