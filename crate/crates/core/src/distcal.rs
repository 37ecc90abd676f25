//! Distribution-level calibration with a weighted ensemble of twins plus `K`
//! dummy twins (the `k`-th always answers `k`), fitted by exponentiated-gradient
//! mirror descent over the simplex.
//!
//! Categories are 1-based in data files (`1..=K`) and 0-based inside vectors.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Accepts probabilities summing to 1 within 1e-9 and renormalizes them.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("categorical needs at least one category"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::param("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::param(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::param("weights must have positive mass"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    /// Point mass on the 0-based index `idx`.
    pub fn point_mass(k: usize, idx: usize) -> Self {
        let mut probs = vec![0.0; k];
        probs[idx] = 1.0;
        Self { probs }
    }

    /// Empirical distribution of 1-based category codes.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::param("no labels"));
        }
        let mut counts = vec![0.0; k];
        for &c in labels {
            check_category(c, k)?;
            counts[c - 1] += 1.0;
        }
        Self::from_weights(&counts)
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cdf(&self) -> Vec<f64> {
        cdf(&self.probs)
    }

    pub fn mean(&self, scores: &[f64]) -> f64 {
        self.probs.iter().zip(scores).map(|(p, s)| p * s).sum()
    }

    pub fn variance(&self, scores: &[f64]) -> f64 {
        let mu = self.mean(scores);
        self.probs
            .iter()
            .zip(scores)
            .map(|(p, s)| p * (s - mu).powi(2))
            .sum()
    }
}

fn check_category(c: usize, k: usize) -> Result<()> {
    if c == 0 || c > k {
        Err(Error::param(format!("category {c} outside 1..={k}")))
    } else {
        Ok(())
    }
}

fn cdf(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discrepancy {
    #[serde(rename = "tv")]
    TV,
    #[serde(rename = "chi2")]
    ChiSq,
    #[serde(rename = "kl")]
    KL,
    #[serde(rename = "hellinger")]
    Hellinger,
    #[serde(rename = "ks")]
    KS,
    #[serde(rename = "cdf_l1")]
    CdfL1,
    #[serde(rename = "cdf_l2")]
    CdfL2,
}

impl Discrepancy {
    pub const ALL: [Discrepancy; 7] = [
        Discrepancy::TV,
        Discrepancy::ChiSq,
        Discrepancy::KL,
        Discrepancy::Hellinger,
        Discrepancy::KS,
        Discrepancy::CdfL1,
        Discrepancy::CdfL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TV => "tv",
            Self::ChiSq => "chi2",
            Self::KL => "kl",
            Self::Hellinger => "hellinger",
            Self::KS => "ks",
            Self::CdfL1 => "cdf_l1",
            Self::CdfL2 => "cdf_l2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name().eq_ignore_ascii_case(s))
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, Self::ChiSq | Self::KL)
    }

    /// Whether the measure divides by (or takes the log of) `Q`.
    pub fn needs_clamp(self) -> bool {
        matches!(self, Self::ChiSq | Self::KL)
    }
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_k(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::dim(format!("K mismatch: {} vs {}", p.len(), q.len())));
    }
    Ok(())
}

fn raw_discrepancy(spec: Discrepancy, p: &[f64], q: &[f64], floor: Option<f64>) -> Result<f64> {
    // rounding can push exact zeros slightly negative
    Ok(signed_discrepancy(spec, p, q, floor)?.max(0.0))
}

/// The formula itself, also evaluated off the simplex by the optimizer.
fn signed_discrepancy(spec: Discrepancy, p: &[f64], q: &[f64], floor: Option<f64>) -> Result<f64> {
    check_k(p, q)?;
    let qd = |v: f64| -> Result<f64> {
        match floor {
            Some(eps) => Ok(v.max(eps)),
            None if v > 0.0 => Ok(v),
            None => Err(Error::Numerical(format!(
                "{spec} divides by a zero probability; clamp it"
            ))),
        }
    };
    let d = match spec {
        Discrepancy::TV => 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        Discrepancy::ChiSq => {
            let mut s = 0.0;
            for (&a, &b) in p.iter().zip(q) {
                if a > 0.0 {
                    s += a * a / qd(b)?;
                }
            }
            s - 1.0
        }
        Discrepancy::KL => {
            let mut s = 0.0;
            for (&a, &b) in p.iter().zip(q) {
                if a > 0.0 {
                    s += a * (a / qd(b)?).ln();
                }
            }
            s
        }
        Discrepancy::Hellinger => 1.0 - p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum::<f64>(),
        Discrepancy::KS | Discrepancy::CdfL1 | Discrepancy::CdfL2 => {
            let (f, g) = (cdf(p), cdf(q));
            let diffs = f.iter().zip(&g).map(|(a, b)| a - b);
            match spec {
                Discrepancy::KS => diffs.fold(0.0f64, |m, d| m.max(d.abs())),
                Discrepancy::CdfL1 => diffs.map(f64::abs).sum(),
                _ => diffs.map(|d| d * d).sum(),
            }
        }
    };
    Ok(d)
}

/// `D(P || Q)`. KL and chi-square fail when `Q` is zero where `P` is not.
pub fn discrepancy(spec: Discrepancy, p: &Categorical, q: &Categorical) -> Result<f64> {
    raw_discrepancy(spec, &p.probs, &q.probs, None)
}

/// `D(P || Q)` with `Q` clamped below at `eps` inside KL and chi-square.
pub fn discrepancy_clamped(spec: Discrepancy, p: &Categorical, q: &Categorical, eps: f64) -> Result<f64> {
    raw_discrepancy(spec, &p.probs, &q.probs, Some(eps))
}

/// Subgradient of `Q -> D(P || Q)`; ties resolve to the lowest index.
fn grad_q(spec: Discrepancy, p: &[f64], q: &[f64], eps: f64) -> Vec<f64> {
    let k = p.len();
    match spec {
        Discrepancy::TV => p
            .iter()
            .zip(q)
            .map(|(a, b)| {
                let d = b - a;
                if d > 0.0 {
                    0.5
                } else if d < 0.0 {
                    -0.5
                } else {
                    0.0
                }
            })
            .collect(),
        Discrepancy::ChiSq => p
            .iter()
            .zip(q)
            .map(|(a, &b)| if b < eps { 0.0 } else { -a * a / (b * b) })
            .collect(),
        Discrepancy::KL => p
            .iter()
            .zip(q)
            .map(|(a, &b)| if b < eps { 0.0 } else { -a / b })
            .collect(),
        Discrepancy::Hellinger => p
            .iter()
            .zip(q)
            .map(|(a, &b)| -0.5 * (a / b.max(eps)).sqrt())
            .collect(),
        Discrepancy::KS | Discrepancy::CdfL1 | Discrepancy::CdfL2 => {
            let (f, g) = (cdf(p), cdf(q));
            // derivative with respect to each CDF entry, then suffix sums since
            // G_k depends on q_l for every l <= k
            let mut dg = vec![0.0; k];
            match spec {
                Discrepancy::KS => {
                    let mut best = 0;
                    for i in 1..k {
                        if (g[i] - f[i]).abs() > (g[best] - f[best]).abs() {
                            best = i;
                        }
                    }
                    let d = g[best] - f[best];
                    dg[best] = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                Discrepancy::CdfL1 => {
                    for i in 0..k {
                        let d = g[i] - f[i];
                        dg[i] = if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
                _ => {
                    for i in 0..k {
                        dg[i] = 2.0 * (g[i] - f[i]);
                    }
                }
            }
            let mut out = vec![0.0; k];
            let mut acc = 0.0;
            for i in (0..k).rev() {
                acc += dg[i];
                out[i] = acc;
            }
            out
        }
    }
}

/// How the twins answered one question: sampled 1-based codes, or each twin's
/// full answer distribution as a `K x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum TwinColumn {
    Labels(Vec<usize>),
    Probs(DMatrix<f64>),
}

impl TwinColumn {
    fn n(&self) -> usize {
        match self {
            TwinColumn::Labels(l) => l.len(),
            TwinColumn::Probs(m) => m.ncols(),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        match self {
            TwinColumn::Labels(l) => l.iter().try_for_each(|&c| check_category(c, k)),
            TwinColumn::Probs(m) => {
                if m.nrows() != k {
                    return Err(Error::dim("twin distribution rows must equal K"));
                }
                for col in m.column_iter() {
                    if col.iter().any(|v| *v < 0.0) || (col.sum() - 1.0).abs() > NORM_TOL {
                        return Err(Error::param("twin distributions must lie on the simplex"));
                    }
                }
                Ok(())
            }
        }
    }

    /// `sum_i w_i twin_i + pi`
    fn mix(&self, w: &[f64], pi: &[f64]) -> Vec<f64> {
        let mut out = pi.to_vec();
        match self {
            TwinColumn::Labels(l) => {
                for (&c, &wi) in l.iter().zip(w) {
                    out[c - 1] += wi;
                }
            }
            TwinColumn::Probs(m) => {
                for (i, col) in m.column_iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(col.iter()) {
                        *o += w[i] * v;
                    }
                }
            }
        }
        out
    }

    /// Adds the adjoint of [`TwinColumn::mix`] applied to `g`, scaled, into `acc`.
    fn pullback(&self, g: &[f64], scale: f64, acc: &mut [f64]) {
        match self {
            TwinColumn::Labels(l) => {
                for (a, &c) in acc.iter_mut().zip(l) {
                    *a += scale * g[c - 1];
                }
            }
            TwinColumn::Probs(m) => {
                for (a, col) in acc.iter_mut().zip(m.column_iter()) {
                    *a += scale * col.iter().zip(g).map(|(v, gk)| v * gk).sum::<f64>();
                }
            }
        }
    }
}

/// Twin responses to a set of questions, sharing `n` twins and `K` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinPanel {
    k: usize,
    n: usize,
    columns: Vec<TwinColumn>,
}

impl TwinPanel {
    pub fn new(k: usize, columns: Vec<TwinColumn>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("K must be positive"));
        }
        let n = columns.first().map(TwinColumn::n).unwrap_or(0);
        if n == 0 {
            return Err(Error::param("need at least one question and one twin"));
        }
        for c in &columns {
            if c.n() != n {
                return Err(Error::dim("every question needs the same twins"));
            }
            c.validate(k)?;
        }
        Ok(Self { k, n, columns })
    }

    /// From an `n x m` matrix of 1-based codes, one column per question.
    pub fn from_codes(codes: &[Vec<usize>], k: usize) -> Result<Self> {
        Self::new(k, codes.iter().map(|c| TwinColumn::Labels(c.clone())).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_twins(&self) -> usize {
        self.n
    }

    pub fn n_questions(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &TwinColumn {
        &self.columns[j]
    }

    pub fn subset(&self, questions: &[usize]) -> Self {
        Self {
            k: self.k,
            n: self.n,
            columns: questions.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "personas_and_dummies")]
    PersonasAndDummies,
    #[serde(rename = "personas_only")]
    PersonasOnly,
    #[serde(rename = "dummies_only")]
    DummiesOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::PersonasAndDummies,
        Variant::PersonasOnly,
        Variant::DummiesOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PersonasAndDummies => "personas_and_dummies",
            Self::PersonasOnly => "personas_only",
            Self::DummiesOnly => "dummies_only",
        }
    }

    fn uses_personas(self) -> bool {
        self != Variant::DummiesOnly
    }

    fn uses_dummies(self) -> bool {
        self != Variant::PersonasOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub w: Vec<f64>,
    pub pi: Vec<f64>,
    pub variant: Variant,
}

impl EnsembleWeights {
    pub fn uniform(n: usize, k: usize, variant: Variant) -> Self {
        let active = match variant {
            Variant::PersonasAndDummies => n + k,
            Variant::PersonasOnly => n,
            Variant::DummiesOnly => k,
        } as f64;
        let w = if variant.uses_personas() { 1.0 / active } else { 0.0 };
        let p = if variant.uses_dummies() { 1.0 / active } else { 0.0 };
        Self {
            w: vec![w; n],
            pi: vec![p; k],
            variant,
        }
    }

    /// `w_i = 1/n`, `pi = 0`.
    pub fn baseline(n: usize, k: usize) -> Self {
        Self::uniform(n, k, Variant::PersonasOnly)
    }

    fn flat(&self) -> Vec<f64> {
        self.w.iter().chain(&self.pi).copied().collect()
    }

    fn from_flat(x: &[f64], n: usize, variant: Variant) -> Self {
        Self {
            w: x[..n].to_vec(),
            pi: x[n..].to_vec(),
            variant,
        }
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum::<f64>() + self.pi.iter().sum::<f64>()
    }
}

/// Mixture distribution of one question under the given weights.
pub fn ensemble_distribution(weights: &EnsembleWeights, column: &TwinColumn, k: usize) -> Result<Categorical> {
    if weights.pi.len() != k || weights.w.len() != column.n() {
        return Err(Error::dim("weights do not match twins / categories"));
    }
    column.validate(k)?;
    Categorical::new(column.mix(&weights.w, &weights.pi))
}

/// Prediction for a held-out question: the ensemble applied to its twin column.
pub fn predict_distribution(weights: &EnsembleWeights, column: &TwinColumn, k: usize) -> Result<Categorical> {
    ensemble_distribution(weights, column, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorDescentConfig {
    pub eta0: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub epsilon_floor: f64,
    pub seed: u64,
}

impl Default for MirrorDescentConfig {
    fn default() -> Self {
        Self {
            eta0: 1.0,
            max_iters: 2000,
            tol: 1e-8,
            epsilon_floor: 1e-9,
            seed: 0,
        }
    }
}

impl MirrorDescentConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::param("eta0, max_iters and tol must be positive"));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor <= 1e-3) {
            return Err(Error::param("epsilon_floor must lie in (0, 1e-3]"));
        }
        Ok(())
    }
}

/// The averaged training objective `(1/m) sum_j D(P_j || P_hat_j)` as a
/// function of the stacked vector `(w, pi)`.
pub struct Objective<'a> {
    pub targets: &'a [Categorical],
    pub panel: &'a TwinPanel,
    pub spec: Discrepancy,
    pub epsilon_floor: f64,
}

impl Objective<'_> {
    fn check(&self) -> Result<()> {
        if self.targets.len() != self.panel.n_questions() {
            return Err(Error::dim("one target distribution per training question"));
        }
        if self.targets.is_empty() {
            return Err(Error::param("need at least one training question"));
        }
        if self.targets.iter().any(|t| t.k() != self.panel.k) {
            return Err(Error::dim("target K differs from panel K"));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_grad(x).0
    }

    /// Objective and gradient with respect to `(w, pi)`.
    pub fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (n, k) = (self.panel.n, self.panel.k);
        let (w, pi) = x.split_at(n);
        let m = self.targets.len() as f64;
        let mut total = 0.0;
        let mut grad = vec![0.0; n + k];
        for (t, col) in self.targets.iter().zip(&self.panel.columns) {
            let q = col.mix(w, pi);
            total += signed_discrepancy(self.spec, &t.probs, &q, Some(self.epsilon_floor))
                .expect("K checked");
            let g = grad_q(self.spec, &t.probs, &q, self.epsilon_floor);
            let (gw, gpi) = grad.split_at_mut(n);
            col.pullback(&g, 1.0 / m, gw);
            for (a, b) in gpi.iter_mut().zip(&g) {
                *a += b / m;
            }
        }
        (total / m, grad)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: EnsembleWeights,
    pub objective: f64,
    /// Best objective so far after each iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Smallest multiplicative factor one exponentiated-gradient step may apply.
const MIN_EXPONENT: f64 = -50.0;

fn mirror_descent(obj: &Objective, start: Vec<f64>, active: &[bool], cfg: &MirrorDescentConfig) -> Result<(Vec<f64>, f64, Vec<f64>, usize, bool)> {
    let mut x = start;
    let (mut f, mut g) = obj.value_and_grad(&x);
    let mut best = x.clone();
    let mut best_f = f;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iters = 0;
    for t in 1..=cfg.max_iters {
        iters = t;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at iteration {t}")));
        }
        let eta = cfg.eta0 / (t as f64).sqrt();
        // shift so the largest exponent is 0, then clip from below
        let shift = x
            .iter()
            .zip(&g)
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|((_, gi), _)| -eta * gi)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..x.len() {
            if active[i] {
                let e = (-eta * g[i] - shift).max(MIN_EXPONENT);
                x[i] *= e.exp();
                total += x[i];
            }
        }
        for v in x.iter_mut() {
            *v /= total;
        }
        let prev = f;
        (f, g) = obj.value_and_grad(&x);
        if f < best_f {
            best_f = f;
            best.copy_from_slice(&x);
        }
        trace.push(best_f);
        if (prev - f).abs() <= cfg.tol * prev.abs().max(1e-12) {
            converged = true;
            break;
        }
    }
    Ok((best, best_f, trace, iters, converged))
}

/// Fits ensemble weights on training questions. The full variant also runs
/// from perturbed restricted-variant solutions and keeps the best result, so
/// its objective never exceeds either restriction's.
pub fn fit_weights(
    targets: &[Categorical],
    panel: &TwinPanel,
    spec: Discrepancy,
    variant: Variant,
    cfg: &MirrorDescentConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    let obj = Objective {
        targets,
        panel,
        spec,
        epsilon_floor: cfg.epsilon_floor,
    };
    obj.check()?;
    let (n, k) = (panel.n, panel.k);
    let mut fit = fit_variant(&obj, variant, cfg)?;
    if variant == Variant::PersonasAndDummies {
        for restricted in [Variant::PersonasOnly, Variant::DummiesOnly] {
            let r = fit_variant(&obj, restricted, cfg)?;
            let uniform = EnsembleWeights::uniform(n, k, variant).flat();
            let start: Vec<f64> = r
                .weights
                .flat()
                .iter()
                .zip(&uniform)
                .map(|(a, u)| 0.99 * a + 0.01 * u)
                .collect();
            let active = vec![true; n + k];
            let (x, f, trace, iters, converged) = mirror_descent(&obj, start, &active, cfg)?;
            let (x, f) = if r.objective < f {
                (r.weights.flat(), r.objective)
            } else {
                (x, f)
            };
            if f < fit.objective {
                fit = FitResult {
                    weights: EnsembleWeights::from_flat(&x, n, variant),
                    objective: f,
                    trace,
                    iterations: iters,
                    converged,
                };
            }
        }
    }
    Ok(fit)
}

fn fit_variant(obj: &Objective, variant: Variant, cfg: &MirrorDescentConfig) -> Result<FitResult> {
    let (n, k) = (obj.panel.n, obj.panel.k);
    let active: Vec<bool> = (0..n + k)
        .map(|i| if i < n { variant.uses_personas() } else { variant.uses_dummies() })
        .collect();
    let start = EnsembleWeights::uniform(n, k, variant).flat();
    let (x, f, trace, iters, converged) = mirror_descent(obj, start, &active, cfg)?;
    if !converged {
        log::debug!("mirror descent ({}, {}) hit {} iterations", obj.spec, variant.name(), cfg.max_iters);
    }
    Ok(FitResult {
        weights: EnsembleWeights::from_flat(&x, n, variant),
        objective: f,
        trace,
        iterations: iters,
        converged,
    })
}

/// `Var_pred(score) / Var_true(score)`.
pub fn variance_ratio(pred: &Categorical, truth: &Categorical, scores: &[f64]) -> Result<f64> {
    if pred.k() != truth.k() || scores.len() != truth.k() {
        return Err(Error::dim("K mismatch"));
    }
    let vt = truth.variance(scores);
    if !(vt > 0.0) {
        return Err(Error::DegenerateTarget("true distribution has zero variance".into()));
    }
    Ok(pred.variance(scores) / vt)
}

/// Seeded 80/20 split of question indices into (train, test).
pub fn split_questions(m: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < 2 {
        return Err(Error::param("need at least two questions to split"));
    }
    let n_test = ((m as f64 * test_frac).round() as usize).clamp(1, m - 1);
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut linalg::seeded(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Training objective, or `None` for the uniform baseline.
    pub objective: Option<Discrepancy>,
    pub variant: Option<Variant>,
    /// Mean test discrepancy per metric, in [`Discrepancy::ALL`] order.
    pub metrics: Vec<(Discrepancy, f64)>,
    pub mean_variance_ratio: Option<f64>,
    pub train_objective: Option<f64>,
}

impl MetricRow {
    pub fn metric(&self, d: Discrepancy) -> f64 {
        self.metrics.iter().find(|(k, _)| *k == d).map(|(_, v)| *v).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTable {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub k: usize,
    pub baseline: MetricRow,
    pub rows: Vec<MetricRow>,
}

impl CrossTable {
    pub fn row(&self, objective: Discrepancy, variant: Variant) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.objective == Some(objective) && r.variant == Some(variant))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("objective,variant");
        for d in Discrepancy::ALL {
            out.push(',');
            out.push_str(d.name());
        }
        out.push_str(",variance_ratio\n");
        for r in std::iter::once(&self.baseline).chain(&self.rows) {
            out.push_str(r.objective.map_or("baseline", Discrepancy::name));
            out.push(',');
            out.push_str(r.variant.map_or("uniform", Variant::name));
            for (_, v) in &r.metrics {
                out.push_str(&format!(",{v}"));
            }
            match r.mean_variance_ratio {
                Some(v) => out.push_str(&format!(",{v}\n")),
                None => out.push_str(",NA\n"),
            }
        }
        out
    }
}

/// Scores `1..=K` used for variance ratios.
pub fn default_scores(k: usize) -> Vec<f64> {
    (1..=k).map(|v| v as f64).collect()
}

fn evaluate(
    weights: &EnsembleWeights,
    truths: &[Categorical],
    panel: &TwinPanel,
    test: &[usize],
    eps: f64,
) -> Result<(Vec<(Discrepancy, f64)>, Option<f64>)> {
    let k = panel.k;
    let scores = default_scores(k);
    let preds = test
        .iter()
        .map(|&j| predict_distribution(weights, &panel.columns[j], k))
        .collect::<Result<Vec<_>>>()?;
    let mut metrics = Vec::with_capacity(7);
    for d in Discrepancy::ALL {
        let mut s = 0.0;
        for (p, &j) in preds.iter().zip(test) {
            s += discrepancy_clamped(d, &truths[j], p, eps)?;
        }
        metrics.push((d, s / test.len() as f64));
    }
    let ratios: Vec<f64> = preds
        .iter()
        .zip(test)
        .filter_map(|(p, &j)| variance_ratio(p, &truths[j], &scores).ok())
        .collect();
    let vr = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    Ok((metrics, vr))
}

/// Fits every (objective, variant) pair on the training questions and scores
/// each fit on the test questions with every metric. `truths` holds the human
/// distribution for every question in the panel.
pub fn cross_table(
    truths: &[Categorical],
    panel: &TwinPanel,
    train: &[usize],
    test: &[usize],
    cfg: &MirrorDescentConfig,
) -> Result<CrossTable> {
    use rayon::prelude::*;
    if truths.len() != panel.n_questions() {
        return Err(Error::dim("one human distribution per question"));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::param("train and test sets must be nonempty"));
    }
    let train_panel = panel.subset(train);
    let train_truths: Vec<Categorical> = train.iter().map(|&j| truths[j].clone()).collect();
    let (n, k) = (panel.n, panel.k);

    let base = EnsembleWeights::baseline(n, k);
    let (metrics, vr) = evaluate(&base, truths, panel, test, cfg.epsilon_floor)?;
    let baseline = MetricRow {
        objective: None,
        variant: None,
        metrics,
        mean_variance_ratio: vr,
        train_objective: None,
    };

    let jobs: Vec<(Discrepancy, Variant)> = Discrepancy::ALL
        .into_iter()
        .flat_map(|d| Variant::ALL.into_iter().map(move |v| (d, v)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(d, v)| {
            let fit = fit_weights(&train_truths, &train_panel, d, v, cfg)?;
            let (metrics, vr) = evaluate(&fit.weights, truths, panel, test, cfg.epsilon_floor)?;
            Ok(MetricRow {
                objective: Some(d),
                variant: Some(v),
                metrics,
                mean_variance_ratio: vr,
                train_objective: Some(fit.objective),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossTable {
        train: train.to_vec(),
        test: test.to_vec(),
        k,
        baseline,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    fn random_cat(rng: &mut linalg::SeededRng, k: usize) -> Categorical {
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        Categorical::from_weights(&w).unwrap()
    }

    #[test]
    fn categorical_validation() {
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![-0.1, 1.1]).is_err());
        assert!(Categorical::new(vec![]).is_err());
        let c = Categorical::from_labels(&[1, 1, 2, 3], 3).unwrap();
        assert_eq!(c.probs(), &[0.5, 0.25, 0.25]);
        assert!(Categorical::from_labels(&[4], 3).is_err());
    }

    #[test]
    fn identical_distributions_have_zero_discrepancy() {
        let p = cat(&[0.1, 0.2, 0.3, 0.4]);
        for d in Discrepancy::ALL {
            assert!(discrepancy(d, &p, &p).unwrap().abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn disjoint_point_masses() {
        let p = Categorical::point_mass(2, 0);
        let q = Categorical::point_mass(2, 1);
        for d in [
            Discrepancy::TV,
            Discrepancy::KS,
            Discrepancy::CdfL1,
            Discrepancy::CdfL2,
            Discrepancy::Hellinger,
        ] {
            assert!((discrepancy(d, &p, &q).unwrap() - 1.0).abs() < 1e-15, "{d}");
        }
        assert!(discrepancy(Discrepancy::KL, &p, &q).is_err());
        assert!(discrepancy(Discrepancy::ChiSq, &p, &q).is_err());
    }

    #[test]
    fn tv_uniform_against_point_mass() {
        let p = Categorical::uniform(5);
        let q = Categorical::point_mass(5, 0);
        let tv = discrepancy_clamped(Discrepancy::TV, &p, &q, 1e-9).unwrap();
        assert!((tv - 0.8).abs() < 1e-15);
    }

    #[test]
    fn discrepancy_properties_on_random_pairs() {
        let mut rng = linalg::seeded(1);
        for _ in 0..200 {
            let k = rng.gen_range(2..8);
            let p = random_cat(&mut rng, k);
            let q = random_cat(&mut rng, k);
            let tv = discrepancy(Discrepancy::TV, &p, &q).unwrap();
            let ks = discrepancy(Discrepancy::KS, &p, &q).unwrap();
            assert!(ks <= tv + 1e-12 && tv <= 1.0);
            for d in Discrepancy::ALL {
                let a = discrepancy(d, &p, &q).unwrap();
                assert!(a > 0.0, "{d}");
                if d.is_symmetric() {
                    let b = discrepancy(d, &q, &p).unwrap();
                    assert!((a - b).abs() < 1e-12, "{d}");
                }
            }
        }
    }

    #[test]
    fn ensemble_examples() {
        let uni = EnsembleWeights {
            w: vec![0.25; 4],
            pi: vec![0.0; 3],
            variant: Variant::PersonasOnly,
        };
        let col = TwinColumn::Labels(vec![3, 3, 3, 3]);
        assert_eq!(ensemble_distribution(&uni, &col, 3).unwrap().probs(), &[0.0, 0.0, 1.0]);
        let col = TwinColumn::Labels(vec![1, 1, 2, 3]);
        assert_eq!(ensemble_distribution(&uni, &col, 3).unwrap().probs(), &[0.5, 0.25, 0.25]);
        let dummies = EnsembleWeights::uniform(4, 3, Variant::DummiesOnly);
        let p = ensemble_distribution(&dummies, &col, 3).unwrap();
        assert!(p.probs().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(ensemble_distribution(&uni, &TwinColumn::Labels(vec![1, 1, 2, 4]), 3).is_err());
    }

    #[test]
    fn ensemble_is_linear() {
        let mut rng = linalg::seeded(2);
        let col = TwinColumn::Labels((0..6).map(|_| rng.gen_range(1..=4)).collect());
        let a = EnsembleWeights::uniform(6, 4, Variant::PersonasAndDummies);
        let mut raw: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter_mut().for_each(|v| *v /= s);
        let b = EnsembleWeights::from_flat(&raw, 6, Variant::PersonasAndDummies);
        let t = 0.3;
        let mixed = EnsembleWeights::from_flat(
            &a.flat().iter().zip(b.flat()).map(|(x, y)| t * x + (1.0 - t) * y).collect::<Vec<_>>(),
            6,
            Variant::PersonasAndDummies,
        );
        let pa = ensemble_distribution(&a, &col, 4).unwrap();
        let pb = ensemble_distribution(&b, &col, 4).unwrap();
        let pm = ensemble_distribution(&mixed, &col, 4).unwrap();
        for i in 0..4 {
            assert!((pm.probs()[i] - (t * pa.probs()[i] + (1.0 - t) * pb.probs()[i])).abs() < 1e-12);
        }
    }

    fn fd_check(spec: Discrepancy, seed: u64) -> f64 {
        let mut rng = linalg::seeded(seed);
        let (n, k, m) = (6, 4, 3);
        let panel = TwinPanel::from_codes(
            &(0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(1..=k)).collect())
                .collect::<Vec<_>>(),
            k,
        )
        .unwrap();
        let targets: Vec<Categorical> = (0..m).map(|_| random_cat(&mut rng, k)).collect();
        let obj = Objective {
            targets: &targets,
            panel: &panel,
            spec,
            epsilon_floor: 1e-9,
        };
        let x: Vec<f64> = (0..n + k).map(|_| rng.gen_range(0.02..0.2)).collect();
        let (_, g) = obj.value_and_grad(&x);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8));
        }
        worst
    }

    #[test]
    fn kl_and_chi2_gradients_match_finite_differences() {
        for seed in 0..20 {
            for spec in [Discrepancy::KL, Discrepancy::ChiSq, Discrepancy::Hellinger, Discrepancy::CdfL2] {
                let rel = fd_check(spec, seed);
                assert!(rel < 1e-5, "{spec} seed {seed}: {rel}");
            }
        }
    }

    #[test]
    fn dummies_only_matches_single_question() {
        let p = cat(&[0.1, 0.6, 0.3]);
        let panel = TwinPanel::from_codes(&[vec![1, 2]], 3).unwrap();
        let fit = |iters| {
            let cfg = MirrorDescentConfig {
                max_iters: iters,
                ..Default::default()
            };
            fit_weights(std::slice::from_ref(&p), &panel, Discrepancy::TV, Variant::DummiesOnly, &cfg).unwrap()
        };
        // the decaying step leaves an oscillation proportional to eta_t
        let short = fit(2000);
        assert!(short.objective < 5e-3);
        assert!(short.weights.w.iter().all(|&w| w == 0.0));
        let long = fit(50_000);
        assert!(long.objective < short.objective && long.objective < 5e-4);
    }

    #[test]
    fn single_twin_personas_only() {
        let p = cat(&[0.5, 0.5]);
        let panel = TwinPanel::from_codes(&[vec![1], vec![1]], 2).unwrap();
        let fit = fit_weights(
            &[p.clone(), p],
            &panel,
            Discrepancy::TV,
            Variant::PersonasOnly,
            &MirrorDescentConfig::default(),
        )
        .unwrap();
        assert!((fit.objective - 0.5).abs() < 1e-3);
        assert_eq!(fit.weights.pi, vec![0.0, 0.0]);
    }

    #[test]
    fn recovers_a_planted_mixture() {
        let mut rng = linalg::seeded(3);
        let (n, k, m) = (30, 4, 25);
        let codes: Vec<Vec<usize>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(1..=k)).collect())
            .collect();
        let panel = TwinPanel::from_codes(&codes, k).unwrap();
        let planted = EnsembleWeights::uniform(n, k, Variant::PersonasOnly);
        let targets: Vec<Categorical> = (0..m)
            .map(|j| ensemble_distribution(&planted, panel.column(j), k).unwrap())
            .collect();
        let fit = fit_weights(&targets, &panel, Discrepancy::TV, Variant::PersonasAndDummies, &MirrorDescentConfig::default()).unwrap();
        assert!(fit.objective < 0.02, "{}", fit.objective);
        assert!((fit.weights.total() - 1.0).abs() < 1e-10);
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn full_variant_nests_restrictions() {
        let mut rng = linalg::seeded(4);
        let (n, k, m) = (12, 5, 8);
        let codes: Vec<Vec<usize>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(1..=k)).collect())
            .collect();
        let panel = TwinPanel::from_codes(&codes, k).unwrap();
        let targets: Vec<Categorical> = (0..m).map(|_| random_cat(&mut rng, k)).collect();
        let cfg = MirrorDescentConfig::default();
        for d in Discrepancy::ALL {
            let full = fit_weights(&targets, &panel, d, Variant::PersonasAndDummies, &cfg).unwrap();
            for v in [Variant::PersonasOnly, Variant::DummiesOnly] {
                let r = fit_weights(&targets, &panel, d, v, &cfg).unwrap();
                assert!(full.objective <= r.objective + 1e-6, "{d} {v:?}");
            }
        }
    }

    #[test]
    fn variance_ratio_examples() {
        let scores = [0.0, 1.0];
        let truth = cat(&[0.5, 0.5]);
        assert!((variance_ratio(&truth, &truth, &scores).unwrap() - 1.0).abs() < 1e-15);
        let pred = cat(&[0.9, 0.1]);
        assert!((variance_ratio(&pred, &truth, &scores).unwrap() - 0.36).abs() < 1e-12);
        let three = cat(&[0.25, 0.5, 0.25]);
        let mid = Categorical::point_mass(3, 1);
        assert_eq!(variance_ratio(&mid, &three, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(variance_ratio(&truth, &Categorical::point_mass(2, 0), &scores).is_err());
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (tr, te) = split_questions(40, 0.2, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (32, 8));
        assert!(te.iter().all(|j| !tr.contains(j)));
        assert_eq!(split_questions(40, 0.2, 7).unwrap(), (tr, te));
    }
}
