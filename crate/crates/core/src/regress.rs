//! Regression families used for fit-and-transfer: ridge, lasso / elastic net,
//! simplex-constrained synthetic control, SVD-space ridge (synthetic
//! intervention) and a small ReLU network.
//!
//! Linear families fit on column-centered data and recover the intercept from
//! the means, except the simplex family which has no intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_symmetric_vec};
use crate::matcore::svd_topk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "lasso")]
    Lasso,
    #[serde(rename = "en")]
    ElasticNet,
    #[serde(rename = "sc")]
    SimplexSC,
    #[serde(rename = "si")]
    SyntheticIntervention,
    #[serde(rename = "nn")]
    NeuralNet,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Ridge,
        Family::Lasso,
        Family::ElasticNet,
        Family::SimplexSC,
        Family::SyntheticIntervention,
        Family::NeuralNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ridge => "ridge",
            Self::Lasso => "lasso",
            Self::ElasticNet => "en",
            Self::SimplexSC => "sc",
            Self::SyntheticIntervention => "si",
            Self::NeuralNet => "nn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressConfig {
    pub family: Family,
    /// Ridge / simplex / SI penalty.
    pub lambda: f64,
    pub alpha: f64,
    pub l1_ratio: f64,
    /// SI truncation rank.
    pub rank: usize,
    pub hidden_sizes: Vec<usize>,
    pub weight_decay: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            family: Family::Ridge,
            lambda: 1.0,
            alpha: 0.1,
            l1_ratio: 0.5,
            rank: 10,
            hidden_sizes: vec![16],
            weight_decay: 0.0,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 128,
            patience: 20,
            seed: 0,
        }
    }
}

impl RegressConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn ridge(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(Family::Ridge)
        }
    }

    pub fn lasso(alpha: f64) -> Self {
        Self {
            alpha,
            l1_ratio: 1.0,
            ..Self::new(Family::Lasso)
        }
    }

    pub fn elastic_net(alpha: f64, l1_ratio: f64) -> Self {
        Self {
            alpha,
            l1_ratio,
            ..Self::new(Family::ElasticNet)
        }
    }

    pub fn simplex(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::new(Family::SimplexSC)
        }
    }

    pub fn si(rank: usize, lambda: f64) -> Self {
        Self {
            rank,
            lambda,
            ..Self::new(Family::SyntheticIntervention)
        }
    }

    pub fn nn(hidden_sizes: Vec<usize>, weight_decay: f64) -> Self {
        Self {
            hidden_sizes,
            weight_decay,
            ..Self::new(Family::NeuralNet)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be a nonnegative number")))
            }
        };
        nonneg(self.lambda, "lambda")?;
        nonneg(self.alpha, "alpha")?;
        nonneg(self.weight_decay, "weight_decay")?;
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::param("l1_ratio must lie in [0, 1]"));
        }
        if self.family == Family::NeuralNet {
            if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
                return Err(Error::param("hidden sizes must be positive"));
            }
            if self.epochs == 0 || self.batch_size == 0 {
                return Err(Error::param("epochs and batch_size must be positive"));
            }
            if !(self.learning_rate > 0.0) {
                return Err(Error::param("learning_rate must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub family: Family,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::dim(format!(
                "model expects {} features, got {}",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        Ok(out)
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::dim("empty design matrix"));
    }
    Ok(())
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_means: DVector<f64>,
    y_mean: f64,
}

fn center(x: &DMatrix<f64>, y: &DVector<f64>) -> Centered {
    let (xc, x_means) = crate::matcore::demean_columns(x);
    let y_mean = y.mean();
    Centered {
        x: xc,
        y: y.add_scalar(-y_mean),
        x_means,
        y_mean,
    }
}

impl Centered {
    fn model(&self, beta: DVector<f64>, family: Family) -> LinearModel {
        let intercept = self.y_mean - self.x_means.dot(&beta);
        LinearModel {
            coefficients: beta,
            intercept,
            family,
        }
    }
}

fn ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = x.nrows() as f64;
    let mut gram = x.transpose() * x / n;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = x.transpose() * y / n;
    solve_symmetric_vec(&gram, &rhs)
}

/// Ridge regression, `beta = (Xc'Xc/n + lambda I)^-1 Xc'yc/n`.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda must be nonnegative"));
    }
    let c = center(x, y);
    let beta = ridge_solve(&c.x, &c.y, lambda)?;
    Ok(c.model(beta, Family::Ridge))
}

/// Ridge without centering or intercept.
pub fn fit_ridge_no_intercept(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    let beta = ridge_solve(x, y, lambda)?;
    Ok(LinearModel {
        coefficients: beta,
        intercept: 0.0,
        family: Family::Ridge,
    })
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `(1/2n)|y - Xb|^2 + alpha (l1 |b|_1 + (1 - l1)/2 |b|^2)` on the given data.
pub fn elastic_net_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    alpha: f64,
    l1_ratio: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let r = y - x * beta;
    r.norm_squared() / (2.0 * n)
        + alpha * (l1_ratio * beta.lp_norm(1) + 0.5 * (1.0 - l1_ratio) * beta.norm_squared())
}

const EN_TOL: f64 = 1e-7;
const EN_MAX_SWEEPS: usize = 100_000;

/// Elastic net by cyclic coordinate descent on centered data.
pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    l1_ratio: f64,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(alpha >= 0.0) || !(0.0..=1.0).contains(&l1_ratio) {
        return Err(Error::param("alpha >= 0 and l1_ratio in [0, 1] required"));
    }
    let c = center(x, y);
    let (n, m) = c.x.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..m).map(|j| c.x.column(j).norm_squared() / nf).collect();
    let l1 = alpha * l1_ratio;
    let l2 = alpha * (1.0 - l1_ratio);
    let mut beta = DVector::zeros(m);
    let mut resid = c.y.clone();
    let mut converged = false;
    for _ in 0..EN_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..m {
            if col_sq[j] == 0.0 {
                continue;
            }
            let xj = c.x.column(j);
            let old = beta[j];
            let rho = xj.dot(&resid) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, l1) / (col_sq[j] + l2);
            let delta: f64 = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &xj, 1.0);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < EN_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("elastic net did not converge in {EN_MAX_SWEEPS} sweeps");
    }
    let family = if l1_ratio == 1.0 {
        Family::Lasso
    } else {
        Family::ElasticNet
    };
    Ok(c.model(beta, family))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// `(1/2n)|y - Xb|^2 + (lambda/2)|b|^2`, the objective minimized by [`fit_simplex`].
pub fn simplex_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    (y - x * beta).norm_squared() / (2.0 * n) + 0.5 * lambda * beta.norm_squared()
}

const SIMPLEX_MAX_ITERS: usize = 5000;
const SIMPLEX_TOL: f64 = 1e-12;

/// Simplex-constrained least squares by projected gradient with step `1/L`.
pub fn fit_simplex(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda must be nonnegative"));
    }
    let (n, m) = x.shape();
    let nf = n as f64;
    let gram = x.transpose() * x / nf;
    let xty = x.transpose() * y / nf;
    let lip = linalg::top_eigenvalue(&gram) + lambda;
    let mut beta = DVector::from_element(m, 1.0 / m as f64);
    let mut best = beta.clone();
    let mut best_obj = simplex_objective(x, y, &beta, lambda);
    if lip > 0.0 {
        let step = 1.0 / lip;
        let mut converged = false;
        for _ in 0..SIMPLEX_MAX_ITERS {
            let grad = &gram * &beta - &xty + &beta * lambda;
            let next = project_simplex(&(&beta - grad * step));
            let change = (&next - &beta).amax();
            beta = next;
            let obj = simplex_objective(x, y, &beta, lambda);
            if obj < best_obj {
                best_obj = obj;
                best.copy_from(&beta);
            }
            if change < SIMPLEX_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("simplex regression stopped at {SIMPLEX_MAX_ITERS} iterations");
        }
    }
    Ok(LinearModel {
        coefficients: best,
        intercept: 0.0,
        family: Family::SimplexSC,
    })
}

/// Ridge in the leading `rank` right-singular coordinates of centered `X`.
pub fn fit_si(x: &DMatrix<f64>, y: &DVector<f64>, rank: usize, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda must be nonnegative"));
    }
    let c = center(x, y);
    let svd = svd_topk(&c.x, rank)?;
    let v = &svd.right;
    let z = &c.x * v;
    let gamma = ridge_solve(&z, &c.y, lambda)?;
    Ok(c.model(v * gamma, Family::SyntheticIntervention))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// out x in
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Feedforward network: ReLU hidden layers, linear scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub layers: Vec<Dense>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl NnModel {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(input: usize, hidden: &[usize], seed: u64) -> Self {
        use rand::Rng;
        let mut rng = linalg::seeded(seed);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[1], w[0], |_, _| rng.gen_range(-bound..bound));
                let bias = DVector::from_fn(w[1], |_, _| rng.gen_range(-bound..bound));
                Dense { weights, bias }
            })
            .collect();
        NnModel { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::dim("parameter vector length"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Activations per layer; the first entry is the input (rows = samples).
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].clone() * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if k < last {
                z.apply(|v| *v = relu(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "network expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let out = self.forward_all(x).pop().unwrap();
        Ok(out.column(0).into_owned())
    }

    /// Mean squared error plus `weight_decay/2 * |theta|^2`, and its gradient in
    /// [`NnModel::params`] order.
    pub fn loss_and_grad(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        weight_decay: f64,
    ) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let acts = self.forward_all(x);
        let out = acts.last().unwrap().column(0);
        let resid = out - y;
        let mut loss = resid.norm_squared() / n;
        // dL/dz for the output layer
        let mut delta = DMatrix::from_column_slice(x.nrows(), 1, (resid * (2.0 / n)).as_slice());
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let gw = delta.transpose() * &acts[k];
            let gb = DVector::from_fn(l.bias.len(), |i, _| delta.column(i).sum());
            if k > 0 {
                let mut back = &delta * &l.weights;
                back.zip_apply(&acts[k], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for ((gw, gb), l) in grads.iter().zip(&self.layers) {
            flat.extend(gw.iter().zip(l.weights.iter()).map(|(g, w)| g + weight_decay * w));
            flat.extend(gb.iter().zip(l.bias.iter()).map(|(g, b)| g + weight_decay * b));
        }
        if weight_decay > 0.0 {
            loss += 0.5 * weight_decay * self.params().iter().map(|p| p * p).sum::<f64>();
        }
        (loss, flat)
    }

    fn mse(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let out = self.forward_all(x).pop().unwrap();
        (out.column(0) - y).norm_squared() / x.nrows() as f64
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Minibatch Adam with coupled weight decay and early stopping on the last
/// 10% of rows. With fewer than 10 rows there is no validation split and the
/// network trains for the full epoch budget.
pub fn fit_nn(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &RegressConfig) -> Result<NnModel> {
    check_xy(x, y)?;
    cfg.validate()?;
    let n = x.nrows();
    let n_val = n / 10;
    let n_train = n - n_val;
    let (xt, yt) = (x.rows(0, n_train).into_owned(), y.rows(0, n_train).into_owned());
    let (xv, yv) = (x.rows(n_train, n_val).into_owned(), y.rows(n_train, n_val).into_owned());

    let mut model = NnModel::init(x.ncols(), &cfg.hidden_sizes, cfg.seed);
    let mut rng = linalg::seeded(cfg.seed.wrapping_add(1));
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let order = linalg::permutation(&mut rng, n_train);
        for batch in order.chunks(cfg.batch_size) {
            let xb = select_rows(&xt, batch);
            let yb = DVector::from_iterator(batch.len(), batch.iter().map(|&i| yt[i]));
            let (loss, grad) = model.loss_and_grad(&xb, &yb, cfg.weight_decay);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("NaN loss in epoch {epoch}")));
            }
            adam.step(&mut params, &grad, cfg.learning_rate);
            model.set_params(&params)?;
        }
        if n_val == 0 {
            continue;
        }
        let val = model.mse(&xv, &yv);
        if !val.is_finite() {
            return Err(Error::Numerical(format!("NaN validation loss in epoch {epoch}")));
        }
        if val < best_val {
            best_val = val;
            best_params.copy_from_slice(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }
    if n_val > 0 {
        model.set_params(&best_params)?;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Linear(LinearModel),
    Nn(NnModel),
}

impl Model {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            Model::Linear(m) => m.predict(x),
            Model::Nn(m) => m.predict(x),
        }
    }
}

/// Fits the family named in `cfg`. SI ranks above `min(n, m)` are clamped.
pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &RegressConfig) -> Result<Model> {
    cfg.validate()?;
    Ok(match cfg.family {
        Family::Ridge => Model::Linear(fit_ridge(x, y, cfg.lambda)?),
        Family::Lasso => Model::Linear(fit_elastic_net(x, y, cfg.alpha, 1.0)?),
        Family::ElasticNet => Model::Linear(fit_elastic_net(x, y, cfg.alpha, cfg.l1_ratio)?),
        Family::SimplexSC => Model::Linear(fit_simplex(x, y, cfg.lambda)?),
        Family::SyntheticIntervention => {
            let max = x.nrows().min(x.ncols());
            let rank = if cfg.rank > max {
                log::warn!("SI rank {} clamped to {max}", cfg.rank);
                max
            } else {
                cfg.rank
            };
            Model::Linear(fit_si(x, y, rank, cfg.lambda)?)
        }
        Family::NeuralNet => Model::Nn(fit_nn(x, y, cfg)?),
    })
}
