//! Seeded synthetic worlds with known ground truth.
//!
//! [`LatentWorld`] draws human and twin response matrices from paired
//! low-rank factor models with a chosen alignment. [`DiscreteWorld`] draws
//! categorical answers from a linear probability model where every user type
//! mixes a few archetype answer distributions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::distcal::{Categorical, TwinColumn, TwinPanel};
use crate::error::{Error, Result};
use crate::linalg::{self, gaussian_matrix, gaussian_vector, SeededRng};
use crate::matcore::{MaskedMatrix, Orientation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    /// Twin factors equal the human factors.
    #[serde(rename = "identical")]
    Identical,
    /// Twin factors are `[U, Ux] R` and `[V, Vx] R` for a random rotation `R`,
    /// so the twin spans both the human question and user spaces.
    #[serde(rename = "rotated_superset")]
    RotatedSuperset,
    /// Same users; twin questions `V A + gamma G` with `cond(A) <= 10`, plus an
    /// optional per-row bias on the twin.
    #[serde(rename = "linear_distortion")]
    LinearDistortion,
    /// Twin factors drawn independently.
    #[serde(rename = "independent")]
    Independent,
}

impl Alignment {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "identical" => Some(Self::Identical),
            "rotated_superset" | "superset" => Some(Self::RotatedSuperset),
            "linear_distortion" | "distortion" => Some(Self::LinearDistortion),
            "independent" => Some(Self::Independent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentParams {
    /// Users besides the target (new-user worlds add one row).
    pub n: usize,
    /// Questions besides the target (new-question worlds add one column).
    pub m: usize,
    pub d: usize,
    /// Twin latent dimension; defaults to `d + 2` for supersets, `d` otherwise.
    pub twin_d: Option<usize>,
    pub noise_sigma: f64,
    /// Defaults to `noise_sigma`.
    pub twin_noise_sigma: Option<f64>,
    pub alignment: Alignment,
    pub orientation: Orientation,
    /// `gamma` for linear distortion.
    pub distortion: f64,
    /// Std of the per-row twin bias (linear distortion only).
    pub row_bias: f64,
    pub missing_frac: f64,
    pub seed: u64,
}

impl Default for LatentParams {
    fn default() -> Self {
        Self {
            n: 100,
            m: 40,
            d: 5,
            twin_d: None,
            noise_sigma: 0.0,
            twin_noise_sigma: None,
            alignment: Alignment::Identical,
            orientation: Orientation::NewQuestion,
            distortion: 0.0,
            row_bias: 0.0,
            missing_frac: 0.0,
            seed: 0,
        }
    }
}

impl LatentParams {
    pub fn new(n: usize, m: usize, d: usize, alignment: Alignment) -> Self {
        Self {
            n,
            m,
            d,
            alignment,
            ..Self::default()
        }
    }

    fn twin_dim(&self) -> usize {
        self.twin_d.unwrap_or(match self.alignment {
            Alignment::RotatedSuperset => self.d + 2,
            _ => self.d,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::param("n, m and d must be positive"));
        }
        let td = self.twin_dim();
        if td == 0 || (self.alignment == Alignment::RotatedSuperset && td < self.d) {
            return Err(Error::param("superset twin dimension must be at least d"));
        }
        if self.alignment == Alignment::Identical && td != self.d {
            return Err(Error::param("identical worlds need twin_d = d"));
        }
        if !(0.0..0.5).contains(&self.missing_frac) {
            return Err(Error::param("missing_frac must lie in [0, 0.5)"));
        }
        let sig = self.twin_noise_sigma.unwrap_or(self.noise_sigma);
        if !(self.noise_sigma >= 0.0) || !(sig >= 0.0) || !(self.distortion >= 0.0) || !(self.row_bias >= 0.0) {
            return Err(Error::param("noise, distortion and bias scales must be nonnegative"));
        }
        Ok(())
    }
}

/// Ground truth of a latent world. Row `i` of `u` is user `i`; row `j` of `v` is
/// question `j`; the target is the last row (new user) or last question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWorld {
    pub params: LatentParams,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub u_twin: DMatrix<f64>,
    pub v_twin: DMatrix<f64>,
    pub distortion_matrix: Option<DMatrix<f64>>,
    pub twin_row_bias: Option<DVector<f64>>,
    pub target_index: usize,
}

fn relative_residual(target: &DMatrix<f64>, span: &DMatrix<f64>) -> f64 {
    let q = linalg::orthonormal_basis(span);
    let resid = target - &q * (q.transpose() * target);
    resid.norm() / target.norm().max(f64::MIN_POSITIVE)
}

impl LatentWorld {
    /// Relative residual of projecting the human question embeddings (target
    /// included) onto the span of the twin's; zero when the human question
    /// geometry lies inside the twin's.
    pub fn row_inclusion_residual(&self) -> f64 {
        relative_residual(&self.v, &self.v_twin)
    }

    /// Same for user embeddings.
    pub fn column_inclusion_residual(&self) -> f64 {
        relative_residual(&self.u, &self.u_twin)
    }

    /// Per-entry variance of the twin user factors.
    pub fn twin_factor_variance(&self) -> f64 {
        let d = match self.params.alignment {
            Alignment::Independent => self.params.twin_dim(),
            _ => self.params.d,
        };
        factor_std(d).powi(2)
    }

    pub fn twin_noise_sigma(&self) -> f64 {
        self.params.twin_noise_sigma.unwrap_or(self.params.noise_sigma)
    }

    pub fn noiseless_human(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct LatentSample {
    pub world: LatentWorld,
    /// Human responses with the target hidden.
    pub human: MaskedMatrix,
    /// Twin responses; the target is always fully observed.
    pub twin: MaskedMatrix,
    /// The hidden human target.
    pub target: DVector<f64>,
}

impl LatentSample {
    pub fn orientation(&self) -> Orientation {
        self.world.params.orientation
    }

    pub fn target_index(&self) -> usize {
        self.world.target_index
    }

    /// Human matrix with the target revealed, for leave-one-out evaluation.
    pub fn human_with_target(&self) -> MaskedMatrix {
        let mut h = self.human.clone();
        let t = self.world.target_index;
        for (i, &y) in self.target.iter().enumerate() {
            match self.orientation() {
                Orientation::NewQuestion => h.set(i, t, y),
                Orientation::NewUser => h.set(t, i, y),
            }
        }
        h
    }
}

/// Per-entry std `d^(-1/4)` so that `<u, v>` has unit variance.
fn factor_std(d: usize) -> f64 {
    (d as f64).powf(-0.25)
}

/// Random `d x d` matrix with singular values log-spaced in `[1, 10]` up to a
/// common scale chosen to keep the mean squared singular value at 1.
fn conditioned_matrix(rng: &mut SeededRng, d: usize) -> DMatrix<f64> {
    let q1 = linalg::random_orthogonal(rng, d);
    let q2 = linalg::random_orthogonal(rng, d);
    let mut s: Vec<f64> = (0..d)
        .map(|i| {
            if d == 1 {
                1.0
            } else {
                10f64.powf(i as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
    s.iter_mut().for_each(|v| *v /= rms);
    q1 * DMatrix::from_diagonal(&DVector::from_vec(s)) * q2.transpose()
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn random_mask(
    rng: &mut SeededRng,
    shape: (usize, usize),
    frac: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> DMatrix<bool> {
    DMatrix::from_fn(shape.0, shape.1, |i, j| keep(i, j) || rng.gen::<f64>() >= frac)
}

pub fn generate_latent_world(params: &LatentParams) -> Result<LatentSample> {
    params.validate()?;
    let p = params;
    let mut rng = linalg::seeded(p.seed);
    let (nu, nq) = match p.orientation {
        Orientation::NewQuestion => (p.n, p.m + 1),
        Orientation::NewUser => (p.n + 1, p.m),
    };
    let target_index = match p.orientation {
        Orientation::NewQuestion => nq - 1,
        Orientation::NewUser => nu - 1,
    };
    let s = factor_std(p.d);
    let u = gaussian_matrix(&mut rng, nu, p.d, s);
    let v = gaussian_matrix(&mut rng, nq, p.d, s);
    let td = p.twin_dim();
    let mut distortion_matrix = None;
    let mut twin_row_bias = None;
    let (u_twin, v_twin) = match p.alignment {
        Alignment::Identical => (u.clone(), v.clone()),
        Alignment::RotatedSuperset => {
            let extra = td - p.d;
            let ux = gaussian_matrix(&mut rng, nu, extra, s);
            let vx = gaussian_matrix(&mut rng, nq, extra, s);
            let r = linalg::random_orthogonal(&mut rng, td);
            (hcat(&u, &ux) * &r, hcat(&v, &vx) * &r)
        }
        Alignment::LinearDistortion => {
            let a = conditioned_matrix(&mut rng, p.d);
            let g = gaussian_matrix(&mut rng, nq, p.d, s);
            let vt = &v * &a + g * p.distortion;
            distortion_matrix = Some(a);
            if p.row_bias > 0.0 {
                twin_row_bias = Some(gaussian_vector(&mut rng, nu, p.row_bias));
            }
            (u.clone(), vt)
        }
        Alignment::Independent => {
            let st = factor_std(td);
            (gaussian_matrix(&mut rng, nu, td, st), gaussian_matrix(&mut rng, nq, td, st))
        }
    };

    let twin_sigma = p.twin_noise_sigma.unwrap_or(p.noise_sigma);
    let human_full = &u * v.transpose() + gaussian_matrix(&mut rng, nu, nq, p.noise_sigma);
    let mut twin_full = &u_twin * v_twin.transpose() + gaussian_matrix(&mut rng, nu, nq, twin_sigma);
    if let Some(b) = &twin_row_bias {
        for (i, mut row) in twin_full.row_iter_mut().enumerate() {
            row.add_scalar_mut(b[i]);
        }
    }

    let is_target = |i: usize, j: usize| match p.orientation {
        Orientation::NewQuestion => j == target_index,
        Orientation::NewUser => i == target_index,
    };
    let target = match p.orientation {
        Orientation::NewQuestion => human_full.column(target_index).into_owned(),
        Orientation::NewUser => human_full.row(target_index).transpose(),
    };

    let mut attempt = 0;
    let (human, twin) = loop {
        attempt += 1;
        let hmask = random_mask(&mut rng, (nu, nq), p.missing_frac, |_, _| false)
            .zip_map(&DMatrix::from_fn(nu, nq, |i, j| !is_target(i, j)), |a, b| a && b);
        let tmask = random_mask(&mut rng, (nu, nq), p.missing_frac, |i, j| is_target(i, j));
        let mut human = MaskedMatrix::new(human_full.clone(), hmask)?;
        let twin = MaskedMatrix::new(twin_full.clone(), tmask)?;
        // coverage is checked with the target line temporarily revealed
        let mut probe = human.clone();
        for i in 0..nu {
            for j in 0..nq {
                if is_target(i, j) {
                    probe.set(i, j, 0.0);
                }
            }
        }
        if probe.check_coverage().is_ok() && twin.check_coverage().is_ok() {
            for i in 0..nu {
                for j in 0..nq {
                    if is_target(i, j) {
                        human.hide(i, j);
                    }
                }
            }
            break (human, twin);
        }
        if attempt >= 10 {
            return Err(Error::param("missingness leaves a row or column empty; lower missing_frac"));
        }
    };

    Ok(LatentSample {
        world: LatentWorld {
            params: params.clone(),
            u,
            v,
            u_twin,
            v_twin,
            distortion_matrix,
            twin_row_bias,
            target_index,
        },
        human,
        twin,
        target,
    })
}

/// A suite where half the questions follow a shared low-rank structure the
/// twin distorts (calibration helps) and half are driven by a private factor
/// the twin reproduces exactly (calibration cannot help, the raw twin can).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingSuiteParams {
    pub n: usize,
    pub d: usize,
    pub m_in_span: usize,
    pub m_off_span: usize,
    pub seed: u64,
}

impl Default for GatingSuiteParams {
    fn default() -> Self {
        Self {
            n: 200,
            d: 3,
            m_in_span: 20,
            m_off_span: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatingSuite {
    /// Fully observed human matrix.
    pub human: MaskedMatrix,
    pub twin: MaskedMatrix,
    /// Whether each question lies in the shared span.
    pub in_span: Vec<bool>,
}

pub fn generate_gating_suite(params: &GatingSuiteParams) -> Result<GatingSuite> {
    let p = params;
    if p.n == 0 || p.d == 0 || p.m_in_span <= p.d || p.m_off_span == 0 {
        return Err(Error::param("gating suite needs n, d > 0, m_in_span > d and m_off_span > 0"));
    }
    let mut rng = linalg::seeded(p.seed);
    let s = factor_std(p.d);
    let u = gaussian_matrix(&mut rng, p.n, p.d, s);
    let v = gaussian_matrix(&mut rng, p.m_in_span, p.d, s);
    let a = conditioned_matrix(&mut rng, p.d);
    let private = gaussian_matrix(&mut rng, p.n, p.m_off_span, 1.0);
    let human = hcat(&(&u * v.transpose()), &private);
    let twin = hcat(&(&u * (&v * &a).transpose()), &private);
    let mut in_span = vec![true; p.m_in_span];
    in_span.extend(std::iter::repeat(false).take(p.m_off_span));
    Ok(GatingSuite {
        human: MaskedMatrix::full(human)?,
        twin: MaskedMatrix::full(twin)?,
        in_span,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscreteParams {
    /// Number of twins sampled.
    pub n: usize,
    pub k: usize,
    /// Number of archetype answer distributions (embedding dimension).
    pub d: usize,
    /// Size of the twin type support.
    pub support: usize,
    pub m_train: usize,
    /// Held-out questions, each a convex combination of the training ones.
    pub m_test: usize,
    /// Dirichlet concentration of user types over archetypes; type `s` gets an
    /// extra unit of concentration on archetype `s mod d`.
    pub type_concentration: f64,
    /// Dirichlet concentration of archetype answer distributions.
    pub answer_concentration: f64,
    /// Dirichlet concentration of the mixing vectors `c`.
    pub mixture_concentration: f64,
    /// Log-scale spread of the human reweighting of the twin type distribution.
    pub reweight_strength: f64,
    /// Humans are an exact reweighting of twin types; otherwise a share
    /// `misalignment` comes from types the twins never produce.
    pub exact_reweighting: bool,
    pub misalignment: f64,
    pub seed: u64,
}

impl Default for DiscreteParams {
    fn default() -> Self {
        Self {
            n: 500,
            k: 5,
            d: 4,
            support: 8,
            m_train: 32,
            m_test: 8,
            type_concentration: 0.3,
            answer_concentration: 0.5,
            mixture_concentration: 1.0,
            reweight_strength: 1.0,
            exact_reweighting: true,
            misalignment: 0.3,
            seed: 0,
        }
    }
}

impl DiscreteParams {
    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::param("K must be at least 2"));
        }
        if self.n == 0 || self.d == 0 || self.support == 0 || self.m_train == 0 || self.m_test == 0 {
            return Err(Error::param("n, d, support, m_train and m_test must be positive"));
        }
        for (v, name) in [
            (self.type_concentration, "type_concentration"),
            (self.answer_concentration, "answer_concentration"),
            (self.mixture_concentration, "mixture_concentration"),
        ] {
            if !(v > 0.0) {
                return Err(Error::param(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.misalignment) || !(self.reweight_strength >= 0.0) {
            return Err(Error::param("misalignment in [0, 1) and reweight_strength >= 0 required"));
        }
        Ok(())
    }

    pub fn m_total(&self) -> usize {
        self.m_train + self.m_test
    }
}

/// A linear probability world: question `j` has a `K x d` matrix whose column
/// `a` is archetype `a`'s answer distribution, and a user type `theta` in the
/// `d`-simplex answers with `question * theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorld {
    pub params: DiscreteParams,
    /// One `K x d` matrix per question; training questions first.
    pub questions: Vec<DMatrix<f64>>,
    /// Twin types, one per row (`support x d`).
    pub types: DMatrix<f64>,
    /// Twin type distribution over `types`.
    pub twin_mu: Vec<f64>,
    /// Human reweighting of the twin types.
    pub human_nu: Vec<f64>,
    /// Human types outside the twin support and their total share.
    pub off_support_types: Option<DMatrix<f64>>,
    /// `m_test x m_train`; row `t` mixes the training questions into test question `t`.
    pub mixing: DMatrix<f64>,
    /// `max_u nu(u) / mu(u)`.
    pub reweight_bound: f64,
}

impl DiscreteWorld {
    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.params.m_train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (self.params.m_train..self.params.m_total()).collect()
    }

    /// Answer distribution of a type (a point in the `d`-simplex) on question `j`.
    pub fn conditional(&self, j: usize, theta: &[f64]) -> Vec<f64> {
        let q = &self.questions[j];
        (0..q.nrows())
            .map(|k| (0..q.ncols()).map(|a| q[(k, a)] * theta[a]).sum())
            .collect()
    }

    fn type_row(&self, s: usize) -> Vec<f64> {
        self.types.row(s).iter().copied().collect()
    }

    /// Population mixture of the twin types under `weights`.
    pub fn support_mixture(&self, j: usize, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        for (s, &w) in weights.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(self.conditional(j, &self.type_row(s))) {
                *o += w * p;
            }
        }
        out
    }

    /// Exact human answer distribution for question `j`.
    pub fn human_marginal(&self, j: usize) -> Result<Categorical> {
        let on = self.support_mixture(j, &self.human_nu);
        let probs = match &self.off_support_types {
            None => on,
            Some(extra) => {
                let share = self.params.misalignment;
                let mut off = vec![0.0; self.k()];
                let r = extra.nrows() as f64;
                for row in extra.row_iter() {
                    let theta: Vec<f64> = row.iter().copied().collect();
                    for (o, p) in off.iter_mut().zip(self.conditional(j, &theta)) {
                        *o += p / r;
                    }
                }
                on.iter().zip(off).map(|(a, b)| (1.0 - share) * a + share * b).collect()
            }
        };
        Categorical::new(probs)
    }

    /// `m_train * max_j c_j` for test question `t` (0-based among test questions).
    pub fn mixing_factor(&self, t: usize) -> f64 {
        let row = self.mixing.row(t);
        self.params.m_train as f64 * row.max()
    }

    /// Average training TV between humans and the reweighted twin population.
    /// It upper-bounds the infimum over admissible reweightings and is zero for
    /// exact-reweighting worlds.
    pub fn reweighting_gap(&self) -> Result<f64> {
        if self.params.exact_reweighting {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for j in self.train_indices() {
            let p = self.human_marginal(j)?;
            let q = Categorical::new(self.support_mixture(j, &self.human_nu))?;
            total += crate::distcal::discrepancy(crate::distcal::Discrepancy::TV, &p, &q)?;
        }
        Ok(total / self.params.m_train as f64)
    }

    /// Right-hand side of the distributional error bound for test question `t`
    /// at confidence `1 - alpha`.
    pub fn error_bound(&self, t: usize, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::param("alpha must lie in (0, 1)"));
        }
        let p = &self.params;
        let stat = 3f64.sqrt()
            * self.reweight_bound
            * ((p.k as f64 + (4.0 / alpha).ln()) / p.n as f64).sqrt();
        Ok(self.mixing_factor(t) * (self.reweighting_gap()? + stat))
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSample {
    pub world: DiscreteWorld,
    /// Human distributions for every question (training first).
    pub human: Vec<Categorical>,
    /// Type index of each twin.
    pub twin_types: Vec<usize>,
    /// `codes[j][i]`: 1-based answer of twin `i` to question `j`.
    pub codes: Vec<Vec<usize>>,
}

impl DiscreteSample {
    pub fn p_train(&self) -> &[Categorical] {
        &self.human[..self.world.params.m_train]
    }

    pub fn p_test(&self) -> &[Categorical] {
        &self.human[self.world.params.m_train..]
    }

    /// Panel of sampled answers for every question.
    pub fn sampled_panel(&self) -> Result<TwinPanel> {
        TwinPanel::from_codes(&self.codes, self.world.k())
    }

    /// Panel of each twin's exact answer distributions for every question.
    pub fn conditional_panel(&self) -> Result<TwinPanel> {
        let w = &self.world;
        let cols = (0..w.params.m_total())
            .map(|j| {
                let mut m = DMatrix::zeros(w.k(), self.twin_types.len());
                for (i, &s) in self.twin_types.iter().enumerate() {
                    let p = w.conditional(j, &w.type_row(s));
                    m.column_mut(i).copy_from_slice(&p);
                }
                TwinColumn::Probs(m)
            })
            .collect();
        TwinPanel::new(w.k(), cols)
    }
}

fn dirichlet_with(rng: &mut SeededRng, alpha: &[f64]) -> Vec<f64> {
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("positive concentration")).collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|v| v / total).collect();
        }
    }
}

fn dirichlet(rng: &mut SeededRng, dim: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|v| v / total).collect();
        }
    }
}

fn sample_index(rng: &mut SeededRng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn generate_discrete_world(params: &DiscreteParams) -> Result<DiscreteSample> {
    params.validate()?;
    let p = params;
    let mut rng = linalg::seeded(p.seed);
    let mut questions: Vec<DMatrix<f64>> = (0..p.m_train)
        .map(|_| {
            let mut q = DMatrix::zeros(p.k, p.d);
            for a in 0..p.d {
                q.column_mut(a).copy_from_slice(&dirichlet(&mut rng, p.k, p.answer_concentration));
            }
            q
        })
        .collect();
    let mut mixing = DMatrix::zeros(p.m_test, p.m_train);
    for t in 0..p.m_test {
        let c = dirichlet(&mut rng, p.m_train, p.mixture_concentration);
        let mut q = DMatrix::zeros(p.k, p.d);
        for (j, cj) in c.iter().enumerate() {
            q += &questions[j] * *cj;
            mixing[(t, j)] = *cj;
        }
        questions.push(q);
    }

    let mut types = DMatrix::zeros(p.support, p.d);
    for s in 0..p.support {
        let mut alpha = vec![p.type_concentration; p.d];
        alpha[s % p.d] += 1.0;
        types.row_mut(s).copy_from_slice(&dirichlet_with(&mut rng, &alpha));
    }
    let twin_mu = dirichlet(&mut rng, p.support, 2.0);
    // log-weights standardized so their spread is exactly reweight_strength
    let mut z: Vec<f64> = (0..p.support).map(|_| rand_distr::StandardNormal.sample(&mut rng)).collect();
    let zm = z.iter().sum::<f64>() / z.len() as f64;
    let zs = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    for v in z.iter_mut() {
        *v = if zs > 0.0 { (*v - zm) / zs } else { 0.0 };
    }
    let raw: Vec<f64> = twin_mu.iter().zip(&z).map(|(m, z)| m * (p.reweight_strength * z).exp()).collect();
    let total: f64 = raw.iter().sum();
    let human_nu: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let reweight_bound = human_nu
        .iter()
        .zip(&twin_mu)
        .map(|(n, m)| n / m)
        .fold(0.0, f64::max);
    let off_support_types = (!p.exact_reweighting).then(|| {
        let mut extra = DMatrix::zeros(p.support, p.d);
        for s in 0..p.support {
            extra.row_mut(s).copy_from_slice(&dirichlet(&mut rng, p.d, p.type_concentration));
        }
        extra
    });

    let world = DiscreteWorld {
        params: params.clone(),
        questions,
        types,
        twin_mu,
        human_nu,
        off_support_types,
        mixing,
        reweight_bound,
    };

    let twin_types: Vec<usize> = (0..p.n).map(|_| sample_index(&mut rng, &world.twin_mu)).collect();
    let mut codes = vec![vec![0usize; p.n]; p.m_total()];
    for (j, col) in codes.iter_mut().enumerate() {
        for (i, &s) in twin_types.iter().enumerate() {
            let probs = world.conditional(j, &world.type_row(s));
            col[i] = sample_index(&mut rng, &probs) + 1;
        }
    }
    let human = (0..p.m_total())
        .map(|j| world.human_marginal(j))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteSample {
        world,
        human,
        twin_types,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distcal::{discrepancy, Discrepancy};
    use crate::matcore::svd_topk;

    #[test]
    fn identical_noiseless_matches() {
        let s = generate_latent_world(&LatentParams::new(30, 12, 3, Alignment::Identical)).unwrap();
        for i in 0..30 {
            for j in 0..12 {
                assert_eq!(s.human.get(i, j), s.twin.get(i, j));
            }
        }
        assert!(!s.human.is_observed(0, 12));
        assert!(s.twin.is_observed(0, 12));
        assert_eq!(s.human_with_target().get(5, 12), Some(s.target[5]));
    }

    #[test]
    fn noiseless_rank_is_d() {
        let s = generate_latent_world(&LatentParams::new(40, 25, 4, Alignment::Identical)).unwrap();
        let sv = svd_topk(&s.world.noiseless_human(), 10).unwrap().singular_values;
        assert!(sv[3] > 1e-3);
        assert!(sv.iter().skip(4).all(|&v| v < 1e-8));
    }

    #[test]
    fn superset_satisfies_both_inclusions() {
        let s = generate_latent_world(&LatentParams::new(50, 20, 3, Alignment::RotatedSuperset)).unwrap();
        assert!(s.world.row_inclusion_residual() < 1e-10);
        assert!(s.world.column_inclusion_residual() < 1e-10);
        assert_eq!(s.world.v_twin.ncols(), 5);
        let ind = generate_latent_world(&LatentParams::new(50, 20, 3, Alignment::Independent)).unwrap();
        assert!(ind.world.row_inclusion_residual() > 0.1);
    }

    #[test]
    fn distortion_preserves_row_space_without_noise() {
        let mut p = LatentParams::new(40, 20, 4, Alignment::LinearDistortion);
        p.row_bias = 0.5;
        let s = generate_latent_world(&p).unwrap();
        assert!(s.world.row_inclusion_residual() < 1e-10);
        let a = s.world.distortion_matrix.as_ref().unwrap();
        let sv = a.clone().singular_values();
        let cond = sv.max() / sv.min();
        assert!(cond <= 10.0 + 1e-9 && cond > 9.0);
        p.distortion = 0.5;
        assert!(generate_latent_world(&p).unwrap().world.row_inclusion_residual() > 1e-3);
    }

    #[test]
    fn new_user_world_hides_last_row() {
        let mut p = LatentParams::new(20, 10, 2, Alignment::RotatedSuperset);
        p.orientation = Orientation::NewUser;
        let s = generate_latent_world(&p).unwrap();
        assert_eq!(s.human.shape(), (21, 10));
        assert_eq!(s.target_index(), 20);
        assert!((0..10).all(|j| !s.human.is_observed(20, j) && s.twin.is_observed(20, j)));
        assert_eq!(s.target.len(), 10);
    }

    #[test]
    fn missingness_spares_twin_target() {
        let mut p = LatentParams::new(30, 15, 3, Alignment::Identical);
        p.missing_frac = 0.3;
        p.noise_sigma = 0.1;
        let s = generate_latent_world(&p).unwrap();
        assert!(s.human.observed_count() < 30 * 15);
        assert!((0..30).all(|i| s.twin.is_observed(i, 15)));
        s.twin.check_coverage().unwrap();
    }

    #[test]
    fn latent_generation_is_deterministic() {
        let mut p = LatentParams::new(20, 10, 3, Alignment::LinearDistortion);
        p.noise_sigma = 0.2;
        p.missing_frac = 0.2;
        p.seed = 9;
        let a = generate_latent_world(&p).unwrap();
        let b = generate_latent_world(&p).unwrap();
        assert_eq!(a.world, b.world);
        // hidden cells hold NaN, so compare masks and observed entries
        for (x, y) in [(&a.human, &b.human), (&a.twin, &b.twin)] {
            assert_eq!(x.mask(), y.mask());
            assert_eq!(x.overlay(&DMatrix::zeros(20, 11)), y.overlay(&DMatrix::zeros(20, 11)));
        }
        assert!(generate_latent_world(&LatentParams { missing_frac: 0.5, ..p }).is_err());
    }

    #[test]
    fn discrete_world_is_valid() {
        let s = generate_discrete_world(&DiscreteParams::default()).unwrap();
        let w = &s.world;
        for j in 0..w.params.m_total() {
            for s_ in 0..w.params.support {
                let p = w.conditional(j, &w.type_row(s_));
                assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
        for t in 0..w.params.m_test {
            assert!((w.mixing.row(t).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.human.len(), 40);
        assert!(w.reweight_bound >= 1.0);
        assert_eq!(w.reweighting_gap().unwrap(), 0.0);
        // test questions are mixtures of training questions for every type
        let theta = w.type_row(0);
        let direct = w.conditional(32, &theta);
        let mixed = (0..32).fold(vec![0.0; 5], |acc, j| {
            let pj = w.conditional(j, &theta);
            acc.iter().zip(pj).map(|(a, b)| a + w.mixing[(0, j)] * b).collect()
        });
        assert!(direct.iter().zip(mixed).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn uniform_mixing_factor_is_one() {
        let mut w = generate_discrete_world(&DiscreteParams::default()).unwrap().world;
        w.mixing.fill(1.0 / 32.0);
        assert!((w.mixing_factor(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_frequencies_concentrate() {
        let p = DiscreteParams {
            n: 5000,
            m_train: 6,
            m_test: 2,
            seed: 3,
            ..Default::default()
        };
        let s = generate_discrete_world(&p).unwrap();
        let w = &s.world;
        let mut worst = 0.0f64;
        for j in 0..p.m_total() {
            let emp = Categorical::from_labels(&s.codes[j], p.k).unwrap();
            let analytic = Categorical::new(w.support_mixture(j, &w.twin_mu)).unwrap();
            worst = worst.max(discrepancy(Discrepancy::TV, &emp, &analytic).unwrap());
        }
        assert!(worst < 3.0 * (p.k as f64 / p.n as f64).sqrt(), "{worst}");
    }

    #[test]
    fn misaligned_world_has_positive_gap() {
        let p = DiscreteParams {
            exact_reweighting: false,
            ..Default::default()
        };
        let w = generate_discrete_world(&p).unwrap().world;
        assert!(w.reweighting_gap().unwrap() > 0.0);
        assert!(w.error_bound(0, 0.05).unwrap() > 0.0);
    }

    #[test]
    fn discrete_generation_is_deterministic() {
        let p = DiscreteParams {
            n: 50,
            seed: 5,
            ..Default::default()
        };
        let a = generate_discrete_world(&p).unwrap();
        let b = generate_discrete_world(&p).unwrap();
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.world, b.world);
        assert!(generate_discrete_world(&DiscreteParams { k: 1, ..p }).is_err());
    }
}
