//! Masked response matrices and the small set of numerical primitives every
//! other module leans on: column standardization, Pearson correlation and its
//! averaging, and a sorted truncated SVD.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix with an explicit observation mask.
///
/// Unobserved cells hold `NaN` so that an accidental read poisons the result
/// instead of silently contributing a stale value.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl MaskedMatrix {
    pub fn new(mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::dim(format!(
                "values {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::dim("matrix must be non-empty"));
        }
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::Numerical("observed entry is not finite".into()));
            }
        }
        Ok(Self { values, mask })
    }

    /// Fully observed matrix.
    pub fn full(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    /// Builds from a dense matrix, treating every `NaN` as missing.
    pub fn from_nan(values: DMatrix<f64>) -> Result<Self> {
        let mask = values.map(|v| !v.is_nan());
        Self::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    /// Raw storage; unobserved cells are `NaN`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.values[(i, j)])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[(i, j)] = v;
        self.mask[(i, j)] = true;
    }

    pub fn hide(&mut self, i: usize, j: usize) {
        self.values[(i, j)] = f64::NAN;
        self.mask[(i, j)] = false;
    }

    pub fn hide_column(&mut self, j: usize) {
        for i in 0..self.nrows() {
            self.hide(i, j);
        }
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Observed `(row, value)` pairs of column `j`.
    pub fn column_observed(&self, j: usize) -> Vec<(usize, f64)> {
        (0..self.nrows())
            .filter(|&i| self.mask[(i, j)])
            .map(|i| (i, self.values[(i, j)]))
            .collect()
    }

    /// Dense copy; fails if anything is missing.
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if !self.is_fully_observed() {
            return Err(Error::param("matrix has missing entries; impute first"));
        }
        Ok(self.values.clone())
    }

    /// Observed entries from `self`, everything else from `fill`.
    pub fn overlay(&self, fill: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            if self.mask[(i, j)] {
                self.values[(i, j)]
            } else {
                fill[(i, j)]
            }
        })
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.transpose(),
            mask: self.mask.transpose(),
        }
    }

    pub fn remove_column(&self, j: usize) -> Self {
        Self {
            values: self.values.clone().remove_column(j),
            mask: self.mask.clone().remove_column(j),
        }
    }

    /// Errors with the first row or column that has no observed entry.
    pub fn check_coverage(&self) -> Result<()> {
        for j in 0..self.ncols() {
            if !self.mask.column(j).iter().any(|&m| m) {
                return Err(Error::EmptyColumn(j));
            }
        }
        for i in 0..self.nrows() {
            if !self.mask.row(i).iter().any(|&m| m) {
                return Err(Error::EmptyRow(i));
            }
        }
        Ok(())
    }

    /// Per-column means over observed entries (0 for an empty column).
    pub fn observed_column_means(&self) -> DVector<f64> {
        DVector::from_fn(self.ncols(), |j, _| {
            let obs = self.column_observed(j);
            if obs.is_empty() {
                0.0
            } else {
                obs.iter().map(|(_, v)| v).sum::<f64>() / obs.len() as f64
            }
        })
    }

    /// Dense matrix with missing cells set to their column's observed mean.
    pub fn mean_filled(&self) -> DMatrix<f64> {
        let means = self.observed_column_means();
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            if self.mask[(i, j)] {
                self.values[(i, j)]
            } else {
                means[j]
            }
        })
    }
}

/// Per-column location and scale over observed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant column.
    pub stds: Vec<f64>,
}

impl ColumnStats {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn standardize_value(&self, j: usize, v: f64) -> f64 {
        if self.stds[j] == 0.0 {
            0.0
        } else {
            (v - self.means[j]) / self.stds[j]
        }
    }

    pub fn destandardize_value(&self, j: usize, z: f64) -> f64 {
        self.means[j] + self.stds[j] * z
    }

    /// Applies these statistics to another matrix with the same column layout.
    pub fn apply(&self, m: &MaskedMatrix) -> Result<MaskedMatrix> {
        if m.ncols() != self.len() {
            return Err(Error::dim(format!(
                "stats for {} columns applied to {} columns",
                self.len(),
                m.ncols()
            )));
        }
        let mut out = m.clone();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m.mask[(i, j)] {
                    out.values[(i, j)] = self.standardize_value(j, m.values[(i, j)]);
                }
            }
        }
        Ok(out)
    }

    pub fn invert(&self, m: &MaskedMatrix) -> Result<MaskedMatrix> {
        if m.ncols() != self.len() {
            return Err(Error::dim("column count differs from stats"));
        }
        let mut out = m.clone();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m.mask[(i, j)] {
                    out.values[(i, j)] = self.destandardize_value(j, m.values[(i, j)]);
                }
            }
        }
        Ok(out)
    }

    pub fn remove(&self, j: usize) -> Self {
        let mut s = self.clone();
        s.means.remove(j);
        s.stds.remove(j);
        s
    }
}

fn is_negligible_spread(sum_sq: f64, n: usize, scale: f64) -> bool {
    // Rounding residue of a constant vector stays far below this.
    let eps = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    sum_sq <= (n as f64) * 64.0 * eps * eps
}

/// Centers and scales every column to mean 0 / population std 1 over its
/// observed entries. Constant columns become 0 with a recorded std of 0.
pub fn standardize_columns(m: &MaskedMatrix) -> Result<(MaskedMatrix, ColumnStats)> {
    let mut means = Vec::with_capacity(m.ncols());
    let mut stds = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let obs = m.column_observed(j);
        if obs.is_empty() {
            return Err(Error::EmptyColumn(j));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().map(|(_, v)| v).sum::<f64>() / n;
        let ss: f64 = obs.iter().map(|(_, v)| (v - mean).powi(2)).sum();
        let scale = obs.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        let std = if is_negligible_spread(ss, obs.len(), scale) {
            0.0
        } else {
            (ss / n).sqrt()
        };
        means.push(mean);
        stds.push(std);
    }
    let stats = ColumnStats { means, stds };
    let out = stats.apply(m)?;
    Ok((out, stats))
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scale_b = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if is_negligible_spread(saa, a.len(), scale_a) || is_negligible_spread(sbb, b.len(), scale_b) {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and standard error of a list of correlations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub mean: f64,
    pub se: f64,
    /// How many inputs were clamped away from ±1 before the z-transform.
    pub clamped: usize,
}

const FISHER_CLAMP: f64 = 1.0 - 1e-12;

/// Averages correlations, optionally in Fisher z-space. The standard error is
/// the sample std divided by `sqrt(count)` in whichever space was averaged
/// (reported as 0 for a single value).
pub fn mean_correlation(corrs: &[f64], fisher_z: bool) -> Result<CorrelationSummary> {
    if corrs.is_empty() {
        return Err(Error::param("no correlations to average"));
    }
    let mut clamped = 0;
    let xs: Vec<f64> = if fisher_z {
        corrs
            .iter()
            .map(|&r| {
                let c = if r.abs() > FISHER_CLAMP {
                    clamped += 1;
                    r.signum() * FISHER_CLAMP
                } else {
                    r
                };
                c.atanh()
            })
            .collect()
    } else {
        corrs.to_vec()
    };
    if clamped > 0 {
        log::warn!("{clamped} correlation(s) at ±1 clamped before Fisher z-transform");
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() < 2 {
        0.0
    } else {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(CorrelationSummary {
        mean: if fisher_z { mean.tanh() } else { mean },
        se,
        clamped,
    })
}

/// Leading singular triplets, sorted by decreasing singular value.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub right: DMatrix<f64>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `left * diag(s) * right^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// Same factorization with each singular value mapped through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            left: self.left.clone(),
            singular_values: self.singular_values.map(f),
            right: self.right.clone(),
        }
    }
}

/// Best rank-`k` factorization of a dense matrix.
pub fn svd_topk(m: &DMatrix<f64>, k: usize) -> Result<SvdResult> {
    let max = m.nrows().min(m.ncols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input contains non-finite values".into()));
    }
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(k);
    let left = DMatrix::from_fn(m.nrows(), k, |i, c| u[(i, order[c])]);
    let right = DMatrix::from_fn(m.ncols(), k, |j, c| v[(j, order[c])]);
    let singular_values = DVector::from_fn(k, |c, _| s[order[c]].max(0.0));
    Ok(SvdResult {
        left,
        singular_values,
        right,
    })
}

/// Subtracts each column's mean; returns the centered matrix and the means.
pub fn demean_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows() as f64;
    let means = DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n);
    let mut out = m.clone();
    for j in 0..m.ncols() {
        out.column_mut(j).add_scalar_mut(-means[j]);
    }
    (out, means)
}

/// Which axis holds the held-out target: a question (column) or a user (row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Orientation {
    #[default]
    #[serde(rename = "new_question")]
    NewQuestion,
    #[serde(rename = "new_user")]
    NewUser,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Self::NewQuestion => "new_question",
            Self::NewUser => "new_user",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "new_question" | "question" | "column" => Some(Self::NewQuestion),
            "new_user" | "user" | "row" => Some(Self::NewUser),
            _ => None,
        }
    }
}

/// Columns `cols` of `m`, in order.
pub(crate) fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, c| m[(i, cols[c])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn col(v: &[Option<f64>]) -> MaskedMatrix {
        let values = DMatrix::from_fn(v.len(), 1, |i, _| v[i].unwrap_or(0.0));
        let mask = DMatrix::from_fn(v.len(), 1, |i, _| v[i].is_some());
        MaskedMatrix::new(values, mask).unwrap()
    }

    #[test]
    fn standardize_two_point_column() {
        let (z, st) = standardize_columns(&col(&[Some(2.0), Some(4.0)])).unwrap();
        assert_eq!(z.get(0, 0), Some(-1.0));
        assert_eq!(z.get(1, 0), Some(1.0));
        assert_eq!(st.means[0], 3.0);
        assert_eq!(st.stds[0], 1.0);
    }

    #[test]
    fn standardize_constant_column() {
        let (z, st) = standardize_columns(&col(&[Some(5.0); 3])).unwrap();
        assert_eq!(st.stds[0], 0.0);
        for i in 0..3 {
            assert_eq!(z.get(i, 0), Some(0.0));
        }
        let back = st.invert(&z).unwrap();
        assert_eq!(back.get(2, 0), Some(5.0));
    }

    #[test]
    fn standardize_skips_missing() {
        let (z, st) = standardize_columns(&col(&[Some(1.0), None, Some(3.0)])).unwrap();
        assert_eq!(st.means[0], 2.0);
        assert_eq!(st.stds[0], 1.0);
        assert_eq!(z.get(0, 0), Some(-1.0));
        assert_eq!(z.get(1, 0), None);
        assert_eq!(z.get(2, 0), Some(1.0));
    }

    #[test]
    fn standardize_rejects_empty_column() {
        let m = MaskedMatrix::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[true, false, true, false]),
        )
        .unwrap();
        assert!(matches!(standardize_columns(&m), Err(Error::EmptyColumn(1))));
    }

    #[test]
    fn pearson_examples() {
        assert_abs_diff_eq!(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0, epsilon = 1e-15);
        // sxy = 4, sxx = syy = 5 by hand
        assert_abs_diff_eq!(
            pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pearson_constant_is_undefined() {
        assert!(matches!(
            pearson(&[0.1, 0.1, 0.1], &[1., 2., 3.]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn mean_correlation_examples() {
        let s = mean_correlation(&[0.5, 0.5, 0.5], false).unwrap();
        assert_eq!((s.mean, s.se), (0.5, 0.0));
        let s = mean_correlation(&[0.0], false).unwrap();
        assert_eq!((s.mean, s.se), (0.0, 0.0));
        let s = mean_correlation(&[0.2, 0.6], true).unwrap();
        let expect = ((0.2f64.atanh() + 0.6f64.atanh()) / 2.0).tanh();
        assert_abs_diff_eq!(s.mean, expect, epsilon = 1e-15);
    }

    #[test]
    fn fisher_clamps_unit_correlations() {
        let s = mean_correlation(&[1.0, 0.5], true).unwrap();
        assert_eq!(s.clamped, 1);
        assert!(s.mean.is_finite());
    }

    #[test]
    fn svd_rank_one_is_exact() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let v = DVector::from_vec(vec![2.0, 1.0, -1.0]);
        let m = &u * v.transpose();
        let s = svd_topk(&m, 1).unwrap();
        assert!((s.reconstruct() - &m).norm() < 1e-10);
    }

    #[test]
    fn svd_rejects_bad_rank() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(svd_topk(&m, 4), Err(Error::RankOutOfRange { .. })));
        assert!(svd_topk(&m, 0).is_err());
    }

    #[test]
    fn svd_of_demeaned_identity_is_orthonormal() {
        let (c, _) = demean_columns(&DMatrix::<f64>::identity(3, 3));
        let s = svd_topk(&c, 3).unwrap();
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((s.left.transpose() * &s.left - &i3).norm() < 1e-8);
        assert!((s.right.transpose() * &s.right - &i3).norm() < 1e-8);
        // centered identity has eigenvalues {1, 1, 0}
        assert_abs_diff_eq!(s.singular_values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.singular_values[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.singular_values[2], 0.0, epsilon = 1e-12);
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..9, 2usize..9).prop_flat_map(|(n, m)| {
            proptest::collection::vec(-5.0f64..5.0, n * m)
                .prop_map(move |v| DMatrix::from_vec(n, m, v))
        })
    }

    proptest! {
        #[test]
        fn standardize_inverts(m in matrix_strategy()) {
            let mm = MaskedMatrix::full(m.clone()).unwrap();
            let (z, st) = standardize_columns(&mm).unwrap();
            let back = st.invert(&z).unwrap();
            for (a, b) in back.values().iter().zip(m.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn pearson_affine_invariant(
            a in proptest::collection::vec(-3.0f64..3.0, 6),
            b in proptest::collection::vec(-3.0f64..3.0, 6),
            alpha in 0.1f64..10.0,
            beta in -5.0f64..5.0,
        ) {
            if let (Ok(r), Ok(r2)) = (
                pearson(&a, &b),
                pearson(&a.iter().map(|x| alpha * x + beta).collect::<Vec<_>>(), &b),
            ) {
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn svd_energy_and_monotonicity(m in matrix_strategy()) {
            let (c, _) = demean_columns(&m);
            let kmax = c.nrows().min(c.ncols());
            let full = svd_topk(&c, kmax).unwrap();
            let energy: f64 = full.singular_values.iter().map(|s| s * s).sum();
            prop_assert!((energy - c.norm_squared()).abs() < 1e-8 * (1.0 + c.norm_squared()));
            for w in full.singular_values.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let mut prev = f64::INFINITY;
            for k in 1..=kmax {
                let err = (svd_topk(&c, k).unwrap().reconstruct() - &c).norm();
                prop_assert!(err <= prev + 1e-10);
                prev = err;
            }
        }
    }
}
