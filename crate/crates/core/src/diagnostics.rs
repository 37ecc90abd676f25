//! Subspace alignment between human and twin response matrices.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::completion::{self, CompletionConfig, RankSelection};
use crate::error::{Error, Result};
use crate::linalg;
use crate::matcore::{demean_columns, svd_topk, MaskedMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Question space: right singular vectors of the response matrix.
    #[default]
    RowSpace,
    /// User space: left singular vectors.
    ColumnSpace,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "row" | "row_space" | "rows" => Some(Self::RowSpace),
            "column" | "col" | "column_space" | "columns" => Some(Self::ColumnSpace),
            _ => None,
        }
    }
}

/// Orthonormal basis of the leading-`k` column space of `a`.
pub fn leading_basis(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let max = a.nrows().min(a.ncols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange { rank: k, max });
    }
    Ok(svd_topk(a, k)?.left)
}

fn cosines_of_bases(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = (qa.transpose() * qb)
        .singular_values()
        .iter()
        .map(|v| v.min(1.0))
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn projector_distance(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> f64 {
    (qa * qa.transpose() - qb * qb.transpose()).norm()
}

fn check_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim(format!("ambient dimensions {} and {}", a.nrows(), b.nrows())));
    }
    Ok(())
}

/// Cosines of the principal angles between the leading-`k` column spaces of
/// `a` and `b`, largest first. Pass transposes to compare row spaces.
pub fn principal_angle_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    check_rows(a, b)?;
    Ok(cosines_of_bases(&leading_basis(a, k)?, &leading_basis(b, k)?))
}

/// `||P_A - P_B||_F` for the projectors onto the leading-`k` column spaces.
pub fn projection_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> Result<f64> {
    check_rows(a, b)?;
    Ok(projector_distance(&leading_basis(a, k)?, &leading_basis(b, k)?))
}

/// The same distance from the cosines: `sqrt(2k - 2 sum cos^2)`.
pub fn projection_frobenius_from_cosines(cosines: &[f64]) -> f64 {
    let k = cosines.len() as f64;
    (2.0 * k - 2.0 * cosines.iter().map(|c| c * c).sum::<f64>()).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceComparison {
    /// Principal-angle cosines at truncation `r_max`.
    pub cosines: Vec<f64>,
    /// Projection distance at truncation levels `1..=r_max`.
    pub proj_frobenius: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub axis: Axis,
    pub r: usize,
    pub r_max: usize,
    pub rank_selection: Option<RankSelection>,
    pub twin: SubspaceComparison,
    pub gaussian: SubspaceComparison,
    pub shuffled: SubspaceComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentOptions {
    /// Fixed effective rank; estimated from the human matrix when unset.
    pub rank: Option<usize>,
    pub rank_grid: Vec<usize>,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        Self {
            rank: None,
            rank_grid: (1..=10).collect(),
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

fn compare(a: &DMatrix<f64>, b: &DMatrix<f64>, r_max: usize) -> Result<SubspaceComparison> {
    let sa = svd_topk(a, r_max)?;
    let sb = svd_topk(b, r_max)?;
    let proj = (1..=r_max)
        .map(|k| projector_distance(&sa.left.columns(0, k).into_owned(), &sb.left.columns(0, k).into_owned()))
        .collect();
    Ok(SubspaceComparison {
        cosines: cosines_of_bases(&sa.left, &sb.left),
        proj_frobenius: proj,
    })
}

fn imputed(m: &MaskedMatrix, rank: usize) -> Result<DMatrix<f64>> {
    if m.is_fully_observed() {
        return Ok(m.values().clone());
    }
    Ok(completion::hard_impute(m, &CompletionConfig::hard(rank))?.filled)
}

/// Compares human and twin subspaces along `axis` on the leading `r + 2`
/// directions, with a seeded Gaussian matrix and a column-shuffled human copy
/// as baselines. Missing entries are hard-imputed at the human rank and
/// columns are demeaned first.
pub fn alignment_report(
    human: &MaskedMatrix,
    twin: &MaskedMatrix,
    axis: Axis,
    opts: &AlignmentOptions,
) -> Result<AlignmentReport> {
    if human.shape() != twin.shape() {
        return Err(Error::dim("human and twin shapes differ"));
    }
    let min_dim = human.nrows().min(human.ncols());
    let (r, rank_selection) = match opts.rank {
        Some(r) if r >= 1 => (r, None),
        Some(_) => return Err(Error::param("rank must be positive")),
        None => {
            let grid: Vec<usize> = opts.rank_grid.iter().copied().filter(|&k| k >= 1 && k <= min_dim).collect();
            let sel = completion::estimate_effective_rank(human, &grid, opts.holdout_frac, opts.seed)?;
            (sel.rank, Some(sel))
        }
    };
    let mut r_max = r + 2;
    if r_max > min_dim {
        log::warn!("r_max = {r_max} exceeds the smaller dimension; clamped to {min_dim}");
        r_max = min_dim;
    }
    let impute_rank = r.min(min_dim);
    let h = demean_columns(&imputed(human, impute_rank)?).0;
    let t = demean_columns(&imputed(twin, impute_rank)?).0;

    let mut rng = linalg::seeded(opts.seed);
    let gauss = demean_columns(&linalg::gaussian_matrix(&mut rng, t.nrows(), t.ncols(), 1.0)).0;
    let mut shuffled = h.clone();
    for mut col in shuffled.column_iter_mut() {
        let mut vals: Vec<f64> = col.iter().copied().collect();
        vals.shuffle(&mut rng);
        col.copy_from_slice(&vals);
    }

    let orient = |m: &DMatrix<f64>| match axis {
        Axis::RowSpace => m.transpose(),
        Axis::ColumnSpace => m.clone(),
    };
    let ho = orient(&h);
    Ok(AlignmentReport {
        axis,
        r,
        r_max,
        rank_selection,
        twin: compare(&ho, &orient(&t), r_max)?,
        gaussian: compare(&ho, &orient(&gauss), r_max)?,
        shuffled: compare(&ho, &orient(&shuffled), r_max)?,
    })
}

/// Cumulative share of `sum sigma_i^2` captured by the leading singular values
/// of the column-demeaned matrix.
pub fn variance_explained(m: &MaskedMatrix) -> Result<Vec<f64>> {
    let dense = m.to_dense()?;
    let (c, _) = demean_columns(&dense);
    let k = c.nrows().min(c.ncols());
    let sv = svd_topk(&c, k)?.singular_values;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::param("matrix has no variance after demeaning"));
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = sv
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, random_orthogonal, seeded};

    fn e(n: usize, i: usize) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(n, 1);
        v[(i, 0)] = 1.0;
        v
    }

    #[test]
    fn plane_example() {
        let a = DMatrix::from_columns(&[e(3, 0).column(0), e(3, 1).column(0)]);
        let b2 = (e(3, 1) + e(3, 2)) / 2f64.sqrt();
        let b = DMatrix::from_columns(&[e(3, 0).column(0), b2.column(0)]);
        let c = principal_angle_cosines(&a, &b, 2).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((projection_frobenius(&a, &b, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_orthogonal() {
        let mut rng = seeded(1);
        let q = random_orthogonal(&mut rng, 6);
        let a = q.columns(0, 3).into_owned();
        let b = q.columns(3, 3).into_owned();
        assert!(principal_angle_cosines(&a, &a, 3).unwrap().iter().all(|c| (c - 1.0).abs() < 1e-10));
        assert!(principal_angle_cosines(&a, &b, 3).unwrap().iter().all(|c| c.abs() < 1e-10));
        assert!((projection_frobenius(&a, &b, 3).unwrap() - 6f64.sqrt()).abs() < 1e-10);
        assert!(projection_frobenius(&a, &a, 3).unwrap() < 1e-10);
        assert!(principal_angle_cosines(&a, &b, 4).is_err());
    }

    #[test]
    fn distance_identity_and_basis_invariance() {
        let mut rng = seeded(2);
        for _ in 0..20 {
            let a = gaussian_matrix(&mut rng, 10, 4, 1.0);
            let b = gaussian_matrix(&mut rng, 10, 4, 1.0);
            let c = principal_angle_cosines(&a, &b, 4).unwrap();
            let d = projection_frobenius(&a, &b, 4).unwrap();
            assert!((d * d - (8.0 - 2.0 * c.iter().map(|x| x * x).sum::<f64>())).abs() < 1e-8);
            assert!((d - projection_frobenius_from_cosines(&c)).abs() < 1e-8);
            let r = random_orthogonal(&mut rng, 4);
            let c2 = principal_angle_cosines(&(&a * r), &b, 4).unwrap();
            assert!(c.iter().zip(&c2).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }

    fn low_rank(seed: u64, n: usize, m: usize, r: usize) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        gaussian_matrix(&mut rng, n, r, 1.0) * gaussian_matrix(&mut rng, r, m, 1.0)
            + gaussian_matrix(&mut rng, n, m, 0.05)
    }

    #[test]
    fn self_alignment_report() {
        let h = MaskedMatrix::full(low_rank(3, 60, 30, 3)).unwrap();
        let rep = alignment_report(&h, &h, Axis::RowSpace, &AlignmentOptions::default()).unwrap();
        assert_eq!(rep.r, 3);
        assert_eq!(rep.r_max, 5);
        assert!(rep.twin.cosines.iter().all(|c| (c - 1.0).abs() < 1e-10));
        assert!(rep.twin.proj_frobenius.iter().all(|&d| d < 1e-6));
        for k in 0..5 {
            assert!(rep.gaussian.proj_frobenius[k] > rep.twin.proj_frobenius[k]);
            assert!(rep.shuffled.proj_frobenius[k] > rep.twin.proj_frobenius[k]);
            assert!(rep.gaussian.proj_frobenius[k] <= (2.0 * (k + 1) as f64).sqrt() + 1e-8);
        }
    }

    /// Orthogonal `n x n` matrix that fixes the all-ones vector, so it
    /// commutes with column demeaning.
    fn mean_preserving_orthogonal(seed: u64, n: usize) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        let mut m = gaussian_matrix(&mut rng, n, n, 1.0);
        m.set_column(0, &nalgebra::DVector::from_element(n, 1.0));
        let basis = m.qr().q();
        let b = basis.columns(1, n - 1).into_owned();
        let r = random_orthogonal(&mut rng, n - 1);
        DMatrix::from_element(n, n, 1.0 / n as f64) + &b * r * b.transpose()
    }

    #[test]
    fn mixing_users_keeps_row_space() {
        let h = low_rank(4, 40, 20, 3);
        let q = mean_preserving_orthogonal(5, 40);
        let t = &q * &h;
        let opts = AlignmentOptions {
            rank: Some(3),
            ..Default::default()
        };
        let rep = alignment_report(&MaskedMatrix::full(h.clone()).unwrap(), &MaskedMatrix::full(t).unwrap(), Axis::RowSpace, &opts).unwrap();
        assert!(rep.twin.cosines.iter().all(|c| (c - 1.0).abs() < 1e-8), "{:?}", rep.twin.cosines);
        let mut rng = seeded(6);
        let mixed = &h * random_orthogonal(&mut rng, 20);
        let rep = alignment_report(&MaskedMatrix::full(h).unwrap(), &MaskedMatrix::full(mixed).unwrap(), Axis::ColumnSpace, &opts).unwrap();
        assert!(rep.twin.cosines.iter().all(|c| (c - 1.0).abs() < 1e-8));
    }

    #[test]
    fn report_is_finite_for_independent_twin_and_clamps() {
        let h = MaskedMatrix::full(low_rank(7, 12, 6, 2)).unwrap();
        let t = MaskedMatrix::full(low_rank(8, 12, 6, 2)).unwrap();
        let opts = AlignmentOptions {
            rank: Some(5),
            ..Default::default()
        };
        let rep = alignment_report(&h, &t, Axis::RowSpace, &opts).unwrap();
        assert_eq!(rep.r_max, 6);
        assert!(rep.twin.cosines.iter().all(|c| c.is_finite() && *c <= 1.0 + 1e-10));
        let sorted = rep.twin.cosines.windows(2).all(|w| w[0] >= w[1]);
        assert!(sorted);
    }

    #[test]
    fn variance_curves() {
        let r1 = DMatrix::from_fn(5, 4, |i, j| (i as f64 - 2.0) * (j as f64 + 1.0));
        let v = variance_explained(&MaskedMatrix::full(r1).unwrap()).unwrap();
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-10));
        // two equal singular values on demeaned columns
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let v = variance_explained(&MaskedMatrix::full(m).unwrap()).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12 && v[1] == 1.0);
        let mut rng = seeded(9);
        let v = variance_explained(&MaskedMatrix::full(gaussian_matrix(&mut rng, 20, 10, 1.0)).unwrap()).unwrap();
        assert_eq!(v.len(), 10);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!(variance_explained(&MaskedMatrix::full(DMatrix::from_element(3, 2, 4.0)).unwrap()).is_err());
    }
}
