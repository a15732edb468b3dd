use super::{NumericsError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Copy with every column shifted to zero mean.
    pub fn centered(&self) -> Matrix {
        let means = self.column_means();
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        out
    }

    /// `A^T A / divisor`, a `cols x cols` matrix.
    pub fn gram(&self, divisor: f64) -> Matrix {
        let d = self.cols;
        let mut g = Matrix::zeros(d, d);
        for row in self.row_iter() {
            for i in 0..d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..d {
                    g.data[i * d + j] += ri * row[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = g.data[i * d + j] / divisor;
                g.data[i * d + j] = v;
                g.data[j * d + i] = v;
            }
        }
        g
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        if self.rows != self.cols {
            f64::INFINITY
        } else {
            worst
        }
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues in descending
/// order with their unit eigenvectors as rows.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let asym = a.max_asymmetry();
    if asym > 1e-8 {
        return Err(NumericsError::NotSymmetric(asym));
    }
    let n = a.rows();
    let eig = nalgebra::SymmetricEigen::new(a.to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for c in 0..n {
            vectors.set(r, c, eig.eigenvectors[(c, i)]);
        }
    }
    Ok((values, vectors))
}

/// `1 - cos(u, v)`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "cosine over lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(NumericsError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// Principal components of a `T x D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `k x D`, orthonormal rows, descending singular value.
    pub components: Matrix,
    /// Fraction of total variance carried by each component.
    pub explained_ratio: Vec<f64>,
    pub singular_values: Vec<f64>,
}

/// Squared singular values below this fraction of the largest are treated
/// as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// PCA over rows of `x`: right singular vectors of the column-centered
/// matrix, with each component's largest-magnitude coordinate made positive.
///
/// The eigenproblem is solved on whichever of `X^T X` or `X X^T` is smaller.
pub fn pca(x: &Matrix, k: usize) -> Result<Pca> {
    let (t, d) = x.shape();
    if t < 2 {
        return Err(NumericsError::SeriesTooShort { needed: 2, got: t });
    }
    if k == 0 || k > t.min(d) {
        return Err(NumericsError::ShapeMismatch(format!(
            "k = {k} outside 1..={}",
            t.min(d)
        )));
    }
    let xc = x.centered();
    let (eigvals, right_vectors) = if d <= t {
        let (vals, vecs) = symmetric_eigen(&xc.gram(1.0))?;
        (vals, vecs)
    } else {
        // X X^T u = s^2 u  =>  v = X^T u / s
        let xt = Matrix::from_nalgebra(&xc.to_nalgebra().transpose());
        let (vals, left) = symmetric_eigen(&xt.gram(1.0))?;
        let mut right = Matrix::zeros(t, d);
        for (r, u) in left.row_iter().enumerate() {
            let mut v = vec![0.0; d];
            for (ui, row) in u.iter().zip(xc.row_iter()) {
                for (vj, xj) in v.iter_mut().zip(row) {
                    *vj += ui * xj;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (c, vj) in v.iter().enumerate() {
                    right.set(r, c, vj / norm);
                }
            }
        }
        (vals, right)
    };

    let total: f64 = eigvals.iter().map(|v| v.max(0.0)).sum();
    let top = eigvals.first().copied().unwrap_or(0.0);
    let achieved = eigvals
        .iter()
        .take_while(|&&v| top > 0.0 && v > top * RANK_TOLERANCE)
        .count();
    if achieved < k {
        return Err(NumericsError::RankDeficient {
            requested: k,
            achieved,
        });
    }

    let mut components = Matrix::zeros(k, d);
    for r in 0..k {
        let v = right_vectors.row(r);
        let mut pivot = 0;
        for (c, val) in v.iter().enumerate() {
            if val.abs() > v[pivot].abs() {
                pivot = c;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (c, val) in v.iter().enumerate() {
            components.set(r, c, sign * val);
        }
    }
    Ok(Pca {
        components,
        explained_ratio: eigvals[..k].iter().map(|v| v.max(0.0) / total).collect(),
        singular_values: eigvals[..k].iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch(format!(
            "{what} over {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared elementwise difference.
pub fn mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_shape(a, b, "mse")?;
    let n = a.as_slice().len().max(1) as f64;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// Single-window SSIM with `C1 = (0.01 R)^2`, `C2 = (0.03 R)^2` and `R` the
/// joint value range of both matrices (1 when flat).
pub fn ssim(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_shape(a, b, "ssim")?;
    let (xa, xb) = (a.as_slice(), b.as_slice());
    if xa.is_empty() {
        return Err(NumericsError::EmptySeries);
    }
    let (lo, hi) = xa
        .iter()
        .chain(xb)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let n = xa.len() as f64;
    let mu_a = xa.iter().sum::<f64>() / n;
    let mu_b = xb.iter().sum::<f64>() / n;
    let var_a = xa.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / n;
    let var_b = xb.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / n;
    let cov = xa
        .iter()
        .zip(xb)
        .map(|(x, y)| (x - mu_a) * (y - mu_b))
        .sum::<f64>()
        / n;
    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    Ok((num / den).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn seeded(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.next_signed()).collect()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, -0.5];
        assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&u, &[-1.0, -2.0, 0.5]).unwrap(), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(NumericsError::ZeroVector));
    }

    #[test]
    fn pca_on_axis_points() {
        let x = Matrix::from_rows(&[
            vec![-2.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![4.0, 0.0, 0.0],
        ])
        .unwrap();
        let p = pca(&x, 1).unwrap();
        assert!((p.components.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(p.components.get(0, 1).abs() < 1e-12);
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        assert_eq!(
            pca(&x, 2),
            Err(NumericsError::RankDeficient { requested: 2, achieved: 1 })
        );
    }

    /// Independent route: nalgebra's bidiagonal SVD of the centered matrix.
    fn svd_oracle(x: &Matrix, k: usize) -> Vec<Vec<f64>> {
        let svd = x.centered().to_nalgebra().svd(false, true);
        let vt = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        order[..k]
            .iter()
            .map(|&i| {
                let row: Vec<f64> = vt.row(i).iter().copied().collect();
                let pivot = row
                    .iter()
                    .enumerate()
                    .fold(0, |p, (c, v)| if v.abs() > row[p].abs() { c } else { p });
                let sign = row[pivot].signum();
                row.iter().map(|v| v * sign).collect()
            })
            .collect()
    }

    #[test]
    fn pca_matches_svd_oracle() {
        for (t, d, seed) in [(5, 3, 11), (4, 7, 12), (9, 9, 13)] {
            let x = seeded(t, d, seed);
            let k = 3.min(t - 1).min(d);
            let p = pca(&x, k).unwrap();
            let oracle = svd_oracle(&x, k);
            for (r, want) in oracle.iter().enumerate() {
                for (c, w) in want.iter().enumerate() {
                    assert!((p.components.get(r, c) - w).abs() < 1e-6, "{t}x{d} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn ssim_examples() {
        let a = seeded(3, 4, 5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let b = seeded(3, 4, 6);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let shifted = Matrix::new(3, 4, a.as_slice().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!(ssim(&a, &shifted).unwrap() < 1.0);
        assert!(ssim(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = seeded(2, 2, 9);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let z = Matrix::new(1, 1, vec![0.0]).unwrap();
        let two = Matrix::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(mse(&z, &two).unwrap(), 4.0);
        assert!(mse(&a, &z).is_err());
    }

    fn reconstruction_error(x: &Matrix, k: usize) -> f64 {
        let xc = x.centered();
        let p = pca(x, k).unwrap();
        let mut err = 0.0;
        for row in xc.row_iter() {
            let mut recon = vec![0.0; row.len()];
            for comp in p.components.row_iter() {
                let coef: f64 = comp.iter().zip(row).map(|(a, b)| a * b).sum();
                for (r, c) in recon.iter_mut().zip(comp) {
                    *r += coef * c;
                }
            }
            err += row.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        err
    }

    proptest! {
        #[test]
        fn pca_components_are_orthonormal(seed in any::<u64>(), t in 3usize..12, d in 2usize..8) {
            let x = seeded(t, d, seed);
            let k = (t - 1).min(d);
            let p = pca(&x, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = p.components.row(i).iter().zip(p.components.row(j)).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-8);
                }
            }
            let mut last = f64::INFINITY;
            for kk in 1..=k {
                let e = reconstruction_error(&x, kk);
                prop_assert!(e <= last + 1e-9);
                last = e;
            }
        }

        #[test]
        fn ssim_shift_invariance_for_equal_means(seed in any::<u64>(), shift in -3.0f64..3.0) {
            // The luminance factor only cancels when both means agree, so B is
            // a reversal of A (same mean, different structure).
            let a = seeded(3, 5, seed);
            let b = Matrix::new(3, 5, a.as_slice().iter().rev().copied().collect()).unwrap();
            let sa = Matrix::new(3, 5, a.as_slice().iter().map(|v| v + shift).collect()).unwrap();
            let sb = Matrix::new(3, 5, b.as_slice().iter().map(|v| v + shift).collect()).unwrap();
            let base = ssim(&a, &b).unwrap();
            let shifted = ssim(&sa, &sb).unwrap();
            prop_assert!((base - shifted).abs() < 1e-9);
            prop_assert_eq!(shifted, ssim(&sb, &sa).unwrap());
        }
    }
}
