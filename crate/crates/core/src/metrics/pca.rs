//! Covariance-eigendecomposition oracle and subspace comparison.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Relative diagonal size of `R` below which a basis is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Pca {
    /// Column means of the data.
    pub mean: Vec<f64>,
    /// `d x k`, orthonormal columns, strongest first.
    pub components: Tensor,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Mean squared error per element of the rank-`k` reconstruction.
    pub truncation_error: f64,
}

pub(crate) fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Principal components of `x` (rows are samples) keeping the top `k`.
pub fn pca_oracle(x: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return shape_err("pca of an empty matrix");
    }
    if k > d {
        return config_err(format!("cannot keep {k} components of {d} dimensions"));
    }
    let mean = x.mean_rows();
    let mut centred = to_dmatrix(x);
    for mut row in centred.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    // 1/N normalisation keeps the truncation error in the same units as an MSE
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let components = Tensor::from_fn(d, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let truncation_error = eigenvalues[k..].iter().sum::<f64>() / d as f64;
    Ok(Pca { mean, components, eigenvalues, truncation_error })
}

impl Pca {
    /// Mean squared error per element when `x` is projected onto the kept components.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        if x.cols() != self.mean.len() {
            return shape_err(format!("pca fitted on {} columns, got {}", self.mean.len(), x.cols()));
        }
        let u = to_dmatrix(&self.components);
        let mut c = to_dmatrix(x);
        for mut row in c.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        let resid = &c - &c * &u * u.transpose();
        Ok(resid.norm_squared() / x.len() as f64)
    }
}

/// Truncation error for every `k` in `0..=d`.
pub fn pca_truncation_curve(x: &Tensor) -> Result<Vec<f64>> {
    let p = pca_oracle(x, 0)?;
    let d = p.eigenvalues.len();
    Ok((0..=d).map(|k| p.eigenvalues[k..].iter().sum::<f64>() / d as f64).collect())
}

fn orthonormal_basis(u: &Tensor, name: &str) -> Result<DMatrix<f64>> {
    if u.cols() == 0 || u.cols() > u.rows() {
        return shape_err(format!("{name}: {} x {} cannot span a proper subspace", u.rows(), u.cols()));
    }
    let qr = to_dmatrix(u).qr();
    let r = qr.r();
    let scale = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..r.ncols()).any(|i| r[(i, i)].abs() <= RANK_TOL * scale) {
        return Err(Error::Domain(format!("{name} is rank deficient")));
    }
    Ok(qr.q())
}

/// Principal angles between the column spaces of `u` and `v`, in degrees, ascending.
pub fn principal_angles(u: &Tensor, v: &Tensor) -> Result<Vec<f64>> {
    if u.rows() != v.rows() {
        return shape_err(format!("principal angles: ambient dimensions {} vs {}", u.rows(), v.rows()));
    }
    let qu = orthonormal_basis(u, "U")?;
    let qv = orthonormal_basis(v, "V")?;
    let sv = (qu.transpose() * qv).singular_values();
    let mut angles: Vec<f64> = sv.iter().map(|s| s.clamp(-1.0, 1.0).acos().to_degrees()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn isotropic_truncation() {
        let x = gaussian(20000, 6, 1);
        let total: f64 = pca_oracle(&x, 0).unwrap().truncation_error;
        for k in 0..=6 {
            let e = pca_oracle(&x, k).unwrap().truncation_error;
            let expect = (1.0 - k as f64 / 6.0) * total;
            assert!((e - expect).abs() < 0.03, "k {k}: {e} vs {expect}");
        }
    }

    #[test]
    fn rank_one_is_exact() {
        let x = Tensor::from_fn(100, 4, |r, c| (r as f64 - 40.0) * [1.0, -2.0, 0.5, 3.0][c]);
        let p = pca_oracle(&x, 1).unwrap();
        assert!(p.truncation_error < 1e-9);
        let u = p.components.column(0);
        let norm = (1.0f64 + 4.0 + 0.25 + 9.0).sqrt();
        let dot: f64 = u.iter().zip([1.0, -2.0, 0.5, 3.0]).map(|(a, b)| a * b / norm).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn components_orthonormal() {
        let x = Tensor::from_fn(500, 5, |r, c| ((r * (c + 3)) as f64).sin() + c as f64 * (r as f64).cos());
        let u = pca_oracle(&x, 4).unwrap().components;
        let g = u.transpose().matmul(&u).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn truncation_curve_nonincreasing() {
        let x = Tensor::from_fn(300, 5, |r, c| ((r + 1) as f64 * 0.37 * (c + 1) as f64).sin() * (c + 1) as f64);
        let curve = pca_truncation_curve(&x).unwrap();
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(curve[5].abs() < 1e-12);
    }

    #[test]
    fn reconstruction_error_on_fit_data_is_truncation_error() {
        let x = Tensor::from_fn(400, 4, |r, c| ((r * (c + 2)) as f64 * 0.11).sin() * (4 - c) as f64);
        for k in 0..=4 {
            let p = pca_oracle(&x, k).unwrap();
            assert!((p.reconstruction_error(&x).unwrap() - p.truncation_error).abs() < 1e-10);
        }
    }

    #[test]
    fn angle_cases() {
        let e1 = Tensor::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = Tensor::new(3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let diag = Tensor::new(3, 1, vec![1.0, 1.0, 0.0]).unwrap();
        assert!(principal_angles(&e1, &e1).unwrap()[0].abs() < 1e-6);
        assert!((principal_angles(&e1, &e2).unwrap()[0] - 90.0).abs() < 1e-9);
        assert!((principal_angles(&e1, &diag).unwrap()[0] - 45.0).abs() < 1e-9);
        let plane = Tensor::hcat(&[&e1, &e2]).unwrap();
        let other = Tensor::hcat(&[&diag, &Tensor::new(3, 1, vec![0.0, 0.0, 1.0]).unwrap()]).unwrap();
        let a = principal_angles(&plane, &other).unwrap();
        assert!(a[0].abs() < 1e-6 && (a[1] - 90.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_rejected() {
        let u = Tensor::new(3, 2, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let v = Tensor::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(principal_angles(&u, &v), Err(Error::Domain(_))));
    }
}
