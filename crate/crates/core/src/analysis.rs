//! Principal component projection for exported latent vectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal directions, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components (fewer when the data has fewer dimensions).
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if n == 0 || d == 0 {
            return Err(Error::invalid("PCA needs at least one nonempty row"));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("PCA rows differ in length"));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let k = k.min(d);
        let components = order[..k]
            .iter()
            .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        let variances = order[..k].iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        Ok(Pca {
            mean,
            components,
            variances,
        })
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_dominant_direction_and_is_orthonormal() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 / 10.0;
                vec![t, 2.0 * t + 0.01 * (i % 3) as f64, -t + 0.02 * (i % 5) as f64]
            })
            .collect();
        let p = Pca::fit(&rows, 2).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&p.components[0], &p.components[0]) - 1.0).abs() < 1e-8);
        assert!((dot(&p.components[1], &p.components[1]) - 1.0).abs() < 1e-8);
        assert!(dot(&p.components[0], &p.components[1]).abs() < 1e-8);
        let expected = [1.0, 2.0, -1.0].map(|x: f64| x / 6f64.sqrt());
        assert!(dot(&p.components[0], &expected).abs() > 0.999);
        assert!(p.variances[0] >= p.variances[1]);
        assert_eq!(p.project(&p.mean), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(Pca::fit(&[], 2).is_err());
        let one = Pca::fit(&[vec![1.0]], 2).unwrap();
        assert_eq!(one.components.len(), 1);
    }
}
