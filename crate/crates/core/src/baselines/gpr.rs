use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Mask;
use crate::tensor::Matrix;

/// Squared-exponential kernel settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprConfig {
    /// Length scale, in units of per-axis standardized coordinates.
    pub sigma: f64,
    /// Added to the kernel diagonal.
    pub noise: f64,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig { sigma: 3.0, noise: 0.1 }
    }
}

impl GprConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("GPR length scale {}", self.sigma)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("GPR noise {}", self.noise)));
        }
        Ok(())
    }

    pub fn kernel(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Per-axis standardization of coordinates; constant axes are centred only.
pub fn standardize_coords(coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = coords.len().max(1) as f64;
    let mut out = coords.to_vec();
    for axis in 0..2 {
        let mean = coords.iter().map(|c| c[axis]).sum::<f64>() / n;
        let var = coords.iter().map(|c| (c[axis] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for c in &mut out {
            c[axis] = (c[axis] - mean) / sd;
        }
    }
    out
}

/// Posterior-mean interpolation with a zero prior mean, fit independently
/// at each step. The kernel solve depends only on node locations, so it is
/// factored once and reused.
#[derive(Clone, Debug)]
pub struct GprImputer {
    observed: Mask,
    observed_idx: Vec<usize>,
    query_idx: Vec<usize>,
    /// `k(Q, O) (K(O, O) + noise I)^-1`.
    weights: DMatrix<f64>,
}

impl GprImputer {
    pub fn new(coords: &[[f64; 2]], observed: &Mask, config: GprConfig) -> Result<Self> {
        config.validate()?;
        if coords.len() != observed.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates for a mask of {} nodes",
                coords.len(),
                observed.len()
            )));
        }
        let observed_idx = observed.indices();
        if observed_idx.is_empty() {
            return Err(Error::Empty("observed node set".into()));
        }
        let query_idx = observed.complement().indices();
        let z = standardize_coords(coords);
        let m = observed_idx.len();
        let gram = DMatrix::from_fn(m, m, |a, b| config.kernel(z[observed_idx[a]], z[observed_idx[b]]));
        let cross = DMatrix::from_fn(query_idx.len(), m, |q, b| config.kernel(z[query_idx[q]], z[observed_idx[b]]));

        let factor = |jitter: f64| {
            let mut k = gram.clone();
            for a in 0..m {
                k[(a, a)] += config.noise + jitter;
            }
            Cholesky::new(k)
        };
        let chol = match factor(0.0) {
            Some(c) => c,
            None => {
                let jitter = 1e-6_f64.max(config.noise * 1e-3);
                log::warn!("kernel matrix not positive definite, retrying with jitter {jitter:e}");
                factor(jitter).ok_or_else(|| {
                    Error::Solver(format!(
                        "kernel over {m} observed nodes is not positive definite even with jitter {jitter:e} (sigma {}, noise {})",
                        config.sigma, config.noise
                    ))
                })?
            }
        };
        // (K^-1 k(O, Q))^T, since K is symmetric.
        let weights = chol.solve(&cross.transpose()).transpose();
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("kernel solve produced non-finite weights".into()));
        }
        Ok(GprImputer {
            observed: observed.clone(),
            observed_idx,
            query_idx,
            weights,
        })
    }

    /// Copy of `x` with unobserved rows replaced by posterior means.
    pub fn impute(&self, x: &Matrix) -> Result<Matrix> {
        let n = self.observed.len();
        if x.rows() != n {
            return Err(Error::Shape {
                op: "gpr_predict",
                left: x.shape(),
                right: (n, x.cols()),
            });
        }
        let d = x.cols();
        let y = DMatrix::from_fn(self.observed_idx.len(), d, |a, f| x.get(self.observed_idx[a], f));
        let est = &self.weights * y;
        let mut out = x.clone();
        for (q, &i) in self.query_idx.iter().enumerate() {
            for f in 0..d {
                out.set(i, f, est[(q, f)]);
            }
        }
        Ok(out)
    }
}

/// Estimates every unobserved row of `x` by Gaussian-process regression on
/// node locations; observed rows are copied unchanged.
pub fn gpr_predict(x: &Matrix, observed: &Mask, coords: &[[f64; 2]], config: GprConfig) -> Result<Matrix> {
    GprImputer::new(coords, observed, config)?.impute(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_queries_fall_to_prior_mean() {
        let coords = [[0.0, 0.0], [0.0, 0.1], [0.1, 0.0], [1e6, 1e6]];
        let mask = Mask::new(vec![true, true, true, false]);
        let x = Matrix::column(&[3.0, 3.0, 3.0, 0.0]);
        let out = gpr_predict(&x, &mask, &coords, GprConfig { sigma: 0.01, noise: 0.1 }).unwrap();
        assert!(out.get(3, 0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_duplicate_location_interpolates() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.0, 0.0]];
        let mask = Mask::new(vec![true, true, true, false]);
        let x = Matrix::column(&[1.0, -2.0, 0.5, 0.0]);
        let out = gpr_predict(&x, &mask, &coords, GprConfig { sigma: 3.0, noise: 0.0 }).unwrap();
        assert!((out.get(3, 0) + 2.0).abs() < 1e-8);
    }

    #[test]
    fn coincident_observations_need_jitter() {
        let coords = [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        let mask = Mask::new(vec![true, true, true, false]);
        let x = Matrix::column(&[1.0, 1.0, 1.0, 0.0]);
        let out = gpr_predict(&x, &mask, &coords, GprConfig { sigma: 1.0, noise: 0.0 }).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let coords = [[0.0, 0.0]; 4];
        let mask = Mask::new(vec![true, false, false, false]);
        let x = Matrix::zeros(4, 1);
        assert!(gpr_predict(&x, &mask, &coords, GprConfig { sigma: 0.0, noise: 0.1 }).is_err());
        assert!(gpr_predict(&x, &mask, &coords, GprConfig { sigma: 1.0, noise: -1.0 }).is_err());
        assert!(gpr_predict(&x, &Mask::none(4), &coords, GprConfig::default()).is_err());
    }

    #[test]
    fn standardized_axes() {
        let z = standardize_coords(&[[0.0, 5.0], [2.0, 5.0]]);
        assert_eq!(z, vec![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
