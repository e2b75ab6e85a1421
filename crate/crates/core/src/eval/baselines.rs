//! Linear and gravity-style baselines.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least squares with an unpenalised intercept and optional ridge penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Solves `(X'X + lambda I) beta = X'y` on centred data.
pub fn fit_linear(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<LinearModel> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::EmptyInput("linear design rows"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("ridge penalty must be non-negative".into()));
    }
    let p = x[0].len();
    let mean_x: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i][j] - mean_x[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - mean_y);
    let mut a = xc.transpose() * &xc;
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let b = xc.transpose() * yc;

    let scale = (0..p).map(|j| a[(j, j)]).fold(0.0f64, f64::max);
    let chol = a.clone().cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    if (0..p).any(|j| !(l[(j, j)] * l[(j, j)] > 1e-12 * scale)) {
        return Err(Error::SingularSystem);
    }
    let beta = chol.solve(&b);
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = mean_y - coef.iter().zip(&mean_x).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel { intercept, coef, lambda })
}

/// One edge's pairs as `(origin mass, destination mass, t_od)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityEdge {
    pub pairs: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for GravityConfig {
    fn default() -> Self {
        GravityConfig { steps: 5000, lr: 0.01 }
    }
}

/// `y = exp(b0) * sum m_o^b1 * m_d^b2 * t^-b3`, masses floored at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityModel {
    pub beta: [f64; 4],
}

impl GravityModel {
    pub fn predict(&self, edge: &GravityEdge) -> f64 {
        let [b0, b1, b2, b3] = self.beta;
        let sum: f64 = edge
            .pairs
            .iter()
            .map(|&(mo, md, t)| {
                libm::pow(mo.max(1.0), b1) * libm::pow(md.max(1.0), b2) * libm::pow(t, -b3)
            })
            .sum();
        libm::exp(b0) * sum
    }
}

/// Fits the gravity model by Adam on the mean squared edge error, starting
/// from `(0, 1, 1, 1)`.
///
/// Internally the log-masses and log-times are centred, which only shifts
/// the intercept; the returned coefficients are in the original form.
pub fn fit_gravity(edges: &[&GravityEdge], y: &[f64], config: GravityConfig) -> Result<GravityModel> {
    if edges.is_empty() || edges.len() != y.len() {
        return Err(Error::EmptyInput("gravity edges"));
    }
    let all = || edges.iter().flat_map(|e| e.pairs.iter());
    if all().all(|&(mo, md, _)| mo <= 0.0 && md <= 0.0) {
        return Err(Error::ZeroMasses);
    }
    if all().any(|&(_, _, t)| !(t > 0.0)) {
        return Err(Error::Invalid("gravity travel times must be positive".into()));
    }
    let count = all().count().max(1) as f64;
    let c_o = all().map(|p| libm::log(p.0.max(1.0))).sum::<f64>() / count;
    let c_d = all().map(|p| libm::log(p.1.max(1.0))).sum::<f64>() / count;
    let c_t = all().map(|p| libm::log(p.2)).sum::<f64>() / count;
    let logs: Vec<Vec<[f64; 3]>> = edges
        .iter()
        .map(|e| {
            e.pairs
                .iter()
                .map(|&(mo, md, t)| {
                    [libm::log(mo.max(1.0)) - c_o, libm::log(md.max(1.0)) - c_d, libm::log(t) - c_t]
                })
                .collect()
        })
        .collect();

    // the intercept is profiled out: for fixed exponents the squared error
    // is minimised at exp(b0) = sum(y*S) / sum(S^2)
    let mut theta = [c_o + c_d - c_t, 1.0, 1.0, 1.0];
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = [0.0; 3];
    let mut v = [0.0; 3];
    let n = edges.len() as f64;
    let mut sums = vec![(0.0, [0.0; 3]); edges.len()];
    let profile = |theta: &mut [f64; 4], sums: &mut [(f64, [f64; 3])]| {
        // shift by the largest exponent so the sums stay finite
        let mut shift = f64::NEG_INFINITY;
        for pairs in &logs {
            for l in pairs {
                shift = shift.max(theta[1] * l[0] + theta[2] * l[1] - theta[3] * l[2]);
            }
        }
        let (mut sy, mut ss) = (0.0, 0.0);
        for ((pairs, &target), slot) in logs.iter().zip(y).zip(sums.iter_mut()) {
            let mut sum = 0.0;
            let mut d = [0.0; 3];
            for l in pairs {
                let w = libm::exp(theta[1] * l[0] + theta[2] * l[1] - theta[3] * l[2] - shift);
                sum += w;
                d[0] += w * l[0];
                d[1] += w * l[1];
                d[2] -= w * l[2];
            }
            sy += target * sum;
            ss += sum * sum;
            *slot = (sum, d);
        }
        if ss > 0.0 && sy > 0.0 {
            theta[0] = libm::log(sy / ss) - shift;
        }
        shift
    };
    for step in 1..=config.steps {
        let shift = profile(&mut theta, &mut sums);
        let scale = libm::exp(theta[0] + shift);
        let mut g = [0.0; 3];
        for (&(sum, d), &target) in sums.iter().zip(y) {
            let r = 2.0 * (scale * sum - target) / n;
            for i in 0..3 {
                g[i] += r * scale * d[i];
            }
        }
        if g.iter().any(|x| !x.is_finite()) || !scale.is_finite() {
            return Err(Error::NonFinite { what: "gravity gradient", step: step as u64 });
        }
        let t = step as f64;
        for i in 0..3 {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - libm::pow(beta1, t));
            let vh = v[i] / (1.0 - libm::pow(beta2, t));
            theta[i + 1] -= config.lr * mh / (libm::sqrt(vh) + eps);
        }
    }
    profile(&mut theta, &mut sums);
    let beta = [
        theta[0] - theta[1] * c_o - theta[2] * c_d + theta[3] * c_t,
        theta[1],
        theta[2],
        theta[3],
    ];
    Ok(GravityModel { beta })
}


#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss-Jordan elimination with partial pivoting on the augmented
    /// normal equations, using compensated dot products.
    fn direct_solve(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let p = x[0].len() + 1;
        let row = |i: usize| {
            let mut r = vec![1.0];
            r.extend_from_slice(&x[i]);
            r
        };
        let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = crate::numeric::exact_sum(rows.iter().map(|r| r[i] * r[j]));
            }
            a[i][p] = crate::numeric::exact_sum(rows.iter().zip(y).map(|(r, y)| r[i] * y));
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    fn random_design(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        (x, y)
    }

    #[test]
    fn exact_linear_data_interpolates() {
        let (x, _) = random_design(30, 3, 1);
        let y: Vec<f64> = x.iter().map(|r| 4.0 + 2.0 * r[0] - r[1] + 0.5 * r[2]).collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        for (r, y) in x.iter().zip(&y) {
            assert!((m.predict(r) - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn huge_ridge_penalty_predicts_the_mean() {
        let (x, y) = random_design(40, 4, 2);
        let m = fit_linear(&x, &y, 1e15).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(m.coef.iter().all(|b| b.abs() < 1e-10));
        assert!((m.predict(&x[0]) - mean).abs() < 1e-8);
    }

    #[test]
    fn matches_direct_solver() {
        let (x, y) = random_design(100, 5, 3);
        let m = fit_linear(&x, &y, 0.0).unwrap();
        let oracle = direct_solve(&x, &y);
        assert!((m.intercept - oracle[0]).abs() < 1e-8);
        for (b, o) in m.coef.iter().zip(&oracle[1..]) {
            assert!((b - o).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_is_continuous_at_zero() {
        let (x, y) = random_design(60, 4, 4);
        let a = fit_linear(&x, &y, 0.0).unwrap();
        let b = fit_linear(&x, &y, 1e-6).unwrap();
        for r in &x {
            assert!((a.predict(r) - b.predict(r)).abs() < 1e-3);
        }
    }

    #[test]
    fn singular_system_advises_ridge() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(fit_linear(&x, &y, 0.0).unwrap_err(), Error::SingularSystem);
        assert!(fit_linear(&x, &y, 1.0).is_ok());
    }

    #[test]
    fn degenerate_exponents_count_pairs() {
        let e = GravityEdge { pairs: vec![(5.0, 7.0, 100.0), (2.0, 3.0, 50.0), (0.0, 1.0, 9.0)] };
        let m = GravityModel { beta: [0.7, 0.0, 0.0, 0.0] };
        assert!((m.predict(&e) - libm::exp(0.7) * 3.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_masses_quadruples_summands() {
        let m = GravityModel { beta: [0.0, 1.0, 1.0, 1.0] };
        let one = GravityEdge { pairs: vec![(5.0, 7.0, 100.0)] };
        let two = GravityEdge { pairs: vec![(10.0, 14.0, 100.0)] };
        assert!((m.predict(&two) - 4.0 * m.predict(&one)).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_masses() {
        let e = GravityEdge { pairs: vec![(0.0, 0.0, 10.0)] };
        assert_eq!(fit_gravity(&[&e], &[1.0], GravityConfig::default()).unwrap_err(), Error::ZeroMasses);
    }

    #[test]
    fn recovers_planted_gravity_exponents() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let planted = GravityModel { beta: [-1.5, 0.8, 1.2, 1.4] };
        let edges: Vec<GravityEdge> = (0..80)
            .map(|_| {
                let n = rng.random_range(3..30);
                GravityEdge {
                    pairs: (0..n)
                        .map(|_| {
                            (
                                rng.random_range(50.0..5000.0),
                                rng.random_range(50.0..5000.0),
                                rng.random_range(120.0..4000.0),
                            )
                        })
                        .collect(),
                }
            })
            .collect();
        let y: Vec<f64> = edges.iter().map(|e| planted.predict(e)).collect();
        let refs: Vec<&GravityEdge> = edges.iter().collect();
        let fit = fit_gravity(&refs, &y, GravityConfig::default()).unwrap();
        for i in 1..4 {
            assert!((fit.beta[i] - planted.beta[i]).abs() < 0.1, "{:?}", fit.beta);
        }
    }
}
