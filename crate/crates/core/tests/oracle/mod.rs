//! Brute-force references used by the integration tests.

#![allow(dead_code)]

use impactor_core::bsts::kalman::StateSpaceParams;

/// Log density of the observed days under the joint Gaussian implied by
/// writing every observation as an explicit linear map of independent
/// standard normals.
pub fn dense_loglik(y: &[Option<f64>], x: Option<&[f64]>, season: usize, p: &StateSpaceParams) -> f64 {
    let t_len = y.len();
    let k = 1 + (season - 1) + 3 * t_len;
    let z0 = 0;
    let tau_init = 1;
    let eta_mu = season;
    let eta_tau = season + t_len;
    let eps = season + 2 * t_len;

    let mut mu_mean = vec![0.0; t_len];
    let mut mu_coef = vec![vec![0.0; k]; t_len];
    let mut tau_mean = vec![0.0; t_len];
    let mut tau_coef = vec![vec![0.0; k]; t_len];
    for t in 0..t_len {
        if t == 0 {
            mu_mean[0] = p.mu0;
            mu_coef[0][z0] = p.sigma0;
        } else {
            mu_mean[t] = mu_mean[t - 1];
            mu_coef[t] = mu_coef[t - 1].clone();
            mu_coef[t][eta_mu + t - 1] = p.sigma_mu;
        }
        if t + 1 < season {
            tau_mean[t] = p.mu_tau0;
            tau_coef[t][tau_init + t] = p.sigma_tau0;
        } else {
            let mut c = vec![0.0; k];
            let mut m = 0.0;
            for j in 1..season {
                m -= tau_mean[t - j];
                for (a, b) in c.iter_mut().zip(&tau_coef[t - j]) {
                    *a -= b;
                }
            }
            c[eta_tau + t] = p.sigma_tau;
            tau_mean[t] = m;
            tau_coef[t] = c;
        }
    }

    let obs: Vec<usize> = (0..t_len).filter(|&t| y[t].is_some()).collect();
    let rows: Vec<Vec<f64>> = obs
        .iter()
        .map(|&t| {
            let mut c: Vec<f64> = mu_coef[t].iter().zip(&tau_coef[t]).map(|(a, b)| a + b).collect();
            c[eps + t] = p.sigma_y;
            c
        })
        .collect();
    let resid: Vec<f64> = obs
        .iter()
        .map(|&t| y[t].unwrap() - mu_mean[t] - tau_mean[t] - p.beta * x.map_or(0.0, |x| x[t]))
        .collect();
    let m = obs.len();
    let mut cov = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            cov[i * m + j] = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
        }
    }
    gaussian_logpdf(&resid, cov)
}

/// `log N(r; 0, Σ)` by Cholesky factorization.
pub fn gaussian_logpdf(r: &[f64], mut a: Vec<f64>) -> f64 {
    let m = r.len();
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        assert!(d > 0.0, "covariance not positive definite");
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    let mut z = vec![0.0; m];
    for i in 0..m {
        let mut s = r[i];
        for k in 0..i {
            s -= a[i * m + k] * z[k];
        }
        z[i] = s / a[i * m + i];
    }
    let logdet: f64 = (0..m).map(|i| a[i * m + i].ln()).sum::<f64>() * 2.0;
    -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.iter().map(|v| v * v).sum::<f64>())
}

/// Central finite-difference gradient.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
