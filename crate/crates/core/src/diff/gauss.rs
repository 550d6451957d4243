use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::nn::{LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianParams {
    /// Clamps `log_std` into `[ln 1e-4, ln 1e2]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::Shape(format!("mean has {} entries, log std {}", mean.len(), log_std.len())));
        }
        let log_std = log_std.into_iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok(GaussianParams { mean, log_std })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianParams { mean: vec![0.0; dim], log_std: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, s), x)| {
                let z = (x - m) * (-s).exp();
                -0.5 * (z * z + LN_2PI) - s
            })
            .sum()
    }
}

/// Closed-form `KL(p || q)` for diagonal Gaussians.
pub fn kl_diag_gaussians(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!("KL between dimensions {} and {}", p.dim(), q.dim())));
    }
    Ok((0..p.dim())
        .map(|d| {
            let (mp, sp, mq, sq) = (p.mean[d], p.log_std[d], q.mean[d], q.log_std[d]);
            let vp = (2.0 * sp).exp();
            let vq = (2.0 * sq).exp();
            sq - sp + (vp + (mp - mq).powi(2)) / (2.0 * vq) - 0.5
        })
        .sum())
}

/// `mean + std * noise`.
pub fn reparam_sample(g: &GaussianParams, noise: &[f64]) -> Vec<f64> {
    g.mean.iter().zip(&g.log_std).zip(noise).map(|((m, s), e)| m + s.exp() * e).collect()
}

/// Diagonal Gaussian inside a graph; rows are independent distributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussVar {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussVar {
    pub fn detach(self, g: &mut Graph) -> GaussVar {
        GaussVar { mean: g.detach(self.mean), log_std: g.detach(self.log_std) }
    }

    pub fn to_params(self, g: &Graph, row: usize) -> GaussianParams {
        GaussianParams {
            mean: g.value(self.mean).row_slice(row).to_vec(),
            log_std: g.value(self.log_std).row_slice(row).to_vec(),
        }
    }
}

/// Per-row `KL(p || q)` as an `N x 1` column.
pub fn kl_graph(g: &mut Graph, p: GaussVar, q: GaussVar) -> Var {
    let ls_diff = g.sub(p.log_std, q.log_std);
    let two = g.scale(ls_diff, 2.0);
    let var_ratio = g.exp(two);
    let dm = g.sub(p.mean, q.mean);
    let dm2 = g.square(dm);
    let neg_two_lsq = g.scale(q.log_std, -2.0);
    let inv_vq = g.exp(neg_two_lsq);
    let scaled = g.mul(dm2, inv_vq);
    let num = g.add(var_ratio, scaled);
    let half = g.scale(num, 0.5);
    let minus_ls = g.neg(ls_diff);
    let terms = g.add(half, minus_ls);
    let terms = g.add_scalar(terms, -0.5);
    g.sum_cols(terms)
}

/// Per-row negative log density of `x` as an `N x 1` column.
pub fn nll_graph(g: &mut Graph, dist: GaussVar, x: Var) -> Var {
    let d = g.sub(x, dist.mean);
    let neg_ls = g.neg(dist.log_std);
    let inv = g.exp(neg_ls);
    let z = g.mul(d, inv);
    let z2 = g.square(z);
    let half = g.scale(z2, 0.5);
    let t = g.add(half, dist.log_std);
    let t = g.add_scalar(t, 0.5 * LN_2PI);
    g.sum_cols(t)
}

/// Reparameterised sample `mean + exp(log_std) * noise`.
pub fn sample_graph(g: &mut Graph, dist: GaussVar, noise: Var) -> Var {
    let s = g.exp(dist.log_std);
    let sn = g.mul(s, noise);
    g.add(dist.mean, sn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(m: &[f64], s: &[f64]) -> GaussianParams {
        GaussianParams::new(m.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn kl_hand_values() {
        let p = gp(&[1.0], &[0.0]);
        let q = gp(&[0.0], &[0.0]);
        assert!((kl_diag_gaussians(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_diag_gaussians(&p, &p).unwrap(), 0.0);
        let a = gp(&[0.0], &[0.0]);
        let b = gp(&[0.0], &[2f64.ln()]);
        let ab = kl_diag_gaussians(&a, &b).unwrap();
        let ba = kl_diag_gaussians(&b, &a).unwrap();
        // ln 2 + 1/8 - 1/2 and -ln 2 + 2 - 1/2
        assert!((ab - (2f64.ln() - 0.375)).abs() < 1e-12);
        assert!((ba - (1.5 - 2f64.ln())).abs() < 1e-12);
        assert!(ab != ba);
    }

    #[test]
    fn kl_dimension_mismatch() {
        assert!(kl_diag_gaussians(&GaussianParams::standard(2), &GaussianParams::standard(3)).is_err());
    }

    #[test]
    fn log_std_is_clamped() {
        let g = gp(&[0.0, 0.0], &[-50.0, 50.0]);
        assert_eq!(g.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn sample_with_zero_noise_is_mean() {
        let g = gp(&[1.5, -2.0], &[0.3, -1.0]);
        assert_eq!(reparam_sample(&g, &[0.0, 0.0]), g.mean);
        let tiny = gp(&[1.5], &[LOG_STD_MIN]);
        assert!((reparam_sample(&tiny, &[3.0])[0] - 1.5).abs() < 1e-3);
    }
}
