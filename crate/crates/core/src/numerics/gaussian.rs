use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Diagonal Gaussian stored as (mean, log-variance).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mean: Tensor,
    pub log_variance: Tensor,
}

impl LatentGaussian {
    pub fn new(mean: Tensor, log_variance: Tensor) -> Result<Self> {
        if mean.shape() != log_variance.shape() || mean.shape().len() != 1 {
            return Err(Error::dim("latent_gaussian", mean.shape(), log_variance.shape()));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[dim]),
            log_variance: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_variance.data().iter().map(|l| l.exp()).collect()
    }

    pub fn stddev(&self) -> Vec<f64> {
        self.log_variance.data().iter().map(|l| (0.5 * l).exp()).collect()
    }
}

/// `KL(q ‖ p)` for one-dimensional Gaussians given by mean and variance.
pub fn gaussian_kl_1d(mean_q: f64, var_q: f64, mean_p: f64, var_p: f64) -> Result<f64> {
    if !(var_q > 0.0 && var_p > 0.0) {
        return Err(Error::Domain(format!(
            "variances must be positive, got q={var_q}, p={var_p}"
        )));
    }
    let d = mean_p - mean_q;
    Ok(0.5 * (var_q / var_p + d * d / var_p - 1.0 + var_p.ln() - var_q.ln()))
}

/// `KL(q ‖ p)` summed over the dimensions of two diagonal Gaussians.
pub fn gaussian_kl(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::dim("gaussian_kl", q.mean.shape(), p.mean.shape()));
    }
    let (vq, vp) = (q.variance(), p.variance());
    (0..q.dim())
        .map(|k| gaussian_kl_1d(q.mean.data()[k], vq[k], p.mean.data()[k], vp[k]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(m: f64, v: f64) -> LatentGaussian {
        LatentGaussian::new(Tensor::vector(vec![m]).unwrap(), Tensor::vector(vec![v.ln()]).unwrap())
            .unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(gaussian_kl(&LatentGaussian::standard(3), &LatentGaussian::standard(3)).unwrap(), 0.0);
        assert!((gaussian_kl(&g(1.0, 1.0), &g(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((gaussian_kl(&g(0.0, 4.0), &g(0.0, 1.0)).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(gaussian_kl_1d(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(gaussian_kl_1d(0.0, 1.0, 0.0, -1.0).is_err());
        assert!(gaussian_kl(&LatentGaussian::standard(2), &LatentGaussian::standard(3)).is_err());
    }

    proptest! {
        #[test]
        fn non_negative_and_zero_only_at_equality(
            mq in -3.0f64..3.0, lq in -3.0f64..3.0, mp in -3.0f64..3.0, lp in -3.0f64..3.0,
        ) {
            let kl = gaussian_kl_1d(mq, lq.exp(), mp, lp.exp()).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert_eq!(gaussian_kl_1d(mq, lq.exp(), mq, lq.exp()).unwrap(), 0.0);
            if (mq - mp).abs() > 1e-3 || (lq - lp).abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
