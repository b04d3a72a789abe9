use super::panel::{PanelDataset, YearMonth};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Parameters of the linear conditional factor generator
/// `r_t = β(x_{t-1}) f_t + u_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_stocks: usize,
    pub k_true: usize,
    pub n_chars: usize,
    pub t_total: usize,
    pub seed: u64,
    pub sigma_f: f64,
    pub sigma_u: f64,
    /// Persistence of every characteristic's AR(1) path.
    pub rho: f64,
    /// Scale of the drawn `W_true` entries, which are `N(0, 1/C)` before
    /// scaling. Ignored when `w_true` is given.
    pub beta_scale: f64,
    /// Added to every beta.
    pub beta_intercept: f64,
    /// Explicit `K_true × C` beta map.
    pub w_true: Option<Tensor>,
    pub start: YearMonth,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_stocks: 50,
            k_true: 3,
            n_chars: 10,
            t_total: 240,
            seed: 0,
            sigma_f: 1.0,
            sigma_u: 0.1,
            rho: 0.9,
            beta_scale: DEFAULT_BETA_SCALE,
            beta_intercept: DEFAULT_BETA_INTERCEPT,
            w_true: None,
            start: YearMonth::new(2000, 1).expect("valid month"),
        }
    }
}

/// Default `W_true` scale.
pub const DEFAULT_BETA_SCALE: f64 = 0.3;

/// Default common beta level. Without it every stock's beta averages to
/// zero over time and no fixed weighting of the cross-section tracks the
/// factors.
pub const DEFAULT_BETA_INTERCEPT: f64 = 0.5;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_stocks", self.n_stocks),
            ("k_true", self.k_true),
            ("n_chars", self.n_chars),
            ("t_total", self.t_total),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if !(self.sigma_f.is_finite() && self.sigma_f > 0.0) {
            return Err(Error::Config(format!("`sigma_f` must be positive, got {}", self.sigma_f)));
        }
        if !(self.sigma_u.is_finite() && self.sigma_u >= 0.0) {
            return Err(Error::Config(format!("`sigma_u` must be non-negative, got {}", self.sigma_u)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("`rho` must lie in [0, 1), got {}", self.rho)));
        }
        if !self.beta_scale.is_finite() || !self.beta_intercept.is_finite() {
            return Err(Error::Config("`beta_scale` and `beta_intercept` must be finite".into()));
        }
        if let Some(w) = &self.w_true {
            if w.shape() != [self.k_true, self.n_chars] {
                return Err(Error::dim("w_true", &[self.k_true, self.n_chars], w.shape()));
            }
        }
        Ok(())
    }
}

/// The generator's hidden parts.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `f_t`, one `K_true` vector per date.
    pub factors: Vec<Vec<f64>>,
    /// `β_t`, one `N × K_true` matrix per date.
    pub betas: Vec<Tensor>,
    pub w_true: Tensor,
    /// Noise-free part `β_t f_t`, one `N` vector per date.
    pub signal: Vec<Vec<f64>>,
}

/// Simulates a full panel. Characteristics are unit-variance AR(1) paths;
/// the characteristics in slot `t` are `x_{t-1}`, which also set `β_t`.
/// Slot 0 characteristics are left missing, as they would be for a panel
/// read from the long CSV format.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(PanelDataset, GroundTruth)> {
    spec.validate()?;
    let (n, k, c, t_total) = (spec.n_stocks, spec.k_true, spec.n_chars, spec.t_total);
    let mut rng = Rng::derived(spec.seed, "synthetic");
    let w_true = match &spec.w_true {
        Some(w) => w.clone(),
        None => {
            let sd = spec.beta_scale / (c as f64).sqrt();
            let data = rng.normals(k * c).into_iter().map(|z| z * sd).collect();
            Tensor::new(vec![k, c], data)?
        }
    };
    let innovation = (1.0 - spec.rho * spec.rho).sqrt();
    let mut x = rng.normals(n * c);
    let dates: Vec<YearMonth> = (0..t_total).map(|t| spec.start.add_months(t as i64)).collect();
    let width = (n.max(10) as f64).log10().ceil() as usize;
    let tickers: Vec<String> = (0..n).map(|i| format!("S{:0width$}", i + 1)).collect();
    let mut panel = PanelDataset::new(dates, tickers, c)?;
    let mut truth = GroundTruth {
        factors: Vec::with_capacity(t_total),
        betas: Vec::with_capacity(t_total),
        w_true: w_true.clone(),
        signal: Vec::with_capacity(t_total),
    };
    for t in 0..t_total {
        let mut beta = vec![0.0; n * k];
        for i in 0..n {
            let xi = &x[i * c..(i + 1) * c];
            for j in 0..k {
                let dot: f64 = w_true.row(j).iter().zip(xi).map(|(w, v)| w * v).sum();
                beta[i * k + j] = spec.beta_intercept + dot;
            }
            if t > 0 {
                for (kk, v) in xi.iter().enumerate() {
                    panel.set_characteristic(t, i, kk, Some(*v))?;
                }
            }
        }
        let f: Vec<f64> = rng.normals(k).into_iter().map(|z| z * spec.sigma_f).collect();
        let u = rng.normals(n);
        let mut signal = Vec::with_capacity(n);
        for i in 0..n {
            let s: f64 = (0..k).map(|j| beta[i * k + j] * f[j]).sum();
            signal.push(s);
            panel.set_return(t, i, Some(s + spec.sigma_u * u[i]))?;
        }
        let shocks = rng.normals(n * c);
        for (v, e) in x.iter_mut().zip(shocks) {
            *v = spec.rho * *v + innovation * e;
        }
        truth.factors.push(f);
        truth.betas.push(Tensor::new(vec![n, k], beta)?);
        truth.signal.push(signal);
    }
    Ok((panel, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_stocks: 6,
            k_true: 2,
            n_chars: 3,
            t_total: 24,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_returns_equal_beta_times_factor() {
        let spec = SyntheticSpec { sigma_u: 0.0, ..small() };
        let (p, g) = generate_synthetic(&spec).unwrap();
        for t in 0..spec.t_total {
            for i in 0..spec.n_stocks {
                let want: f64 = (0..2).map(|j| g.betas[t].at(i, j) * g.factors[t][j]).sum();
                assert_eq!(p.ret(t, i), Some(want));
            }
        }
    }

    #[test]
    fn unit_beta_single_factor_moves_all_stocks_together() {
        let spec = SyntheticSpec {
            sigma_u: 0.0,
            k_true: 1,
            beta_scale: 0.0,
            beta_intercept: 1.0,
            ..small()
        };
        let (p, _) = generate_synthetic(&spec).unwrap();
        for t in 0..spec.t_total {
            let r = p.returns_at(t);
            assert!(r.iter().all(|v| *v == r[0]));
        }
    }

    #[test]
    fn betas_follow_lagged_characteristics() {
        let spec = small();
        let (p, g) = generate_synthetic(&spec).unwrap();
        for t in 1..spec.t_total {
            for i in 0..spec.n_stocks {
                for j in 0..spec.k_true {
                    let dot: f64 = (0..spec.n_chars)
                        .map(|k| g.w_true.at(j, k) * p.characteristic(t, i, k).unwrap())
                        .sum();
                    assert!((g.betas[t].at(i, j) - spec.beta_intercept - dot).abs() < 1e-12);
                }
            }
        }
        assert!(!p.has_any_characteristic(0, 0));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SyntheticSpec { sigma_u: -0.1, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { sigma_f: 0.0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { rho: 1.0, ..small() }).is_err());
        let w = Tensor::zeros(&[3, 3]);
        assert!(generate_synthetic(&SyntheticSpec { w_true: Some(w), ..small() }).is_err());
    }

    #[test]
    fn characteristics_have_unit_variance() {
        let spec = SyntheticSpec {
            n_stocks: 200,
            n_chars: 2,
            t_total: 100,
            ..Default::default()
        };
        let (p, _) = generate_synthetic(&spec).unwrap();
        let mut v = Vec::new();
        for t in 1..100 {
            for i in 0..200 {
                v.push(p.characteristic(t, i, 0).unwrap());
            }
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn same_seed_same_panel(seed in 0u64..10_000) {
            let spec = SyntheticSpec { seed, ..small() };
            prop_assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        }
    }
}
