use super::forward::build_graph;
use super::{bind_store, RvraeModel};
use crate::beta_net::beta_from_characteristics;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::factor_net::{decode_sequence, decode_step, encode_sequence, prior_from_hidden, reparameterize};
use crate::numerics::{Rng, Tape, Tensor, Var};

/// Latent draws used to propagate prior uncertainty into return risk.
pub const RISK_SAMPLES: usize = 64;

/// One-month-ahead forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `β̂ · f̂`, one entry per stock.
    pub expected_returns: Tensor,
    /// Standard deviation from the decoder's return-distribution heads.
    pub return_stddev: Tensor,
    /// Head variance plus the spread of `β̂ f̂` across latent draws from
    /// the prior.
    pub total_stddev: Tensor,
    pub factors: Tensor,
    pub betas: Tensor,
}

/// In-sample fit of the last slot of a window through the posterior mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Fitted {
    pub returns: Tensor,
    pub factors: Tensor,
    pub betas: Tensor,
}

fn last_slots(model: &RvraeModel, window: &Window) -> Result<Window> {
    let t = model.dims.window;
    if window.len() < t {
        return Err(Error::Alignment(format!(
            "history of {} months is shorter than the window of {t}",
            window.len()
        )));
    }
    let skip = window.len() - t;
    Ok(Window {
        returns: window.returns[skip..].to_vec(),
        mask: window.mask[skip..].to_vec(),
        characteristics: window.characteristics[skip..].to_vec(),
        end: window.end,
    })
}

/// Contemporaneous fit `β̂_T f̂_T` with `z_T` at the posterior mean.
pub fn fit_window(model: &RvraeModel, window: &Window) -> Result<Fitted> {
    let window = last_slots(model, window)?;
    let mut tape = Tape::new();
    let eps = [Tensor::zeros(&[model.dims.n_factors])];
    let g = build_graph(&mut tape, &model.params, &model.dims, &window, 0.0, &eps)?;
    tape.check_finite()?;
    Ok(Fitted {
        returns: tape.value(*g.predicted[0].last().expect("non-empty")).clone(),
        factors: tape.value(*g.factors[0].last().expect("non-empty")).clone(),
        betas: tape.value(*g.betas.last().expect("non-empty")).clone(),
    })
}

/// Forecast for the month after the window.
///
/// Only the predictor path runs: the encoder summarizes the historical
/// returns, the prior network maps its last state to `z`, and the decoder
/// replays the history, then takes one more step fed with its own return
/// mean for the last month to produce `f̂` and the return distribution for
/// the target month. Betas come from the
/// characteristic history. Nothing outside `window` is read.
pub fn predict(model: &RvraeModel, window: &Window) -> Result<Prediction> {
    let window = last_slots(model, window)?;
    let dims = model.dims;
    if window.n_stocks() != dims.n_stocks {
        return Err(Error::dim("predict", &[dims.n_stocks], &[window.n_stocks()]));
    }
    let mut tape = Tape::new();
    let b = bind_store(&mut tape, &model.params)?;
    let returns: Vec<Var> = window
        .returns
        .iter()
        .map(|r| tape.constant(Tensor::from_raw(vec![r.len()], r.clone())))
        .collect();
    let chars: Vec<Var> = window.characteristics.iter().map(|x| tape.constant(x.clone())).collect();
    let enc = encode_sequence(&mut tape, &returns, &b.encoder)?;
    let prior = prior_from_hidden(&mut tape, *enc.hidden.last().expect("non-empty"), &b.prior)?;
    let betas = *beta_from_characteristics(&mut tape, &chars, &b.beta)?
        .last()
        .expect("non-empty");

    let forecast = |tape: &mut Tape, z: Var| -> Result<(Var, Var, Var)> {
        let dec = decode_sequence(tape, z, &returns, &b.decoder)?;
        let h = *dec.hidden.last().expect("non-empty");
        let last = *dec.recon.last().expect("non-empty");
        let (_, f, head) = decode_step(tape, h, last.mean, &b.decoder)?;
        let r_hat = tape.affine(f, betas, None)?;
        Ok((f, r_hat, head.log_variance))
    };

    let (f, r_hat, logvar) = forecast(&mut tape, prior.mean)?;
    let mut rng = Rng::derived(0, "predict-risk");
    let n = dims.n_stocks;
    let mut draws = Vec::with_capacity(RISK_SAMPLES);
    let mut head_var = vec![0.0; n];
    for _ in 0..RISK_SAMPLES {
        let eps = rng.standard_normal(&[dims.n_factors]);
        let z = reparameterize(&mut tape, prior, eps)?;
        let (_, r_s, lv_s) = forecast(&mut tape, z)?;
        draws.push(tape.value(r_s).data().to_vec());
        for (acc, lv) in head_var.iter_mut().zip(tape.value(lv_s).data()) {
            *acc += lv.exp() / RISK_SAMPLES as f64;
        }
    }
    tape.check_finite()?;
    let s = RISK_SAMPLES as f64;
    let total: Vec<f64> = (0..n)
        .map(|i| {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / s;
            let var = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (s - 1.0);
            (var + head_var[i]).sqrt()
        })
        .collect();
    let head_sd: Vec<f64> = tape.value(logvar).data().iter().map(|l| (0.5 * l).exp()).collect();
    Ok(Prediction {
        expected_returns: tape.value(r_hat).clone(),
        return_stddev: Tensor::new(vec![n], head_sd)?,
        total_stddev: Tensor::new(vec![n], total)?,
        factors: tape.value(f).clone(),
        betas: tape.value(betas).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::tests::random_window;
    use crate::model::Dims;

    #[test]
    fn expected_returns_are_beta_times_factors() {
        let dims = Dims::new(5, 2, 3, 3, 4);
        let model = RvraeModel::new(dims, 1).unwrap();
        let p = predict(&model, &random_window(&dims, 2)).unwrap();
        for i in 0..5 {
            let want: f64 = (0..2).map(|k| p.betas.at(i, k) * p.factors.data()[k]).sum();
            assert_eq!(p.expected_returns.data()[i], want);
        }
        assert!(p.return_stddev.data().iter().all(|s| *s > 0.0));
        assert!(p.total_stddev.data().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn deterministic_and_short_history_rejected() {
        let dims = Dims::new(5, 2, 3, 3, 4);
        let model = RvraeModel::new(dims, 1).unwrap();
        let w = random_window(&dims, 2);
        assert_eq!(predict(&model, &w).unwrap(), predict(&model, &w).unwrap());
        let short = random_window(&Dims::new(5, 2, 3, 3, 3), 2);
        assert!(matches!(predict(&model, &short), Err(Error::Alignment(_))));
    }

    #[test]
    fn zero_prior_ignores_posterior_parameters() {
        let dims = Dims::new(4, 2, 3, 3, 3);
        let mut model = RvraeModel::new(dims, 1).unwrap();
        for name in ["prior.w_mu", "prior.b_mu", "prior.w_logvar", "prior.b_logvar"] {
            model.params.value_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
        let w = random_window(&dims, 3);
        let base = predict(&model, &w).unwrap();
        for name in ["encoder.w_mu", "encoder.b_mu", "encoder.w_logvar", "encoder.b_logvar"] {
            model.params.value_mut(name).unwrap().iter_mut().for_each(|v| *v += 0.37);
        }
        assert_eq!(predict(&model, &w).unwrap(), base);
    }

    #[test]
    fn fit_uses_last_slot() {
        let dims = Dims::new(4, 2, 3, 3, 3);
        let model = RvraeModel::new(dims, 1).unwrap();
        let w = random_window(&dims, 3);
        let fit = fit_window(&model, &w).unwrap();
        let out = super::super::forward_train(&model, &w, 0.0, super::super::Sampling::Mean).unwrap();
        assert_eq!(fit.returns, out.predicted[0][2]);
        assert_eq!(fit.betas, out.betas[2]);
    }
}
