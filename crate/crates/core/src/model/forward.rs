use super::{bind_store, Dims, RvraeModel};
use crate::beta_net::beta_from_characteristics;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::factor_net::{decode_sequence, encode_sequence, prior_from_hidden, reparameterize, GaussianVars};
use crate::numerics::{gaussian_kl, LatentGaussian, OpKind, ParamStore, Rng, Tape, Tensor, Var};

/// Scalar pieces of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(reconstruction: f64, kl: f64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            reconstruction,
            kl,
            lambda,
            total: reconstruction + lambda * kl,
        })
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("`lambda` must be finite and non-negative, got {lambda}")));
    }
    Ok(())
}

/// Reference evaluation of the objective from plain values.
///
/// `reconstructions[l][t]` is the `l`-th sampled reconstruction of
/// `returns[t]`; masked cells are excluded.
pub fn compute_loss(
    returns: &[Vec<f64>],
    mask: &[Vec<f64>],
    reconstructions: &[Vec<Vec<f64>>],
    posteriors: &[LatentGaussian],
    priors: &[LatentGaussian],
    lambda: f64,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    if reconstructions.is_empty() {
        return Err(Error::Config("at least one reconstruction sample is required".into()));
    }
    if posteriors.is_empty() || posteriors.len() != priors.len() {
        return Err(Error::Alignment(format!(
            "{} posteriors vs {} priors",
            posteriors.len(),
            priors.len()
        )));
    }
    let t_len = returns.len();
    let mut reconstruction = 0.0;
    for sample in reconstructions {
        if sample.len() != t_len || mask.len() != t_len {
            return Err(Error::Alignment("reconstruction length differs from returns".into()));
        }
        let mut per_t = 0.0;
        for t in 0..t_len {
            let (r, m, p) = (&returns[t], &mask[t], &sample[t]);
            if r.len() != p.len() || r.len() != m.len() {
                return Err(Error::dim("compute_loss", &[r.len()], &[p.len()]));
            }
            per_t += (0..r.len()).map(|i| m[i] * (r[i] - p[i]).powi(2)).sum::<f64>();
        }
        reconstruction += per_t / t_len as f64;
    }
    reconstruction /= reconstructions.len() as f64;
    let mut kl = 0.0;
    for (q, p) in posteriors.iter().zip(priors) {
        kl += gaussian_kl(q, p)?;
    }
    kl /= posteriors.len() as f64;
    LossBreakdown::new(reconstruction, kl, lambda)
}

/// How the latent `z_T` is drawn in a forward pass.
pub enum Sampling<'a> {
    /// `L` reparameterized draws from the posterior.
    Random { rng: &'a mut Rng, samples: usize },
    /// The posterior mean, i.e. `ε = 0`, once.
    Mean,
}

/// Everything produced by one forward pass over a window.
pub struct ForwardOutput {
    pub tape: Tape,
    /// `reconstruction + λ·kl` on the tape.
    pub total: Var,
    /// `total` plus the likelihood of the return-distribution heads; the
    /// quantity the optimizer descends.
    pub objective: Var,
    pub loss: LossBreakdown,
    pub risk_nll: f64,
    /// `predicted[l][t] = β̂_t f̂_t` for sample `l`.
    pub predicted: Vec<Vec<Tensor>>,
    pub factors: Vec<Vec<Tensor>>,
    pub betas: Vec<Tensor>,
    pub posteriors: Vec<LatentGaussian>,
    pub priors: Vec<LatentGaussian>,
}

pub(crate) struct Graph {
    pub total: Var,
    pub objective: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub risk_nll: Var,
    pub predicted: Vec<Vec<Var>>,
    pub factors: Vec<Vec<Var>>,
    pub betas: Vec<Var>,
    pub posteriors: Vec<GaussianVars>,
    pub priors: Vec<GaussianVars>,
}

fn check_window(dims: &Dims, window: &Window) -> Result<()> {
    if window.len() != dims.window {
        return Err(Error::Alignment(format!(
            "window has {} slots, model expects {}",
            window.len(),
            dims.window
        )));
    }
    if window.n_stocks() != dims.n_stocks {
        return Err(Error::dim("forward_train", &[dims.n_stocks], &[window.n_stocks()]));
    }
    if window.characteristics.len() != window.len() || window.mask.len() != window.len() {
        return Err(Error::Alignment("window slots are ragged".into()));
    }
    for x in &window.characteristics {
        if x.shape() != [dims.n_stocks, dims.n_chars] {
            return Err(Error::dim("forward_train", &[dims.n_stocks, dims.n_chars], x.shape()));
        }
    }
    Ok(())
}

/// Builds the whole training graph on `tape` with one latent noise vector
/// per sample in `eps`.
pub(crate) fn build_graph(
    tape: &mut Tape,
    store: &ParamStore,
    dims: &Dims,
    window: &Window,
    lambda: f64,
    eps: &[Tensor],
) -> Result<Graph> {
    check_lambda(lambda)?;
    check_window(dims, window)?;
    if eps.is_empty() {
        return Err(Error::Config("at least one latent sample is required".into()));
    }
    let b = bind_store(tape, store)?;
    let t_len = window.len() as f64;
    let returns: Vec<Var> = window
        .returns
        .iter()
        .map(|r| tape.constant(Tensor::from_raw(vec![r.len()], r.clone())))
        .collect();
    let chars: Vec<Var> = window.characteristics.iter().map(|x| tape.constant(x.clone())).collect();

    let enc = encode_sequence(tape, &returns, &b.encoder)?;
    let mut priors = Vec::with_capacity(returns.len());
    let mut h_prev = tape.constant(Tensor::zeros(&[dims.hidden]));
    for &h in &enc.hidden {
        priors.push(prior_from_hidden(tape, h_prev, &b.prior)?);
        h_prev = h;
    }
    let mut kl_terms = Vec::with_capacity(returns.len());
    for (q, p) in enc.posteriors.iter().zip(&priors) {
        kl_terms.push(tape.gaussian_kl(q.mean, q.log_variance, p.mean, p.log_variance)?);
    }
    let kl_sum = sum_all(tape, &kl_terms)?;
    let kl = tape.scale(kl_sum, 1.0 / t_len);

    let betas = beta_from_characteristics(tape, &chars, &b.beta)?;
    let z_dist = *enc.posteriors.last().expect("non-empty window");
    let samples = eps.len() as f64;
    let mut recon_terms = Vec::new();
    let mut nll_terms = Vec::new();
    let mut predicted = Vec::with_capacity(eps.len());
    let mut factors = Vec::with_capacity(eps.len());
    for e in eps {
        let z = reparameterize(tape, z_dist, e.clone())?;
        let dec = decode_sequence(tape, z, &returns, &b.decoder)?;
        let mut preds = Vec::with_capacity(returns.len());
        for (t, (&f, &beta)) in dec.factors.iter().zip(&betas).enumerate() {
            let r_hat = tape.affine(f, beta, None)?;
            recon_terms.push(tape.squared_error(r_hat, &window.returns[t], &window.mask[t])?);
            let g = dec.recon[t];
            nll_terms.push(tape.gaussian_nll(g.mean, g.log_variance, &window.returns[t], &window.mask[t])?);
            preds.push(r_hat);
        }
        predicted.push(preds);
        factors.push(dec.factors);
    }
    let rs = sum_all(tape, &recon_terms)?;
    let reconstruction = tape.scale(rs, 1.0 / (t_len * samples));
    let ns = sum_all(tape, &nll_terms)?;
    let risk_nll = tape.scale(ns, 1.0 / (t_len * samples));
    let weighted = tape.scale(kl, lambda);
    let total = tape.add(reconstruction, weighted)?;
    let objective = tape.add(total, risk_nll)?;
    Ok(Graph {
        total,
        objective,
        reconstruction,
        kl,
        risk_nll,
        predicted,
        factors,
        betas,
        posteriors: enc.posteriors,
        priors,
    })
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Posterior path over one window: encode the returns, draw `z_T`, decode
/// with teacher forcing, and combine with the LSTM betas.
pub fn forward_train(model: &RvraeModel, window: &Window, lambda: f64, sampling: Sampling<'_>) -> Result<ForwardOutput> {
    let k = model.dims.n_factors;
    let eps = match sampling {
        Sampling::Mean => vec![Tensor::zeros(&[k])],
        Sampling::Random { rng, samples } => {
            if samples == 0 {
                return Err(Error::Config("`mc_samples` must be at least 1".into()));
            }
            (0..samples).map(|_| rng.standard_normal(&[k])).collect()
        }
    };
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, &model.params, &model.dims, window, lambda, &eps)?;
    tape.check_finite()?;
    let read = |vs: &[Var], tape: &Tape| vs.iter().map(|v| tape.value(*v).clone()).collect::<Vec<_>>();
    Ok(ForwardOutput {
        loss: LossBreakdown {
            reconstruction: tape.value(g.reconstruction).item(),
            kl: tape.value(g.kl).item(),
            lambda,
            total: tape.value(g.total).item(),
        },
        risk_nll: tape.value(g.risk_nll).item(),
        predicted: g.predicted.iter().map(|p| read(p, &tape)).collect(),
        factors: g.factors.iter().map(|f| read(f, &tape)).collect(),
        betas: read(&g.betas, &tape),
        posteriors: g.posteriors.iter().map(|p| p.read(&tape)).collect(),
        priors: g.priors.iter().map(|p| p.read(&tape)).collect(),
        total: g.total,
        objective: g.objective,
        tape,
    })
}

/// Finite-difference check of the total loss gradient for every parameter,
/// with the latent noise fixed from `noise_seed`. The return-distribution
/// heads do not enter the total, so their entries are zero.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradcheck(
    model: &RvraeModel,
    window: &Window,
    lambda: f64,
    noise_seed: u64,
    exec: crate::Exec,
    step: f64,
    tol: f64,
    corrupt: Option<OpKind>,
) -> Result<crate::numerics::GradCheckReport> {
    let mut rng = Rng::derived(noise_seed, "gradcheck-noise");
    let eps = vec![rng.standard_normal(&[model.dims.n_factors])];
    let dims = model.dims;
    crate::numerics::grad_check(exec, &model.params, step, tol, |store, tape| {
        if let Some(op) = corrupt {
            tape.corrupt_backward(op);
        }
        Ok(build_graph(tape, store, &dims, window, lambda, &eps)?.total)
    })
}
