//! Recurrent variational factor network.
//!
//! The encoder runs a tanh RNN over the cross-sectional return vectors and
//! emits a Gaussian posterior over the latent `z_t` at every step. The prior
//! network maps the previous encoder state to a Gaussian over `z_t` without
//! looking at `r_t`. The decoder is seeded once with the final-step latent,
//! then unrolls its own RNN over the conditioning returns and emits the
//! latent factors `f̂_t ∈ (0, 1)^K` plus a Gaussian over the returns.

use crate::error::{Error, Result};
use crate::model::Dims;
use crate::numerics::{init_uniform, ParamStore, Rng, Tape, Tensor, Var};

pub use crate::numerics::LatentGaussian;

/// A diagonal Gaussian living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GaussianVars {
    pub mean: Var,
    pub log_variance: Var,
}

impl GaussianVars {
    pub fn read(&self, tape: &Tape) -> LatentGaussian {
        LatentGaussian {
            mean: tape.value(self.mean).clone(),
            log_variance: tape.value(self.log_variance).clone(),
        }
    }
}

fn register(store: &mut ParamStore, rng: &mut Rng, name: &str, rows: usize, cols: usize) -> Result<()> {
    store.insert(name, init_uniform(rng, &[rows, cols], cols))
}

fn register_bias(store: &mut ParamStore, name: &str, len: usize) -> Result<()> {
    store.insert(name, Tensor::zeros(&[len]))
}

fn expect_len(tape: &Tape, v: Var, len: usize, op: &'static str) -> Result<()> {
    let s = tape.shape(v);
    if s != [len] {
        return Err(Error::dim(op, &[len], s));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub w_in: Var,
    pub w_encoder: Var,
    pub b_encoder: Var,
    pub w_mu: Var,
    pub b_mu: Var,
    pub w_logvar: Var,
    pub b_logvar: Var,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, dims: &Dims, rng: &mut Rng) -> Result<()> {
        let (n, k, h) = (dims.n_stocks, dims.n_factors, dims.hidden);
        register(store, rng, "encoder.w_in", h, n)?;
        register(store, rng, "encoder.w_encoder", h, h)?;
        register_bias(store, "encoder.b_encoder", h)?;
        register(store, rng, "encoder.w_mu", k, h)?;
        register_bias(store, "encoder.b_mu", k)?;
        register(store, rng, "encoder.w_logvar", k, h)?;
        register_bias(store, "encoder.b_logvar", k)
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_in: tape.param(store, "encoder.w_in")?,
            w_encoder: tape.param(store, "encoder.w_encoder")?,
            b_encoder: tape.param(store, "encoder.b_encoder")?,
            w_mu: tape.param(store, "encoder.w_mu")?,
            b_mu: tape.param(store, "encoder.b_mu")?,
            w_logvar: tape.param(store, "encoder.w_logvar")?,
            b_logvar: tape.param(store, "encoder.b_logvar")?,
        })
    }
}

/// One tanh hidden layer over `h_{t-1}`, then linear mean and log-variance
/// heads.
#[derive(Clone, Copy, Debug)]
pub struct PriorParams {
    pub w_hidden: Var,
    pub b_hidden: Var,
    pub w_mu: Var,
    pub b_mu: Var,
    pub w_logvar: Var,
    pub b_logvar: Var,
}

impl PriorParams {
    pub fn register(store: &mut ParamStore, dims: &Dims, rng: &mut Rng) -> Result<()> {
        let (k, h) = (dims.n_factors, dims.hidden);
        register(store, rng, "prior.w_hidden", h, h)?;
        register_bias(store, "prior.b_hidden", h)?;
        register(store, rng, "prior.w_mu", k, h)?;
        register_bias(store, "prior.b_mu", k)?;
        register(store, rng, "prior.w_logvar", k, h)?;
        register_bias(store, "prior.b_logvar", k)
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_hidden: tape.param(store, "prior.w_hidden")?,
            b_hidden: tape.param(store, "prior.b_hidden")?,
            w_mu: tape.param(store, "prior.w_mu")?,
            b_mu: tape.param(store, "prior.b_mu")?,
            w_logvar: tape.param(store, "prior.w_logvar")?,
            b_logvar: tape.param(store, "prior.b_logvar")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderParams {
    pub w_z: Var,
    pub b_z: Var,
    pub w_decoder: Var,
    pub w_r: Var,
    pub b_decoder: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub w_mu_r: Var,
    pub b_mu_r: Var,
    pub w_logvar_r: Var,
    pub b_logvar_r: Var,
}

impl DecoderParams {
    pub fn register(store: &mut ParamStore, dims: &Dims, rng: &mut Rng) -> Result<()> {
        let (n, k, h) = (dims.n_stocks, dims.n_factors, dims.hidden);
        register(store, rng, "decoder.w_z", h, k)?;
        register_bias(store, "decoder.b_z", h)?;
        register(store, rng, "decoder.w_decoder", h, h)?;
        register(store, rng, "decoder.w_r", h, n)?;
        register_bias(store, "decoder.b_decoder", h)?;
        register(store, rng, "decoder.w_out", k, h)?;
        register_bias(store, "decoder.b_out", k)?;
        register(store, rng, "decoder.w_mu_r", n, h)?;
        register_bias(store, "decoder.b_mu_r", n)?;
        register(store, rng, "decoder.w_logvar_r", n, h)?;
        register_bias(store, "decoder.b_logvar_r", n)
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            w_z: tape.param(store, "decoder.w_z")?,
            b_z: tape.param(store, "decoder.b_z")?,
            w_decoder: tape.param(store, "decoder.w_decoder")?,
            w_r: tape.param(store, "decoder.w_r")?,
            b_decoder: tape.param(store, "decoder.b_decoder")?,
            w_out: tape.param(store, "decoder.w_out")?,
            b_out: tape.param(store, "decoder.b_out")?,
            w_mu_r: tape.param(store, "decoder.w_mu_r")?,
            b_mu_r: tape.param(store, "decoder.b_mu_r")?,
            w_logvar_r: tape.param(store, "decoder.w_logvar_r")?,
            b_logvar_r: tape.param(store, "decoder.b_logvar_r")?,
        })
    }
}

pub struct EncodedSequence {
    pub posteriors: Vec<GaussianVars>,
    /// `h_1..h_T`; `h_0` is the zero vector.
    pub hidden: Vec<Var>,
}

/// `h_t = tanh(W_enc h_{t-1} + W_in r_t + b)`, `μ_t = W_μ h_t + b_μ`,
/// `log σ²_t = W_σ h_t + b_σ`, starting from `h_0 = 0`.
pub fn encode_sequence(tape: &mut Tape, returns: &[Var], p: &EncoderParams) -> Result<EncodedSequence> {
    if returns.is_empty() {
        return Err(Error::Alignment("encode_sequence needs at least one step".into()));
    }
    let hidden_len = tape.shape(p.w_encoder)[0];
    let n = tape.shape(p.w_in)[1];
    let mut h = tape.constant(Tensor::zeros(&[hidden_len]));
    let mut out = EncodedSequence {
        posteriors: Vec::with_capacity(returns.len()),
        hidden: Vec::with_capacity(returns.len()),
    };
    for &r in returns {
        expect_len(tape, r, n, "encode_sequence")?;
        let rec = tape.affine(h, p.w_encoder, Some(p.b_encoder))?;
        let inp = tape.affine(r, p.w_in, None)?;
        let pre = tape.add(rec, inp)?;
        h = tape.tanh(pre);
        let mean = tape.affine(h, p.w_mu, Some(p.b_mu))?;
        let log_variance = tape.affine(h, p.w_logvar, Some(p.b_logvar))?;
        out.posteriors.push(GaussianVars { mean, log_variance });
        out.hidden.push(h);
    }
    Ok(out)
}

/// Prior over `z_t` from the previous encoder state only.
pub fn prior_from_hidden(tape: &mut Tape, h_prev: Var, p: &PriorParams) -> Result<GaussianVars> {
    expect_len(tape, h_prev, tape.shape(p.w_hidden)[1], "prior_from_hidden")?;
    let pre = tape.affine(h_prev, p.w_hidden, Some(p.b_hidden))?;
    let hid = tape.tanh(pre);
    let mean = tape.affine(hid, p.w_mu, Some(p.b_mu))?;
    let log_variance = tape.affine(hid, p.w_logvar, Some(p.b_logvar))?;
    Ok(GaussianVars { mean, log_variance })
}

/// `z = μ + exp(½ log σ²) ⊙ ε`; `eps` enters as a constant.
pub fn reparameterize(tape: &mut Tape, g: GaussianVars, eps: Tensor) -> Result<Var> {
    let k = tape.shape(g.mean)[0];
    if eps.shape() != [k] {
        return Err(Error::dim("reparameterize", &[k], eps.shape()));
    }
    let half = tape.scale(g.log_variance, 0.5);
    let sd = tape.exp(half);
    let e = tape.constant(eps);
    let noise = tape.mul(sd, e)?;
    tape.add(g.mean, noise)
}

/// Gaussian over the next return vector read from a decoder state.
///
/// The heads see a detached copy of `h`: they are fit by their own
/// likelihood term and do not feed gradients back into the factor path.
pub fn recon_head(tape: &mut Tape, h: Var, p: &DecoderParams) -> Result<GaussianVars> {
    let hd = tape.detach(h);
    let mean = tape.affine(hd, p.w_mu_r, Some(p.b_mu_r))?;
    let log_variance = tape.affine(hd, p.w_logvar_r, Some(p.b_logvar_r))?;
    Ok(GaussianVars { mean, log_variance })
}

/// One decoder step: returns `(h_t, f̂_t, recon_t)`.
pub fn decode_step(tape: &mut Tape, h_prev: Var, r: Var, p: &DecoderParams) -> Result<(Var, Var, GaussianVars)> {
    expect_len(tape, r, tape.shape(p.w_r)[1], "decode_sequence")?;
    let rec = tape.affine(h_prev, p.w_decoder, Some(p.b_decoder))?;
    let inp = tape.affine(r, p.w_r, None)?;
    let pre = tape.add(rec, inp)?;
    let h = tape.tanh(pre);
    let logits = tape.affine(h, p.w_out, Some(p.b_out))?;
    let factors = tape.sigmoid(logits);
    let recon = recon_head(tape, h, p)?;
    Ok((h, factors, recon))
}

pub struct DecodedSequence {
    pub factors: Vec<Var>,
    pub recon: Vec<GaussianVars>,
    /// `h_0..h_T`, including the seed state.
    pub hidden: Vec<Var>,
}

/// Seeds `h_0 = tanh(W_z z + b_z)` and unrolls the decoder over the
/// conditioning returns.
pub fn decode_sequence(tape: &mut Tape, z: Var, returns: &[Var], p: &DecoderParams) -> Result<DecodedSequence> {
    if returns.is_empty() {
        return Err(Error::Alignment("decode_sequence needs at least one step".into()));
    }
    expect_len(tape, z, tape.shape(p.w_z)[1], "decode_sequence")?;
    let seed = tape.affine(z, p.w_z, Some(p.b_z))?;
    let mut h = tape.tanh(seed);
    let mut out = DecodedSequence {
        factors: Vec::with_capacity(returns.len()),
        recon: Vec::with_capacity(returns.len()),
        hidden: vec![h],
    };
    for &r in returns {
        let (next, f, recon) = decode_step(tape, h, r, p)?;
        h = next;
        out.factors.push(f);
        out.recon.push(recon);
        out.hidden.push(h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::numerics::grad_check;

    fn dims(n: usize, k: usize, h: usize) -> Dims {
        Dims {
            n_stocks: n,
            n_factors: k,
            hidden: h,
            n_chars: 1,
            beta_hidden: k,
            window: 2,
        }
    }

    fn store(d: &Dims, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = Rng::new(seed);
        EncoderParams::register(&mut s, d, &mut rng).unwrap();
        PriorParams::register(&mut s, d, &mut rng).unwrap();
        DecoderParams::register(&mut s, d, &mut rng).unwrap();
        s
    }

    fn zeroed(d: &Dims) -> ParamStore {
        let mut s = store(d, 0);
        let names: Vec<String> = s.names().map(str::to_string).collect();
        for n in names {
            s.value_mut(&n).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
        s
    }

    fn set(s: &mut ParamStore, name: &str, vals: &[f64]) {
        s.value_mut(name).unwrap().copy_from_slice(vals);
    }

    fn consts(tape: &mut Tape, xs: &[Vec<f64>]) -> Vec<Var> {
        xs.iter().map(|x| tape.constant(Tensor::vector(x.clone()).unwrap())).collect()
    }

    #[test]
    fn zero_encoder_is_standard_normal() {
        let d = dims(3, 2, 4);
        let s = zeroed(&d);
        let mut tape = Tape::new();
        let enc = EncoderParams::bind(&mut tape, &s).unwrap();
        let r = consts(&mut tape, &[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 1.0]]);
        let out = encode_sequence(&mut tape, &r, &enc).unwrap();
        for (h, q) in out.hidden.iter().zip(&out.posteriors) {
            assert!(tape.value(*h).data().iter().all(|v| *v == 0.0));
            assert_eq!(q.read(&tape), LatentGaussian::standard(2));
        }
    }

    #[test]
    fn single_unit_encoder_by_hand() {
        let d = dims(1, 1, 1);
        let mut s = zeroed(&d);
        set(&mut s, "encoder.w_in", &[1.0]);
        set(&mut s, "encoder.w_mu", &[0.7]);
        let mut tape = Tape::new();
        let enc = EncoderParams::bind(&mut tape, &s).unwrap();
        let r = consts(&mut tape, &[vec![0.5]]);
        let out = encode_sequence(&mut tape, &r, &enc).unwrap();
        let h1 = tape.value(out.hidden[0]).item();
        assert!((h1 - 0.5f64.tanh()).abs() < 1e-15);
        assert!((h1 - 0.462117).abs() < 1e-6);
        assert!((tape.value(out.posteriors[0].mean).item() - 0.7 * h1).abs() < 1e-15);
    }

    #[test]
    fn recurrence_carries_state() {
        let d = dims(1, 1, 1);
        let mut s = zeroed(&d);
        set(&mut s, "encoder.w_in", &[1.0]);
        set(&mut s, "encoder.w_encoder", &[0.8]);
        let run = |xs: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let enc = EncoderParams::bind(&mut tape, &s).unwrap();
            let r = consts(&mut tape, xs);
            let out = encode_sequence(&mut tape, &r, &enc).unwrap();
            tape.value(out.hidden[1]).item()
        };
        let a = run(&[vec![1.0], vec![-1.0]]);
        let b = run(&[vec![-1.0], vec![1.0]]);
        assert!((a - b).abs() > 0.1, "{a} vs {b}");
    }

    #[test]
    fn encoder_errors() {
        let d = dims(2, 1, 2);
        let s = store(&d, 1);
        let mut tape = Tape::new();
        let enc = EncoderParams::bind(&mut tape, &s).unwrap();
        assert!(encode_sequence(&mut tape, &[], &enc).is_err());
        let r = consts(&mut tape, &[vec![1.0, 2.0, 3.0]]);
        assert!(matches!(encode_sequence(&mut tape, &r, &enc), Err(Error::Dimension { .. })));
    }

    #[test]
    fn prior_with_zero_params_is_standard() {
        let d = dims(2, 3, 4);
        let s = zeroed(&d);
        let mut tape = Tape::new();
        let pp = PriorParams::bind(&mut tape, &s).unwrap();
        let h = tape.constant(Tensor::vector(vec![0.9, -0.2, 0.1, 0.5]).unwrap());
        let g = prior_from_hidden(&mut tape, h, &pp).unwrap();
        assert_eq!(g.read(&tape), LatentGaussian::standard(3));
    }

    #[test]
    fn prior_at_zero_state_is_bias() {
        let d = dims(2, 2, 3);
        let mut s = store(&d, 5);
        set(&mut s, "prior.b_mu", &[0.3, -0.4]);
        set(&mut s, "prior.b_logvar", &[0.1, 0.2]);
        let mut tape = Tape::new();
        let pp = PriorParams::bind(&mut tape, &s).unwrap();
        let h = tape.constant(Tensor::zeros(&[3]));
        let g = prior_from_hidden(&mut tape, h, &pp).unwrap().read(&tape);
        assert_eq!(g.mean.data(), &[0.3, -0.4]);
        assert_eq!(g.log_variance.data(), &[0.1, 0.2]);
        let bad = tape.constant(Tensor::zeros(&[2]));
        assert!(prior_from_hidden(&mut tape, bad, &pp).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let mut tape = Tape::new();
        let g = GaussianVars {
            mean: tape.constant(Tensor::vector(vec![0.5]).unwrap()),
            log_variance: tape.constant(Tensor::vector(vec![0.01f64.ln()]).unwrap()),
        };
        let z0 = reparameterize(&mut tape, g, Tensor::zeros(&[1])).unwrap();
        assert_eq!(tape.value(z0).item(), 0.5);
        let z1 = reparameterize(&mut tape, g, Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!((tape.value(z1).item() - 0.6).abs() < 1e-15);
        assert!(reparameterize(&mut tape, g, Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn reparameterize_gradient_skips_eps() {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::vector(vec![0.2]).unwrap());
        let lv = tape.constant(Tensor::vector(vec![0.4]).unwrap());
        let z = reparameterize(&mut tape, GaussianVars { mean, log_variance: lv }, Tensor::vector(vec![1.5]).unwrap()).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(mean).unwrap(), &[1.0]);
        // d/dlv (exp(lv/2)·ε) = ½ exp(lv/2) ε
        assert!((g.wrt(lv).unwrap()[0] - 0.5 * 0.2f64.exp() * 1.5).abs() < 1e-15);
    }

    #[test]
    fn reparameterized_draws_average_to_mean() {
        let mut rng = Rng::new(11);
        let (mu, sd) = (0.3, 2.0_f64);
        let n = 100_000;
        let mut tape = Tape::new();
        let g = GaussianVars {
            mean: tape.constant(Tensor::vector(vec![mu]).unwrap()),
            log_variance: tape.constant(Tensor::vector(vec![(sd * sd).ln()]).unwrap()),
        };
        let mut total = 0.0;
        for _ in 0..n {
            let z = reparameterize(&mut tape, g, rng.standard_normal(&[1])).unwrap();
            total += tape.value(z).item();
        }
        let mean = total / n as f64;
        assert!((mean - mu).abs() < 4.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn decoder_zero_params_emit_half() {
        let d = dims(2, 3, 4);
        let s = zeroed(&d);
        let mut tape = Tape::new();
        let dec = DecoderParams::bind(&mut tape, &s).unwrap();
        let z = tape.constant(Tensor::vector(vec![5.0, -3.0, 1.0]).unwrap());
        let r = consts(&mut tape, &[vec![0.1, 0.2], vec![0.3, -0.4]]);
        let out = decode_sequence(&mut tape, z, &r, &dec).unwrap();
        for f in out.factors {
            assert_eq!(tape.value(f).data(), &[0.5, 0.5, 0.5]);
        }
    }

    #[test]
    fn decoder_seed_by_hand() {
        let d = dims(1, 1, 1);
        let mut s = zeroed(&d);
        set(&mut s, "decoder.w_z", &[1.0]);
        let mut tape = Tape::new();
        let dec = DecoderParams::bind(&mut tape, &s).unwrap();
        let z = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        let r = consts(&mut tape, &[vec![0.0]]);
        let out = decode_sequence(&mut tape, z, &r, &dec).unwrap();
        let h0 = tape.value(out.hidden[0]).item();
        assert!((h0 - 0.761594).abs() < 1e-6);
        assert!(decode_sequence(&mut tape, z, &[], &dec).is_err());
    }

    #[test]
    fn factor_net_forward_passes_gradcheck() {
        let d = dims(5, 2, 3);
        let s = store(&d, 21);
        let mut data_rng = Rng::new(3);
        let returns: Vec<Vec<f64>> = (0..4).map(|_| data_rng.normals(5)).collect();
        let eps = Rng::new(4).standard_normal(&[2]);
        let report = grad_check(Exec::Sequential, &s, 1e-5, 1e-4, |s, tape| {
            let enc = EncoderParams::bind(tape, s)?;
            let pri = PriorParams::bind(tape, s)?;
            let dec = DecoderParams::bind(tape, s)?;
            let r = consts(tape, &returns);
            let e = encode_sequence(tape, &r, &enc)?;
            let mut terms = Vec::new();
            let mut h_prev = tape.constant(Tensor::zeros(&[3]));
            for (q, h) in e.posteriors.iter().zip(&e.hidden) {
                let p = prior_from_hidden(tape, h_prev, &pri)?;
                terms.push(tape.gaussian_kl(q.mean, q.log_variance, p.mean, p.log_variance)?);
                h_prev = *h;
            }
            let z = reparameterize(tape, *e.posteriors.last().unwrap(), eps.clone())?;
            let out = decode_sequence(tape, z, &r, &dec)?;
            for f in &out.factors {
                terms.push(tape.sum(*f));
            }
            let mut acc = terms[0];
            for t in &terms[1..] {
                acc = tape.add(acc, *t)?;
            }
            Ok(acc)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
