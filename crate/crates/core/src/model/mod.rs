//! The full model: betas from the LSTM times factors from the variational
//! factor network, its training objective, the training loop and the
//! leakage-free forecasting path.

mod forward;
mod predict;
mod train;

pub use forward::{compute_loss, forward_train, loss_gradcheck, ForwardOutput, LossBreakdown, Sampling};
pub use predict::{fit_window, predict, Fitted, Prediction, RISK_SAMPLES};
pub use train::{evaluate_loss, train, EpochRecord, TrainConfig, TrainOutcome};

use crate::beta_net::LstmParams;
use crate::error::{Error, Result};
use crate::factor_net::{DecoderParams, EncoderParams, PriorParams};
use crate::numerics::{ParamStore, Rng, Tape};

const CHECKPOINT_MAGIC: &str = "rvrae-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// `N`, the width of the cross-sectional return vector.
    pub n_stocks: usize,
    /// `K`, latent factors.
    pub n_factors: usize,
    /// `H`, hidden size of the encoder, prior and decoder.
    pub hidden: usize,
    /// `C`, characteristics per stock.
    pub n_chars: usize,
    /// LSTM hidden size; equal to `K` unless a projection is wanted.
    pub beta_hidden: usize,
    /// `T`, months per window.
    pub window: usize,
}

impl Dims {
    pub fn new(n_stocks: usize, n_factors: usize, hidden: usize, n_chars: usize, window: usize) -> Self {
        Self {
            n_stocks,
            n_factors,
            hidden,
            n_chars,
            beta_hidden: n_factors,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_stocks", self.n_stocks),
            ("n_factors", self.n_factors),
            ("hidden", self.hidden),
            ("n_chars", self.n_chars),
            ("beta_hidden", self.beta_hidden),
            ("window", self.window),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if self.beta_hidden < self.n_factors {
            return Err(Error::Config("`beta_hidden` must be at least `n_factors`".into()));
        }
        Ok(())
    }

    fn header(&self) -> String {
        format!(
            "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION} n_stocks={} n_factors={} hidden={} n_chars={} beta_hidden={} window={}",
            self.n_stocks, self.n_factors, self.hidden, self.n_chars, self.beta_hidden, self.window
        )
    }

    fn from_header(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse { line: 1, message: m };
        let mut parts = line.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint".into()));
        }
        if parts.next() != Some(&format!("v{CHECKPOINT_VERSION}")) {
            return Err(bad("unsupported checkpoint version".into()));
        }
        let mut dims = Dims::new(0, 0, 0, 0, 0);
        dims.beta_hidden = 0;
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad field `{kv}`")))?;
            let v: usize = v.parse().map_err(|_| bad(format!("bad value in `{kv}`")))?;
            match k {
                "n_stocks" => dims.n_stocks = v,
                "n_factors" => dims.n_factors = v,
                "hidden" => dims.hidden = v,
                "n_chars" => dims.n_chars = v,
                "beta_hidden" => dims.beta_hidden = v,
                "window" => dims.window = v,
                _ => return Err(bad(format!("unknown field `{k}`"))),
            }
        }
        dims.validate().map_err(|e| bad(e.to_string()))?;
        Ok(dims)
    }
}

/// All learnable parameters plus the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct RvraeModel {
    pub dims: Dims,
    pub params: ParamStore,
}

/// Binds every parameter group of `store` onto `tape`.
pub(crate) fn bind_store(tape: &mut Tape, store: &ParamStore) -> Result<Bound> {
    Ok(Bound {
        encoder: EncoderParams::bind(tape, store)?,
        prior: PriorParams::bind(tape, store)?,
        decoder: DecoderParams::bind(tape, store)?,
        beta: LstmParams::bind(tape, store)?,
    })
}

/// Every parameter group bound onto one tape.
pub(crate) struct Bound {
    pub encoder: EncoderParams,
    pub prior: PriorParams,
    pub decoder: DecoderParams,
    pub beta: LstmParams,
}

impl RvraeModel {
    /// Fresh model; weights are uniform in `±1/√fan_in`, biases zero.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::derived(seed, "init");
        let mut params = ParamStore::new();
        EncoderParams::register(&mut params, &dims, &mut rng)?;
        PriorParams::register(&mut params, &dims, &mut rng)?;
        DecoderParams::register(&mut params, &dims, &mut rng)?;
        LstmParams::register(&mut params, &dims, &mut rng)?;
        Ok(Self { dims, params })
    }

    pub fn to_checkpoint(&self) -> String {
        self.params.to_checkpoint(&self.dims.header())
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (header, params) = ParamStore::from_checkpoint(text)?;
        let dims = Dims::from_header(&header)?;
        let reference = RvraeModel::new(dims, 0)?;
        let names: Vec<&str> = reference.params.names().collect();
        if names != params.names().collect::<Vec<_>>() {
            return Err(Error::Integrity("checkpoint parameters do not match its header".into()));
        }
        for (name, t) in reference.params.iter() {
            if params.get(name).map(|p| p.shape()) != Some(t.shape()) {
                return Err(Error::Integrity(format!("parameter `{name}` has the wrong shape")));
            }
        }
        Ok(Self { dims, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut dims = Dims::new(4, 2, 3, 5, 6);
        dims.beta_hidden = 3;
        let m = RvraeModel::new(dims, 7).unwrap();
        let back = RvraeModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.to_checkpoint(), back.to_checkpoint());
    }

    #[test]
    fn checkpoint_rejects_mismatched_header() {
        let m = RvraeModel::new(Dims::new(4, 2, 3, 5, 6), 7).unwrap();
        let text = m.to_checkpoint().replacen("n_stocks=4", "n_stocks=5", 1);
        assert!(RvraeModel::from_checkpoint(&text).is_err());
        assert!(RvraeModel::from_checkpoint("garbage\n").is_err());
    }

    #[test]
    fn dims_validation() {
        assert!(Dims::new(0, 2, 3, 4, 5).validate().is_err());
        let mut d = Dims::new(3, 2, 3, 4, 5);
        d.beta_hidden = 1;
        assert!(d.validate().is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let d = Dims::new(4, 2, 3, 5, 6);
        assert_eq!(RvraeModel::new(d, 1).unwrap(), RvraeModel::new(d, 1).unwrap());
        assert_ne!(RvraeModel::new(d, 1).unwrap(), RvraeModel::new(d, 2).unwrap());
        let m = RvraeModel::new(d, 1).unwrap();
        let w = m.params.get("encoder.w_in").unwrap();
        assert!(w.max_abs() <= 0.5);
        assert_eq!(m.params.get("encoder.b_encoder").unwrap().max_abs(), 0.0);
    }
}
