//! LSTM beta network: maps each stock's characteristic history to its
//! factor exposures. All stocks share one set of weights and are processed
//! as independent rows of a batch, so a stock's beta depends only on its own
//! history.

use crate::error::{Error, Result};
use crate::model::Dims;
use crate::numerics::{init_uniform, ParamStore, Rng, Tape, Tensor, Var};

// The forget gate is called `keep` in parameter names so it never collides
// with the latent factors `f`.
const GATES: [&str; 4] = ["input", "keep", "output", "cand"];

#[derive(Clone, Copy, Debug)]
pub struct Gate {
    /// Recurrent weights, `H_β × H_β`.
    pub w: Var,
    /// Input weights, `H_β × C`.
    pub u: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub input: Gate,
    pub keep: Gate,
    pub output: Gate,
    pub cand: Gate,
    /// `K × H_β` projection, present only when `H_β ≠ K`.
    pub projection: Option<(Var, Var)>,
}

impl LstmParams {
    pub fn register(store: &mut ParamStore, dims: &Dims, rng: &mut Rng) -> Result<()> {
        let (hb, c) = (dims.beta_hidden, dims.n_chars);
        for g in GATES {
            store.insert(&format!("beta.w_{g}"), init_uniform(rng, &[hb, hb], hb))?;
            store.insert(&format!("beta.u_{g}"), init_uniform(rng, &[hb, c], c))?;
            store.insert(&format!("beta.b_{g}"), Tensor::zeros(&[hb]))?;
        }
        if hb != dims.n_factors {
            store.insert("beta.w_proj", init_uniform(rng, &[dims.n_factors, hb], hb))?;
            store.insert("beta.b_proj", Tensor::zeros(&[dims.n_factors]))?;
        }
        Ok(())
    }

    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        let mut gate = |g: &str| -> Result<Gate> {
            Ok(Gate {
                w: tape.param(store, &format!("beta.w_{g}"))?,
                u: tape.param(store, &format!("beta.u_{g}"))?,
                b: tape.param(store, &format!("beta.b_{g}"))?,
            })
        };
        let (input, keep, output, cand) = (gate("input")?, gate("keep")?, gate("output")?, gate("cand")?);
        let projection = match store.get("beta.w_proj") {
            Some(_) => Some((tape.param(store, "beta.w_proj")?, tape.param(store, "beta.b_proj")?)),
            None => None,
        };
        Ok(Self { input, keep, output, cand, projection })
    }

    fn hidden(&self, tape: &Tape) -> usize {
        tape.shape(self.input.w)[0]
    }

    fn n_chars(&self, tape: &Tape) -> usize {
        tape.shape(self.input.u)[1]
    }
}

/// Hidden and cell state for a batch of stocks, each `N × H_β`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, rows: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[rows, hidden])),
            c: tape.constant(Tensor::zeros(&[rows, hidden])),
        }
    }
}

fn gate_pre(tape: &mut Tape, x: Var, h: Var, g: &Gate) -> Result<Var> {
    let a = tape.linear_rows(h, g.w, None)?;
    let b = tape.linear_rows(x, g.u, Some(g.b))?;
    tape.add(a, b)
}

/// `c_t = keep ⊙ c_{t-1} + input ⊙ cand`, `h_t = output ⊙ tanh(c_t)`.
pub fn lstm_step(tape: &mut Tape, x: Var, state: LstmState, p: &LstmParams) -> Result<LstmState> {
    let xs = tape.shape(x);
    let c = p.n_chars(tape);
    if xs.len() != 2 || xs[1] != c || tape.shape(state.h)[0] != xs[0] {
        return Err(Error::dim("lstm_step", xs, tape.shape(state.h)));
    }
    let pre_i = gate_pre(tape, x, state.h, &p.input)?;
    let pre_k = gate_pre(tape, x, state.h, &p.keep)?;
    let pre_o = gate_pre(tape, x, state.h, &p.output)?;
    let pre_g = gate_pre(tape, x, state.h, &p.cand)?;
    let i = tape.sigmoid(pre_i);
    let k = tape.sigmoid(pre_k);
    let o = tape.sigmoid(pre_o);
    let g = tape.tanh(pre_g);
    let kept = tape.mul(k, state.c)?;
    let added = tape.mul(i, g)?;
    let c = tape.add(kept, added)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Runs the LSTM over `history` (one `N × C` matrix per step) from a zero
/// state and returns the beta matrix `N × K` after every step. The last
/// entry is the exposure for the full history.
pub fn beta_from_characteristics(tape: &mut Tape, history: &[Var], p: &LstmParams) -> Result<Vec<Var>> {
    let Some(&first) = history.first() else {
        return Err(Error::Alignment("beta network needs at least one step".into()));
    };
    let shape = tape.shape(first).to_vec();
    if let Some(bad) = history.iter().find(|x| tape.shape(**x) != shape.as_slice()) {
        return Err(Error::Alignment(format!(
            "ragged characteristic history: {:?} vs {:?}",
            shape,
            tape.shape(*bad)
        )));
    }
    if shape.len() != 2 {
        return Err(Error::dim("beta_from_characteristics", &shape, &[0, p.n_chars(tape)]));
    }
    let hidden = p.hidden(tape);
    let mut state = LstmState::zeros(tape, shape[0], hidden);
    let mut betas = Vec::with_capacity(history.len());
    for &x in history {
        state = lstm_step(tape, x, state, p)?;
        let beta = match p.projection {
            Some((w, b)) => tape.linear_rows(state.h, w, Some(b))?,
            None => state.h,
        };
        betas.push(beta);
    }
    Ok(betas)
}
