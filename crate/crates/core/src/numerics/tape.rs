//! Reverse-mode differentiation over an explicit op tape.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the op that produced it. [`Tape::backward`] walks the records in
//! reverse and accumulates vector-Jacobian products into one gradient
//! buffer per node. A tape is built per training step and dropped after.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Op families, used to name faults and to target the corruption hook.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Affine,
    LinearRows,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Sigmoid,
    Exp,
    Sum,
    SquaredError,
    GaussianKl,
    GaussianNll,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Affine => "affine",
            OpKind::LinearRows => "linear_rows",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::SquaredError => "squared_error",
            OpKind::GaussianKl => "gaussian_kl",
            OpKind::GaussianNll => "gaussian_nll",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        const ALL: [OpKind; 14] = [
            OpKind::Leaf,
            OpKind::Affine,
            OpKind::LinearRows,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::Tanh,
            OpKind::Sigmoid,
            OpKind::Exp,
            OpKind::Sum,
            OpKind::SquaredError,
            OpKind::GaussianKl,
            OpKind::GaussianNll,
        ];
        ALL.into_iter().find(|k| k.name() == name)
    }
}

enum Op {
    Leaf,
    /// `w[m×n] · x[n] + b[m]`
    Affine { w: Var, x: Var, b: Option<Var> },
    /// `x[r×n] · wᵀ + b`, one output row per input row.
    LinearRows { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    SquaredError { pred: Var, target: Vec<f64>, mask: Vec<f64> },
    GaussianKl { mq: Var, lq: Var, mp: Var, lp: Var },
    GaussianNll { mean: Var, logvar: Var, target: Vec<f64>, mask: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Affine { .. } => OpKind::Affine,
            Op::LinearRows { .. } => OpKind::LinearRows,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Sum(_) => OpKind::Sum,
            Op::SquaredError { .. } => OpKind::SquaredError,
            Op::GaussianKl { .. } => OpKind::GaussianKl,
            Op::GaussianNll { .. } => OpKind::GaussianNll,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
    bound: HashMap<String, Var>,
    fault: Option<&'static str>,
    corrupt: Option<OpKind>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    buffers: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.buffers.get(v.0).and_then(|b| b.as_deref())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            bound: HashMap::new(),
            fault: None,
            corrupt: None,
        }
    }

    /// Test hook: the backward rule of `kind` returns wrong gradients.
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.corrupt = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op whose output contained a NaN or infinity, if any.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NumericFault { op }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.kind().name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input. Gradients are computed for it but nothing
    /// reads them unless the caller asks.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a copy of the current value without a gradient path back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter from `store`. Binding the same name twice
    /// returns the same handle so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidState(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((v, name.to_string()));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Bound parameters in binding order.
    pub fn params(&self) -> &[(Var, String)] {
        &self.params
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w);
        let xs = self.shape(x);
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::dim("affine", ws, xs));
        }
        let (m, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::dim("affine", &[m], self.shape(b)));
            }
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out: Vec<f64> = (0..m)
            .map(|i| {
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(self.value(b).data()) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::from_raw(vec![m], out), Op::Affine { w, x, b }))
    }

    pub fn linear_rows(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w);
        let xs = self.shape(x);
        if ws.len() != 2 || xs.len() != 2 || ws[1] != xs[1] {
            return Err(Error::dim("linear_rows", xs, ws));
        }
        let (m, n, r) = (ws[0], ws[1], xs[0]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::dim("linear_rows", &[m], self.shape(b)));
            }
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; r * m];
        for row in 0..r {
            let xr = &xd[row * n..(row + 1) * n];
            for i in 0..m {
                let dot: f64 = wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xr)
                    .map(|(a, b)| a * b)
                    .sum();
                out[row * m + i] = dot + bd.map_or(0.0, |bd| bd[i]);
            }
        }
        Ok(self.push(Tensor::from_raw(vec![r, m], out), Op::LinearRows { x, w, b }))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_raw(va.shape().to_vec(), data))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::from_raw(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        self.push(t, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::from_raw(vec![1], vec![s]), Op::Sum(a))
    }

    /// `Σ mask·(pred − target)²` as a scalar.
    pub fn squared_error(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.len() != mask.len() {
            return Err(Error::dim("squared_error", p.shape(), &[target.len()]));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::from_raw(vec![1], vec![s]),
            Op::SquaredError {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Closed-form `KL(q ‖ p)` between diagonal Gaussians given as
    /// (mean, log-variance) pairs, summed over dimensions.
    pub fn gaussian_kl(&mut self, mq: Var, lq: Var, mp: Var, lp: Var) -> Result<Var> {
        let s = self.shape(mq).to_vec();
        for v in [lq, mp, lp] {
            if self.shape(v) != s.as_slice() {
                return Err(Error::dim("gaussian_kl", &s, self.shape(v)));
            }
        }
        let (a, b, c, d) = (
            self.value(mq).data(),
            self.value(lq).data(),
            self.value(mp).data(),
            self.value(lp).data(),
        );
        let kl: f64 = (0..a.len())
            .map(|k| {
                let diff = c[k] - a[k];
                0.5 * ((b[k] - d[k]).exp() + diff * diff * (-d[k]).exp() - 1.0 + d[k] - b[k])
            })
            .sum();
        Ok(self.push(Tensor::from_raw(vec![1], vec![kl]), Op::GaussianKl { mq, lq, mp, lp }))
    }

    /// Negative log-likelihood of `target` under `N(mean, exp(logvar))`,
    /// dropping the constant `½ln 2π`, summed over entries where `mask` is 1.
    pub fn gaussian_nll(&mut self, mean: Var, logvar: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let m = self.value(mean);
        let l = self.value(logvar);
        if m.shape() != l.shape() || m.len() != target.len() || m.len() != mask.len() {
            return Err(Error::dim("gaussian_nll", m.shape(), l.shape()));
        }
        let s: f64 = (0..m.len())
            .map(|i| {
                let e = target[i] - m.data()[i];
                0.5 * mask[i] * (l.data()[i] + e * e * (-l.data()[i]).exp())
            })
            .sum();
        Ok(self.push(
            Tensor::from_raw(vec![1], vec![s]),
            Op::GaussianNll {
                mean,
                logvar,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut buffers: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        buffers[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = buffers[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contributions: Vec<(Var, Vec<f64>)> = Vec::new();
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, x, b } => {
                    let (m, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                    let wd = self.value(*w).data();
                    let xd = self.value(*x).data();
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gw[i * n + j] = g[i] * xd[j];
                            gx[j] += g[i] * wd[i * n + j];
                        }
                    }
                    contributions.push((*w, gw));
                    contributions.push((*x, gx));
                    if let Some(b) = b {
                        contributions.push((*b, g.clone()));
                    }
                }
                Op::LinearRows { x, w, b } => {
                    let (m, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                    let r = self.shape(*x)[0];
                    let wd = self.value(*w).data();
                    let xd = self.value(*x).data();
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; r * n];
                    let mut gb = vec![0.0; m];
                    for row in 0..r {
                        for i in 0..m {
                            let gi = g[row * m + i];
                            gb[i] += gi;
                            for j in 0..n {
                                gw[i * n + j] += gi * xd[row * n + j];
                                gx[row * n + j] += gi * wd[i * n + j];
                            }
                        }
                    }
                    contributions.push((*w, gw));
                    contributions.push((*x, gx));
                    if let Some(b) = b {
                        contributions.push((*b, gb));
                    }
                }
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.iter().map(|v| -v).collect()));
                }
                Op::Mul(a, b) => {
                    let ad = self.value(*a).data();
                    let bd = self.value(*b).data();
                    contributions.push((*a, g.iter().zip(bd).map(|(g, b)| g * b).collect()));
                    contributions.push((*b, g.iter().zip(ad).map(|(g, a)| g * a).collect()));
                }
                Op::Scale(a, f) => contributions.push((*a, g.iter().map(|v| v * f).collect())),
                Op::Tanh(a) => contributions.push((
                    *a,
                    g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                )),
                Op::Sigmoid(a) => contributions.push((
                    *a,
                    g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                )),
                Op::Exp(a) => contributions.push((*a, g.iter().zip(y).map(|(g, y)| g * y).collect())),
                Op::Sum(a) => contributions.push((*a, vec![g[0]; self.value(*a).len()])),
                Op::SquaredError { pred, target, mask } => {
                    let p = self.value(*pred).data();
                    contributions.push((
                        *pred,
                        (0..p.len())
                            .map(|i| g[0] * 2.0 * mask[i] * (p[i] - target[i]))
                            .collect(),
                    ));
                }
                Op::GaussianKl { mq, lq, mp, lp } => {
                    let (a, b, c, d) = (
                        self.value(*mq).data(),
                        self.value(*lq).data(),
                        self.value(*mp).data(),
                        self.value(*lp).data(),
                    );
                    let k = a.len();
                    let (mut gmq, mut glq, mut gmp, mut glp) =
                        (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
                    for i in 0..k {
                        let ratio = (b[i] - d[i]).exp();
                        let inv_p = (-d[i]).exp();
                        let diff = c[i] - a[i];
                        gmq[i] = -g[0] * diff * inv_p;
                        gmp[i] = g[0] * diff * inv_p;
                        glq[i] = g[0] * 0.5 * (ratio - 1.0);
                        glp[i] = g[0] * 0.5 * (1.0 - ratio - diff * diff * inv_p);
                    }
                    contributions.extend([(*mq, gmq), (*lq, glq), (*mp, gmp), (*lp, glp)]);
                }
                Op::GaussianNll { mean, logvar, target, mask } => {
                    let m = self.value(*mean).data();
                    let l = self.value(*logvar).data();
                    let mut gm = vec![0.0; m.len()];
                    let mut gl = vec![0.0; m.len()];
                    for i in 0..m.len() {
                        let e = target[i] - m[i];
                        let inv = (-l[i]).exp();
                        gm[i] = -g[0] * mask[i] * e * inv;
                        gl[i] = g[0] * 0.5 * mask[i] * (1.0 - e * e * inv);
                    }
                    contributions.push((*mean, gm));
                    contributions.push((*logvar, gl));
                }
            }
            if self.corrupt == Some(node.op.kind()) {
                for (_, c) in contributions.iter_mut() {
                    c.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (target, c) in contributions {
                match &mut buffers[target.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, v)| *a += v),
                    slot @ None => *slot = Some(c),
                }
            }
            buffers[idx] = Some(g);
        }
        Ok(Grads { buffers })
    }
}
