use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::tape::{Grads, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters, each paired with a gradient buffer of the same shape.
///
/// Iteration order is the lexical order of names, which keeps checkpoints
/// and optimizer updates independent of registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid parameter name `{name}`")));
        }
        if self.params.contains_key(name) {
            return Err(Error::Integrity(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.grad)
    }

    /// Mutable access to a value; the caller keeps it finite.
    pub fn value_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.get_mut(name).map(|p| p.value.data_mut())
    }

    pub fn grad_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.get_mut(name).map(|p| p.grad.data_mut())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut Tensor)> {
        self.params
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value, &mut p.grad))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds the gradients of every parameter bound on `tape` into the
    /// matching accumulators.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads) {
        for (var, name) in tape.params() {
            if let (Some(g), Some(p)) = (grads.wrt(*var), self.params.get_mut(name)) {
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(acc, v)| *acc += v);
            }
        }
    }

    /// Serializes to the line-oriented checkpoint format: a header line,
    /// then `name shape_csv value_csv` per parameter. Values use Rust's
    /// shortest round-trip decimal form, so loading is bit-exact.
    pub fn to_checkpoint(&self, header: &str) -> String {
        let mut out = String::new();
        writeln!(out, "{header}").unwrap();
        for (name, p) in &self.params {
            let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            let values: Vec<String> = p.value.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{name} {} {}", shape.join(","), values.join(",")).unwrap();
        }
        out
    }

    /// Parses the checkpoint format, returning the header line and the store.
    pub fn from_checkpoint(text: &str) -> Result<(String, Self)> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "empty checkpoint".into() })?;
        let mut store = Self::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: line_no, message };
            let mut parts = line.split(' ');
            let (Some(name), Some(shape), Some(values), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err("expected `name shape values`".into()));
            };
            let shape = shape
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("bad shape: {e}")))?;
            let values = values
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("bad value: {e}")))?;
            let tensor = Tensor::new(shape, values).map_err(|e| parse_err(e.to_string()))?;
            store.insert(name, tensor).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok((header.to_string(), store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a.w", Tensor::zeros(&[2])).is_err());
        assert!(s.insert("has space", Tensor::zeros(&[1])).is_err());
        assert_eq!(s.grad("a.w").unwrap().shape(), &[2]);
    }

    #[test]
    fn malformed_checkpoint_reports_line() {
        let text = "hdr\na 2 1.0,2.0\nb 2 1.0\n";
        match ParamStore::from_checkpoint(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            a in prop::collection::vec(-1e300f64..1e300, 1..8),
            b in prop::collection::vec(-1e-300f64..1e-300, 6),
        ) {
            let mut s = ParamStore::new();
            s.insert("x.a", Tensor::vector(a.clone()).unwrap()).unwrap();
            s.insert("x.b", Tensor::matrix(2, 3, b.clone()).unwrap()).unwrap();
            let text = s.to_checkpoint("header v1");
            let (h, back) = ParamStore::from_checkpoint(&text).unwrap();
            prop_assert_eq!(h, "header v1");
            for (name, v) in s.iter() {
                let w = back.get(name).unwrap();
                prop_assert_eq!(v.shape(), w.shape());
                for (x, y) in v.data().iter().zip(w.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
