//! Named, ordered storage for every learnable layer of a model.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::params::{BatchNormState, ConvKernel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Param<T> {
    Conv(ConvKernel<T>),
    Norm(BatchNormState<T>),
}

/// How the optimiser treats a flat parameter slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceKind {
    /// Convolution weights; subject to L2 regularisation.
    Weight,
    /// Convolution bias.
    Bias,
    /// Batch-norm gamma or beta.
    Norm,
}

/// A learnable slice and its gradient, as seen by the optimiser.
pub struct ParamSlice<'a, T> {
    pub kind: SliceKind,
    pub values: &'a mut [T],
    pub grads: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry<T> {
    entries: Vec<(String, Param<T>)>,
}

impl<T> Default for Registry<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Scalar> Registry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, p: Param<T>) -> Result<ParamId> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.entries.push((name.to_string(), p));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_conv(&mut self, name: &str, k: ConvKernel<T>) -> Result<ParamId> {
        self.push(name, Param::Conv(k))
    }

    pub fn add_norm(&mut self, name: &str, s: BatchNormState<T>) -> Result<ParamId> {
        self.push(name, Param::Norm(s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn conv(&self, id: ParamId) -> &ConvKernel<T> {
        match &self.entries[id.0].1 {
            Param::Conv(k) => k,
            Param::Norm(_) => panic!("parameter {} is not a kernel", self.entries[id.0].0),
        }
    }

    pub fn conv_mut(&mut self, id: ParamId) -> &mut ConvKernel<T> {
        match &mut self.entries[id.0].1 {
            Param::Conv(k) => k,
            Param::Norm(_) => panic!("parameter is not a kernel"),
        }
    }

    pub fn norm(&self, id: ParamId) -> &BatchNormState<T> {
        match &self.entries[id.0].1 {
            Param::Norm(s) => s,
            Param::Conv(_) => panic!("parameter {} is not a batch norm", self.entries[id.0].0),
        }
    }

    pub fn norm_mut(&mut self, id: ParamId) -> &mut BatchNormState<T> {
        match &mut self.entries[id.0].1 {
            Param::Norm(s) => s,
            Param::Conv(_) => panic!("parameter is not a batch norm"),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.entries {
            match p {
                Param::Conv(k) => k.zero_grad(),
                Param::Norm(s) => s.zero_grad(),
            }
        }
    }

    /// Total learnable scalars (kernel weights and biases, gamma and beta).
    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, p)| match p {
                Param::Conv(k) => k.parameter_count(),
                Param::Norm(s) => s.parameter_count(),
            })
            .sum()
    }

    /// Every learnable slice in registry order, paired with its gradient.
    pub fn slices_mut(&mut self) -> Vec<ParamSlice<'_, T>> {
        let mut out = Vec::new();
        for (_, p) in &mut self.entries {
            match p {
                Param::Conv(k) => {
                    out.push(ParamSlice {
                        kind: SliceKind::Weight,
                        values: &mut k.weights,
                        grads: &k.grad_weights,
                    });
                    if let (Some(b), Some(g)) = (&mut k.bias, &k.grad_bias) {
                        out.push(ParamSlice {
                            kind: SliceKind::Bias,
                            values: b,
                            grads: g,
                        });
                    }
                }
                Param::Norm(s) => {
                    out.push(ParamSlice {
                        kind: SliceKind::Norm,
                        values: &mut s.gamma,
                        grads: &s.grad_gamma,
                    });
                    out.push(ParamSlice {
                        kind: SliceKind::Norm,
                        values: &mut s.beta,
                        grads: &s.grad_beta,
                    });
                }
            }
        }
        out
    }

    pub fn unique_names(&self) -> bool {
        let set: HashSet<_> = self.entries.iter().map(|(n, _)| n).collect();
        set.len() == self.entries.len()
    }
}
