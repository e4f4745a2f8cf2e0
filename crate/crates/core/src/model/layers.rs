//! Named parameter storage and the ConvBR building block.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels::conv_out_size;
use crate::tensor::{s, BnMode, BnStats, ConvSpec, Scalar, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Trainable.
    Weight,
    /// Running statistics.
    Buffer,
}

/// Flat list of named tensors; layers refer to entries by index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    kinds: Vec<Kind>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            kinds: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: String, t: Tensor<T>, kind: Kind) -> usize {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.kinds.push(kind);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> Kind {
        self.kinds[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, Kind)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.kinds)
            .map(|((n, t), k)| (n.as_str(), t, *k))
    }

    /// Indices of trainable entries, in registration order.
    pub fn weight_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.kinds[i] == Kind::Weight).collect()
    }

    /// Trainable tensors, in [`Self::weight_indices`] order.
    pub fn weights_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.tensors
            .iter_mut()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == Kind::Weight)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            kinds: self.kinds.clone(),
        }
    }

    /// Replaces values by name, requiring identical names and shapes.
    pub fn load_from(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                self.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let i = self
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Registers parameters with fan-in (He) normal initialization.
pub struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, bias: bool) -> Conv {
        let fan_in = (cin / spec.groups) * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = Tensor::randn(&[cout, cin / spec.groups, k, k], std, self.rng);
        let w = self.store.add(format!("{name}.weight"), w, Kind::Weight);
        let b = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), Kind::Weight));
        Conv {
            weight: w,
            bias: b,
            spec,
            cin,
            cout,
            k,
        }
    }

    pub fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::ones(&[c]), Kind::Weight),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[c]), Kind::Weight),
            running_mean: self.store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), Kind::Buffer),
            running_var: self.store.add(format!("{name}.running_var"), Tensor::ones(&[c]), Kind::Buffer),
        }
    }

    /// Convolution → batch norm → ReLU.
    pub fn conv_br(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, bias: bool) -> ConvBr {
        ConvBr {
            conv: self.conv(&format!("{name}.conv"), cin, cout, k, spec, bias),
            bn: Some(self.bn(&format!("{name}.bn"), cout)),
            relu: true,
        }
    }

    /// Bare convolution (prediction heads).
    pub fn conv_only(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec, bias: bool) -> ConvBr {
        ConvBr {
            conv: self.conv(&format!("{name}.conv"), cin, cout, k, spec, bias),
            bn: None,
            relu: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_size(h, self.k, self.spec.stride, self.spec.pad).unwrap_or(0),
            conv_out_size(w, self.k, self.spec.stride, self.spec.pad).unwrap_or(0),
        )
    }

    /// Multiply-accumulates at input size `h × w`: `Cout·(Cin/g)·k²·H'·W'`,
    /// plus `H'·W'·Cout` for the bias.
    pub fn macs(&self, h: usize, w: usize) -> (u64, usize, usize) {
        let (oh, ow) = self.out_size(h, w);
        let spatial = (oh * ow) as u64;
        let mut macs = (self.cout * (self.cin / self.spec.groups) * self.k * self.k) as u64 * spatial;
        if self.bias.is_some() {
            macs += spatial * self.cout as u64;
        }
        (macs, oh, ow)
    }
}

#[derive(Clone, Debug)]
pub struct Bn {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

#[derive(Clone, Debug)]
pub struct ConvBr {
    pub conv: Conv,
    pub bn: Option<Bn>,
    pub relu: bool,
}

/// Running-statistics update requested by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: usize,
    pub running_var: usize,
    pub stats: BnStats<T>,
}

/// One forward pass: the tape, variables bound to trainable parameters, and
/// the batch-norm mode.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub store: &'a ParamStore<T>,
    /// `bound[i]` is the tape variable for store entry `i` (weights only).
    pub bound: Vec<Option<Var>>,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    /// Registers every trainable parameter as a tape leaf.
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, train: bool) -> Result<Self> {
        let mut bound = vec![None; store.len()];
        for i in store.weight_indices() {
            bound[i] = Some(tape.leaf(store.get(i).clone())?);
        }
        Ok(Self {
            tape,
            store,
            bound,
            train,
            bn_updates: Vec::new(),
        })
    }

    /// Uses caller-supplied variables for the trainable parameters, in
    /// [`ParamStore::weight_indices`] order.
    pub fn with_vars(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, vars: &[Var], train: bool) -> Result<Self> {
        let idx = store.weight_indices();
        if idx.len() != vars.len() {
            return Err(Error::Config(format!(
                "{} parameter variables supplied for {} weights",
                vars.len(),
                idx.len()
            )));
        }
        let mut bound = vec![None; store.len()];
        for (i, v) in idx.into_iter().zip(vars) {
            bound[i] = Some(*v);
        }
        Ok(Self {
            tape,
            store,
            bound,
            train,
            bn_updates: Vec::new(),
        })
    }

    pub fn var(&self, i: usize) -> Var {
        self.bound[i].expect("trainable parameter is bound")
    }

    pub fn conv_br(&mut self, layer: &ConvBr, x: Var) -> Result<Var> {
        let c = &layer.conv;
        let mut y = self.tape.conv2d(x, self.var(c.weight), c.bias.map(|b| self.var(b)), c.spec)?;
        if let Some(bn) = &layer.bn {
            let (g, b) = (self.var(bn.gamma), self.var(bn.beta));
            let mode = if self.train {
                BnMode::Train { eps: BN_EPS }
            } else {
                BnMode::Eval {
                    running_mean: self.store.get(bn.running_mean).data(),
                    running_var: self.store.get(bn.running_var).data(),
                    eps: BN_EPS,
                }
            };
            let (out, stats) = self.tape.batchnorm(y, g, b, mode)?;
            if let Some(stats) = stats {
                self.bn_updates.push(BnUpdate {
                    running_mean: bn.running_mean,
                    running_var: bn.running_var,
                    stats,
                });
            }
            y = out;
        }
        if layer.relu {
            y = self.tape.relu(y)?;
        }
        Ok(y)
    }
}

/// Folds training-mode batch statistics into the running estimates.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let mom: T = s(BN_MOMENTUM);
    for u in updates {
        for (r, &m) in store.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = (T::one() - mom) * *r + mom * m;
        }
        for (r, &v) in store.get_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var_unbiased) {
            *r = (T::one() - mom) * *r + mom * v;
        }
    }
}

impl ConvBr {
    pub fn param_indices(&self) -> Vec<usize> {
        let mut v = vec![self.conv.weight];
        v.extend(self.conv.bias);
        if let Some(bn) = &self.bn {
            v.extend([bn.gamma, bn.beta]);
        }
        v
    }
}
