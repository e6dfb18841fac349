//! Named parameter tensors, their grouping, and tape binding.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Parameter groups; the optimizer and the freeze logic operate per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Backbone,
    AnchorEncoder,
    Decoder,
    Head,
    Aam,
    /// Never trained (the Fourier basis).
    Fixed,
}

impl Group {
    pub const ALL: [Group; 6] =
        [Group::Backbone, Group::AnchorEncoder, Group::Decoder, Group::Head, Group::Aam, Group::Fixed];

    pub fn name(self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::AnchorEncoder => "anchor_encoder",
            Group::Decoder => "decoder",
            Group::Head => "head",
            Group::Aam => "aam",
            Group::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn trainable(self) -> bool {
        self != Group::Fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Matrix<T>) -> ParamId {
        self.params.push(Param { name: name.into(), group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `tape`; those whose group satisfies
    /// `trainable` become gradient-requiring leaves.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(Group) -> bool) -> Binding {
        let vars =
            self.params.iter().map(|p| tape.leaf(p.value.clone(), p.group.trainable() && trainable(p.group))).collect();
        Binding { vars }
    }

    /// Collects gradients of bound parameters, zero-filled where absent.
    pub fn collect_grads(&self, binding: &Binding, grads: &mut Gradients<T>) -> Vec<Matrix<T>> {
        self.params
            .iter()
            .zip(&binding.vars)
            .map(|(p, &v)| grads.take(v).unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols())))
            .collect()
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn fingerprint(&self, group: Option<Group>) -> u64 {
        self.fingerprint_where(|g| group.is_none_or(|want| want == g))
    }

    /// Hash of the values of every parameter whose group passes `keep`.
    pub fn fingerprint_where(&self, keep: impl Fn(Group) -> bool) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params.iter().filter(|p| keep(p.group)) {
            for &v in p.value.as_slice() {
                let bits = v.as_f64().to_bits();
                h ^= bits;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Tape handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Affine map `x W + b` with `W: [inputs, outputs]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Uniform fan-in initialization, zero bias.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let w = Matrix::from_fn(inputs, outputs, |_, _| T::lit(rng.random_range(-bound..bound)));
        Self::with_values(store, name, group, w, Matrix::zeros(1, outputs))
    }

    pub fn zeros<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        Self::with_values(store, name, group, Matrix::zeros(inputs, outputs), Matrix::zeros(1, outputs))
    }

    pub fn with_values<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        weight: Matrix<T>,
        bias: Matrix<T>,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, weight);
        let bias = store.add(format!("{name}.bias"), group, bias);
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Var {
        let xw = tape.matmul(x, p.var(self.weight));
        tape.add_row(xw, p.var(self.bias))
    }

    pub fn out_dim<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.weight).cols()
    }
}

/// Layer normalization gain/bias pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, group: Group, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), group, Matrix::filled(1, dim, T::one()));
        let bias = store.add(format!("{name}.bias"), group, Matrix::zeros(1, dim));
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Binding, x: Var) -> Var {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

pub(crate) fn normal_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| T::lit(normal.sample(rng)))
}
