use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths of a dense ReLU network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: Vec<usize>, classes: usize) -> Result<Self> {
        if input == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::Shape(format!(
                "invalid architecture {input} -> {hidden:?} -> {classes}"
            )));
        }
        Ok(Self { input, hidden, classes })
    }

    /// `(rows, cols)` of every weight matrix, i.e. `(out, in)`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub layers: Vec<Dense>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(rows, cols)| Dense {
                    weight: Array2::zeros((rows, cols)),
                    bias: Array1::zeros(rows),
                })
                .collect(),
        }
    }

    /// He-normal weights, zero biases.
    pub fn he_init<R: Rng>(arch: &Architecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        for layer in &mut params.layers {
            let fan_in = layer.weight.ncols() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            layer.weight.mapv_inplace(|_| normal.sample(rng));
        }
        params
    }

    pub fn architecture(&self) -> Architecture {
        let input = self.layers[0].weight.ncols();
        let hidden = self.layers[..self.layers.len() - 1].iter().map(|l| l.weight.nrows()).collect();
        let classes = self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0);
        Architecture { input, hidden, classes }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every parameter, layer by layer: weights row-major, then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self = f(self, other)` over matching shapes.
    pub fn zip_apply(&mut self, other: &Params, mut f: impl FnMut(f64, f64) -> f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = f(*a, *b);
        }
    }

    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input of every layer: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
}

pub fn check_input(params: &Params, features: &ArrayView2<f64>) -> Result<()> {
    let expected = params.layers[0].weight.ncols();
    if features.ncols() != expected {
        return Err(Error::Shape(format!(
            "features have {} columns, network expects {expected}",
            features.ncols()
        )));
    }
    Ok(())
}

/// Logits of a batch, `B x C`.
pub fn forward(params: &Params, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_cached(params, features)?.0)
}

pub fn forward_cached(params: &Params, features: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    check_input(params, &features)?;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut h = features.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = h.dot(&layer.weight.t());
        z += &layer.bias;
        inputs.push(h);
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        h = z;
    }
    Ok((h, ForwardCache { inputs }))
}

/// Gradients of a scalar loss given `d loss / d logits`.
pub fn backward(params: &Params, cache: &ForwardCache, dlogits: Array2<f64>) -> Params {
    let mut grads: Vec<Dense> = Vec::with_capacity(params.layers.len());
    let mut delta = dlogits;
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let input = &cache.inputs[l];
        grads.push(Dense {
            weight: delta.t().dot(input),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            let mut upstream = delta.dot(&layer.weight);
            // ReLU gate: the stored input is the post-activation of layer l-1.
            ndarray::Zip::from(&mut upstream).and(input).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = upstream;
        }
    }
    grads.reverse();
    Params { layers: grads }
}

/// Which copy of the weights to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Student,
    Teacher,
}

/// Student weights and their moving-average teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierState {
    pub student: Params,
    pub teacher: Params,
}

impl ClassifierState {
    /// Random student, teacher copied from it.
    pub fn init<R: Rng>(arch: &Architecture, rng: &mut R) -> Self {
        let student = Params::he_init(arch, rng);
        Self {
            teacher: student.clone(),
            student,
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            student: Params::zeros(arch),
            teacher: Params::zeros(arch),
        }
    }

    pub fn from_parts(student: Params, teacher: Params) -> Result<Self> {
        if student.architecture() != teacher.architecture() {
            return Err(Error::Shape("student and teacher shapes differ".into()));
        }
        Ok(Self { student, teacher })
    }

    pub fn architecture(&self) -> Architecture {
        self.student.architecture()
    }

    pub fn params(&self, which: Which) -> &Params {
        match which {
            Which::Student => &self.student,
            Which::Teacher => &self.teacher,
        }
    }

    pub fn forward(&self, features: ArrayView2<f64>, which: Which) -> Result<Array2<f64>> {
        forward(self.params(which), features)
    }
}
