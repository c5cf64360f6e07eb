//! Linear classifiers and small fully connected ReLU networks.
//!
//! Gradients are returned as a [`Model`] of the same shape as the one they
//! were computed for, so optimizers can walk parameters and gradients in
//! lockstep through [`Model::param_slices_mut`] / [`Model::param_slices`].

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Architecture description used to initialise a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `w^T x`, optionally with a constant-1 feature appended.
    Linear {
        #[serde(default)]
        bias: bool,
    },
    /// Affine layers with ReLU in between. An empty `hidden` list is a
    /// multiclass linear (softmax regression) model.
    Mlp { hidden: Vec<usize> },
}

impl ModelSpec {
    pub fn init(&self, input_dim: usize, output_dim: usize, rng: &mut Rng) -> Result<Model> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::domain("model dimensions must be positive"));
        }
        match self {
            ModelSpec::Linear { bias } => {
                if output_dim != 1 {
                    return Err(Error::domain(format!(
                        "linear model produces one score, {output_dim} outputs requested"
                    )));
                }
                let len = input_dim + usize::from(*bias);
                let a = glorot_limit(len, 1);
                let w = Array1::from_shape_fn(len, |_| rng.random_range(-a..=a));
                Ok(Model::Linear(LinearModel { w, bias: *bias }))
            }
            ModelSpec::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::domain("hidden widths must be positive"));
                }
                let mut dims = Vec::with_capacity(hidden.len() + 2);
                dims.push(input_dim);
                dims.extend_from_slice(hidden);
                dims.push(output_dim);
                let layers = dims
                    .windows(2)
                    .map(|pair| {
                        let (fan_in, fan_out) = (pair[0], pair[1]);
                        let a = glorot_limit(fan_in, fan_out);
                        DenseLayer {
                            weights: Array2::from_shape_fn((fan_out, fan_in), |_| {
                                rng.random_range(-a..=a)
                            }),
                            bias: Array1::zeros(fan_out),
                        }
                    })
                    .collect();
                MlpModel::new(layers).map(Model::Mlp)
            }
        }
    }
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    w: Array1<f64>,
    bias: bool,
}

impl LinearModel {
    /// `w` includes the bias weight as its last entry when `bias` is set.
    pub fn new(w: Vec<f64>, bias: bool) -> Result<Self> {
        if w.len() < 1 + usize::from(bias) {
            return Err(Error::domain(
                "linear model needs at least one feature weight",
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("linear weights must be finite"));
        }
        Ok(LinearModel {
            w: Array1::from(w),
            bias,
        })
    }

    pub fn zeros(input_dim: usize, bias: bool) -> Self {
        LinearModel {
            w: Array1::zeros(input_dim + usize::from(bias)),
            bias,
        }
    }

    pub fn weights(&self) -> &[f64] {
        self.w.as_slice().expect("contiguous")
    }

    /// Feature weights without the bias entry.
    pub fn feature_weights(&self) -> ArrayView1<'_, f64> {
        self.w.slice(s![..self.input_dim()])
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.w.len() - usize::from(self.bias)
    }

    pub fn norm(&self) -> f64 {
        self.w.dot(&self.w).sqrt()
    }
}

/// Rescales `w` onto the radius-`m` ball when it lies outside.
pub fn project_to_ball(model: &LinearModel, m: f64) -> LinearModel {
    let mut out = model.clone();
    project_in_place(&mut out, m);
    out
}

pub(crate) fn project_in_place(model: &mut LinearModel, m: f64) {
    let norm = model.norm();
    if norm > m {
        model.w *= m / norm;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.nrows() {
                return Err(Error::shape(
                    format!("layer {i} bias of length {}", layer.weights.nrows()),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].weights.nrows() != layer.weights.ncols() {
                return Err(Error::shape(
                    format!("layer {i} input width {}", layers[i - 1].weights.nrows()),
                    layer.weights.ncols(),
                ));
            }
            if layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::domain(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| DenseLayer {
                weights: l.weights.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Forward pass keeping every pre-activation for backprop.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut act: Array2<f64> = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights.t());
            z += &layer.bias;
            if i == last {
                return (pre, z);
            }
            act = z.mapv(relu);
            pre.push(z);
        }
        unreachable!()
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl From<LinearModel> for Model {
    fn from(m: LinearModel) -> Self {
        Model::Linear(m)
    }
}

impl From<MlpModel> for Model {
    fn from(m: MlpModel) -> Self {
        Model::Mlp(m)
    }
}

impl Model {
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.layers[0].weights.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::Linear(_) => 1,
            Model::Mlp(m) => m.layers.last().expect("non-empty").weights.nrows(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Scores for one feature vector.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::domain(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Scores for a batch of rows; returns `rows x output_dim`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(match self {
            Model::Linear(m) => {
                let d = m.input_dim();
                let mut scores = x.dot(&m.w.slice(s![..d]));
                if m.bias {
                    scores += m.w[d];
                }
                scores.insert_axis(Axis(1))
            }
            Model::Mlp(m) => m.forward_cached(x).1,
        })
    }

    /// Parameter gradients for one sample given `d loss / d scores`.
    pub fn backward(&self, features: &[f64], upstream: &[f64]) -> Result<Model> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::domain(e.to_string()))?;
        let g = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| Error::domain(e.to_string()))?;
        self.backward_batch(x, g)
    }

    /// Sum over rows of the per-sample parameter gradients.
    pub fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<Model> {
        self.check_input(x.ncols())?;
        if upstream.nrows() != x.nrows() || upstream.ncols() != self.output_dim() {
            return Err(Error::shape(
                format!("upstream gradient {}x{}", x.nrows(), self.output_dim()),
                format!("{}x{}", upstream.nrows(), upstream.ncols()),
            ));
        }
        match self {
            Model::Linear(m) => {
                let d = m.input_dim();
                let g = upstream.column(0);
                let mut w = Array1::zeros(m.w.len());
                w.slice_mut(s![..d]).assign(&x.t().dot(&g));
                if m.bias {
                    w[d] = g.sum();
                }
                Ok(Model::Linear(LinearModel { w, bias: m.bias }))
            }
            Model::Mlp(m) => {
                let (pre, _) = m.forward_cached(x);
                let mut grads = Vec::with_capacity(m.layers.len());
                let mut delta = upstream.to_owned();
                for i in (0..m.layers.len()).rev() {
                    let input = if i == 0 {
                        x.to_owned()
                    } else {
                        pre[i - 1].mapv(relu)
                    };
                    grads.push(DenseLayer {
                        weights: delta.t().dot(&input),
                        bias: delta.sum_axis(Axis(0)),
                    });
                    if i > 0 {
                        let mut back = delta.dot(&m.layers[i].weights);
                        Zip::from(&mut back).and(&pre[i - 1]).for_each(|b, &z| {
                            if z <= 0.0 {
                                *b = 0.0;
                            }
                        });
                        delta = back;
                    }
                }
                grads.reverse();
                Ok(Model::Mlp(MlpModel { layers: grads }))
            }
        }
    }

    pub fn predict(&self, features: &[f64]) -> Result<i32> {
        Ok(predict_from_scores(&self.forward(features)?))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<i32>> {
        let scores = self.forward_batch(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| predict_from_scores(r.as_slice().expect("standard layout")))
            .collect())
    }

    /// Same shape, all parameters zero.
    pub fn zeros_like(&self) -> Model {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Model::Linear(m) => vec![m.w.as_slice().expect("contiguous")],
            Model::Mlp(m) => m
                .layers
                .iter()
                .flat_map(|l| {
                    [
                        l.weights.as_slice().expect("standard layout"),
                        l.bias.as_slice().expect("contiguous"),
                    ]
                })
                .collect(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Linear(m) => vec![m.w.as_slice_mut().expect("contiguous")],
            Model::Mlp(m) => m
                .layers
                .iter_mut()
                .flat_map(|l| {
                    [
                        l.weights.as_slice_mut().expect("standard layout"),
                        l.bias.as_slice_mut().expect("contiguous"),
                    ]
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::shape(format!("{} features", self.input_dim()), cols));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Model::Linear(m) => Checkpoint::Linear {
                bias: m.bias,
                input_dim: m.input_dim(),
                weights: m.w.to_vec(),
            },
            Model::Mlp(m) => Checkpoint::Mlp {
                layers: m
                    .layers
                    .iter()
                    .map(|l| LayerCheckpoint {
                        rows: l.weights.nrows(),
                        cols: l.weights.ncols(),
                        weights: l.weights.iter().cloned().collect(),
                        bias: l.bias.to_vec(),
                    })
                    .collect(),
            },
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Model> {
        match ck {
            Checkpoint::Linear {
                bias,
                input_dim,
                weights,
            } => {
                if weights.len() != input_dim + usize::from(bias) {
                    return Err(Error::shape(input_dim + usize::from(bias), weights.len()));
                }
                LinearModel::new(weights, bias).map(Model::Linear)
            }
            Checkpoint::Mlp { layers } => {
                let layers = layers
                    .into_iter()
                    .map(|l| {
                        let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                            .map_err(|e| Error::domain(format!("layer weights: {e}")))?;
                        Ok(DenseLayer {
                            weights,
                            bias: Array1::from(l.bias),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                MlpModel::new(layers).map(Model::Mlp)
            }
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Model> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Model::from_checkpoint(serde_json::from_reader(f)?)
    }
}

/// Binary: sign with `sign(0) = +1`. Multiclass: argmax, lowest index on ties.
pub fn predict_from_scores(scores: &[f64]) -> i32 {
    if scores.len() == 1 {
        return if scores[0] >= 0.0 { 1 } else { -1 };
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best as i32
}

/// On-disk model: a shape header plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Linear {
        bias: bool,
        input_dim: usize,
        weights: Vec<f64>,
    },
    Mlp {
        layers: Vec<LayerCheckpoint>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}
