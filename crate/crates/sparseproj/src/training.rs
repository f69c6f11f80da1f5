//! Dense feedforward networks trained by backpropagation, with the grouped
//! sparse projection applied to one layer's weight vectors on a fixed step
//! schedule.
//!
//! The scope is deliberately small: affine layers with relu / sigmoid /
//! linear activations, mean squared error or softmax cross-entropy, SGD or
//! Adam, and a projection schedule (layer index, row or column grouping,
//! target sparsity, period in optimizer steps). After every `period` steps
//! the designated layer's rows (or columns) are replaced by their grouped
//! sparse projection, and training continues on the projected weights.

use crate::gsp::{project_group, ProjectionConfig, ProjectionError};
use crate::sparsity::{spar_slice, VectorGroup};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("layer {index}: input width {got} does not match previous output {expected}")]
    DimensionChain { index: usize, expected: usize, got: usize },
    #[error("batch width {got} does not match network input {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("projection layer index {0} out of range")]
    LayerIndex(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} output classes")]
    LabelRange { label: usize, classes: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// out x in weight matrix.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, TrainError> {
        if layers.is_empty() {
            return Err(TrainError::Config("network needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            let expected = layers[i - 1].weights.nrows();
            let got = layers[i].weights.ncols();
            if expected != got {
                return Err(TrainError::DimensionChain { index: i, expected, got });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(TrainError::Config(format!(
                    "layer {i}: bias length {} != output width {}",
                    l.bias.len(),
                    l.weights.nrows()
                )));
            }
            if l.weights.iter().any(|v| !v.is_finite())
                || l.bias.iter().any(|v| !v.is_finite())
            {
                return Err(TrainError::Config(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Network { layers })
    }

    /// Layer widths `dims = [in, h1, .., out]`, hidden activations relu and a
    /// linear output, weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_mlp(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(TrainError::Config(
                "architecture needs >= 2 positive layer widths".into(),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let lim = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-lim..lim));
            let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-lim..lim));
            let activation = if i + 2 == dims.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(Layer { weights, bias, activation });
        }
        Network::new(layers)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }
}

/// Everything backward needs: per-layer pre-activations and activations.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn outputs(&self) -> &Array2<f64> {
        self.post.last().unwrap()
    }
}

/// Affine-then-activation composition over a batch (rows = samples).
pub fn forward(net: &Network, batch: &Array2<f64>) -> Result<ForwardPass, TrainError> {
    if batch.ncols() != net.input_width() {
        return Err(TrainError::ShapeMismatch {
            expected: net.input_width(),
            got: batch.ncols(),
        });
    }
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut post = Vec::with_capacity(net.layers.len());
    let mut cur = batch.clone();
    for layer in &net.layers {
        let z = cur.dot(&layer.weights.t()) + &layer.bias;
        let a = z.mapv(|v| layer.activation.apply(v));
        pre.push(z);
        post.push(a.clone());
        cur = a;
    }
    Ok(ForwardPass { input: batch.clone(), pre, post })
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// Exact parameter gradients given `d loss / d outputs` for the batch the
/// pass was computed on.
pub fn backward(net: &Network, pass: &ForwardPass, loss_grad: &Array2<f64>) -> Gradients {
    let depth = net.layers.len();
    let mut gw = vec![Array2::zeros((0, 0)); depth];
    let mut gb = vec![Array1::zeros(0); depth];
    // delta = dL/d pre-activation of the current layer
    let mut delta = {
        let z = &pass.pre[depth - 1];
        let act = net.layers[depth - 1].activation;
        let mut d = loss_grad.clone();
        d.zip_mut_with(z, |g, &zv| *g *= act.derivative(zv));
        d
    };
    for l in (0..depth).rev() {
        let below = if l == 0 { &pass.input } else { &pass.post[l - 1] };
        gw[l] = delta.t().dot(below);
        gb[l] = delta.sum_axis(ndarray::Axis(0));
        if l > 0 {
            let mut d = delta.dot(&net.layers[l].weights);
            let z = &pass.pre[l - 1];
            let act = net.layers[l - 1].activation;
            d.zip_mut_with(z, |g, &zv| *g *= act.derivative(zv));
            delta = d;
        }
    }
    Gradients { weights: gw, bias: gb }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean over the batch of 1/2 squared error; autoencoding targets.
    MeanSquared,
    /// Softmax cross-entropy against integer class labels.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone)]
pub enum Targets {
    Values(Array2<f64>),
    Labels(Vec<usize>),
}

/// Loss value and `d loss / d outputs`.
pub fn loss_and_grad(
    loss: Loss,
    outputs: &Array2<f64>,
    targets: &Targets,
) -> Result<(f64, Array2<f64>), TrainError> {
    let b = outputs.nrows() as f64;
    match (loss, targets) {
        (Loss::MeanSquared, Targets::Values(t)) => {
            if t.dim() != outputs.dim() {
                return Err(TrainError::ShapeMismatch {
                    expected: outputs.ncols(),
                    got: t.ncols(),
                });
            }
            let diff = outputs - t;
            let value = diff.iter().map(|v| 0.5 * v * v).sum::<f64>() / b;
            Ok((value, diff / b))
        }
        (Loss::SoftmaxCrossEntropy, Targets::Labels(labels)) => {
            if labels.len() != outputs.nrows() {
                return Err(TrainError::ShapeMismatch {
                    expected: outputs.nrows(),
                    got: labels.len(),
                });
            }
            let classes = outputs.ncols();
            let mut grad = Array2::zeros(outputs.raw_dim());
            let mut value = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(TrainError::LabelRange { label, classes });
                }
                let row = outputs.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let denom: f64 = exp.iter().sum();
                value -= ((exp[label] / denom).max(f64::MIN_POSITIVE)).ln();
                for j in 0..classes {
                    let p = exp[j] / denom;
                    grad[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) / b;
                }
            }
            Ok((value / b, grad))
        }
        _ => Err(TrainError::Config(
            "loss and target kinds do not match".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Rows,
    Columns,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionSchedule {
    pub layer: usize,
    pub grouping: Grouping,
    pub s: f64,
    /// Optimizer steps between projection events.
    pub period: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub loss: Loss,
    pub projection: Option<ProjectionSchedule>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            loss: Loss::SoftmaxCrossEntropy,
            projection: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Split a samples-by-columns matrix; when `has_labels` the last column
    /// holds integer class labels.
    pub fn from_matrix(m: &Array2<f64>, has_labels: bool) -> Result<Self, TrainError> {
        if !has_labels {
            return Ok(Dataset { features: m.clone(), labels: None });
        }
        if m.ncols() < 2 {
            return Err(TrainError::Config(
                "labelled data needs at least one feature column".into(),
            ));
        }
        let feats = m.slice(ndarray::s![.., ..m.ncols() - 1]).to_owned();
        let labels = m
            .column(m.ncols() - 1)
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(TrainError::Config(format!("label column holds non-integer {v}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset { features: feats, labels: Some(labels) })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    fn targets_for(&self, idx: &[usize], loss: Loss) -> Targets {
        match loss {
            Loss::MeanSquared => Targets::Values(select_rows(&self.features, idx)),
            Loss::SoftmaxCrossEntropy => Targets::Labels(
                idx.iter().map(|&i| self.labels.as_ref().unwrap()[i]).collect(),
            ),
        }
    }
}

fn select_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), m.ncols()), |(i, j)| m[[idx[i], j]])
}

/// Per-epoch and per-projection-event measurements.
#[derive(Debug, Clone, Default)]
pub struct TrainMetrics {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    /// Mean sparsity of the tracked layer's weight groups at each epoch end.
    pub epoch_layer_sparsity: Vec<f64>,
    /// Layer sparsity immediately after each projection event.
    pub projection_sparsities: Vec<f64>,
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(net: &Network) -> Self {
        AdamState {
            m_w: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            t: 0,
        }
    }
}

fn apply_gradients(
    net: &mut Network,
    grads: &Gradients,
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (l, layer) in net.layers.iter_mut().enumerate() {
                layer.weights.zip_mut_with(&grads.weights[l], |w, &g| {
                    *w -= cfg.learning_rate * g;
                });
                layer.bias.zip_mut_with(&grads.bias[l], |b, &g| {
                    *b -= cfg.learning_rate * g;
                });
            }
        }
        OptimizerKind::Adam => {
            let st = adam.as_mut().unwrap();
            st.t += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(st.t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(st.t as i32);
            for (l, layer) in net.layers.iter_mut().enumerate() {
                adam_step(
                    &mut layer.weights,
                    &grads.weights[l],
                    &mut st.m_w[l],
                    &mut st.v_w[l],
                    cfg.learning_rate,
                    bc1,
                    bc2,
                );
                adam_step_1d(
                    &mut layer.bias,
                    &grads.bias[l],
                    &mut st.m_b[l],
                    &mut st.v_b[l],
                    cfg.learning_rate,
                    bc1,
                    bc2,
                );
            }
        }
    }
}

fn adam_step(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for ((pv, &gv), (mv, vv)) in p
        .iter_mut()
        .zip(g.iter())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
        let mh = *mv / bc1;
        let vh = *vv / bc2;
        *pv -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

fn adam_step_1d(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for ((pv, &gv), (mv, vv)) in p
        .iter_mut()
        .zip(g.iter())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
        let mh = *mv / bc1;
        let vh = *vv / bc2;
        *pv -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// The layer's weight vectors under the configured grouping.
fn layer_groups(weights: &Array2<f64>, grouping: Grouping) -> Vec<Vec<f64>> {
    match grouping {
        Grouping::Rows => (0..weights.nrows()).map(|i| weights.row(i).to_vec()).collect(),
        Grouping::Columns => (0..weights.ncols()).map(|j| weights.column(j).to_vec()).collect(),
    }
}

fn layer_group_sparsity(weights: &Array2<f64>, grouping: Grouping) -> f64 {
    let groups = layer_groups(weights, grouping);
    let mut acc = 0.0;
    for g in &groups {
        acc += if g.iter().all(|&v| v == 0.0) { 1.0 } else { spar_slice(g) };
    }
    acc / groups.len() as f64
}

fn project_layer(
    net: &mut Network,
    sched: &ProjectionSchedule,
) -> Result<Option<f64>, TrainError> {
    let weights = &net.layers[sched.layer].weights;
    let groups = layer_groups(weights, sched.grouping);
    // a fully zeroed vector cannot be projected; skip the event
    if groups.iter().any(|g| g.iter().all(|&v| v == 0.0)) {
        return Ok(None);
    }
    let group = VectorGroup::from_rows(groups).map_err(ProjectionError::from)?;
    let res = project_group(&group, &ProjectionConfig::new(sched.s))?;
    let w = &mut net.layers[sched.layer].weights;
    match sched.grouping {
        Grouping::Rows => {
            for (i, v) in res.projected.iter().enumerate() {
                for (j, &val) in v.as_slice().iter().enumerate() {
                    w[[i, j]] = val;
                }
            }
        }
        Grouping::Columns => {
            for (j, v) in res.projected.iter().enumerate() {
                for (i, &val) in v.as_slice().iter().enumerate() {
                    w[[i, j]] = val;
                }
            }
        }
    }
    Ok(Some(layer_group_sparsity(&net.layers[sched.layer].weights, sched.grouping)))
}

/// Minibatch training with intermittent grouped sparse projection of one
/// layer. Returns the trained network and the metrics trace.
pub fn train_with_projection(
    net: &Network,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainMetrics), TrainError> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(TrainError::Config("epochs and batch size must be positive".into()));
    }
    if data.is_empty() {
        return Err(TrainError::Config("dataset is empty".into()));
    }
    if cfg.loss == Loss::SoftmaxCrossEntropy && data.labels.is_none() {
        return Err(TrainError::Config("classification needs labels".into()));
    }
    if let Some(p) = &cfg.projection {
        if p.layer >= net.layers.len() {
            return Err(TrainError::LayerIndex(p.layer));
        }
        if !(0.0..=1.0).contains(&p.s) {
            return Err(TrainError::Config(format!("target sparsity {} not in [0,1]", p.s)));
        }
        if p.period == 0 {
            return Err(TrainError::Config("projection period must be >= 1".into()));
        }
    }

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(&net)),
        OptimizerKind::Sgd => None,
    };
    let mut metrics = TrainMetrics::default();
    let tracked_layer = cfg.projection.as_ref().map(|p| p.layer).unwrap_or(0);
    let tracked_grouping = cfg
        .projection
        .as_ref()
        .map(|p| p.grouping)
        .unwrap_or(Grouping::Rows);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = select_rows(&data.features, chunk);
            let pass = forward(&net, &batch)?;
            let targets = data.targets_for(chunk, cfg.loss);
            let (_, lgrad) = loss_and_grad(cfg.loss, pass.outputs(), &targets)?;
            let grads = backward(&net, &pass, &lgrad);
            apply_gradients(&mut net, &grads, cfg, &mut adam);
            step += 1;
            if let Some(sched) = &cfg.projection {
                if step % sched.period == 0 {
                    if let Some(sp) = project_layer(&mut net, sched)? {
                        metrics.projection_sparsities.push(sp);
                    }
                }
            }
        }
        let (loss, acc) = evaluate(&net, data, cfg.loss)?;
        metrics.epoch_loss.push(loss);
        if let Some(a) = acc {
            metrics.epoch_accuracy.push(a);
        }
        metrics.epoch_layer_sparsity.push(layer_group_sparsity(
            &net.layers[tracked_layer].weights,
            tracked_grouping,
        ));
    }
    Ok((net, metrics))
}

/// Forward-only loss and (when labelled) argmax accuracy.
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    loss: Loss,
) -> Result<(f64, Option<f64>), TrainError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let pass = forward(net, &data.features)?;
    let targets = data.targets_for(&idx, loss);
    let (value, _) = loss_and_grad(loss, pass.outputs(), &targets)?;
    let accuracy = data.labels.as_ref().map(|labels| {
        let out = pass.outputs();
        let mut hits = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = out.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == label {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    });
    Ok((value, accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_net(rng: &mut ChaCha8Rng, dims: &[usize], acts: &[Activation]) -> Network {
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let weights = Array2::from_shape_fn((dims[i + 1], dims[i]), |_| {
                let v: f64 = StandardNormal.sample(rng);
                0.7 * v
            });
            let bias = Array1::from_shape_fn(dims[i + 1], |_| {
                let v: f64 = StandardNormal.sample(rng);
                0.3 * v
            });
            layers.push(Layer { weights, bias, activation: acts[i] });
        }
        Network::new(layers).unwrap()
    }

    fn blob_dataset(n_per: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(2 * n_per);
        let mut labels = Vec::with_capacity(2 * n_per);
        for class in 0..2usize {
            let center = if class == 0 { 1.5 } else { -1.5 };
            for _ in 0..n_per {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                rows.push(vec![center + 0.6 * a, center + 0.6 * b]);
                labels.push(class);
            }
        }
        let feats = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        Dataset { features: feats, labels: Some(labels) }
    }

    #[test]
    fn forward_identity_layer() {
        let layer = Layer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Linear,
        };
        let net = Network::new(vec![layer]).unwrap();
        let batch =
            Array2::from_shape_vec((2, 3), vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let pass = forward(&net, &batch).unwrap();
        assert_eq!(pass.outputs(), &batch);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let layer = Layer {
            weights: Array2::eye(2),
            bias: Array1::from_vec(vec![-10.0, -10.0]),
            activation: Activation::Relu,
        };
        let net = Network::new(vec![layer]).unwrap();
        let batch = Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
        let pass = forward(&net, &batch).unwrap();
        assert_eq!(pass.outputs().row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = tiny_net(&mut rng, &[3, 4, 2], &[Activation::Sigmoid, Activation::Linear]);
        let batch = Array2::from_shape_fn((3, 3), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let pass = forward(&net, &batch).unwrap();
        for b in 0..3 {
            for o in 0..2 {
                let mut hidden = [0.0f64; 4];
                for hu in 0..4 {
                    let mut z = net.layers[0].bias[hu];
                    for i in 0..3 {
                        z += net.layers[0].weights[[hu, i]] * batch[[b, i]];
                    }
                    hidden[hu] = 1.0 / (1.0 + (-z).exp());
                }
                let mut out = net.layers[1].bias[o];
                for hu in 0..4 {
                    out += net.layers[1].weights[[o, hu]] * hidden[hu];
                }
                assert!((pass.outputs()[[b, o]] - out).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = tiny_net(&mut rng, &[3, 2], &[Activation::Linear]);
        let batch = Array2::zeros((2, 4));
        assert!(matches!(
            forward(&net, &batch),
            Err(TrainError::ShapeMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = tiny_net(&mut rng, &[2, 3, 2], &[Activation::Relu, Activation::Linear]);
        let batch = Array2::from_shape_fn((4, 2), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let pass = forward(&net, &batch).unwrap();
        let zeros = Array2::zeros((4, 2));
        let grads = backward(&net, &pass, &zeros);
        for gw in &grads.weights {
            assert!(gw.iter().all(|&v| v == 0.0));
        }
        for gb in &grads.bias {
            assert!(gb.iter().all(|&v| v == 0.0));
        }
    }

    fn numeric_check(net: &Network, data: &Dataset, loss: Loss) {
        let idx: Vec<usize> = (0..data.len()).collect();
        let targets = data.targets_for(&idx, loss);
        let loss_of = |n: &Network| {
            let pass = forward(n, &data.features).unwrap();
            loss_and_grad(loss, pass.outputs(), &targets).unwrap().0
        };
        let pass = forward(net, &data.features).unwrap();
        let (_, lgrad) = loss_and_grad(loss, pass.outputs(), &targets).unwrap();
        let grads = backward(net, &pass, &lgrad);
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for i in 0..net.layers[l].weights.nrows() {
                for j in 0..net.layers[l].weights.ncols() {
                    let mut plus = net.clone();
                    plus.layers[l].weights[[i, j]] += h;
                    let mut minus = net.clone();
                    minus.layers[l].weights[[i, j]] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let an = grads.weights[l][[i, j]];
                    assert!(
                        (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-3),
                        "layer {l} w[{i},{j}]: analytic {an} vs fd {fd}"
                    );
                }
            }
            for i in 0..net.layers[l].bias.len() {
                let mut plus = net.clone();
                plus.layers[l].bias[i] += h;
                let mut minus = net.clone();
                minus.layers[l].bias[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.bias[l][i];
                assert!(
                    (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-3),
                    "layer {l} b[{i}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = Array2::from_shape_fn((5, 3), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let labelled = Dataset {
            features: feats.clone(),
            labels: Some(vec![0, 1, 0, 1, 1]),
        };
        let unlabelled = Dataset { features: feats, labels: None };
        for acts in [
            [Activation::Relu, Activation::Linear],
            [Activation::Sigmoid, Activation::Linear],
            [Activation::Linear, Activation::Sigmoid],
        ] {
            let net = tiny_net(&mut rng, &[3, 4, 2], &acts);
            numeric_check(&net, &labelled, Loss::SoftmaxCrossEntropy);
            numeric_check(&net, &unlabelled, Loss::MeanSquared);
        }
    }

    #[test]
    fn linear_mse_gradient_matches_normal_equation_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = tiny_net(&mut rng, &[3, 2], &[Activation::Linear]);
        let feats = Array2::from_shape_fn((6, 3), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let targets = Array2::from_shape_fn((6, 2), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let pass = forward(&net, &feats).unwrap();
        let (_, lgrad) =
            loss_and_grad(Loss::MeanSquared, pass.outputs(), &Targets::Values(targets.clone()))
                .unwrap();
        let grads = backward(&net, &pass, &lgrad);
        // closed form: (1/B) (X W^T + b - T)^T X
        let resid = pass.outputs() - &targets;
        let oracle = resid.t().dot(&feats) / 6.0;
        for (a, b) in grads.weights[0].iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_fixtures() {
        // perfect classifier on two points
        let layer = Layer {
            weights: Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap(),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        };
        let net = Network::new(vec![layer]).unwrap();
        let data = Dataset {
            features: Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap(),
            labels: Some(vec![0, 1]),
        };
        let (_, acc) = evaluate(&net, &data, Loss::SoftmaxCrossEntropy).unwrap();
        assert_eq!(acc, Some(1.0));

        // constant output on balanced labels: argmax ties to class 0
        let const_layer = Layer {
            weights: Array2::zeros((2, 1)),
            bias: Array1::zeros(2),
            activation: Activation::Linear,
        };
        let cnet = Network::new(vec![const_layer]).unwrap();
        let balanced = Dataset {
            features: Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            labels: Some(vec![0, 1, 0, 1]),
        };
        let (_, acc) = evaluate(&cnet, &balanced, Loss::SoftmaxCrossEntropy).unwrap();
        assert_eq!(acc, Some(0.5));

        // hand-counted confusion on a 10-sample fixture
        let data10 = Dataset {
            features: Array2::from_shape_vec(
                (10, 1),
                vec![2.0, 1.0, -3.0, 0.5, -0.5, 4.0, -2.0, 0.1, -0.1, 5.0],
            )
            .unwrap(),
            labels: Some(vec![0, 0, 1, 0, 0, 0, 1, 1, 1, 0]),
        };
        // classifier predicts class 0 iff x > 0: labels disagree at
        // indices 4 (x=-0.5, label 0) and 7 (x=0.1, label 1) -> 8/10
        let (_, acc) = evaluate(&net, &data10, Loss::SoftmaxCrossEntropy).unwrap();
        assert_eq!(acc, Some(0.8));
    }

    #[test]
    fn projection_events_pin_layer_sparsity() {
        let data = blob_dataset(60, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::init_mlp(&[2, 16, 2], &mut rng).unwrap();
        let mut cfg = TrainConfig::new(3, 16);
        cfg.projection = Some(ProjectionSchedule {
            layer: 0,
            grouping: Grouping::Rows,
            s: 0.5,
            period: 15,
        });
        cfg.seed = 7;
        let (_, metrics) = train_with_projection(&net, &data, &cfg).unwrap();
        assert!(!metrics.projection_sparsities.is_empty());
        for sp in &metrics.projection_sparsities {
            assert!((sp - 0.5).abs() <= 1e-4, "post-projection sparsity {sp}");
        }
    }

    #[test]
    fn projection_preserves_sign_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Network::init_mlp(&[4, 6, 2], &mut rng).unwrap();
        let before = net.layers[0].weights.clone();
        let sched = ProjectionSchedule {
            layer: 0,
            grouping: Grouping::Rows,
            s: 0.6,
            period: 1,
        };
        project_layer(&mut net, &sched).unwrap();
        let after = &net.layers[0].weights;
        for (b, a) in before.iter().zip(after.iter()) {
            if *a != 0.0 {
                assert!(a * b > 0.0, "sign flipped: {b} -> {a}");
            }
        }
    }

    #[test]
    fn zero_target_sparsity_is_a_noop_on_dense_uniform_rows() {
        let layer = Layer {
            weights: Array2::from_elem((3, 4), 0.5),
            bias: Array1::zeros(3),
            activation: Activation::Relu,
        };
        let mut net = Network::new(vec![
            layer,
            Layer {
                weights: Array2::from_elem((2, 3), 0.1),
                bias: Array1::zeros(2),
                activation: Activation::Linear,
            },
        ])
        .unwrap();
        let before = net.layers[0].weights.clone();
        let sched = ProjectionSchedule {
            layer: 0,
            grouping: Grouping::Rows,
            s: 0.0,
            period: 1,
        };
        project_layer(&mut net, &sched).unwrap();
        assert_eq!(before, net.layers[0].weights);
    }

    #[test]
    fn sgd_full_batch_loss_nonincreasing_without_projection() {
        let data = blob_dataset(50, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init_mlp(&[2, 16, 2], &mut rng).unwrap();
        let mut cfg = TrainConfig::new(30, data.len());
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.learning_rate = 1e-3;
        cfg.seed = 3;
        let (_, metrics) = train_with_projection(&net, &data, &cfg).unwrap();
        for w in metrics.epoch_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn projection_layer_index_validated() {
        let data = blob_dataset(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init_mlp(&[2, 4, 2], &mut rng).unwrap();
        let mut cfg = TrainConfig::new(1, 4);
        cfg.projection = Some(ProjectionSchedule {
            layer: 5,
            grouping: Grouping::Rows,
            s: 0.5,
            period: 15,
        });
        assert!(matches!(
            train_with_projection(&net, &data, &cfg),
            Err(TrainError::LayerIndex(5))
        ));
    }

    #[test]
    fn dataset_from_matrix_splits_labels() {
        let m = Array2::from_shape_vec((3, 3), vec![1.0, 2.0, 0.0, 3.0, 4.0, 1.0, 5.0, 6.0, 0.0])
            .unwrap();
        let d = Dataset::from_matrix(&m, true).unwrap();
        assert_eq!(d.features.dim(), (3, 2));
        assert_eq!(d.labels.as_ref().unwrap(), &vec![0, 1, 0]);
        let bad =
            Array2::from_shape_vec((1, 2), vec![1.0, 0.5]).unwrap();
        assert!(Dataset::from_matrix(&bad, true).is_err());
    }
}
