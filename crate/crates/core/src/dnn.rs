//! Fully connected antenna-selection classifier.
//!
//! The network maps the stacked real/imaginary channel to one softmax class
//! per antenna subset. Hidden layers use ReLU. Training minimizes softmax
//! cross-entropy against COAS labels with Adam.
//!
//! Everything runs in `f64` on `ndarray` matrices. Training with a fixed seed
//! is bit-reproducible on a fixed build.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{
    binomial, coas_select, feature_vector, AntennaSubset, ChannelMatrix,
};
use crate::error::{Error, Result};

/// Weights (`inputs × outputs`) and bias of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn zeros_like(&self) -> Self {
        Layer::zeros(self.weights.nrows(), self.weights.ncols())
    }
}

/// Network parameters for layer widths `[P, S_1, .., S_L, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Gradients share the parameter layout.
pub type Gradients = MlpParams;

impl MlpParams {
    /// He-style initialization: weights uniform with variance `2 / fan_in`,
    /// biases zero.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound));
                Layer {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(MlpParams {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Wraps existing layers after checking that consecutive dimensions agree.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::arg(format!("layer {i}: bias length does not match outputs")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weights.nrows() != l.weights.ncols() {
                    return Err(Error::arg(format!(
                        "layer {} takes {} inputs but layer {i} produces {}",
                        i + 1,
                        next.weights.nrows(),
                        l.weights.ncols()
                    )));
                }
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// `[P, S_1, .., S_L, T]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::arg(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Row-wise softmax of logits, in place.
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Forward pass keeping every layer's pre-activation.
fn forward_cache(params: &MlpParams, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut act = x.to_owned();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let z = act.dot(&layer.weights) + &layer.bias;
        if i < last {
            act = z.mapv(|v| v.max(0.0));
        }
        pre.push(z);
    }
    pre
}

fn logits(params: &MlpParams, x: ArrayView2<f64>) -> Array2<f64> {
    let last = params.layers.len() - 1;
    let mut act = x.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        act = act.dot(&layer.weights) + &layer.bias;
        if i < last {
            act.mapv_inplace(|v| v.max(0.0));
        }
    }
    act
}

/// Logits for a single feature vector, accumulating weight rows scaled by
/// each input. A 1-row matrix product would repack every weight matrix.
fn logits_one(params: &MlpParams, x: &[f64]) -> Vec<f64> {
    let last = params.layers.len() - 1;
    let mut act = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = layer.bias.to_vec();
        for (&a, w) in act.iter().zip(layer.weights.rows()) {
            if a != 0.0 {
                match w.as_slice() {
                    Some(w) => z.iter_mut().zip(w).for_each(|(zj, &wj)| *zj += a * wj),
                    None => z.iter_mut().zip(w.iter()).for_each(|(zj, &wj)| *zj += a * wj),
                }
            }
        }
        if i < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        act = z;
    }
    act
}

fn check_batch(params: &MlpParams, x: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<()> {
    if x.ncols() != params.n_inputs() {
        return Err(Error::arg(format!(
            "feature length {} does not match network input {}",
            x.ncols(),
            params.n_inputs()
        )));
    }
    if let Some(labels) = labels {
        if labels.len() != x.nrows() {
            return Err(Error::arg("one label per feature row is required"));
        }
        let t = params.n_classes();
        if let Some(bad) = labels.iter().find(|&&l| l == 0 || l > t) {
            return Err(Error::arg(format!("label {bad} outside 1..={t}")));
        }
    }
    Ok(())
}

/// Class probabilities for a batch of feature rows.
pub fn forward_batch(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_batch(params, x, None)?;
    let mut z = logits(params, x);
    softmax_rows(&mut z);
    Ok(z)
}

/// Class probabilities for one feature vector.
pub fn forward(params: &MlpParams, features: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, features.len()), features).expect("contiguous slice");
    check_batch(params, x, None)?;
    let mut z = Array2::from_shape_vec((1, params.n_classes()), logits_one(params, features)).expect("one row");
    softmax_rows(&mut z);
    Ok(z.into_raw_vec_and_offset().0)
}

/// Per-row cross-entropy `logsumexp(z) - z[label]` from logits.
fn cross_entropy(z: ArrayView1<f64>, label: usize) -> f64 {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label - 1]
}

fn argmax_first(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to every weight and bias. Labels are 1-based classes.
pub fn loss_and_gradients(params: &MlpParams, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
    if x.nrows() == 0 {
        return Err(Error::arg("empty minibatch"));
    }
    check_batch(params, x, Some(labels))?;
    let (loss, _, grads) = backprop(params, x, labels);
    Ok((loss, grads))
}

/// Returns (mean loss, correct predictions, gradients).
fn backprop(params: &MlpParams, x: ArrayView2<f64>, labels: &[usize]) -> (f64, usize, Gradients) {
    let batch = x.nrows() as f64;
    let pre = forward_cache(params, x);
    let out = pre.last().unwrap();

    let mut loss = 0.0;
    let mut correct = 0;
    let mut delta = out.clone();
    softmax_rows(&mut delta);
    for (i, (&label, z)) in labels.iter().zip(out.rows()).enumerate() {
        loss += cross_entropy(z, label);
        correct += usize::from(argmax_first(z) + 1 == label);
        delta[[i, label - 1]] -= 1.0;
    }
    delta /= batch;

    let mut grads = params.zeros_like();
    for k in (0..params.layers.len()).rev() {
        let input = if k == 0 {
            x.to_owned()
        } else {
            pre[k - 1].mapv(|v| v.max(0.0))
        };
        grads.layers[k].weights = input.t().dot(&delta);
        grads.layers[k].bias = delta.sum_axis(Axis(0));
        if k > 0 {
            let mut back = delta.dot(&params.layers[k].weights.t());
            Zip::from(&mut back).and(&pre[k - 1]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    (loss / batch, correct, grads)
}

/// Mean loss and accuracy of argmax predictions (lowest class wins ties).
pub fn evaluate(params: &MlpParams, x: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, f64)> {
    if x.nrows() == 0 {
        return Err(Error::arg("cannot evaluate on an empty partition"));
    }
    check_batch(params, x, Some(labels))?;
    const CHUNK: usize = 2048;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for start in (0..x.nrows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.nrows());
        let z = logits(params, x.slice(s![start..end, ..]));
        for (row, &label) in z.rows().into_iter().zip(&labels[start..end]) {
            loss += cross_entropy(row, label);
            correct += usize::from(argmax_first(row) + 1 == label);
        }
    }
    let n = x.nrows() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Picks the subset whose class has the highest probability; ties go to the
/// lowest label.
pub fn predict_subset(params: &MlpParams, h: &ChannelMatrix, n_sel: usize) -> Result<AntennaSubset> {
    let classes = binomial(h.n_rx(), n_sel);
    if classes != params.n_classes() as u64 {
        return Err(Error::config(format!(
            "network has {} classes but C({}, {n_sel}) = {classes}",
            params.n_classes(),
            h.n_rx()
        )));
    }
    let features = feature_vector(h);
    let x = ArrayView2::from_shape((1, features.len()), &features).expect("contiguous slice");
    check_batch(params, x, None)?;
    let z = logits_one(params, &features);
    let label = argmax_first(ArrayView1::from(&z)) + 1;
    AntennaSubset::from_label(label, h.n_rx(), n_sel)
}

/// COAS-labelled training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_reflectors: usize,
    pub n_rx: usize,
    pub n_sel: usize,
    /// One `2·N·N_R` feature row per sample.
    pub features: Array2<f64>,
    /// 1-based subset labels.
    pub labels: Vec<usize>,
    /// Rows `0..n_train` train, the rest validate.
    pub n_train: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        binomial(self.n_rx, self.n_sel) as usize
    }

    pub fn train_features(&self) -> ArrayView2<'_, f64> {
        self.features.slice(s![..self.n_train, ..])
    }

    pub fn train_labels(&self) -> &[usize] {
        &self.labels[..self.n_train]
    }

    pub fn validation_features(&self) -> ArrayView2<'_, f64> {
        self.features.slice(s![self.n_train.., ..])
    }

    pub fn validation_labels(&self) -> &[usize] {
        &self.labels[self.n_train..]
    }

    /// Writes `split,label,f0,..` rows with a header line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("split,label");
        for i in 0..self.features.ncols() {
            header.push_str(&format!(",f{i}"));
        }
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let split = if i < self.n_train { "train" } else { "validation" };
            write!(w, "{split},{}", self.labels[i]).map_err(io)?;
            for v in row {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// The dataset stream for `seed`, kept apart from the stream that
/// initializes and shuffles during training with the same seed.
pub fn dataset_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Generates `n_samples` channels, labels each with its COAS subset and
/// reserves the last `validation_fraction` of rows for validation.
pub fn generate_dataset<R: Rng + ?Sized>(
    n_samples: usize,
    n_reflectors: usize,
    n_rx: usize,
    n_sel: usize,
    validation_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::arg("dataset needs at least one sample"));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::config(format!(
            "validation fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    let width = 2 * n_reflectors * n_rx;
    let mut features = Array2::zeros((n_samples, width));
    let mut labels = Vec::with_capacity(n_samples);
    for mut row in features.rows_mut() {
        let h = ChannelMatrix::sample(n_reflectors, n_rx, rng)?;
        labels.push(coas_select(&h, n_sel)?.subset().label());
        row.assign(&ArrayView1::from(&feature_vector(&h)));
    }
    let n_val = (n_samples as f64 * validation_fraction).round() as usize;
    Ok(Dataset {
        n_reflectors,
        n_rx,
        n_sel,
        features,
        labels,
        n_train: n_samples - n_val,
    })
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_samples: usize,
    pub validation_fraction: f64,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Optional cap on the total number of Adam steps.
    pub max_iterations: Option<usize>,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_samples: 1_000_000,
            validation_fraction: 0.10,
            minibatch: 256,
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 400,
            max_iterations: None,
            hidden_layers: vec![256; 4],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation fraction must lie in (0, 1)"));
        }
        if self.n_samples == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::config("sample count, minibatch and epochs must be positive"));
        }
        if self.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("learning rate must be positive and betas in [0, 1)"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden layers must be nonempty with positive widths"));
        }
        Ok(())
    }

    /// Short SHA-256 digest of the serialized configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: MlpParams,
    v: MlpParams,
}

impl Adam {
    pub fn new(params: &MlpParams, config: &TrainConfig) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut MlpParams, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, m), v), g) in params
            .layers
            .iter_mut()
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
            .zip(&grads.layers)
        {
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}

/// Loss and accuracy after one epoch. Epoch 0 is the untrained network.
///
/// From epoch 1 on, the training figures are running means over that
/// epoch's minibatches; validation figures are always full passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: Vec<EpochStats>,
    pub iterations: usize,
}

/// Trains a fresh network on `dataset`.
///
/// One ChaCha stream seeded from `config.seed` first initializes the
/// weights and then shuffles the training rows at the start of every epoch.
/// `on_epoch` sees each epoch's statistics as they are produced.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.minibatch > dataset.n_train {
        return Err(Error::config(format!(
            "minibatch {} exceeds the {} training rows",
            config.minibatch, dataset.n_train
        )));
    }
    let mut sizes = vec![dataset.features.ncols()];
    sizes.extend(&config.hidden_layers);
    sizes.push(dataset.n_classes());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = MlpParams::init(&sizes, &mut rng)?;
    let mut adam = Adam::new(&params, config);

    let x_train = dataset.train_features();
    let y_train = dataset.train_labels();
    let has_val = dataset.n_train < dataset.len();
    let validate = |p: &MlpParams| -> Result<(f64, f64)> {
        if has_val {
            evaluate(p, dataset.validation_features(), dataset.validation_labels())
        } else {
            Ok((f64::NAN, f64::NAN))
        }
    };

    let start = Instant::now();
    let (train_loss, train_accuracy) = evaluate(&params, x_train, y_train)?;
    let (val_loss, val_accuracy) = validate(&params)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss,
        train_accuracy,
        val_loss,
        val_accuracy,
        seconds: start.elapsed().as_secs_f64(),
    }];
    on_epoch(&history[0]);

    let mut order: Vec<usize> = (0..dataset.n_train).collect();
    let mut iterations = 0;
    let cap = config.max_iterations.unwrap_or(usize::MAX);
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.minibatch) {
            if iterations >= cap {
                break;
            }
            let xb = x_train.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let (loss, hits, grads) = backprop(&params, xb.view(), &yb);
            adam.update(&mut params, &grads);
            iterations += 1;
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            seen += batch.len();
        }
        if seen > 0 {
            let (val_loss, val_accuracy) = validate(&params)?;
            let stats = EpochStats {
                epoch,
                train_loss: loss_sum / seen as f64,
                train_accuracy: correct as f64 / seen as f64,
                val_loss,
                val_accuracy,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_epoch(&stats);
            history.push(stats);
        }
        if iterations >= cap {
            break 'epochs;
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        iterations,
    })
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, config, |_| {})
}

pub const CHECKPOINT_FORMAT: &str = "ris-rqsm-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub n_reflectors: usize,
    pub n_rx: usize,
    pub n_sel: usize,
    pub seed: u64,
    pub config_hash: String,
    pub train_config: Option<TrainConfig>,
    pub epochs_run: usize,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    /// Row-major `inputs × outputs` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    metadata: ModelMetadata,
}

/// A trained selector as stored on disk (JSON text).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub metadata: ModelMetadata,
}

impl Checkpoint {
    pub fn new(params: MlpParams, metadata: ModelMetadata) -> Result<Self> {
        let sizes = params.layer_sizes();
        let expect_in = 2 * metadata.n_reflectors * metadata.n_rx;
        let expect_out = binomial(metadata.n_rx, metadata.n_sel) as usize;
        if sizes[0] != expect_in || *sizes.last().unwrap() != expect_out {
            return Err(Error::config(format!(
                "network {sizes:?} does not fit N={}, N_R={}, N_S={} (needs {expect_in} inputs, {expect_out} classes)",
                metadata.n_reflectors, metadata.n_rx, metadata.n_sel
            )));
        }
        Ok(Checkpoint { params, metadata })
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.params.layer_sizes(),
            weights: self
                .params
                .layers
                .iter()
                .map(|l| l.weights.iter().copied().collect())
                .collect(),
            biases: self.params.layers.iter().map(|l| l.bias.to_vec()).collect(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            what: "model checkpoint",
            msg,
        };
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let sizes = &file.layer_sizes;
        if sizes.len() < 2 || file.weights.len() != sizes.len() - 1 || file.biases.len() != sizes.len() - 1 {
            return Err(bad(format!("layer count does not match sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, (w, b)) in file.weights.into_iter().zip(file.biases).enumerate() {
            let weights = Array2::from_shape_vec((sizes[i], sizes[i + 1]), w)
                .map_err(|_| bad(format!("layer {i}: weight count does not match {}x{}", sizes[i], sizes[i + 1])))?;
            if b.len() != sizes[i + 1] {
                return Err(bad(format!("layer {i}: bias length {} != {}", b.len(), sizes[i + 1])));
            }
            layers.push(Layer {
                weights,
                bias: Array1::from(b),
            });
        }
        Self::new(MlpParams::from_layers(layers)?, file.metadata)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Random weights and biases; nonzero biases keep pre-activations off
    /// the ReLU kink.
    fn tiny_params(seed: u64) -> MlpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::init(&[4, 3, 3, 2], &mut rng).unwrap();
        for layer in p.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn single_and_batch_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = MlpParams::init(&[32, 24, 24, 6], &mut rng).unwrap();
        let x = Array2::from_shape_fn((40, 32), |_| rng.random_range(-2.0..2.0));
        let batch = forward_batch(&params, x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let one = forward(&params, row.as_slice().unwrap()).unwrap();
            for (a, b) in one.iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            let h = ChannelMatrix::from_features(4, 4, row.as_slice().unwrap()).unwrap();
            assert_eq!(predict_subset(&params, &h, 2).unwrap().label(), argmax_first(batch.row(i)) + 1);
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = MlpParams::zeros(&[64, 8, 8, 6]).unwrap();
        let probs = forward(&p, &[0.3; 64]).unwrap();
        assert!(probs.iter().all(|&q| (q - 1.0 / 6.0).abs() < 1e-15));
        let x = Array2::from_elem((3, 64), 1.0);
        let (loss, _) = loss_and_gradients(&p, x.view(), &[1, 4, 6]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        let h = ChannelMatrix::sample(8, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(predict_subset(&p, &h, 2).unwrap().label(), 1);
    }

    #[test]
    fn probabilities_normalized_and_shift_invariant() {
        let mut p = MlpParams::init(&[8, 16, 16, 5], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.7).collect();
        let probs = forward(&p, &x).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&q| q >= 0.0));
        p.layers_mut().last_mut().unwrap().bias += 3.25;
        let shifted = forward(&p, &x).unwrap();
        for (a, b) in probs.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(forward(&p, &x[..7]).is_err());
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut p = MlpParams::zeros(&[2, 2, 3]).unwrap();
        p.layers_mut()[1].bias = array![0.0, 60.0, 0.0];
        let x = array![[1.0, -1.0]];
        let (loss, _) = loss_and_gradients(&p, x.view(), &[2]).unwrap();
        assert!(loss < 1e-20);
    }

    /// Central differences on every parameter.
    fn finite_difference_check(params: &MlpParams, x: ArrayView2<f64>, labels: &[usize]) -> f64 {
        let (_, grads) = loss_and_gradients(params, x, labels).unwrap();
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        let loss_at = |p: &MlpParams| loss_and_gradients(p, x, labels).unwrap().0;
        for k in 0..params.layers().len() {
            for idx in 0..params.layers()[k].weights.len() {
                let (r, c) = (idx / params.layers()[k].weights.ncols(), idx % params.layers()[k].weights.ncols());
                let mut plus = params.clone();
                plus.layers_mut()[k].weights[[r, c]] += step;
                let mut minus = params.clone();
                minus.layers_mut()[k].weights[[r, c]] -= step;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let an = grads.layers()[k].weights[[r, c]];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
            }
            for j in 0..params.layers()[k].bias.len() {
                let mut plus = params.clone();
                plus.layers_mut()[k].bias[j] += step;
                let mut minus = params.clone();
                minus.layers_mut()[k].bias[j] -= step;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let an = grads.layers()[k].bias[j];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..5 {
            let p = tiny_params(seed);
            let x = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-2.0..2.0));
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(1..=2)).collect();
            let worst = finite_difference_check(&p, x.view(), &labels);
            assert!(worst < 1e-5, "seed {seed}: relative error {worst}");
        }
    }

    #[test]
    fn separable_two_class_problem_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let features = Array2::from_shape_simple_fn((n, 4), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = features
            .rows()
            .into_iter()
            .map(|r| if r[0] + 0.5 * r[1] - r[3] > 0.0 { 2 } else { 1 })
            .collect();
        // borrow the dataset container; dimensions only matter for n_classes
        let data = Dataset {
            n_reflectors: 2,
            n_rx: 2,
            n_sel: 1,
            features,
            labels,
            n_train: 900,
        };
        let config = TrainConfig {
            n_samples: n,
            minibatch: 32,
            learning_rate: 0.01,
            epochs: 60,
            hidden_layers: vec![16, 16],
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&data, &config).unwrap();
        let (_, acc) = evaluate(&out.params, data.train_features(), data.train_labels()).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
        assert!(out.history.last().unwrap().val_accuracy > 0.95);
    }

    #[test]
    fn dataset_shape_and_labels() {
        let data = generate_dataset(1000, 8, 4, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(data.features.dim(), (1000, 64));
        assert_eq!(data.n_train, 900);
        assert_eq!(data.validation_labels().len(), 100);
        assert!(data.labels.iter().all(|&l| (1..=6).contains(&l)));
        for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
            let h = ChannelMatrix::from_features(8, 4, row.as_slice().unwrap()).unwrap();
            // exhaustive oracle over the six pairs
            let norms: Vec<f64> = (0..4).map(|r| h.column_norm_sqr(r)).collect();
            let mut best = (f64::NEG_INFINITY, 0);
            let mut lab = 0;
            for a in 0..4 {
                for b in a + 1..4 {
                    lab += 1;
                    if norms[a] + norms[b] > best.0 {
                        best = (norms[a] + norms[b], lab);
                    }
                }
            }
            assert_eq!(label, best.1);
        }
        assert!(generate_dataset(0, 8, 4, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let again = generate_dataset(1000, 8, 4, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn labels_are_balanced() {
        let data = generate_dataset(100_000, 8, 4, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let mut hist = [0usize; 6];
        for &l in &data.labels {
            hist[l - 1] += 1;
        }
        let p: f64 = 1.0 / 6.0;
        let mean = 100_000.0 * p;
        let sd = (100_000.0 * p * (1.0 - p)).sqrt();
        for count in hist {
            assert!((count as f64 - mean).abs() < 3.0 * sd, "{hist:?}");
        }
    }

    #[test]
    fn evaluate_edge_cases() {
        let p = MlpParams::zeros(&[2, 3]).unwrap();
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(evaluate(&p, empty.view(), &[]).is_err());
        assert!(loss_and_gradients(&p, empty.view(), &[]).is_err());

        // a perfect predictor: class = 1 + argmax of the two inputs
        let mut perfect = MlpParams::zeros(&[2, 3]).unwrap();
        perfect.layers_mut()[0].weights = array![[10.0, 0.0, -10.0], [0.0, 10.0, -10.0]];
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, 0.5]];
        let (_, acc) = evaluate(&perfect, x.view(), &[1, 2, 1]).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(evaluate(&perfect, x.view(), &[1, 2, 1]).unwrap(), evaluate(&perfect, x.view(), &[1, 2, 1]).unwrap());
        assert!(evaluate(&perfect, x.view(), &[1, 2, 4]).is_err());
    }

    #[test]
    fn training_is_deterministic_and_order_insensitive_at_epoch_zero() {
        let data = generate_dataset(600, 4, 4, 2, 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let config = TrainConfig {
            n_samples: 600,
            minibatch: 64,
            epochs: 3,
            hidden_layers: vec![16, 16],
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.iterations, 3 * 9);

        let mut reversed = data.clone();
        let n = reversed.n_train;
        let idx: Vec<usize> = (0..n).rev().chain(n..data.len()).collect();
        reversed.features = data.features.select(Axis(0), &idx);
        reversed.labels = idx.iter().map(|&i| data.labels[i]).collect();
        let c = train(&reversed, &config).unwrap();
        assert!((c.history[0].train_loss - a.history[0].train_loss).abs() < 1e-12);

        let capped = train(&data, &TrainConfig { max_iterations: Some(10), ..config.clone() }).unwrap();
        assert_eq!(capped.iterations, 10);
        assert!(train(&data, &TrainConfig { minibatch: 10_000, ..config }).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let params = MlpParams::init(&[64, 8, 6], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let meta = ModelMetadata {
            n_reflectors: 8,
            n_rx: 4,
            n_sel: 2,
            seed: 1,
            config_hash: TrainConfig::default().hash(),
            train_config: Some(TrainConfig::default()),
            epochs_run: 0,
            validation_accuracy: None,
        };
        let ck = Checkpoint::new(params.clone(), meta.clone()).unwrap();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);

        let wrong = ModelMetadata { n_reflectors: 16, ..meta };
        assert!(matches!(Checkpoint::new(params, wrong), Err(Error::InvalidConfig(_))));
        let tampered = ck.to_json().replacen("[64,8,6]", "[64,9,6]", 1);
        assert!(Checkpoint::from_json(&tampered).is_err());
    }
}
