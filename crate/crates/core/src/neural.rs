//! Dense feed-forward regressor mapping (temperature, humidity) to absolute
//! ranging error.
//!
//! Inputs and target are z-scored with statistics fitted on the training data
//! only. Hidden layers use ReLU and the output is linear. Training minimises
//! the mean squared error (no ½ factor) with Adam on shuffled mini-batches.
//! An inner 10% hold-out drives early stopping, and the weights from the
//! best hold-out epoch are restored at the end.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::datastore::{CompensatedRecord, Dataset};
use crate::geometry::Layout;
use crate::{derive_rng, Error, Result};

/// z-score parameters for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean and population standard deviation (divisor n).
pub fn fit_normalizer(values: &[f64]) -> Result<Normalizer> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::ZeroVariance(format!(
            "cannot normalize {} identical values",
            values.len()
        )));
    }
    Ok(Normalizer { mean, std })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Shape `(outputs, inputs)`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Gradients laid out like the network's layers.
pub type Gradients = Vec<DenseLayer>;

/// ReLU hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

impl Network {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Network {
            layers: sizes.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs() as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs()];
        sizes.extend(self.layers.iter().map(DenseLayer::outputs));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    fn check_width(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} input features, got {}",
                self.input_width(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Activations of every layer, input first; pre-activations are not kept
    /// because ReLU's derivative can be read off its output.
    fn activations(&self, inputs: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights.t());
            z += &layer.biases;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Row `i` of the output depends only on row `i` of `inputs`.
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(&inputs)?;
        Ok(self.activations(inputs).pop().expect("at least one layer"))
    }

    /// Mean squared error over all rows and outputs.
    pub fn mse(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(inputs)?;
        check_targets(&out, &targets)?;
        Ok((&out - &targets).mapv(|r| r * r).mean().unwrap_or(0.0))
    }

    /// Exact gradients of the mean squared error; also returns the loss.
    pub fn backward(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        self.check_width(&inputs)?;
        let acts = self.activations(inputs);
        let out = acts.last().expect("output layer");
        check_targets(out, &targets)?;

        let residual = out - &targets;
        let loss = residual.mapv(|r| r * r).mean().unwrap_or(0.0);
        let mut delta = residual * (2.0 / out.len() as f64);

        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let below = &acts[i];
            grads.push(DenseLayer {
                weights: delta.t().dot(below),
                biases: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut back = delta.dot(&layer.weights);
                back.zip_mut_with(below, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Shape(format!(
            "layer sizes must have at least two non-zero entries, got {sizes:?}"
        )));
    }
    Ok(())
}

fn check_targets(out: &Array2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
    if out.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "predictions are {:?} but targets are {:?}",
            out.dim(),
            targets.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub validation_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: vec![128, 32],
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 300,
            early_stopping_patience: 25,
            validation_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid(
                "learning rate, batch size and max epochs must be positive",
            ));
        }
        if self.early_stopping_patience == 0 {
            return Err(Error::invalid("early stopping patience must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must be in (0, 1)"));
        }
        if !((0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_epsilon > 0.0)
        {
            return Err(Error::invalid("Adam constants out of range"));
        }
        Ok(())
    }

    fn sizes(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.hidden_layers);
        sizes.push(outputs);
        sizes
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<DenseLayer>,
    second: Vec<DenseLayer>,
}

impl AdamState {
    pub fn new(network: &Network) -> Self {
        let zeros: Vec<DenseLayer> = network
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
            .collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// Bias-corrected Adam update of a flat parameter slice at step `t ≥ 1`.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    config: &TrainConfig,
    t: u64,
) {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        first[i] = b1 * first[i] + (1.0 - b1) * g;
        second[i] = b2 * second[i] + (1.0 - b2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
}

/// One Adam step over every layer of `network`.
pub fn adam_step(network: &mut Network, grads: &Gradients, state: &mut AdamState, config: &TrainConfig, t: u64) {
    assert!(t >= 1, "Adam steps are numbered from 1");
    let parts = network
        .layers
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()));
    for ((layer, grad), (m, v)) in parts {
        adam_update(
            layer.weights.as_slice_mut().expect("standard layout"),
            grad.weights.as_slice().expect("standard layout"),
            m.weights.as_slice_mut().expect("standard layout"),
            v.weights.as_slice_mut().expect("standard layout"),
            config,
            t,
        );
        adam_update(
            layer.biases.as_slice_mut().expect("standard layout"),
            grad.biases.as_slice().expect("standard layout"),
            m.biases.as_slice_mut().expect("standard layout"),
            v.biases.as_slice_mut().expect("standard layout"),
            config,
            t,
        );
    }
}

/// A trained network with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub network: Network,
    pub input_norm: Vec<Normalizer>,
    pub target_norm: Normalizer,
    pub config: TrainConfig,
}

impl MlpModel {
    /// Predictions in physical units for raw (unnormalized) feature rows.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = self.forward_normalized(&self.normalize_features(features)?)?;
        Ok(z.iter().map(|&v| self.target_norm.denormalize(v)).collect())
    }

    pub fn predict_one(&self, temperature_c: f64, humidity_pct: f64) -> Result<f64> {
        let row = Array2::from_shape_vec((1, 2), vec![temperature_c, humidity_pct])
            .expect("1x2 shape");
        Ok(self.predict(row.view())?[0])
    }

    pub fn normalize_features(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.input_norm.len() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.input_norm.len(),
                features.ncols()
            )));
        }
        let mut z = features.to_owned();
        for (mut col, norm) in z.axis_iter_mut(Axis(1)).zip(&self.input_norm) {
            col.mapv_inplace(|v| norm.normalize(v));
        }
        Ok(z)
    }

    /// Normalized predictions for normalized inputs, one per row.
    pub fn forward_normalized(&self, inputs: &Array2<f64>) -> Result<Array1<f64>> {
        let out = self.network.forward(inputs.view())?;
        if out.ncols() != 1 {
            return Err(Error::Shape(format!("model has {} outputs, expected 1", out.ncols())));
        }
        Ok(out.column(0).to_owned())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile::from(self);
        let mut text = serde_json::to_string_pretty(&file).map_err(|source| Error::Json {
            context: "model".into(),
            source,
        })?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "model file".into(),
            source,
        })?;
        file.try_into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputNorm {
    means: Vec<f64>,
    stds: Vec<f64>,
}

/// On-disk model layout; weights are `[layer][output][input]`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    architecture: Vec<usize>,
    activations: Vec<String>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    input_norm: InputNorm,
    target_norm: Normalizer,
    seed: u64,
    config: TrainConfig,
}

impl From<&MlpModel> for ModelFile {
    fn from(model: &MlpModel) -> Self {
        let layers = &model.network.layers;
        let mut activations = vec!["relu".to_string(); layers.len() - 1];
        activations.push("linear".to_string());
        ModelFile {
            architecture: model.network.sizes(),
            activations,
            weights: layers
                .iter()
                .map(|l| l.weights.outer_iter().map(|row| row.to_vec()).collect())
                .collect(),
            biases: layers.iter().map(|l| l.biases.to_vec()).collect(),
            input_norm: InputNorm {
                means: model.input_norm.iter().map(|n| n.mean).collect(),
                stds: model.input_norm.iter().map(|n| n.std).collect(),
            },
            target_norm: model.target_norm,
            seed: model.config.seed,
            config: model.config.clone(),
        }
    }
}

impl TryFrom<ModelFile> for MlpModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let arch = &file.architecture;
        check_sizes(arch)?;
        let n_layers = arch.len() - 1;
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(Error::Shape(format!(
                "architecture {arch:?} needs {n_layers} weight and bias arrays"
            )));
        }
        let mut expected_acts = vec!["relu"; n_layers - 1];
        expected_acts.push("linear");
        if file.activations != expected_acts {
            return Err(Error::Shape(format!(
                "activations must be {expected_acts:?}, got {:?}",
                file.activations
            )));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (i, (w, b)) in file.weights.iter().zip(&file.biases).enumerate() {
            let (inputs, outputs) = (arch[i], arch[i + 1]);
            if w.len() != outputs || w.iter().any(|row| row.len() != inputs) || b.len() != outputs {
                return Err(Error::Shape(format!(
                    "layer {i} must be {outputs}x{inputs} with {outputs} biases"
                )));
            }
            let flat: Vec<f64> = w.iter().flatten().copied().collect();
            if flat.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((outputs, inputs), flat).expect("checked shape"),
                biases: Array1::from(b.clone()),
            });
        }
        let norms = &file.input_norm;
        if norms.means.len() != arch[0] || norms.stds.len() != arch[0] {
            return Err(Error::Shape(format!(
                "input normalization needs {} means and stds",
                arch[0]
            )));
        }
        let all_stds = norms.stds.iter().chain(std::iter::once(&file.target_norm.std));
        if all_stds.clone().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("normalization stds must be positive"));
        }
        Ok(MlpModel {
            network: Network { layers },
            input_norm: norms
                .means
                .iter()
                .zip(&norms.stds)
                .map(|(&mean, &std)| Normalizer { mean, std })
                .collect(),
            target_norm: file.target_norm,
            config: TrainConfig {
                seed: file.seed,
                ..file.config
            },
        })
    }
}

/// Patience-based stopping rule that remembers the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains on raw features (one row per sample) and raw targets.
pub fn train(features: ArrayView2<f64>, targets: &[f64], config: &TrainConfig) -> Result<(MlpModel, TrainHistory)> {
    train_with_monitor(features, targets, config, |_, loss| loss)
}

/// Like [`train`], but `monitor(epoch, val_loss)` supplies the loss that early
/// stopping sees.
pub fn train_with_monitor(
    features: ArrayView2<f64>,
    targets: &[f64],
    config: &TrainConfig,
    mut monitor: impl FnMut(usize, f64) -> f64,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    let n = features.nrows();
    if targets.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} targets", targets.len())));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }

    let input_norm = features
        .axis_iter(Axis(1))
        .map(|col| fit_normalizer(&col.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let target_norm = fit_normalizer(targets)?;
    let mut model = MlpModel {
        network: Network::zeros(&[features.ncols(), 1])?,
        input_norm,
        target_norm,
        config: config.clone(),
    };
    let x = model.normalize_features(features)?;
    let y = Array2::from_shape_fn((n, 1), |(i, _)| target_norm.normalize(targets[i]));

    let mut rng = derive_rng(config.seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let x_val = x.select(Axis(0), val_idx);
    let y_val = y.select(Axis(0), val_idx);

    model.network = Network::he_uniform(&config.sizes(x.ncols(), 1), &mut rng)?;
    let mut adam = AdamState::new(&model.network);
    let mut step = 0u64;
    let mut stopper = EarlyStopping::new(config.early_stopping_patience);
    let mut best_network = model.network.clone();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
    };

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (loss, grads) = model.network.backward(xb.view(), yb.view())?;
            step += 1;
            adam_step(&mut model.network, &grads, &mut adam, config, step);
            weighted_loss += loss * batch.len() as f64;
        }
        let val_loss = model.network.mse(x_val.view(), y_val.view())?;
        history.train_loss.push(weighted_loss / train_idx.len() as f64);
        history.val_loss.push(val_loss);
        history.epochs_run = epoch;

        if stopper.observe(epoch, monitor(epoch, val_loss)) {
            best_network = model.network.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }

    model.network = best_network;
    history.best_epoch = stopper.best_epoch();
    Ok((model, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae_m: f64,
    pub rmse_m: f64,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "need equal non-empty lengths, got {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mean_y = targets.iter().sum::<f64>() / n;
    let (mut abs, mut sq, mut total) = (0.0, 0.0, 0.0);
    for (p, y) in predictions.iter().zip(targets) {
        abs += (p - y).abs();
        sq += (p - y) * (p - y);
        total += (y - mean_y) * (y - mean_y);
    }
    Ok(RegressionMetrics {
        mae_m: abs / n,
        rmse_m: (sq / n).sqrt(),
        r2: (total > 0.0).then(|| 1.0 - sq / total),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out MSE on the training folds' normalized target scale.
    pub val_mse: f64,
    pub mae_m: f64,
    pub rmse_m: f64,
    pub r2: Option<f64>,
    /// Target std of the training folds, used to denormalize.
    pub target_std_m: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub val_mse: f64,
    pub mae_m: f64,
    pub rmse_m: f64,
    pub r2: Option<f64>,
}

/// Per-fold rows plus their mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "cv report".into(),
            source,
        })?;
        text.push('\n');
        Ok(text)
    }

    /// Fixed-width table with one row per fold and mean/std rows.
    pub fn table(&self) -> String {
        let r2 = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let mut out = format!(
            "{:<6} {:>10} {:>10} {:>10} {:>10}\n",
            "Fold", "val_MSE", "MAE (m)", "RMSE (m)", "R2"
        );
        for f in &self.folds {
            out += &format!(
                "{:<6} {:>10.6} {:>10.6} {:>10.6} {:>10}\n",
                f.fold, f.val_mse, f.mae_m, f.rmse_m, r2(f.r2)
            );
        }
        for (name, s) in [("Mean", &self.mean), ("Std", &self.std)] {
            out += &format!(
                "{:<6} {:>10.6} {:>10.6} {:>10.6} {:>10}\n",
                name, s.val_mse, s.mae_m, s.rmse_m, r2(s.r2)
            );
        }
        out
    }
}

fn mean_and_pop_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Splits a seeded permutation of `0..n` into `k` contiguous folds whose
/// sizes differ by at most one (larger folds first).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewSamples { needed: k, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// k-fold cross-validation; fold `f` trains with a seed derived from
/// `(config.seed, f)`.
pub fn cross_validate(features: ArrayView2<f64>, targets: &[f64], k: usize, config: &TrainConfig) -> Result<CvReport> {
    if features.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} targets",
            features.nrows(),
            targets.len()
        )));
    }
    let folds = kfold_indices(targets.len(), k, config.seed)?;
    let mut reports = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let x_train = features.select(Axis(0), &train_idx);
        let y_train: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
        let x_test = features.select(Axis(0), test_idx);
        let y_test: Vec<f64> = test_idx.iter().map(|&i| targets[i]).collect();

        let fold_config = TrainConfig {
            seed: derive_rng(config.seed, f as u64 + 1).next_u64(),
            ..config.clone()
        };
        let (model, history) = train(x_train.view(), &y_train, &fold_config)?;

        let z_pred = model.forward_normalized(&model.normalize_features(x_test.view())?)?;
        let norm = model.target_norm;
        let val_mse = z_pred
            .iter()
            .zip(&y_test)
            .map(|(p, y)| (p - norm.normalize(*y)).powi(2))
            .sum::<f64>()
            / y_test.len() as f64;
        let predictions: Vec<f64> = z_pred.iter().map(|&z| norm.denormalize(z)).collect();
        let m = metrics(&predictions, &y_test)?;
        reports.push(FoldReport {
            fold: f + 1,
            train_size: train_idx.len(),
            test_size: test_idx.len(),
            val_mse,
            mae_m: m.mae_m,
            rmse_m: m.rmse_m,
            r2: m.r2,
            target_std_m: norm.std,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs_run,
        });
    }

    let column = |get: &dyn Fn(&FoldReport) -> f64| -> (f64, f64) {
        mean_and_pop_std(&reports.iter().map(get).collect::<Vec<_>>())
    };
    let (mse_mean, mse_std) = column(&|r| r.val_mse);
    let (mae_mean, mae_std) = column(&|r| r.mae_m);
    let (rmse_mean, rmse_std) = column(&|r| r.rmse_m);
    let r2s: Option<Vec<f64>> = reports.iter().map(|r| r.r2).collect();
    let r2_summary = r2s.map(|v| mean_and_pop_std(&v));

    Ok(CvReport {
        k,
        seed: config.seed,
        folds: reports,
        mean: MetricSummary {
            val_mse: mse_mean,
            mae_m: mae_mean,
            rmse_m: rmse_mean,
            r2: r2_summary.map(|s| s.0),
        },
        std: MetricSummary {
            val_mse: mse_std,
            mae_m: mae_std,
            rmse_m: rmse_std,
            r2: r2_summary.map(|s| s.1),
        },
    })
}

/// Model inputs `(temperature, humidity)` and targets `|measured − truth|`.
pub fn error_features(dataset: &Dataset, layout: &Layout) -> Result<(Array2<f64>, Vec<f64>)> {
    let samples = crate::stats::per_record_errors(dataset, layout)?;
    let features = Array2::from_shape_fn((samples.len(), 2), |(i, j)| {
        if j == 0 {
            samples[i].env.temperature_c
        } else {
            samples[i].env.humidity_pct
        }
    });
    Ok((features, samples.iter().map(|s| s.abs_error_m).collect()))
}

/// Attaches the predicted error `ê(T, H)` and the residual `|e − ê|` to each record.
pub fn compensate(model: &MlpModel, dataset: &Dataset, layout: &Layout) -> Result<Vec<CompensatedRecord>> {
    let (features, errors) = error_features(dataset, layout)?;
    let predicted = if dataset.is_empty() {
        Vec::new()
    } else {
        model.predict(features.view())?
    };
    Ok(dataset
        .records
        .iter()
        .zip(predicted.iter().zip(&errors))
        .map(|(r, (&p, &e))| CompensatedRecord {
            record: *r,
            predicted_error_m: p,
            residual_error_m: (e - p).abs(),
        })
        .collect())
}
