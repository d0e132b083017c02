//! Minimal SGD training of deep SELU classifiers, synthetic datasets and CSV
//! ingestion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::moments::SeluParams;
use crate::primitives::{lecun_init, make_dropout_config, selu, selu_derivative, DropoutConfig, LayerSpec};
use crate::rng;

/// Features (one sample per row) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != features.nrows() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), features.nrows())));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        Ok(Self { features, labels, n_classes, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

/// Shifts each column to zero mean and scales it to unit variance;
/// constant columns become all zeros.
pub fn standardize(x: &mut Array2<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var > 0.0 {
            let sd = var.sqrt();
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
}

/// Two interleaved spiral arms of 1.5 turns, standardized.
pub fn spiral(n_points: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_points < 2 {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::seeded(seed);
    let half = n_points / 2;
    let mut x = Array2::zeros((n_points, 2));
    let mut labels = vec![0; n_points];
    for i in 0..n_points {
        let class = usize::from(i >= half);
        let t = r.random::<f64>().sqrt() * 3.0 * PI;
        let sign = if class == 0 { 1.0 } else { -1.0 };
        let e0: f64 = StandardNormal.sample(&mut r);
        let e1: f64 = StandardNormal.sample(&mut r);
        x[[i, 0]] = (sign * t * t.cos() + noise * e0) / (3.0 * PI);
        x[[i, 1]] = (sign * t * t.sin() + noise * e1) / (3.0 * PI);
        labels[i] = class;
    }
    standardize(&mut x);
    Dataset::new(x, labels)
}

/// Isotropic Gaussian blobs with centres on a circle of radius `spread`.
pub fn blobs(n_points: usize, n_classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_points == 0 {
        return Err(Error::EmptyDataset);
    }
    if n_classes < 2 {
        return Err(domain(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut r = rng::seeded(seed);
    let mut x = Array2::zeros((n_points, 2));
    let labels: Vec<usize> = (0..n_points).map(|i| i % n_classes).collect();
    for (i, &c) in labels.iter().enumerate() {
        let angle = 2.0 * PI * c as f64 / n_classes as f64;
        let e0: f64 = StandardNormal.sample(&mut r);
        let e1: f64 = StandardNormal.sample(&mut r);
        x[[i, 0]] = spread * angle.cos() + e0;
        x[[i, 1]] = spread * angle.sin() + e1;
    }
    standardize(&mut x);
    Dataset::new(x, labels)
}

/// Uniform points in `[-1, 1]^2` labelled by the sign of `x0 * x1`.
pub fn xor(n_points: usize, seed: u64) -> Result<Dataset> {
    if n_points == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut r = rng::seeded(seed);
    let mut x = Array2::from_shape_simple_fn((n_points, 2), || r.random_range(-1.0..1.0));
    let labels = x.rows().into_iter().map(|row| usize::from(row[0] * row[1] > 0.0)).collect();
    standardize(&mut x);
    Dataset::new(x, labels)
}

/// Reads a headed numeric CSV, encodes `label_column` by sorted distinct
/// value and standardizes the remaining columns.
pub fn ingest_csv_dataset(path: &Path, label_column: &str) -> Result<Dataset> {
    ingest_csv_reader(std::fs::File::open(path)?, label_column)
}

pub fn ingest_csv_reader<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Config(format!("label column {label_column:?} not in header")))?;
    let width = header.len();
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        // header is line 1
        let row = k + 2;
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Parse { row, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::Parse { row, message: format!("non-numeric value {cell:?} in column {:?}", &header[j]) })?;
                values.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut x = Array2::from_shape_vec((raw_labels.len(), width - 1), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    standardize(&mut x);
    let codes: BTreeMap<&str, usize> = {
        let mut names: Vec<&str> = raw_labels.iter().map(String::as_str).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, n)| (n, i)).collect()
    };
    let labels = raw_labels.iter().map(|l| codes[l.as_str()]).collect();
    let mut d = Dataset::new(x, labels)?;
    d.n_classes = codes.len();
    d.class_names = codes.keys().map(|s| s.to_string()).collect();
    Ok(d)
}

/// Architecture and optimizer settings of [`train_sgd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Number of hidden SELU layers.
    pub depth: usize,
    pub width: usize,
    pub params: SeluParams,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Keep probability of alpha dropout on hidden activations; 1 disables it.
    pub dropout_q: f64,
    pub seed: u64,
}

impl TrainSpec {
    pub fn new(depth: usize, width: usize, lr: f64, epochs: usize, seed: u64) -> Self {
        Self { depth, width, params: SeluParams::standard(), lr, epochs, batch_size: 32, dropout_q: 1.0, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Frobenius norm of the first layer's weight gradient over that of the
    /// output layer, on the full dataset.
    pub grad_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }

    /// CSV with columns `epoch,loss,grad_ratio`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "grad_ratio"])?;
        for e in &self.epochs {
            w.serialize((e.epoch, e.loss, e.grad_ratio))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hidden SELU layers followed by a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub hidden: Vec<LayerSpec>,
    pub head: LayerSpec,
    pub params: SeluParams,
}

struct Tape {
    inputs: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<bool>>>,
    logits: Array2<f64>,
}

struct Gradients {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Network {
    pub fn new(n_inputs: usize, depth: usize, width: usize, n_classes: usize, params: SeluParams, seed: u64) -> Result<Self> {
        let mut hidden = Vec::with_capacity(depth);
        let mut fan_in = n_inputs;
        for l in 0..depth {
            hidden.push(lecun_init(fan_in, width, layer_seed(seed, l))?);
            fan_in = width;
        }
        let head = lecun_init(fan_in, n_classes, layer_seed(seed, depth))?;
        Ok(Self { hidden, head, params })
    }

    fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    fn run<R: Rng>(&self, x: ArrayView2<f64>, dropout: Option<(&DropoutConfig, &mut R)>) -> Tape {
        let p = self.params;
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut zs = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        let mut a = x.to_owned();
        let mut dropout = dropout;
        for layer in &self.hidden {
            let z = a.dot(&layer.weights) + &layer.biases;
            let mut next = z.mapv(|v| selu(v, p));
            let mask = match dropout.as_mut() {
                Some((cfg, r)) if !cfg.is_identity() => {
                    let slice = next.as_slice_mut().expect("standard layout");
                    let keep = cfg.apply(slice, *r);
                    Some(Array2::from_shape_vec(z.raw_dim(), keep).expect("same shape"))
                }
                _ => None,
            };
            inputs.push(std::mem::replace(&mut a, next));
            zs.push(z);
            masks.push(mask);
        }
        let logits = a.dot(&self.head.weights) + &self.head.biases;
        inputs.push(a);
        Tape { inputs, z: zs, masks, logits }
    }

    /// Mean softmax cross-entropy and the gradient of the logits.
    fn loss_and_delta(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
        let n = logits.nrows() as f64;
        let mut delta = logits.clone();
        let mut loss = 0.0;
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let shifted = row[y] - max;
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            loss += sum.ln() - shifted;
            row.mapv_inplace(|v| v / sum / n);
            row[y] -= 1.0 / n;
        }
        (loss / n, delta)
    }

    fn backward(&self, tape: &Tape, mut delta: Array2<f64>, dropout: Option<&DropoutConfig>) -> Gradients {
        let p = self.params;
        let depth = self.hidden.len();
        let mut weights = Vec::with_capacity(depth + 1);
        let mut biases = Vec::with_capacity(depth + 1);
        weights.push(tape.inputs[depth].t().dot(&delta));
        biases.push(delta.sum_axis(Axis(0)));
        let mut da = delta.dot(&self.head.weights.t());
        for l in (0..depth).rev() {
            if let (Some(mask), Some(cfg)) = (&tape.masks[l], dropout) {
                ndarray::Zip::from(&mut da).and(mask).for_each(|g, &keep| *g = if keep { *g * cfg.a } else { 0.0 });
            }
            delta = da;
            ndarray::Zip::from(&mut delta).and(&tape.z[l]).for_each(|g, &z| *g *= selu_derivative(z, p));
            weights.push(tape.inputs[l].t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            da = if l > 0 { delta.dot(&self.hidden[l].weights.t()) } else { Array2::zeros((0, 0)) };
        }
        weights.reverse();
        biases.reverse();
        Gradients { weights, biases }
    }

    /// Loss and first-to-last weight gradient norm ratio on `data`, without dropout.
    pub fn evaluate(&self, data: &Dataset) -> (f64, f64) {
        let tape = self.run::<rng::Rng>(data.features.view(), None);
        let (loss, delta) = Self::loss_and_delta(&tape.logits, &data.labels);
        let g = self.backward(&tape, delta, None);
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        (loss, norm(&g.weights[0]) / norm(g.weights.last().expect("head gradient")))
    }

    /// Class probabilities for each row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.run::<rng::Rng>(x, None).logits;
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        out
    }

    fn step(&mut self, g: &Gradients, lr: f64) {
        let layers = self.hidden.iter_mut().chain(std::iter::once(&mut self.head));
        for ((layer, gw), gb) in layers.zip(&g.weights).zip(&g.biases) {
            layer.weights.scaled_add(-lr, gw);
            layer.biases.scaled_add(-lr, gb);
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.biases.len()).sum()
    }
}

/// Layers draw from streams `0..=depth`, epochs from `EPOCH_STREAMS + epoch`.
const EPOCH_STREAMS: u64 = 1 << 32;

fn layer_seed(seed: u64, layer: usize) -> u64 {
    use rand::RngCore;
    rng::stream(seed, layer as u64).next_u64()
}

/// Plain minibatch SGD on softmax cross-entropy.
///
/// The history starts with the loss of the untrained network (epoch 0) and
/// adds one full-dataset evaluation after every epoch.
pub fn train_sgd(spec: &TrainSpec, data: &Dataset) -> Result<(Network, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(spec.lr > 0.0 && spec.lr.is_finite()) {
        return Err(domain(format!("learning rate must be positive, got {}", spec.lr)));
    }
    if spec.batch_size == 0 || spec.width == 0 {
        return Err(domain("batch size and width must be positive"));
    }
    if data.n_classes < 2 {
        return Err(domain(format!("need at least 2 classes, got {}", data.n_classes)));
    }
    let dropout = make_dropout_config(spec.dropout_q, spec.params)?;
    let mut net = Network::new(data.n_features(), spec.depth, spec.width, data.n_classes, spec.params, spec.seed)?;
    let mut history = TrainHistory::default();
    let record = |net: &Network, epoch: usize, history: &mut TrainHistory| -> Result<()> {
        let (loss, grad_ratio) = net.evaluate(data);
        history.epochs.push(EpochRecord { epoch, loss, grad_ratio });
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::TrainingDiverged { epoch, history: history.clone() })
        }
    };
    record(&net, 0, &mut history)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=spec.epochs {
        let mut r = rng::stream(spec.seed, EPOCH_STREAMS + epoch as u64);
        order.shuffle(&mut r);
        for batch in order.chunks(spec.batch_size) {
            let x = data.features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let tape = net.run(x.view(), Some((&dropout, &mut r)));
            let (_, delta) = Network::loss_and_delta(&tape.logits, &y);
            let g = net.backward(&tape, delta, Some(&dropout));
            net.step(&g, spec.lr);
        }
        record(&net, epoch, &mut history)?;
    }
    Ok((net, history))
}

/// Fraction of rows whose most probable class is the label.
pub fn accuracy(net: &Network, data: &Dataset) -> f64 {
    let probs = net.predict_proba(data.features.view());
    let hits = probs
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
            best == Some(y)
        })
        .count();
    hits as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(epochs: usize) -> TrainSpec {
        TrainSpec { batch_size: 16, ..TrainSpec::new(3, 16, 0.05, epochs, 1) }
    }

    #[test]
    fn zero_epochs_records_initial_loss_only() {
        let d = xor(64, 1).unwrap();
        let (_, h) = train_sgd(&small_spec(0), &d).unwrap();
        assert_eq!(h.epochs.len(), 1);
        assert_eq!(h.epochs[0].epoch, 0);
        assert!(h.initial_loss().is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = blobs(12, 3, 2.0, 4).unwrap();
        let net = Network::new(2, 2, 5, 3, SeluParams::standard(), 9).unwrap();
        let tape = net.run::<rng::Rng>(d.features.view(), None);
        let (_, delta) = Network::loss_and_delta(&tape.logits, &d.labels);
        let g = net.backward(&tape, delta, None);
        let loss = |n: &Network| n.evaluate(&d).0;
        let h = 1e-6;
        let nudge = |layer: usize, i: usize, j: usize, by: f64| {
            let mut n = net.clone();
            let w = if layer < 2 { &mut n.hidden[layer].weights } else { &mut n.head.weights };
            w[[i, j]] += by;
            loss(&n)
        };
        for (layer, i, j) in [(0, 0, 0), (0, 1, 4), (1, 3, 2), (2, 0, 0), (2, 4, 2)] {
            let fd = (nudge(layer, i, j, h) - nudge(layer, i, j, -h)) / (2.0 * h);
            let an = g.weights[layer][[i, j]];
            assert!((fd - an).abs() < 1e-7 + 1e-5 * an.abs(), "layer {layer} ({i},{j}): {fd} vs {an}");
        }
    }

    #[test]
    fn seeded_determinism() {
        let d = spiral(100, 0.2, 3).unwrap();
        let spec = TrainSpec { dropout_q: 0.9, ..small_spec(3) };
        let (_, a) = train_sgd(&spec, &d).unwrap();
        let (_, b) = train_sgd(&spec, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let d = blobs(200, 2, 4.0, 2).unwrap();
        let (net, h) = train_sgd(&small_spec(30), &d).unwrap();
        assert!(h.final_loss() < 0.05, "{:?}", h.final_loss());
        assert!(accuracy(&net, &d) > 0.98);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let d = blobs(64, 2, 4.0, 2).unwrap();
        let spec = TrainSpec { lr: 1e6, ..small_spec(20) };
        match train_sgd(&spec, &d) {
            Err(Error::TrainingDiverged { epoch, history }) => {
                assert!(epoch >= 1);
                assert_eq!(history.epochs.len(), epoch + 1);
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn argument_errors() {
        let d = xor(16, 1).unwrap();
        assert!(train_sgd(&TrainSpec { lr: 0.0, ..small_spec(1) }, &d).is_err());
        assert!(train_sgd(&TrainSpec { dropout_q: 0.0, ..small_spec(1) }, &d).is_err());
    }

    #[test]
    fn csv_ingest() {
        let text = "a,b,label\n1,10,x\n2,10,y\n3,10,x\n";
        let d = ingest_csv_reader(text.as_bytes(), "label").unwrap();
        assert_eq!(d.features.dim(), (3, 2));
        assert!(d.features.column(0).sum().abs() < 1e-12);
        assert!(d.features.column(1).iter().all(|v| *v == 0.0));
        assert_eq!(d.labels, vec![0, 1, 0]);
        assert_eq!(d.class_names, vec!["x", "y"]);

        let ragged = "a,b,label\n1,2,x\n1,x\n";
        assert!(matches!(ingest_csv_reader(ragged.as_bytes(), "label"), Err(Error::Parse { row: 3, .. })));
        let bad = "a,b,label\n1,2,x\n1,oops,y\n";
        assert!(matches!(ingest_csv_reader(bad.as_bytes(), "label"), Err(Error::Parse { row: 3, .. })));
        assert!(matches!(ingest_csv_reader("a,b,label\n".as_bytes(), "label"), Err(Error::EmptyDataset)));
        assert!(matches!(ingest_csv_reader("a,b\n1,2\n".as_bytes(), "label"), Err(Error::Config(_))));
    }

    #[test]
    fn history_csv() {
        let d = xor(32, 1).unwrap();
        let (_, h) = train_sgd(&small_spec(2), &d).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("epoch,loss,grad_ratio\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
