//! Softmax classification head on top of a DBN, trained with Adam.
//!
//! The network is the DBN's mean-field path (each layer
//! `σ(x·W + c)`) followed by the head's dense layers. Fine-tuning
//! backpropagates cross-entropy through every layer that is not frozen:
//! head layers step at `head_lr`, unfrozen DBN layers at `unfrozen_dbn_lr`.
//! Frozen DBN layers are never written.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dbn::DbnStack;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, Purpose, RngStream};
use crate::pipeline::{make_batches, BatchPlan, DEFAULT_BATCH_SIZE};

/// Floor applied inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Logistic,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Logistic => 0,
            Activation::Softmax => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Logistic),
            1 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `inputs × outputs`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-scaled normal weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        DenseLayer {
            weights: Matrix::from_fn(inputs, outputs, |_, _| std * rng.standard_normal()),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// Two dense layers: `top → top/2` (logistic) and `top/2 → n_classes`
/// (softmax). In strict mode only the 2000/4000-wide tops are accepted.
pub fn build_head(
    top_dim: usize,
    n_classes: usize,
    strict: bool,
    rng: &RngStream,
) -> Result<Vec<DenseLayer>> {
    if n_classes < 2 {
        return Err(Error::config(format!(
            "softmax head needs at least 2 classes, got {n_classes}"
        )));
    }
    if strict && top_dim != 2000 && top_dim != 4000 {
        return Err(Error::config(format!(
            "strict mode supports top widths 2000 and 4000, got {top_dim}"
        )));
    }
    if top_dim < 2 {
        return Err(Error::config("top layer too narrow for a hidden head layer"));
    }
    let hidden = top_dim / 2;
    let mut rng = rng.substream(Purpose::Head, 0);
    Ok(vec![
        DenseLayer::init(top_dim, hidden, Activation::Logistic, &mut rng),
        DenseLayer::init(hidden, n_classes, Activation::Softmax, &mut rng),
    ])
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(logits: &mut Matrix) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Mean of `-ln max(p[label], 1e-12)` over rows.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() || labels.is_empty() {
        return Err(Error::precondition(format!(
            "{} labels for {} rows",
            labels.len(),
            probs.rows()
        )));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::precondition(format!(
                "label {y} outside [0, {})",
                probs.cols()
            )));
        }
        total -= probs.get(i, y).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// DBN feature extractor plus classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub stack: DbnStack,
    pub head: Vec<DenseLayer>,
}

/// Per-parameter-tensor Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam step. Nothing is modified if a gradient is not
/// finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::precondition(format!(
            "adam shapes differ: params {}, grads {}, moments {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient {g}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        if lr != 0.0 {
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p -= step;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub head_lr: f64,
    pub unfrozen_dbn_lr: f64,
    /// DBN layer indices (0 = first hidden layer) that are never updated.
    pub frozen_layers: BTreeSet<usize>,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            head_lr: 1e-3,
            unfrozen_dbn_lr: 1e-6,
            frozen_layers: BTreeSet::from([0]),
            epochs: 3,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        for lr in [self.head_lr, self.unfrozen_dbn_lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Gradients of the mean cross-entropy. DBN entries are `None` for layers
/// that were not differentiated (frozen, or below the lowest trainable
/// layer).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradient {
    /// `(dW, dc)` per DBN layer.
    pub dbn: Vec<Option<(Matrix, Vec<f64>)>>,
    /// `(dW, db)` per head layer.
    pub head: Vec<(Matrix, Vec<f64>)>,
}

impl Network {
    pub fn new(stack: DbnStack, head: Vec<DenseLayer>) -> Result<Self> {
        let net = Network { stack, head };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        let mut width = self.stack.top_dim();
        for (i, layer) in self.head.iter().enumerate() {
            if layer.inputs() != width || layer.bias.len() != layer.outputs() {
                return Err(Error::config(format!(
                    "head layer {i} is {}x{} (bias {}), expected {width} inputs",
                    layer.inputs(),
                    layer.outputs(),
                    layer.bias.len()
                )));
            }
            width = layer.outputs();
        }
        match self.head.last() {
            Some(l) if l.activation == Activation::Softmax => {}
            _ => return Err(Error::config("head must end in a softmax layer")),
        }
        if self.head[..self.head.len() - 1]
            .iter()
            .any(|l| l.activation != Activation::Logistic)
        {
            return Err(Error::config("hidden head layers must be logistic"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.head.last().map_or(0, DenseLayer::outputs)
    }

    /// Activations of every layer; the last entry holds class
    /// probabilities.
    fn forward_trace(&self, rows: &Matrix) -> Result<Vec<Matrix>> {
        let mut acts = Vec::with_capacity(1 + self.stack.layers.len() + self.head.len());
        let mut current = rows.clone();
        for layer in &self.stack.layers {
            let next = layer.hidden_conditional(&current)?;
            acts.push(std::mem::replace(&mut current, next));
        }
        for layer in &self.head {
            let mut z = current.matmul(&layer.weights)?;
            z.add_row_vector(&layer.bias);
            match layer.activation {
                Activation::Logistic => z.as_mut_slice().iter_mut().for_each(|x| *x = sigmoid(*x)),
                Activation::Softmax => softmax_rows(&mut z),
            }
            acts.push(std::mem::replace(&mut current, z));
        }
        acts.push(current);
        Ok(acts)
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.stack.input_dim() {
            return Err(Error::precondition(format!(
                "rows have {} features, network expects {}",
                rows.cols(),
                self.stack.input_dim()
            )));
        }
        Ok(self.forward_trace(rows)?.pop().expect("non-empty trace"))
    }

    /// Mean cross-entropy and its gradient. `frozen` lists DBN layers whose
    /// gradient is skipped.
    pub fn loss_and_gradient(
        &self,
        rows: &Matrix,
        labels: &[usize],
        frozen: &BTreeSet<usize>,
    ) -> Result<(f64, Matrix, NetworkGradient)> {
        if rows.cols() != self.stack.input_dim() {
            return Err(Error::precondition("row width does not match network input"));
        }
        let acts = self.forward_trace(rows)?;
        let probs = acts.last().expect("non-empty trace");
        let loss = cross_entropy(probs, labels)?;
        let n_dbn = self.stack.layers.len();
        let batch = rows.rows() as f64;

        // Softmax + cross-entropy: dL/dz = (p - onehot) / batch.
        let mut delta = probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            let v = delta.get(i, y);
            delta.set(i, y, v - 1.0);
        }
        delta.as_mut_slice().iter_mut().for_each(|x| *x /= batch);

        let lowest_trainable = (0..n_dbn).find(|l| !frozen.contains(l));
        let mut head_grads = Vec::with_capacity(self.head.len());
        for (h, layer) in self.head.iter().enumerate().rev() {
            let input = &acts[n_dbn + h];
            head_grads.push((input.matmul_tn(&delta)?, delta.col_sums()));
            let needs_below = h > 0 || lowest_trainable.is_some();
            if needs_below {
                delta = backprop_logistic(&delta, &layer.weights, input)?;
            }
        }
        head_grads.reverse();

        let mut dbn_grads: Vec<Option<(Matrix, Vec<f64>)>> = vec![None; n_dbn];
        if let Some(lowest) = lowest_trainable {
            for l in (lowest..n_dbn).rev() {
                let input = &acts[l];
                if !frozen.contains(&l) {
                    dbn_grads[l] = Some((input.matmul_tn(&delta)?, delta.col_sums()));
                }
                if l > lowest {
                    delta = backprop_logistic(&delta, &self.stack.layers[l].weights, input)?;
                }
            }
        }
        let probs = acts.into_iter().last().expect("non-empty trace");
        Ok((
            loss,
            probs,
            NetworkGradient {
                dbn: dbn_grads,
                head: head_grads,
            },
        ))
    }
}

/// `(delta · Wᵀ) ⊙ a ⊙ (1 - a)` where `a` is the logistic input activation.
fn backprop_logistic(delta: &Matrix, weights: &Matrix, activation: &Matrix) -> Result<Matrix> {
    let mut out = delta.matmul_nt(weights)?;
    for (d, a) in out.as_mut_slice().iter_mut().zip(activation.as_slice()) {
        *d *= a * (1.0 - a);
    }
    Ok(out)
}

/// Adam moments for every trainable tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// `(weights, hidden bias)` per DBN layer.
    pub dbn: Vec<(AdamState, AdamState)>,
    /// `(weights, bias)` per head layer.
    pub head: Vec<(AdamState, AdamState)>,
}

impl OptimizerState {
    pub fn for_network(net: &Network) -> Self {
        OptimizerState {
            dbn: net
                .stack
                .layers
                .iter()
                .map(|l| (AdamState::new(l.weights.as_slice().len()), AdamState::new(l.n_hidden())))
                .collect(),
            head: net
                .head
                .iter()
                .map(|l| (AdamState::new(l.weights.as_slice().len()), AdamState::new(l.outputs())))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    /// Row-weighted mean batch loss.
    pub loss: f64,
    /// Training accuracy of the per-row predictions made during the epoch.
    pub accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub batches: Vec<BatchLoss>,
    pub epochs: Vec<FinetuneEpoch>,
}

/// Supervised fine-tuning with Adam over shuffled mini-batches.
pub fn finetune(
    net: &mut Network,
    cfg: &FinetuneConfig,
    rows: &Matrix,
    labels: &[usize],
    optimizer: &mut OptimizerState,
    rng: &RngStream,
) -> Result<FinetuneLog> {
    cfg.validate()?;
    net.validate()?;
    if rows.rows() != labels.len() || rows.rows() == 0 {
        return Err(Error::precondition(format!(
            "{} rows with {} labels",
            rows.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.n_classes()) {
        return Err(Error::precondition(format!(
            "label {bad} outside [0, {})",
            net.n_classes()
        )));
    }
    let mut shuffle = rng.substream(Purpose::Shuffle, 1000);
    let mut log = FinetuneLog::default();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let plan = BatchPlan::new(cfg.batch_size, shuffle.next_seed());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in make_batches(rows.rows(), &plan).iter().enumerate() {
            let batch = rows.select_rows(idx);
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, probs, grads) = net.loss_and_gradient(&batch, &batch_labels, &cfg.frozen_layers)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} at epoch {epoch}, batch {b}"
                )));
            }
            correct += (0..probs.rows())
                .filter(|&i| argmax(probs.row(i)) == batch_labels[i])
                .count();
            loss_sum += loss * idx.len() as f64;
            apply_gradients(net, &grads, optimizer, cfg)
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
            log.batches.push(BatchLoss { epoch, batch: b, loss });
        }
        log.epochs.push(FinetuneEpoch {
            epoch,
            loss: loss_sum / rows.rows() as f64,
            accuracy: correct as f64 / rows.rows() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

fn apply_gradients(
    net: &mut Network,
    grads: &NetworkGradient,
    opt: &mut OptimizerState,
    cfg: &FinetuneConfig,
) -> Result<()> {
    for (l, g) in grads.dbn.iter().enumerate() {
        let Some((gw, gc)) = g else { continue };
        if cfg.frozen_layers.contains(&l) {
            continue;
        }
        let layer = &mut net.stack.layers[l];
        let (sw, sc) = &mut opt.dbn[l];
        adam_step(layer.weights.as_mut_slice(), gw.as_slice(), sw, cfg.unfrozen_dbn_lr)?;
        adam_step(&mut layer.hidden_bias, gc, sc, cfg.unfrozen_dbn_lr)?;
    }
    for ((layer, (gw, gb)), (sw, sb)) in net.head.iter_mut().zip(&grads.head).zip(opt.head.iter_mut()) {
        adam_step(layer.weights.as_mut_slice(), gw.as_slice(), sw, cfg.head_lr)?;
        adam_step(&mut layer.bias, gb, sb, cfg.head_lr)?;
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPrediction {
    pub clip: usize,
    pub class: usize,
    pub mean_probs: Vec<f64>,
}

/// Averages per-row class probabilities per clip and takes the argmax.
/// Output is ordered by clip ordinal.
pub fn vote_clips(probs: &Matrix, row_clip: &[usize]) -> Result<Vec<ClipPrediction>> {
    if probs.rows() != row_clip.len() {
        return Err(Error::precondition("one clip ordinal per row required"));
    }
    let n_clips = row_clip.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; probs.cols()]; n_clips];
    let mut counts = vec![0usize; n_clips];
    for (i, &c) in row_clip.iter().enumerate() {
        for (s, p) in sums[c].iter_mut().zip(probs.row(i)) {
            *s += p;
        }
        counts[c] += 1;
    }
    let mut out = Vec::with_capacity(n_clips);
    for (clip, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count == 0 {
            return Err(Error::precondition(format!("clip {clip} has no rows")));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        out.push(ClipPrediction {
            clip,
            class: argmax(&mean),
            mean_probs: mean,
        });
    }
    Ok(out)
}

/// Clip-level predictions of `net` for rows grouped by clip ordinal.
pub fn predict_clip(net: &Network, rows: &Matrix, row_clip: &[usize]) -> Result<Vec<ClipPrediction>> {
    vote_clips(&net.forward(rows)?, row_clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbn::{layer_digest, Architecture, DbnStack};
    use crate::fusion::FusionMode;
    use crate::rbm::CdConfig;

    fn toy_network(seed: u64) -> Network {
        let rng = RngStream::new(seed);
        let mut stack = DbnStack::with_layout(
            Architecture::Alpha,
            FusionMode::Standard,
            8,
            &[6, 4],
            vec![CdConfig::default(); 2],
            &rng,
        )
        .unwrap();
        // Larger weights than the CD init so gradients are not tiny.
        let mut wrng = RngStream::new(seed + 100);
        for l in &mut stack.layers {
            for w in l.weights.as_mut_slice() {
                *w = 0.5 * wrng.standard_normal();
            }
            for c in &mut l.hidden_bias {
                *c = 0.3 * wrng.standard_normal();
            }
        }
        let head = build_head(4, 3, false, &rng).unwrap();
        Network::new(stack, head).unwrap()
    }

    #[test]
    fn head_shapes() {
        let rng = RngStream::new(0);
        let h = build_head(2000, 5, true, &rng).unwrap();
        assert_eq!(h[0].weights.shape(), (2000, 1000));
        assert_eq!(h[1].weights.shape(), (1000, 5));
        let h = build_head(4000, 5, true, &rng).unwrap();
        assert_eq!(h[0].weights.shape(), (4000, 2000));
        assert_eq!(h[1].weights.shape(), (2000, 5));
        assert!(build_head(2000, 1, false, &rng).is_err());
        assert!(build_head(256, 3, true, &rng).is_err());
        assert!(build_head(256, 3, false, &rng).is_ok());
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut net = toy_network(1);
        for l in &mut net.head {
            l.weights = Matrix::zeros(l.inputs(), l.outputs());
        }
        let p = net.forward(&Matrix::filled(4, 8, 0.3)).unwrap();
        for i in 0..4 {
            for &x in p.row(i) {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let net = toy_network(2);
        let mut rng = RngStream::new(5);
        let rows = Matrix::from_fn(10, 8, |_, _| 3.0 * rng.standard_normal());
        let p = net.forward(&rows).unwrap();
        for i in 0..10 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.row(i).iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn softmax_monotone_and_shift_invariant() {
        let mut a = Matrix::from_rows(&[vec![0.1, 0.5, -0.2]]).unwrap();
        let mut b = Matrix::from_rows(&[vec![0.1, 0.9, -0.2]]).unwrap();
        let mut c = Matrix::from_rows(&[vec![100.1, 100.5, 99.8]]).unwrap();
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        softmax_rows(&mut c);
        assert!(b.get(0, 1) > a.get(0, 1));
        assert_eq!(argmax(a.row(0)), argmax(c.row(0)));
    }

    #[test]
    fn cross_entropy_values() {
        let one_hot = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(cross_entropy(&one_hot, &[0, 1]).unwrap() <= 1e-9);
        let uniform = Matrix::filled(3, 5, 0.2);
        assert!((cross_entropy(&uniform, &[0, 3, 4]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&uniform, &[0, 5, 1]).is_err());
        // Floor keeps a zero probability finite.
        assert!(cross_entropy(&one_hot, &[1, 0]).unwrap().is_finite());
    }

    #[test]
    fn logit_gradient_is_p_minus_onehot() {
        // Central differences of CE(softmax(z)) w.r.t. z.
        let z = Matrix::from_rows(&[vec![0.3, -1.2, 0.8], vec![2.0, 0.1, -0.5]]).unwrap();
        let labels = [2, 0];
        let ce = |z: &Matrix| {
            let mut p = z.clone();
            softmax_rows(&mut p);
            cross_entropy(&p, &labels).unwrap()
        };
        let mut p = z.clone();
        softmax_rows(&mut p);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let analytic = (p.get(i, j) - f64::from(u8::from(labels[i] == j))) / 2.0;
                let mut zp = z.clone();
                zp.set(i, j, z.get(i, j) + h);
                let mut zm = z.clone();
                zm.set(i, j, z.get(i, j) - h);
                let numeric = (ce(&zp) - ce(&zm)) / (2.0 * h);
                assert!((analytic - numeric).abs() <= 1e-6 * analytic.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn adam_first_step() {
        let mut w = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut w, &[1.0], &mut s, 1e-3).unwrap();
        assert!((w[0] + 1e-3).abs() < 1e-10);
        assert_eq!(s.t, 1);

        let mut w = [0.7, -0.2];
        let mut s = AdamState::new(2);
        adam_step(&mut w, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(w, [0.7, -0.2]);
        assert!(adam_step(&mut w, &[f64::NAN, 0.0], &mut s, 1e-3).is_err());
        assert!(adam_step(&mut w, &[0.0], &mut s, 1e-3).is_err());
    }

    fn toy_data(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = RngStream::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let rows = Matrix::from_fn(n, 8, |i, j| {
            let center = if j % 3 == labels[i] { 1.5 } else { -0.5 };
            center + 0.3 * rng.standard_normal()
        });
        (rows, labels)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let net = toy_network(3);
        let (rows, labels) = toy_data(7, 4);
        let frozen = BTreeSet::from([0]);
        let (_, _, g) = net.loss_and_gradient(&rows, &labels, &frozen).unwrap();
        assert!(g.dbn[0].is_none());
        let loss = |n: &Network| cross_entropy(&n.forward(&rows).unwrap(), &labels).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, perturb: &dyn Fn(&mut Network, f64)| {
            let mut plus = net.clone();
            perturb(&mut plus, h);
            let mut minus = net.clone();
            perturb(&mut minus, -h);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let tol = 1e-6 * analytic.abs().max(numeric.abs()) + 1e-8;
            assert!((analytic - numeric).abs() <= tol, "{analytic} vs {numeric}");
        };
        let (gw, gc) = g.dbn[1].as_ref().unwrap();
        for k in 0..gw.as_slice().len() {
            check(gw.as_slice()[k], &|n, d| n.stack.layers[1].weights.as_mut_slice()[k] += d);
        }
        for k in 0..gc.len() {
            check(gc[k], &|n, d| n.stack.layers[1].hidden_bias[k] += d);
        }
        for (hl, (gw, gb)) in g.head.iter().enumerate() {
            for k in 0..gw.as_slice().len() {
                check(gw.as_slice()[k], &|n, d| n.head[hl].weights.as_mut_slice()[k] += d);
            }
            for k in 0..gb.len() {
                check(gb[k], &|n, d| n.head[hl].bias[k] += d);
            }
        }
    }

    #[test]
    fn finetune_respects_freeze_and_learns() {
        let mut net = toy_network(6);
        let (rows, labels) = toy_data(300, 7);
        let first = layer_digest(&net.stack.layers[0]);
        let second = net.stack.layers[1].clone();
        let mut opt = OptimizerState::for_network(&net);
        let cfg = FinetuneConfig {
            head_lr: 1e-2,
            ..FinetuneConfig::default()
        };
        let log = finetune(&mut net, &cfg, &rows, &labels, &mut opt, &RngStream::new(8)).unwrap();
        assert_eq!(layer_digest(&net.stack.layers[0]), first);
        assert_ne!(net.stack.layers[1], second);
        assert_eq!(log.batches.len(), 3 * 3);
        assert!(log.epochs[2].loss < log.epochs[0].loss, "{:?}", log.epochs);
    }

    #[test]
    fn zero_dbn_rate_freezes_whole_stack() {
        let mut net = toy_network(9);
        let (rows, labels) = toy_data(60, 1);
        let stack = net.stack.clone();
        let head = net.head.clone();
        let mut opt = OptimizerState::for_network(&net);
        let cfg = FinetuneConfig {
            unfrozen_dbn_lr: 0.0,
            ..FinetuneConfig::default()
        };
        finetune(&mut net, &cfg, &rows, &labels, &mut opt, &RngStream::new(2)).unwrap();
        assert_eq!(net.stack, stack);
        assert_ne!(net.head, head);
    }

    #[test]
    fn finetune_is_deterministic() {
        let (rows, labels) = toy_data(50, 3);
        let run = || {
            let mut net = toy_network(4);
            let mut opt = OptimizerState::for_network(&net);
            let log = finetune(&mut net, &FinetuneConfig::default(), &rows, &labels, &mut opt, &RngStream::new(5)).unwrap();
            (net, log.batches)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_voting() {
        let probs = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        let v = vote_clips(&probs, &[0, 0, 1]).unwrap();
        assert_eq!(v[0].class, 1);
        assert!((v[0].mean_probs[0] - 0.4).abs() < 1e-15);
        assert_eq!(v[1].class, 0);
        // One row per clip reduces to per-row argmax.
        let single = vote_clips(&probs, &[0, 1, 2]).unwrap();
        assert_eq!(single.iter().map(|p| p.class).collect::<Vec<_>>(), [0, 1, 0]);
        assert!(vote_clips(&probs, &[0, 2, 2]).is_err());
    }
}
