//! Greedy layer-wise stacks of RBMs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::numerics::{Matrix, Purpose, RngStream};
use crate::pipeline::{make_batches, BatchPlan};
use crate::rbm::{cd_update, CdConfig, MomentumState, RbmParams, VisibleKind};

/// Named model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Rbm,
    Alpha,
    Beta,
    Iota,
    Zeta,
}

/// One row of a preset: hidden width, momentum, learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPreset {
    pub hidden: usize,
    pub momentum: f64,
    pub learning_rate: f64,
}

const fn layer(hidden: usize, learning_rate: f64) -> LayerPreset {
    LayerPreset {
        hidden,
        momentum: 0.5,
        learning_rate,
    }
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Rbm,
        Architecture::Alpha,
        Architecture::Beta,
        Architecture::Iota,
        Architecture::Zeta,
    ];

    pub fn preset(self) -> Vec<LayerPreset> {
        match self {
            Architecture::Rbm => vec![layer(2000, 1e-3)],
            Architecture::Alpha => vec![layer(2000, 1e-3), layer(2000, 5e-4)],
            Architecture::Beta => vec![layer(2000, 1e-3), layer(2000, 5e-4), layer(2000, 5e-4)],
            Architecture::Iota => vec![layer(4000, 5e-4), layer(4000, 5e-4)],
            Architecture::Zeta => vec![layer(4000, 5e-4), layer(4000, 5e-4), layer(4000, 5e-4)],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Rbm => "rbm",
            Architecture::Alpha => "alpha",
            Architecture::Beta => "beta",
            Architecture::Iota => "iota",
            Architecture::Zeta => "zeta",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Architecture::Rbm => 0,
            Architecture::Alpha => 1,
            Architecture::Beta => 2,
            Architecture::Iota => 3,
            Architecture::Zeta => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    /// Display name in report tables, e.g. `A-DBN_iota` or `G-RBM`.
    pub fn model_name(self, fusion: FusionMode) -> String {
        match self {
            Architecture::Rbm => format!("{}RBM", fusion.prefix()),
            other => format!("{}DBN_{}", fusion.prefix(), other.as_str()),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    pub arch: Architecture,
    pub fusion_mode: FusionMode,
    pub layers: Vec<RbmParams>,
    pub per_layer_cd: Vec<CdConfig>,
}

/// Builds the preset stack for `arch` with freshly initialized weights.
pub fn build_stack(
    arch: Architecture,
    fusion_mode: FusionMode,
    input_dim: usize,
    rng: &RngStream,
) -> Result<DbnStack> {
    let cd = arch
        .preset()
        .iter()
        .map(|p| CdConfig {
            learning_rate: p.learning_rate,
            momentum: p.momentum,
            ..CdConfig::default()
        })
        .collect::<Vec<_>>();
    let hidden = arch.preset().iter().map(|p| p.hidden).collect::<Vec<_>>();
    DbnStack::with_layout(arch, fusion_mode, input_dim, &hidden, cd, rng)
}

impl DbnStack {
    /// A stack with explicit hidden widths and per-layer CD settings. The
    /// first layer is Gaussian-visible, the rest Bernoulli.
    pub fn with_layout(
        arch: Architecture,
        fusion_mode: FusionMode,
        input_dim: usize,
        hidden: &[usize],
        per_layer_cd: Vec<CdConfig>,
        rng: &RngStream,
    ) -> Result<DbnStack> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::config("layer sizes must be positive and non-empty"));
        }
        if per_layer_cd.len() != hidden.len() {
            return Err(Error::config(format!(
                "{} CD configs for {} layers",
                per_layer_cd.len(),
                hidden.len()
            )));
        }
        for cfg in &per_layer_cd {
            cfg.validate()?;
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut n_visible = input_dim;
        for (l, &n_hidden) in hidden.iter().enumerate() {
            let kind = if l == 0 {
                VisibleKind::Gaussian
            } else {
                VisibleKind::Bernoulli
            };
            let mut wrng = rng.substream(Purpose::Weights, l as u32);
            layers.push(RbmParams::init(n_visible, n_hidden, kind, &mut wrng));
            n_visible = n_hidden;
        }
        let stack = DbnStack {
            arch,
            fusion_mode,
            layers,
            per_layer_cd,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("empty stack"));
        }
        if self.per_layer_cd.len() != self.layers.len() {
            return Err(Error::config("one CD config per layer required"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| e.context(format!("layer {l}")))?;
            let expected = if l == 0 {
                VisibleKind::Gaussian
            } else {
                VisibleKind::Bernoulli
            };
            if layer.kind != expected {
                return Err(Error::config(format!(
                    "layer {l} must have {expected:?} visible units"
                )));
            }
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].n_hidden() != pair[1].n_visible() {
                return Err(Error::config(format!(
                    "layer {l} has {} hidden units but layer {} has {} visible",
                    pair[0].n_hidden(),
                    l + 1,
                    pair[1].n_visible()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_visible()
    }

    pub fn top_dim(&self) -> usize {
        self.layers.last().map_or(0, RbmParams::n_hidden)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(RbmParams::n_hidden).collect()
    }

    /// Deterministic mean-field features from the top layer.
    pub fn propagate_up(&self, rows: &Matrix) -> Result<Matrix> {
        let mut current = self.layers[0].hidden_conditional(rows)?;
        for layer in &self.layers[1..] {
            current = layer.hidden_conditional(&current)?;
        }
        Ok(current)
    }
}

/// SHA-256 over a layer's shape, kind and parameter bits.
pub fn layer_digest(layer: &RbmParams) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((layer.n_visible() as u64).to_le_bytes());
    h.update((layer.n_hidden() as u64).to_le_bytes());
    h.update([layer.kind.tag()]);
    for x in layer
        .weights
        .as_slice()
        .iter()
        .chain(&layer.visible_bias)
        .chain(&layer.hidden_bias)
        .chain(&layer.sigma)
    {
        h.update(x.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub layer: usize,
    pub epoch: usize,
    /// Row-weighted mean over the epoch's batches.
    pub reconstruction_error: f64,
    pub wall_seconds: f64,
    pub rows: usize,
    pub batches: usize,
}

/// Trains one RBM for `cfg.epochs` epochs on `rows`, reshuffling each epoch.
pub fn train_layer(
    layer: &mut RbmParams,
    layer_index: usize,
    rows: &Matrix,
    cfg: &CdConfig,
    rng: &RngStream,
    sink: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if rows.rows() == 0 {
        return Err(Error::precondition("no training rows"));
    }
    let mut gibbs = rng.substream(Purpose::Gibbs, layer_index as u32);
    let mut shuffle = rng.substream(Purpose::Shuffle, layer_index as u32);
    let mut state = MomentumState::for_params(layer);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let plan = BatchPlan::new(cfg.batch_size, shuffle.next_seed());
        let batches = make_batches(rows.rows(), &plan);
        let mut err_sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let batch = rows.select_rows(idx);
            let stats = cd_update(layer, &batch, cfg, &mut state, &mut gibbs).map_err(|e| {
                e.context(format!("layer {layer_index}, epoch {}, batch {b}", epoch + 1))
            })?;
            err_sum += stats.reconstruction_error * idx.len() as f64;
        }
        let log = EpochLog {
            layer: layer_index,
            epoch: epoch + 1,
            reconstruction_error: err_sum / rows.rows() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
            rows: rows.rows(),
            batches: batches.len(),
        };
        sink(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Greedy pre-training: layer 0 on `rows`, each deeper layer on the hidden
/// probabilities of the trained layer below it.
pub fn pretrain_greedy(
    stack: &mut DbnStack,
    rows: &Matrix,
    rng: &RngStream,
    sink: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    stack.validate()?;
    if rows.cols() != stack.input_dim() {
        return Err(Error::config(format!(
            "rows have {} features, stack expects {}",
            rows.cols(),
            stack.input_dim()
        )));
    }
    let mut logs = Vec::new();
    let mut features: Option<Matrix> = None;
    let n_layers = stack.layers.len();
    for l in 0..n_layers {
        let input = features.as_ref().unwrap_or(rows);
        let cfg = stack.per_layer_cd[l];
        logs.extend(train_layer(&mut stack.layers[l], l, input, &cfg, rng, sink)?);
        if l + 1 < n_layers {
            features = Some(stack.layers[l].hidden_conditional(input)?);
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_widths_and_rates() {
        let alpha = Architecture::Alpha.preset();
        assert_eq!(alpha.iter().map(|l| l.hidden).collect::<Vec<_>>(), [2000, 2000]);
        assert_eq!(alpha.iter().map(|l| l.learning_rate).collect::<Vec<_>>(), [1e-3, 5e-4]);

        let zeta = Architecture::Zeta.preset();
        assert_eq!(zeta.len(), 3);
        assert!(zeta.iter().all(|l| l.hidden == 4000 && l.momentum == 0.5 && l.learning_rate == 5e-4));

        let rbm = Architecture::Rbm.preset();
        assert_eq!(rbm.len(), 1);
        assert_eq!((rbm[0].hidden, rbm[0].learning_rate), (2000, 1e-3));

        let beta = Architecture::Beta.preset();
        assert_eq!(beta.iter().map(|l| l.learning_rate).collect::<Vec<_>>(), [1e-3, 5e-4, 5e-4]);
        let iota = Architecture::Iota.preset();
        assert_eq!(iota.iter().map(|l| (l.hidden, l.learning_rate)).collect::<Vec<_>>(), [(4000, 5e-4), (4000, 5e-4)]);
    }

    #[test]
    fn built_stack_chains_and_defaults() {
        let s = build_stack(Architecture::Beta, FusionMode::Gradient, 50, &RngStream::new(1)).unwrap();
        assert_eq!(s.hidden_sizes(), [2000, 2000, 2000]);
        assert_eq!(s.layers[0].kind, VisibleKind::Gaussian);
        assert!(s.layers[1..].iter().all(|l| l.kind == VisibleKind::Bernoulli));
        assert!(s.per_layer_cd.iter().all(|c| c.epochs == 3 && c.batch_size == 128 && c.k == 1));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn unknown_arch_rejected() {
        assert!("gamma".parse::<Architecture>().is_err());
        assert_eq!("ZETA".parse::<Architecture>().unwrap(), Architecture::Zeta);
    }

    #[test]
    fn broken_chain_rejected() {
        let mut s = DbnStack::with_layout(
            Architecture::Alpha,
            FusionMode::Standard,
            6,
            &[4, 3],
            vec![CdConfig::default(); 2],
            &RngStream::new(0),
        )
        .unwrap();
        s.layers[1] = RbmParams::zeros(5, 3, VisibleKind::Bernoulli);
        assert!(s.validate().is_err());
    }

    fn zero_stack() -> DbnStack {
        let mut s = DbnStack::with_layout(
            Architecture::Alpha,
            FusionMode::Standard,
            5,
            &[4, 3],
            vec![CdConfig::default(); 2],
            &RngStream::new(0),
        )
        .unwrap();
        for l in &mut s.layers {
            l.weights = Matrix::zeros(l.n_visible(), l.n_hidden());
        }
        s
    }

    #[test]
    fn propagate_zero_stack_is_half() {
        let s = zero_stack();
        let out = s.propagate_up(&Matrix::filled(3, 5, 2.0)).unwrap();
        assert_eq!(out.shape(), (3, 3));
        assert!(out.as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn single_layer_propagation_is_hidden_conditional() {
        let s = DbnStack::with_layout(
            Architecture::Rbm,
            FusionMode::Aggregative,
            7,
            &[4],
            vec![CdConfig::default()],
            &RngStream::new(3),
        )
        .unwrap();
        let rows = Matrix::from_fn(5, 7, |i, j| (i as f64 - j as f64) * 0.3);
        assert_eq!(s.propagate_up(&rows).unwrap(), s.layers[0].hidden_conditional(&rows).unwrap());
        let out = s.propagate_up(&rows).unwrap();
        assert!(out.as_slice().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    fn learnable_rows() -> Matrix {
        // Two prototypes plus noise, standardized-ish.
        let mut rng = RngStream::new(77);
        Matrix::from_fn(256, 12, |i, j| {
            let proto = if i % 2 == 0 { j < 6 } else { j >= 6 };
            (if proto { 1.0 } else { -1.0 }) + 0.1 * rng.standard_normal()
        })
    }

    #[test]
    fn pretraining_reduces_reconstruction_error() {
        let cfg = CdConfig {
            learning_rate: 0.01,
            batch_size: 32,
            ..CdConfig::default()
        };
        let mut s = DbnStack::with_layout(
            Architecture::Rbm,
            FusionMode::Standard,
            12,
            &[8],
            vec![cfg],
            &RngStream::new(5),
        )
        .unwrap();
        let mut seen = 0;
        let logs = pretrain_greedy(&mut s, &learnable_rows(), &RngStream::new(5), &mut |_| seen += 1).unwrap();
        assert_eq!(logs.len(), 3);
        assert_eq!(seen, 3);
        assert!(logs[2].reconstruction_error < logs[0].reconstruction_error, "{logs:?}");
    }

    #[test]
    fn deeper_training_leaves_lower_layers_untouched() {
        let cfg = CdConfig {
            learning_rate: 0.01,
            batch_size: 64,
            ..CdConfig::default()
        };
        let mut s = DbnStack::with_layout(
            Architecture::Alpha,
            FusionMode::Standard,
            12,
            &[8, 4],
            vec![cfg; 2],
            &RngStream::new(5),
        )
        .unwrap();
        let rows = learnable_rows();
        let rng = RngStream::new(9);
        // Train layer 0 alone, then the full stack from the same start.
        let mut only_first = s.clone();
        train_layer(&mut only_first.layers[0], 0, &rows, &cfg, &rng, &mut |_| {}).unwrap();
        let digest_after_first = layer_digest(&only_first.layers[0]);

        let mut digests = Vec::new();
        pretrain_greedy(&mut s, &rows, &rng, &mut |log| {
            digests.push(log.layer);
        })
        .unwrap();
        assert_eq!(layer_digest(&s.layers[0]), digest_after_first);
        assert_eq!(digests, [0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn pretrain_rejects_wrong_width() {
        let mut s = zero_stack();
        assert!(pretrain_greedy(&mut s, &Matrix::zeros(4, 6), &RngStream::new(0), &mut |_| {}).is_err());
    }

    #[test]
    fn digest_sees_single_bit_change() {
        let s = zero_stack();
        let mut l = s.layers[0].clone();
        let before = layer_digest(&l);
        l.hidden_bias[0] = f64::from_bits(l.hidden_bias[0].to_bits() ^ 1);
        assert_ne!(before, layer_digest(&l));
    }
}
