//! Restricted Boltzmann machine with Bernoulli or Gaussian visible units.
//!
//! Weights are stored `visible × hidden`. For Gaussian visible units the
//! energy is
//!
//! ```text
//! E(v, h) = Σᵢ (vᵢ - bᵢ)² / 2σᵢ² - Σⱼ cⱼhⱼ - Σᵢⱼ (vᵢ/σᵢ) hⱼ wᵢⱼ
//! ```
//!
//! and the Bernoulli energy replaces the quadratic term with `-Σᵢ bᵢvᵢ`.
//!
//! Training follows the log-likelihood uphill: the CD gradient is
//! `⟨v hᵀ⟩_data - ⟨v hᵀ⟩_model`, and `velocity = momentum·velocity + lr·grad`
//! is added to the parameters.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_bernoulli, sigmoid, softplus, Matrix, RngStream};

/// Standard deviation of the initial weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisibleKind {
    Bernoulli,
    Gaussian,
}

impl VisibleKind {
    pub fn tag(self) -> u8 {
        match self {
            VisibleKind::Bernoulli => 0,
            VisibleKind::Gaussian => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(VisibleKind::Bernoulli),
            1 => Some(VisibleKind::Gaussian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `n_visible × n_hidden`.
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub kind: VisibleKind,
    /// Per-visible standard deviation; empty for Bernoulli units.
    pub sigma: Vec<f64>,
}

impl RbmParams {
    /// All-zero parameters (σ = 1 for Gaussian units).
    pub fn zeros(n_visible: usize, n_hidden: usize, kind: VisibleKind) -> Self {
        RbmParams {
            weights: Matrix::zeros(n_visible, n_hidden),
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
            kind,
            sigma: match kind {
                VisibleKind::Bernoulli => Vec::new(),
                VisibleKind::Gaussian => vec![1.0; n_visible],
            },
        }
    }

    /// Weights ~ Normal(0, 0.01²), zero biases.
    pub fn init(n_visible: usize, n_hidden: usize, kind: VisibleKind, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(n_visible, n_hidden, kind);
        for w in p.weights.as_mut_slice() {
            *w = INIT_WEIGHT_STD * rng.standard_normal();
        }
        p
    }

    pub fn n_visible(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.weights.shape();
        if self.visible_bias.len() != m || self.hidden_bias.len() != n {
            return Err(Error::config(format!(
                "bias lengths ({}, {}) do not match weights {m}x{n}",
                self.visible_bias.len(),
                self.hidden_bias.len()
            )));
        }
        match self.kind {
            VisibleKind::Bernoulli if !self.sigma.is_empty() => {
                return Err(Error::config("bernoulli visible units carry no sigma"));
            }
            VisibleKind::Gaussian => {
                if self.sigma.len() != m {
                    return Err(Error::config("sigma length must equal visible size"));
                }
                if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::config("sigma must be strictly positive"));
                }
            }
            _ => {}
        }
        let finite = self.weights.is_finite()
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Divergence("non-finite RBM parameters".into()));
        }
        Ok(())
    }

    fn unit_sigma(&self) -> bool {
        self.sigma.iter().all(|&s| s == 1.0)
    }

    /// `v / σ` for Gaussian units; borrowed unchanged otherwise.
    fn scaled_visible<'a>(&self, v: &'a Matrix) -> Cow<'a, Matrix> {
        if self.kind == VisibleKind::Bernoulli || self.unit_sigma() {
            return Cow::Borrowed(v);
        }
        let mut out = v.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(&self.sigma) {
                *x /= s;
            }
        }
        Cow::Owned(out)
    }

    fn check_visible(&self, cols: usize) -> Result<()> {
        if cols != self.n_visible() {
            return Err(Error::precondition(format!(
                "visible input has {cols} columns, model has {} visible units",
                self.n_visible()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, cols: usize) -> Result<()> {
        if cols != self.n_hidden() {
            return Err(Error::precondition(format!(
                "hidden input has {cols} columns, model has {} hidden units",
                self.n_hidden()
            )));
        }
        Ok(())
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        if h.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::precondition("hidden state must be binary"));
        }
        let visible_term = match self.kind {
            VisibleKind::Bernoulli => -dot(&self.visible_bias, v),
            VisibleKind::Gaussian => v
                .iter()
                .zip(&self.visible_bias)
                .zip(&self.sigma)
                .map(|((vi, bi), si)| (vi - bi).powi(2) / (2.0 * si * si))
                .sum(),
        };
        let mut interaction = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            let x = match self.kind {
                VisibleKind::Bernoulli => vi,
                VisibleKind::Gaussian => vi / self.sigma[i],
            };
            interaction += x * dot(self.weights.row(i), h);
        }
        Ok(visible_term - dot(&self.hidden_bias, h) - interaction)
    }

    /// Hidden pre-activations `c + (v/σ)·W`.
    fn hidden_logits(&self, v_batch: &Matrix) -> Result<Matrix> {
        self.check_visible(v_batch.cols())?;
        let mut logits = self.scaled_visible(v_batch).matmul(&self.weights)?;
        logits.add_row_vector(&self.hidden_bias);
        Ok(logits)
    }

    /// `P(hⱼ = 1 | v)` for each row of `v_batch`.
    pub fn hidden_conditional(&self, v_batch: &Matrix) -> Result<Matrix> {
        let mut logits = self.hidden_logits(v_batch)?;
        logits.as_mut_slice().iter_mut().for_each(|x| *x = sigmoid(*x));
        Ok(logits)
    }

    /// Bernoulli: `P(vᵢ = 1 | h)`. Gaussian: the conditional mean
    /// `bᵢ + σᵢ Σⱼ wᵢⱼ hⱼ`.
    pub fn visible_conditional(&self, h_batch: &Matrix) -> Result<Matrix> {
        self.check_hidden(h_batch.cols())?;
        let mut act = h_batch.matmul_nt(&self.weights)?;
        match self.kind {
            VisibleKind::Bernoulli => {
                for i in 0..act.rows() {
                    for (x, b) in act.row_mut(i).iter_mut().zip(&self.visible_bias) {
                        *x = sigmoid(*x + b);
                    }
                }
            }
            VisibleKind::Gaussian => {
                for i in 0..act.rows() {
                    let row = act.row_mut(i);
                    for ((x, b), s) in row.iter_mut().zip(&self.visible_bias).zip(&self.sigma) {
                        *x = b + s * *x;
                    }
                }
            }
        }
        Ok(act)
    }

    pub fn sample_hidden(&self, v_batch: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
        sample_bernoulli(&self.hidden_conditional(v_batch)?, rng)
    }

    /// Draws visible states given hidden states: Bernoulli draws, or
    /// `Normal(mean, σᵢ²)` for Gaussian units.
    pub fn sample_visible(&self, h_batch: &Matrix, rng: &mut RngStream) -> Result<Matrix> {
        let mean = self.visible_conditional(h_batch)?;
        match self.kind {
            VisibleKind::Bernoulli => sample_bernoulli(&mean, rng),
            VisibleKind::Gaussian => {
                let mut out = mean;
                for i in 0..out.rows() {
                    for (x, s) in out.row_mut(i).iter_mut().zip(&self.sigma) {
                        *x += s * rng.standard_normal();
                    }
                }
                Ok(out)
            }
        }
    }

    /// `F(v) = -log Σ_h e^{-E(v,h)}`.
    pub fn free_energy(&self, v: &[f64]) -> Result<f64> {
        self.check_visible(v.len())?;
        let visible_term = match self.kind {
            VisibleKind::Bernoulli => -dot(&self.visible_bias, v),
            VisibleKind::Gaussian => v
                .iter()
                .zip(&self.visible_bias)
                .zip(&self.sigma)
                .map(|((vi, bi), si)| (vi - bi).powi(2) / (2.0 * si * si))
                .sum(),
        };
        let row = Matrix::from_vec(1, v.len(), v.to_vec())?;
        let logits = self.hidden_logits(&row)?;
        let hidden_term: f64 = logits.as_slice().iter().map(|&x| softplus(x)).sum();
        Ok(visible_term - hidden_term)
    }

    /// Mean squared error between `batch` and its one-step reconstruction:
    /// hidden states are sampled, the visible side uses the conditional mean.
    pub fn reconstruction_error(&self, batch: &Matrix, rng: &mut RngStream) -> Result<f64> {
        let h = self.sample_hidden(batch, rng)?;
        let recon = self.visible_conditional(&h)?;
        Ok(mse(batch, &recon))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mse(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.as_slice().len().max(1) as f64;
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n
}

/// How the negative-phase chain moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GibbsMode {
    /// Sample hidden states (and Bernoulli visibles) at every step.
    #[default]
    Stochastic,
    /// Propagate probabilities only; consumes no randomness.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdConfig {
    /// Gibbs alternations per update.
    pub k: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub gibbs: GibbsMode,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            k: 1,
            learning_rate: 1e-3,
            momentum: 0.5,
            batch_size: 128,
            epochs: 3,
            gibbs: GibbsMode::Stochastic,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("CD needs k >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

/// Velocity buffers for the momentum update.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl MomentumState {
    pub fn for_params(params: &RbmParams) -> Self {
        MomentumState {
            weights: Matrix::zeros(params.n_visible(), params.n_hidden()),
            visible_bias: vec![0.0; params.n_visible()],
            hidden_bias: vec![0.0; params.n_hidden()],
        }
    }
}

/// Log-likelihood gradient estimate, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: Matrix,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl RbmGradient {
    pub fn max_abs(&self) -> f64 {
        self.visible_bias
            .iter()
            .chain(&self.hidden_bias)
            .fold(self.weights.max_abs(), |acc, x| acc.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdStats {
    /// MSE of the first reconstruction in the chain.
    pub reconstruction_error: f64,
    pub max_abs_grad: f64,
}

/// CD-k estimate of the log-likelihood gradient for one batch.
///
/// Positive statistics use `P(h|v_data)`. The chain samples hidden states
/// at each step; Bernoulli visibles are sampled, Gaussian visibles take the
/// conditional mean. Negative statistics use the final visible state and
/// `P(h|v_k)`.
pub fn cd_gradient(
    params: &RbmParams,
    batch: &Matrix,
    cfg: &CdConfig,
    rng: &mut RngStream,
) -> Result<(RbmGradient, f64)> {
    if cfg.k == 0 {
        return Err(Error::config("CD needs k >= 1"));
    }
    params.check_visible(batch.cols())?;
    let rows = batch.rows();
    if rows == 0 {
        return Err(Error::precondition("empty batch"));
    }
    let stochastic = cfg.gibbs == GibbsMode::Stochastic;

    let ph0 = params.hidden_conditional(batch)?;
    let mut h = if stochastic {
        sample_bernoulli(&ph0, rng)?
    } else {
        ph0.clone()
    };
    let mut recon_error = 0.0;
    let mut vk = batch.clone();
    let mut phk = ph0.clone();
    for step in 0..cfg.k {
        let mean = params.visible_conditional(&h)?;
        if step == 0 {
            recon_error = mse(batch, &mean);
        }
        vk = match params.kind {
            VisibleKind::Bernoulli if stochastic => sample_bernoulli(&mean, rng)?,
            _ => mean,
        };
        phk = params.hidden_conditional(&vk)?;
        if step + 1 < cfg.k {
            h = if stochastic {
                sample_bernoulli(&phk, rng)?
            } else {
                phk.clone()
            };
        }
    }

    let scale = 1.0 / rows as f64;
    let pos = params.scaled_visible(batch).matmul_tn(&ph0)?;
    let neg = params.scaled_visible(&vk).matmul_tn(&phk)?;
    let mut gw = pos;
    for (g, n) in gw.as_mut_slice().iter_mut().zip(neg.as_slice()) {
        *g = (*g - n) * scale;
    }

    let dv = batch.col_sums();
    let dvk = vk.col_sums();
    let gb: Vec<f64> = match params.kind {
        VisibleKind::Bernoulli => dv.iter().zip(&dvk).map(|(a, b)| (a - b) * scale).collect(),
        VisibleKind::Gaussian => dv
            .iter()
            .zip(&dvk)
            .zip(&params.sigma)
            .map(|((a, b), s)| (a - b) * scale / (s * s))
            .collect(),
    };
    let gc: Vec<f64> = ph0
        .col_sums()
        .iter()
        .zip(phk.col_sums())
        .map(|(a, b)| (a - b) * scale)
        .collect();

    Ok((
        RbmGradient {
            weights: gw,
            visible_bias: gb,
            hidden_bias: gc,
        },
        recon_error,
    ))
}

/// One CD-k momentum step. On a non-finite result the parameters and state
/// are left untouched and a divergence error is returned.
pub fn cd_update(
    params: &mut RbmParams,
    batch: &Matrix,
    cfg: &CdConfig,
    state: &mut MomentumState,
    rng: &mut RngStream,
) -> Result<CdStats> {
    if batch.rows() > cfg.batch_size {
        return Err(Error::precondition(format!(
            "batch of {} rows exceeds configured batch size {}",
            batch.rows(),
            cfg.batch_size
        )));
    }
    let (grad, recon_error) = cd_gradient(params, batch, cfg, rng)?;
    let max_abs_grad = grad.max_abs();

    let step = |vel: &[f64], g: &[f64]| -> Vec<f64> {
        vel.iter()
            .zip(g)
            .map(|(v, g)| cfg.momentum * v + cfg.learning_rate * g)
            .collect()
    };
    let vw = step(state.weights.as_slice(), grad.weights.as_slice());
    let vb = step(&state.visible_bias, &grad.visible_bias);
    let vc = step(&state.hidden_bias, &grad.hidden_bias);

    let finite_after = |p: &[f64], v: &[f64]| p.iter().zip(v).all(|(p, v)| (p + v).is_finite());
    if !(max_abs_grad.is_finite()
        && finite_after(params.weights.as_slice(), &vw)
        && finite_after(&params.visible_bias, &vb)
        && finite_after(&params.hidden_bias, &vc))
    {
        return Err(Error::Divergence(format!(
            "non-finite CD update (max |grad| = {max_abs_grad:e})"
        )));
    }

    let apply = |p: &mut [f64], v: &[f64]| {
        for (p, v) in p.iter_mut().zip(v) {
            *p += v;
        }
    };
    apply(params.weights.as_mut_slice(), &vw);
    apply(&mut params.visible_bias, &vb);
    apply(&mut params.hidden_bias, &vc);
    state.weights.as_mut_slice().copy_from_slice(&vw);
    state.visible_bias = vb;
    state.hidden_bias = vc;

    Ok(CdStats {
        reconstruction_error: recon_error,
        max_abs_grad,
    })
}
