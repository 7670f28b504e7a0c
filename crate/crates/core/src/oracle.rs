//! Exact enumeration for tiny Bernoulli RBMs.
//!
//! Visible states are indexed by their bit pattern (`bit i` = `vᵢ`). The
//! visible sweep walks states in Gray-code order so each step flips one
//! unit and updates the hidden pre-activations incrementally; results are
//! stored by natural index. All sums go through log-sum-exp.

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, sigmoid, softplus, Matrix};
use crate::rbm::{RbmGradient, RbmParams, VisibleKind};

/// Upper bound on `n_visible + n_hidden` for enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyModelLimit {
    pub max_units: usize,
}

impl Default for TinyModelLimit {
    fn default() -> Self {
        TinyModelLimit { max_units: 20 }
    }
}

impl TinyModelLimit {
    fn check(&self, params: &RbmParams) -> Result<()> {
        if params.kind != VisibleKind::Bernoulli {
            return Err(Error::precondition(
                "exact enumeration needs bernoulli visible units",
            ));
        }
        let units = params.n_visible() + params.n_hidden();
        if units > self.max_units {
            return Err(Error::precondition(format!(
                "{units} units exceed the enumeration limit of {}",
                self.max_units
            )));
        }
        Ok(())
    }
}

/// The visible vector for state `index`.
pub fn state_vector(index: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| ((index >> i) & 1) as f64).collect()
}

pub fn state_index(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |acc, (i, &x)| acc | (usize::from(x > 0.5) << i))
}

/// `-F(v)` for every visible state, by natural index.
pub fn neg_free_energies(params: &RbmParams, limit: TinyModelLimit) -> Result<Vec<f64>> {
    limit.check(params)?;
    let m = params.n_visible();
    let n_states = 1usize << m;
    let mut out = vec![0.0; n_states];
    let mut logits = params.hidden_bias.clone();
    let mut bias_term = 0.0;
    let mut state = 0usize;
    for step in 0..n_states {
        if step > 0 {
            let bit = step.trailing_zeros() as usize;
            state ^= 1 << bit;
            let sign = if state & (1 << bit) != 0 { 1.0 } else { -1.0 };
            bias_term += sign * params.visible_bias[bit];
            for (a, w) in logits.iter_mut().zip(params.weights.row(bit)) {
                *a += sign * w;
            }
        }
        out[state] = bias_term + logits.iter().map(|&a| softplus(a)).sum::<f64>();
    }
    Ok(out)
}

pub fn exact_log_partition(params: &RbmParams, limit: TinyModelLimit) -> Result<f64> {
    Ok(log_sum_exp(&neg_free_energies(params, limit)?))
}

/// `Z = Σ_v e^{-F(v)}`.
pub fn exact_partition(params: &RbmParams, limit: TinyModelLimit) -> Result<f64> {
    exact_log_partition(params, limit).map(f64::exp)
}

/// `P(v)` for every visible state, by natural index.
pub fn visible_distribution(params: &RbmParams, limit: TinyModelLimit) -> Result<Vec<f64>> {
    let nfe = neg_free_energies(params, limit)?;
    let log_z = log_sum_exp(&nfe);
    Ok(nfe.iter().map(|x| (x - log_z).exp()).collect())
}

pub fn exact_marginal(params: &RbmParams, v: &[f64], limit: TinyModelLimit) -> Result<f64> {
    if v.len() != params.n_visible() {
        return Err(Error::precondition("visible vector length"));
    }
    if v.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::precondition("visible state must be binary"));
    }
    let log_z = exact_log_partition(params, limit)?;
    Ok((-params.free_energy(v)? - log_z).exp())
}

/// `P(hⱼ = 1 | v)` by summing `e^{-E(v,h)}` over all hidden states.
pub fn enumerated_hidden_posterior(params: &RbmParams, v: &[f64]) -> Result<Vec<f64>> {
    let n = params.n_hidden();
    let mut log_weights = Vec::with_capacity(1 << n);
    for idx in 0..1usize << n {
        log_weights.push(-params.energy(v, &state_vector(idx, n))?);
    }
    let log_total = log_sum_exp(&log_weights);
    Ok((0..n)
        .map(|j| {
            let on: Vec<f64> = (0..1usize << n)
                .filter(|idx| idx >> j & 1 == 1)
                .map(|idx| log_weights[idx])
                .collect();
            (log_sum_exp(&on) - log_total).exp()
        })
        .collect())
}

/// `P(vᵢ = 1 | h)` by summing `e^{-E(v,h)}` over all visible states.
pub fn enumerated_visible_posterior(
    params: &RbmParams,
    h: &[f64],
    limit: TinyModelLimit,
) -> Result<Vec<f64>> {
    limit.check(params)?;
    let m = params.n_visible();
    let mut log_weights = Vec::with_capacity(1 << m);
    for idx in 0..1usize << m {
        log_weights.push(-params.energy(&state_vector(idx, m), h)?);
    }
    let log_total = log_sum_exp(&log_weights);
    Ok((0..m)
        .map(|i| {
            let on: Vec<f64> = (0..1usize << m)
                .filter(|idx| idx >> i & 1 == 1)
                .map(|idx| log_weights[idx])
                .collect();
            (log_sum_exp(&on) - log_total).exp()
        })
        .collect())
}

fn check_data(params: &RbmParams, data: &Matrix) -> Result<()> {
    if data.cols() != params.n_visible() || data.rows() == 0 {
        return Err(Error::precondition(format!(
            "data is {}x{}, model has {} visible units",
            data.rows(),
            data.cols(),
            params.n_visible()
        )));
    }
    if data.as_slice().iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::precondition("oracle data must be binary"));
    }
    Ok(())
}

/// Mean negative log-likelihood `-(1/N) Σ_d log P(v_d)`.
pub fn exact_nll(params: &RbmParams, data: &Matrix, limit: TinyModelLimit) -> Result<f64> {
    check_data(params, data)?;
    let nfe = neg_free_energies(params, limit)?;
    let log_z = log_sum_exp(&nfe);
    let total: f64 = (0..data.rows())
        .map(|r| log_z - nfe[state_index(data.row(r))])
        .sum();
    Ok(total / data.rows() as f64)
}

/// Gradient of [`exact_nll`]: `⟨stats⟩_model - ⟨stats⟩_data`.
///
/// This is the descent direction's negative; a CD estimate approximates
/// `-exact_nll_gradient`.
pub fn exact_nll_gradient(
    params: &RbmParams,
    data: &Matrix,
    limit: TinyModelLimit,
) -> Result<RbmGradient> {
    check_data(params, data)?;
    let m = params.n_visible();
    let n = params.n_hidden();
    let probs = visible_distribution(params, limit)?;

    let expectations = |weighted: &mut dyn FnMut(&mut dyn FnMut(&[f64], f64))| {
        let mut w = Matrix::zeros(m, n);
        let mut b = vec![0.0; m];
        let mut c = vec![0.0; n];
        weighted(&mut |v: &[f64], weight: f64| {
            let ph: Vec<f64> = (0..n)
                .map(|j| {
                    let a = params.hidden_bias[j]
                        + (0..m).map(|i| v[i] * params.weights.get(i, j)).sum::<f64>();
                    sigmoid(a)
                })
                .collect();
            for i in 0..m {
                b[i] += weight * v[i];
                if v[i] != 0.0 {
                    for j in 0..n {
                        let cur = w.get(i, j);
                        w.set(i, j, cur + weight * v[i] * ph[j]);
                    }
                }
            }
            for j in 0..n {
                c[j] += weight * ph[j];
            }
        });
        (w, b, c)
    };

    let (mw, mb, mc) = expectations(&mut |acc| {
        for (idx, &p) in probs.iter().enumerate() {
            acc(&state_vector(idx, m), p);
        }
    });
    let inv = 1.0 / data.rows() as f64;
    let (dw, db, dc) = expectations(&mut |acc| {
        for r in 0..data.rows() {
            acc(data.row(r), inv);
        }
    });

    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    Ok(RbmGradient {
        weights: Matrix::from_vec(m, n, sub(mw.as_slice(), dw.as_slice()))?,
        visible_bias: sub(&mb, &db),
        hidden_bias: sub(&mc, &dc),
    })
}
