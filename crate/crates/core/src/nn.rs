//! Shared layer helpers over the tape.

use geopoi_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Glorot-normal standard deviation for a `fan_in → fan_out` map.
pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Registers `{prefix}.weight` (`out × in`) and `{prefix}.bias` (`out`).
pub fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) {
    store.insert(
        format!("{prefix}.weight"),
        Tensor::randn(vec![output, input], xavier_std(input, output), rng),
    );
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![output]));
}

/// `x · Wᵀ + b` for `x: m × in`.
pub fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    let xw = g.matmul_t(x, w)?;
    Ok(g.add_bias(xw, b)?)
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::full(vec![dim], 1.0));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(vec![dim]));
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn layer_norm(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{prefix}.gain"))?;
    let bias = g.param(store, &format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gain, bias, LAYER_NORM_EPS)?)
}

/// Single-head scaled dot-product attention over rows of `q`, `k`, `v`,
/// optionally causal.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let dk = g.shape(k)[1];
    let scores = g.matmul_t(q, k)?;
    let mut scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    if causal {
        scores = g.causal_mask(scores)?;
    }
    let weights = g.softmax_rows(scores)?;
    Ok(g.matmul(weights, v)?)
}
