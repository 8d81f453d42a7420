//! Central finite-difference checks against the tape's analytic gradients.
//!
//! The numeric side only evaluates forward values, so it shares no code with
//! the backward rules it validates.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked entries.
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Compares analytic and central-difference gradients for every trainable
/// parameter in `store`. `loss` rebuilds the scalar loss on a fresh graph.
/// At most `max_entries` evenly strided entries are probed per tensor.
pub fn check_params<F>(
    store: &ParamStore,
    step: f64,
    max_entries: usize,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    let grads = g.backward(out)?;
    let analytic = grads.into_params();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(&mut g, s)?;
        g.value(out).item()
    };

    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    let names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let len = store.value(&name)?.len();
        let stride = len.div_ceil(max_entries.max(1)).max(1);
        let mut a = Vec::new();
        let mut n = Vec::new();
        let ga = analytic.get(&name).map(|t| t.data().to_vec());
        for i in (0..len).step_by(stride) {
            let orig = store.value(&name)?.data()[i];
            probe.value_mut(&name)?.data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[i] = orig;
            n.push((up - down) / (2.0 * step));
            a.push(ga.as_ref().map_or(0.0, |g| g[i]));
        }
        report.tensors.push(TensorCheck {
            name,
            checked: a.len(),
            rel_error: rel_error(&a, &n),
        });
    }
    Ok(report)
}
