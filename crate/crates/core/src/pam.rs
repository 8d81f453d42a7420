//! POI alignment: a single affine projection of pre-trained POI embeddings
//! into the model width, and the splice that writes projected vectors into
//! their placeholder positions of a token-embedding sequence.

use geopoi_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{init_linear, linear};

pub const PREFIX: &str = "pam.";
const PROJ: &str = "pam.proj";
pub const WEIGHT: &str = "pam.proj.weight";
pub const BIAS: &str = "pam.proj.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pam {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Pam {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, output_dim }
    }

    /// Weight `D × d`, bias `D`.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        init_linear(store, PROJ, self.input_dim, self.output_dim, rng);
    }

    /// `h = W·e + b` for each row of `e: n × d`, giving `n × D`.
    pub fn align_rows(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Var> {
        let shape = g.shape(e).to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Tensor(geopoi_autodiff::TensorError::ShapeMismatch {
                op: "pam.align",
                left: shape,
                right: vec![self.output_dim, self.input_dim],
            }));
        }
        linear(g, store, PROJ, e)
    }

    /// Single embedding of shape `[d]` → `[D]`.
    pub fn align(&self, g: &mut Graph, store: &ParamStore, e: Var) -> Result<Var> {
        if !g.value(e).is_finite() {
            return Err(Error::Config("POI embedding has non-finite entries".into()));
        }
        let n = g.value(e).len();
        let row = g.reshape(e, vec![1, n])?;
        let h = self.align_rows(g, store, row)?;
        Ok(g.reshape(h, vec![self.output_dim])?)
    }
}

/// Replaces row `slots[i]` of `h_text` (`T × D`) with row `i` of `aligned`
/// (`k × D`). Slots must be strictly increasing; the sequence length is
/// unchanged.
pub fn splice(g: &mut Graph, h_text: Var, slots: &[usize], aligned: Var) -> Result<Var> {
    let rows = g.shape(aligned).first().copied().unwrap_or(0);
    if g.shape(aligned).len() != 2 || rows != slots.len() {
        return Err(Error::SlotMismatch(format!(
            "{} slots but {} aligned vectors",
            slots.len(),
            rows
        )));
    }
    if slots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::SlotMismatch("slot positions must be strictly increasing".into()));
    }
    if slots.is_empty() {
        return Ok(h_text);
    }
    Ok(g.replace_rows(h_text, slots, aligned)?)
}

/// Stacks one `[D]` vector per slot into a `k × D` matrix for [`splice`].
pub fn stack(g: &mut Graph, vectors: &[Var]) -> Result<Var> {
    if vectors.is_empty() {
        return Err(Error::Empty("aligned vectors"));
    }
    let rows = vectors
        .iter()
        .map(|v| {
            let n = g.value(*v).len();
            g.reshape(*v, vec![1, n])
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(g.concat(&rows, 0)?)
}

/// Empty `0 × D` placeholder for calls with no slots.
pub fn no_vectors(g: &mut Graph, dim: usize) -> Var {
    g.constant(Tensor::zeros(vec![0, dim]))
}
