//! Coordinate encoder: quadkey n-grams through single-head self-attention,
//! concatenated with learnable Fourier features of the digit vector, then one
//! affine map into the model width.
//!
//! Parameters (prefix `gcim.`):
//!
//! | name | shape |
//! |------|-------|
//! | `gram_table` | `4^n × d_g` |
//! | `pos_table` | `(L − n + 1) × d_g` |
//! | `w_q`, `w_k` | `d_k × d_g` |
//! | `w_v` | `d_g × d_g` |
//! | `w_s` | `M/2 × L` |
//! | `fusion.weight`, `fusion.bias` | `D × (d_g + M)`, `D` |

use geopoi_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::GcimConfig;
use crate::error::{Error, Result};
use crate::geo::{ngram_count, ngrams, quadkey_for, NGramSequence, QuadKey};
use crate::nn::{attention, init_linear, linear, xavier_std};

pub const PREFIX: &str = "gcim.";

const GRAM_TABLE: &str = "gcim.gram_table";
const POS_TABLE: &str = "gcim.pos_table";
const W_Q: &str = "gcim.w_q";
const W_K: &str = "gcim.w_k";
const W_V: &str = "gcim.w_v";
const W_S: &str = "gcim.w_s";
const FUSION: &str = "gcim.fusion";

/// `(1/√M)·[cos(S·W_sᵀ) ‖ sin(S·W_sᵀ)]` row-wise, for `S: m × L` and
/// `W_s: M/2 × L`. Returns `m × M`.
pub fn fourier_features(g: &mut Graph, digits: Var, w_s: Var) -> Result<Var> {
    let m_half = g.shape(w_s)[0];
    let proj = g.matmul_t(digits, w_s)?;
    let c = g.cos(proj);
    let s = g.sin(proj);
    let both = g.concat(&[c, s], 1)?;
    Ok(g.scale(both, 1.0 / ((2 * m_half) as f64).sqrt()))
}

#[derive(Clone, Debug)]
pub struct Gcim {
    pub config: GcimConfig,
}

impl Gcim {
    pub fn new(config: GcimConfig) -> Result<Self> {
        if !config.fourier_dim.is_multiple_of(2) || config.fourier_dim == 0 {
            return Err(Error::Config("fourier_dim must be even".into()));
        }
        if config.ngram == 0 || config.gram_dim == 0 || config.key_dim == 0 || config.output_dim == 0 {
            return Err(Error::Config("gcim dimensions must be >= 1".into()));
        }
        Ok(Self { config })
    }

    pub fn num_grams(&self) -> usize {
        ngram_count(self.config.level as usize, self.config.ngram)
    }

    pub fn vocab_size(&self) -> usize {
        4usize.pow(self.config.ngram as u32)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let c = &self.config;
        let dg = c.gram_dim;
        store.insert(GRAM_TABLE, Tensor::randn(vec![self.vocab_size(), dg], 1.0 / (dg as f64).sqrt(), rng));
        store.insert(POS_TABLE, Tensor::randn(vec![self.num_grams(), dg], 0.1, rng));
        store.insert(W_Q, Tensor::randn(vec![c.key_dim, dg], xavier_std(dg, c.key_dim), rng));
        store.insert(W_K, Tensor::randn(vec![c.key_dim, dg], xavier_std(dg, c.key_dim), rng));
        store.insert(W_V, Tensor::randn(vec![dg, dg], xavier_std(dg, dg), rng));
        store.insert(
            W_S,
            Tensor::randn(vec![c.fourier_dim / 2, c.level as usize], 1.0 / c.fourier_gamma, rng),
        );
        init_linear(store, FUSION, dg + c.fourier_dim, c.output_dim, rng);
    }

    pub fn quadkey(&self, lat: f64, lon: f64) -> Result<QuadKey> {
        quadkey_for(lat, lon, self.config.level)
    }

    pub fn grams(&self, key: &QuadKey) -> NGramSequence {
        ngrams(key, self.config.ngram)
    }

    /// The `S` vector for the Fourier branch.
    pub fn digit_row(&self, key: &QuadKey) -> Vec<f64> {
        let scale = if self.config.rescale_digits { 1.0 / 3.0 } else { 1.0 };
        key.digit_vector().into_iter().map(|d| d * scale).collect()
    }

    /// Self-attention over each gram list (rows of the output, one per list).
    fn attend_many(&self, g: &mut Graph, store: &ParamStore, lists: &[Vec<usize>]) -> Result<Var> {
        let per = self.num_grams();
        for l in lists {
            if l.len() != per {
                return Err(Error::SlotMismatch(format!("expected {per} grams, got {}", l.len())));
            }
        }
        let all: Vec<usize> = lists.iter().flatten().copied().collect();
        let positions: Vec<usize> = (0..lists.len()).flat_map(|_| 0..per).collect();
        let table = g.param(store, GRAM_TABLE)?;
        let pos_table = g.param(store, POS_TABLE)?;
        let emb = g.gather_rows(table, &all)?;
        let pos = g.gather_rows(pos_table, &positions)?;
        let x = g.add(emb, pos)?;
        let wq = g.param(store, W_Q)?;
        let wk = g.param(store, W_K)?;
        let wv = g.param(store, W_V)?;
        let q = g.matmul_t(x, wq)?;
        let k = g.matmul_t(x, wk)?;
        let v = g.matmul_t(x, wv)?;
        let mut pooled = Vec::with_capacity(lists.len());
        for i in 0..lists.len() {
            let (a, b) = (i * per, (i + 1) * per);
            let qi = g.slice_rows(q, a, b)?;
            let ki = g.slice_rows(k, a, b)?;
            let vi = g.slice_rows(v, a, b)?;
            let att = attention(g, qi, ki, vi, false)?;
            pooled.push(g.mean_rows(att)?);
        }
        Ok(g.concat(&pooled, 0)?)
    }

    /// Position-enhanced gram embeddings → attention → mean over positions.
    /// Returns `1 × d_g`.
    pub fn attend_grams(&self, g: &mut Graph, store: &ParamStore, grams: &NGramSequence) -> Result<Var> {
        if grams.n != self.config.ngram {
            return Err(Error::SlotMismatch(format!(
                "gram width {} but encoder uses {}",
                grams.n, self.config.ngram
            )));
        }
        self.attend_many(g, store, &[grams.indices()])
    }

    /// Fourier features of one digit vector. Returns `1 × M`.
    pub fn fourier_encode(&self, g: &mut Graph, store: &ParamStore, digits: &[f64]) -> Result<Var> {
        let w_s = g.param(store, W_S)?;
        let s = g.constant(Tensor::row(digits.to_vec()));
        if digits.len() != g.shape(w_s)[1] {
            return Err(Error::Tensor(geopoi_autodiff::TensorError::ShapeMismatch {
                op: "fourier_encode",
                left: vec![1, digits.len()],
                right: g.shape(w_s).to_vec(),
            }));
        }
        fourier_features(g, s, w_s)
    }

    /// Encodes each coordinate into one row of a `U × D` matrix. With
    /// `use_fourier == false` the Fourier block is zero before fusion.
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coords: &[(f64, f64)],
        use_fourier: bool,
    ) -> Result<Var> {
        if coords.is_empty() {
            return Err(Error::Empty("coordinates"));
        }
        let keys = coords
            .iter()
            .map(|&(lat, lon)| self.quadkey(lat, lon))
            .collect::<Result<Vec<_>>>()?;
        let lists: Vec<Vec<usize>> = keys.iter().map(|k| self.grams(k).indices()).collect();
        let attended = self.attend_many(g, store, &lists)?;
        let m = self.config.fourier_dim;
        let fourier = if use_fourier {
            let w_s = g.param(store, W_S)?;
            let rows: Vec<f64> = keys.iter().flat_map(|k| self.digit_row(k)).collect();
            let s = g.constant(Tensor::matrix(coords.len(), self.config.level as usize, rows)?);
            fourier_features(g, s, w_s)?
        } else {
            // keep w_s bound so the optimizer sees a (zero) gradient for it
            g.param(store, W_S)?;
            g.constant(Tensor::zeros(vec![coords.len(), m]))
        };
        let fused_in = g.concat(&[attended, fourier], 1)?;
        linear(g, store, FUSION, fused_in)
    }

    /// One coordinate → shape `[D]`.
    pub fn encode_gps(&self, g: &mut Graph, store: &ParamStore, lat: f64, lon: f64) -> Result<Var> {
        let rows = self.encode_batch(g, store, &[(lat, lon)], true)?;
        Ok(g.reshape(rows, vec![self.config.output_dim])?)
    }
}
