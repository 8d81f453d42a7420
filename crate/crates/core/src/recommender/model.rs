//! Causal self-attention surrogate over mixed prompt embeddings.
//!
//! Parameters (prefix `rec.`): `tokens`, `positions`, per block
//! `block{b}.ln1`, `block{b}.attn.{w_q,w_k,w_v,w_o}`, `block{b}.ln2`,
//! `block{b}.ff1`, `block{b}.ff2`, then `ln_f` and `head`. Without PAM the POI
//! slots read `poi_tokens` instead of the frozen `poiemb.table`.

use std::collections::BTreeMap;

use geopoi_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::{Config, ModelConfig};
use crate::embedder::{PoiEmbeddingTable, TABLE};
use crate::error::{Error, Result};
use crate::gcim::Gcim;
use crate::nn::{attention, init_layer_norm, init_linear, layer_norm, linear, xavier_std};
use crate::pam::Pam;
use crate::recommender::prompt::{prompt_len, PromptSequence};

pub const PREFIX: &str = "rec.";
const TOKENS: &str = "rec.tokens";
const POSITIONS: &str = "rec.positions";
const POI_TOKENS: &str = "rec.poi_tokens";
const HEAD: &str = "rec.head";
const LN_F: &str = "rec.ln_f";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_gcim: bool,
    pub no_fourier: bool,
    pub no_pam: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_gcim: false,
        no_fourier: false,
        no_pam: false,
    };

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.no_gcim {
            parts.push("no_gcim");
        }
        if self.no_fourier {
            parts.push("no_fourier");
        }
        if self.no_pam {
            parts.push("no_pam");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    /// Parameter-name prefixes present in a model with these flags.
    pub fn modules(&self) -> Vec<&'static str> {
        let mut m = Vec::new();
        if !self.no_gcim {
            m.push(crate::gcim::PREFIX);
        }
        if !self.no_pam {
            m.push(crate::pam::PREFIX);
            m.push(crate::embedder::PREFIX);
        }
        m.push(PREFIX);
        m
    }
}

/// Shapes and module wiring; the weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub gcim: Gcim,
    pub pam: Pam,
    pub token_count: usize,
    pub num_pois: usize,
}

fn block(b: usize, part: &str) -> String {
    format!("rec.block{b}.{part}")
}

impl Surrogate {
    pub fn new(config: &Config, ablation: Ablation, token_count: usize, num_pois: usize, emb_dim: usize) -> Result<Self> {
        if num_pois == 0 {
            return Err(Error::Empty("POI vocabulary"));
        }
        let mut gcim_cfg = config.gcim.clone();
        gcim_cfg.output_dim = config.model.dim;
        Ok(Self {
            model: config.model.clone(),
            ablation,
            gcim: Gcim::new(gcim_cfg)?,
            pam: Pam::new(emb_dim, config.model.dim),
            token_count,
            num_pois,
        })
    }

    pub fn max_len(&self) -> usize {
        prompt_len(self.model.prefix_len)
    }

    /// Creates every parameter the variant reads. Each module draws from its
    /// own stream so shared modules start identical across variants.
    pub fn init_params(&self, store: &mut ParamStore, embeddings: Option<&PoiEmbeddingTable>, seed: u64) -> Result<()> {
        let d = self.model.dim;
        let mut rng = stream(seed, 1);
        store.insert(TOKENS, Tensor::randn(vec![self.token_count, d], 1.0 / (d as f64).sqrt(), &mut rng));
        store.insert(POSITIONS, Tensor::randn(vec![self.max_len(), d], 0.02, &mut rng));
        let mut rng = stream(seed, 2);
        for b in 0..self.model.blocks {
            init_layer_norm(store, &block(b, "ln1"), d);
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                store.insert(
                    block(b, &format!("attn.{w}")),
                    Tensor::randn(vec![d, d], xavier_std(d, d), &mut rng),
                );
            }
            init_layer_norm(store, &block(b, "ln2"), d);
            init_linear(store, &block(b, "ff1"), d, d * self.model.ff_mult, &mut rng);
            init_linear(store, &block(b, "ff2"), d * self.model.ff_mult, d, &mut rng);
        }
        init_layer_norm(store, LN_F, d);
        let mut rng = stream(seed, 3);
        init_linear(store, HEAD, d, self.num_pois, &mut rng);
        if !self.ablation.no_gcim {
            self.gcim.init_params(store, &mut stream(seed, 4));
        }
        if self.ablation.no_pam {
            let mut rng = stream(seed, 5);
            store.insert(POI_TOKENS, Tensor::randn(vec![self.num_pois, d], 1.0 / (d as f64).sqrt(), &mut rng));
        } else {
            let table = embeddings.ok_or_else(|| Error::Config("PAM needs a POI embedding table".into()))?;
            self.check_table(table)?;
            store.insert_frozen(TABLE, table.matrix.clone());
            self.pam.init_params(store, &mut stream(seed, 6));
        }
        Ok(())
    }

    fn check_table(&self, table: &PoiEmbeddingTable) -> Result<()> {
        if table.num_pois() != self.num_pois || table.dim() != self.pam.input_dim {
            return Err(Error::SlotMismatch(format!(
                "embedding table is {}x{}, model expects {}x{}",
                table.num_pois(),
                table.dim(),
                self.num_pois,
                self.pam.input_dim
            )));
        }
        Ok(())
    }

    fn check_seq(&self, seq: &PromptSequence) -> Result<()> {
        let k = seq.num_events();
        if seq.poi_slots.len() != k || seq.spatial_slots.len() != k || seq.event_coords.len() != k {
            return Err(Error::SlotMismatch(format!(
                "{} events, {} POI slots, {} spatial slots",
                k,
                seq.poi_slots.len(),
                seq.spatial_slots.len()
            )));
        }
        if seq.len() > self.max_len() {
            return Err(Error::SlotMismatch(format!(
                "prompt of {} tokens exceeds {}",
                seq.len(),
                self.max_len()
            )));
        }
        if let Some(&t) = seq.tokens.iter().find(|&&t| t >= self.token_count) {
            return Err(Error::SlotMismatch(format!("token {t} outside vocabulary")));
        }
        if let Some(&p) = seq.event_pois.iter().find(|&&p| p >= self.num_pois) {
            return Err(Error::SlotMismatch(format!("POI {p} outside vocabulary")));
        }
        Ok(())
    }

    /// Input embeddings of all prompts stacked row-wise, with slots filled and
    /// positions added. Returns the stacked matrix and each prompt's row range.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, seqs: &[&PromptSequence]) -> Result<(Var, Vec<(usize, usize)>)> {
        if seqs.is_empty() {
            return Err(Error::Empty("prompt batch"));
        }
        let mut ranges = Vec::with_capacity(seqs.len());
        let mut all_tokens = Vec::new();
        let mut positions = Vec::new();
        let mut gps_rows = Vec::new();
        let mut gps_coords = Vec::new();
        let mut poi_rows = Vec::new();
        let mut poi_ids = Vec::new();
        for seq in seqs {
            self.check_seq(seq)?;
            let start = all_tokens.len();
            all_tokens.extend_from_slice(&seq.tokens);
            positions.extend(0..seq.len());
            gps_rows.extend(seq.spatial_slots.iter().map(|s| start + s));
            gps_coords.extend_from_slice(&seq.event_coords);
            poi_rows.extend(seq.poi_slots.iter().map(|s| start + s));
            poi_ids.extend_from_slice(&seq.event_pois);
            ranges.push((start, all_tokens.len()));
        }
        let table = g.param(store, TOKENS)?;
        let mut x = g.gather_rows(table, &all_tokens)?;

        if !self.ablation.no_gcim && !gps_rows.is_empty() {
            let (uniq, map) = dedup_coords(&gps_coords);
            let encoded = self.gcim.encode_batch(g, store, &uniq, !self.ablation.no_fourier)?;
            let rows = g.gather_rows(encoded, &map)?;
            x = g.replace_rows(x, &gps_rows, rows)?;
        }
        if !poi_rows.is_empty() {
            let rows = if self.ablation.no_pam {
                let t = g.param(store, POI_TOKENS)?;
                g.gather_rows(t, &poi_ids)?
            } else {
                let (uniq, map) = dedup(&poi_ids);
                let t = g.param(store, TABLE)?;
                let e = g.gather_rows(t, &uniq)?;
                let aligned = self.pam.align_rows(g, store, e)?;
                g.gather_rows(aligned, &map)?
            };
            x = g.replace_rows(x, &poi_rows, rows)?;
        } else if self.ablation.no_pam {
            g.param(store, POI_TOKENS)?;
        }
        let pos_table = g.param(store, POSITIONS)?;
        let pos = g.gather_rows(pos_table, &positions)?;
        x = g.add(x, pos)?;
        Ok((x, ranges))
    }

    /// Pre-norm blocks and the final layer norm over stacked prompts; attention
    /// stays within each prompt's row range and is causal.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, mut x: Var, ranges: &[(usize, usize)]) -> Result<Var> {
        for b in 0..self.model.blocks {
            let h = layer_norm(g, store, &block(b, "ln1"), x)?;
            let wq = g.param(store, &block(b, "attn.w_q"))?;
            let wk = g.param(store, &block(b, "attn.w_k"))?;
            let wv = g.param(store, &block(b, "attn.w_v"))?;
            let wo = g.param(store, &block(b, "attn.w_o"))?;
            let q = g.matmul_t(h, wq)?;
            let k = g.matmul_t(h, wk)?;
            let v = g.matmul_t(h, wv)?;
            let mut outs = Vec::with_capacity(ranges.len());
            for &(s, e) in ranges {
                let qi = g.slice_rows(q, s, e)?;
                let ki = g.slice_rows(k, s, e)?;
                let vi = g.slice_rows(v, s, e)?;
                outs.push(attention(g, qi, ki, vi, true)?);
            }
            let att = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 0)? };
            let att = g.matmul_t(att, wo)?;
            x = g.add(x, att)?;
            let h = layer_norm(g, store, &block(b, "ln2"), x)?;
            let f = linear(g, store, &block(b, "ff1"), h)?;
            let f = g.relu(f);
            let f = linear(g, store, &block(b, "ff2"), f)?;
            x = g.add(x, f)?;
        }
        layer_norm(g, store, LN_F, x)
    }

    /// `B × |POI|` logits read at each prompt's final (query) position.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, seqs: &[&PromptSequence]) -> Result<Var> {
        let (x, ranges) = self.embed(g, store, seqs)?;
        let h = self.encode(g, store, x, &ranges)?;
        let last: Vec<usize> = ranges.iter().map(|&(_, e)| e - 1).collect();
        let h = g.gather_rows(h, &last)?;
        linear(g, store, HEAD, h)
    }

    /// Mean cross-entropy of the batch against its targets.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, seqs: &[&PromptSequence]) -> Result<Var> {
        let targets = seqs
            .iter()
            .map(|s| s.target.ok_or(Error::Config("training prompt without a target".into())))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.logits(g, store, seqs)?;
        Ok(g.cross_entropy_logits(logits, &targets)?)
    }

    /// Head applied at every position of one prompt, optionally adding
    /// `delta` to the input embedding row `pos`. Returns `T × |POI|`.
    pub fn position_logits(&self, store: &ParamStore, seq: &PromptSequence, perturb: Option<(usize, &[f64])>) -> Result<Tensor> {
        let mut g = Graph::new();
        let (mut x, ranges) = self.embed(&mut g, store, &[seq])?;
        if let Some((pos, delta)) = perturb {
            let d = self.model.dim;
            if pos >= seq.len() || delta.len() != d {
                return Err(Error::SlotMismatch(format!("perturbation at {pos} of width {}", delta.len())));
            }
            let mut data = vec![0.0; seq.len() * d];
            data[pos * d..(pos + 1) * d].copy_from_slice(delta);
            let c = g.constant(Tensor::matrix(seq.len(), d, data)?);
            x = g.add(x, c)?;
        }
        let h = self.encode(&mut g, store, x, &ranges)?;
        let out = linear(&mut g, store, HEAD, h)?;
        Ok(g.value(out).clone())
    }
}

fn stream(seed: u64, module: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(module);
    let _: u64 = rng.random();
    rng
}

fn dedup(ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut uniq = Vec::new();
    let map = ids
        .iter()
        .map(|&id| {
            *index.entry(id).or_insert_with(|| {
                uniq.push(id);
                uniq.len() - 1
            })
        })
        .collect();
    (uniq, map)
}

fn dedup_coords(coords: &[(f64, f64)]) -> (Vec<(f64, f64)>, Vec<usize>) {
    let keys: Vec<(u64, u64)> = coords.iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect();
    let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut uniq = Vec::new();
    let map = keys
        .iter()
        .zip(coords)
        .map(|(k, &c)| {
            *index.entry(*k).or_insert_with(|| {
                uniq.push(c);
                uniq.len() - 1
            })
        })
        .collect();
    (uniq, map)
}

/// POI indices by descending score; ties go to the lower index.
pub fn rank(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_ties_and_shift() {
        let mut l = vec![0.0; 10];
        l[7] = 2.0;
        l[3] = 2.0;
        let r = rank(&l);
        assert_eq!(&r[..2], &[3, 7]);
        let shifted: Vec<f64> = l.iter().map(|v| v + 5.0).collect();
        assert_eq!(rank(&shifted), r);
    }

    #[test]
    fn dedup_maps_back() {
        let (u, m) = dedup(&[4, 2, 4, 9, 2]);
        assert_eq!(u, vec![4, 2, 9]);
        assert_eq!(m, vec![0, 1, 0, 2, 1]);
    }
}
