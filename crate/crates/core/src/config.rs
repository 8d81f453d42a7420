//! Run configuration. Every tunable has a default and can be overridden from
//! a plain `key=value` text file (`#` starts a comment).

use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub min_count: usize,
    pub session_gap_hours: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_count: 10,
            session_gap_hours: 24.0,
            train_ratio: 0.8,
            val_ratio: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcimConfig {
    /// Quadkey length `L`.
    pub level: u32,
    /// Gram width `n`.
    pub ngram: usize,
    pub gram_dim: usize,
    pub key_dim: usize,
    /// Fourier feature size `M` (even).
    pub fourier_dim: usize,
    /// Kernel width `γ`; the frequency matrix starts as `N(0, γ⁻²)`.
    pub fourier_gamma: f64,
    /// Feed digits as `s/3` instead of raw `0..=3`.
    pub rescale_digits: bool,
    /// Output size `D`; kept equal to the sequence model's width.
    pub output_dim: usize,
}

impl Default for GcimConfig {
    fn default() -> Self {
        Self {
            level: 25,
            ngram: 3,
            gram_dim: 64,
            key_dim: 64,
            fourier_dim: 64,
            fourier_gamma: 1.0,
            rescale_digits: false,
            output_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub window: usize,
    pub batch_size: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            negatives: 5,
            epochs: 10,
            lr: 0.01,
            window: 1,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    /// Most recent check-ins kept in a prompt (`K`).
    pub prefix_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            blocks: 2,
            ff_mult: 4,
            prefix_len: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub ingest: IngestConfig,
    pub gcim: GcimConfig,
    pub embed: EmbedConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        impl Config {
            /// Every accepted key, in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse::<$ty>(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                self.gcim.output_dim = self.model.dim;
                Ok(())
            }

            /// `key=value` lines for every setting.
            pub fn to_kv_string(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{}={}\n", $key, self.$($field).+));)*
                out
            }
        }
    };
}

config_keys! {
    "min_count" => ingest.min_count: usize,
    "session_gap_hours" => ingest.session_gap_hours: f64,
    "train_ratio" => ingest.train_ratio: f64,
    "val_ratio" => ingest.val_ratio: f64,
    "level" => gcim.level: u32,
    "ngram" => gcim.ngram: usize,
    "gram_dim" => gcim.gram_dim: usize,
    "key_dim" => gcim.key_dim: usize,
    "fourier_dim" => gcim.fourier_dim: usize,
    "fourier_gamma" => gcim.fourier_gamma: f64,
    "rescale_digits" => gcim.rescale_digits: bool,
    "emb_dim" => embed.dim: usize,
    "emb_negatives" => embed.negatives: usize,
    "emb_epochs" => embed.epochs: usize,
    "emb_lr" => embed.lr: f64,
    "emb_window" => embed.window: usize,
    "emb_batch_size" => embed.batch_size: usize,
    "model_dim" => model.dim: usize,
    "blocks" => model.blocks: usize,
    "ff_mult" => model.ff_mult: usize,
    "prefix_len" => model.prefix_len: usize,
    "lr" => train.lr: f64,
    "batch_size" => train.batch_size: usize,
    "max_epochs" => train.max_epochs: usize,
    "patience" => train.patience: usize,
    "seed" => seed: u64,
}

impl Config {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let g = &self.gcim;
        if !(1..=30).contains(&g.level) {
            return bad("level must be in 1..=30");
        }
        if g.ngram == 0 || g.gram_dim == 0 || g.key_dim == 0 {
            return bad("ngram, gram_dim and key_dim must be >= 1");
        }
        if g.ngram > 8 {
            return bad("ngram above 8 makes the gram table impractically large");
        }
        if g.fourier_dim < 2 || !g.fourier_dim.is_multiple_of(2) {
            return bad("fourier_dim must be even and >= 2");
        }
        if !(g.fourier_gamma > 0.0 && g.fourier_gamma.is_finite()) {
            return bad("fourier_gamma must be positive");
        }
        let m = &self.model;
        if m.dim == 0 || m.blocks == 0 || m.ff_mult == 0 || m.prefix_len == 0 {
            return bad("model_dim, blocks, ff_mult and prefix_len must be >= 1");
        }
        let e = &self.embed;
        if e.dim == 0 || e.window == 0 || e.batch_size == 0 {
            return bad("emb_dim, emb_window and emb_batch_size must be >= 1");
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            return bad("batch_size must be >= 1 and lr positive");
        }
        let i = &self.ingest;
        if i.min_count == 0 {
            return bad("min_count must be >= 1");
        }
        if i.train_ratio < 0.0 || i.val_ratio < 0.0 || i.train_ratio + i.val_ratio > 1.0 {
            return bad("train_ratio and val_ratio must be non-negative and sum to at most 1");
        }
        Ok(())
    }

    /// SHA-256 of the `key=value` rendering, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        let text = cfg.to_kv_string();
        assert_eq!(text.lines().count(), Config::KEYS.len());
        assert_eq!(Config::from_kv_str(&text).unwrap(), cfg);
        assert!(text.contains("level=25\n"));
        assert!(text.contains("prefix_len=32\n"));
    }

    #[test]
    fn overrides_comments_and_model_dim_sync() {
        let cfg = Config::from_kv_str("# desk run\nmodel_dim = 32\nfourier_gamma=2.5 # wider\n\n").unwrap();
        assert_eq!(cfg.model.dim, 32);
        assert_eq!(cfg.gcim.output_dim, 32);
        assert_eq!(cfg.gcim.fourier_gamma, 2.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::from_kv_str("nonsense=1").is_err());
        assert!(Config::from_kv_str("level=abc").is_err());
        assert!(Config::from_kv_str("fourier_dim=7").is_err());
        assert!(Config::from_kv_str("level=31").is_err());
        assert!(Config::from_kv_str("just text").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 7;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
