#![allow(dead_code)]

use chrono::{DateTime, Utc};
use geopoi_core::config::Config;
use geopoi_core::embedder::PoiEmbeddingTable;
use geopoi_core::ingest::{CheckIn, DatasetSplit, Vocab};
use geopoi_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn ts(h: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200 + h * 3600, 0).unwrap()
}

pub fn checkin(user: &str, poi: usize, h: i64) -> CheckIn {
    CheckIn {
        user_id: user.into(),
        poi_id: format!("p{poi}"),
        category: format!("cat{}", poi % 2),
        timestamp: ts(h),
        lat: 40.70 + 0.011 * poi as f64,
        lon: -74.00 + 0.007 * poi as f64,
    }
}

/// Small widths so finite differences stay fast.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    for (k, v) in [
        ("model_dim", "8"),
        ("gram_dim", "4"),
        ("key_dim", "4"),
        ("fourier_dim", "4"),
        ("emb_dim", "3"),
        ("prefix_len", "4"),
        ("ff_mult", "2"),
        ("min_count", "1"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

/// Five POIs visited round-robin by two users.
pub fn tiny_split() -> DatasetSplit {
    let mut rows = Vec::new();
    for (u, start) in [("a", 0), ("b", 2)] {
        for h in 0..8 {
            rows.push(checkin(u, (start + h as usize) % 5, h));
        }
    }
    let cfg = tiny_config();
    DatasetSplit::from_checkins(&rows, &cfg.ingest)
}

pub fn random_table(vocab: &Vocab, dim: usize, seed: u64) -> PoiEmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PoiEmbeddingTable::new(Tensor::randn(vec![vocab.num_pois(), dim], 1.0, &mut rng)).unwrap()
}
