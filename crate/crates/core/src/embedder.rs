//! POI transition embeddings: skip-gram with negative sampling over
//! consecutive check-ins, plus import/export so tables from other sequential
//! models can be used instead.

use std::fs;
use std::path::{Path, PathBuf};

use geopoi_autodiff::{read_checkpoint, write_checkpoint, Adam, Graph, ParamStore, Tensor};
use log::{debug, info};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::EmbedConfig;
use crate::error::{Error, Result};
use crate::ingest::{DatasetSplit, Trajectory, Vocab};

pub const PREFIX: &str = "poiemb.";
pub const TABLE: &str = "poiemb.table";

const CENTER: &str = "sgns.center";
const CONTEXT: &str = "sgns.context";

/// One row per POI vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct PoiEmbeddingTable {
    pub matrix: Tensor,
}

impl PoiEmbeddingTable {
    pub fn new(matrix: Tensor) -> Result<Self> {
        matrix.dims2("poi embeddings")?;
        if !matrix.is_finite() {
            return Err(Error::Config("POI embedding table has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn num_pois(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row_slice(i)
    }

    /// Writes `embeddings.index`, `embeddings.bin` (tensor `poiemb.table`) and
    /// `pois.txt` (one POI id per row, in row order) into `dir`.
    pub fn save(&self, dir: &Path, vocab: &Vocab) -> Result<()> {
        if vocab.num_pois() != self.num_pois() {
            return Err(Error::VocabMismatch(format!(
                "{} rows for {} POIs",
                self.num_pois(),
                vocab.num_pois()
            )));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut store = ParamStore::new();
        store.insert(TABLE, self.matrix.clone());
        write_checkpoint(&store, &dir.join("embeddings.index"), &dir.join("embeddings.bin"))?;
        let ids: String = vocab.pois.iter().map(|p| format!("{}\n", p.id)).collect();
        let p = dir.join("pois.txt");
        fs::write(&p, ids).map_err(|e| Error::io(&p, e))
    }

    /// Reads a table written by [`save`](Self::save) (or produced externally
    /// in the same layout) and reorders its rows to match `vocab`. Every
    /// vocabulary POI must be present; rows are used as-is.
    pub fn load(dir: &Path, vocab: &Vocab) -> Result<Self> {
        let store = read_checkpoint(&dir.join("embeddings.index"), &dir.join("embeddings.bin"))?;
        let table = store.value(TABLE)?;
        let (rows, dim) = table.dims2("poi embeddings")?;
        let p = dir.join("pois.txt");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let ids: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if ids.len() != rows {
            return Err(Error::VocabMismatch(format!("{} ids for {rows} rows", ids.len())));
        }
        let by_id: std::collections::HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut data = Vec::with_capacity(vocab.num_pois() * dim);
        let mut missing = Vec::new();
        for poi in &vocab.pois {
            match by_id.get(poi.id.as_str()) {
                Some(&r) => data.extend_from_slice(table.row_slice(r)),
                None => missing.push(poi.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::VocabMismatch(format!(
                "no embedding for {} POIs: {}",
                missing.len(),
                missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        Self::new(Tensor::matrix(vocab.num_pois(), dim, data)?)
    }
}

/// Within-session pairs at distance `1..=window`, both orientations, as POI
/// indices. Pass training trajectories only.
pub fn extract_transition_pairs(trajectories: &[Trajectory], vocab: &Vocab, window: usize) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for t in trajectories {
        for session in t.sessions() {
            let idx = session
                .iter()
                .map(|e| vocab.poi(&e.poi_id).ok_or_else(|| Error::UnknownPoi(e.poi_id.clone())))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..idx.len() {
                for j in (i + 1)..idx.len().min(i + window + 1) {
                    pairs.push((idx[i], idx[j]));
                    pairs.push((idx[j], idx[i]));
                }
            }
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug)]
pub struct SkipGramRun {
    pub table: PoiEmbeddingTable,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Skip-gram with `k` negatives per positive pair, drawn from the context
/// unigram distribution raised to 0.75. Deterministic for a fixed seed.
pub fn train_embeddings(pairs: &[(usize, usize)], num_pois: usize, cfg: &EmbedConfig, seed: u64) -> Result<SkipGramRun> {
    if pairs.is_empty() {
        return Err(Error::Empty("transition pairs"));
    }
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= num_pois || *b >= num_pois) {
        return Err(Error::Config(format!("pair ({a}, {b}) outside {num_pois} POIs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.dim;
    let mut store = ParamStore::new();
    store.insert(CENTER, Tensor::uniform(vec![num_pois, d], 0.5 / d as f64, &mut rng));
    store.insert(CONTEXT, Tensor::zeros(vec![num_pois, d]));

    let mut counts = vec![0.0f64; num_pois];
    for &(_, c) in pairs {
        counts[c] += 1.0;
    }
    let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("noise distribution: {e}")))?;

    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let k = cfg.negatives;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let centers: Vec<usize> = chunk.iter().map(|&i| pairs[i].0).collect();
            let contexts: Vec<usize> = chunk.iter().map(|&i| pairs[i].1).collect();
            let neg_centers: Vec<usize> = centers.iter().flat_map(|&c| std::iter::repeat_n(c, k)).collect();
            let negatives: Vec<usize> = (0..neg_centers.len()).map(|_| noise.sample(&mut rng)).collect();

            let mut g = Graph::new();
            let center = g.param(&store, CENTER)?;
            let context = g.param(&store, CONTEXT)?;
            let u = g.gather_rows(center, &centers)?;
            let v = g.gather_rows(context, &contexts)?;
            let uv = g.mul(u, v)?;
            let pos_logit = g.sum_cols(uv)?;
            let pos = g.log_sigmoid(pos_logit);
            let mut objective = g.sum(pos);
            if k > 0 {
                let un = g.gather_rows(center, &neg_centers)?;
                let vn = g.gather_rows(context, &negatives)?;
                let unvn = g.mul(un, vn)?;
                let neg_logit = g.sum_cols(unvn)?;
                let flipped = g.scale(neg_logit, -1.0);
                let neg = g.log_sigmoid(flipped);
                let neg_sum = g.sum(neg);
                objective = g.add(objective, neg_sum)?;
            }
            let loss = g.scale(objective, -1.0 / chunk.len() as f64);
            total += g.value(loss).item()?;
            batches += 1;
            let grads = g.backward(loss)?.into_params();
            adam.step(&mut store, grads)?;
        }
        let mean = total / batches as f64;
        debug!("skip-gram epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }
    let table = PoiEmbeddingTable::new(store.value(CENTER)?.clone())?;
    Ok(SkipGramRun { table, epoch_losses })
}

/// Where the frozen POI embeddings come from.
pub trait EmbeddingSource {
    fn embeddings(&self, split: &DatasetSplit) -> Result<PoiEmbeddingTable>;
}

/// Trains skip-gram embeddings on the split's training trajectories.
#[derive(Clone, Debug)]
pub struct SkipGramSource {
    pub config: EmbedConfig,
    pub seed: u64,
}

impl EmbeddingSource for SkipGramSource {
    fn embeddings(&self, split: &DatasetSplit) -> Result<PoiEmbeddingTable> {
        let pairs = extract_transition_pairs(&split.train_trajectories(), &split.vocab, self.config.window)?;
        info!("skip-gram on {} transition pairs over {} POIs", pairs.len(), split.vocab.num_pois());
        Ok(train_embeddings(&pairs, split.vocab.num_pois(), &self.config, self.seed)?.table)
    }
}

/// A table exported by another model, laid out as in [`PoiEmbeddingTable::save`].
#[derive(Clone, Debug)]
pub struct ExternalTable {
    pub dir: PathBuf,
}

impl EmbeddingSource for ExternalTable {
    fn embeddings(&self, split: &DatasetSplit) -> Result<PoiEmbeddingTable> {
        PoiEmbeddingTable::load(&self.dir, &split.vocab)
    }
}
