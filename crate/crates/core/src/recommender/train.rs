use geopoi_autodiff::{Adam, Graph, ParamStore};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::embedder::PoiEmbeddingTable;
use crate::error::{Error, Result};
use crate::ingest::{CheckIn, DatasetSplit, Part, Vocab};
use crate::recommender::model::{rank, Ablation, Surrogate};
use crate::recommender::prompt::{build_prompt, PromptSequence, TokenVocab};

const EVAL_BATCH: usize = 64;
const SHUFFLE_STREAM: u64 = 0x5eed;

/// A surrogate together with everything needed to build its prompts.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: Config,
    pub ablation: Ablation,
    pub vocab: Vocab,
    pub tokens: TokenVocab,
    pub surrogate: Surrogate,
    pub store: ParamStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainedModel {
    /// Fresh parameters for `vocab`. `embeddings` is required unless the
    /// variant drops PAM.
    pub fn init(config: &Config, ablation: Ablation, vocab: &Vocab, embeddings: Option<&PoiEmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let tokens = TokenVocab::new(vocab);
        let emb_dim = embeddings.map(|e| e.dim()).unwrap_or(config.embed.dim);
        let surrogate = Surrogate::new(config, ablation, tokens.len(), vocab.num_pois(), emb_dim)?;
        let mut store = ParamStore::new();
        surrogate.init_params(&mut store, embeddings, config.seed)?;
        Ok(Self {
            config: config.clone(),
            ablation,
            vocab: vocab.clone(),
            tokens,
            surrogate,
            store,
        })
    }

    pub fn prompt(&self, prefix: &[CheckIn], target: Option<&CheckIn>) -> Result<PromptSequence> {
        build_prompt(prefix, target, &self.tokens, &self.vocab, self.config.model.prefix_len)
    }

    /// Prompts for one part of a split, in sample order.
    pub fn prompts(&self, split: &DatasetSplit, part: Part) -> Result<Vec<PromptSequence>> {
        split
            .samples(part)
            .iter()
            .map(|s| self.prompt(split.prefix(s), Some(split.target(s))))
            .collect()
    }

    /// Logits for each prompt, computed in fixed-size batches.
    pub fn logits(&self, seqs: &[PromptSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_BATCH) {
            let refs: Vec<&PromptSequence> = chunk.iter().collect();
            let mut g = Graph::new();
            let l = self.surrogate.logits(&mut g, &self.store, &refs)?;
            let p = self.surrogate.num_pois;
            out.extend(g.value(l).data().chunks(p).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Full POI ranking for one prompt.
    pub fn predict(&self, seq: &PromptSequence) -> Result<Vec<usize>> {
        let l = self.logits(std::slice::from_ref(seq))?;
        Ok(rank(&l[0]))
    }

    pub fn top1(&self, seqs: &[PromptSequence]) -> Result<Vec<usize>> {
        Ok(self.logits(seqs)?.iter().map(|l| rank(l)[0]).collect())
    }

    pub fn accuracy(&self, seqs: &[PromptSequence]) -> Result<f64> {
        if seqs.is_empty() {
            return Err(Error::Empty("evaluation prompts"));
        }
        let top = self.top1(seqs)?;
        let hits = top.iter().zip(seqs).filter(|(p, s)| Some(**p) == s.target).count();
        Ok(hits as f64 / seqs.len() as f64)
    }
}

/// Initializes a model for `split` and fits it.
pub fn train(split: &DatasetSplit, config: &Config, ablation: Ablation, embeddings: Option<&PoiEmbeddingTable>) -> Result<TrainOutcome> {
    let model = TrainedModel::init(config, ablation, &split.vocab, embeddings)?;
    fit(model, split)
}

/// Adam on the training prompts with early stopping on validation Acc@1.
/// Shuffling depends only on the seed, so every variant sees the same order.
/// Frozen parameters stay fixed.
pub fn fit(mut model: TrainedModel, split: &DatasetSplit) -> Result<TrainOutcome> {
    let train = model.prompts(split, Part::Train)?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let val = model.prompts(split, Part::Val)?;
    let cfg = model.config.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&PromptSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let loss = model.surrogate.loss(&mut g, &model.store, &refs)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Config(format!("training diverged at epoch {epoch}")));
            }
            total += value;
            batches += 1;
            let grads = g.backward(loss)?.into_params();
            adam.step(&mut model.store, grads)?;
        }
        let train_loss = total / batches as f64;
        let val_acc = if val.is_empty() { None } else { Some(model.accuracy(&val)?) };
        info!(
            "{} epoch {epoch}: loss {train_loss:.4}, val acc {}",
            model.ablation.name(),
            val_acc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            val_acc,
        });
        let Some(acc) = val_acc else {
            best = Some((0.0, epoch, model.store.clone()));
            continue;
        };
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, store)) => {
            model.store = store;
            e
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
