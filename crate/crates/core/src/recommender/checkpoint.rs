//! On-disk layout of a trained model directory:
//!
//! - `manifest.txt`: config as `key=value`, ablation flags, vocabulary hash
//!   and the parameter prefixes present
//! - `params.index`, `params.bin`: the parameter store
//! - `vocab.json`: the POI, user and category vocabularies

use std::fs;
use std::path::Path;

use geopoi_autodiff::{read_checkpoint, write_checkpoint};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::ingest::Vocab;
use crate::recommender::model::{Ablation, Surrogate};
use crate::recommender::prompt::TokenVocab;
use crate::recommender::train::TrainedModel;

const MANIFEST: &str = "manifest.txt";
const INDEX: &str = "params.index";
const BLOB: &str = "params.bin";
const VOCAB: &str = "vocab.json";
const MAGIC: &str = "# geopoi model v1";

fn manifest(model: &TrainedModel) -> String {
    let a = model.ablation;
    format!(
        "{MAGIC}\nvocab_hash={}\nno_gcim={}\nno_fourier={}\nno_pam={}\nmodules={}\n[config]\n{}",
        model.vocab.hash(),
        a.no_gcim,
        a.no_fourier,
        a.no_pam,
        a.modules().join(","),
        model.config.to_kv_string()
    )
}

pub fn save_model(model: &TrainedModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_checkpoint(&model.store, &dir.join(INDEX), &dir.join(BLOB))?;
    let p = dir.join(VOCAB);
    fs::write(&p, model.vocab.to_json()?).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(MANIFEST);
    fs::write(&p, manifest(model)).map_err(|e| Error::io(&p, e))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let (head, config_text) = text
        .split_once("[config]\n")
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing [config] section", p.display())))?;
    if !head.starts_with(MAGIC) {
        return Err(Error::Checkpoint(format!("{}: not a model manifest", p.display())));
    }
    let field = |key: &str| -> Result<&str> {
        head.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
    };
    let flag = |key: &str| -> Result<bool> {
        field(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad flag `{key}`")))
    };
    let ablation = Ablation {
        no_gcim: flag("no_gcim")?,
        no_fourier: flag("no_fourier")?,
        no_pam: flag("no_pam")?,
    };
    let config = Config::from_kv_str(config_text)?;

    let p = dir.join(VOCAB);
    let vocab = Vocab::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
    let expected = field("vocab_hash")?;
    if vocab.hash() != expected {
        return Err(Error::Checkpoint(format!(
            "vocab.json hash {} does not match manifest {expected}",
            vocab.hash()
        )));
    }
    let mut store = read_checkpoint(&dir.join(INDEX), &dir.join(BLOB))?;
    if store.contains(crate::embedder::TABLE) {
        store.set_trainable(crate::embedder::TABLE, false)?;
    }
    let emb_dim = match store.get(crate::embedder::TABLE) {
        Some(p) => p.value.dims2("poi embeddings")?.1,
        None => config.embed.dim,
    };
    let tokens = TokenVocab::new(&vocab);
    let surrogate = Surrogate::new(&config, ablation, tokens.len(), vocab.num_pois(), emb_dim)?;
    for prefix in ablation.modules() {
        if !store.names().any(|n| n.starts_with(prefix)) {
            return Err(Error::Checkpoint(format!("no parameters under `{prefix}`")));
        }
    }
    Ok(TrainedModel {
        config,
        ablation,
        vocab,
        tokens,
        surrogate,
        store,
    })
}
