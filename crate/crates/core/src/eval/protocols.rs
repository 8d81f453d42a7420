//! Experiment protocols: held-out evaluation, ablations and cross-city
//! transfer.

use std::fmt::Write as _;

use log::info;

use crate::config::Config;
use crate::embedder::{EmbeddingSource, SkipGramSource};
use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate_predictions, EvalReport, Prediction};
use crate::ingest::{DatasetSplit, Part};
use crate::recommender::{fit, train, Ablation, TrainedModel};

/// Acc@1 and error statistics of `model` on one part of `split`. The split's
/// POI vocabulary must match the model's.
pub fn evaluate_part(model: &TrainedModel, split: &DatasetSplit, part: Part) -> Result<EvalReport> {
    let diffs = model.vocab.poi_differences(&split.vocab);
    if !diffs.is_empty() {
        let shown: Vec<String> = diffs.iter().take(20).cloned().collect();
        return Err(Error::VocabMismatch(format!(
            "{} POI ids differ: {}{}",
            diffs.len(),
            shown.join(", "),
            if diffs.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    let prompts = model.prompts(split, part)?;
    let top = model.top1(&prompts)?;
    let preds = split
        .samples(part)
        .iter()
        .zip(&prompts)
        .zip(top)
        .map(|((s, p), predicted)| {
            Ok(Prediction {
                sample_id: s.id,
                target: p.target.ok_or_else(|| Error::UnknownPoi(split.target(s).poi_id.clone()))?,
                predicted,
                target_absent: p.target_absent(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(preds, &model.vocab, &model.config.fingerprint())
}

pub fn evaluate(model: &TrainedModel, split: &DatasetSplit) -> Result<EvalReport> {
    evaluate_part(model, split, Part::Test)
}

pub const VARIANTS: [(&str, Ablation); 4] = [
    ("full", Ablation::FULL),
    (
        "no_gcim",
        Ablation {
            no_gcim: true,
            no_fourier: false,
            no_pam: false,
        },
    ),
    (
        "no_fourier",
        Ablation {
            no_gcim: false,
            no_fourier: true,
            no_pam: false,
        },
    ),
    (
        "no_pam",
        Ablation {
            no_gcim: false,
            no_fourier: false,
            no_pam: true,
        },
    ),
];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub reports: Vec<EvalReport>,
}

impl AblationRow {
    pub fn accs(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.acc_at_1).collect()
    }

    pub fn mean_acc(&self) -> f64 {
        mean(&self.accs())
    }

    /// Mean over seeds of target-absent Acc@1 (target-absent denominator);
    /// seeds without target-absent samples are skipped.
    pub fn mean_target_absent_acc(&self) -> Option<f64> {
        let v: Vec<f64> = self.reports.iter().filter_map(|r| r.target_absent_acc).collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn mean_target_absent_acc_over_all(&self) -> f64 {
        mean(&self.reports.iter().map(|r| r.target_absent_acc_over_all).collect::<Vec<_>>())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// `variant,seed_<s>...,mean` for Acc@1, followed by the same layout for
    /// target-absent Acc@1 under a `target_absent` section header.
    pub fn to_csv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| format!("seed_{s}")).collect();
        let mut out = format!("variant,{},mean\n", seeds.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.accs().iter().map(|a| a.to_string()).collect();
            let _ = writeln!(out, "{},{},{}", r.variant, cells.join(","), r.mean_acc());
        }
        let _ = writeln!(out, "\ntarget_absent_variant,{},mean", seeds.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r
                .reports
                .iter()
                .map(|x| x.target_absent_acc.map(|a| a.to_string()).unwrap_or_default())
                .collect();
            let m = r.mean_target_absent_acc().map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{m}", r.variant, cells.join(","));
        }
        out
    }
}

/// Trains each listed variant once per seed on the same split and evaluates
/// on the test part. The POI embeddings for a seed are shared by all
/// variants, and training order depends only on the seed.
pub fn run_variants(split: &DatasetSplit, config: &Config, seeds: &[u64], variants: &[(&str, Ablation)]) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut rows: Vec<AblationRow> = variants
        .iter()
        .map(|(name, a)| AblationRow {
            variant: name.to_string(),
            ablation: *a,
            reports: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let needs_table = variants.iter().any(|(_, a)| !a.no_pam);
        let table = if needs_table {
            Some(SkipGramSource { config: cfg.embed.clone(), seed }.embeddings(split)?)
        } else {
            None
        };
        for row in rows.iter_mut() {
            let outcome = train(split, &cfg, row.ablation, table.as_ref())?;
            let report = evaluate(&outcome.model, split)?;
            info!("seed {seed} {}: acc@1 {:.4}", row.variant, report.acc_at_1);
            row.reports.push(report);
        }
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

/// All four variants: full, no_gcim, no_fourier, no_pam.
pub fn run_ablations(split: &DatasetSplit, config: &Config, seeds: &[u64]) -> Result<AblationTable> {
    run_variants(split, config, seeds, &VARIANTS)
}

pub const TRANSFER_FROZEN: [&str; 2] = ["gcim.", "rec.block"];
const TRANSFER_COPIED: [&str; 2] = ["rec.ln_f.", "rec.positions"];

/// Moves the geographic and sequence machinery of `source` into a fresh
/// model for `target`: GCIM and attention blocks are copied and frozen; the
/// final norm, positions and the shared token rows (template words, time
/// buckets, and categories with the same name) are copied and stay
/// trainable. The head, PAM projector and user tokens start fresh.
pub fn transfer(source: &TrainedModel, target: &DatasetSplit, config: &Config) -> Result<TrainedModel> {
    let table = if source.ablation.no_pam {
        None
    } else {
        Some(SkipGramSource { config: config.embed.clone(), seed: config.seed }.embeddings(target)?)
    };
    let mut model = TrainedModel::init(config, source.ablation, &target.vocab, table.as_ref())?;
    for (name, p) in source.store.iter() {
        let frozen = TRANSFER_FROZEN.iter().any(|f| name.starts_with(f));
        let copied = TRANSFER_COPIED.iter().any(|f| name.starts_with(f));
        if !(frozen || copied) {
            continue;
        }
        let dst = model.store.value_mut(name)?;
        if dst.shape() != p.value.shape() {
            return Err(Error::SlotMismatch(format!(
                "{name}: {:?} in source, {:?} in target",
                p.value.shape(),
                dst.shape()
            )));
        }
        *dst = p.value.clone();
        if frozen {
            model.store.set_trainable(name, false)?;
        }
    }
    copy_shared_token_rows(source, &mut model)?;
    Ok(model)
}

fn copy_shared_token_rows(source: &TrainedModel, model: &mut TrainedModel) -> Result<()> {
    const TOKENS: &str = "rec.tokens";
    let src = source.store.value(TOKENS)?.clone();
    let d = src.shape()[1];
    let shared = model.tokens.first_user_token();
    let mut pairs: Vec<(usize, usize)> = (0..shared).map(|i| (i, i)).collect();
    for c in &model.tokens.categories {
        let from = source.tokens.category_token(c);
        if from >= shared {
            pairs.push((from, model.tokens.category_token(c)));
        }
    }
    let dst = model.store.value_mut(TOKENS)?;
    for (from, to) in pairs {
        let row = src.row_slice(from).to_vec();
        dst.data_mut()[to * d..(to + 1) * d].copy_from_slice(&row);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CrossCityRow {
    pub train_city: String,
    pub eval_city: String,
    pub report: EvalReport,
}

/// One row per ordered (train city, eval city) pair. The diagonal is plain
/// in-city training; off-diagonal rows fine-tune a transferred model on the
/// evaluation city's training split.
pub fn cross_city(cities: &[(String, DatasetSplit)], config: &Config, ablation: Ablation) -> Result<Vec<CrossCityRow>> {
    let mut sources = Vec::with_capacity(cities.len());
    for (name, split) in cities {
        let table = if ablation.no_pam {
            None
        } else {
            Some(SkipGramSource { config: config.embed.clone(), seed: config.seed }.embeddings(split)?)
        };
        info!("training on {name}");
        sources.push(train(split, config, ablation, table.as_ref())?.model);
    }
    let mut rows = Vec::new();
    for (a, (train_city, _)) in cities.iter().enumerate() {
        for (b, (eval_city, split)) in cities.iter().enumerate() {
            let report = if a == b {
                evaluate(&sources[a], split)?
            } else {
                let model = fit(transfer(&sources[a], split, config)?, split)?.model;
                evaluate(&model, split)?
            };
            info!("{train_city} -> {eval_city}: acc@1 {:.4}", report.acc_at_1);
            rows.push(CrossCityRow {
                train_city: train_city.clone(),
                eval_city: eval_city.clone(),
                report,
            });
        }
    }
    Ok(rows)
}

pub fn cross_city_csv(rows: &[CrossCityRow]) -> String {
    let mut out = String::from("train_city,eval_city,acc_at_1,target_absent_acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.train_city,
            r.eval_city,
            r.report.acc_at_1,
            r.report.target_absent_acc.map(|a| a.to_string()).unwrap_or_default()
        );
    }
    out
}
