use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use geopoi_core::embedder::{EmbeddingSource, ExternalTable, PoiEmbeddingTable, SkipGramSource};
use geopoi_core::eval::protocols::cross_city_csv;
use geopoi_core::eval::{cross_city, evaluate, run_ablations, ReportKind};
use geopoi_core::geo::{ngrams, project, quadkey};
use geopoi_core::ingest::{parse_checkins, DatasetSplit, InputFormat};
use geopoi_core::recommender::{load_model, save_model, train, Ablation};
use geopoi_core::Config;

#[derive(Parser)]
#[command(name = "geopoi", version, about = "Next-POI recommendation from check-in histories")]
struct Cli {
    /// key=value settings file; unset keys keep their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides the `seed` setting
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct AblationFlags {
    #[arg(long)]
    no_gcim: bool,
    #[arg(long)]
    no_fourier: bool,
    #[arg(long)]
    no_pam: bool,
}

impl From<AblationFlags> for Ablation {
    fn from(f: AblationFlags) -> Self {
        Ablation {
            no_gcim: f.no_gcim,
            no_fourier: f.no_fourier,
            no_pam: f.no_pam,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw check-ins, drop sparse users and POIs, and write a chronological split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: InputFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train skip-gram POI embeddings, or import a table with `--embeddings`.
    EmbedTransitions {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train the recommender and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// pre-computed embedding table; skip-gram is trained when absent
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Score a checkpoint on the test split; writes metrics, CDF and per-sample files.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on each city and evaluate on every city.
    CrossCity {
        /// NAME=DIR, repeated once per city
        #[arg(long = "city", required = true, value_parser = parse_city)]
        cities: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Run every ablation variant over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print pixel position, tile, quadkey and n-grams of a coordinate.
    EncodeGps {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(long, default_value_t = 25)]
        level: u32,
        #[arg(long, default_value_t = 6)]
        ngrams: usize,
    },
    /// Render one report of a checkpoint's test evaluation.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// metrics-csv, cdf-csv or samples
        #[arg(long, default_value = "metrics-csv")]
        kind: ReportKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_city(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), dir.into())),
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_split(dir: &Path, cfg: &Config) -> Result<DatasetSplit> {
    DatasetSplit::load(dir, cfg.ingest.session_gap_hours).with_context(|| format!("loading split from {}", dir.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn embeddings_for(split: &DatasetSplit, cfg: &Config, external: Option<&Path>) -> Result<PoiEmbeddingTable> {
    Ok(match external {
        Some(dir) => ExternalTable { dir: dir.to_path_buf() }.embeddings(split)?,
        None => SkipGramSource {
            config: cfg.embed.clone(),
            seed: cfg.seed,
        }
        .embeddings(split)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { input, format, out } => {
            let parsed = parse_checkins(&input, format)?;
            info!("parsed {} check-ins, skipped {} lines", parsed.checkins.len(), parsed.skipped);
            let split = DatasetSplit::from_checkins(&parsed.checkins, &cfg.ingest);
            info!(
                "{} users, {} POIs; {} train, {} val, {} test samples",
                split.vocab.users.len(),
                split.vocab.num_pois(),
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
            split.save(&out)?;
        }
        Command::EmbedTransitions { data, out, embeddings } => {
            let split = load_split(&data, &cfg)?;
            let table = embeddings_for(&split, &cfg, embeddings.as_deref())?;
            table.save(&out, &split.vocab)?;
            info!("wrote {} x {} table to {}", table.num_pois(), table.dim(), out.display());
        }
        Command::Train {
            data,
            out,
            embeddings,
            ablation,
        } => {
            let split = load_split(&data, &cfg)?;
            let ablation = Ablation::from(ablation);
            let table = if ablation.no_pam {
                None
            } else {
                Some(embeddings_for(&split, &cfg, embeddings.as_deref())?)
            };
            let outcome = train(&split, &cfg, ablation, table.as_ref())?;
            for e in &outcome.history {
                info!("{e:?}");
            }
            save_model(&outcome.model, &out)?;
            info!("kept epoch {}; checkpoint in {}", outcome.best_epoch, out.display());
        }
        Command::Evaluate { model, data, out } => {
            let model = load_model(&model)?;
            let split = load_split(&data, &model.config)?;
            let report = evaluate(&model, &split)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                report.export(&dir.join("metrics.csv"), ReportKind::MetricsCsv)?;
                report.export(&dir.join("cdf.csv"), ReportKind::CdfCsv)?;
                report.export(&dir.join("samples.csv"), ReportKind::Samples)?;
            }
            print!("{}", report.metrics_csv());
        }
        Command::CrossCity { cities, out, ablation } => {
            let splits = cities
                .into_iter()
                .map(|(name, dir)| Ok((name, load_split(&dir, &cfg)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = cross_city(&splits, &cfg, ablation.into())?;
            emit(&cross_city_csv(&rows), out.as_deref())?;
        }
        Command::Ablate { data, seeds, out } => {
            let split = load_split(&data, &cfg)?;
            let table = run_ablations(&split, &cfg, &seeds)?;
            emit(&table.to_csv(), out.as_deref())?;
        }
        Command::EncodeGps { lat, lon, level, ngrams: n } => {
            if n == 0 {
                bail!("--ngrams must be at least 1");
            }
            let pos = project(lat, lon, level)?;
            let key = quadkey(&pos);
            let grams = ngrams(&key, n);
            println!("pixel\t{}\t{}", pos.x, pos.y);
            println!("tile\t{}\t{}", pos.tile_x, pos.tile_y);
            println!("quadkey\t{key}");
            println!("grams\t{}", grams.grams.join("\t"));
        }
        Command::Report { model, data, kind, out } => {
            let model = load_model(&model)?;
            let split = load_split(&data, &model.config)?;
            let report = evaluate(&model, &split)?;
            emit(&report.render(kind), out.as_deref())?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
