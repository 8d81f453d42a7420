//! Acc@1, error distances over misses, and the target-absent breakdown.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::haversine_km;
use crate::ingest::Vocab;

/// One scored test sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sample_id: usize,
    pub target: usize,
    pub predicted: usize,
    /// Target POI does not occur among the prompt's prefix events.
    pub target_absent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub prediction: Prediction,
    /// Distance between predicted and target POI; `None` on a hit.
    pub error_km: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sample_count: usize,
    pub hits: usize,
    pub acc_at_1: f64,
    /// Over incorrect predictions only.
    pub mean_error_km: Option<f64>,
    pub median_error_km: Option<f64>,
    /// `(d_i, i/m)` for the sorted miss distances `d_1 ≤ … ≤ d_m`.
    pub cdf: Vec<(f64, f64)>,
    pub target_absent_count: usize,
    pub target_absent_hits: usize,
    /// Hits among target-absent samples / target-absent samples.
    pub target_absent_acc: Option<f64>,
    /// Hits among target-absent samples / all samples.
    pub target_absent_acc_over_all: f64,
    pub config_fingerprint: String,
    pub per_sample: Vec<SampleOutcome>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Aggregates predictions into a report; samples are ordered by id.
pub fn evaluate_predictions(mut preds: Vec<Prediction>, vocab: &Vocab, config_fingerprint: &str) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Empty("test samples"));
    }
    preds.sort_by_key(|p| p.sample_id);
    let n = vocab.num_pois();
    if let Some(p) = preds.iter().find(|p| p.target >= n || p.predicted >= n) {
        return Err(Error::VocabMismatch(format!(
            "sample {} refers to POI outside the {n}-entry vocabulary",
            p.sample_id
        )));
    }
    let coord = |i: usize| (vocab.pois[i].lat, vocab.pois[i].lon);
    let per_sample: Vec<SampleOutcome> = preds
        .into_iter()
        .map(|p| {
            let error_km = (p.predicted != p.target).then(|| haversine_km(coord(p.predicted), coord(p.target)));
            SampleOutcome { prediction: p, error_km }
        })
        .collect();
    let sample_count = per_sample.len();
    let hits = per_sample.iter().filter(|s| s.error_km.is_none()).count();
    let mut errors: Vec<f64> = per_sample.iter().filter_map(|s| s.error_km).collect();
    errors.sort_by(f64::total_cmp);
    let m = errors.len();
    let mean_error_km = (m > 0).then(|| errors.iter().sum::<f64>() / m as f64);
    let cdf = errors
        .iter()
        .enumerate()
        .map(|(i, d)| (*d, (i + 1) as f64 / m as f64))
        .collect();
    let absent: Vec<&SampleOutcome> = per_sample.iter().filter(|s| s.prediction.target_absent).collect();
    let absent_hits = absent.iter().filter(|s| s.error_km.is_none()).count();
    Ok(EvalReport {
        sample_count,
        hits,
        acc_at_1: hits as f64 / sample_count as f64,
        mean_error_km,
        median_error_km: median(&errors),
        cdf,
        target_absent_count: absent.len(),
        target_absent_hits: absent_hits,
        target_absent_acc: (!absent.is_empty()).then(|| absent_hits as f64 / absent.len() as f64),
        target_absent_acc_over_all: absent_hits as f64 / sample_count as f64,
        config_fingerprint: config_fingerprint.to_string(),
        per_sample,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    MetricsCsv,
    CdfCsv,
    Samples,
}

impl std::str::FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metrics-csv" => Ok(ReportKind::MetricsCsv),
            "cdf-csv" => Ok(ReportKind::CdfCsv),
            "samples" => Ok(ReportKind::Samples),
            _ => Err(Error::Config(format!("unknown report kind `{s}`"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// `name,value` rows. Undefined statistics have an empty value.
    pub fn metrics_csv(&self) -> String {
        let rows: [(&str, String); 10] = [
            ("acc_at_1", self.acc_at_1.to_string()),
            ("sample_count", self.sample_count.to_string()),
            ("hits", self.hits.to_string()),
            ("mean_error_km", opt(self.mean_error_km)),
            ("median_error_km", opt(self.median_error_km)),
            ("target_absent_count", self.target_absent_count.to_string()),
            ("target_absent_hits", self.target_absent_hits.to_string()),
            ("target_absent_acc", opt(self.target_absent_acc)),
            ("target_absent_acc_over_all", self.target_absent_acc_over_all.to_string()),
            ("config_fingerprint", self.config_fingerprint.clone()),
        ];
        let mut out = String::from("name,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("distance_km,cumulative_fraction\n");
        for (d, f) in &self.cdf {
            let _ = writeln!(out, "{d},{f}");
        }
        out
    }

    /// Per-sample dump: `sample_id,target,predicted,target_absent,error_km`.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("sample_id,target,predicted,target_absent,error_km\n");
        for s in &self.per_sample {
            let p = &s.prediction;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                p.sample_id,
                p.target,
                p.predicted,
                p.target_absent,
                opt(s.error_km)
            );
        }
        out
    }

    pub fn render(&self, kind: ReportKind) -> String {
        match kind {
            ReportKind::MetricsCsv => self.metrics_csv(),
            ReportKind::CdfCsv => self.cdf_csv(),
            ReportKind::Samples => self.samples_csv(),
        }
    }

    pub fn export(&self, path: &Path, kind: ReportKind) -> Result<()> {
        fs::write(path, self.render(kind)).map_err(|e| Error::io(path, e))
    }
}

/// Summary fields read back from a metrics CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub acc_at_1: f64,
    pub sample_count: usize,
    pub hits: usize,
    pub mean_error_km: Option<f64>,
    pub median_error_km: Option<f64>,
    pub target_absent_count: usize,
    pub target_absent_hits: usize,
    pub target_absent_acc: Option<f64>,
    pub target_absent_acc_over_all: f64,
    pub config_fingerprint: String,
}

fn csv_rows(text: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(Error::Config(format!("expected header `{header}`"))),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(|f| f.trim().to_string()).collect()))
        .collect())
}

fn field<T: std::str::FromStr>(line: usize, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value `{v}`")))
}

fn opt_field(line: usize, v: &str) -> Result<Option<f64>> {
    if v.is_empty() {
        Ok(None)
    } else {
        field(line, v).map(Some)
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<MetricsRecord> {
    let mut r = MetricsRecord::default();
    for (line, f) in csv_rows(text, "name,value")? {
        let [k, v] = f.as_slice() else {
            return Err(Error::Config(format!("line {line}: expected name,value")));
        };
        match k.as_str() {
            "acc_at_1" => r.acc_at_1 = field(line, v)?,
            "sample_count" => r.sample_count = field(line, v)?,
            "hits" => r.hits = field(line, v)?,
            "mean_error_km" => r.mean_error_km = opt_field(line, v)?,
            "median_error_km" => r.median_error_km = opt_field(line, v)?,
            "target_absent_count" => r.target_absent_count = field(line, v)?,
            "target_absent_hits" => r.target_absent_hits = field(line, v)?,
            "target_absent_acc" => r.target_absent_acc = opt_field(line, v)?,
            "target_absent_acc_over_all" => r.target_absent_acc_over_all = field(line, v)?,
            "config_fingerprint" => r.config_fingerprint = v.clone(),
            other => return Err(Error::Config(format!("line {line}: unknown metric `{other}`"))),
        }
    }
    Ok(r)
}

pub fn parse_cdf_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    csv_rows(text, "distance_km,cumulative_fraction")?
        .into_iter()
        .map(|(line, f)| match f.as_slice() {
            [d, c] => Ok((field(line, d)?, field(line, c)?)),
            _ => Err(Error::Config(format!("line {line}: expected two columns"))),
        })
        .collect()
}

/// Rows of a per-sample dump as `(prediction, error_km)`.
pub fn parse_samples_csv(text: &str) -> Result<Vec<(Prediction, Option<f64>)>> {
    csv_rows(text, "sample_id,target,predicted,target_absent,error_km")?
        .into_iter()
        .map(|(line, f)| match f.as_slice() {
            [id, t, p, a, e] => Ok((
                Prediction {
                    sample_id: field(line, id)?,
                    target: field(line, t)?,
                    predicted: field(line, p)?,
                    target_absent: field(line, a)?,
                },
                opt_field(line, e)?,
            )),
            _ => Err(Error::Config(format!("line {line}: expected five columns"))),
        })
        .collect()
}

impl MetricsRecord {
    pub fn of(report: &EvalReport) -> Self {
        Self {
            acc_at_1: report.acc_at_1,
            sample_count: report.sample_count,
            hits: report.hits,
            mean_error_km: report.mean_error_km,
            median_error_km: report.median_error_km,
            target_absent_count: report.target_absent_count,
            target_absent_hits: report.target_absent_hits,
            target_absent_acc: report.target_absent_acc,
            target_absent_acc_over_all: report.target_absent_acc_over_all,
            config_fingerprint: report.config_fingerprint.clone(),
        }
    }
}
