//! Check-in parsing, sparse-entity filtering, per-user trajectories and the
//! chronological train/validation/test split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::IngestConfig;
use crate::error::{Error, Result};

pub const CANONICAL_HEADER: &str = "user_id\tpoi_id\tcategory\tlat\tlon\ttimestamp";
pub const SPLIT_HEADER: &str = "sample_id\tuser_id\tpoi_id\tcategory\tlat\tlon\ttimestamp";

/// One visit event.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    pub category: String,
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
}

impl CheckIn {
    pub fn coord(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }

    fn canonical_fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.user_id,
            self.poi_id,
            self.category,
            self.lat,
            self.lon,
            self.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// Tab-separated `user_id poi_id category lat lon timestamp`, ISO-8601 UTC,
    /// with an optional header line.
    Canonical,
    /// The original Foursquare dump: `user venue venue_category_id
    /// venue_category lat lon tz_offset_minutes utc_time`, where `utc_time`
    /// looks like `Tue Apr 03 18:00:09 +0000 2012`.
    FoursquareRaw,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "foursquare-raw" => Ok(Self::FoursquareRaw),
            _ => Err(Error::Config(format!("unknown input format `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Parsed {
    pub checkins: Vec<CheckIn>,
    pub skipped: usize,
}

fn valid_coord(lat: f64, lon: f64) -> bool {
    lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

fn parse_canonical_row(fields: &[&str]) -> std::result::Result<CheckIn, String> {
    let [user, poi, category, lat, lon, ts] = fields else {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    };
    let lat: f64 = lat.trim().parse().map_err(|_| format!("bad latitude `{lat}`"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| format!("bad longitude `{lon}`"))?;
    let timestamp = DateTime::parse_from_rfc3339(ts.trim())
        .map_err(|e| format!("bad timestamp `{ts}`: {e}"))?
        .with_timezone(&Utc);
    Ok(CheckIn {
        user_id: user.to_string(),
        poi_id: poi.to_string(),
        category: category.to_string(),
        timestamp,
        lat,
        lon,
    })
}

fn parse_foursquare_row(fields: &[&str]) -> std::result::Result<CheckIn, String> {
    let [user, venue, _cat_id, category, lat, lon, _offset, ts] = fields else {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    };
    let lat: f64 = lat.trim().parse().map_err(|_| format!("bad latitude `{lat}`"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| format!("bad longitude `{lon}`"))?;
    // The time column carries its own zone; converting through it yields UTC
    // whatever the offset column says about local time.
    let timestamp = DateTime::parse_from_str(ts.trim(), "%a %b %d %H:%M:%S %z %Y")
        .map_err(|e| format!("bad timestamp `{ts}`: {e}"))?
        .with_timezone(&Utc);
    Ok(CheckIn {
        user_id: user.to_string(),
        poi_id: venue.to_string(),
        category: category.to_string(),
        timestamp,
        lat,
        lon,
    })
}

/// Parses rows in file order. Malformed and out-of-range rows are skipped
/// with a warning and counted.
pub fn parse_checkins_str(text: &str, format: InputFormat) -> Parsed {
    let mut out = Parsed::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && format == InputFormat::Canonical && line.starts_with("user_id\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let row = match format {
            InputFormat::Canonical => parse_canonical_row(&fields),
            InputFormat::FoursquareRaw => parse_foursquare_row(&fields),
        };
        match row {
            Ok(c) if valid_coord(c.lat, c.lon) => out.checkins.push(c),
            Ok(c) => {
                warn!("line {}: coordinate ({}, {}) out of range, skipped", i + 1, c.lat, c.lon);
                out.skipped += 1;
            }
            Err(msg) => {
                warn!("line {}: {msg}, skipped", i + 1);
                out.skipped += 1;
            }
        }
    }
    out
}

pub fn parse_checkins(path: &Path, format: InputFormat) -> Result<Parsed> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    Ok(parse_checkins_str(&text, format))
}

/// Canonical rendering, header included. Floats use the shortest
/// representation that parses back to the same value.
pub fn format_canonical(checkins: &[CheckIn]) -> String {
    let mut out = String::from(CANONICAL_HEADER);
    out.push('\n');
    for c in checkins {
        out.push_str(&c.canonical_fields());
        out.push('\n');
    }
    out
}

pub fn write_canonical(path: &Path, checkins: &[CheckIn]) -> Result<()> {
    fs::write(path, format_canonical(checkins)).map_err(|e| Error::io(path, e))
}

/// Drops check-ins of users and POIs with fewer than `min_count` check-ins,
/// repeating until nothing changes. Order of survivors is preserved.
pub fn filter_sparse(checkins: &[CheckIn], min_count: usize) -> Vec<CheckIn> {
    let mut current: Vec<CheckIn> = checkins.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut pois: HashMap<&str, usize> = HashMap::new();
        for c in &current {
            *users.entry(&c.user_id).or_default() += 1;
            *pois.entry(&c.poi_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|c| users[c.user_id.as_str()] >= min_count && pois[c.poi_id.as_str()] >= min_count)
            .collect();
        if keep.iter().all(|k| *k) {
            return current;
        }
        current = current
            .into_iter()
            .zip(keep)
            .filter_map(|(c, k)| k.then_some(c))
            .collect();
    }
}

/// Chronological check-ins of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    pub events: Vec<CheckIn>,
    /// Indices `i > 0` where `events[i]` opens a new session.
    pub session_starts: Vec<usize>,
}

impl Trajectory {
    pub fn new(user_id: String, mut events: Vec<CheckIn>, session_gap_hours: f64) -> Self {
        events.sort_by_key(|e| e.timestamp);
        let gap_secs = session_gap_hours * 3600.0;
        let session_starts = (1..events.len())
            .filter(|&i| {
                let dt = (events[i].timestamp - events[i - 1].timestamp).num_seconds();
                dt as f64 > gap_secs
            })
            .collect();
        Self {
            user_id,
            events,
            session_starts,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Session slices in order.
    pub fn sessions(&self) -> Vec<&[CheckIn]> {
        let mut bounds = vec![0];
        bounds.extend(&self.session_starts);
        bounds.push(self.events.len());
        bounds
            .windows(2)
            .filter(|w| w[0] < w[1])
            .map(|w| &self.events[w[0]..w[1]])
            .collect()
    }

    /// Copy restricted to the first `n` events.
    pub fn truncated(&self, n: usize) -> Trajectory {
        let n = n.min(self.events.len());
        Trajectory {
            user_id: self.user_id.clone(),
            events: self.events[..n].to_vec(),
            session_starts: self.session_starts.iter().copied().filter(|&i| i < n).collect(),
        }
    }
}

/// Groups check-ins by user (users ordered by id), sorts each user's events by
/// time (stable) and marks session boundaries.
pub fn build_trajectories(checkins: &[CheckIn], session_gap_hours: f64) -> Vec<Trajectory> {
    let mut by_user: BTreeMap<&str, Vec<CheckIn>> = BTreeMap::new();
    for c in checkins {
        by_user.entry(&c.user_id).or_default().push(c.clone());
    }
    by_user
        .into_iter()
        .map(|(u, events)| Trajectory::new(u.to_string(), events, session_gap_hours))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiInfo {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct VocabFile {
    pois: Vec<PoiInfo>,
    users: Vec<String>,
    categories: Vec<String>,
}

/// Dense indices for POIs, users and categories. A POI's coordinates and
/// category are those of its first observed check-in.
#[derive(Clone, Debug, Default)]
pub struct Vocab {
    pub pois: Vec<PoiInfo>,
    pub users: Vec<String>,
    pub categories: Vec<String>,
    poi_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
    category_index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.pois == other.pois && self.users == other.users && self.categories == other.categories
    }
}

fn index_of(items: impl Iterator<Item = String>) -> HashMap<String, usize> {
    items.enumerate().map(|(i, s)| (s, i)).collect()
}

impl Vocab {
    pub fn new(pois: Vec<PoiInfo>, users: Vec<String>, categories: Vec<String>) -> Self {
        let poi_index = index_of(pois.iter().map(|p| p.id.clone()));
        let user_index = index_of(users.iter().cloned());
        let category_index = index_of(categories.iter().cloned());
        Self {
            pois,
            users,
            categories,
            poi_index,
            user_index,
            category_index,
        }
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn poi(&self, id: &str) -> Option<usize> {
        self.poi_index.get(id).copied()
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn category(&self, name: &str) -> Option<usize> {
        self.category_index.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            pois: self.pois.clone(),
            users: self.users.clone(),
            categories: self.categories.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)?;
        Ok(Self::new(f.pois, f.users, f.categories))
    }

    /// SHA-256 over the JSON rendering.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = self.to_json().expect("vocab serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Human-readable list of differences, empty when the POI vocabularies
    /// agree id for id.
    pub fn poi_differences(&self, other: &Vocab) -> Vec<String> {
        let mut diffs = Vec::new();
        for (i, p) in self.pois.iter().enumerate() {
            match other.poi(&p.id) {
                None => diffs.push(format!("{} missing", p.id)),
                Some(j) if j != i => diffs.push(format!("{} at index {i} vs {j}", p.id)),
                _ => {}
            }
        }
        for p in &other.pois {
            if self.poi(&p.id).is_none() {
                diffs.push(format!("{} unexpected", p.id));
            }
        }
        diffs
    }
}

/// Target `trajectories[traj].events[pos]`, predicted from `events[..pos]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: usize,
    pub traj: usize,
    pub pos: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub trajectories: Vec<Trajectory>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: Vocab,
}

/// `(train, val, test)` sample counts for one user: floor for the first two,
/// remainder to test; fewer than three samples all go to train.
pub fn split_counts(n: usize, train_ratio: f64, val_ratio: f64) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    // tolerance guards products like 0.1·30 = 3.0000000000000004 from flooring down
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(train_ratio).min(n);
    let val = floor(val_ratio).min(n - train);
    (train, val, n - train - val)
}

/// Every event after a user's first becomes a sample; each user's samples are
/// split chronologically.
pub fn split_chronological(trajectories: Vec<Trajectory>, train_ratio: f64, val_ratio: f64) -> DatasetSplit {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut next_id = 0;
    for (t, traj) in trajectories.iter().enumerate() {
        let n = traj.len().saturating_sub(1);
        let (n_train, n_val, _) = split_counts(n, train_ratio, val_ratio);
        for k in 0..n {
            let s = Sample {
                id: next_id,
                traj: t,
                pos: k + 1,
            };
            next_id += 1;
            if k < n_train {
                train.push(s);
            } else if k < n_train + n_val {
                val.push(s);
            } else {
                test.push(s);
            }
        }
    }
    let vocab = build_vocab(&trajectories, &train);
    DatasetSplit {
        trajectories,
        train,
        val,
        test,
        vocab,
    }
}

/// POIs and categories seen in the training portion come first, in order of
/// appearance; the rest follow in order of appearance.
fn build_vocab(trajectories: &[Trajectory], train: &[Sample]) -> Vocab {
    let mut train_end = vec![1usize; trajectories.len()];
    for s in train {
        train_end[s.traj] = train_end[s.traj].max(s.pos + 1);
    }
    let mut pois: Vec<PoiInfo> = Vec::new();
    let mut seen_poi: HashSet<&str> = HashSet::new();
    let mut categories: Vec<String> = Vec::new();
    let mut seen_cat: HashSet<&str> = HashSet::new();
    let ordered = trajectories
        .iter()
        .zip(&train_end)
        .flat_map(|(t, &end)| t.events[..end.min(t.len())].iter())
        .chain(
            trajectories
                .iter()
                .zip(&train_end)
                .flat_map(|(t, &end)| t.events[end.min(t.len())..].iter()),
        );
    for e in ordered {
        if seen_poi.insert(&e.poi_id) {
            pois.push(PoiInfo {
                id: e.poi_id.clone(),
                lat: e.lat,
                lon: e.lon,
                category: e.category.clone(),
            });
        }
        if seen_cat.insert(&e.category) {
            categories.push(e.category.clone());
        }
    }
    let users = trajectories.iter().map(|t| t.user_id.clone()).collect();
    Vocab::new(pois, users, categories)
}

impl DatasetSplit {
    /// Ingest pipeline: filter, group into trajectories, split.
    pub fn from_checkins(checkins: &[CheckIn], cfg: &IngestConfig) -> Self {
        let filtered = filter_sparse(checkins, cfg.min_count);
        let trajectories = build_trajectories(&filtered, cfg.session_gap_hours);
        split_chronological(trajectories, cfg.train_ratio, cfg.val_ratio)
    }

    pub fn samples(&self, part: Part) -> &[Sample] {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    pub fn target(&self, s: &Sample) -> &CheckIn {
        &self.trajectories[s.traj].events[s.pos]
    }

    pub fn prefix(&self, s: &Sample) -> &[CheckIn] {
        &self.trajectories[s.traj].events[..s.pos]
    }

    /// Each trajectory cut after its last training target (at least its
    /// first event), i.e. the events visible at training time.
    pub fn train_trajectories(&self) -> Vec<Trajectory> {
        let mut end = vec![1usize; self.trajectories.len()];
        for s in &self.train {
            end[s.traj] = end[s.traj].max(s.pos + 1);
        }
        self.trajectories
            .iter()
            .zip(end)
            .map(|(t, e)| t.truncated(e))
            .collect()
    }

    /// Writes `train.tsv`, `val.tsv`, `test.tsv` and `vocab.json` into `dir`.
    /// A user's first event has no prefix and is written to `train.tsv` with
    /// sample id `-`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: [String; 3] = std::array::from_fn(|_| format!("{SPLIT_HEADER}\n"));
        let mut part_of: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (k, part) in [&self.train, &self.val, &self.test].into_iter().enumerate() {
            for s in part {
                part_of.insert((s.traj, s.pos), (k, s.id));
            }
        }
        for (t, traj) in self.trajectories.iter().enumerate() {
            for (pos, e) in traj.events.iter().enumerate() {
                let (file, id) = match part_of.get(&(t, pos)) {
                    Some(&(k, id)) => (k, id.to_string()),
                    None => (0, "-".to_string()),
                };
                let _ = writeln!(files[file], "{id}\t{}", e.canonical_fields());
            }
        }
        for (name, body) in ["train.tsv", "val.tsv", "test.tsv"].iter().zip(&files) {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("vocab.json");
        fs::write(&p, self.vocab.to_json()?).map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, session_gap_hours: f64) -> Result<Self> {
        let mut users: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(Option<(usize, usize)>, CheckIn)>> = HashMap::new();
        for (k, name) in ["train.tsv", "val.tsv", "test.tsv"].iter().enumerate() {
            let path: PathBuf = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate().skip(1) {
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                let parse_err = |msg: String| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    msg,
                };
                let (id, rest) = fields.split_first().ok_or_else(|| parse_err("empty row".into()))?;
                let c = parse_canonical_row(rest).map_err(parse_err)?;
                let sid = match *id {
                    "-" => None,
                    s => Some((
                        k,
                        s.parse::<usize>()
                            .map_err(|_| parse_err(format!("bad sample id `{s}`")))?,
                    )),
                };
                if !rows.contains_key(&c.user_id) {
                    users.push(c.user_id.clone());
                }
                rows.entry(c.user_id.clone()).or_default().push((sid, c));
            }
        }
        let mut trajectories = Vec::new();
        let mut parts: [Vec<Sample>; 3] = Default::default();
        for (t, u) in users.iter().enumerate() {
            let mut events = rows.remove(u).unwrap_or_default();
            events.sort_by_key(|(_, c)| c.timestamp);
            for (pos, (sid, _)) in events.iter().enumerate() {
                if let Some((k, id)) = sid {
                    parts[*k].push(Sample { id: *id, traj: t, pos });
                }
            }
            let events = events.into_iter().map(|(_, c)| c).collect();
            trajectories.push(Trajectory::new(u.clone(), events, session_gap_hours));
        }
        let p = dir.join("vocab.json");
        let vocab = Vocab::from_json(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let [train, val, test] = parts;
        Ok(DatasetSplit {
            trajectories,
            train,
            val,
            test,
            vocab,
        })
    }
}
