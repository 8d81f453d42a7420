//! Prompt construction. Each prefix event becomes
//! `<at> [time] <user> [user] <visited> <POI> <category> [cat] <located> <GPS>`
//! and the prompt ends with a single `<query>` token. The `<POI>` and `<GPS>`
//! positions are slots later overwritten with aligned POI embeddings and
//! coordinate encodings.

use std::collections::HashMap;

use chrono::{Datelike, Timelike};

use crate::error::{Error, Result};
use crate::ingest::{CheckIn, Vocab};

pub const SPECIAL_TOKENS: [&str; 10] = [
    "<at>",
    "<user>",
    "<visited>",
    "<category>",
    "<located>",
    "<query>",
    "<POI>",
    "<GPS>",
    "<unk_user>",
    "<unk_category>",
];
pub const AT: usize = 0;
pub const USER: usize = 1;
pub const VISITED: usize = 2;
pub const CATEGORY: usize = 3;
pub const LOCATED: usize = 4;
pub const QUERY: usize = 5;
pub const POI_SLOT: usize = 6;
pub const GPS_SLOT: usize = 7;
pub const UNK_USER: usize = 8;
pub const UNK_CATEGORY: usize = 9;

pub const HOURS_PER_WEEK: usize = 168;
pub const TOKENS_PER_EVENT: usize = 10;

/// Hour of the week in UTC, Monday 00:00 = 0.
pub fn hour_of_week(c: &CheckIn) -> usize {
    c.timestamp.weekday().num_days_from_monday() as usize * 24 + c.timestamp.hour() as usize
}

/// Token id layout: specials, hour-of-week buckets, users, categories.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenVocab {
    pub users: Vec<String>,
    pub categories: Vec<String>,
    user_index: HashMap<String, usize>,
    category_index: HashMap<String, usize>,
}

impl TokenVocab {
    pub fn new(vocab: &Vocab) -> Self {
        Self {
            users: vocab.users.clone(),
            categories: vocab.categories.clone(),
            user_index: vocab.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect(),
            category_index: vocab.categories.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        SPECIAL_TOKENS.len() + HOURS_PER_WEEK + self.users.len() + self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time_token(&self, bucket: usize) -> usize {
        SPECIAL_TOKENS.len() + bucket
    }

    pub fn user_token(&self, user: &str) -> usize {
        match self.user_index.get(user) {
            Some(i) => SPECIAL_TOKENS.len() + HOURS_PER_WEEK + i,
            None => UNK_USER,
        }
    }

    pub fn category_token(&self, category: &str) -> usize {
        match self.category_index.get(category) {
            Some(i) => SPECIAL_TOKENS.len() + HOURS_PER_WEEK + self.users.len() + i,
            None => UNK_CATEGORY,
        }
    }

    pub fn first_user_token(&self) -> usize {
        SPECIAL_TOKENS.len() + HOURS_PER_WEEK
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptSequence {
    pub tokens: Vec<usize>,
    /// Positions overwritten by coordinate encodings, one per event.
    pub spatial_slots: Vec<usize>,
    /// Positions overwritten by aligned POI embeddings, one per event.
    pub poi_slots: Vec<usize>,
    pub event_pois: Vec<usize>,
    pub event_coords: Vec<(f64, f64)>,
    pub target: Option<usize>,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.event_pois.len()
    }

    /// True when the target POI is not among the encoded prefix events.
    pub fn target_absent(&self) -> bool {
        match self.target {
            Some(t) => !self.event_pois.contains(&t),
            None => true,
        }
    }
}

/// Number of tokens for a prompt over `k` events.
pub fn prompt_len(k: usize) -> usize {
    TOKENS_PER_EVENT * k + 1
}

/// Builds the prompt for the most recent `max_events` of `prefix`. Unknown
/// users and categories map to the reserved UNK tokens; prefix POIs must be
/// in `vocab`. An unknown target is recorded as `None`.
pub fn build_prompt(
    prefix: &[CheckIn],
    target: Option<&CheckIn>,
    tokens: &TokenVocab,
    vocab: &Vocab,
    max_events: usize,
) -> Result<PromptSequence> {
    if prefix.is_empty() {
        return Err(Error::Empty("prompt prefix"));
    }
    if max_events == 0 {
        return Err(Error::Config("prefix_len must be >= 1".into()));
    }
    let events = &prefix[prefix.len().saturating_sub(max_events)..];
    let mut seq = PromptSequence {
        tokens: Vec::with_capacity(prompt_len(events.len())),
        spatial_slots: Vec::with_capacity(events.len()),
        poi_slots: Vec::with_capacity(events.len()),
        event_pois: Vec::with_capacity(events.len()),
        event_coords: Vec::with_capacity(events.len()),
        target: target.and_then(|t| vocab.poi(&t.poi_id)),
    };
    for e in events {
        let poi = vocab.poi(&e.poi_id).ok_or_else(|| Error::UnknownPoi(e.poi_id.clone()))?;
        seq.tokens.extend([
            AT,
            tokens.time_token(hour_of_week(e)),
            USER,
            tokens.user_token(&e.user_id),
            VISITED,
        ]);
        seq.poi_slots.push(seq.tokens.len());
        seq.tokens.extend([POI_SLOT, CATEGORY, tokens.category_token(&e.category), LOCATED]);
        seq.spatial_slots.push(seq.tokens.len());
        seq.tokens.push(GPS_SLOT);
        seq.event_pois.push(poi);
        seq.event_coords.push(e.coord());
    }
    seq.tokens.push(QUERY);
    Ok(seq)
}
