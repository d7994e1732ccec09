//! Persistent review state behind the annotation API, plus its wire types.
//!
//! The annotation directory holds `pools.json` (written by the `sample`
//! stage), `draws.jsonl` and `annotations.jsonl`. Draws are reproduced on
//! open by re-running the seeded samplers, so a log that does not match its
//! pools is rejected rather than silently trusted.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::convo::Conversation;
use crate::fsutil;
use crate::modevents::{MaskedSpan, UserProfile};
use crate::sampler::{
    track_seed, AnnotationRecord, SamplingConfig, SaturationState, SaturationTracker, StratifiedSampler,
};
use crate::{Error, Result};

pub const POOLS_FILE: &str = "pools.json";
pub const DRAWS_FILE: &str = "draws.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

/// Sampling pools per track: stratum key to candidate ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub sampling: SamplingConfig,
    pub tracks: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub track: String,
    /// Index of the sampler round that produced this draw.
    pub round: u64,
    pub stratum: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextSample {
    Draw(DrawRecord),
    /// The track reached saturation; no further draws are issued.
    Saturated,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackStatus {
    #[serde(flatten)]
    pub state: SaturationState,
    pub drawn: usize,
    pub annotated: usize,
    pub pending: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub tracks: BTreeMap<String, TrackStatus>,
    pub all_saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub conv_id: String,
    pub session: String,
    pub seq: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked_spans: Vec<MaskedSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTimeline {
    pub pseudonym: String,
    pub profile: Option<UserProfile>,
    pub entries: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

struct Track {
    sampler: StratifiedSampler,
    rounds: u64,
}

pub struct ReviewStore {
    dir: Option<PathBuf>,
    pools: Pools,
    tracks: BTreeMap<String, Track>,
    draws: Vec<DrawRecord>,
    tracker: SaturationTracker,
}

impl ReviewStore {
    /// An in-memory store; nothing is persisted.
    pub fn new(pools: Pools) -> Self {
        let tracks = pools
            .tracks
            .iter()
            .map(|(name, p)| {
                let sampler = StratifiedSampler::new(p.clone(), track_seed(pools.sampling.seed, name));
                (name.clone(), Track { sampler, rounds: 0 })
            })
            .collect();
        ReviewStore {
            dir: None,
            tracker: SaturationTracker::new(pools.sampling),
            pools,
            tracks,
            draws: Vec::new(),
        }
    }

    /// Opens an annotation directory and replays its logs.
    pub fn open(dir: &Path) -> Result<Self> {
        let pools: Pools = fsutil::read_json(&dir.join(POOLS_FILE))?;
        let draws: Vec<DrawRecord> = fsutil::read_jsonl_or_empty(&dir.join(DRAWS_FILE))?;
        let log: Vec<AnnotationRecord> = fsutil::read_jsonl_or_empty(&dir.join(ANNOTATIONS_FILE))?;
        let mut store = Self::replay(pools, &draws, &log)?;
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    /// Rebuilds state from logs, checking each draw against the samplers.
    pub fn replay(pools: Pools, draws: &[DrawRecord], log: &[AnnotationRecord]) -> Result<Self> {
        let mut store = Self::new(pools);
        let mut by_track: BTreeMap<&str, Vec<&DrawRecord>> = BTreeMap::new();
        for d in draws {
            by_track.entry(d.track.as_str()).or_default().push(d);
        }
        for (name, recorded) in by_track {
            let track = store
                .tracks
                .get_mut(name)
                .ok_or_else(|| Error::input(format!("draw log names unknown track {name}")))?;
            let mut i = 0;
            while i < recorded.len() {
                let round = track.sampler.next_sample().map_err(|_| {
                    Error::input(format!("draw log for track {name} is longer than its pools"))
                })?;
                for d in &round {
                    let r = recorded.get(i).ok_or_else(|| {
                        Error::input(format!("draw log for track {name} ends inside round {}", track.rounds))
                    })?;
                    if r.stratum != d.stratum || r.target != d.target || r.round != track.rounds {
                        return Err(Error::input(format!(
                            "draw log for track {name} diverges from its pools at {}",
                            r.target
                        )));
                    }
                    i += 1;
                }
                track.rounds += 1;
            }
        }
        for d in draws {
            store.tracker.mark_drawn(&d.track, &d.target);
        }
        for r in log {
            store.tracker.record(r.clone())?;
        }
        store.draws = draws.to_vec();
        Ok(store)
    }

    pub fn pools(&self) -> &Pools {
        &self.pools
    }

    pub fn draws(&self) -> &[DrawRecord] {
        &self.draws
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        self.tracker.log()
    }

    pub fn track_names(&self) -> impl Iterator<Item = &str> {
        self.tracks.keys().map(String::as_str)
    }

    fn annotated_targets(&self, track: &str) -> BTreeSet<&str> {
        self.tracker
            .log()
            .iter()
            .filter(|r| r.track == track)
            .map(|r| r.target.as_str())
            .collect()
    }

    fn pending(&self, track: &str) -> Vec<&DrawRecord> {
        let done = self.annotated_targets(track);
        self.draws
            .iter()
            .filter(|d| d.track == track && !done.contains(d.target.as_str()))
            .collect()
    }

    /// Returns the oldest unannotated draw, drawing a new round only when
    /// nothing is pending. Repeated calls without annotations are stable.
    pub fn next_sample(&mut self, track: &str) -> Result<NextSample> {
        if !self.tracks.contains_key(track) {
            return Err(Error::input(format!("unknown track {track}")));
        }
        if self.tracker.state(track).saturated {
            return Ok(NextSample::Saturated);
        }
        if let Some(d) = self.pending(track).first() {
            return Ok(NextSample::Draw((*d).clone()));
        }
        let t = self.tracks.get_mut(track).expect("checked above");
        let round = match t.sampler.next_sample() {
            Ok(r) => r,
            Err(Error::Exhausted) => return Ok(NextSample::Exhausted),
            Err(e) => return Err(e),
        };
        let records: Vec<DrawRecord> = round
            .into_iter()
            .map(|d| DrawRecord {
                track: track.to_string(),
                round: t.rounds,
                stratum: d.stratum,
                target: d.target,
            })
            .collect();
        t.rounds += 1;
        if let Some(dir) = &self.dir {
            fsutil::append_jsonl(&dir.join(DRAWS_FILE), &records)?;
        }
        for r in &records {
            self.tracker.mark_drawn(&r.track, &r.target);
        }
        self.draws.extend(records.iter().cloned());
        Ok(NextSample::Draw(records[0].clone()))
    }

    /// Validates and stores one annotation. Fails with `Input` when the
    /// target was never drawn and `Conflict` on a repeat submission.
    pub fn submit(&mut self, rec: AnnotationRecord) -> Result<AnnotationRecord> {
        let mut next = self.tracker.clone();
        let stored = next.record(rec)?;
        if let Some(dir) = &self.dir {
            fsutil::append_jsonl(&dir.join(ANNOTATIONS_FILE), std::slice::from_ref(&stored))?;
        }
        self.tracker = next;
        Ok(stored)
    }

    pub fn saturation(&self) -> SaturationReport {
        let tracks: BTreeMap<String, TrackStatus> = self
            .tracks
            .iter()
            .map(|(name, t)| {
                let drawn = self.draws.iter().filter(|d| &d.track == name).count();
                let annotated = self.annotated_targets(name).len();
                let status = TrackStatus {
                    state: self.tracker.state(name),
                    drawn,
                    annotated,
                    pending: self.pending(name).len(),
                    exhausted: t.sampler.is_exhausted(),
                };
                (name.clone(), status)
            })
            .collect();
        let all_saturated = !tracks.is_empty() && tracks.values().all(|t| t.state.saturated);
        SaturationReport { tracks, all_saturated }
    }
}

/// Read-only conversation and user lookups for the review UI.
#[derive(Debug, Clone, Default)]
pub struct ReviewData {
    conversations: BTreeMap<String, Conversation>,
    profiles: BTreeMap<String, UserProfile>,
}

impl ReviewData {
    pub fn new(conversations: Vec<Conversation>, profiles: Vec<UserProfile>) -> Self {
        ReviewData {
            conversations: conversations.into_iter().map(|c| (c.conv_id.clone(), c)).collect(),
            profiles: profiles.into_iter().map(|p| (p.pseudonym.clone(), p)).collect(),
        }
    }

    pub fn load(conversations: &Path, profiles: &Path) -> Result<Self> {
        Ok(Self::new(
            fsutil::read_jsonl(conversations)?,
            fsutil::read_jsonl_or_empty(profiles)?,
        ))
    }

    pub fn conversation(&self, conv_id: &str) -> Option<&Conversation> {
        self.conversations.get(conv_id)
    }

    /// Every line of a user across all conversations in transcript order.
    pub fn timeline(&self, pseudonym: &str) -> Option<UserTimeline> {
        let mut entries: Vec<TimelineEntry> = self
            .conversations
            .values()
            .flat_map(|c| {
                c.lines.iter().filter(|l| l.speaker == pseudonym).map(|l| TimelineEntry {
                    conv_id: c.conv_id.clone(),
                    session: l.session.clone(),
                    seq: l.seq,
                    text: l.text.clone(),
                    masked_spans: l.masked_spans.clone(),
                })
            })
            .collect();
        let profile = self.profiles.get(pseudonym).cloned();
        if entries.is_empty() && profile.is_none() {
            return None;
        }
        entries.sort_by(|a, b| (&a.session, a.seq).cmp(&(&b.session, b.seq)));
        Some(UserTimeline {
            pseudonym: pseudonym.to_string(),
            profile,
            entries,
        })
    }
}
