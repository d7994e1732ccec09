//! Stratified review sampling and thematic-saturation tracking.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Track name of the evasion (masked-message user) review.
pub const EVASION_TRACK: &str = "evasion";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub seed: u64,
    pub category_window: usize,
    pub evasion_window: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            seed: 0,
            category_window: 5,
            evasion_window: 3,
        }
    }
}

impl SamplingConfig {
    pub fn window_for(&self, track: &str) -> usize {
        if track == EVASION_TRACK {
            self.evasion_window
        } else {
            self.category_window
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub key: String,
    pub pool: Vec<String>,
    pub drawn: Vec<String>,
}

impl Stratum {
    pub fn remaining(&self) -> usize {
        self.pool.len() - self.drawn.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub stratum: String,
    pub target: String,
}

/// Seeded without-replacement sampler over a fixed set of strata.
#[derive(Debug, Clone)]
pub struct StratifiedSampler {
    strata: Vec<Stratum>,
    remaining: Vec<Vec<String>>,
    rng: ChaCha8Rng,
}

/// Per-track RNG seed so tracks draw independently of one another.
pub fn track_seed(seed: u64, track: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(track.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

impl StratifiedSampler {
    /// Pools are deduplicated and sorted; strata are ordered by key.
    pub fn new(pools: BTreeMap<String, Vec<String>>, seed: u64) -> Self {
        let mut strata = Vec::new();
        let mut remaining = Vec::new();
        for (key, mut pool) in pools {
            pool.sort();
            pool.dedup();
            remaining.push(pool.clone());
            strata.push(Stratum {
                key,
                pool,
                drawn: Vec::new(),
            });
        }
        StratifiedSampler {
            strata,
            remaining,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.iter().all(Vec::is_empty)
    }

    /// One uniform draw from every stratum that still has candidates.
    pub fn next_sample(&mut self) -> Result<Vec<Draw>> {
        if self.is_exhausted() {
            return Err(Error::Exhausted);
        }
        let mut out = Vec::new();
        for (s, rem) in self.strata.iter_mut().zip(self.remaining.iter_mut()) {
            if rem.is_empty() {
                continue;
            }
            let i = self.rng.gen_range(0..rem.len());
            let id = rem.remove(i);
            s.drawn.push(id.clone());
            out.push(Draw {
                stratum: s.key.clone(),
                target: id,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReviewVerdict {
    TruePositive,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator: String,
    pub target: String,
    pub track: String,
    pub codes: BTreeSet<String>,
    /// Filled in when the record is appended.
    #[serde(default)]
    pub novel: bool,
    pub interpretable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ReviewVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaturationState {
    pub window: usize,
    pub recent_novelty: Vec<bool>,
    pub theme_set: BTreeSet<String>,
    pub saturated: bool,
}

impl SaturationState {
    pub fn new(window: usize) -> Self {
        SaturationState {
            window,
            recent_novelty: Vec::new(),
            theme_set: BTreeSet::new(),
            saturated: false,
        }
    }

    /// Folds one record in and returns its novelty. Non-interpretable
    /// records contribute codes but never advance the window.
    pub fn record(&mut self, codes: &BTreeSet<String>, interpretable: bool) -> bool {
        let novel = codes.iter().any(|c| !self.theme_set.contains(c));
        self.theme_set.extend(codes.iter().cloned());
        if interpretable {
            self.recent_novelty.push(novel);
        }
        let n = self.recent_novelty.len();
        self.saturated = self.window > 0 && n >= self.window && self.recent_novelty[n - self.window..].iter().all(|x| !x);
        novel
    }
}

/// Saturation state for every track plus the bookkeeping needed to reject
/// invalid submissions.
#[derive(Debug, Clone, Default)]
pub struct SaturationTracker {
    cfg: SamplingConfig,
    tracks: BTreeMap<String, SaturationState>,
    drawn: HashSet<(String, String)>,
    seen: HashSet<(String, String, String)>,
    log: Vec<AnnotationRecord>,
}

impl SaturationTracker {
    pub fn new(cfg: SamplingConfig) -> Self {
        SaturationTracker {
            cfg,
            ..Default::default()
        }
    }

    pub fn mark_drawn(&mut self, track: &str, target: &str) {
        self.drawn.insert((track.to_string(), target.to_string()));
    }

    pub fn was_drawn(&self, track: &str, target: &str) -> bool {
        self.drawn.contains(&(track.to_string(), target.to_string()))
    }

    pub fn state(&self, track: &str) -> SaturationState {
        self.tracks
            .get(track)
            .cloned()
            .unwrap_or_else(|| SaturationState::new(self.cfg.window_for(track)))
    }

    pub fn states(&self) -> &BTreeMap<String, SaturationState> {
        &self.tracks
    }

    pub fn log(&self) -> &[AnnotationRecord] {
        &self.log
    }

    /// Validates and appends; returns the stored record with `novel` set.
    pub fn record(&mut self, mut rec: AnnotationRecord) -> Result<AnnotationRecord> {
        if !self.was_drawn(&rec.track, &rec.target) {
            return Err(Error::input(format!(
                "target {} was not drawn for track {}",
                rec.target, rec.track
            )));
        }
        let key = (rec.annotator.clone(), rec.target.clone(), rec.track.clone());
        if self.seen.contains(&key) {
            return Err(Error::Conflict(format!(
                "{} already annotated {} on track {}",
                rec.annotator, rec.target, rec.track
            )));
        }
        let window = self.cfg.window_for(&rec.track);
        let st = self
            .tracks
            .entry(rec.track.clone())
            .or_insert_with(|| SaturationState::new(window));
        rec.novel = st.record(&rec.codes, rec.interpretable);
        self.seen.insert(key);
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Rebuilds state from draws and an annotation log. Stored `novel`
    /// flags are recomputed, not trusted.
    pub fn replay<'a>(
        cfg: SamplingConfig,
        draws: impl IntoIterator<Item = (&'a str, &'a str)>,
        log: &[AnnotationRecord],
    ) -> Result<Self> {
        let mut t = SaturationTracker::new(cfg);
        for (track, target) in draws {
            t.mark_drawn(track, target);
        }
        for r in log {
            t.record(r.clone())?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codes(c: &[&str]) -> BTreeSet<String> {
        c.iter().map(|s| s.to_string()).collect()
    }

    fn pools(spec: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        spec.iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn single_pool_and_exhaustion() {
        let mut s = StratifiedSampler::new(pools(&[("g", &["a"])]), 1);
        assert_eq!(s.next_sample().unwrap()[0].target, "a");
        assert!(matches!(s.next_sample(), Err(Error::Exhausted)));
    }

    #[test]
    fn seeded_draws_repeat() {
        let p = pools(&[("g", &["a", "b", "c"])]);
        let a: Vec<_> = (0..3).map({
            let mut s = StratifiedSampler::new(p.clone(), 42);
            move |_| s.next_sample().unwrap()[0].target.clone()
        }).collect();
        let b: Vec<_> = (0..3).map({
            let mut s = StratifiedSampler::new(p.clone(), 42);
            move |_| s.next_sample().unwrap()[0].target.clone()
        }).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["a", "b", "c"]);
    }

    #[test]
    fn one_draw_per_stratum() {
        let mut p = BTreeMap::new();
        for g in ["AdoptMe", "BerryAve", "Brookhaven", "RoyaleHigh"] {
            for a in ["9+", "13+"] {
                p.insert(format!("{g}/{a}"), vec![format!("{g}{a}-1"), format!("{g}{a}-2")]);
            }
        }
        let mut s = StratifiedSampler::new(p, 7);
        assert_eq!(s.next_sample().unwrap().len(), 8);
    }

    #[test]
    fn saturation_examples() {
        let mut st = SaturationState::new(5);
        assert!(st.record(&codes(&["a"]), true));
        for _ in 0..4 {
            assert!(!st.record(&codes(&["a"]), true));
            assert!(!st.saturated);
        }
        st.record(&codes(&["a"]), true);
        assert!(st.saturated);

        let mut st = SaturationState::new(5);
        st.record(&codes(&["a"]), true);
        for _ in 0..3 {
            st.record(&codes(&["a"]), true);
        }
        st.record(&codes(&["b"]), true);
        for _ in 0..4 {
            st.record(&codes(&["a"]), true);
        }
        assert!(!st.saturated);

        let mut st = SaturationState::new(3);
        st.record(&codes(&["a"]), true);
        let before = st.recent_novelty.len();
        assert!(st.record(&codes(&["z"]), false));
        assert_eq!(st.recent_novelty.len(), before);
        assert!(st.theme_set.contains("z"));
    }

    #[test]
    fn tracker_rejects_invalid() {
        let mut t = SaturationTracker::new(SamplingConfig::default());
        let rec = AnnotationRecord {
            annotator: "ann".into(),
            target: "c1".into(),
            track: "grooming".into(),
            codes: codes(&["x"]),
            novel: false,
            interpretable: true,
            verdict: Some(ReviewVerdict::TruePositive),
            timestamp: None,
        };
        assert!(matches!(t.record(rec.clone()), Err(Error::Input(_))));
        t.mark_drawn("grooming", "c1");
        assert!(t.record(rec.clone()).unwrap().novel);
        assert!(matches!(t.record(rec.clone()), Err(Error::Conflict(_))));
        let other = AnnotationRecord {
            annotator: "b".into(),
            ..rec
        };
        assert!(!t.record(other).unwrap().novel);
    }

    proptest! {
        #[test]
        fn draws_without_replacement(sizes in prop::collection::vec(0usize..6, 1..6), seed in any::<u64>()) {
            let p: BTreeMap<String, Vec<String>> = sizes
                .iter()
                .enumerate()
                .map(|(i, n)| (format!("s{i}"), (0..*n).map(|j| format!("s{i}-{j}")).collect()))
                .collect();
            let total: usize = sizes.iter().sum();
            let mut s = StratifiedSampler::new(p, seed);
            let mut seen = HashSet::new();
            while let Ok(d) = s.next_sample() {
                for x in d {
                    prop_assert!(seen.insert(x.target));
                }
            }
            prop_assert_eq!(seen.len(), total);
            for st in s.strata() {
                prop_assert!(st.drawn.len() <= st.pool.len());
            }
        }

        #[test]
        fn theme_set_monotone(recs in prop::collection::vec((prop::collection::btree_set("[a-d]", 0..3), any::<bool>()), 0..40)) {
            let mut st = SaturationState::new(3);
            let mut prev = st.theme_set.clone();
            for (c, i) in &recs {
                st.record(c, *i);
                prop_assert!(prev.is_subset(&st.theme_set));
                prev = st.theme_set.clone();
            }
        }
    }
}
