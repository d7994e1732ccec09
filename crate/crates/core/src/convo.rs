//! Conversation chunking and keyword-based category assignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ingest::{AgeBand, Game};
use crate::llmfilter::SafetyLabel;
use crate::transcript::ChatLine;
use crate::{Error, Result};

pub const DEFAULT_VOCABULARY: &str = include_str!("../assets/vocabulary.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Label {
    AbsolutelyUnsafe,
    PossiblyUnsafe,
    PossiblySafe,
    AbsolutelySafe,
    #[default]
    Unlabeled,
}

impl From<SafetyLabel> for Label {
    fn from(l: SafetyLabel) -> Self {
        match l {
            SafetyLabel::AbsolutelyUnsafe => Label::AbsolutelyUnsafe,
            SafetyLabel::PossiblyUnsafe => Label::PossiblyUnsafe,
            SafetyLabel::PossiblySafe => Label::PossiblySafe,
            SafetyLabel::AbsolutelySafe => Label::AbsolutelySafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conv_id: String,
    pub session_id: String,
    pub game: Game,
    pub age_band: AgeBand,
    pub lines: Vec<ChatLine>,
    #[serde(default)]
    pub label: Label,
    #[serde(default)]
    pub explanation: String,
    #[serde(default)]
    pub categories: BTreeSet<String>,
}

impl Conversation {
    /// Speaker-prefixed rendering used in prompts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&l.speaker);
            s.push_str(": ");
            s.push_str(&l.text);
            s.push('\n');
        }
        s.pop();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub size: usize,
    /// A trailing partial block shorter than this joins the previous block.
    pub min_tail: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig { size: 50, min_tail: 10 }
    }
}

/// Block lengths for a session of `n` lines.
pub fn chunk_sizes(n: usize, cfg: &ChunkConfig) -> Vec<usize> {
    let size = cfg.size.max(1);
    let mut v = vec![size; n / size];
    let tail = n % size;
    if tail > 0 {
        match v.last_mut() {
            Some(last) if tail < cfg.min_tail => *last += tail,
            _ => v.push(tail),
        }
    }
    v
}

/// Splits one session's ordered lines into conversations.
pub fn chunk_session(
    session_id: &str,
    game: &Game,
    age_band: AgeBand,
    lines: Vec<ChatLine>,
    cfg: &ChunkConfig,
) -> Vec<Conversation> {
    let sizes = chunk_sizes(lines.len(), cfg);
    let mut it = lines.into_iter();
    sizes
        .into_iter()
        .enumerate()
        .map(|(i, n)| Conversation {
            conv_id: format!("{session_id}-c{:04}", i + 1),
            session_id: session_id.to_string(),
            game: game.clone(),
            age_band,
            lines: it.by_ref().take(n).collect(),
            label: Label::Unlabeled,
            explanation: String::new(),
            categories: BTreeSet::new(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub categories: BTreeMap<String, Vec<String>>,
}

impl Default for CategoryVocabulary {
    fn default() -> Self {
        CategoryVocabulary::from_toml(DEFAULT_VOCABULARY).expect("bundled vocabulary is valid")
    }
}

impl CategoryVocabulary {
    pub fn from_toml(s: &str) -> Result<Self> {
        let v: CategoryVocabulary = toml::from_str(s).map_err(|e| Error::Config(format!("vocabulary: {e}")))?;
        for (name, kws) in &v.categories {
            if kws.is_empty() {
                return Err(Error::Config(format!("vocabulary: category {name:?} has no keywords")));
            }
            if let Some(k) = kws.iter().find(|k| k.is_empty() || **k != k.to_lowercase()) {
                return Err(Error::Config(format!("vocabulary: keyword {k:?} must be non-empty lowercase")));
            }
        }
        Ok(v)
    }

    pub fn categorize(&self, explanation: &str) -> BTreeSet<String> {
        let e = explanation.to_lowercase();
        self.categories
            .iter()
            .filter(|(_, kws)| kws.iter().any(|k| e.contains(k.as_str())))
            .map(|(c, _)| c.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lines(n: usize) -> Vec<ChatLine> {
        (0..n as u64)
            .map(|i| ChatLine {
                session: "s1".into(),
                seq: i,
                speaker: "user_00001".into(),
                text: format!("m{i}"),
                raw_speaker_hash: None,
                masked_spans: vec![],
            })
            .collect()
    }

    #[test]
    fn chunk_examples() {
        let c = ChunkConfig::default();
        assert_eq!(chunk_sizes(100, &c), vec![50, 50]);
        assert_eq!(chunk_sizes(55, &c), vec![55]);
        assert_eq!(chunk_sizes(60, &c), vec![50, 10]);
        assert_eq!(chunk_sizes(59, &c), vec![59]);
        assert_eq!(chunk_sizes(7, &c), vec![7]);
        assert!(chunk_sizes(0, &c).is_empty());
        let convs = chunk_session("s1", &Game::AdoptMe, AgeBand::NinePlus, lines(60), &c);
        assert_eq!(convs[1].conv_id, "s1-c0002");
        assert_eq!(convs[1].lines[0].seq, 50);
    }

    #[test]
    fn bundled_vocabulary_has_ten_categories() {
        let v = CategoryVocabulary::default();
        assert_eq!(v.categories.len(), 10);
    }

    #[test]
    fn categorize_examples() {
        let v = CategoryVocabulary::default();
        let got = v.categorize("grooming behavior, asks to move to discord");
        assert_eq!(got, ["grooming", "off-platform"].iter().map(|s| s.to_string()).collect());
        assert!(v.categorize("friendly game talk").is_empty());
        let got = v.categorize("Grooming: asks for her birthday and phone number");
        assert!(got.contains("grooming") && got.contains("request for pii"));
    }

    #[test]
    fn rejects_bad_vocabulary() {
        assert!(CategoryVocabulary::from_toml("[categories]\nx = []").is_err());
        assert!(CategoryVocabulary::from_toml("[categories]\nx = [\"Upper\"]").is_err());
    }

    proptest! {
        #[test]
        fn chunk_partitions(n in 0usize..400) {
            let convs = chunk_session("s1", &Game::AdoptMe, AgeBand::NinePlus, lines(n), &ChunkConfig::default());
            let seqs: Vec<u64> = convs.iter().flat_map(|c| c.lines.iter().map(|l| l.seq)).collect();
            prop_assert_eq!(seqs, (0..n as u64).collect::<Vec<_>>());
            for c in &convs {
                prop_assert!(!c.lines.is_empty() && c.lines.len() < 60);
            }
        }

        #[test]
        fn categorize_monotone(extra in "[a-z]{1,6}", text in "[a-z ]{0,40}") {
            let v = CategoryVocabulary::default();
            let before = v.categorize(&text);
            let mut w = v.clone();
            for kws in w.categories.values_mut() {
                kws.push(extra.clone());
            }
            prop_assert!(before.is_subset(&w.categorize(&text)));
        }
    }
}
