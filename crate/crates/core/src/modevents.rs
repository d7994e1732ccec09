//! Moderation-event (masked span) detection and per-user frequency profiles.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::transcript::{ChatLine, SERVER, UNKNOWN};
use crate::{Error, Result};

/// Interjection shapes that look like masked text but are not.
pub const BASE_EXCLUSIONS: &[&str] = &[r"^A+H+!*$", r"^(HA)+H?$", r"^H+M+$"];

/// Further short interjections rejected by the default lexicon.
pub const EXTRA_EXCLUSIONS: &[&str] = &[r"^HUH+!*\??$", r"^S+H+!*$", r"^O+H+!*$", r"^U+H+!*$", r"^4TH$"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSpan {
    /// Character offset of the token within the line text.
    pub start: usize,
    /// Length in characters.
    pub length: usize,
    pub glyphs: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskLexicon {
    pub min_len: usize,
    pub purity_min: f64,
    pub exclusions: Vec<String>,
    /// Join qualifying tokens separated by a single space into one span.
    pub merge_adjacent: bool,
}

impl Default for MaskLexicon {
    fn default() -> Self {
        MaskLexicon {
            min_len: 3,
            purity_min: 0.6,
            exclusions: BASE_EXCLUSIONS
                .iter()
                .chain(EXTRA_EXCLUSIONS)
                .map(|s| s.to_string())
                .collect(),
            merge_adjacent: false,
        }
    }
}

/// Compiled lexicon.
#[derive(Debug, Clone)]
pub struct SpanDetector {
    lexicon: MaskLexicon,
    exclusions: Vec<Regex>,
}

impl Default for SpanDetector {
    fn default() -> Self {
        SpanDetector::new(MaskLexicon::default()).expect("default exclusions compile")
    }
}

fn is_mask_char(c: char) -> bool {
    matches!(c, '#' | 'H' | 'h' | '4')
}

impl SpanDetector {
    pub fn new(lexicon: MaskLexicon) -> Result<Self> {
        let exclusions = lexicon
            .exclusions
            .iter()
            .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("bad exclusion {p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpanDetector { lexicon, exclusions })
    }

    pub fn lexicon(&self) -> &MaskLexicon {
        &self.lexicon
    }

    /// Purity of a token, or `None` when it does not qualify.
    fn qualify(&self, token: &str) -> Option<f64> {
        let n = token.chars().count();
        if n < self.lexicon.min_len {
            return None;
        }
        let hits = token.chars().filter(|&c| is_mask_char(c)).count();
        let purity = hits as f64 / n as f64;
        if purity < self.lexicon.purity_min {
            return None;
        }
        let upper = token.to_uppercase();
        if self.exclusions.iter().any(|re| re.is_match(&upper)) {
            return None;
        }
        Some(purity)
    }

    pub fn detect(&self, text: &str) -> Vec<MaskedSpan> {
        // (start char, token, purity)
        let mut tokens: Vec<(usize, &str, Option<f64>)> = Vec::new();
        let mut char_pos = 0usize;
        let mut start: Option<(usize, usize)> = None;
        for (byte, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some((sb, sc)) = start.take() {
                    let tok = &text[sb..byte];
                    tokens.push((sc, tok, self.qualify(tok)));
                }
            } else if start.is_none() {
                start = Some((byte, char_pos));
            }
            char_pos += 1;
        }
        if let Some((sb, sc)) = start {
            let tok = &text[sb..];
            tokens.push((sc, tok, self.qualify(tok)));
        }

        let mut spans: Vec<MaskedSpan> = Vec::new();
        let mut prev_end: Option<usize> = None;
        for (start, tok, purity) in tokens {
            let Some(purity) = purity else {
                prev_end = None;
                continue;
            };
            let len = tok.chars().count();
            let joinable = self.lexicon.merge_adjacent && prev_end == Some(start.wrapping_sub(1));
            if let (true, Some(last)) = (joinable, spans.last_mut()) {
                let glyphs = format!("{} {}", last.glyphs, tok);
                let length = start + len - last.start;
                let hits = glyphs.chars().filter(|&c| is_mask_char(c)).count();
                let merged_purity = hits as f64 / (length - glyphs.matches(' ').count()) as f64;
                *last = MaskedSpan {
                    start: last.start,
                    length,
                    score: span_score(merged_purity, length),
                    glyphs,
                };
            } else {
                spans.push(MaskedSpan {
                    start,
                    length: len,
                    glyphs: tok.to_string(),
                    score: span_score(purity, len),
                });
            }
            prev_end = Some(start + len);
        }
        spans
    }
}

/// `purity × (1 + ln(length))`.
pub fn span_score(purity: f64, length: usize) -> f64 {
    purity * (1.0 + (length as f64).ln())
}

/// Detection with the default lexicon.
pub fn detect_masked_spans(text: &str) -> Vec<MaskedSpan> {
    SpanDetector::default().detect(text)
}

/// One detected span with the line it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub session: String,
    pub seq: u64,
    pub speaker: String,
    #[serde(flatten)]
    pub span: MaskedSpan,
}

/// Fills `masked_spans` on every line and returns the flat span list.
pub fn annotate(lines: &mut [ChatLine], detector: &SpanDetector) -> Vec<SpanRecord> {
    let mut out = Vec::new();
    for line in lines.iter_mut() {
        line.masked_spans = detector.detect(&line.text);
        out.extend(line.masked_spans.iter().map(|s| SpanRecord {
            session: line.session.clone(),
            seq: line.seq,
            speaker: line.speaker.clone(),
            span: s.clone(),
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratum {
    High,
    Medium,
    Low,
    Unassigned,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::High => "High",
            Stratum::Medium => "Medium",
            Stratum::Low => "Low",
            Stratum::Unassigned => "Unassigned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrataConfig {
    pub min_masked_lines: u64,
    /// Ratios strictly above this are High.
    pub high_above: f64,
    /// Ratios at or below this are Low.
    pub low_at_or_below: f64,
}

impl Default for StrataConfig {
    fn default() -> Self {
        StrataConfig {
            min_masked_lines: 7,
            high_above: 0.90,
            low_at_or_below: 0.50,
        }
    }
}

pub fn stratify(masked_lines: u64, freq_ratio: f64, cfg: &StrataConfig) -> Stratum {
    if masked_lines < cfg.min_masked_lines {
        Stratum::Unassigned
    } else if freq_ratio > cfg.high_above {
        Stratum::High
    } else if freq_ratio > cfg.low_at_or_below {
        Stratum::Medium
    } else {
        Stratum::Low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub pseudonym: String,
    pub total_lines: u64,
    pub masked_lines: u64,
    pub freq_ratio: f64,
    pub stratum: Stratum,
    /// Game of the user's most frequent session; ties go to the smaller name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<String>,
}

/// Per-pseudonym counts over an annotated corpus. `server` and `unknown`
/// speakers are not users and are skipped. `game_of` maps a session id to
/// its game label when known.
pub fn profile_users<'a>(
    lines: impl IntoIterator<Item = &'a ChatLine>,
    game_of: &dyn Fn(&str) -> Option<String>,
    cfg: &StrataConfig,
) -> Vec<UserProfile> {
    #[derive(Default)]
    struct Acc {
        total: u64,
        masked: u64,
        games: BTreeMap<String, u64>,
    }
    let mut acc: BTreeMap<&str, Acc> = BTreeMap::new();
    for l in lines {
        if l.speaker == SERVER || l.speaker == UNKNOWN {
            continue;
        }
        let a = acc.entry(l.speaker.as_str()).or_default();
        a.total += 1;
        if !l.masked_spans.is_empty() {
            a.masked += 1;
        }
        if let Some(g) = game_of(&l.session) {
            *a.games.entry(g).or_default() += 1;
        }
    }
    acc.into_iter()
        .map(|(p, a)| {
            let freq_ratio = a.masked as f64 / a.total as f64;
            let game = a
                .games
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(g, _)| g.clone());
            UserProfile {
                pseudonym: p.to_string(),
                total_lines: a.total,
                masked_lines: a.masked,
                freq_ratio,
                stratum: stratify(a.masked, freq_ratio, cfg),
                game,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub pseudonym: String,
    pub masked_lines: u64,
}

pub fn rank_frequency(profiles: &[UserProfile]) -> Vec<RankEntry> {
    let mut v: Vec<(&str, u64)> = profiles.iter().map(|p| (p.pseudonym.as_str(), p.masked_lines)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter()
        .enumerate()
        .map(|(i, (p, m))| RankEntry {
            rank: i + 1,
            pseudonym: p.to_string(),
            masked_lines: m,
        })
        .collect()
}

/// Share of all masked lines held by the top `fraction` of ranked users.
pub fn top_share(ranked: &[RankEntry], fraction: f64) -> f64 {
    let total: u64 = ranked.iter().map(|r| r.masked_lines).sum();
    if total == 0 {
        return 0.0;
    }
    let k = ((ranked.len() as f64 * fraction).ceil() as usize).min(ranked.len());
    ranked[..k].iter().map(|r| r.masked_lines).sum::<u64>() as f64 / total as f64
}
