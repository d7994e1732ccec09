//! Chat-line parsing, near-duplicate suppression and anonymization.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::evalkit;
use crate::modevents::MaskedSpan;

pub const SERVER: &str = "server";
pub const UNKNOWN: &str = "unknown";

pub const DEFAULT_ROLE_TAGS: &[&str] = &[
    "VIP", "Team", "Admin", "Mod", "Owner", "Dev", "Staff", "Premium", "Verified", "Helper",
];

const SERVER_NAMES: &[&str] = &["server", "system"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLine {
    pub speaker: Option<String>,
    pub text: String,
}

/// Splits a raw OCR line into a speaker candidate and message text.
///
/// Leading role tags (`[VIP]`, `[Team]`, ...) are dropped first. Recognized
/// speaker forms are `[name]: msg`, `[name] msg`, `name: msg` and
/// `name | msg`; anything else has no speaker.
pub fn parse_line(raw: &str) -> ParsedLine {
    parse_line_with(raw, DEFAULT_ROLE_TAGS)
}

pub fn parse_line_with(raw: &str, role_tags: &[&str]) -> ParsedLine {
    let mut rest = raw.trim();
    loop {
        let Some(inner) = rest.strip_prefix('[') else { break };
        let Some(end) = inner.find(']') else { break };
        let tag = inner[..end].trim();
        if role_tags.iter().any(|t| t.eq_ignore_ascii_case(tag)) {
            rest = inner[end + 1..].trim_start();
        } else {
            break;
        }
    }

    let whole = || ParsedLine {
        speaker: None,
        text: rest.to_string(),
    };

    if let Some(inner) = rest.strip_prefix('[') {
        if let Some(end) = inner.find(']') {
            let name = inner[..end].trim();
            let after = inner[end + 1..].trim_start();
            let after = after
                .strip_prefix(':')
                .or_else(|| after.strip_prefix('|'))
                .unwrap_or(after)
                .trim();
            if plausible_name(name) {
                return ParsedLine {
                    speaker: Some(name.to_string()),
                    text: after.to_string(),
                };
            }
        }
        return whole();
    }

    let sep = rest.char_indices().find(|&(_, c)| c == ':' || c == '|');
    if let Some((i, c)) = sep {
        let name = rest[..i].trim();
        let after = &rest[i + c.len_utf8()..];
        let is_url = c == ':' && after.starts_with("//");
        if !is_url && plausible_name(name) {
            return ParsedLine {
                speaker: Some(name.to_string()),
                text: after.trim().to_string(),
            };
        }
    }
    whole()
}

fn plausible_name(name: &str) -> bool {
    let n = name.chars().count();
    (1..=32).contains(&n)
        && name.split_whitespace().count() <= 2
        && name.chars().any(|c| c.is_alphanumeric())
}

/// Lowercases, folds accents, keeps only `[a-z0-9_]`. Spaces are dropped
/// along with punctuation, so `"Coöl-Kid 99!"` becomes `"coolkid99"`. An
/// empty result yields `"unknown"`.
pub fn normalize_name(name: &str) -> String {
    let folded: String = name
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '_')
        .collect();
    if folded.is_empty() {
        UNKNOWN.to_string()
    } else {
        folded
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub raw: String,
    pub normalized: String,
    pub pseudonym: String,
}

/// Project-wide username → pseudonym table.
///
/// A new normalized name reuses the pseudonym of the most similar known
/// name when their similarity exceeds `merge_threshold`; otherwise it mints
/// the next `user_NNNNN`.
#[derive(Debug, Clone)]
pub struct PseudonymRegistry {
    keys: Vec<(Vec<char>, String)>,
    exact: HashMap<String, String>,
    raw: BTreeMap<String, usize>,
    log: Vec<MappingEntry>,
    next_index: u32,
    merge_threshold: f64,
}

impl Default for PseudonymRegistry {
    fn default() -> Self {
        PseudonymRegistry::new(0.9)
    }
}

impl PseudonymRegistry {
    pub fn new(merge_threshold: f64) -> Self {
        PseudonymRegistry {
            keys: Vec::new(),
            exact: HashMap::new(),
            raw: BTreeMap::new(),
            log: Vec::new(),
            next_index: 1,
            merge_threshold,
        }
    }

    /// Rebuilds a registry by replaying a mapping log in order.
    pub fn replay(entries: &[MappingEntry], merge_threshold: f64) -> Self {
        let mut reg = PseudonymRegistry::new(merge_threshold);
        for e in entries {
            reg.resolve_raw(&e.raw);
        }
        reg
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Pseudonym for an already-normalized name.
    pub fn resolve_pseudonym(&mut self, normalized: &str) -> String {
        if normalized == UNKNOWN {
            return UNKNOWN.to_string();
        }
        if SERVER_NAMES.contains(&normalized) {
            return SERVER.to_string();
        }
        if let Some(p) = self.exact.get(normalized) {
            return p.clone();
        }
        let chars: Vec<char> = normalized.chars().collect();
        let mut best: Option<(f64, &String)> = None;
        for (k, p) in &self.keys {
            let s = evalkit::sim_chars(&chars, k);
            if s > self.merge_threshold && best.is_none_or(|(b, _)| s > b) {
                best = Some((s, p));
            }
        }
        let pseudonym = match best {
            Some((_, p)) => p.clone(),
            None => {
                let p = format!("user_{:05}", self.next_index);
                self.next_index += 1;
                p
            }
        };
        self.keys.push((chars, pseudonym.clone()));
        self.exact.insert(normalized.to_string(), pseudonym.clone());
        pseudonym
    }

    /// Normalizes, resolves and records the raw spelling for the audit file.
    pub fn resolve_raw(&mut self, raw: &str) -> String {
        let normalized = normalize_name(raw);
        let pseudonym = self.resolve_pseudonym(&normalized);
        if !self.raw.contains_key(raw) && pseudonym != UNKNOWN && pseudonym != SERVER {
            self.raw.insert(raw.to_string(), self.log.len());
            self.log.push(MappingEntry {
                raw: raw.to_string(),
                normalized,
                pseudonym: pseudonym.clone(),
            });
        }
        pseudonym
    }

    /// Registers a batch of raw names. Names not yet known are resolved in
    /// order of decreasing neighbour count (other new names above the merge
    /// threshold), so a base spelling claims a pseudonym before its variants
    /// do. Ties keep first-seen order.
    pub fn register_all<'a>(&mut self, raws: impl IntoIterator<Item = &'a str>) {
        let mut groups: Vec<(String, Vec<&'a str>)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for raw in raws {
            let norm = normalize_name(raw);
            if self.exact.contains_key(&norm) || norm == UNKNOWN || SERVER_NAMES.contains(&norm.as_str()) {
                self.resolve_raw(raw);
                continue;
            }
            let i = *index.entry(norm.clone()).or_insert_with(|| {
                groups.push((norm, Vec::new()));
                groups.len() - 1
            });
            if !groups[i].1.contains(&raw) {
                groups[i].1.push(raw);
            }
        }
        let chars: Vec<Vec<char>> = groups.iter().map(|(n, _)| n.chars().collect()).collect();
        let mut degree = vec![0usize; chars.len()];
        for i in 0..chars.len() {
            for j in i + 1..chars.len() {
                let (a, b) = (chars[i].len(), chars[j].len());
                // Sim is at most 2·min / (a + b)
                if 2.0 * a.min(b) as f64 / (a + b) as f64 <= self.merge_threshold {
                    continue;
                }
                if evalkit::sim_chars(&chars[i], &chars[j]) > self.merge_threshold {
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(degree[i]));
        for i in order {
            for raw in &groups[i].1 {
                self.resolve_raw(raw);
            }
        }
    }

    /// Mapping log in registration order.
    pub fn entries(&self) -> &[MappingEntry] {
        &self.log
    }

    /// Replaces message tokens that name a known user with the user's
    /// pseudonym. Only names of three or more characters are considered.
    pub fn scrub_mentions(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for (i, tok) in text.split(' ').enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let core = tok.trim_matches(|c: char| !c.is_alphanumeric() && c != '_');
            let norm = normalize_name(core);
            match self.exact.get(&norm) {
                Some(p) if norm.chars().count() >= 3 && norm != UNKNOWN => {
                    let start = tok.find(core).unwrap_or(0);
                    out.push_str(&tok[..start]);
                    out.push_str(p);
                    out.push_str(&tok[start + core.len()..]);
                }
                _ => out.push_str(tok),
            }
        }
        out
    }
}

/// Salted digest of a normalized speaker name; never serialized.
pub fn speaker_digest(salt: &str, normalized: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0]);
    h.update(normalized.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// A transcript line before anonymization. Contains raw usernames and is
/// only ever written under `private/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLine {
    pub session: String,
    pub seq: u64,
    pub frame_seq: u64,
    pub raw: String,
    pub speaker: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatLine {
    pub session: String,
    pub seq: u64,
    pub speaker: String,
    pub text: String,
    #[serde(skip)]
    pub raw_speaker_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked_spans: Vec<MaskedSpan>,
}

/// Drops an item when its text is more than `threshold` similar to any of
/// the previous `window` retained items. Order is preserved.
pub fn dedup_by<T, F>(items: impl IntoIterator<Item = T>, key: F, threshold: f64, window: usize) -> Vec<T>
where
    F: Fn(&T) -> &str,
{
    let mut kept: Vec<T> = Vec::new();
    let mut recent: std::collections::VecDeque<Vec<char>> = std::collections::VecDeque::new();
    for item in items {
        let chars: Vec<char> = key(&item).chars().collect();
        if recent.iter().any(|r| evalkit::sim_chars(r, &chars) > threshold) {
            continue;
        }
        if window > 0 {
            if recent.len() == window {
                recent.pop_front();
            }
            recent.push_back(chars);
        }
        kept.push(item);
    }
    kept
}

pub fn dedup_lines(lines: Vec<String>, threshold: f64, window: usize) -> Vec<String> {
    dedup_by(lines, |s| s.as_str(), threshold, window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleRule {
    /// Placeholder stem, e.g. `OFFPLATFORM_HANDLE`.
    pub kind: String,
    /// Words announcing a handle (`yt`, `discord`, ...), matched case-insensitively.
    pub triggers: Vec<String>,
}

impl Default for HandleRule {
    fn default() -> Self {
        HandleRule {
            kind: "OFFPLATFORM_HANDLE".into(),
            triggers: [
                "yt", "youtube", "ig", "insta", "instagram", "snap", "snapchat", "sc", "discord", "dc",
                "tiktok", "tt", "twitter", "twitch", "roblox user",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:https?://|www\.)\S+|\b[a-z0-9-]+\.(?:com|net|org|gg|io|tv|me|ly|co)(?:/\S*)?\b").unwrap()
});
static EMAIL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b").unwrap());
static PHONE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d(?:[ .-]?\d){6,}").unwrap());

const HANDLE_STOPWORDS: &[&str] = &[
    "is", "and", "or", "the", "to", "me", "u", "you", "it", "a", "an", "for", "pls", "plz", "please",
    "name", "user", "username", "rn", "now",
];

/// Rule-based PII redaction with per-session placeholder numbering. The same
/// value always receives the same placeholder within one redactor.
#[derive(Debug, Clone)]
pub struct PiiRedactor {
    handle_rules: Vec<(String, Regex)>,
    assigned: HashMap<(String, String), String>,
    counters: HashMap<String, u32>,
}

impl PiiRedactor {
    pub fn new(rules: &[HandleRule]) -> Self {
        let handle_rules = rules
            .iter()
            .filter(|r| !r.triggers.is_empty())
            .map(|r| {
                let alts: Vec<String> = r.triggers.iter().map(|t| regex::escape(t)).collect();
                let re = Regex::new(&format!(
                    r"(?i)\b(?:{})\b(?:\s+(?:is|=|-)|\s*:)?\s+(@?[A-Za-z0-9_.]{{3,}})",
                    alts.join("|")
                ))
                .unwrap();
                (r.kind.clone(), re)
            })
            .collect();
        PiiRedactor {
            handle_rules,
            assigned: HashMap::new(),
            counters: HashMap::new(),
        }
    }

    fn placeholder(&mut self, kind: &str, value: &str) -> String {
        let key = (kind.to_string(), value.to_lowercase());
        if let Some(p) = self.assigned.get(&key) {
            return p.clone();
        }
        let n = self.counters.entry(kind.to_string()).or_insert(0);
        *n += 1;
        let p = format!("[{kind}_{:03}]", *n);
        self.assigned.insert(key, p.clone());
        p
    }

    pub fn redact(&mut self, text: &str) -> String {
        let mut out = self.replace_all(text, &EMAIL_RE.clone(), "EMAIL", 0);
        out = self.replace_all(&out, &URL_RE.clone(), "URL", 0);
        for i in 0..self.handle_rules.len() {
            let (kind, re) = self.handle_rules[i].clone();
            out = self.replace_all(&out, &re, &kind, 1);
        }
        self.replace_all(&out, &PHONE_RE.clone(), "PHONE", 0)
    }

    fn replace_all(&mut self, text: &str, re: &Regex, kind: &str, group: usize) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for caps in re.captures_iter(text) {
            let Some(m) = caps.get(group) else { continue };
            let value = m.as_str();
            if group > 0 && (HANDLE_STOPWORDS.contains(&value.to_lowercase().as_str()) || value.starts_with('[')) {
                continue;
            }
            out.push_str(&text[last..m.start()]);
            out.push_str(&self.placeholder(kind, value));
            last = m.end();
        }
        out.push_str(&text[last..]);
        out
    }
}

impl Default for PiiRedactor {
    fn default() -> Self {
        PiiRedactor::new(&[HandleRule::default()])
    }
}

/// Swaps the speaker for its pseudonym and redacts the message. Speakers of
/// the whole corpus should be registered beforehand so that mentions of
/// users who only speak later are scrubbed too.
pub fn anonymize_line(registry: &mut PseudonymRegistry, redactor: &mut PiiRedactor, line: RawLine) -> ChatLine {
    let speaker = match &line.speaker {
        Some(sp) => registry.resolve_raw(sp),
        None => UNKNOWN.to_string(),
    };
    let text = registry.scrub_mentions(&redactor.redact(&line.text));
    ChatLine {
        session: line.session,
        seq: line.seq,
        speaker,
        text,
        raw_speaker_hash: None,
        masked_spans: Vec::new(),
    }
}
